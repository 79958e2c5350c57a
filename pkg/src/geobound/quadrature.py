"""Adaptive Simpson quadrature with an evaluation budget."""
from __future__ import annotations

import math


class QuadratureBudgetError(RuntimeError):
    pass


def adaptive_simpson(f, a: float, b: float, rtol: float = 1e-6,
                     max_evals: int = 200_000, panels: int = 64) -> float:
    """Integrate ``f`` over [a, b].

    A composite Simpson pass over ``panels`` equal panels sets the error
    scale; each panel is then refined until the Richardson estimate of its
    error falls below its share of ``rtol * |integral|``.
    """
    if b == a:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, rtol, max_evals, panels)
    evals = 0

    def fe(x):
        nonlocal evals
        evals += 1
        return f(x)

    h = (b - a) / panels
    xs = [a + i * h * 0.5 for i in range(2 * panels + 1)]
    xs[-1] = b
    ys = [fe(x) for x in xs]
    coarse = sum(h / 6.0 * (ys[2 * i] + 4 * ys[2 * i + 1] + ys[2 * i + 2])
                 for i in range(panels))
    tol_total = rtol * abs(coarse) if coarse != 0 else rtol
    total = 0.0
    for i in range(panels):
        x0, xm, x1 = xs[2 * i], xs[2 * i + 1], xs[2 * i + 2]
        f0, fm, f1 = ys[2 * i], ys[2 * i + 1], ys[2 * i + 2]
        whole = (x1 - x0) / 6.0 * (f0 + 4 * fm + f1)
        stack = [(x0, x1, f0, fm, f1, whole, tol_total / panels, 0)]
        while stack:
            lo, hi, flo, fmid, fhi, s, tol, depth = stack.pop()
            mid = 0.5 * (lo + hi)
            lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
            flm, frm = fe(lm), fe(rm)
            if evals > max_evals:
                raise QuadratureBudgetError(
                    f"adaptive Simpson exceeded {max_evals} evaluations")
            left = (mid - lo) / 6.0 * (flo + 4 * flm + fmid)
            right = (hi - mid) / 6.0 * (fmid + 4 * frm + fhi)
            err = left + right - s
            if abs(err) <= 15.0 * tol or depth >= 50 or not math.isfinite(err):
                total += left + right + err / 15.0
            else:
                stack.append((lo, mid, flo, flm, fmid, left, 0.5 * tol, depth + 1))
                stack.append((mid, hi, fmid, frm, fhi, right, 0.5 * tol, depth + 1))
    return total
