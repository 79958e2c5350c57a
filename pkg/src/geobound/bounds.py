"""Covering-number, Rademacher and generalization bounds on space forms.

All logarithms are natural. Universal constants without a fixed value are collected in
:class:`BoundConstants`.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .quadrature import adaptive_simpson
from .spaceform import (
    DomainError,
    SpaceFormGeometry,
    space_form_ball_volume,
    bishop_gromov_lower_bound,
    unit_ball_volume,
)

REPORT_CSV_COLUMNS = [
    "d", "D", "kappa", "L", "B", "L_loss", "n", "delta",
    "rademacher", "gen_bound", "euclidean_rademacher", "euclidean_gen_bound",
    "improvement_pct",
    # appended after the fixed prefix
    "ambient_rademacher", "ambient_gen_bound", "rademacher_asymptotic",
    "curvature_term", "psi",
]


@dataclass(frozen=True)
class FunctionClassSpec:
    L: float = 1.0
    B: float = 1.0
    L_loss: float = 1.0

    def __post_init__(self):
        for name in ("L", "B", "L_loss"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class BoundConstants:
    c_pack: float = 1.0
    c_dudley_a: float = 4.0
    c_dudley_b: float = 12.0
    big_o_scale: float = 1.0
    delta: float = 0.05

    def __post_init__(self):
        for name in ("c_pack", "c_dudley_a", "c_dudley_b", "big_o_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @classmethod
    def parse(cls, text: str, base: Optional["BoundConstants"] = None) -> "BoundConstants":
        """Parse ``"c_pack=2,big_o_scale=0.5"`` on top of ``base``."""
        values = asdict(base or cls())
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in values:
                raise ValueError(f"unknown bound constant {key!r}")
            values[key] = float(val)
        return cls(**values)


def psi(kappa: float, L: float) -> float:
    """Curvature penalty sqrt|kappa|/L for kappa < 0, zero otherwise."""
    if not L > 0:
        raise ValueError("L must be positive")
    return math.sqrt(-kappa) / L if kappa < 0 else 0.0


# ---------------------------------------------------------------------------
# covering numbers


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")


def curvature_term(geometry: SpaceFormGeometry, eps: float,
                   constants: BoundConstants = BoundConstants()) -> float:
    return constants.c_pack * geometry.d * math.sqrt(abs(geometry.kappa)) * eps


def manifold_log_covering(geometry: SpaceFormGeometry, eps: float,
                          constants: BoundConstants = BoundConstants()) -> float:
    """Upper bound on log N(M, eps, d_g) from the volume-ratio argument.

    Uses the exact ball volume V_kappa(eps/2).
    """
    _check_eps(eps)
    if eps >= geometry.inj / 2:
        raise DomainError(
            f"eps={eps} must be below inj/2={geometry.inj / 2} for the covering bound")
    ball = space_form_ball_volume(geometry.d, geometry.kappa, eps / 2)
    return math.log(geometry.vol) - math.log(ball) + curvature_term(geometry, eps, constants)


def manifold_log_covering_analytic(geometry: SpaceFormGeometry, eps: float,
                                   constants: BoundConstants = BoundConstants()) -> float:
    """Looser read-out with the closed-form ball-volume lower bound in place
    of the exact volume. Always >= :func:`manifold_log_covering`."""
    _check_eps(eps)
    if eps >= geometry.inj / 2:
        raise DomainError(f"eps={eps} must be below inj/2={geometry.inj / 2}")
    ball = bishop_gromov_lower_bound(geometry.d, geometry.kappa, eps / 2)
    return math.log(geometry.vol) - math.log(ball) + curvature_term(geometry, eps, constants)


def covering_count(log_count: float) -> float:
    """Smallest integer >= exp(log_count), tolerant to exp/log round-off."""
    val = math.exp(min(log_count, 709.0)) if log_count < 709.0 else math.inf
    if not math.isfinite(val) or val >= 2.0**53:
        return val
    near = round(val)
    if near >= 1 and abs(val - near) <= 1e-9 * val:
        return float(near)
    return float(max(1, math.ceil(val)))


def class_validity_limit(geometry: SpaceFormGeometry, spec: FunctionClassSpec) -> float:
    """Upper end of the eps range on which the product-form class bound applies:
    eps < inj/(2L), and eps/(2L) < inj/2 for the inner manifold bound."""
    return min(geometry.inj / (2 * spec.L), geometry.inj * spec.L)


def _class_log_cover_product(geometry, spec, eps, constants) -> float:
    n_manifold = covering_count(manifold_log_covering(geometry, eps / (2 * spec.L), constants))
    return n_manifold * math.log(4 * spec.B / eps)


def function_class_log_covering(geometry: SpaceFormGeometry, spec: FunctionClassSpec,
                                eps: float,
                                constants: BoundConstants = BoundConstants()) -> float:
    """log N(F, eps, sup-norm) <= N(M, eps/(2L)) * log(4B/eps)."""
    _check_eps(eps)
    if eps >= class_validity_limit(geometry, spec):
        raise DomainError(
            f"eps={eps} outside the class-cover range (< {class_validity_limit(geometry, spec)})")
    if eps >= spec.B:
        raise DomainError(f"eps={eps} must be below B={spec.B}")
    return _class_log_cover_product(geometry, spec, eps, constants)


def function_class_log_covering_closed_form(geometry: SpaceFormGeometry,
                                            spec: FunctionClassSpec, eps: float,
                                            constants: BoundConstants = BoundConstants()) -> float:
    """Combined curvature-explicit read-out:
    [d log(2L/eps) + c sqrt|kappa| eps/L + log(Vol/omega_d)] * log(4B/eps)."""
    _check_eps(eps)
    d, L = geometry.d, spec.L
    bracket = (d * math.log(2 * L / eps)
               + constants.c_pack * math.sqrt(abs(geometry.kappa)) * eps / L
               + math.log(geometry.vol / unit_ball_volume(d)))
    return bracket * math.log(4 * spec.B / eps)


# ---------------------------------------------------------------------------
# Dudley integral


def dudley_alpha(d: float, n: int) -> float:
    return n ** (-1.0 / d)


def _check_alpha(geometry, spec, n) -> float:
    if n < 2:
        raise DomainError("Dudley bound needs n >= 2")
    alpha = dudley_alpha(geometry.d, n)
    limit = min(spec.B, class_validity_limit(geometry, spec))
    if not alpha < limit:
        raise DomainError(
            f"alpha = n^(-1/d) = {alpha:.6g} must be below min(B, inj/(2L)) = {limit:.6g}; "
            f"n={n} is too small for this geometry")
    return alpha


def dudley_integrand(geometry: SpaceFormGeometry, spec: FunctionClassSpec,
                     constants: BoundConstants = BoundConstants()):
    """sqrt(log N(F, eps)) as a function of eps.

    The product-form class bound is used inside its validity range and the
    combined closed form beyond it; the log-count is clamped at zero.
    """
    limit = class_validity_limit(geometry, spec)
    B = spec.B

    def g(eps: float) -> float:
        if eps < limit:
            log_m = manifold_log_covering(geometry, eps / (2 * spec.L), constants)
            count = covering_count(log_m)
            ll = math.log(4 * B / eps)
            if math.isfinite(count):
                return math.sqrt(count * ll)
            return math.exp(0.5 * (log_m + math.log(ll)))
        val = function_class_log_covering_closed_form(geometry, spec, eps, constants)
        return math.sqrt(max(val, 0.0))

    return g


# grid cells for the staircase part of the product-form range
_STAIR_CELLS = 256
# above this covering count ceil(x) is replaced by the smooth x + 1/2
_STAIR_MAX_COUNT = 1e4


def _sqrt_log_antiderivative(t, B: float):
    """F with F'(t) = sqrt(log(4B/t)), via the upper incomplete gamma function."""
    u = np.log(4.0 * B / np.asarray(t, dtype=float))
    return 4.0 * B * special.gamma(1.5) * special.gammaincc(1.5, u)


def _staircase_integral(t, logc, B: float) -> float:
    """Integral of sqrt(ceil(exp(l(t))) * log(4B/t)) over the grid ``t``.

    l is interpolated linearly in log t inside each cell; the integer levels
    it crosses split the cell into pieces where the ceiling is constant, and
    each piece is integrated exactly.
    """
    lt = np.log(t)
    total = 0.0
    for i in range(len(t) - 1):
        l0, l1 = logc[i], logc[i + 1]
        x_lo, x_hi = math.exp(min(l0, l1)), math.exp(max(l0, l1))
        levels = np.arange(math.floor(x_lo) + 1, math.ceil(x_hi), dtype=float)
        cuts = [lt[i], lt[i + 1]]
        if levels.size and l1 != l0:
            frac = (np.log(levels) - l0) / (l1 - l0)
            cuts = np.concatenate([[lt[i]], lt[i] + frac * (lt[i + 1] - lt[i]), [lt[i + 1]]])
            cuts.sort()
        cuts = np.asarray(cuts)
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        l_mid = l0 + (mids - lt[i]) / (lt[i + 1] - lt[i]) * (l1 - l0)
        counts = np.maximum(np.ceil(np.exp(l_mid)), 1.0)
        F = _sqrt_log_antiderivative(np.exp(cuts), B)
        total += float(np.sum(np.sqrt(counts) * np.diff(F)))
    return total


def dudley_entropy_integral(geometry, spec, alpha, constants=BoundConstants(),
                            rtol: float = 1e-6, max_evals: int = 200_000) -> float:
    """Integral of sqrt(log N(F, eps)) over [alpha, B].

    Same integrand as :func:`dudley_integrand`. The ceiling makes it a
    staircase with one jump per covering count, too many for adaptive
    quadrature when counts run into the millions. Where the count exceeds
    ``_STAIR_MAX_COUNT`` the ceiling is replaced by x + 1/2 (its average over
    a jump period, relative error far below rtol) and integrated adaptively;
    below that the staircase is integrated piece by piece.
    """
    B, L = spec.B, spec.L
    b = min(class_validity_limit(geometry, spec), B)
    total = 0.0
    if alpha < b:
        t = np.geomspace(alpha, b, _STAIR_CELLS + 1)
        t[0], t[-1] = alpha, b
        # the grid's right end sits exactly on the validity limit
        r = np.minimum(t / (2 * L), np.nextafter(geometry.inj / 2, 0))
        logc = np.array([manifold_log_covering(geometry, x, constants) for x in r])
        low = np.nonzero(logc < math.log(_STAIR_MAX_COUNT))[0]
        j = max(int(low[0]) - 1, 0) if low.size else _STAIR_CELLS
        if j > 0:
            def smooth(eps):
                lm = manifold_log_covering(geometry, eps / (2 * L), constants)
                return math.exp(0.5 * (lm + math.log(math.log(4 * B / eps)))) * \
                    math.sqrt(1.0 + 0.5 * math.exp(-lm))

            total += adaptive_simpson(smooth, alpha, float(t[j]), rtol=rtol, max_evals=max_evals)
        if j < _STAIR_CELLS:
            total += _staircase_integral(t[j:], logc[j:], B)
    if b < B:
        tail = dudley_integrand(geometry, spec, constants)
        total += adaptive_simpson(tail, b, B, rtol=rtol, max_evals=max_evals)
    return total


@dataclass(frozen=True)
class RademacherBound:
    integral: float
    asymptotic: float
    alpha: float
    entropy_integral: float


def rademacher_asymptotic(geometry: SpaceFormGeometry, spec: FunctionClassSpec, n: int,
                          constants: BoundConstants = BoundConstants()) -> float:
    """big_o_scale * sqrt(d log(L sqrt n) + psi) / n^{1/d}."""
    d = geometry.d
    inner = max(d * math.log(spec.L * math.sqrt(n)), 0.0) + psi(geometry.kappa, spec.L)
    return constants.big_o_scale * math.sqrt(inner) / n ** (1.0 / d)


def rademacher_bound(geometry: SpaceFormGeometry, spec: FunctionClassSpec, n: int,
                     constants: BoundConstants = BoundConstants()) -> RademacherBound:
    """Dudley bound at alpha = n^{-1/d}, plus the asymptotic read-out."""
    alpha = _check_alpha(geometry, spec, n)
    ent = dudley_entropy_integral(geometry, spec, alpha, constants)
    integral = constants.c_dudley_a * alpha + constants.c_dudley_b / math.sqrt(n) * ent
    return RademacherBound(integral=integral,
                           asymptotic=rademacher_asymptotic(geometry, spec, n, constants),
                           alpha=alpha, entropy_integral=ent)


def confidence_term(B: float, n: int, delta: float) -> float:
    return 3.0 * B * math.sqrt(math.log(2.0 / delta) / (2.0 * n))


def generalization_from_rademacher(rad: float, spec: FunctionClassSpec, n: int,
                                   constants: BoundConstants = BoundConstants()) -> float:
    return 2.0 * spec.L_loss * rad + confidence_term(spec.B, n, constants.delta)


def generalization_bound(geometry: SpaceFormGeometry, spec: FunctionClassSpec, n: int,
                         constants: BoundConstants = BoundConstants()) -> float:
    """2 L_loss Rad_n + 3B sqrt(log(2/delta)/(2n)) with the Dudley integral form."""
    rad = rademacher_bound(geometry, spec, n, constants).integral
    return generalization_from_rademacher(rad, spec, n, constants)


# ---------------------------------------------------------------------------
# baselines


@dataclass(frozen=True)
class Baseline:
    rademacher: float
    generalization: float


def euclidean_baseline(D: int, spec: FunctionClassSpec, n: int,
                       constants: BoundConstants = BoundConstants()) -> Baseline:
    """Ambient-dimension rate baseline: Rad = big_o_scale * L * B * sqrt(D/n)."""
    if D < 1 or n < 1:
        raise ValueError("D and n must be >= 1")
    rad = constants.big_o_scale * spec.L * spec.B * math.sqrt(D / n)
    return Baseline(rad, generalization_from_rademacher(rad, spec, n, constants))


def ambient_covering_baseline(D: int, ambient_radius: float, spec: FunctionClassSpec,
                              n: int, constants: BoundConstants = BoundConstants()) -> Baseline:
    """The same Dudley machinery run on a flat D-ball of radius ``ambient_radius``
    that contains the data, i.e. the covering bound that ignores the manifold."""
    geom = SpaceFormGeometry.ball(D, 0.0, ambient_radius)
    rad = rademacher_bound(geom, spec, n, constants).integral
    return Baseline(rad, generalization_from_rademacher(rad, spec, n, constants))


def improvement(ours: float, euclidean: float) -> float:
    """Percentage by which ``ours`` is tighter than ``euclidean``."""
    if not euclidean > 0:
        raise ValueError(f"baseline must be positive, got {euclidean}")
    if math.isinf(euclidean):
        return 100.0 if math.isfinite(ours) else 0.0
    # ours >= 0 for every bound here, so round-off is the only way past 100
    return min(100.0 * (euclidean - ours) / euclidean, 100.0)


# ---------------------------------------------------------------------------
# reports


@dataclass
class BoundReport:
    geometry: SpaceFormGeometry
    spec: FunctionClassSpec
    n: int
    eps: float
    D: int
    constants: BoundConstants
    log_cover_manifold: float
    log_cover_class: float
    log_cover_class_closed_form: float
    rademacher: float
    rademacher_asymptotic: float
    gen_bound: float
    euclidean_rademacher: float
    euclidean_gen_bound: float
    ambient_rademacher: float
    ambient_gen_bound: float
    improvement_pct: float
    curvature_term: float
    psi: float
    extra: dict = field(default_factory=dict)

    def csv_row(self) -> dict:
        g, s = self.geometry, self.spec
        row = {"d": g.d, "D": self.D, "kappa": g.kappa, "L": s.L, "B": s.B,
               "L_loss": s.L_loss, "n": self.n, "delta": self.constants.delta}
        for col in REPORT_CSV_COLUMNS[8:]:
            row[col] = getattr(self, col)
        return row

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items()
               if k not in ("geometry", "spec", "constants")}
        out["geometry"] = self.geometry.to_dict()
        out["spec"] = asdict(self.spec)
        out["constants"] = asdict(self.constants)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate_bounds(geometry: SpaceFormGeometry, spec: FunctionClassSpec, n: int, D: int,
                    constants: BoundConstants = BoundConstants(),
                    eps: Optional[float] = None,
                    ambient_radius: Optional[float] = None) -> BoundReport:
    """Evaluate every bound for one configuration.

    ``eps`` defaults to the Dudley cut-off n^{-1/d}. ``ambient_radius`` is the
    radius of a Euclidean ball in R^D containing the data; the improvement
    percentage compares generalization bounds against the covering baseline
    on that ball.
    """
    from .spaceform import ambient_radius as model_ambient_radius

    rad = rademacher_bound(geometry, spec, n, constants)
    if eps is None:
        eps = rad.alpha
    gen = generalization_from_rademacher(rad.integral, spec, n, constants)
    euc = euclidean_baseline(D, spec, n, constants)
    if ambient_radius is None:
        ambient_radius = model_ambient_radius(geometry)
    extra = {"alpha": rad.alpha, "ambient_radius": ambient_radius}
    try:
        amb = ambient_covering_baseline(D, ambient_radius, spec, n, constants)
        gain = improvement(gen, amb.generalization)
    except DomainError as exc:
        # n^{-1/D} is close to 1 for large D; the ambient bound has no valid
        # cut-off then, which says nothing about our own bound
        amb = Baseline(math.nan, math.nan)
        gain = math.nan
        extra["ambient_error"] = str(exc)
    return BoundReport(
        geometry=geometry, spec=spec, n=n, eps=eps, D=D, constants=constants,
        log_cover_manifold=manifold_log_covering(geometry, eps, constants),
        log_cover_class=function_class_log_covering(geometry, spec, eps, constants),
        log_cover_class_closed_form=function_class_log_covering_closed_form(
            geometry, spec, eps, constants),
        rademacher=rad.integral,
        rademacher_asymptotic=rad.asymptotic,
        gen_bound=gen,
        euclidean_rademacher=euc.rademacher,
        euclidean_gen_bound=euc.generalization,
        ambient_rademacher=amb.rademacher,
        ambient_gen_bound=amb.generalization,
        improvement_pct=gain,
        curvature_term=curvature_term(geometry, eps, constants),
        psi=psi(geometry.kappa, spec.L),
        extra=extra,
    )
