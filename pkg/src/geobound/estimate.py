"""Intrinsic geometry of point clouds: TwoNN dimension, k-NN graph geodesics
and an effective sectional curvature from geodesic triangles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import minimize_scalar
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .spaceform import SpaceFormGeometry, space_form_ball_volume


class DegenerateInputError(ValueError):
    pass


class DisconnectedGraphError(ValueError):
    def __init__(self, n_components: int, k: int):
        super().__init__(
            f"k-NN graph with k={k} has {n_components} connected components; increase k")
        self.n_components = n_components


class InsufficientTrianglesError(ValueError):
    pass


# ---------------------------------------------------------------------------
# TwoNN


@dataclass
class TwoNNResult:
    d_hat: float
    n_used: int
    n_kept: int
    n_duplicates: int


def twonn(points, discard_fraction: float = 0.1) -> TwoNNResult:
    """TwoNN maximum-likelihood dimension.

    mu_i = r2/r1 follows a Pareto law with exponent d, so log(mu) is
    exponential with rate d. The largest ``discard_fraction`` of the ratios
    are treated as right-censored at the largest kept value, which keeps the
    estimator unbiased under truncation.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2 or len(X) < 10:
        raise DegenerateInputError("TwoNN needs at least 10 points")
    if not 0 <= discard_fraction < 1:
        raise ValueError("discard_fraction must lie in [0, 1)")
    dist, _ = cKDTree(X).query(X, k=3)
    r1, r2 = dist[:, 1], dist[:, 2]
    ok = r1 > 0
    n_dup = int(np.count_nonzero(~ok))
    if n_dup > 0.5 * len(X):
        raise DegenerateInputError(f"{n_dup} of {len(X)} points are duplicates")
    log_mu = np.sort(np.log(r2[ok] / r1[ok]))
    n = len(log_mu)
    n_kept = n - int(math.floor(discard_fraction * n))
    kept = log_mu[:n_kept]
    total = kept.sum() + (n - n_kept) * kept[-1]
    if not total > 0:
        raise DegenerateInputError("all neighbour ratios equal one")
    return TwoNNResult(d_hat=n_kept / total, n_used=n, n_kept=n_kept, n_duplicates=n_dup)


def twonn_dimension(points, discard_fraction: float = 0.1) -> float:
    return twonn(points, discard_fraction).d_hat


# ---------------------------------------------------------------------------
# graph geodesics


def knn_graph(points, k: int, distances=None) -> sparse.csr_matrix:
    """Symmetric k-NN graph.

    Edge weights are Euclidean unless a dense matrix of local ``distances``
    is given, in which case neighbours and weights are read from it.
    """
    if distances is not None:
        M = np.asarray(distances, dtype=float)
        n = len(M)
        k = min(k, n - 1)
        idx = np.argsort(M, axis=1, kind="stable")[:, : k + 1]
        dist = np.take_along_axis(M, idx, axis=1)
    else:
        X = np.asarray(points, dtype=float)
        n = len(X)
        k = min(k, n - 1)
        dist, idx = cKDTree(X).query(X, k=k + 1)
    rows = np.repeat(np.arange(n), k)
    # csgraph drops zero weights as non-edges; duplicates must stay linked
    w = np.maximum(dist[:, 1:].ravel(), 1e-300)
    A = sparse.csr_matrix((w, (rows, idx[:, 1:].ravel())), shape=(n, n))
    return A.maximum(A.T).tocsr()


def knn_geodesic_matrix(points, k: int = 10, distances=None) -> np.ndarray:
    """All-pairs shortest-path distances on the symmetric k-NN graph."""
    G = knn_graph(points, k, distances)
    n_comp, _ = csgraph.connected_components(G, directed=False)
    if n_comp > 1:
        raise DisconnectedGraphError(n_comp, k)
    D = csgraph.shortest_path(G, method="D", directed=False)
    D[D < 1e-200] = 0.0
    np.fill_diagonal(D, 0.0)
    return np.minimum(D, D.T)


# ---------------------------------------------------------------------------
# curvature


def _cos_angle(a, b, c, kappa):
    """Cosine of the angle between sides a and b opposite side c."""
    if kappa == 0:
        return (a * a + b * b - c * c) / (2 * a * b)
    s = math.sqrt(abs(kappa))
    if kappa > 0:
        num = np.cos(s * c) - np.cos(s * a) * np.cos(s * b)
        den = np.sin(s * a) * np.sin(s * b)
    else:
        num = np.cosh(s * a) * np.cosh(s * b) - np.cosh(s * c)
        den = np.sinh(s * a) * np.sinh(s * b)
    return num / den


def _third_side(a, b, cos_gamma, kappa):
    if kappa == 0:
        return np.sqrt(np.maximum(a * a + b * b - 2 * a * b * cos_gamma, 0.0))
    s = math.sqrt(abs(kappa))
    if kappa > 0:
        v = np.cos(s * a) * np.cos(s * b) + np.sin(s * a) * np.sin(s * b) * cos_gamma
        return np.arccos(np.clip(v, -1.0, 1.0)) / s
    v = np.cosh(s * a) * np.cosh(s * b) - np.sinh(s * a) * np.sinh(s * b) * cos_gamma
    return np.arccosh(np.maximum(v, 1.0)) / s


def predicted_median_sq(ab, ac, bc, mb, mc, kappa):
    """Squared apex-to-``m`` distance in the model space of curvature ``kappa``,
    averaged over the two mirror placements of ``m`` about the line bc.

    ``m`` is fixed by its distances ``mb``, ``mc``; at the exact midpoint
    the two placements coincide with the median.
    """
    if kappa != 0 and abs(kappa) * max(np.max(ab), np.max(ac), np.max(bc)) ** 2 < 1e-9:
        kappa = 0.0
    cos_a = np.clip(_cos_angle(ab, bc, ac, kappa), -1.0, 1.0)
    cos_m = np.clip(_cos_angle(mb, bc, mc, kappa), -1.0, 1.0)
    sin_a = np.sqrt(1.0 - cos_a**2)
    sin_m = np.sqrt(1.0 - cos_m**2)
    near = _third_side(ab, mb, cos_a * cos_m + sin_a * sin_m, kappa)
    far = _third_side(ab, mb, cos_a * cos_m - sin_a * sin_m, kappa)
    return 0.5 * (near**2 + far**2)


@dataclass
class CurvatureFit:
    kappa: float
    kappa_linear: float
    n_triangles: int
    residuals: np.ndarray
    triangles: np.ndarray = field(repr=False)
    seed: int = 0


def _sample_triangles(D, n_triangles, rng, max_rounds=200):
    n = len(D)
    iu = np.triu_indices(n, 1)
    vals = D[iu]
    if len(vals) > 2_000_000:
        vals = rng.choice(vals, 2_000_000, replace=False)
    lo, hi = np.quantile(vals, [0.25, 0.75])
    out = []
    have = 0
    for _ in range(max_rounds):
        t = rng.integers(0, n, size=(8 * n_triangles, 3))
        t = t[(t[:, 0] != t[:, 1]) & (t[:, 0] != t[:, 2]) & (t[:, 1] != t[:, 2])]
        ab, ac, bc = D[t[:, 0], t[:, 1]], D[t[:, 0], t[:, 2]], D[t[:, 1], t[:, 2]]
        keep = ((ab >= lo) & (ab <= hi) & (ac >= lo) & (ac <= hi)
                & (bc >= lo) & (bc <= hi))
        out.append(t[keep])
        have += int(keep.sum())
        if have >= n_triangles:
            break
    return np.concatenate(out)[:n_triangles]


def estimate_curvature(points, geodesics, n_triangles: int = 500,
                       seed: int = 0) -> CurvatureFit:
    """Fit one effective sectional curvature to geodesic triangles.

    For each triangle (a, b, c) with sides in the interquartile range of the
    distance distribution, the sample point ``m`` closest to the midpoint of
    bc is compared with the apex distance predicted by the model space.
    Positive curvature makes d(a, m) longer than its flat value. The
    first-order fit, d(a,m)^2 - flat^2 = kappa * |ab|^2 |ac|^2 sin^2(A) / 12,
    gives a starting value that is refined with the exact law of cosines.
    """
    D = np.asarray(geodesics, dtype=float)
    n = len(D)
    if n < 50:
        raise InsufficientTrianglesError("curvature fit needs at least 50 points")
    rng = np.random.default_rng(seed)
    tri = _sample_triangles(D, n_triangles, rng)
    if len(tri) < 10:
        raise InsufficientTrianglesError(f"only {len(tri)} valid triangles found")
    a, b, c = tri.T
    bc = D[b, c]
    half = 0.5 * bc
    score = np.maximum(np.abs(D[:, b] - half), np.abs(D[:, c] - half))
    score[b, np.arange(len(b))] = np.inf
    score[c, np.arange(len(c))] = np.inf
    m = np.argmin(score, axis=0)
    ab, ac = D[a, b], D[a, c]
    mb, mc, am = D[m, b], D[m, c], D[a, m]
    keep = (mb > 0) & (mc > 0) & (m != a)
    ab, ac, bc, mb, mc, am = (v[keep] for v in (ab, ac, bc, mb, mc, am))
    tri = tri[keep]
    if len(tri) < 10:
        raise InsufficientTrianglesError(f"only {len(tri)} usable triangles")

    flat_sq = predicted_median_sq(ab, ac, bc, mb, mc, 0.0)
    # The side of bc on which m lies is unknown; the mirror average leaves a
    # zero-mean error 2 * height(a) * height(m), used for the weights.
    cos_a = np.clip((ab**2 + bc**2 - ac**2) / (2 * ab * bc), -1.0, 1.0)
    cos_m = np.clip((mb**2 + bc**2 - mc**2) / (2 * mb * bc), -1.0, 1.0)
    spread = 2.0 * ab * mb * np.sqrt((1 - cos_a**2) * (1 - cos_m**2))
    floor = 2.5e-3 * float(np.median(bc)) ** 2
    w = 1.0 / (spread**2 + floor**2)

    cos_t = np.clip((ab**2 + ac**2 - bc**2) / (2 * ab * ac), -1.0, 1.0)
    g = ab**2 * ac**2 * (1.0 - cos_t**2) / 12.0
    kappa_lin = float(np.sum(w * g * (am**2 - flat_sq)) / np.sum(w * g * g))

    longest = max(ab.max(), ac.max(), bc.max(), mb.max(), mc.max(), am.max())
    k_max = 0.95 * (math.pi / longest) ** 2

    # squared lengths: the mirror-averaged prediction is unbiased there
    am_sq = am**2

    def loss(k):
        return float(np.sum(w * (am_sq - predicted_median_sq(ab, ac, bc, mb, mc, k)) ** 2))

    span = 4.0 * max(abs(kappa_lin), 1.0 / float(np.median(bc)) ** 2)
    res = minimize_scalar(loss, bounds=(-span, min(span, k_max)), method="bounded",
                          options={"xatol": 1e-8 * span})
    kappa = float(res.x)
    resid = am - np.sqrt(predicted_median_sq(ab, ac, bc, mb, mc, kappa))
    return CurvatureFit(kappa=kappa, kappa_linear=kappa_lin, n_triangles=len(tri),
                        residuals=resid, triangles=tri, seed=seed)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class GeometryEstimate:
    d_hat: float
    kappa_hat: float
    n_points: int
    k_graph: int
    n_triangles: int
    diagnostics: dict = field(default_factory=dict)

    def geometry(self) -> SpaceFormGeometry:
        """Working-domain surrogate fed to the bounds: a geodesic ball of
        radius half the graph diameter, inj equal to that radius."""
        dg = self.diagnostics
        return SpaceFormGeometry(d=dg["d_int"], kappa=dg["kappa_clamped"],
                                 inj=dg["inj"], vol=dg["vol"],
                                 domain_radius=dg["domain_radius"])

    def to_dict(self) -> dict:
        return {"d_hat": self.d_hat, "kappa_hat": self.kappa_hat,
                "n_points": self.n_points, "k_graph": self.k_graph,
                "n_triangles": self.n_triangles, "diagnostics": self.diagnostics}


def estimate_geometry(points, k: int = 10, n_triangles: int = 500, seed: int = 0,
                      max_graph_points: int = 4000,
                      discard_fraction: float = 0.1) -> GeometryEstimate:
    """TwoNN dimension on all points; graph geodesics and curvature on a
    seeded subsample of at most ``max_graph_points``."""
    X = np.asarray(points, dtype=float)
    tn = twonn(X, discard_fraction)
    rng = np.random.default_rng(seed)
    # duplicates carry no geometry and would make zero-length graph edges
    Xu = np.unique(X, axis=0)
    if len(Xu) > max_graph_points:
        Xu = Xu[np.sort(rng.choice(len(Xu), max_graph_points, replace=False))]
    G = knn_geodesic_matrix(Xu, k)
    fit = estimate_curvature(Xu, G, n_triangles, seed)

    d_int = max(1, int(round(tn.d_hat)))
    R = float(G.max()) / 2.0
    kappa_c = fit.kappa
    if kappa_c > 0:
        kappa_c = min(kappa_c, (math.pi / (2.0 * R)) ** 2)
    vol = space_form_ball_volume(d_int, kappa_c, R)
    diagnostics = {
        "seed": seed,
        "n_duplicates": tn.n_duplicates,
        "twonn_kept": tn.n_kept,
        "graph_points": len(Xu),
        "kappa_linear": fit.kappa_linear,
        "kappa_clamped": kappa_c,
        "d_int": d_int,
        "domain_radius": R,
        "inj": R,
        "vol": vol,
        "residuals": fit.residuals.tolist(),
    }
    return GeometryEstimate(d_hat=tn.d_hat, kappa_hat=fit.kappa, n_points=len(X),
                            k_graph=k, n_triangles=fit.n_triangles,
                            diagnostics=diagnostics)
