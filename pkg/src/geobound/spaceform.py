"""Constant-curvature model spaces: sphere, Euclidean space and hyperboloid.

Points live in model coordinates:

* ``kappa > 0``: vectors in R^{d+1} with <x, x> = 1/kappa,
* ``kappa == 0``: vectors in R^d,
* ``kappa < 0``: hyperboloid sheet in R^{d+1}, <x, x>_L = -1/|kappa|, x_0 > 0.

Every sampler places points in a geodesic ball of radius ``domain_radius``
around the model base point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate

_RADIAL_TABLE_NODES = 10_000
_MODEL_TOL = 1e-6


class DomainError(ValueError):
    """Raised when an input lies outside the region where a formula holds."""


class InvalidPointError(ValueError):
    """Raised when a point is off the model surface for the given curvature."""


def unit_ball_volume(d: float) -> float:
    """Volume of the unit ball in R^d, pi^{d/2} / Gamma(d/2 + 1)."""
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


def unit_sphere_area(d: float) -> float:
    """Surface area of S^{d-1}; equals d times the unit-ball volume."""
    return d * unit_ball_volume(d)


def sn(kappa: float, t):
    """Generalized sine: sin(sqrt(k) t)/sqrt(k), t, or sinh(sqrt(-k) t)/sqrt(-k)."""
    if kappa > 0:
        s = math.sqrt(kappa)
        return np.sin(s * t) / s
    if kappa < 0:
        s = math.sqrt(-kappa)
        return np.sinh(s * t) / s
    return t


def max_radius(kappa: float) -> float:
    """Largest radius for which a ball does not wrap the sphere."""
    return math.pi / math.sqrt(kappa) if kappa > 0 else math.inf


def space_form_ball_volume(d: float, kappa: float, r: float) -> float:
    """Riemannian volume of a geodesic ball of radius ``r`` in the
    ``d``-dimensional space form of curvature ``kappa``.

    The radial integral uses ``d * omega_d`` (the area of the unit
    (d-1)-sphere) so that the flat case reduces to ``omega_d r^d``.
    """
    if not r > 0:
        raise DomainError(f"radius must be positive, got {r}")
    if d < 1:
        raise DomainError(f"dimension must be >= 1, got {d}")
    if kappa > 0 and r > max_radius(kappa) * (1 + 1e-12):
        raise DomainError(
            f"ball of radius {r} wraps the sphere of curvature {kappa} "
            f"(limit {max_radius(kappa)})"
        )
    if kappa == 0:
        return unit_ball_volume(d) * r**d
    if d == 1:
        return 2.0 * r
    val, _ = integrate.quad(
        lambda t: sn(kappa, t) ** (d - 1), 0.0, r, epsrel=1e-12, epsabs=0.0, limit=200
    )
    return unit_sphere_area(d) * val


def bishop_gromov_lower_bound(d: float, kappa: float, r: float) -> float:
    """Closed-form lower bound on the ball volume from the covering proof.

    Uses sinh(u) >= u e^{-u} for kappa <= 0 and sin(u) >= (2/pi) u for
    kappa > 0; the latter needs sqrt(kappa) r <= pi/2. Both keep the
    unit-ball volume and the factor 1/d of the volume formula.
    """
    base = unit_ball_volume(d) * r**d / d
    if kappa > 0:
        if math.sqrt(kappa) * r > math.pi / 2 * (1 + 1e-12):
            raise DomainError("sin(u) >= 2u/pi needs sqrt(kappa) r <= pi/2")
        return base * (2.0 / math.pi) ** (d - 1)
    c = (d - 1) * math.sqrt(-kappa)
    return base * math.exp(-c * d * r)


@dataclass(frozen=True)
class SpaceFormGeometry:
    d: int
    kappa: float
    inj: float
    vol: float
    domain_radius: float

    def __post_init__(self):
        if self.d < 1:
            raise DomainError(f"d must be >= 1, got {self.d}")
        for name in ("inj", "vol", "domain_radius"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise DomainError(f"{name} must be finite and positive, got {val}")
        if self.kappa > 0:
            lim = math.pi / math.sqrt(self.kappa)
            if self.domain_radius > lim / 2 * (1 + 1e-12):
                raise DomainError(
                    f"domain_radius {self.domain_radius} exceeds the hemisphere "
                    f"radius {lim / 2} for kappa={self.kappa}"
                )
            if self.inj > lim * (1 + 1e-12):
                raise DomainError(f"inj {self.inj} exceeds pi/sqrt(kappa) = {lim}")

    @classmethod
    def ball(
        cls,
        d: int,
        kappa: float,
        domain_radius: float,
        inj: Optional[float] = None,
        vol: Optional[float] = None,
    ) -> "SpaceFormGeometry":
        """Geometry of a geodesic ball; ``vol`` and ``inj`` default to the
        ball volume and the model injectivity radius (``2 * domain_radius``
        in the non-positively curved case, where the model has none)."""
        if inj is None:
            inj = max_radius(kappa) if kappa > 0 else 2.0 * domain_radius
        if vol is None:
            vol = space_form_ball_volume(d, kappa, domain_radius)
        return cls(d=int(d), kappa=float(kappa), inj=float(inj), vol=float(vol),
                   domain_radius=float(domain_radius))

    @property
    def model_dim(self) -> int:
        """Number of model coordinates per point."""
        return self.d if self.kappa == 0 else self.d + 1

    def to_dict(self) -> dict:
        return {"d": self.d, "kappa": self.kappa, "inj": self.inj,
                "vol": self.vol, "domain_radius": self.domain_radius}


@dataclass(frozen=True)
class ManifoldSample:
    geometry: SpaceFormGeometry
    intrinsic_points: np.ndarray
    seed: Optional[int] = None
    ambient_points: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    embed_seed: Optional[int] = None
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.intrinsic_points)

    @property
    def ambient_dim(self) -> Optional[int]:
        return None if self.ambient_points is None else self.ambient_points.shape[1]


# ---------------------------------------------------------------------------
# model-space primitives


def lorentz_inner(x, y):
    """Minkowski inner product -x_0 y_0 + sum_i x_i y_i along the last axis."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.sum(x[..., 1:] * y[..., 1:], axis=-1) - x[..., 0] * y[..., 0]


def base_point(geometry: SpaceFormGeometry) -> np.ndarray:
    p = np.zeros(geometry.model_dim)
    if geometry.kappa != 0:
        p[0] = 1.0 / math.sqrt(abs(geometry.kappa))
    return p


def check_on_model(points, geometry: SpaceFormGeometry, tol: float = _MODEL_TOL) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != geometry.model_dim:
        raise InvalidPointError(
            f"expected {geometry.model_dim} model coordinates, got {pts.shape[-1]}"
        )
    k = geometry.kappa
    if k > 0:
        err = np.abs(k * np.sum(pts * pts, axis=-1) - 1.0)
    elif k < 0:
        err = np.abs(-k * lorentz_inner(pts, pts) + 1.0)
        if np.any(pts[..., 0] <= 0):
            raise InvalidPointError("hyperboloid points need x_0 > 0")
    else:
        return
    if np.any(err > tol):
        raise InvalidPointError(f"point off the model surface (max error {err.max():.3g})")


def _distance_kernel(x: np.ndarray, y: np.ndarray, kappa: float) -> np.ndarray:
    # Chord-based forms: exact zero on the diagonal, no cancellation for
    # nearby points, and no NaN from rounding past the arccos/arccosh domain.
    diff = x - y
    if kappa == 0:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    s = math.sqrt(abs(kappa))
    if kappa > 0:
        summ = x + y
        chord = np.sqrt(np.sum(diff * diff, axis=-1))
        anti = np.sqrt(np.sum(summ * summ, axis=-1))
        return 2.0 * np.arctan2(chord, anti) / s
    z = 0.5 * abs(kappa) * np.maximum(lorentz_inner(diff, diff), 0.0)
    return np.log1p(z + np.sqrt(z * (z + 2.0))) / s


def geodesic_distance(x, y, geometry: SpaceFormGeometry) -> float:
    """Geodesic distance between two model points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    check_on_model(x, geometry)
    check_on_model(y, geometry)
    return float(_distance_kernel(x, y, geometry.kappa))


def pairwise_geodesic_distances(points, geometry: SpaceFormGeometry,
                                others=None) -> np.ndarray:
    """Dense matrix of geodesic distances (rows: ``points``, cols: ``others``)."""
    a = np.asarray(points, dtype=float)
    b = a if others is None else np.asarray(others, dtype=float)
    check_on_model(a, geometry)
    if others is not None:
        check_on_model(b, geometry)
    out = np.empty((len(a), len(b)))
    step = max(1, 4_000_000 // max(1, len(b) * a.shape[1]))
    for i in range(0, len(a), step):
        out[i:i + step] = _distance_kernel(a[i:i + step, None, :], b[None, :, :],
                                           geometry.kappa)
    if others is None:
        np.fill_diagonal(out, 0.0)
        out = 0.5 * (out + out.T)
    return out


def exp_map_at_base(radii, directions, geometry: SpaceFormGeometry) -> np.ndarray:
    """Exponential map at the base point; ``directions`` are unit vectors in R^d."""
    r = np.asarray(radii, dtype=float)[:, None]
    u = np.asarray(directions, dtype=float)
    k = geometry.kappa
    if k == 0:
        return r * u
    s = math.sqrt(abs(k))
    if k > 0:
        head, tail = np.cos(s * r) / s, np.sin(s * r) / s
    else:
        head, tail = np.cosh(s * r) / s, np.sinh(s * r) / s
    return np.hstack([head, tail * u])


def log_map_at_base(points, geometry: SpaceFormGeometry) -> np.ndarray:
    """Inverse of :func:`exp_map_at_base`: tangent vectors at the base point."""
    pts = np.asarray(points, dtype=float)
    if geometry.kappa == 0:
        return pts.copy()
    base = base_point(geometry)
    r = _distance_kernel(pts, base[None, :], geometry.kappa)
    tail = pts[:, 1:]
    norm = np.linalg.norm(tail, axis=1)
    scale = np.divide(r, norm, out=np.zeros_like(r), where=norm > 0)
    return tail * scale[:, None]


def radial_cdf_table(geometry: SpaceFormGeometry, nodes: int = _RADIAL_TABLE_NODES):
    """Monotone table (r, F(r)) for the radial law with density sn(r)^{d-1}."""
    r = np.linspace(0.0, geometry.domain_radius, nodes)
    dens = np.abs(sn(geometry.kappa, r)) ** (geometry.d - 1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(r))])
    cdf /= cdf[-1]
    return r, cdf


def sample_uniform_ball(geometry: SpaceFormGeometry, n: int, seed: int) -> ManifoldSample:
    """Draw ``n`` points uniformly (w.r.t. Riemannian volume) from the working ball."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    r_tab, cdf = radial_cdf_table(geometry)
    radii = np.interp(rng.random(n), cdf, r_tab)
    if geometry.d == 1:
        dirs = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    else:
        g = rng.standard_normal((n, geometry.d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    pts = exp_map_at_base(radii, dirs, geometry)
    return ManifoldSample(geometry=geometry, intrinsic_points=pts, seed=seed)


def random_orthogonal(D: int, seed: Optional[int]) -> np.ndarray:
    """Haar-distributed orthogonal matrix from QR of a seeded Gaussian;
    ``seed=None`` gives the identity."""
    if seed is None:
        return np.eye(D)
    g = np.random.default_rng(seed).standard_normal((D, D))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def embed_ambient(sample: ManifoldSample, D: int, seed: Optional[int]) -> ManifoldSample:
    """Zero-pad model coordinates to R^D and rotate by a random orthogonal map."""
    m = sample.geometry.model_dim
    if D < m:
        raise DomainError(f"ambient dimension {D} is smaller than the model dimension {m}")
    padded = np.zeros((sample.n, D))
    padded[:, :m] = sample.intrinsic_points
    ambient = padded @ random_orthogonal(D, seed).T
    return replace(sample, ambient_points=ambient, embed_seed=seed)


def ambient_radius(geometry: SpaceFormGeometry) -> float:
    """Euclidean radius, around the base point, of the model image of the working ball."""
    k, R = geometry.kappa, geometry.domain_radius
    if k == 0:
        return R
    s = math.sqrt(abs(k))
    if k > 0:
        return 2.0 * math.sin(0.5 * s * R) / s
    return math.sqrt((math.cosh(s * R) - 1.0) ** 2 + math.sinh(s * R) ** 2) / s


def ambient_lipschitz_distortion(geometry: SpaceFormGeometry) -> float:
    """Largest ratio of ambient (Euclidean) to intrinsic length on the working ball.

    A function that is L-Lipschitz in ambient coordinates is
    ``L * distortion``-Lipschitz with respect to geodesic distance. Chords
    never exceed arcs, so the ratio is 1 for kappa >= 0; on the hyperboloid
    the radial direction stretches by sqrt(cosh(2 sqrt|kappa| r)).
    """
    if geometry.kappa >= 0:
        return 1.0
    s = math.sqrt(-geometry.kappa)
    return math.sqrt(math.cosh(2.0 * s * geometry.domain_radius))


def make_task(sample: ManifoldSample, task: str, seed: int, noise: float = 0.1,
              flip_prob: float = 0.05, frequency: float = 3.0) -> ManifoldSample:
    """Attach labels.

    regression: ``cos(frequency * d_g(x, base)) + N(0, noise^2)``;
    classification: sign of the first log-map coordinate, flipped with
    probability ``flip_prob``.
    """
    rng = np.random.default_rng(seed)
    geom = sample.geometry
    pts = sample.intrinsic_points
    if task == "regression":
        r = _distance_kernel(pts, base_point(geom)[None, :], geom.kappa)
        y = np.cos(frequency * r)
        if noise > 0:
            y = y + noise * rng.standard_normal(len(y))
    elif task == "classification":
        first = log_map_at_base(pts, geom)[:, 0]
        y = np.where(first >= 0, 1.0, -1.0)
        if flip_prob > 0:
            y = np.where(rng.random(len(y)) < flip_prob, -y, y)
    else:
        raise ValueError(f"unknown task {task!r}")
    return replace(sample, labels=y)
