"""One-hidden-layer ReLU network with spectrally normalized weights.

With both weight matrices at spectral norm ``target_norm`` and a 1-Lipschitz
activation, the network is ``target_norm**2``-Lipschitz in its input.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .bounds import (
    BoundConstants,
    FunctionClassSpec,
    euclidean_baseline,
    generalization_bound,
)
from .spaceform import ManifoldSample, SpaceFormGeometry, ambient_lipschitz_distortion

LOSSES = ("squared", "hinge")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite training loss {value} at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# spectral normalization


def top_singular_value(W: np.ndarray, n_iters: int = 30, seed: Optional[int] = None,
                       u0: Optional[np.ndarray] = None, accel: int = 10):
    """Power iteration for the largest singular value.

    Iterates on the smaller Gram matrix after squaring it ``accel`` times, so
    each of the ``n_iters`` steps acts like 2**accel plain steps; the value
    is read off as a Rayleigh quotient of the unsquared Gram matrix. Returns
    ``(sigma, u)`` with ``u`` a unit vector usable as a warm start.
    """
    W = np.asarray(W, dtype=float)
    G = W @ W.T if W.shape[0] <= W.shape[1] else W.T @ W
    scale = np.linalg.norm(G)
    if scale == 0:
        raise ValueError("cannot normalize a zero matrix")
    P = G / scale
    for _ in range(accel):
        P = P @ P
        P /= np.linalg.norm(P)
    if u0 is not None and u0.shape == (G.shape[0],) and np.any(u0):
        u = np.array(u0, dtype=float)
    else:
        u = np.random.default_rng(seed).standard_normal(G.shape[0])
    u /= np.linalg.norm(u)
    for _ in range(n_iters):
        v = P @ u
        nv = np.linalg.norm(v)
        if nv == 0:
            break
        u = v / nv
    sigma = math.sqrt(max(float(u @ G @ u), 0.0))
    return sigma, u


def spectral_normalize(W: np.ndarray, n_iters: int = 30, seed: Optional[int] = None,
                       target_norm: float = 1.0, u0: Optional[np.ndarray] = None,
                       accel: int = 10):
    """Rescale ``W`` so its top singular value equals ``target_norm``.

    Returns ``(W_normalized, sigma, u)`` where ``sigma`` is the estimate for
    the input matrix.
    """
    sigma, u = top_singular_value(W, n_iters, seed, u0, accel)
    if sigma == 0:
        raise ValueError("cannot normalize a zero matrix")
    return np.asarray(W, dtype=float) * (target_norm / sigma), sigma, u


# ---------------------------------------------------------------------------
# network


@dataclass
class LipschitzNet:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    target_norm: float = 1.0
    output_bound: float = 1.0
    sigma1: float = 1.0
    sigma2: float = 1.0
    seed: Optional[int] = None
    shift: Optional[np.ndarray] = None
    u1: Optional[np.ndarray] = field(default=None, repr=False)
    u2: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def lipschitz_constant(self) -> float:
        return self.target_norm**2

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_width": self.W1.shape[0],
            "target_norm": self.target_norm,
            "output_bound": self.output_bound,
            "seed": self.seed,
            "shift": None if self.shift is None else self.shift.tolist(),
            "W1": self.W1.tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.tolist(), "b2": self.b2.tolist(),
        }

    def to_json(self) -> str:
        # repr of a float round-trips, which is what 17 significant digits buy
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "LipschitzNet":
        return cls(W1=np.array(obj["W1"], dtype=float), b1=np.array(obj["b1"], dtype=float),
                   W2=np.array(obj["W2"], dtype=float), b2=np.array(obj["b2"], dtype=float),
                   target_norm=obj["target_norm"], output_bound=obj["output_bound"],
                   seed=obj.get("seed"),
                   shift=None if obj.get("shift") is None else np.array(obj["shift"], dtype=float))


def init_net(input_dim: int, hidden_width: int, seed: int, target_norm: float = 1.0,
             output_bound: float = 1.0, n_iters: int = 30, shift=None) -> LipschitzNet:
    rng = np.random.default_rng(seed)
    W1 = rng.standard_normal((hidden_width, input_dim)) / math.sqrt(input_dim)
    W2 = rng.standard_normal((1, hidden_width)) / math.sqrt(hidden_width)
    W1, s1, u1 = spectral_normalize(W1, n_iters, seed, target_norm)
    W2, s2, u2 = spectral_normalize(W2, n_iters, seed, target_norm)
    return LipschitzNet(W1=W1, b1=np.zeros(hidden_width), W2=W2, b2=np.zeros(1),
                        target_norm=target_norm, output_bound=output_bound,
                        sigma1=s1, sigma2=s2, seed=seed, u1=u1, u2=u2,
                        shift=None if shift is None else np.asarray(shift, dtype=float))


def forward_raw(net: LipschitzNet, X) -> np.ndarray:
    """Network output before clamping; accepts one vector or a batch."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != net.input_dim:
        raise ValueError(f"input has {X2.shape[1]} features, net expects {net.input_dim}")
    if net.shift is not None:
        X2 = X2 - net.shift
    h = np.maximum(X2 @ net.W1.T + net.b1, 0.0)
    out = (h @ net.W2.T + net.b2)[:, 0]
    return out[0] if single else out


def forward(net: LipschitzNet, X) -> np.ndarray:
    """Clamped output in [-output_bound, output_bound]."""
    return np.clip(forward_raw(net, X), -net.output_bound, net.output_bound)


# ---------------------------------------------------------------------------
# losses and gradients


def pointwise_loss(f: np.ndarray, y: np.ndarray, loss: str) -> np.ndarray:
    if loss == "squared":
        return (f - y) ** 2
    if loss == "hinge":
        return np.maximum(0.0, 1.0 - y * f)
    raise ValueError(f"unknown loss {loss!r}")


def loss_lipschitz(loss: str, B: float) -> float:
    """Lipschitz constant of the loss in the prediction on [-B, B]:
    1 for hinge, 4B for squared loss with labels in [-B, B]."""
    if loss == "hinge":
        return 1.0
    if loss == "squared":
        return 4.0 * B
    raise ValueError(f"unknown loss {loss!r}")


def risk(net: LipschitzNet, X, y, loss: str) -> float:
    return float(np.mean(pointwise_loss(forward(net, X), np.asarray(y, dtype=float), loss)))


def loss_and_grads(net: LipschitzNet, X: np.ndarray, y: np.ndarray, loss: str,
                   clamp: bool = False):
    """Mean loss over the batch and its gradient w.r.t. (W1, b1, W2, b2).

    Training uses the unclamped output by default: the clamp has zero
    gradient outside [-B, B] and would stall saturated units.
    """
    if net.shift is not None:
        X = X - net.shift
    z1 = X @ net.W1.T + net.b1
    a1 = np.maximum(z1, 0.0)
    out = (a1 @ net.W2.T + net.b2)[:, 0]
    B = net.output_bound
    f = np.clip(out, -B, B) if clamp else out
    if loss == "squared":
        r = f - y
        value = np.mean(r * r)
        g_f = 2.0 * r
    elif loss == "hinge":
        margin = 1.0 - y * f
        value = np.mean(np.maximum(margin, 0.0))
        g_f = np.where(margin > 0, -y, 0.0)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    g_out = g_f / len(y)
    if clamp:
        g_out = g_out * ((out > -B) & (out < B))
    gW2 = g_out[None, :] @ a1
    gb2 = np.array([g_out.sum()])
    g_z1 = np.outer(g_out, net.W2[0]) * (z1 > 0)
    gW1 = g_z1.T @ X
    gb1 = g_z1.sum(axis=0)
    return float(value), [gW1, gb1, gW2, gb2]


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    hidden_width: int = 64
    epochs: int = 100
    batch: int = 64
    step_size: float = 0.05
    target_norm: float = 1.0
    loss: str = "squared"
    seed: int = 0
    output_bound: float = 1.0
    power_iters: int = 3

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.batch < 1 or self.epochs < 0 or self.hidden_width < 1:
            raise ValueError("batch, epochs and hidden_width must be positive")


@dataclass
class TrainResult:
    net: LipschitzNet
    loss_history: list


def train(X, y, config: TrainConfig,
          callback: Optional[Callable[[int, LipschitzNet], None]] = None) -> TrainResult:
    """Mini-batch gradient descent with spectral normalization after every step.

    Inputs are centred on the training mean (a translation, so the certified
    Lipschitz constant is unchanged). ``callback(step, net)`` runs after each
    normalized step.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(X)
    if not n >= config.batch >= 1:
        raise ValueError(f"need n >= batch >= 1, got n={n}, batch={config.batch}")
    net = init_net(X.shape[1], config.hidden_width, config.seed, config.target_norm,
                   config.output_bound, shift=X.mean(axis=0))
    rng = np.random.default_rng(config.seed + 1)
    history = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            idx = order[start:start + config.batch]
            value, grads = loss_and_grads(net, X[idx], y[idx], config.loss)
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, value)
            W1 = net.W1 - config.step_size * grads[0]
            W2 = net.W2 - config.step_size * grads[2]
            W1, s1, u1 = spectral_normalize(W1, config.power_iters, u0=net.u1,
                                            target_norm=config.target_norm)
            W2, s2, u2 = spectral_normalize(W2, config.power_iters, u0=net.u2,
                                            target_norm=config.target_norm)
            net = replace(net, W1=W1, W2=W2,
                          b1=net.b1 - config.step_size * grads[1],
                          b2=net.b2 - config.step_size * grads[3],
                          sigma1=s1, sigma2=s2, u1=u1, u2=u2)
            step += 1
            if callback is not None:
                callback(step, net)
        epoch_risk = risk(net, X, y, config.loss)
        if not math.isfinite(epoch_risk):
            raise TrainingDivergedError(epoch, epoch_risk)
        history.append(epoch_risk)
    return TrainResult(net=net, loss_history=history)


# ---------------------------------------------------------------------------
# generalization gap


@dataclass
class GapRecord:
    n_train: int
    train_risk: float
    test_risk: float
    gap: float
    bound_curvature: float
    bound_euclidean: float
    seed: Optional[int]
    geometry: SpaceFormGeometry
    spec: FunctionClassSpec
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["geometry"] = self.geometry.to_dict()
        return out


def certified_spec(target_norm: float, output_bound: float, geometry: SpaceFormGeometry,
                   loss: str) -> FunctionClassSpec:
    """Function-class constants certified for nets with per-layer norm
    ``target_norm`` on ``geometry``: the geodesic Lipschitz constant accounts
    for the ambient embedding's stretch."""
    L = target_norm**2 * ambient_lipschitz_distortion(geometry)
    return FunctionClassSpec(L=L, B=output_bound, L_loss=loss_lipschitz(loss, output_bound))


def class_spec_for(net: LipschitzNet, geometry: SpaceFormGeometry, loss: str) -> FunctionClassSpec:
    return certified_spec(net.target_norm, net.output_bound, geometry, loss)


def measure_gap(net: LipschitzNet, train_data: ManifoldSample, test_data: ManifoldSample,
                loss: str, geometry: SpaceFormGeometry, spec: FunctionClassSpec,
                constants: BoundConstants = BoundConstants()) -> GapRecord:
    """Empirical gap |R_test - R_train| with the curvature-aware and baseline
    generalization bounds at the training-set size."""
    train_risk = risk(net, train_data.ambient_points, train_data.labels, loss)
    test_risk = risk(net, test_data.ambient_points, test_data.labels, loss)
    n = train_data.n
    bound = generalization_bound(geometry, spec, n, constants)
    base = euclidean_baseline(train_data.ambient_dim, spec, n, constants)
    return GapRecord(n_train=n, train_risk=train_risk, test_risk=test_risk,
                     gap=abs(test_risk - train_risk), bound_curvature=bound,
                     bound_euclidean=base.generalization, seed=train_data.seed,
                     geometry=geometry, spec=spec)
