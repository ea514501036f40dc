"""Exponential-loss objective and (sub)gradients for the single-neuron
ReLU / leaky / linear classifiers and the one-hidden-layer network.

Loss: L(w) = (1/n) sum_i exp(-y_i * act(w.x_i)), with act(v) = max(slope*v, v)
(slope 0 = ReLU, slope in (0,1) = leaky, slope 1 = linear). The subgradient
uses the strict indicator: the slope applies wherever w.x <= 0, so the ReLU
kink contributes zero.

Exponent arguments are clamped at EXP_CLAMP before exponentiation; loss
evaluations surface an overflow flag when the clamp fired, because a clamped
value silently corrupts any rate analysis downstream. Sums accumulate
left-to-right in sample-index order for bit-reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import Dataset

__all__ = [
    "ModelKind",
    "MultiNeuronNet",
    "LossEval",
    "EXP_CLAMP",
    "loss",
    "grad",
    "sample_grad",
    "net_forward",
    "net_loss",
    "net_grad",
    "net_sample_grad",
    "activation_pattern",
]

EXP_CLAMP = 700.0  # exp(709.8) overflows float64


@dataclass(frozen=True)
class ModelKind:
    """Activation family: act(v) = max(slope*v, v) with the slope fixed.

    slope 0 is ReLU and slope 1 is linear; the Leaky variant keeps its slope
    strictly inside (0, 1) so each model has exactly one representation.
    """

    name: str
    slope: float

    @staticmethod
    def relu() -> "ModelKind":
        return ModelKind("relu", 0.0)

    @staticmethod
    def leaky(lam: float) -> "ModelKind":
        if not 0.0 < lam < 1.0:
            raise ValueError(f"leaky slope must be strictly inside (0,1), got {lam}")
        return ModelKind("leaky", float(lam))

    @staticmethod
    def linear() -> "ModelKind":
        return ModelKind("linear", 1.0)

    def activation(self, v):
        return np.maximum(self.slope * v, v)

    def activation_slope(self, v):
        """Derivative with the strict indicator: slope wherever v <= 0."""
        return np.where(np.asarray(v) > 0.0, 1.0, self.slope)


@dataclass(frozen=True)
class MultiNeuronNet:
    """One-hidden-layer ReLU net f(x) = v . relu(W^T x) with fixed output v.

    W: (d, K), column k = weights of hidden neuron k
    v: (K,), fixed, all entries nonzero, both signs present, K >= 2
    """

    W: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        W = np.ascontiguousarray(np.asarray(self.W, dtype=np.float64))
        v = np.asarray(self.v, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError(f"W must be (d, K), got shape {W.shape}")
        if v.shape != (W.shape[1],):
            raise ValueError(f"v shape {v.shape} does not match K = {W.shape[1]}")
        if W.shape[1] < 2:
            raise ValueError("need at least K = 2 hidden neurons")
        if np.any(v == 0.0):
            raise ValueError("all output weights must be nonzero")
        if not (np.any(v > 0) and np.any(v < 0)):
            raise ValueError("output weights must contain both signs")
        v.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "v", v)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def with_weights(self, W: np.ndarray) -> "MultiNeuronNet":
        return MultiNeuronNet(W, self.v)


class LossEval(NamedTuple):
    value: float
    overflow: bool

    def __float__(self) -> float:
        return self.value


def _seq_sum(values) -> float:
    # Fixed left-to-right accumulation; no pairwise reduction.
    total = 0.0
    for v in values:
        total += v
    return total


def _check_dim(w: np.ndarray, dim: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (dim,):
        raise ValueError(f"weight shape {w.shape} does not match dimension {dim}")
    return w


def _clamped_exp(args: np.ndarray) -> tuple[np.ndarray, bool]:
    over = bool(np.any(args > EXP_CLAMP))
    return np.exp(np.minimum(args, EXP_CLAMP)), over


def loss(w, ds: Dataset, kind: ModelKind) -> LossEval:
    """(1/n) sum_i exp(-y_i act(w.x_i)); overflow flag set if the clamp fired."""
    w = _check_dim(w, ds.dim)
    u = ds.points @ w
    margins = ds.labels * kind.activation(u)
    terms, over = _clamped_exp(-margins)
    return LossEval(float(_seq_sum(terms) / ds.n), over)


def _sample_term(x: np.ndarray, y: float, u: float, kind: ModelKind) -> np.ndarray:
    sp = 1.0 if u > 0.0 else kind.slope
    act = u if u > 0.0 else kind.slope * u
    arg = min(-y * act, EXP_CLAMP)
    return (-y * sp * np.exp(arg)) * x


def grad(w, ds: Dataset, kind: ModelKind) -> np.ndarray:
    """Subgradient of the loss; equals the sample-index-ordered mean of
    sample_grad exactly (identical per-sample arithmetic)."""
    w = _check_dim(w, ds.dim)
    acc = np.zeros(ds.dim)
    for i in range(ds.n):
        x = ds.points[i]
        acc += _sample_term(x, float(ds.labels[i]), float(w @ x), kind)
    return acc / ds.n


def sample_grad(w, z, kind: ModelKind) -> np.ndarray:
    """Gradient of one sample's loss; z = (x, y)."""
    x, y = z
    x = np.asarray(x, dtype=np.float64)
    w = _check_dim(w, x.shape[0])
    return _sample_term(x, float(y), float(w @ x), kind)


def net_forward(net: MultiNeuronNet, x) -> float:
    """f(x) = sum_k v_k relu(w_k . x)."""
    x = _check_dim(x, net.dim)
    u = net.W.T @ x
    return float(net.v @ np.maximum(u, 0.0))


def net_loss(net: MultiNeuronNet, ds: Dataset) -> LossEval:
    """(1/n) sum_i exp(-y_i f(x_i)) for the network."""
    if ds.dim != net.dim:
        raise ValueError(f"dataset dim {ds.dim} does not match net dim {net.dim}")
    U = ds.points @ net.W  # (n, K)
    f = np.maximum(U, 0.0) @ net.v
    terms, over = _clamped_exp(-(ds.labels * f))
    return LossEval(float(_seq_sum(terms) / ds.n), over)


def _net_sample_term(net: MultiNeuronNet, x: np.ndarray, y: float) -> np.ndarray:
    u = net.W.T @ x
    f = float(net.v @ np.maximum(u, 0.0))
    arg = min(-y * f, EXP_CLAMP)
    e = np.exp(arg)
    G = np.zeros_like(net.W)
    for k in range(net.K):
        if u[k] > 0.0:
            G[:, k] = (-net.v[k] * y * e) * x
    return G


def net_grad(net: MultiNeuronNet, ds: Dataset) -> np.ndarray:
    """d x K gradient; column k = -(v_k/n) sum over samples activating k of
    exp(-y_i f(x_i)) y_i x_i. Exact mean of net_sample_grad."""
    if ds.dim != net.dim:
        raise ValueError(f"dataset dim {ds.dim} does not match net dim {net.dim}")
    acc = np.zeros_like(net.W)
    for i in range(ds.n):
        acc += _net_sample_term(net, ds.points[i], float(ds.labels[i]))
    return acc / ds.n


def net_sample_grad(net: MultiNeuronNet, z) -> np.ndarray:
    """Per-sample d x K gradient; z = (x, y)."""
    x, y = z
    x = _check_dim(np.asarray(x, dtype=np.float64), net.dim)
    return _net_sample_term(net, x, float(y))


def activation_pattern(net: MultiNeuronNet, x) -> np.ndarray:
    """(K,) uint8 vector; bit k is 1 iff w_k . x > 0 (strict)."""
    x = _check_dim(x, net.dim)
    return (net.W.T @ x > 0.0).astype(np.uint8)
