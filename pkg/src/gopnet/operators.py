"""Fixed library of nodal, pooling and activation operators.

All forward functions are elementwise/broadcasting numpy operations so the
same code path serves scalar probes and batched tensors.  Each operator has
an analytic partial-derivative companion used by the gradient trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyInput, FormatError

# Exponential nodal saturates its argument here to keep candidate
# evaluation finite; gradients are zero in the saturated region.
EXP_CLAMP = 50.0

# Floor applied to standard deviations wherever hidden features are normalized.
STD_FLOOR = 1e-6


class NodalOp(Enum):
    MULTIPLICATION = "multiplication"
    EXPONENTIAL = "exponential"
    HARMONIC = "harmonic"
    QUADRATIC = "quadratic"
    GAUSSIAN = "gaussian"
    DOG = "dog"


class PoolOp(Enum):
    SUMMATION = "summation"
    CORRELATION1 = "1-correlation"
    CORRELATION2 = "2-correlation"
    MAXIMUM = "maximum"


class ActivationOp(Enum):
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"
    SOFTPLUS = "softplus"
    INVERSE_ABSOLUTE = "inverse-absolute"
    ELU = "elu"


NODAL_ORDER = tuple(NodalOp)
POOL_ORDER = tuple(PoolOp)
ACTIVATION_ORDER = tuple(ActivationOp)

_NODAL_INDEX = {op: i for i, op in enumerate(NODAL_ORDER)}
_POOL_INDEX = {op: i for i, op in enumerate(POOL_ORDER)}
_ACTIVATION_INDEX = {op: i for i, op in enumerate(ACTIVATION_ORDER)}

LIBRARY_SIZE = len(NODAL_ORDER) * len(POOL_ORDER) * len(ACTIVATION_ORDER)


@dataclass(frozen=True)
class OperatorSet:
    """A (nodal, pool, activation) triple; ``index`` is bijective with it."""

    nodal: NodalOp
    pool: PoolOp
    activation: ActivationOp

    @property
    def index(self) -> int:
        return (
            _NODAL_INDEX[self.nodal] * len(POOL_ORDER) * len(ACTIVATION_ORDER)
            + _POOL_INDEX[self.pool] * len(ACTIVATION_ORDER)
            + _ACTIVATION_INDEX[self.activation]
        )

    @classmethod
    def from_index(cls, index: int) -> "OperatorSet":
        if not 0 <= index < LIBRARY_SIZE:
            raise ValueError(f"operator set index {index} outside [0, {LIBRARY_SIZE})")
        n_act = len(ACTIVATION_ORDER)
        n_pool = len(POOL_ORDER)
        nodal, rem = divmod(index, n_pool * n_act)
        pool, act = divmod(rem, n_act)
        return cls(NODAL_ORDER[nodal], POOL_ORDER[pool], ACTIVATION_ORDER[act])

    def tokens(self) -> dict:
        return {
            "nodal": self.nodal.value,
            "pool": self.pool.value,
            "activation": self.activation.value,
        }

    @classmethod
    def from_tokens(cls, tokens: dict, path: str = "op_set") -> "OperatorSet":
        kinds = (("nodal", NodalOp), ("pool", PoolOp), ("activation", ActivationOp))
        parts = []
        for key, enum_cls in kinds:
            if key not in tokens:
                raise FormatError(f"{path}.{key}: missing operator token")
            token = tokens[key]
            try:
                parts.append(enum_cls(token))
            except ValueError:
                raise FormatError(f"{path}.{key}: unknown operator token {token!r}") from None
        return cls(*parts)

    def __str__(self) -> str:
        return f"({self.nodal.value}, {self.pool.value}, {self.activation.value})"


PERCEPTRON_SET = OperatorSet(NodalOp.MULTIPLICATION, PoolOp.SUMMATION, ActivationOp.SIGMOID)


def enumerate_operator_sets() -> list[OperatorSet]:
    """All operator sets in lexicographic (nodal, pool, activation) order."""
    return [OperatorSet.from_index(i) for i in range(LIBRARY_SIZE)]


# ---------------------------------------------------------------------------
# Nodal operators: z = psi(y, w), elementwise over broadcast w and y.
# ---------------------------------------------------------------------------

def nodal_forward(op: NodalOp, w, y):
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if op is NodalOp.MULTIPLICATION:
        return w * y
    if op is NodalOp.EXPONENTIAL:
        return np.exp(np.clip(w * y, -EXP_CLAMP, EXP_CLAMP)) - 1.0
    if op is NodalOp.HARMONIC:
        return np.sin(w * y)
    if op is NodalOp.QUADRATIC:
        return w * y * y
    if op is NodalOp.GAUSSIAN:
        return w * np.exp(-w * y * y)
    if op is NodalOp.DOG:
        return w * y * np.exp(-w * y * y)
    raise ValueError(f"unknown nodal operator {op}")


def nodal_grad(op: NodalOp, w, y):
    """Partials (dz/dw, dz/dy) of the nodal operator."""
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    if op is NodalOp.MULTIPLICATION:
        return np.broadcast_to(y, np.broadcast_shapes(w.shape, y.shape)).copy(), \
            np.broadcast_to(w, np.broadcast_shapes(w.shape, y.shape)).copy()
    if op is NodalOp.EXPONENTIAL:
        u = w * y
        e = np.exp(np.clip(u, -EXP_CLAMP, EXP_CLAMP))
        live = (np.abs(u) < EXP_CLAMP).astype(float)
        return y * e * live, w * e * live
    if op is NodalOp.HARMONIC:
        c = np.cos(w * y)
        return y * c, w * c
    if op is NodalOp.QUADRATIC:
        yy = y * y
        return np.broadcast_to(yy, np.broadcast_shapes(w.shape, y.shape)).copy(), 2.0 * w * y
    if op is NodalOp.GAUSSIAN:
        g = np.exp(-w * y * y)
        return g * (1.0 - w * y * y), -2.0 * w * w * y * g
    if op is NodalOp.DOG:
        g = np.exp(-w * y * y)
        return y * g * (1.0 - w * y * y), w * g * (1.0 - 2.0 * w * y * y)
    raise ValueError(f"unknown nodal operator {op}")


# ---------------------------------------------------------------------------
# Pooling operators over the fan-in dimension.
# ---------------------------------------------------------------------------

def pool_forward(op: PoolOp, z) -> float:
    """Pool a 1-D vector of nodal outputs to a scalar."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("pool_forward expects a 1-D vector")
    if z.size == 0:
        raise EmptyInput("pool_forward requires at least one element")
    return float(pool_forward_batch(op, z[None, :, None])[0, 0])


def pool_grad(op: PoolOp, z) -> np.ndarray:
    """Gradient of pool_forward w.r.t. each entry of z."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("pool_grad expects a 1-D vector")
    if z.size == 0:
        raise EmptyInput("pool_grad requires at least one element")
    return pool_grad_batch(op, z[None, :, None])[0, :, 0]


def pool_forward_batch(op: PoolOp, Z: np.ndarray) -> np.ndarray:
    """Pool [N, fan_in, width] nodal outputs along the fan-in axis."""
    n = Z.shape[1]
    if op is PoolOp.SUMMATION:
        return Z.sum(axis=1)
    if op is PoolOp.CORRELATION1:
        if n < 2:
            return np.zeros((Z.shape[0], Z.shape[2]))
        return (Z[:, :-1, :] * Z[:, 1:, :]).sum(axis=1)
    if op is PoolOp.CORRELATION2:
        if n < 3:
            return np.zeros((Z.shape[0], Z.shape[2]))
        return (Z[:, :-2, :] * Z[:, 1:-1, :] * Z[:, 2:, :]).sum(axis=1)
    if op is PoolOp.MAXIMUM:
        return Z.max(axis=1)
    raise ValueError(f"unknown pool operator {op}")


def pool_grad_batch(op: PoolOp, Z: np.ndarray) -> np.ndarray:
    """Elementwise pool gradients, same shape as Z.

    Maximum routes its subgradient to the first maximal index along fan-in.
    """
    n = Z.shape[1]
    if op is PoolOp.SUMMATION:
        return np.ones_like(Z)
    if op is PoolOp.CORRELATION1:
        g = np.zeros_like(Z)
        if n >= 2:
            g[:, :-1, :] += Z[:, 1:, :]
            g[:, 1:, :] += Z[:, :-1, :]
        return g
    if op is PoolOp.CORRELATION2:
        g = np.zeros_like(Z)
        if n >= 3:
            g[:, :-2, :] += Z[:, 1:-1, :] * Z[:, 2:, :]
            g[:, 1:-1, :] += Z[:, :-2, :] * Z[:, 2:, :]
            g[:, 2:, :] += Z[:, :-2, :] * Z[:, 1:-1, :]
        return g
    if op is PoolOp.MAXIMUM:
        g = np.zeros_like(Z)
        idx = Z.argmax(axis=1)
        np.put_along_axis(g, idx[:, None, :], 1.0, axis=1)
        return g
    raise ValueError(f"unknown pool operator {op}")


# ---------------------------------------------------------------------------
# Activation operators, elementwise.  Softplus and ELU follow the library
# definitions used throughout this package: softplus(x) = log(1 + exp(-x))
# and elu(x) = x for x >= 0, exp(x) for x < 0.
# ---------------------------------------------------------------------------

def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def activation_forward(op: ActivationOp, x):
    x = np.asarray(x, dtype=float)
    if op is ActivationOp.SIGMOID:
        return _sigmoid(x)
    if op is ActivationOp.TANH:
        return np.tanh(x)
    if op is ActivationOp.RELU:
        return np.maximum(0.0, x)
    if op is ActivationOp.SOFTPLUS:
        # log(1 + exp(-x)) computed without overflow on either tail
        return np.where(x >= 0, np.log1p(np.exp(-np.abs(x))),
                        -x + np.log1p(np.exp(-np.abs(x))))
    if op is ActivationOp.INVERSE_ABSOLUTE:
        return x / (1.0 + np.abs(x))
    if op is ActivationOp.ELU:
        return np.where(x >= 0, x, np.exp(np.minimum(x, 0.0)))
    raise ValueError(f"unknown activation operator {op}")


def activation_grad(op: ActivationOp, x):
    """Derivative of the activation; ReLU'(0) = 0 and ELU'(0) = 1 by convention."""
    x = np.asarray(x, dtype=float)
    if op is ActivationOp.SIGMOID:
        s = _sigmoid(x)
        return s * (1.0 - s)
    if op is ActivationOp.TANH:
        t = np.tanh(x)
        return 1.0 - t * t
    if op is ActivationOp.RELU:
        return (x > 0).astype(float)
    if op is ActivationOp.SOFTPLUS:
        return -_sigmoid(-x)
    if op is ActivationOp.INVERSE_ABSOLUTE:
        d = 1.0 + np.abs(x)
        return 1.0 / (d * d)
    if op is ActivationOp.ELU:
        return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))
    raise ValueError(f"unknown activation operator {op}")


# ---------------------------------------------------------------------------
# Inference cost model.  Scalar costs: add/mul/compare = 1,
# exp/log/sin/tanh/division = 4; per-operator totals are fixed sums of these,
# with sigmoid and tanh counted as one transcendental evaluation.
# ---------------------------------------------------------------------------

NODAL_FLOPS = {
    NodalOp.MULTIPLICATION: 1,
    NodalOp.EXPONENTIAL: 6,   # mul + exp + sub
    NodalOp.HARMONIC: 5,      # mul + sin
    NodalOp.QUADRATIC: 2,
    NodalOp.GAUSSIAN: 8,      # 2 mul + neg + exp + mul
    NodalOp.DOG: 9,
}

ACTIVATION_FLOPS = {
    ActivationOp.SIGMOID: 4,
    ActivationOp.TANH: 4,
    ActivationOp.RELU: 1,
    ActivationOp.SOFTPLUS: 9,         # exp + add + log
    ActivationOp.INVERSE_ABSOLUTE: 6,  # abs + add + div
    ActivationOp.ELU: 5,              # compare + exp
}


def pool_flops(op: PoolOp, fan_in: int) -> int:
    """Pooling cost for one neuron with the given fan-in."""
    n = fan_in
    if op is PoolOp.SUMMATION:
        return max(n - 1, 0)
    if op is PoolOp.CORRELATION1:
        return max(2 * n - 3, 0)
    if op is PoolOp.CORRELATION2:
        return max(3 * n - 7, 0)
    if op is PoolOp.MAXIMUM:
        return max(n - 1, 0)
    raise ValueError(f"unknown pool operator {op}")


def neuron_flops(op_set: OperatorSet, fan_in: int) -> int:
    """Per-sample cost of one neuron: nodal over fan-in, pool, bias, activation."""
    return (
        fan_in * NODAL_FLOPS[op_set.nodal]
        + pool_flops(op_set.pool, fan_in)
        + 1
        + ACTIVATION_FLOPS[op_set.activation]
    )
