"""Dense float64 linear algebra, named parameter slots, Adam, and a
finite-difference gradient oracle.

All numeric state in the package lives in plain 2-D numpy arrays
(row-major float64); this module owns that convention plus the optimizer
and the seeded random source. Gradients for the network itself are
hand-derived elsewhere - the only "autodiff" here is the central-difference
oracle used to check them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError

# A Matrix is a 2-D, C-contiguous float64 ndarray.
Matrix = np.ndarray


def as_matrix(data) -> Matrix:
    """Coerce to the package-wide 2-D float64 row-major layout."""
    out = np.ascontiguousarray(data, dtype=np.float64)
    if out.ndim == 1:
        out = out.reshape(1, -1)
    if out.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={out.ndim}")
    return out


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with explicit shape and finiteness checks."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NumericError("matmul produced non-finite entries")
    return out


def init_dense(gen: np.random.Generator, fan_in: int, fan_out: int) -> Matrix:
    """Kaiming-uniform weight draw: entries in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""
    if fan_in < 1 or fan_out < 1:
        raise ShapeError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    bound = np.sqrt(1.0 / fan_in)
    return gen.uniform(-bound, bound, size=(fan_in, fan_out))


class Rng:
    """Deterministic random source with labeled substreams.

    Substreams are keyed by (seed, labels) through a cryptographic digest,
    so each consumer (weights, dropout, shuffling, toy noise, ...) gets an
    independent counter-based stream: adding or removing draws on one
    substream never shifts any other.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    def _entropy(self, labels: tuple) -> list[int]:
        digest = hashlib.sha256(repr(labels).encode("utf-8")).digest()
        words = np.frombuffer(digest[:16], dtype="<u8")
        return [self.seed & 0xFFFFFFFFFFFFFFFF, int(words[0]), int(words[1])]

    def substream(self, *labels) -> np.random.Generator:
        """A fresh Philox generator for the given label path."""
        seq = np.random.SeedSequence(entropy=self._entropy(labels))
        return np.random.Generator(np.random.Philox(seq))

    def child(self, *labels) -> "Rng":
        """Derive a nested Rng whose own substreams stay independent."""
        digest = hashlib.sha256(
            repr((self.seed,) + labels).encode("utf-8")
        ).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


@dataclass
class Slot:
    """One named parameter plus its gradient accumulator and Adam moments."""

    value: Matrix
    grad: Matrix
    m: Matrix
    v: Matrix


class ParamStore:
    """Named parameter slots sharing one Adam step counter.

    Gradient and moment buffers always shape-match their parameter; the
    step counter only ever increases.
    """

    def __init__(self):
        self._slots: dict[str, Slot] = {}
        self.step = 0

    def add(self, name: str, value) -> Matrix:
        if name in self._slots:
            raise ValueError(f"parameter slot {name!r} already exists")
        val = as_matrix(value)
        self._slots[name] = Slot(
            value=val,
            grad=np.zeros_like(val),
            m=np.zeros_like(val),
            v=np.zeros_like(val),
        )
        return val

    def names(self) -> list[str]:
        return sorted(self._slots)

    def slot(self, name: str) -> Slot:
        return self._slots[name]

    def value(self, name: str) -> Matrix:
        return self._slots[name].value

    def grad(self, name: str) -> Matrix:
        return self._slots[name].grad

    def zero_grads(self) -> None:
        for s in self._slots.values():
            s.grad[...] = 0.0

    def n_scalars(self) -> int:
        return sum(s.value.size for s in self._slots.values())

    def copy(self) -> "ParamStore":
        out = ParamStore()
        out.step = self.step
        for name, s in self._slots.items():
            out._slots[name] = Slot(
                value=s.value.copy(), grad=s.grad.copy(), m=s.m.copy(), v=s.v.copy()
            )
        return out

    def __contains__(self, name: str) -> bool:
        return name in self._slots

    def __len__(self) -> int:
        return len(self._slots)


def adam_step(
    store: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update on every slot; zeroes gradients afterwards."""
    for name in store.names():
        g = store.grad(name)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in slot {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store.names():
        s = store.slot(name)
        s.m[...] = beta1 * s.m + (1.0 - beta1) * s.grad
        s.v[...] = beta2 * s.v + (1.0 - beta2) * s.grad**2
        s.value[...] -= lr * (s.m / c1) / (np.sqrt(s.v / c2) + eps)
        s.grad[...] = 0.0


def finite_diff_grad(
    loss_fn: Callable[[ParamStore], float],
    store: ParamStore,
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradient estimate for every scalar parameter.

    loss_fn must be deterministic (stochastic masks frozen); parameters are
    perturbed in place and restored exactly.
    """
    grads: dict[str, np.ndarray] = {}
    for name in store.names():
        value = store.value(name)
        g = np.zeros_like(value)
        flat_v = value.ravel()
        flat_g = g.ravel()
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            f_plus = float(loss_fn(store))
            flat_v[i] = orig - h
            f_minus = float(loss_fn(store))
            flat_v[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(
                    f"non-finite loss while differencing slot {name!r}"
                )
            flat_g[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g
    return grads
