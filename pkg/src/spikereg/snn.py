"""Spiking network core: PLIF hidden layer, per-step dropout, leaky readout,
forward simulation over discrete time steps, and hand-written
backpropagation-through-time with an arctan surrogate around the threshold.

Dynamics per step t (input x injected as a constant current):
    I      = x @ W1 + b1                      (same every step)
    H_t    = V_{t-1} + (1/tau) * (I - V_{t-1})    with 1/tau = sigmoid(a)
    S_t    = step(H_t - theta)                (exact) or smooth surrogate
    V_t    = H_t * (1 - S_t)                  (hard reset to 0)
    D_t    = S_t * mask_t                     (inverted dropout, resampled per step)
    U_t    = kappa * U_{t-1} + D_t @ W2 + b2      with kappa = sigmoid(c)

The readout potentials U_t are the per-step outputs consumed by the heads.
In "surrogate" mode the spike is the smooth surrogate itself, which makes the
whole forward differentiable so the BPTT code can be finite-difference checked.
"""

from __future__ import annotations

import binascii
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericError, ShapeError
from .heads import sigmoid
from .numcore import ParamStore, init_dense

SURROGATE_ALPHA = 2.0
THRESHOLD = 1.0

PARAM_HIDDEN_W = "hidden.W"
PARAM_HIDDEN_B = "hidden.b"
PARAM_HIDDEN_TAU = "hidden.tau_raw"
PARAM_READOUT_W = "readout.W"
PARAM_READOUT_B = "readout.b"
PARAM_READOUT_LEAK = "readout.leak_raw"


def surrogate_spike(x):
    """Smooth stand-in for the threshold step: atan(pi*alpha*x/2)/pi + 1/2."""
    return np.arctan(0.5 * np.pi * SURROGATE_ALPHA * x) / np.pi + 0.5


def surrogate_grad(x):
    """Derivative of surrogate_spike: alpha / (2 * (1 + (pi*alpha*x/2)^2))."""
    return SURROGATE_ALPHA / (2.0 * (1.0 + (0.5 * np.pi * SURROGATE_ALPHA * x) ** 2))


def plif_update(v_prev, current, inv_tau, threshold, mode):
    """One membrane update. Returns (pre-reset potential, spikes, new potential)."""
    h = v_prev + inv_tau * (current - v_prev)
    if mode == "spike":
        s = (h >= threshold).astype(np.float64)
    elif mode == "surrogate":
        s = surrogate_spike(h - threshold)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    v_new = h * (1.0 - s)
    return h, s, v_new


def readout_update(u_prev, drive, leak):
    """Leaky integration of the readout potentials: U' = leak*U + drive."""
    return leak * u_prev + drive


@dataclass
class DropoutPlan:
    """Per-step Bernoulli masks with inverted scaling 1/(1-rate).

    If masks is None they are resampled from the given generator at
    materialization time; a fixed array freezes them (for gradient checks).
    """

    rate: float = 0.0
    masks: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")

    def materialize(self, n_steps, n_batch, n_units, gen=None) -> np.ndarray:
        shape = (n_steps, n_batch, n_units)
        if self.masks is not None:
            if self.masks.shape != shape:
                raise ShapeError(
                    f"frozen dropout masks have shape {self.masks.shape}, need {shape}"
                )
            return self.masks
        if self.rate == 0.0:
            return np.ones(shape)
        if gen is None:
            raise ValueError("dropout rate > 0 needs a generator or frozen masks")
        keep = gen.random(shape) >= self.rate
        return keep / (1.0 - self.rate)


class PLIFLayer:
    """Spiking hidden layer with a learnable, layer-shared time constant.

    tau = 1/sigmoid(tau_raw) >= 1 by construction; threshold is fixed and the
    reset is hard (a spiking neuron's potential goes exactly to 0).
    """

    def __init__(self, W, b, tau_raw, threshold=THRESHOLD):
        self.W = W
        self.b = b
        self.tau_raw = tau_raw
        self.threshold = threshold
        self.V: Optional[np.ndarray] = None

    @property
    def inv_tau(self) -> float:
        return float(sigmoid(self.tau_raw[0, 0]))

    @property
    def tau(self) -> float:
        return 1.0 / self.inv_tau

    def reset(self, n_batch: int) -> None:
        self.V = np.zeros((n_batch, self.W.shape[1]))

    def step(self, input_current, mode="spike"):
        """Advance one step from a post-affine input current; returns spikes."""
        if self.V is None or self.V.shape != input_current.shape:
            raise ShapeError("layer state not reset to the batch shape")
        h, s, v_new = plif_update(
            self.V, input_current, self.inv_tau, self.threshold, mode
        )
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite membrane potential in PLIF layer")
        self.V = v_new
        return s


class ReadoutLayer:
    """Non-spiking integrator; its potentials are the network outputs."""

    def __init__(self, W, b, leak_raw, fixed_leak: Optional[float] = None):
        self.W = W
        self.b = b
        self.leak_raw = leak_raw
        self.fixed_leak = fixed_leak
        self.U: Optional[np.ndarray] = None

    @property
    def leak(self) -> float:
        if self.fixed_leak is not None:
            return self.fixed_leak
        return float(sigmoid(self.leak_raw[0, 0]))

    def reset(self, n_batch: int) -> None:
        self.U = np.zeros((n_batch, self.W.shape[1]))

    def step(self, spikes_in):
        if self.U is None or spikes_in.shape[0] != self.U.shape[0]:
            raise ShapeError("layer state not reset to the batch shape")
        drive = spikes_in @ self.W + self.b
        self.U = readout_update(self.U, drive, self.leak)
        return self.U


@dataclass
class Trace:
    """Everything forward() saw, step by step; enough to run exact BPTT."""

    x: np.ndarray  # (B, Q)
    current: np.ndarray  # (B, H) constant input current
    h: np.ndarray  # (T, B, H) membrane before reset
    s: np.ndarray  # (T, B, H) spikes (binary or smooth)
    v: np.ndarray  # (T, B, H) membrane after reset
    masks: np.ndarray  # (T, B, H)
    u: np.ndarray  # (T, B, O) readout potentials
    mode: str
    rate: float

    @property
    def n_steps(self) -> int:
        return self.h.shape[0]

    @property
    def outputs(self) -> np.ndarray:
        return self.u


class SpikingNet:
    """input -> affine -> PLIF hidden -> per-step dropout -> affine -> readout."""

    def __init__(self, store: ParamStore, readout_leak: str = "learned"):
        if readout_leak not in ("learned", "fixed1"):
            raise ValueError(f"unknown readout_leak {readout_leak!r}")
        self.store = store
        self.readout_leak = readout_leak

    @classmethod
    def build(
        cls,
        n_in: int,
        n_hidden: int,
        n_out: int,
        gen: np.random.Generator,
        readout_leak: str = "learned",
    ) -> "SpikingNet":
        store = ParamStore()
        store.add(PARAM_HIDDEN_W, init_dense(gen, n_in, n_hidden))
        store.add(PARAM_HIDDEN_B, np.zeros((1, n_hidden)))
        store.add(PARAM_HIDDEN_TAU, np.zeros((1, 1)))  # tau = 2 at init
        store.add(PARAM_READOUT_W, init_dense(gen, n_hidden, n_out))
        store.add(PARAM_READOUT_B, np.zeros((1, n_out)))
        store.add(PARAM_READOUT_LEAK, np.zeros((1, 1)))  # kappa = 0.5 at init
        return cls(store, readout_leak=readout_leak)

    @property
    def n_in(self) -> int:
        return self.store.value(PARAM_HIDDEN_W).shape[0]

    @property
    def n_hidden(self) -> int:
        return self.store.value(PARAM_HIDDEN_W).shape[1]

    @property
    def n_out(self) -> int:
        return self.store.value(PARAM_READOUT_W).shape[1]

    def hidden_layer(self) -> PLIFLayer:
        s = self.store
        return PLIFLayer(
            s.value(PARAM_HIDDEN_W), s.value(PARAM_HIDDEN_B), s.value(PARAM_HIDDEN_TAU)
        )

    def readout_layer(self) -> ReadoutLayer:
        s = self.store
        fixed = 1.0 if self.readout_leak == "fixed1" else None
        return ReadoutLayer(
            s.value(PARAM_READOUT_W),
            s.value(PARAM_READOUT_B),
            s.value(PARAM_READOUT_LEAK),
            fixed_leak=fixed,
        )

    def forward(
        self,
        x: np.ndarray,
        n_steps: int,
        plan: Optional[DropoutPlan] = None,
        mask_gen: Optional[np.random.Generator] = None,
        mode: str = "spike",
    ) -> Trace:
        """Simulate n_steps from a zeroed state; x is a (B, Q) batch."""
        if n_steps < 1:
            raise ValueError("need at least one time step")
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"input shape {x.shape} does not match fan-in {self.n_in}")
        plan = plan or DropoutPlan(0.0)
        n_batch = x.shape[0]
        hidden = self.hidden_layer()
        readout = self.readout_layer()
        hidden.reset(n_batch)
        readout.reset(n_batch)

        current = x @ hidden.W + hidden.b
        masks = plan.materialize(n_steps, n_batch, self.n_hidden, mask_gen)
        h = np.empty((n_steps, n_batch, self.n_hidden))
        s = np.empty_like(h)
        v = np.empty_like(h)
        u = np.empty((n_steps, n_batch, self.n_out))
        for t in range(n_steps):
            h[t], s[t], _ = plif_update(
                hidden.V, current, hidden.inv_tau, hidden.threshold, mode
            )
            v[t] = h[t] * (1.0 - s[t])
            hidden.V = v[t]
            u[t] = readout.step(s[t] * masks[t])
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(u))):
            raise NumericError("non-finite membrane potential during forward pass")
        return Trace(
            x=x, current=current, h=h, s=s, v=v, masks=masks, u=u, mode=mode,
            rate=plan.rate,
        )

    def backward(self, trace: Trace, out_grads: np.ndarray) -> None:
        """Accumulate BPTT gradients of sum_t <out_grads[t], U_t> into the store.

        The spike nonlinearity always backpropagates through the surrogate
        derivative; the reset path V_t = H_t*(1-S_t) uses that same derivative
        for S_t, so "surrogate" traces get the exact gradient of their forward.
        """
        store = self.store
        w2 = store.value(PARAM_READOUT_W)
        inv_tau = float(sigmoid(store.value(PARAM_HIDDEN_TAU)[0, 0]))
        leak_raw = float(store.value(PARAM_READOUT_LEAK)[0, 0])
        kappa = 1.0 if self.readout_leak == "fixed1" else float(sigmoid(leak_raw))

        out_grads = np.asarray(out_grads, dtype=np.float64)
        if out_grads.shape != trace.u.shape:
            raise ShapeError(
                f"output grads shape {out_grads.shape} != trace outputs {trace.u.shape}"
            )
        if trace.h.shape[2] != self.n_hidden or trace.x.shape[1] != self.n_in:
            raise ShapeError("trace does not belong to this network")

        n_steps = trace.n_steps
        d_w2 = np.zeros_like(w2)
        d_b2 = np.zeros((1, self.n_out))
        d_kappa = 0.0
        d_inv_tau = 0.0
        d_current = np.zeros_like(trace.current)
        d_u_next = np.zeros((trace.x.shape[0], self.n_out))
        d_v_next = np.zeros((trace.x.shape[0], self.n_hidden))
        for t in range(n_steps - 1, -1, -1):
            d_u = out_grads[t] + kappa * d_u_next
            u_prev = trace.u[t - 1] if t > 0 else 0.0
            d_kappa += float(np.sum(d_u * u_prev))
            dropped = trace.s[t] * trace.masks[t]
            d_w2 += dropped.T @ d_u
            d_b2 += d_u.sum(axis=0, keepdims=True)
            d_s = (d_u @ w2.T) * trace.masks[t]
            d_v = d_v_next
            d_h = d_v * (1.0 - trace.s[t])
            d_s = d_s - d_v * trace.h[t]
            d_h = d_h + d_s * surrogate_grad(trace.h[t] - THRESHOLD)
            v_prev = trace.v[t - 1] if t > 0 else 0.0
            d_inv_tau += float(np.sum(d_h * (trace.current - v_prev)))
            d_current += d_h * inv_tau
            d_v_next = d_h * (1.0 - inv_tau)
            d_u_next = d_u

        store.grad(PARAM_READOUT_W)[...] += d_w2
        store.grad(PARAM_READOUT_B)[...] += d_b2
        if self.readout_leak == "learned":
            store.grad(PARAM_READOUT_LEAK)[...] += d_kappa * kappa * (1.0 - kappa)
        store.grad(PARAM_HIDDEN_TAU)[...] += d_inv_tau * inv_tau * (1.0 - inv_tau)
        store.grad(PARAM_HIDDEN_W)[...] += trace.x.T @ d_current
        store.grad(PARAM_HIDDEN_B)[...] += d_current.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, store: ParamStore, config_hash: str) -> None:
    """Write parameters as a flat name -> (shape, row-major hex) listing.

    Values round-trip bit-exactly (raw little-endian float64 bytes).
    """
    lines = ["# spikereg checkpoint v1", f"config_hash {config_hash}"]
    for name in store.names():
        value = store.value(name)
        payload = binascii.hexlify(
            np.ascontiguousarray(value, dtype="<f8").tobytes()
        ).decode("ascii")
        lines.append(f"param {name} {value.shape[0]} {value.shape[1]} {payload}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[ParamStore, str]:
    store = ParamStore()
    config_hash = ""
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            kind, rest = line.split(" ", 1)
            if kind == "config_hash":
                config_hash = rest
            elif kind == "param":
                name, rows, cols, payload = rest.split(" ")
                raw = binascii.unhexlify(payload)
                value = np.frombuffer(raw, dtype="<f8").reshape(int(rows), int(cols))
                store.add(name, value.copy())
            else:
                raise ValueError(f"unknown checkpoint record {kind!r}")
    return store, config_hash
