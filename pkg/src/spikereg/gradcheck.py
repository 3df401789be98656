"""Finite-difference verification of the hand-written BPTT gradients.

Runs a tiny network (3 hidden neurons, 3 time steps) in surrogate mode with
frozen dropout masks, where the forward pass is fully differentiable, and
compares every parameter's BPTT gradient against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import GaussianHead, RacHead, discretize, make_bins
from .numcore import Rng, finite_diff_grad
from .snn import DropoutPlan, SpikingNet

N_HIDDEN = 3
N_STEPS = 3
N_BATCH = 4
N_IN = 2
N_BINS = 5
DROPOUT_RATE = 0.1


@dataclass(frozen=True)
class SlotCheck:
    head: str
    slot: str
    max_rel_err: float
    passed: bool


@dataclass(frozen=True)
class GradcheckReport:
    checks: list[SlotCheck]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_rel_err(self) -> float:
        return max(c.max_rel_err for c in self.checks)

    def lines(self) -> list[str]:
        out = []
        for c in self.checks:
            status = "ok" if c.passed else "FAIL"
            out.append(f"{status:4s} {c.head:8s} {c.slot:18s} rel_err={c.max_rel_err:.3e}")
        out.append(
            f"{'PASS' if self.passed else 'FAIL'}: max rel err {self.max_rel_err:.3e} "
            f"(tolerance {self.tolerance:.0e})"
        )
        return out


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
    return float(np.max(np.abs(a - b) / denom))


def _check_head(head_name: str, seed: int, h: float, tol: float, corrupt_slot):
    rng = Rng(seed)
    gen = rng.substream("gradcheck-data")
    x = gen.uniform(-1.5, 1.5, size=(N_BATCH, N_IN))
    y = gen.uniform(-1.0, 1.0, size=N_BATCH)
    if head_name == "gaussian":
        head = GaussianHead()
        targets = y
        n_out = head.n_out
    else:
        bins = make_bins(np.array([-1.2, -0.3, 0.4, 1.2]), N_BINS)
        head = RacHead(bins, q=1.0, tau=1.0)
        targets = discretize(y, bins).astype(np.float64)
        n_out = head.n_out

    net = SpikingNet.build(N_IN, N_HIDDEN, n_out, rng.substream("weights"))
    # nudge biases off zero so every slot has a nontrivial gradient
    net.store.value("hidden.b")[...] = gen.uniform(-0.3, 0.3, size=(1, N_HIDDEN))
    net.store.value("readout.b")[...] = gen.uniform(-0.3, 0.3, size=(1, n_out))
    plan = DropoutPlan(
        DROPOUT_RATE,
        masks=DropoutPlan(DROPOUT_RATE).materialize(
            N_STEPS, N_BATCH, N_HIDDEN, rng.substream("masks")
        ),
    )

    def loss_fn(store) -> float:
        trace = SpikingNet(store).forward(x, N_STEPS, plan, mode="surrogate")
        loss, _ = head.loss_and_step_grads(trace.outputs, targets)
        return loss

    trace = net.forward(x, N_STEPS, plan, mode="surrogate")
    _, out_grads = head.loss_and_step_grads(trace.outputs, targets)
    net.store.zero_grads()
    net.backward(trace, out_grads)
    bptt = {name: net.store.grad(name).copy() for name in net.store.names()}
    numeric = finite_diff_grad(loss_fn, net.store, h=h)

    checks = []
    for name in net.store.names():
        analytic = bptt[name]
        if corrupt_slot is not None and name == corrupt_slot:
            analytic = analytic + 1e-3
        err = _rel_err(analytic, numeric[name])
        checks.append(SlotCheck(head=head_name, slot=name, max_rel_err=err,
                                passed=err <= tol))
    return checks


def run_gradcheck(
    tol: float = 1e-5,
    h: float = 1e-5,
    seed: int = 7,
    corrupt_slot: str | None = None,
) -> GradcheckReport:
    """Check both heads; corrupt_slot deliberately breaks one gradient
    (test hook for the failure path)."""
    checks = []
    for head_name in ("gaussian", "rac"):
        checks.extend(_check_head(head_name, seed, h, tol, corrupt_slot))
    return GradcheckReport(checks=checks, tolerance=tol)
