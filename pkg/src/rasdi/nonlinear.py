"""Weakly nonlinear circuits: coefficients frozen at the last accepted state.

Within a step the system is linear, so the interface iteration stays affine
and Aitken acceleration remains exact.  The operator changes from step to
step and is refitted every time.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .aitken import InterfaceOperator
from .circuits import CircuitDae
from .dae import CombinedSystem, Trajectory, backward_euler_step, time_grid
from .errors import CoefficientBlowup, RasdiError
from .partition import OverlapPartition
from .ras import RasSplitting
from .strategies import SequentialAccelerator

BLOWUP_EPS = 1e-12


@dataclass(frozen=True)
class NonlinearElement:
    """Conductance ``1 / (g0 + alpha * i)`` driven by the current ``current``."""

    element: str
    current: str
    g0: float
    alpha: float
    kind: str = "conductance-of-current"

    def value(self, i: float) -> float:
        denom = self.g0 + self.alpha * i
        if denom <= BLOWUP_EPS:
            raise CoefficientBlowup(f"{self.element}: g0 + alpha*i = {denom:.3e} at i = {i:.3e}")
        return 1.0 / denom


@dataclass(frozen=True)
class SteppedOperator:
    step: int
    p_n: InterfaceOperator
    rho_n: float


def elements_from_meta(circ: CircuitDae) -> list:
    spec = circ.meta.get("nonlinear")
    if not spec:
        return []
    return [NonlinearElement(spec["element"], spec["current"], spec["g0"], spec["alpha"])]


def frozen_values(circ: CircuitDae, elements, state) -> dict:
    return {el.element: el.value(float(state[circ.index(el.current)])) for el in elements}


def linearize_step(circ: CircuitDae, elements, prev_state) -> CombinedSystem:
    """Linear system with every nonlinear coefficient evaluated at ``prev_state``."""
    return circ.with_values(**frozen_values(circ, elements, prev_state)).system()


def initial_state(circ: CircuitDae, elements) -> np.ndarray:
    """Consistent start: the coefficients are fixed by iterating the
    algebraic initialization until the controlling currents settle."""
    z = circ.system().z0
    for _ in range(50):
        z_new = linearize_step(circ, elements, z).z0
        if np.allclose(z_new, z, rtol=0.0, atol=1e-14):
            return z_new
        z = z_new
    return z


def nonlinear_oracle(circ: CircuitDae, dt: float, t_end: float, elements=None) -> Trajectory:
    """Monolithic backward Euler under the same freezing rule."""
    elements = elements_from_meta(circ) if elements is None else elements
    times = time_grid(dt, t_end)
    z = initial_state(circ, elements)
    states = [z]
    for j in range(1, len(times)):
        sys = linearize_step(circ, elements, z)
        z = backward_euler_step(sys, dt, z, times[j])
        states.append(z)
    return Trajectory(dt, times, np.array(states), circ.names)


def solve_nonlinear_accelerated(circ: CircuitDae, part: OverlapPartition, dt: float, t_end: float,
                                elements=None, reuse: bool = False):
    """Accelerated DI with a per-step operator.

    Returns the trajectory and one ``SteppedOperator`` per step.  With
    ``reuse=True`` the fitted operator is kept while the frozen coefficients do
    not change, which only happens for degenerate nonlinearities.
    """
    elements = elements_from_meta(circ) if elements is None else elements
    times = time_grid(dt, t_end)
    z = initial_state(circ, elements)
    states = [z]
    ops = []
    key, acc = None, None
    for j in range(1, len(times)):
        try:
            vals = frozen_values(circ, elements, z)
            new_key = tuple(sorted(vals.items()))
            if acc is None or not reuse or new_key != key:
                sys = circ.with_values(**vals).system()
                acc = SequentialAccelerator(RasSplitting(sys, part, dt), reuse=reuse)
                key = new_key
            res = acc.step(z, times[j])
        except RasdiError as exc:
            raise type(exc)(f"step {j}: {exc}") from exc
        z = res.z
        states.append(z)
        op = res.operator
        ops.append(SteppedOperator(j, op, op.spectral_radius))
    return Trajectory(dt, times, np.array(states), circ.names), ops


def spectral_log_csv(ops, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "rho", "lambda_re", "lambda_im"])
        for so in ops:
            lam = so.p_n.dominant_eigenvalue()
            w.writerow([so.step, repr(so.rho_n), repr(lam.real), repr(lam.imag)])
