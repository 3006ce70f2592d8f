"""Time-stepping strategies around the accelerated interface iteration.

Sequential: each step is accelerated on its own.  The first step fits ``P``
from ``n_G + 1`` sweeps; with a fixed step size later steps reuse it after a
single sweep.

Pipelined: ``m`` steps are iterated together.  Step ``j`` reads the
differential values of step ``j - 1`` from the same iterate, so the window
map is affine in the stacked vector of interface values and differential
values of every step, and is block lower bidiagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aitken import InterfaceOperator, accelerate, numeric_p_from_iterates
from .dae import CombinedSystem, Trajectory, check_consistent, time_grid
from .errors import DimensionMismatch
from .partition import OverlapPartition
from .ras import RasSplitting


@dataclass
class StepResult:
    z: np.ndarray
    sweeps: int
    operator: InterfaceOperator | None
    rebuilt: bool
    iterates: list = field(default_factory=list)


class SequentialAccelerator:
    """Per-step Aitken acceleration with optional reuse of ``P``.

    ``reuse=False`` fits a fresh operator on every step.  In reuse mode the
    cached operator is refitted whenever the first increment of a step leaves
    the subspace it was fitted on.

    The finishing local solve is itself one more sweep ``G(z_G)``, so it
    shows for free whether the accelerated point is stationary.  If it moves
    by more than ``stat_tol * max(1, |z_G|)`` (an ill-conditioned fit, or a
    reused operator that has drifted) the point is corrected with the same
    operator, ``z_G <- accelerate(P, G(z_G), z_G)``, up to ``max_refine``
    times.  A reused operator that still fails is refitted.
    """

    def __init__(self, split: RasSplitting, reuse: bool = True, span_tol: float = 1e-8,
                 stat_tol: float = 1e-12, max_refine: int = 4):
        self.split = split
        self.reuse = reuse
        self.span_tol = span_tol
        self.stat_tol = stat_tol
        self.max_refine = max_refine
        self.op: InterfaceOperator | None = None
        self.rebuilds = 0

    def _finish(self, op, z_g, rhs):
        """Local solves from ``z_g`` with residual correction.

        Returns the full state, the number of extra sweeps and whether the
        final point passed the stationarity test.
        """
        split = self.split
        for extra in range(self.max_refine + 1):
            z = split.full_from_interface(z_g, rhs)
            g = split.imap.restrict(z)
            if np.abs(g - z_g).max() <= self.stat_tol * max(1.0, np.abs(z_g).max()):
                return z, extra, True
            if extra < self.max_refine:
                z_g = accelerate(op, g, z_g)
        return z, self.max_refine, False

    def fit_step(self, rhs, z_start) -> StepResult:
        split = self.split
        iterates = [split.imap.restrict(z_start)]
        for _ in range(split.n_gamma + 1):
            iterates.append(split.sweep_interface(iterates[-1], rhs))
        op = numeric_p_from_iterates(iterates)
        z_g = accelerate(op, iterates[-1], iterates[-2])
        z, extra, _ = self._finish(op, z_g, rhs)
        return StepResult(z, len(iterates) - 1 + extra, op, True, iterates)

    def step(self, z_prev, t_next: float, z_start=None) -> StepResult:
        split = self.split
        rhs = split.rhs(z_prev, t_next)
        start = z_prev if z_start is None else z_start
        if split.n_gamma == 0:
            return StepResult(split.full_from_interface(np.zeros(0), rhs), 1, None, False)
        if self.reuse and self.op is not None:
            z0 = split.imap.restrict(start)
            z1 = split.sweep_interface(z0, rhs)
            if self.op.in_span(z1 - z0, self.span_tol):
                z_g = accelerate(self.op, z1, z0)
                z, extra, ok = self._finish(self.op, z_g, rhs)
                if ok:
                    return StepResult(z, 1 + extra, self.op, False, [z0, z1])
            self.rebuilds += 1
        res = self.fit_step(rhs, start)
        self.op = res.operator
        return res


def solve_step_accelerated(split: RasSplitting, z_prev, t_next: float, mode: str = "first-step",
                           op: InterfaceOperator | None = None, z_start=None) -> StepResult:
    """One accelerated step.  ``mode`` is ``first-step`` or ``reuse-P``."""
    acc = SequentialAccelerator(split, reuse=(mode == "reuse-P"))
    if mode == "reuse-P":
        if op is None:
            raise ValueError("reuse-P needs an operator")
        acc.op = op
    elif mode != "first-step":
        raise ValueError(f"unknown mode {mode!r}")
    return acc.step(z_prev, t_next, z_start)


def solve_accelerated(sys: CombinedSystem, part: OverlapPartition, dt: float, t_end: float,
                      reuse: bool = True, **acc_options) -> Trajectory:
    """Sequential strategy over a fixed-step grid.

    ``acc_options`` go to :class:`SequentialAccelerator`.
    """
    split = RasSplitting(sys, part, dt)
    acc = SequentialAccelerator(split, reuse=reuse, **acc_options)
    times = time_grid(dt, t_end)
    z = sys.z0.copy()
    check_consistent(sys, z, times[0])
    states = np.empty((len(times), sys.n))
    states[0] = z
    sweeps, rhos = [], []
    for j in range(1, len(times)):
        res = acc.step(z, times[j])
        z = res.z
        states[j] = z
        sweeps.append(res.sweeps)
        rhos.append(res.operator.spectral_radius if res.operator is not None else 0.0)
    meta = {"sweeps": sweeps, "rebuilds": acc.rebuilds, "rho": rhos,
            "operator": acc.op}
    return Trajectory(dt, times, states, sys.names, meta)


# pipelined strategy

@dataclass(frozen=True)
class PipelineOperator:
    """Window map ``Y^{k+1} = PP Y^k + C`` over ``m`` steps.

    Each step block of ``Y`` holds the interface values followed by the
    differential values of that step.
    """

    m: int
    block: int
    p_block: np.ndarray
    c_block: np.ndarray
    diag: np.ndarray
    sub: np.ndarray

    def apply(self, y) -> np.ndarray:
        return self.p_block @ y + self.c_block

    def as_operator(self) -> InterfaceOperator:
        return InterfaceOperator(self.p_block, "pipeline")


def build_pipeline(diag: np.ndarray, sub: np.ndarray, m: int, c_steps) -> PipelineOperator:
    """Assemble the block lower bidiagonal window operator.

    ``diag`` maps a step's own block into its next iterate, ``sub`` maps the
    previous step's block into it, ``c_steps`` are the per-step affine terms
    (the first already containing the contribution of the fixed state before
    the window).
    """
    if m < 1:
        raise ValueError("window must hold at least one step")
    nb = diag.shape[0]
    if diag.shape != (nb, nb) or sub.shape != (nb, nb) or len(c_steps) != m:
        raise DimensionMismatch("pipeline blocks have inconsistent shapes")
    big = np.zeros((m * nb, m * nb))
    for j in range(m):
        big[j * nb:(j + 1) * nb, j * nb:(j + 1) * nb] = diag
        if j:
            big[j * nb:(j + 1) * nb, (j - 1) * nb:j * nb] = sub
    c = np.concatenate([np.asarray(v, dtype=float) for v in c_steps])
    if c.size != m * nb:
        raise DimensionMismatch("pipeline affine term has the wrong size")
    return PipelineOperator(m, nb, big, c, diag, sub)


class PipelinedSolver:
    """Window iteration over ``m`` steps and its acceleration."""

    def __init__(self, split: RasSplitting, m: int):
        self.split = split
        self.m = m
        self.n1 = split.sys.n1
        self.ng = split.n_gamma
        self.nb = self.ng + self.n1
        self._probe_blocks()

    def _step_map(self, y, x_prev, rhs_forcing):
        """One sweep of one step: ``(z_G, x) -> (z_G', x')`` given ``x_prev``."""
        split = self.split
        rhs = rhs_forcing.copy()
        rhs[: self.n1] += x_prev
        z = split.full_from_interface(y[: self.ng], rhs)
        return np.concatenate([split.imap.restrict(z), z[: self.n1]])

    def _probe_blocks(self):
        # homogeneous map: forcing zero, probe with unit vectors
        zero_f = np.zeros(self.split.sys.n)
        zx = np.zeros(self.n1)
        eye = np.eye(self.nb)
        self.diag = np.column_stack([self._step_map(e, zx, zero_f) for e in eye])
        self.sub = np.column_stack([self._step_map(np.zeros(self.nb), e[self.ng:], zero_f) for e in eye])

    def forcing_part(self, t_next: float) -> np.ndarray:
        """Step right-hand side without the previous differential state."""
        return self.split.rhs(np.zeros(self.split.sys.n), t_next)

    def window_sweep(self, y, x_before, times) -> np.ndarray:
        out = np.empty_like(y)
        for j, t in enumerate(times):
            blk = slice(j * self.nb, (j + 1) * self.nb)
            x_prev = x_before if j == 0 else y[(j - 1) * self.nb + self.ng: j * self.nb]
            out[blk] = self._step_map(y[blk], x_prev, self.forcing_part(t))
        return out

    def operator(self, x_before, times) -> PipelineOperator:
        c = []
        zero = np.zeros(self.nb)
        for j, t in enumerate(times):
            c.append(self._step_map(zero, x_before if j == 0 else np.zeros(self.n1), self.forcing_part(t)))
        return build_pipeline(self.diag, self.sub, len(times), c)

    def solve_window(self, z_prev, times):
        """Accelerate one window; returns the accepted full states."""
        x_before = z_prev[: self.n1]
        y0 = np.tile(np.concatenate([self.split.imap.restrict(z_prev), x_before]), len(times))
        y1 = self.window_sweep(y0, x_before, times)
        pp = self.operator(x_before, times)
        y_inf = accelerate(pp.as_operator(), y1, y0)
        states = []
        z = z_prev
        for j, t in enumerate(times):
            rhs = self.split.rhs(z, t)
            z = self.split.full_from_interface(y_inf[j * self.nb: j * self.nb + self.ng], rhs)
            states.append(z)
        return states, pp


def solve_pipelined(sys: CombinedSystem, part: OverlapPartition, dt: float, t_end: float, m: int) -> Trajectory:
    split = RasSplitting(sys, part, dt)
    solver = PipelinedSolver(split, m)
    times = time_grid(dt, t_end)
    z = sys.z0.copy()
    check_consistent(sys, z, times[0])
    states = [z]
    j = 1
    while j < len(times):
        window = times[j: j + m]
        out, _ = solver.solve_window(z, window)
        states.extend(out)
        z = out[-1]
        j += len(window)
    return Trajectory(dt, times, np.array(states), sys.names, {"m": m})
