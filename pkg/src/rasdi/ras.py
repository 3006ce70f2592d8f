"""Discrete dynamic iteration with a restricted additive Schwarz splitting.

Each partition solves the backward-Euler step on its extended set with the
values of its external set frozen at the previous iterate, and keeps only the
rows it owns.  The interface unknowns (the concatenated external sets) carry
the whole iteration: one sweep maps ``z_G^k`` to ``z_G^{k+1}`` affinely.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .dae import CombinedSystem, Trajectory, check_consistent, lu_factor_checked, lu_solve, time_grid
from .errors import ConvergenceError, DimensionMismatch, SingularLocalMatrix
from .partition import InterfaceMap, OverlapPartition, interface_map

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalSystem:
    """Step system of one partition restricted to its extended set."""

    part_id: int
    idx: np.ndarray
    ext: np.ndarray
    owned: np.ndarray
    a_tilde: np.ndarray
    e_tilde: np.ndarray
    factors: object = field(repr=False, compare=False)

    def solve(self, rhs_local, z_ext) -> np.ndarray:
        return lu_solve(self.factors, rhs_local - self.e_tilde @ z_ext)


def build_local(sys: CombinedSystem, part: OverlapPartition, dt: float, i: int,
                step_mat: np.ndarray | None = None) -> LocalSystem:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if sys.n != part.n:
        raise DimensionMismatch("partition and system sizes differ")
    s = sys.step_matrix(dt) if step_mat is None else step_mat
    idx, ext = part.extended[i], part.external[i]
    a_loc = s[np.ix_(idx, idx)]
    e_loc = s[np.ix_(idx, ext)]
    factors = lu_factor_checked(a_loc, SingularLocalMatrix, f"local matrix of partition {i}")
    return LocalSystem(i, idx, ext, part.owned_mask(i), a_loc, e_loc, factors)


class RasSplitting:
    """All local systems of one (system, partition, dt) triple.

    Sweeps are matrix-free.  The dense ``richardson_matrix`` and
    ``interface_matrix`` exist for analysis and tests.
    """

    def __init__(self, sys: CombinedSystem, part: OverlapPartition, dt: float):
        self.sys = sys
        self.part = part
        self.dt = dt
        self.step_mat = sys.step_matrix(dt)
        self.locals = [build_local(sys, part, dt, i, self.step_mat) for i in range(part.n_parts)]
        self.imap: InterfaceMap = interface_map(part) if part.n_parts > 1 else \
            InterfaceMap(np.zeros(0, dtype=int), np.zeros(0, dtype=int), np.zeros(2, dtype=int))

    @property
    def n_gamma(self) -> int:
        return self.imap.n_gamma

    def rhs(self, z_prev, t_next: float) -> np.ndarray:
        return self.sys.step_rhs(self.dt, z_prev, t_next)

    def full_from_interface(self, z_gamma, rhs) -> np.ndarray:
        """Local solves given interface values; returns the assembled global vector."""
        out = np.empty(self.sys.n)
        for i, loc in enumerate(self.locals):
            z_ext = z_gamma[self.imap.slots(i)] if self.part.n_parts > 1 else np.zeros(0)
            sol = loc.solve(rhs[loc.idx], z_ext)
            out[loc.idx[loc.owned]] = sol[loc.owned]
        return out

    def sweep(self, z, rhs) -> np.ndarray:
        return self.full_from_interface(self.imap.restrict(z), rhs)

    def sweep_interface(self, z_gamma, rhs) -> np.ndarray:
        return self.imap.restrict(self.full_from_interface(z_gamma, rhs))

    def m_ras_inv(self) -> np.ndarray:
        n = self.sys.n
        m = np.zeros((n, n))
        for loc in self.locals:
            inv = lu_solve(loc.factors, np.eye(loc.idx.size))
            own = loc.idx[loc.owned]
            m[np.ix_(own, loc.idx)] += inv[loc.owned]
        return m

    def richardson_matrix(self) -> np.ndarray:
        """``I - M^{-1} A_step`` with ``M^{-1} = sum_i Rt_i^T A_i^{-1} R_i``."""
        return np.eye(self.sys.n) - self.m_ras_inv() @ self.step_mat

    def richardson_step(self, z, rhs) -> np.ndarray:
        return z + self.m_ras_inv() @ (rhs - self.step_mat @ z)

    def interface_matrix(self) -> np.ndarray:
        g = self.imap.gamma
        return self.richardson_matrix()[np.ix_(g, g)]

    def interface_affine_term(self, rhs) -> np.ndarray:
        return self.imap.restrict(self.m_ras_inv() @ rhs)


def di_sweep(split: RasSplitting, z, b_step) -> np.ndarray:
    """One RAS sweep ``z^{(k)} -> z^{(k+1)}`` for the step right-hand side ``b_step``."""
    return split.sweep(np.asarray(z, dtype=float), b_step)


def richardson_matrix(sys: CombinedSystem, part: OverlapPartition, dt: float) -> np.ndarray:
    return RasSplitting(sys, part, dt).richardson_matrix()


def interface_iterate(p, z_gamma, c) -> np.ndarray:
    """Affine interface update ``P z + c``; ``p`` is a matrix or an InterfaceOperator."""
    mat = getattr(p, "p_mat", p)
    mat = np.asarray(mat)
    z_gamma, c = np.asarray(z_gamma), np.asarray(c)
    if mat.shape != (z_gamma.size, z_gamma.size) or c.shape != z_gamma.shape:
        raise DimensionMismatch(f"P {mat.shape} incompatible with vectors of size {z_gamma.size}, {c.size}")
    return mat @ z_gamma + c


@dataclass
class ConvergenceLog:
    rows: list = field(default_factory=list)

    def add(self, step: int, errs) -> None:
        """Record the increments of one step.  The ratio compares iterates two
        sweeps apart, which is the meaningful rate for two-colour splittings."""
        for k, err in enumerate(errs, start=1):
            ratio = float("nan")
            if k > 2 and errs[k - 3] > 0:
                ratio = float(np.sqrt(err / errs[k - 3]))
            self.rows.append((step, k, float(err), ratio))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "iter", "err_inf", "err_ratio"])
            for step, k, err, ratio in self.rows:
                w.writerow([step, k, repr(err), repr(ratio)])


def two_sweep_ratio(errs) -> float:
    """Asymptotic per-sweep growth factor from the last increments."""
    errs = np.asarray(errs)
    return float(np.sqrt(errs[-1] / errs[-3]))


def di_iterate_step(split: RasSplitting, z_prev, t_next: float, rtol: float = 1e-10,
                    atol: float = 1e-12, max_iter: int = 200, z_start=None):
    """Plain DI for one step.  Returns ``(z, increments, converged)``."""
    rhs = split.rhs(z_prev, t_next)
    z = np.array(z_prev if z_start is None else z_start, dtype=float)
    errs = []
    for _ in range(max_iter):
        z_new = split.sweep(z, rhs)
        err = float(np.abs(z_new - z).max())
        errs.append(err)
        z = z_new
        if err <= rtol * np.abs(z).max() + atol:
            return z, errs, True
        if not np.isfinite(err):
            break
    return z, errs, False


def di_solve(sys: CombinedSystem, part: OverlapPartition, dt: float, t_end: float,
             rtol: float = 1e-10, atol: float = 1e-12, max_iter: int = 200,
             on_fail: str = "raise", conv_log: ConvergenceLog | None = None) -> Trajectory:
    """Plain dynamic iteration, warm-started from the previous step.

    ``on_fail="accept"`` keeps the last iterate of a non-converged step instead
    of raising ``ConvergenceError``.
    """
    split = RasSplitting(sys, part, dt)
    times = time_grid(dt, t_end)
    z = sys.z0.copy()
    check_consistent(sys, z, times[0])
    states = np.empty((len(times), sys.n))
    states[0] = z
    failed = []
    for j in range(1, len(times)):
        z, errs, ok = di_iterate_step(split, z, times[j], rtol, atol, max_iter)
        if conv_log is not None:
            conv_log.add(j, errs)
        if not ok:
            if on_fail == "raise":
                raise ConvergenceError(f"no convergence at step {j} after {len(errs)} sweeps "
                                       f"(last increment {errs[-1]:.3e})")
            failed.append(j)
        states[j] = z
    if failed:
        log.warning("DI did not converge on %d steps", len(failed))
    return Trajectory(dt, times, states, sys.names, {"failed_steps": failed})
