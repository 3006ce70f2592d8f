"""Semi-explicit linear DAE systems and the monolithic backward-Euler solver.

The systems handled here have the form::

    x' + A x + B y = b1(t),   x(0) = x0
         C x + D y = b2(t)

with ``D`` nonsingular.  Stacking ``z = [x; y]`` gives ``Id z' + AA z = b``
where ``Id`` keeps only the differential rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    DimensionMismatch,
    InconsistentInitialState,
    SingularD,
    SingularMatrixError,
    SingularStepMatrix,
)

PIVOT_RTOL = 1e-12

Forcing = Callable[[float], tuple]


def lu_factor_checked(mat, error=SingularMatrixError, what="matrix"):
    """LU-factorize ``mat`` with partial pivoting.

    Raises ``error`` when a pivot falls below ``PIVOT_RTOL * ||mat||_inf``.
    """
    mat = np.asarray(mat)
    if mat.shape[0] == 0:
        return None
    lu, piv = sla.lu_factor(mat, check_finite=True)
    scale = np.abs(mat).sum(axis=1).max()
    smallest = np.abs(np.diag(lu)).min()
    if scale == 0.0 or smallest < PIVOT_RTOL * scale:
        raise error(f"{what} is numerically singular (pivot {smallest:.3e}, norm {scale:.3e})")
    return lu, piv


def lu_solve(factors, rhs):
    if factors is None:
        return np.zeros_like(rhs)
    return sla.lu_solve(factors, rhs, check_finite=False)


def _as_matrix(m, rows, cols, name):
    m = np.atleast_2d(np.asarray(m, dtype=float)) if np.size(m) else np.zeros((rows, cols))
    if m.shape != (rows, cols):
        raise DimensionMismatch(f"{name} has shape {m.shape}, expected {(rows, cols)}")
    return m


@dataclass(frozen=True)
class LinearDae:
    """``x' + A x + B y = b1(t)``, ``C x + D y = b2(t)``.

    ``forcing(t)`` returns the pair ``(b1, b2)``.  When ``names`` is given it
    labels the unknowns in ``[x; y]`` order.  ``check_d=False`` admits a
    singular ``D`` (higher-index systems such as inductor cutsets), which
    backward Euler still handles as long as the step matrix is regular.
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    d_mat: np.ndarray
    forcing: Forcing
    x0: np.ndarray
    names: tuple | None = None
    check_d: bool = True

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float)).reshape(-1)
        n1 = x0.size
        d = np.atleast_2d(np.asarray(self.d_mat, dtype=float))
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DimensionMismatch(f"D must be square, got shape {d.shape}")
        n2 = d.shape[0]
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "d_mat", d)
        object.__setattr__(self, "a_mat", _as_matrix(self.a_mat, n1, n1, "A"))
        object.__setattr__(self, "b_mat", _as_matrix(self.b_mat, n1, n2, "B"))
        object.__setattr__(self, "c_mat", _as_matrix(self.c_mat, n2, n1, "C"))
        if self.names is not None:
            if len(self.names) != n1 + n2:
                raise DimensionMismatch("names must label every unknown")
            object.__setattr__(self, "names", tuple(self.names))
        if n2 and self.check_d:
            lu_factor_checked(d, SingularD, "D")

    @property
    def n1(self) -> int:
        return self.x0.size

    @property
    def n2(self) -> int:
        return self.d_mat.shape[0]

    @property
    def n(self) -> int:
        return self.n1 + self.n2


@dataclass(frozen=True)
class CombinedSystem:
    """``Id z' + big_a z = b(t)`` with ``z = [x; y]``."""

    big_a: np.ndarray
    diff_mask: np.ndarray
    forcing: Callable[[float], np.ndarray]
    z0: np.ndarray
    names: tuple | None = None

    def __post_init__(self):
        a = np.asarray(self.big_a, dtype=float)
        mask = np.asarray(self.diff_mask, dtype=bool)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or mask.shape != (a.shape[0],):
            raise DimensionMismatch("big_a must be n x n and diff_mask of length n")
        n1 = int(mask.sum())
        if not mask[:n1].all():
            raise DimensionMismatch("differential unknowns must precede algebraic ones")
        object.__setattr__(self, "big_a", a)
        object.__setattr__(self, "diff_mask", mask)
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float).copy())

    @property
    def n(self) -> int:
        return self.big_a.shape[0]

    @property
    def n1(self) -> int:
        return int(self.diff_mask.sum())

    def step_matrix(self, dt: float) -> np.ndarray:
        """Backward-Euler step matrix with unscaled algebraic rows.

        Differential rows are ``I + dt*[A B]``, algebraic rows ``[C D]``.
        """
        mask = self.diff_mask
        scaled = np.where(mask[:, None], dt * self.big_a, self.big_a)
        scaled[mask, mask] += 1.0
        return scaled

    def step_rhs(self, dt: float, z_prev, t_next: float) -> np.ndarray:
        """Right-hand side matching :meth:`step_matrix`."""
        b = np.asarray(self.forcing(t_next), dtype=float)
        return np.where(self.diff_mask, z_prev + dt * b, b)

    def index(self, name: str) -> int:
        if self.names is None:
            raise KeyError(name)
        return self.names.index(name)


def combine(dae: LinearDae) -> CombinedSystem:
    big_a = np.block([[dae.a_mat, dae.b_mat], [dae.c_mat, dae.d_mat]])
    mask = np.zeros(dae.n, dtype=bool)
    mask[: dae.n1] = True

    def forcing(t, _f=dae.forcing):
        b1, b2 = _f(t)
        return np.concatenate([np.atleast_1d(b1), np.atleast_1d(b2)]).astype(float)

    z0 = np.concatenate([dae.x0, consistent_y0(dae)])
    return CombinedSystem(big_a, mask, forcing, z0, dae.names)


def consistent_y0(dae: LinearDae) -> np.ndarray:
    """Algebraic initial value ``y0 = D^{-1} (b2(0) - C x0)``.

    With ``check_d=False`` and a singular ``D`` the minimum-norm solution is
    returned; it must still satisfy the constraints.
    """
    if dae.n2 == 0:
        return np.zeros(0)
    _, b2 = dae.forcing(0.0)
    rhs = np.atleast_1d(np.asarray(b2, dtype=float)) - dae.c_mat @ dae.x0
    if dae.check_d:
        return lu_solve(lu_factor_checked(dae.d_mat, SingularD, "D"), rhs)
    y0, *_ = np.linalg.lstsq(dae.d_mat, rhs, rcond=None)
    resid = np.abs(dae.d_mat @ y0 - rhs).max()
    if resid > 1e-10 * (1.0 + np.abs(rhs).max()):
        raise InconsistentInitialState(f"x0 admits no algebraic initial value (residual {resid:.3e})")
    return y0


@dataclass
class Trajectory:
    """Fixed-step sequence of full states ``z^0 ... z^M``."""

    dt: float
    times: np.ndarray
    states: np.ndarray
    names: Sequence[str] | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def column(self, name_or_index) -> np.ndarray:
        if isinstance(name_or_index, str):
            return self.states[:, list(self.names).index(name_or_index)]
        return self.states[:, name_or_index]

    def to_csv(self, path) -> None:
        names = list(self.names) if self.names is not None else [f"z{i}" for i in range(self.states.shape[1])]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", *names])
            for t, z in zip(self.times, self.states):
                writer.writerow([repr(float(t)), *(repr(float(v)) for v in z)])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        times = body[:, 0]
        dt = float(times[1] - times[0]) if len(times) > 1 else 0.0
        return cls(dt, times, body[:, 1:], header[1:])


def time_grid(dt: float, t_end: float) -> np.ndarray:
    """``0, dt, ..., M dt`` with ``M = round(t_end / dt)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(round(t_end / dt))
    return dt * np.arange(steps + 1)


def check_consistent(sys: CombinedSystem, z, t: float, tol: float = 1e-10) -> None:
    alg = ~sys.diff_mask
    if not alg.any():
        return
    resid = sys.big_a[alg] @ z - np.asarray(sys.forcing(t))[alg]
    if np.abs(resid).max() > tol * (1.0 + np.abs(z[alg]).max()):
        raise InconsistentInitialState(f"algebraic residual {np.abs(resid).max():.3e} at t={t}")


def monolithic_solve(sys: CombinedSystem, dt: float, t_end: float, z0=None) -> Trajectory:
    """Reference backward-Euler solution of the undecomposed system."""
    times = time_grid(dt, t_end)
    z = sys.z0 if z0 is None else np.asarray(z0, dtype=float)
    check_consistent(sys, z, times[0])
    factors = lu_factor_checked(sys.step_matrix(dt), SingularStepMatrix, "step matrix")
    states = np.empty((len(times), sys.n))
    states[0] = z
    for j in range(1, len(times)):
        z = lu_solve(factors, sys.step_rhs(dt, z, times[j]))
        states[j] = z
    return Trajectory(dt, times, states, sys.names)


def backward_euler_step(sys: CombinedSystem, dt: float, z_prev, t_next: float) -> np.ndarray:
    factors = lu_factor_checked(sys.step_matrix(dt), SingularStepMatrix, "step matrix")
    return lu_solve(factors, sys.step_rhs(dt, z_prev, t_next))


def step_residuals(sys: CombinedSystem, traj: Trajectory):
    """Per-step backward-Euler residual and algebraic residual (inf norms).

    The first residual is normalized by ``1 + |z^{n+1}|``, the second by
    ``1 + |y^n|``.
    """
    mask = sys.diff_mask
    be, alg = [], []
    for j in range(len(traj.times)):
        z = traj.states[j]
        b = np.asarray(sys.forcing(traj.times[j]))
        r_alg = sys.big_a[~mask] @ z - b[~mask]
        ynorm = np.abs(z[~mask]).max() if (~mask).any() else 0.0
        alg.append(np.abs(r_alg).max() / (1.0 + ynorm) if r_alg.size else 0.0)
        if j == 0:
            continue
        dz = np.where(mask, (z - traj.states[j - 1]) / traj.dt, 0.0)
        r = dz + sys.big_a @ z - b
        be.append(np.abs(r).max() / (1.0 + np.abs(z).max()))
    return np.array(be), np.array(alg)
