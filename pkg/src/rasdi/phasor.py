"""Heterogeneous coupling of a time-domain (EMT) partition with a dynamic
phasor (TS) partition.

The TS side represents each of its unknowns as ``z(t) = Re sum_k z_k(t)
exp(i k w0 t)`` for the retained modes ``k`` and steps with ``dt_ts``.  The
EMT side steps ``m`` times with ``dt_emt = dt_ts / m`` inside each TS step.
Interface values are exchanged once per TS step: the EMT history over one
period is projected onto the modes (``f_mod``) and the TS phasors are
evaluated at the EMT sub-step times (``r_mod``).  Both maps are linear, so
the coupled iteration stays affine and can be accelerated on the TS
interface alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .aitken import InterfaceOperator, accelerate, numeric_p_from_iterates
from .dae import CombinedSystem, LinearDae, lu_factor_checked, lu_solve
from .errors import DimensionMismatch, HistoryNotFull, SingularLocalMatrix
from .partition import OverlapPartition, interface_map


@dataclass(frozen=True)
class PhasorConfig:
    omega0: float
    dt_ts: float
    dt_emt: float
    modes: tuple = (-1, 0, 1)
    hold: str = "zoh"

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(k) for k in self.modes))
        if len(set(self.modes)) != len(self.modes) or not self.modes:
            raise ValueError("modes must be a non-empty set of distinct integers")
        if self.dt_ts <= 0 or self.dt_emt <= 0 or self.omega0 <= 0:
            raise ValueError("time steps and base frequency must be positive")
        m = self.dt_ts / self.dt_emt
        if abs(m - round(m)) > 1e-9 * m or round(m) < 1:
            raise ValueError("dt_ts must be an integer multiple of dt_emt")
        n = self.period / self.dt_emt
        if abs(n - round(n)) > 1e-9 * n or round(n) < 1:
            raise ValueError("the period must be an integer multiple of dt_emt")
        if self.hold not in ("zoh", "linear"):
            raise ValueError("hold must be 'zoh' or 'linear'")

    @property
    def m(self) -> int:
        return int(round(self.dt_ts / self.dt_emt))

    @property
    def period(self) -> float:
        return 2 * np.pi / self.omega0

    @property
    def n_hist(self) -> int:
        return int(round(self.period / self.dt_emt))

    @property
    def symmetric(self) -> bool:
        return set(self.modes) == {-k for k in self.modes}


@dataclass(frozen=True)
class PhasorState:
    """Complex coefficients, one row per mode in ``modes`` order."""

    modes: tuple
    omega0: float
    coeffs: np.ndarray

    def mode(self, k: int) -> np.ndarray:
        return self.coeffs[self.modes.index(k)]


@dataclass
class EmtHistory:
    """The last ``n_hist`` samples of some EMT quantities, ending at ``t_end``."""

    dt: float
    n_hist: int
    samples: np.ndarray
    t_end: float

    @classmethod
    def constant(cls, value, cfg: PhasorConfig, t_end: float = 0.0) -> "EmtHistory":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(cfg.dt_emt, cfg.n_hist, np.tile(value, (cfg.n_hist, 1)), t_end)

    @property
    def times(self) -> np.ndarray:
        return self.t_end - self.dt * np.arange(self.samples.shape[0] - 1, -1, -1)

    def extended(self, window: np.ndarray) -> "EmtHistory":
        """History after appending ``window`` (one row per new sample)."""
        window = np.atleast_2d(window)
        merged = np.concatenate([self.samples, window])[-self.n_hist:]
        return EmtHistory(self.dt, self.n_hist, merged, self.t_end + window.shape[0] * self.dt)


def f_mod(hist: EmtHistory, cfg: PhasorConfig) -> PhasorState:
    """One-period rectangular Fourier projection at absolute sample times.

    ``z_k = (1/N) sum_j h_j exp(-i k w0 t_j)`` over the ``N`` samples ending at
    the current TS time, so recombination at that time is phase-correct.
    """
    if hist.samples.shape[0] != cfg.n_hist:
        raise HistoryNotFull(f"history holds {hist.samples.shape[0]} of {cfg.n_hist} samples")
    k = np.asarray(cfg.modes)[:, None]
    phase = np.exp(-1j * cfg.omega0 * k * hist.times[None, :])
    return PhasorState(cfg.modes, cfg.omega0, phase @ hist.samples / cfg.n_hist)


def r_mod(ph: PhasorState, times) -> np.ndarray:
    """``Re sum_k z_k exp(i k w0 t)``, one row per time."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    k = np.asarray(ph.modes)[None, :]
    basis = np.exp(1j * ph.omega0 * k * times[:, None])
    return (basis @ ph.coeffs).real


def stacked_block(mat: np.ndarray, diff: np.ndarray, shift: float) -> np.ndarray:
    """Real form of ``mat + i*shift*diag(diff)`` acting on ``[re; im]``."""
    d = np.diag(diff.astype(float)) * shift
    return np.block([[mat, -d], [d, mat]])


def ts_dae(dae: LinearDae, cfg: PhasorConfig) -> LinearDae:
    """Phasor form of ``dae``, real-stacked mode by mode.

    Differential unknowns come first as ``[Re x_k; Im x_k]`` per mode, then the
    algebraic ones.  The forcing is the ``f_mod`` projection of ``b(t)`` over
    the period ending at ``t``.
    """
    n1, n2 = dae.n1, dae.n2
    ones1 = np.ones(n1, dtype=bool)
    a_blocks, b_blocks, c_blocks, d_blocks = [], [], [], []
    for k in cfg.modes:
        a_blocks.append(stacked_block(dae.a_mat, ones1, k * cfg.omega0))
        b_blocks.append(np.kron(np.eye(2), dae.b_mat))
        c_blocks.append(np.kron(np.eye(2), dae.c_mat))
        d_blocks.append(np.kron(np.eye(2), dae.d_mat))
    def forcing(t, _f=dae.forcing):
        times = t - cfg.dt_emt * np.arange(cfg.n_hist - 1, -1, -1)
        b1 = np.array([np.atleast_1d(_f(s)[0]) for s in times]).reshape(len(times), n1)
        b2 = np.array([np.atleast_1d(_f(s)[1]) for s in times]).reshape(len(times), n2)
        p1 = f_mod(EmtHistory(cfg.dt_emt, cfg.n_hist, b1, t), cfg).coeffs
        p2 = f_mod(EmtHistory(cfg.dt_emt, cfg.n_hist, b2, t), cfg).coeffs
        return (np.concatenate([np.concatenate([r.real, r.imag]) for r in p1]),
                np.concatenate([np.concatenate([r.real, r.imag]) for r in p2]))

    x0 = np.concatenate([np.concatenate([dae.x0 if k == 0 else np.zeros(n1), np.zeros(n1)])
                         for k in cfg.modes])
    names = None
    if dae.names is not None:
        xn, yn = dae.names[:n1], dae.names[n1:]
        names = tuple(f"{part}({nm})[{k}]" for k in cfg.modes for part in ("re", "im") for nm in xn) + \
            tuple(f"{part}({nm})[{k}]" for k in cfg.modes for part in ("re", "im") for nm in yn)
    return LinearDae(block_diag(*a_blocks), block_diag(*b_blocks), block_diag(*c_blocks),
                     block_diag(*d_blocks), forcing, x0, names, check_d=dae.check_d)


@dataclass
class CouplingState:
    """Accepted state at a TS step boundary ``t``.

    Times are kept on the EMT grid ``t0 + k * dt_emt`` through the sub-step
    counter ``k``; summing step sizes would drift and shift sampled events.
    """

    t: float
    z_emt: np.ndarray
    ts: np.ndarray
    hist: EmtHistory
    k: int = 0
    t0: float = 0.0


@dataclass
class TsStepResult:
    state: CouplingState
    emt_window: np.ndarray
    iterates: list
    operator: InterfaceOperator | None
    sweeps: int


class MultirateCoupling:
    """EMT partition ``emt`` and TS partition ``1 - emt`` of a two-way split."""

    def __init__(self, sys: CombinedSystem, part: OverlapPartition, cfg: PhasorConfig, emt: int = 0):
        if part.n_parts != 2:
            raise DimensionMismatch("heterogeneous coupling needs exactly two partitions")
        self.sys, self.part, self.cfg = sys, part, cfg
        self.emt, self.tsp = emt, 1 - emt
        self.imap = interface_map(part)
        mask = sys.diff_mask

        self.idx_e, self.ext_e = part.extended[emt], part.external[emt]
        self.idx_t, self.ext_t = part.extended[self.tsp], part.external[self.tsp]
        s_emt = sys.step_matrix(cfg.dt_emt)
        self.a_e = s_emt[np.ix_(self.idx_e, self.idx_e)]
        self.e_e = s_emt[np.ix_(self.idx_e, self.ext_e)]
        self.f_e = lu_factor_checked(self.a_e, SingularLocalMatrix, "EMT local matrix")
        self.diff_e = mask[self.idx_e]

        s_ts = sys.step_matrix(cfg.dt_ts)
        self.diff_t = mask[self.idx_t]
        a_t = s_ts[np.ix_(self.idx_t, self.idx_t)]
        self.e_t = s_ts[np.ix_(self.idx_t, self.ext_t)]
        self.f_t = [lu_factor_checked(stacked_block(a_t, self.diff_t, k * cfg.omega0 * cfg.dt_ts),
                                      SingularLocalMatrix, f"TS matrix of mode {k}") for k in cfg.modes]

        # which values each side hands over, as positions in the owner's local vector
        self.give_e = np.searchsorted(self.idx_e, self.ext_t)
        self.give_t = np.searchsorted(self.idx_t, self.ext_e)
        if not (np.all(self.idx_e[self.give_e] == self.ext_t) and np.all(self.idx_t[self.give_t] == self.ext_e)):
            raise DimensionMismatch("interface values must be owned by the opposite partition")
        self._ts_forced = self._ts_rows_forced()

    # --- initial state and packing

    def initial_state(self, z0=None, t0: float = 0.0) -> CouplingState:
        z0 = self.sys.z0 if z0 is None else np.asarray(z0, dtype=float)
        ts = np.zeros((len(self.cfg.modes), self.idx_t.size), dtype=complex)
        if 0 in self.cfg.modes:
            ts[self.cfg.modes.index(0)] = z0[self.idx_t]
        hist = EmtHistory.constant(z0[self.ext_t], self.cfg, t0)
        return CouplingState(t0, z0[self.idx_e].copy(), ts, hist, 0, t0)

    def sub_times(self, state: CouplingState) -> np.ndarray:
        """EMT sub-step times of the TS step that starts at ``state``."""
        return state.t0 + self.cfg.dt_emt * (state.k + np.arange(1, self.cfg.m + 1))

    def history_times(self, state: CouplingState) -> np.ndarray:
        """Sample times of the one-period window ending at the next TS time."""
        k_next = state.k + self.cfg.m
        return state.t0 + self.cfg.dt_emt * (k_next - np.arange(self.cfg.n_hist - 1, -1, -1))

    @property
    def n_ts_interface(self) -> int:
        return self.pack(np.zeros((len(self.cfg.modes), self.ext_e.size), dtype=complex)).size

    def pack(self, coeffs: np.ndarray) -> np.ndarray:
        """Real vector of TS interface phasors.

        For a mode set closed under negation only ``k >= 0`` is stored
        (``Re z_0``, then ``Re z_k, Im z_k``); the rest follows by conjugation.
        """
        modes = self.cfg.modes
        if self.cfg.symmetric:
            parts = []
            for j in range(coeffs.shape[1]):
                for k in sorted(k for k in modes if k >= 0):
                    z = coeffs[modes.index(k), j]
                    parts.extend([z.real] if k == 0 else [z.real, z.imag])
            return np.array(parts)
        return np.concatenate([coeffs.real.ravel(), coeffs.imag.ravel()])

    def unpack(self, vec: np.ndarray) -> np.ndarray:
        modes, nv = self.cfg.modes, self.ext_e.size
        out = np.zeros((len(modes), nv), dtype=complex)
        if self.cfg.symmetric:
            pos = 0
            for j in range(nv):
                for k in sorted(k for k in modes if k >= 0):
                    if k == 0:
                        out[modes.index(0), j] = vec[pos]
                        pos += 1
                    else:
                        z = vec[pos] + 1j * vec[pos + 1]
                        out[modes.index(k), j] = z
                        out[modes.index(-k), j] = np.conj(z)
                        pos += 2
            return out
        half = len(modes) * nv
        return (vec[:half] + 1j * vec[half:]).reshape(len(modes), nv)

    def ts_interface(self, ts: np.ndarray) -> np.ndarray:
        return ts[:, self.give_t]

    # --- the two local solvers

    def emt_window(self, z_emt: np.ndarray, t_n: float, ts_iface: np.ndarray, ts_iface_prev=None,
                   times=None) -> np.ndarray:
        """``m`` EMT sub-steps driven by the TS interface phasors.

        Returns the local states at the sub-step times, one row each.  The
        times default to ``t_n + s * dt_emt``.
        """
        cfg = self.cfg
        if times is None:
            times = t_n + cfg.dt_emt * np.arange(1, cfg.m + 1)
        ph = PhasorState(cfg.modes, cfg.omega0, ts_iface)
        ext = r_mod(ph, times)
        if cfg.hold == "linear" and ts_iface_prev is not None:
            prev = r_mod(PhasorState(cfg.modes, cfg.omega0, ts_iface_prev), times)
            w = (np.arange(1, cfg.m + 1) / cfg.m)[:, None]
            ext = w * ext + (1 - w) * prev
        out = np.empty((cfg.m, self.idx_e.size))
        z = z_emt
        for s, t in enumerate(times):
            b = np.asarray(self.sys.forcing(t))[self.idx_e]
            rhs = np.where(self.diff_e, z + cfg.dt_emt * b, b)
            z = lu_solve(self.f_e, rhs - self.e_e @ ext[s])
            out[s] = z
        return out

    def _ts_rows_forced(self) -> bool:
        probe = [np.asarray(self.sys.forcing(t))[self.idx_t] for t in (0.0, 0.00123, 0.0377)]
        return any(np.any(p != 0.0) for p in probe)

    def ts_forcing(self, t_next: float, times=None) -> np.ndarray:
        cfg = self.cfg
        if not self._ts_forced:
            return np.zeros((len(cfg.modes), self.idx_t.size), dtype=complex)
        if times is None:
            times = t_next - cfg.dt_emt * np.arange(cfg.n_hist - 1, -1, -1)
        samples = np.array([np.asarray(self.sys.forcing(t))[self.idx_t] for t in times])
        return f_mod(EmtHistory(cfg.dt_emt, cfg.n_hist, samples, t_next), cfg).coeffs

    def ts_step(self, ts_prev: np.ndarray, hist: EmtHistory, t_next: float, forcing_times=None) -> np.ndarray:
        """One TS step of every mode, driven by ``f_mod`` of the EMT history."""
        cfg = self.cfg
        ext = f_mod(hist, cfg).coeffs
        bk = self.ts_forcing(t_next, forcing_times)
        n = self.idx_t.size
        out = np.empty_like(ts_prev)
        for j, _ in enumerate(cfg.modes):
            rhs = np.where(self.diff_t, ts_prev[j] + cfg.dt_ts * bk[j], bk[j]) - self.e_t @ ext[j]
            sol = lu_solve(self.f_t[j], np.concatenate([rhs.real, rhs.imag]))
            out[j] = sol[:n] + 1j * sol[n:]
        return out

    # --- sweeps

    def window_history(self, state: CouplingState, window: np.ndarray) -> EmtHistory:
        """History after the window, with the end time on the EMT grid."""
        hist = state.hist.extended(window[:, self.give_e])
        hist.t_end = state.t0 + (state.k + self.cfg.m) * self.cfg.dt_emt
        return hist

    def multirate_sweep(self, state: CouplingState, emt_window: np.ndarray, ts_next: np.ndarray):
        """Jacobi sweep: both sides read only the previous iterate."""
        new_ts = self._ts_from_window(state, emt_window)
        new_window = self.emt_window(state.z_emt, state.t, self.ts_interface(ts_next), self.ts_interface(state.ts),
                                     self.sub_times(state))
        return new_window, new_ts

    def gs_map(self, state: CouplingState, u: np.ndarray):
        """EMT then TS from packed TS interface values ``u``."""
        window = self.emt_window(state.z_emt, state.t, self.unpack(u), self.ts_interface(state.ts),
                                 self.sub_times(state))
        new_ts = self._ts_from_window(state, window)
        return self.pack(self.ts_interface(new_ts)), window, new_ts

    def _ts_from_window(self, state: CouplingState, window: np.ndarray) -> np.ndarray:
        hist_times = self.history_times(state)
        return self.ts_step(state.ts, self.window_history(state, window), hist_times[-1], hist_times)

    def accept(self, state: CouplingState, window: np.ndarray, ts_new: np.ndarray) -> CouplingState:
        k = state.k + self.cfg.m
        return CouplingState(state.t0 + k * self.cfg.dt_emt, window[-1].copy(), ts_new,
                             self.window_history(state, window), k, state.t0)

    def accelerated_step(self, state: CouplingState, extra_sweeps: int = 0,
                         tol: float = 1e-12, max_cycles: int = 6, max_refine: int = 3) -> TsStepResult:
        """Fit the TS interface operator, accelerate, then resolve EMT and TS.

        The TS interface operator can have a strongly graded spectrum, and the
        weak modes fade out of the increments long before the dominant one stops
        growing, so one fit leaves an error in those directions.  The resolve
        after the acceleration is one more sweep ``G(u)``; while it moves ``u``
        by more than ``tol * max(1, |u|)`` the point is first corrected with the
        fitted operator, ``u <- accelerate(P, G(u), u)``, and if that stalls
        the fit restarts from the current point.
        """
        u = [self.pack(self.ts_interface(state.ts))]
        iterates, sweeps, op = [], 0, None
        nxt, window, ts_new = self.gs_map(state, u[0])
        for _ in range(max_cycles):
            u.append(nxt)
            for _ in range(self.n_ts_interface + extra_sweeps):
                u.append(self.gs_map(state, u[-1])[0])
            sweeps += len(u) - 1
            op = numeric_p_from_iterates(u)
            iterates.extend(u)
            cand = accelerate(op, u[-1], u[-2])
            best = None
            for _ in range(max_refine + 1):
                out = self.gs_map(state, cand)
                sweeps += 1
                defect = np.abs(out[0] - cand).max()
                if best is not None and defect >= best[0]:
                    break
                best = (defect, cand, out)
                if defect <= tol * max(1.0, np.abs(cand).max()):
                    break
                cand = accelerate(op, out[0], cand)
            defect, u_inf, (nxt, window, ts_new) = best
            if defect <= tol * max(1.0, np.abs(u_inf).max()):
                break
            u = [u_inf]
        iterates.append(u_inf)
        return TsStepResult(self.accept(state, window, ts_new), window, iterates, op, sweeps)

    def plain_step(self, state: CouplingState, sweeps: int) -> TsStepResult:
        """Fixed number of Gauss-Seidel sweeps without acceleration."""
        u = [self.pack(self.ts_interface(state.ts))]
        window = ts_new = None
        for _ in range(sweeps):
            nxt, window, ts_new = self.gs_map(state, u[-1])
            u.append(nxt)
        return TsStepResult(self.accept(state, window, ts_new), window, u, None, sweeps)

    def global_state(self, state: CouplingState) -> np.ndarray:
        """Owned values of both sides at the TS step time."""
        z = np.empty(self.sys.n)
        own_e = self.part.owned_mask(self.emt)
        own_t = self.part.owned_mask(self.tsp)
        z[self.idx_e[own_e]] = state.z_emt[own_e]
        ts_vals = r_mod(PhasorState(self.cfg.modes, self.cfg.omega0, state.ts), [state.t])[0]
        z[self.idx_t[own_t]] = ts_vals[own_t]
        return z


@dataclass
class EmtTsRun:
    times_ts: np.ndarray
    global_states: np.ndarray
    times_emt: np.ndarray
    emt_states: np.ndarray
    ts_coeffs: list
    operators: list = field(default_factory=list)
    emt_names: tuple = ()
    ts_names: tuple = ()
    modes: tuple = ()

    def emt_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *self.emt_names])
            for t, row in zip(self.times_emt, self.emt_states):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])

    def ts_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *(f"|{nm}|[{k}]" for k in self.modes for nm in self.ts_names)])
            for t, c in zip(self.times_ts, self.ts_coeffs):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in np.abs(c).ravel())])


def run_emt_ts(sys: CombinedSystem, part: OverlapPartition, cfg: PhasorConfig, t_end: float,
               names=None, accelerate_steps: bool = True, sweeps: int = 1, emt: int = 0) -> EmtTsRun:
    """Step the coupled model over ``[0, t_end]`` in TS steps."""
    cpl = MultirateCoupling(sys, part, cfg, emt)
    n_steps = int(round(t_end / cfg.dt_ts))
    state = cpl.initial_state()
    t_ts, glob, ts_c, ops = [0.0], [cpl.global_state(state)], [state.ts.copy()], []
    t_emt, emt_rows = [0.0], [state.z_emt.copy()]
    for _ in range(n_steps):
        res = cpl.accelerated_step(state) if accelerate_steps else cpl.plain_step(state, sweeps)
        t_emt.extend(cpl.sub_times(state))
        emt_rows.extend(res.emt_window)
        state = res.state
        t_ts.append(state.t)
        glob.append(cpl.global_state(state))
        ts_c.append(state.ts.copy())
        ops.append(res.operator)
    names = names or tuple(f"z{i}" for i in range(sys.n))
    return EmtTsRun(np.array(t_ts), np.array(glob), np.array(t_emt), np.array(emt_rows), ts_c, ops,
                    tuple(names[i] for i in cpl.idx_e), tuple(names[i] for i in cpl.idx_t), cfg.modes)
