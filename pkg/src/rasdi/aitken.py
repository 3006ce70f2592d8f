"""Interface error operator and vector Aitken acceleration.

The interface iteration is affine, ``z^{k+1} = P z^k + c``, so the increments
obey ``e^{k+1} = P e^k``.  ``P`` can be recovered from ``n_G + 1`` increments
and the fixed point follows in closed form whether or not ``rho(P) < 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .dae import lu_factor_checked, lu_solve
from .errors import NotTwoPartitions, RankDeficientHistory, UnitEigenvalue
from .ras import RasSplitting

TOL_UNIT = 1e-8
RCOND = 1e-12


@dataclass(frozen=True)
class InterfaceOperator:
    """Error operator ``P`` on the interface unknowns.

    ``basis`` and ``scale`` are set for operators fitted from iterate
    increments: ``basis`` spans the fitted directions in the row-scaled
    coordinates ``v / scale``.
    """

    p_mat: np.ndarray
    source: str = "numeric"
    rank_deficient: bool = False
    basis: np.ndarray | None = None
    scale: np.ndarray | None = None
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.p_mat, dtype=float))
        if p.size == 0:
            p = np.zeros((0, 0))
        object.__setattr__(self, "p_mat", p)
        eig = sla.eigvals(p) if p.size else np.zeros(0, dtype=complex)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def n_gamma(self) -> int:
        return self.p_mat.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.abs(self.eigenvalues).max()) if self.eigenvalues.size else 0.0

    @property
    def has_unit_eigenvalue(self) -> bool:
        return bool(self.eigenvalues.size) and bool(np.abs(self.eigenvalues - 1.0).min() <= TOL_UNIT)

    def dominant_eigenvalue(self) -> complex:
        if not self.eigenvalues.size:
            return 0j
        return complex(self.eigenvalues[np.argmax(np.abs(self.eigenvalues))])

    def in_span(self, v, tol: float = 1e-8) -> bool:
        """Whether ``v`` lies in the directions the fit has seen."""
        if not self.rank_deficient or self.basis is None:
            return True
        vs = np.asarray(v) / self.scale
        nrm = np.linalg.norm(vs)
        if nrm == 0.0:
            return True
        resid = vs - self.basis @ (self.basis.T @ vs)
        return bool(np.linalg.norm(resid) <= tol * nrm)


def numeric_p(diffs: Sequence, rcond: float = RCOND, strict: bool = False,
              noise_floor: float | None = None) -> InterfaceOperator:
    """Fit ``P`` from consecutive increments ``e^1, ..., e^K`` (oldest first).

    Solves ``P [e^1 ... e^{K-1}] = [e^2 ... e^K]`` in the least-squares sense
    after scaling each interface row to unit magnitude, which keeps mixed
    units (volts next to milliamps) from skewing the rank decision.  Rows
    whose increments never exceed ``noise_floor`` (default ``1e-13`` of the
    largest increment) are rounding noise of a component that does not move;
    they are zeroed rather than scaled up.  The column order does not matter
    as long as the pairing is kept.

    A history of rank below ``n_G`` means the increments already span an
    invariant subspace; the minimum-norm operator is then exact on every
    vector the iteration can produce from that start, and is returned with
    ``rank_deficient`` set.  ``strict=True`` raises instead.
    """
    e = np.column_stack([np.asarray(d, dtype=float) for d in diffs])
    n = e.shape[0]
    if e.shape[1] < 2:
        raise RankDeficientHistory("need at least two increments")
    scale = np.abs(e).max(axis=1)
    if noise_floor is None:
        noise_floor = 1e-13 * scale.max(initial=0.0)
    still = scale <= noise_floor
    e = np.where(still[:, None], 0.0, e)
    scale[still] = 1.0
    xs = e[:, :-1] / scale[:, None]
    ys = e[:, 1:] / scale[:, None]
    u, s, vt = np.linalg.svd(xs, full_matrices=False)
    rank = int((s > rcond * s[0]).sum()) if s.size and s[0] > 0 else 0
    pinv = vt[:rank].T @ (u[:, :rank] / s[:rank]).T
    p_scaled = ys @ pinv
    p = scale[:, None] * p_scaled / scale[None, :]
    deficient = rank < n
    if deficient and strict:
        raise RankDeficientHistory(f"history rank {rank} < {n}")
    return InterfaceOperator(p, "numeric", deficient, u[:, :rank], scale)


def numeric_p_from_iterates(iterates: Sequence, **kw) -> InterfaceOperator:
    """``numeric_p`` on the increments of ``iterates``.

    The noise floor accounts for cancellation: an increment is only
    meaningful above a few ulps of the iterates themselves.
    """
    z = [np.asarray(v, dtype=float) for v in iterates]
    diffs = [b - a for a, b in zip(z[:-1], z[1:])]
    if "noise_floor" not in kw:
        big = max(np.abs(v).max(initial=0.0) for v in z)
        inc = max(np.abs(d).max(initial=0.0) for d in diffs)
        kw["noise_floor"] = max(64 * np.finfo(float).eps * big, 1e-13 * inc)
    return numeric_p(diffs, **kw)


def accelerate(p, zk, zkm1) -> np.ndarray:
    """Fixed point of the affine map from two consecutive iterates.

    Uses ``z_inf = z^k + (I - P)^{-1} P (z^k - z^{k-1})``, which equals
    ``(I - P)^{-1} (z^k - P z^{k-1})`` and stays exact for operators fitted on
    an invariant subspace.
    """
    op = p if isinstance(p, InterfaceOperator) else InterfaceOperator(p, "given")
    zk, zkm1 = np.asarray(zk, dtype=float), np.asarray(zkm1, dtype=float)
    if op.n_gamma == 0:
        return zk.copy()
    if op.has_unit_eigenvalue:
        raise UnitEigenvalue("1 is an eigenvalue of the error operator; no fixed point")
    mat = np.eye(op.n_gamma) - op.p_mat
    factors = lu_factor_checked(mat, UnitEigenvalue, "I - P")
    return zk + lu_solve(factors, op.p_mat @ (zk - zkm1))


def analytic_p_two_partitions(split: RasSplitting) -> InterfaceOperator:
    """Block assembly ``[[0, P_0], [P_1, 0]]`` from the local operators.

    The values on the external set of one partition are owned by the other, so
    ``P_0 = -R_{0,e} A_1^{-1} E_1`` and ``P_1 = -R_{1,e} A_0^{-1} E_0`` with the
    restrictions taken inside the owner's extended set.
    """
    if split.part.n_parts != 2:
        raise NotTwoPartitions(f"expected 2 partitions, got {split.part.n_parts}")
    imap = split.imap
    p = np.zeros((imap.n_gamma, imap.n_gamma))
    for a in (0, 1):
        owner = split.locals[1 - a]
        rows = np.searchsorted(owner.idx, split.part.external[a])
        block = -lu_solve(owner.factors, owner.e_tilde)[rows]
        p[imap.slots(a), imap.slots(1 - a)] = block
    return InterfaceOperator(p, "analytic")


def analytic_p(split: RasSplitting) -> InterfaceOperator:
    """``R_G (I - M^{-1} A_step) R_G^T`` for any number of partitions."""
    return InterfaceOperator(split.interface_matrix(), "analytic")


# closed forms for the two reference circuits

def closed_form_x(kind: str, dt: float, l2: float, c: float, g: float) -> float:
    """Coupling entry from the current interface unknown to the voltage one."""
    base = 1.0 / (c / dt + g)
    if kind == "ex1":
        return base
    if kind == "ex2":
        return l2 / dt + base
    raise ValueError(kind)


def closed_form_p(kind: str, dt: float, l1: float, l2: float, c: float, g: float) -> np.ndarray:
    """Error operator in interface order ``[e_a, e_b, i1]``."""
    x = closed_form_x(kind, dt, l2, c, g)
    return np.array([[0.0, 0.0, -x],
                     [0.0, 0.0, 0.0],
                     [dt / l1, -dt / l1, 0.0]])


def closed_form_eigs(kind: str, dt: float, l1: float, l2: float, c: float, g: float) -> np.ndarray:
    mag = np.sqrt(dt * closed_form_x(kind, dt, l2, c, g) / l1)
    return np.array([0.0, -1j * mag, 1j * mag])


def closed_form_dt0(kind: str, l1: float, l2: float, c: float, g: float) -> float | None:
    """Time step where the closed-form spectral radius equals one."""
    if kind == "ex1":
        return (l1 * g + np.sqrt((l1 * g) ** 2 + 4 * l1 * c)) / 2
    if kind == "ex2":
        if l2 >= l1:
            return None
        d = l1 - l2
        return (d * g + np.sqrt(d * d * g * g + 4 * d * c)) / 2
    raise ValueError(kind)


def classify(rho: float, tol: float = TOL_UNIT) -> str:
    if abs(rho - 1.0) <= tol:
        return "stagnates"
    return "converges" if rho < 1.0 else "diverges"


def spectral_report(p: InterfaceOperator, circuit: dict | None = None) -> dict:
    """Eigenvalues, spectral radius and classification of ``P``.

    ``circuit`` may carry ``kind`` (``ex1`` or ``ex2``) and ``l1, l2, c, g``;
    the closed-form threshold is then added.
    """
    rep = {
        "eigenvalues": [[float(v.real), float(v.imag)] for v in p.eigenvalues],
        "rho": p.spectral_radius,
        "classification": classify(p.spectral_radius),
        "source": p.source,
    }
    if circuit and circuit.get("kind") in ("ex1", "ex2"):
        args = [circuit[k] for k in ("l1", "l2", "c", "g")]
        rep["dt0"] = closed_form_dt0(circuit["kind"], *args)
        if "dt" in circuit:
            rep["rho_closed_form"] = float(np.abs(closed_form_eigs(circuit["kind"], circuit["dt"], *args)).max())
    return rep


def report_json(rep) -> str:
    return json.dumps(rep, indent=2)


def spectral_sweep(build: Callable[[float], InterfaceOperator], dts) -> dict:
    """Spectral radius over a grid of time steps and the first crossing of 1."""
    dts = np.asarray(dts, dtype=float)
    rhos = np.array([build(dt).spectral_radius for dt in dts])
    crossing = None
    above = rhos >= 1.0
    flips = np.flatnonzero(above[1:] != above[:-1])
    if flips.size:
        k = int(flips[0])
        crossing = (float(dts[k]), float(dts[k + 1]))
    return {
        "dt": dts.tolist(),
        "rho": rhos.tolist(),
        "classification": [classify(r) for r in rhos],
        "crossing": crossing,
    }
