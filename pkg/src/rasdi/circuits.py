"""RLC netlists assembled into semi-explicit DAEs, plus the reference circuits.

Conventions
-----------
Every branch current flows from ``n+`` to ``n-``.  Unknowns are ordered as
inductor currents and capacitor voltages (differential), then node voltages
in node order and the currents of all other branches in element order
(algebraic).  Each unknown owns one equation row:

* inductor current:  ``di/dt - (e+ - e-)/L = 0``
* capacitor voltage: ``dv/dt - i/C = 0`` with ``v`` a new differential unknown
* node voltage:      Kirchhoff current row ``sum(leaving) - sum(entering) = 0``,
  or ``e = 0`` for the ground node
* conductance:       ``G (e+ - e-) - i = 0``
* resistor:          ``e+ - e- - R i = 0``
* capacitor current: ``v - e+ + e- = 0``
* voltage source:    ``e+ - e- - Zs i = E(t)``
* current source:    ``-i = -I(t)``

Every capacitor gets its own voltage unknown, grounded or not, so node
voltages stay algebraic.  ``drop_kcl`` replaces the current row of one node by
the ground node's current row, for listings written that way.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dae import CombinedSystem, LinearDae, combine, lu_factor_checked
from .errors import FloatingNode, NetlistSyntaxError, SingularAlgebraicBlock, UnknownCircuitId
from .partition import AdjacencyGraph, OverlapPartition, grow_overlap

KINDS = ("R", "G", "L", "C", "V", "I")


@dataclass(frozen=True)
class Waveform:
    """``amp * f(2 pi freq t)`` with ``f`` = cos or sin.

    ``window = (t0, t1, mult)`` multiplies the amplitude by ``mult`` on
    ``t0 <= t < t1``.
    """

    amp: float
    freq: float = 50.0
    kind: str = "cos"
    window: tuple | None = None

    def __call__(self, t: float) -> float:
        arg = 2 * math.pi * self.freq * t
        val = self.amp * (math.cos(arg) if self.kind == "cos" else math.sin(arg) if self.kind == "sin" else 1.0)
        if self.window is not None:
            t0, t1, mult = self.window
            if t0 <= t < t1:
                val *= mult
        return val


@dataclass(frozen=True)
class Element:
    kind: str
    name: str
    n_plus: str
    n_minus: str
    value: float = 0.0
    source: Callable[[float], float] | None = None
    current: str | None = None
    aux: str | None = None

    @property
    def current_name(self) -> str:
        return self.current or f"i_{self.name}"

    @property
    def aux_name(self) -> str:
        return self.aux or f"v_{self.name}"


@dataclass(frozen=True)
class Netlist:
    elements: tuple
    ground: str
    nodes: tuple = ()
    voltage_prefix: str = "e"
    drop_kcl: str | None = None

    def __post_init__(self):
        order = list(self.nodes)
        for el in self.elements:
            if el.kind not in KINDS:
                raise ValueError(f"unknown element kind {el.kind!r}")
            for nd in (el.n_plus, el.n_minus):
                if nd not in order:
                    order.append(nd)
        if self.ground not in order:
            order.append(self.ground)
        object.__setattr__(self, "nodes", tuple(order))
        object.__setattr__(self, "elements", tuple(self.elements))

    def node_name(self, node: str) -> str:
        return f"{self.voltage_prefix}{node}"

    def element(self, name: str) -> Element:
        for el in self.elements:
            if el.name == name:
                return el
        raise KeyError(name)

    def with_values(self, **values) -> "Netlist":
        els = tuple(replace(el, value=float(values[el.name])) if el.name in values else el
                    for el in self.elements)
        return replace(self, elements=els)


@dataclass(frozen=True)
class CircuitDae:
    dae: LinearDae
    names: tuple
    aux_defs: tuple
    netlist: Netlist
    meta: dict = field(default_factory=dict)

    def system(self) -> CombinedSystem:
        return combine(self.dae)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def with_values(self, **values) -> "CircuitDae":
        out = assemble(self.netlist.with_values(**values), self.dae.x0)
        return replace(out, meta=self.meta)


def variable_names(net: Netlist) -> tuple:
    diff = [el.current_name for el in net.elements if el.kind == "L"]
    diff += [el.aux_name for el in net.elements if el.kind == "C"]
    alg = [net.node_name(nd) for nd in net.nodes]
    alg += [el.current_name for el in net.elements if el.kind != "L"]
    return tuple(diff), tuple(alg)


def assemble(net: Netlist, x0=None) -> CircuitDae:
    diff, alg = variable_names(net)
    names = diff + alg
    if len(set(names)) != len(names):
        raise ValueError("variable names collide")
    col = {nm: k for k, nm in enumerate(names)}
    n1, n = len(diff), len(names)
    a = np.zeros((n, n))
    src_rows = []  # (row, sign, callable)

    touched = {nd: 0 for nd in net.nodes}
    for el in net.elements:
        touched[el.n_plus] += 1
        touched[el.n_minus] += 1
    for nd, cnt in touched.items():
        if cnt == 0 and nd != net.ground:
            raise FloatingNode(f"node {nd!r} has no elements")

    kcl = {nd: np.zeros(n) for nd in net.nodes}
    for el in net.elements:
        ic = col[el.current_name]
        kcl[el.n_plus][ic] += 1.0
        kcl[el.n_minus][ic] -= 1.0

    aux_defs = []
    for el in net.elements:
        i = col[el.current_name]
        ep, em = col[net.node_name(el.n_plus)], col[net.node_name(el.n_minus)]
        if el.kind == "L":
            a[i, ep] -= 1.0 / el.value
            a[i, em] += 1.0 / el.value
        elif el.kind == "C":
            v = col[el.aux_name]
            a[v, i] = -1.0 / el.value
            a[i, v] = 1.0
            a[i, ep] -= 1.0
            a[i, em] += 1.0
            aux_defs.append((el.aux_name, net.node_name(el.n_plus), net.node_name(el.n_minus)))
        elif el.kind == "G":
            a[i, ep] += el.value
            a[i, em] -= el.value
            a[i, i] = -1.0
        elif el.kind == "R":
            a[i, ep] += 1.0
            a[i, em] -= 1.0
            a[i, i] = -el.value
        elif el.kind == "V":
            a[i, ep] += 1.0
            a[i, em] -= 1.0
            a[i, i] = -el.value
            src_rows.append((i, 1.0, el.source))
        elif el.kind == "I":
            a[i, i] = -1.0
            src_rows.append((i, -1.0, el.source))

    for nd in net.nodes:
        row = col[net.node_name(nd)]
        if nd == net.ground:
            a[row, row] = 1.0
        elif nd == net.drop_kcl:
            a[row] = kcl[net.ground]
        else:
            a[row] = kcl[nd]

    def forcing(t, _rows=tuple(src_rows), _n1=n1, _n=n):
        b = np.zeros(_n)
        for r, sgn, f in _rows:
            b[r] = sgn * (f(t) if f is not None else 0.0)
        return b[:_n1], b[_n1:]

    # Cutsets of inductors and current sources make D singular (index 2); only
    # a singular pencil, where no step size gives a solvable step, is rejected.
    mask = np.arange(n) < n1
    for dt in (1e-3, 0.37):
        step = np.where(mask[:, None], dt * a, a) + np.diag(mask.astype(float))
        try:
            lu_factor_checked(step, SingularAlgebraicBlock)
            break
        except SingularAlgebraicBlock:
            continue
    else:
        raise SingularAlgebraicBlock("no time step gives a solvable step; check grounding and sources")
    x0 = np.zeros(n1) if x0 is None else np.asarray(x0, dtype=float)
    dae = LinearDae(a[:n1, :n1], a[:n1, n1:], a[n1:, :n1], a[n1:, n1:], forcing, x0, names, check_d=False)
    return CircuitDae(dae, names, tuple(aux_defs), net)


# netlist text format

_TOKEN = re.compile(r"\S+")
_SOURCE_KINDS = {"VSRC": "V", "ISRC": "I"}
_PASSIVE = {"R": "R", "G": "G", "L": "L", "C": "C"}


def parse_netlist(text: str) -> Netlist:
    """Parse the line-oriented netlist format (see README for the grammar)."""
    elements, ground, prefix, drop = [], None, "e", None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        toks = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(body)]
        if not toks:
            continue
        head, hcol = toks[0]
        key = head.upper()

        def need(count):
            if len(toks) < count:
                col = toks[-1][1] + len(toks[-1][0])
                raise NetlistSyntaxError(f"{head}: expected {count - 1} fields", lineno, col)

        def num(k):
            tok, col = toks[k]
            try:
                return float(tok)
            except ValueError:
                raise NetlistSyntaxError(f"not a number: {tok!r}", lineno, col) from None

        if key == "GROUND":
            need(2)
            ground = toks[1][0]
            continue
        if key == "PREFIX":
            need(2)
            prefix = toks[1][0]
            continue
        if key == "DROPKCL":
            need(2)
            drop = toks[1][0]
            continue
        opts, pos = {}, []
        for tok, col in toks[1:]:
            if "=" in tok:
                k, _, v = tok.partition("=")
                opts[k.lower()] = (v, col)
            else:
                pos.append((tok, col))
        toks = [(head, hcol)] + pos
        if key in _PASSIVE:
            need(5)
            el = Element(_PASSIVE[key], toks[1][0], toks[2][0], toks[3][0], num(4))
        elif key in _SOURCE_KINDS:
            kind = _SOURCE_KINDS[key]
            need(5)
            amp = num(4)
            freq = num(5) if len(toks) > 5 else 0.0
            zs = num(6) if kind == "V" and len(toks) > 6 else 0.0
            wave, wcol = opts.pop("wave", ("cos" if freq else "dc", hcol))
            wave = wave.lower()
            if wave not in ("cos", "sin", "dc"):
                raise NetlistSyntaxError(f"unknown waveform {wave!r}", lineno, wcol)
            el = Element(kind, toks[1][0], toks[2][0], toks[3][0], zs, Waveform(amp, freq, wave))
        else:
            raise NetlistSyntaxError(f"unknown element {head!r}", lineno, hcol)
        extra = {}
        if "current" in opts:
            extra["current"] = opts.pop("current")[0]
        if "aux" in opts:
            extra["aux"] = opts.pop("aux")[0]
        if opts:
            k, (_, col) = next(iter(opts.items()))
            raise NetlistSyntaxError(f"unknown option {k!r}", lineno, col)
        elements.append(replace(el, **extra))
    if ground is None:
        raise NetlistSyntaxError("missing 'ground <node>' line", max(1, len(text.splitlines())), 1)
    return Netlist(tuple(elements), ground, voltage_prefix=prefix, drop_kcl=drop)


# reference circuits

OMEGA_HZ = 50.0

PRESETS = {
    "ex1": dict(l1=0.4, l2=0.5, c=1e-6, g=2e-3, e=10.0, ei=1e-3, zs=0.0),
    "ex2": dict(l1=0.4, l2=0.3, c=1e-6, g=2e-3, e=10.0, ei=1e-3, zs=0.0),
    "ex2-swapped": dict(l1=0.5, l2=0.7, c=1e-6, g=2e-3, e=10.0, ei=1e-3, zs=0.0),
    "ex2-nonlinear": dict(l1=0.6, l2=0.7, c=1e-6, g0=10.0, alpha=2000.0, e=10.0, ei=1e-3, zs=0.0),
    "emt-ts": dict(l1=0.7, l2=0.7, c1=1e-6, c2=1e-6, r1=77.0, r2=77.0, zs=1e-6, e=5.0),
    "emt-ts-disturbed": dict(l1=0.07, l2=0.07, c1=1e-5, c2=1e-7, r1=7.0, r2=7.0, zs=1e-6, e=5.0,
                        disturb=(0.02, 0.021, 1.5)),
    "emt-ts-divergent": dict(l1=0.07, l2=0.07, c1=1e-6, c2=1e-6, r1=7.0, r2=7.0, zs=1e-6, e=5.0),
}

# phasor-side base sets (everything else is solved in the time domain), with
# the overlap depth.  The R1-C1 arc couples weakly and runs stably over long
# horizons; the wider L1..R2 arc couples strongly enough that the iteration
# diverges for the ``emt-ts-divergent`` values.
TS_BASES = {
    "emt-ts": (("v3", "i34", "v4", "vC1", "i45"), 1),
    "emt-ts-disturbed": (("v3", "i34", "v4", "vC1", "i45"), 1),
    "emt-ts-divergent": (("i23", "v3", "i34", "v4", "vC1", "i45", "v5", "i56", "v6"), 1),
}


def normalize_id(which: str) -> str:
    key = which.replace("_", "-").lower()
    if key not in PRESETS:
        raise UnknownCircuitId(f"unknown circuit {which!r}; known: {', '.join(PRESETS)}")
    return key


def _two_loop(p: dict, second_ground: bool, ev_kind: str, g_value: float) -> Netlist:
    l1_to = "r" if second_ground else "2"
    els = (
        Element("L", "L1", "1", l1_to, p["l1"], current="i1"),
        Element("G", "G", "1", "2", g_value, current="i2"),
        Element("L", "L2", "2", "r", p["l2"], current="i3"),
        Element("C", "C", "3", "2", p["c"], current="i4", aux="v1"),
        Element("V", "Ev", "1", "3", p["zs"], Waveform(p["e"], OMEGA_HZ, ev_kind), current="i5"),
        Element("I", "Ei", "3", "r", 0.0, Waveform(p["ei"], OMEGA_HZ, "sin"), current="i6"),
    )
    return Netlist(els, "r", ("1", "2", "3", "r"), "e", "1" if second_ground else None)


def _emt_ts(p: dict) -> Netlist:
    wave = Waveform(p["e"], OMEGA_HZ, "cos", p.get("disturb"))
    els = (
        Element("V", "E", "2", "1", p["zs"], wave, current="i12"),
        Element("L", "L1", "3", "2", p["l1"], current="i23"),
        Element("R", "R1", "4", "3", p["r1"], current="i34"),
        Element("C", "C1", "5", "4", p["c1"], current="i45", aux="vC1"),
        Element("R", "R2", "6", "5", p["r2"], current="i56"),
        Element("L", "L2", "7", "6", p["l2"], current="i67"),
        Element("C", "C2", "1", "7", p["c2"], current="i71", aux="vC2"),
    )
    return Netlist(els, "1", tuple("1234567"), "v")


def partition_by_names(circ: CircuitDae, base_names, p: int) -> OverlapPartition:
    sys = circ.system()
    graph = AdjacencyGraph.from_matrix(sys.big_a)
    sets = [[circ.index(nm) for nm in group] for group in base_names]
    return grow_overlap(graph, sets, p, sys.diff_mask)


def reference_circuit(which: str, **overrides) -> tuple[CircuitDae, OverlapPartition]:
    """One of the reference circuits with its two-way partition.

    Ids: ``ex1``, ``ex2``, ``ex2-swapped``, ``ex2-nonlinear``, ``emt-ts``,
    ``emt-ts-disturbed``, ``emt-ts-divergent`` (underscores are accepted too).
    Keyword overrides replace preset parameters.
    """
    key = normalize_id(which)
    params = dict(PRESETS[key])
    for k, v in overrides.items():
        if v is None:
            continue
        if k not in params:
            raise ValueError(f"parameter {k!r} not used by circuit {key!r}")
        params[k] = v
    for k, v in params.items():
        if isinstance(v, float) and k not in ("e", "ei", "zs", "alpha") and v <= 0:
            raise ValueError(f"parameter {k} must be positive")
        if k == "zs" and v < 0:
            raise ValueError("source impedance must be non-negative")
    if key.startswith("emt-ts"):
        circ = assemble(_emt_ts(params))
        circ = replace(circ, meta={"id": key, "params": params})
        ts_base, depth = TS_BASES[key]
        emt_base = [nm for nm in circ.names if nm not in ts_base]
        return circ, partition_by_names(circ, [emt_base, list(ts_base)], depth)
    nonlinear = key == "ex2-nonlinear"
    g = 1.0 / params["g0"] if nonlinear else params["g"]
    net = _two_loop(params, key != "ex1", "sin" if nonlinear else "cos", g)
    circ = assemble(net)
    meta = {"id": key, "params": params, "kind": "ex1" if key == "ex1" else "ex2"}
    if nonlinear:
        meta["nonlinear"] = {"element": "G", "current": "i2", "g0": params["g0"], "alpha": params["alpha"]}
    circ = replace(circ, meta=meta)
    rest = [nm for nm in circ.names if nm != "i1"]
    return circ, partition_by_names(circ, [["i1"], rest], 0)
