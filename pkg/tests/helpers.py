"""Shared builders for the test suite."""

import numpy as np

from rasdi.circuits import Element, Netlist, Waveform, assemble
from rasdi.dae import LinearDae, combine
from rasdi.errors import InconsistentInitialState, SingularMatrixError
from rasdi.partition import AdjacencyGraph, grow_overlap
from rasdi.ras import RasSplitting


def scalar_dae(a, b, c, d, b1=0.0, b2=0.0, x0=0.0):
    return LinearDae([[a]], [[b]], [[c]], [[d]], lambda t: ([b1], [b2]), [x0])


def random_ladder(rng, max_n=20):
    """Random RLC ladder driven by a cosine source; returns a CircuitDae with n <= max_n."""
    kinds = ("R", "L", "C", "G")
    while True:
        k = int(rng.integers(2, 5))
        els = [Element("V", "E", "1", "0", float(rng.uniform(0.0, 0.5)),
                       Waveform(float(rng.uniform(0.5, 2.0)), 50.0, "cos"))]
        for j in range(1, k):
            kind = kinds[rng.integers(4)]
            els.append(Element(kind, f"S{j}", str(j), str(j + 1), float(np.exp(rng.uniform(-1, 1)))))
        for j in range(1, k + 1):
            kind = kinds[rng.integers(4)]
            els.append(Element(kind, f"P{j}", str(j), "0", float(np.exp(rng.uniform(-1, 1)))))
        net = Netlist(tuple(els), "0")
        try:
            circ = assemble(net, None)
        except SingularMatrixError:
            continue
        if circ.dae.n > max_n:
            continue
        circ = assemble(net, rng.normal(size=circ.dae.n1))
        try:
            circ.system()
        except InconsistentInitialState:
            continue
        return circ


def random_split(rng, sys, dt, tries=200):
    """Random two-way base split with random overlap depth and regular local matrices."""
    graph = AdjacencyGraph.from_matrix(sys.big_a)
    for _ in range(tries):
        mask = rng.random(sys.n) < 0.5
        if mask.all() or not mask.any():
            continue
        base = [np.flatnonzero(mask), np.flatnonzero(~mask)]
        part = grow_overlap(graph, base, int(rng.integers(0, 2)), sys.diff_mask)
        if any(e.size == 0 for e in part.external):
            continue
        try:
            split = RasSplitting(sys, part, dt)
        except SingularMatrixError:
            continue
        if np.linalg.cond(split.step_mat) > 1e8 or max(np.linalg.cond(l.a_tilde) for l in split.locals) > 1e8:
            continue
        return part, split
    raise RuntimeError("no admissible split found")


def random_system_and_split(seed, dt=1e-2):
    rng = np.random.default_rng(seed)
    while True:
        circ = random_ladder(rng)
        sys = circ.system()
        if np.linalg.cond(sys.step_matrix(dt)) > 1e8:
            continue
        try:
            part, split = random_split(rng, sys, dt)
        except RuntimeError:
            continue
        return circ, sys, part, split


def combined_scalar(a, b, c, d, **kw):
    return combine(scalar_dae(a, b, c, d, **kw))
