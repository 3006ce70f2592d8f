"""Overlapping vertex partitions of the matrix graph and their restriction maps.

Restriction operators are kept as sorted index arrays.  ``operator`` builds
the explicit 0/1 matrices when a test or an analysis needs them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyInterface, NotACover, UnknownSelector


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected graph with an edge ``i ~ j`` whenever ``A[i,j]`` or ``A[j,i]`` is nonzero."""

    n: int
    neighbors: tuple

    @classmethod
    def from_matrix(cls, mat, tol: float = 0.0) -> "AdjacencyGraph":
        mat = np.asarray(mat)
        pattern = np.abs(mat) > tol
        pattern = pattern | pattern.T
        np.fill_diagonal(pattern, False)
        nbrs = tuple(frozenset(np.flatnonzero(row).tolist()) for row in pattern)
        return cls(mat.shape[0], nbrs)

    @classmethod
    def from_edges(cls, n: int, edges) -> "AdjacencyGraph":
        adj = [set() for _ in range(n)]
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) out of range")
            if i != j:
                adj[i].add(j)
                adj[j].add(i)
        return cls(n, tuple(frozenset(a) for a in adj))

    @property
    def edges(self) -> set:
        return {(i, j) for i in range(self.n) for j in self.neighbors[i]}

    def ring(self, vertices) -> set:
        """``vertices`` plus all their immediate neighbors."""
        out = set(vertices)
        for v in vertices:
            out |= self.neighbors[v]
        return out


_WHICH = ("extended", "owned", "base", "external")
_KIND = (None, "d", "a")


@dataclass(frozen=True)
class OverlapPartition:
    """``N`` base sets grown ``p`` rings, with external sets one ring further.

    ``base[i]``, ``extended[i]`` and ``external[i]`` are ascending index arrays
    for ``W_i^0``, ``W_i^p`` and ``W_i^{p+1} minus W_i^p``.
    """

    n: int
    p: int
    base: tuple
    extended: tuple
    external: tuple
    diff_mask: np.ndarray
    swallowed: tuple

    @property
    def n_parts(self) -> int:
        return len(self.base)

    @property
    def n1(self) -> int:
        return int(self.diff_mask.sum())

    def owner(self) -> np.ndarray:
        own = np.empty(self.n, dtype=int)
        for i, b in enumerate(self.base):
            own[b] = i
        return own

    def owned_mask(self, i: int) -> np.ndarray:
        """Positions of ``W_i^0`` inside the local ``W_i^p`` ordering."""
        return np.isin(self.extended[i], self.base[i])

    def indices(self, i: int, which: str = "extended", kind=None) -> np.ndarray:
        if which not in _WHICH or kind not in _KIND:
            raise UnknownSelector(f"unknown selector ({which!r}, {kind!r})")
        idx = {"extended": self.extended, "owned": self.extended,
               "base": self.base, "external": self.external}[which][i]
        if kind == "d":
            return idx[idx < self.n1]
        if kind == "a":
            return idx[idx >= self.n1] - self.n1
        return idx

    def restrict(self, v, i: int, which: str = "extended", kind=None) -> np.ndarray:
        """Apply one restriction operator to ``v``.

        ``which="owned"`` yields the local-length vector with zeros on the
        overlap ``W_i^p minus W_i^0``.  With ``kind`` set to ``"d"`` or ``"a"``
        ``v`` is the differential (length n1) or algebraic (length n2) part.
        """
        v = np.asarray(v)
        idx = self.indices(i, which, kind)
        out = v[idx]
        if which == "owned":
            if kind is None:
                keep = self.owned_mask(i)
            else:
                base = self.indices(i, "base", kind)
                keep = np.isin(idx, base)
            out = np.where(keep, out, 0.0)
        return out

    def operator(self, i: int, which: str = "extended", kind=None) -> np.ndarray:
        """Explicit matrix of the restriction selected by ``which``/``kind``."""
        size = {None: self.n, "d": self.n1, "a": self.n - self.n1}[kind]
        return np.stack([self.restrict(col, i, which, kind) for col in np.eye(size)], axis=1) \
            if size else np.zeros((len(self.indices(i, which, kind)), 0))

    def to_json(self, names: Sequence[str] | None = None) -> str:
        label = (lambda k: names[k]) if names is not None else int
        doc = {
            "vertices": list(names) if names is not None else list(range(self.n)),
            "base": [[label(k) for k in b] for b in self.base],
            "p": self.p,
            "differential": [label(k) for k in np.flatnonzero(self.diff_mask)],
        }
        return json.dumps(doc, indent=2)


def grow_overlap(graph: AdjacencyGraph, base: Sequence, p: int, diff_mask=None) -> OverlapPartition:
    if p < 0:
        raise ValueError("overlap depth must be >= 0")
    n = graph.n
    sets = [sorted(set(int(v) for v in b)) for b in base]
    seen = np.zeros(n, dtype=int)
    for b in sets:
        for v in b:
            if not 0 <= v < n:
                raise NotACover(f"vertex {v} out of range")
            seen[v] += 1
    if (seen != 1).any():
        bad = np.flatnonzero(seen != 1).tolist()
        raise NotACover(f"base sets must be disjoint and cover all vertices; offending {bad}")
    if diff_mask is None:
        diff_mask = np.zeros(n, dtype=bool)
    diff_mask = np.asarray(diff_mask, dtype=bool)

    extended, external, swallowed = [], [], []
    for b in sets:
        w = set(b)
        for _ in range(p):
            w = graph.ring(w)
        nxt = graph.ring(w)
        extended.append(np.array(sorted(w), dtype=int))
        external.append(np.array(sorted(nxt - w), dtype=int))
        swallowed.append(len(nxt) == n)
    return OverlapPartition(
        n=n,
        p=p,
        base=tuple(np.array(b, dtype=int) for b in sets),
        extended=tuple(extended),
        external=tuple(external),
        diff_mask=diff_mask,
        swallowed=tuple(swallowed),
    )


def partition_from_json(text: str, graph: AdjacencyGraph, names: Sequence[str] | None = None) -> OverlapPartition:
    """Read the partition description format written by ``OverlapPartition.to_json``.

    Vertices may be given by name (when ``names`` is supplied) or by index.
    """
    doc = json.loads(text)
    lookup = {name: k for k, name in enumerate(names)} if names is not None else {}

    def vid(v):
        if isinstance(v, int):
            return v
        if v in lookup:
            return lookup[v]
        raise NotACover(f"unknown vertex {v!r}")

    base = [[vid(v) for v in b] for b in doc["base"]]
    mask = np.zeros(graph.n, dtype=bool)
    for v in doc.get("differential", []):
        mask[vid(v)] = True
    return grow_overlap(graph, base, int(doc.get("p", 0)), mask)


@dataclass(frozen=True)
class InterfaceMap:
    """Concatenated external sets ``[W_0e, ..., W_{N-1}e]``."""

    gamma: np.ndarray
    owner: np.ndarray
    offsets: np.ndarray

    @property
    def n_gamma(self) -> int:
        return self.gamma.size

    def slots(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def restrict(self, z) -> np.ndarray:
        return np.asarray(z)[self.gamma]

    def operator(self, n: int) -> np.ndarray:
        r = np.zeros((self.n_gamma, n))
        r[np.arange(self.n_gamma), self.gamma] = 1.0
        return r


def interface_map(part: OverlapPartition) -> InterfaceMap:
    if part.n_parts > 1 and all(e.size == 0 for e in part.external):
        raise EmptyInterface("no partition has a nonempty external set")
    sizes = [e.size for e in part.external]
    gamma = np.concatenate(part.external) if part.external else np.zeros(0, dtype=int)
    owner = np.repeat(np.arange(part.n_parts), sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    return InterfaceMap(gamma.astype(int), owner, offsets)
