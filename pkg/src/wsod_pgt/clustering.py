"""Graph-based proposal cluster centres.

Candidates become vertices, pairs overlapping by more than ``edge_threshold``
become edges, and centres are picked greedily by degree: take the best
connected vertex, drop it together with its neighbours, repeat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from wsod_pgt.geometry import BBox, iou

DEFAULT_EDGE_THRESHOLD = 0.4
DEFAULT_ASSIGN_THRESHOLD = 0.5

BACKGROUND = -1


@dataclass(frozen=True)
class ScoredProposal:
    bbox: BBox
    score: float
    index: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score!r} outside [0, 1]")


@dataclass(frozen=True)
class ProposalGraph:
    vertices: tuple[int, ...]
    edges: frozenset[frozenset[int]]
    edge_threshold: float

    def neighbors(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {v: set() for v in self.vertices}
        for e in self.edges:
            u, v = tuple(e)
            adj[u].add(v)
            adj[v].add(u)
        return adj


@dataclass(frozen=True)
class ClusterAssignment:
    centers: tuple[ScoredProposal, ...]
    assigned: dict[int, int]
    """proposal index -> centre index, or BACKGROUND"""
    best_iou: dict[int, float]
    """proposal index -> IoU with its centre (best centre IoU for background)"""

    def members(self, center_index: int) -> list[int]:
        return [i for i, c in self.assigned.items() if c == center_index]


def _check_unique(cands: Sequence[ScoredProposal]) -> None:
    if len({c.index for c in cands}) != len(cands):
        raise ValueError("candidate indices must be unique")


def build_graph(cands: Sequence[ScoredProposal], edge_threshold: float = DEFAULT_EDGE_THRESHOLD) -> ProposalGraph:
    if not 0.0 < edge_threshold < 1.0:
        raise ValueError(f"edge_threshold must lie in (0, 1), got {edge_threshold}")
    _check_unique(cands)
    edges = set()
    for a in range(len(cands)):
        for b in range(a + 1, len(cands)):
            if iou(cands[a].bbox, cands[b].bbox) > edge_threshold:
                edges.add(frozenset((cands[a].index, cands[b].index)))
    return ProposalGraph(tuple(c.index for c in cands), frozenset(edges), edge_threshold)


def select_centers(g: ProposalGraph, cands: Sequence[ScoredProposal]) -> list[ScoredProposal]:
    """Greedy max-degree selection; degree ties go to the higher score, then
    the lower index."""
    by_index = {c.index: c for c in cands}
    adj = g.neighbors()
    centers = []
    while adj:
        pick = min(adj, key=lambda v: (-len(adj[v]), -by_index[v].score, v))
        centers.append(by_index[pick])
        gone = adj[pick] | {pick}
        for v in gone:
            del adj[v]
        for nbrs in adj.values():
            nbrs -= gone
    return centers


def assign_clusters(
    proposals: Sequence[ScoredProposal],
    centers: Sequence[ScoredProposal],
    assign_threshold: float = DEFAULT_ASSIGN_THRESHOLD,
) -> ClusterAssignment:
    """Attach each proposal to the centre it overlaps most (first centre on
    ties) when that overlap reaches ``assign_threshold``; the rest is
    background. Centres always own themselves."""
    if not 0.0 < assign_threshold <= 1.0:
        raise ValueError(f"assign_threshold must lie in (0, 1], got {assign_threshold}")
    center_ids = {c.index for c in centers}
    assigned, best = {}, {}
    for p in proposals:
        if p.index in center_ids:
            assigned[p.index], best[p.index] = p.index, 1.0
            continue
        top, top_iou = BACKGROUND, 0.0
        for c in centers:
            o = iou(p.bbox, c.bbox)
            if o > top_iou:
                top, top_iou = c.index, o
        assigned[p.index] = top if top_iou >= assign_threshold else BACKGROUND
        best[p.index] = top_iou
    return ClusterAssignment(tuple(centers), assigned, best)


def cluster(
    cands: Sequence[ScoredProposal],
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
    assign_threshold: float = DEFAULT_ASSIGN_THRESHOLD,
) -> ClusterAssignment:
    g = build_graph(cands, edge_threshold)
    return assign_clusters(cands, select_centers(g, cands), assign_threshold)
