"""Reference implementations of the detector training losses.

These are scalar kernels for checking numbers, not training code. Logs are
natural logs, and a log of zero is reported as :class:`LossDomainError`
instead of being clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

class LossDomainError(ValueError):
    pass


def _log(v: float, what: str) -> float:
    if not v > 0.0:
        raise LossDomainError(f"log of non-positive {what}: {v!r}")
    return math.log(v)


def smooth_l1(x: float) -> float:
    ax = abs(x)
    return 0.5 * x * x if ax < 1.0 else ax - 0.5


def smooth_l1_grad(x: float) -> float:
    if abs(x) < 1.0:
        return x
    return math.copysign(1.0, x)


def _check_vec4(v: Sequence[float], what: str) -> None:
    if len(v) != 4 or not all(math.isfinite(c) for c in v):
        raise ValueError(f"{what} must be 4 finite numbers, got {v!r}")


def _check_prob(p: float, what: str) -> None:
    if not (math.isfinite(p) and 0.0 <= p <= 1.0):
        raise ValueError(f"{what} must lie in [0, 1], got {p!r}")


def localization_loss(t: Sequence[float], v: Sequence[float]) -> float:
    _check_vec4(t, "t")
    _check_vec4(v, "v")
    return sum(smooth_l1(ti - vi) for ti, vi in zip(t, v))


def frcnn_loss(
    p: Sequence[float],
    u: int,
    t: Sequence[float],
    v: Sequence[float],
    lam: float = 1.0,
) -> float:
    """Fast R-CNN multi-task loss for one RoI.

    ``p`` is the distribution over background (index 0) and the C object
    classes; the box term only counts for object classes (``u >= 1``).
    """
    for i, pi in enumerate(p):
        _check_prob(pi, f"p[{i}]")
    if abs(math.fsum(p) - 1.0) > 1e-9:
        raise ValueError(f"class distribution sums to {math.fsum(p)}, not 1")
    if not 0 <= u < len(p):
        raise ValueError(f"class index {u} outside 0..{len(p) - 1}")
    cls = -_log(p[u], f"p[{u}]")
    if u < 1:
        _check_vec4(t, "t")
        _check_vec4(v, "v")
        return cls
    return cls + lam * localization_loss(t, v)


@dataclass(frozen=True)
class Anchor:
    p: float
    label: int
    t: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    t_star: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        _check_prob(self.p, "anchor probability")
        if self.label not in (0, 1):
            raise ValueError(f"anchor label must be 0 or 1, got {self.label!r}")
        _check_vec4(self.t, "t")
        _check_vec4(self.t_star, "t*")


@dataclass(frozen=True)
class RPNBatchInput:
    anchors: tuple[Anchor, ...]
    n_cls: float
    n_reg: float
    lam: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(self.anchors))
        if not (self.n_cls > 0 and self.n_reg > 0):
            raise ValueError("normalizers N_cls and N_reg must be positive")


def rpn_loss(batch: RPNBatchInput) -> float:
    cls = 0.0
    reg = 0.0
    for a in batch.anchors:
        if a.label == 1:
            cls -= _log(a.p, "anchor probability")
            reg += sum(smooth_l1(ti - si) for ti, si in zip(a.t, a.t_star))
        else:
            cls -= _log(1.0 - a.p, "anchor background probability")
    return cls / batch.n_cls + batch.lam * reg / batch.n_reg


@dataclass(frozen=True)
class ProposalCluster:
    confidence: float
    """cluster confidence in [0, 1]"""
    member_scores: tuple[float, ...]
    """score of the cluster's label for every member proposal"""

    def __post_init__(self) -> None:
        object.__setattr__(self, "member_scores", tuple(self.member_scores))
        _check_prob(self.confidence, "cluster confidence")
        if not self.member_scores:
            raise ValueError("a proposal cluster needs at least one member")
        for s in self.member_scores:
            _check_prob(s, "member score")

    @property
    def size(self) -> int:
        return len(self.member_scores)


@dataclass(frozen=True)
class BagLossInput:
    n_proposals: int
    clusters: tuple[ProposalCluster, ...] = ()
    background_weights: tuple[float, ...] = ()
    background_scores: tuple[float, ...] = field(default=())
    """background-class score of every background proposal"""

    def __post_init__(self) -> None:
        for name in ("clusters", "background_weights", "background_scores"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.background_weights) != len(self.background_scores):
            raise ValueError("one weight per background proposal is required")
        for w in self.background_weights:
            _check_prob(w, "background weight")
        for s in self.background_scores:
            _check_prob(s, "background score")
        if self.n_proposals < 1:
            raise ValueError(f"n_proposals must be >= 1, got {self.n_proposals}")
        total = sum(c.size for c in self.clusters) + len(self.background_scores)
        if total != self.n_proposals:
            raise ValueError(
                f"clusters and background hold {total} proposals, expected {self.n_proposals}"
            )


def pcl_bag_loss(inp: BagLossInput) -> float:
    """Bag loss of one refinement stream.

    Each cluster contributes ``S_n * M_n * log(mean member score)``; every
    background proposal contributes ``lambda_r * log(background score)``.
    """
    for n, c in enumerate(inp.clusters):
        for s in c.member_scores:
            _log(s, f"member score of cluster {n}")
    total = 0.0
    for n, c in enumerate(inp.clusters):
        total += c.confidence * c.size * _log(sum(c.member_scores) / c.size, f"cluster {n} mean score")
    for r, (w, s) in enumerate(zip(inp.background_weights, inp.background_scores)):
        total += w * _log(s, f"background score {r}")
    return -total / inp.n_proposals
