"""Fidelity-constrained token selection, anchor scheduling and context realignment."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np

from .influence import InfluenceScores, score
from .tensor import Xoshiro256pp, derive_seed

METRICS = ("influence", "attn_only", "similarity", "random")
REDUCTIONS = ("prune", "merge")


@dataclass(frozen=True)
class RetentionMask:
    keep: np.ndarray
    anchor: int | None = None
    clamped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "keep", np.asarray(self.keep, dtype=bool))
        self.keep.setflags(write=False)

    @property
    def k_sel(self) -> int:
        return int(self.keep.sum())

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    def __eq__(self, other):
        return (
            isinstance(other, RetentionMask)
            and np.array_equal(self.keep, other.keep)
            and self.anchor == other.anchor
            and self.clamped == other.clamped
        )

    @classmethod
    def full(cls, n: int, anchor=None):
        return cls(np.ones(n, dtype=bool), anchor)


@dataclass(frozen=True)
class AnchorSchedule:
    anchors: tuple
    interval: int | None = None

    def __post_init__(self):
        a = tuple(int(x) for x in self.anchors)
        if not a or any(x <= y for x, y in zip(a, a[1:])):
            raise ValueError("anchor timesteps must be non-empty and strictly decreasing")
        object.__setattr__(self, "anchors", a)

    @classmethod
    def every(cls, T: int, interval: int):
        if interval < 1:
            raise ValueError("interval must be >= 1")
        return cls(tuple(range(T, 0, -interval)), interval)

    @classmethod
    def static(cls, T: int):
        return cls((T,), None)

    def __contains__(self, t):
        return t in self.anchors

    def __len__(self):
        return len(self.anchors)


def select_subset(scores, tau: float, clamp: bool = True) -> RetentionMask:
    """Smallest set of tokens whose scores sum to at least ``tau`` of the total.

    Tokens are taken greedily in descending score order (ties: lower index
    first). With ``clamp`` the result always keeps at least one token when
    there is one to keep.
    """
    values = np.asarray(scores.values if isinstance(scores, InfluenceScores) else scores, dtype=np.float64)
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if not np.all(np.isfinite(values)):
        raise ValueError("scores must be finite")
    n = len(values)
    keep = np.zeros(n, dtype=bool)
    if n == 0:
        return RetentionMask(keep)
    order = np.argsort(-values, kind="stable")
    total = math.fsum(values)
    target = tau * total
    prefix = np.cumsum(values[order])
    if tau >= 1.0:
        k = int(np.count_nonzero(values > 0)) if total > 0 else 0
    elif target <= 0.0:
        k = 0
    else:
        k = min(int(np.searchsorted(prefix, target, side="left")) + 1, n)
        # settle the boundary with exactly rounded sums
        while k > 0 and math.fsum(values[order[: k - 1]]) >= target:
            k -= 1
        while k < n and math.fsum(values[order[:k]]) < target:
            k += 1
    clamped = False
    if clamp and k == 0:
        k, clamped = 1, True
    keep[order[:k]] = True
    return RetentionMask(keep, clamped=clamped)


def realign_context(H_ref, P_ref, mask: RetentionMask, ref_index=None):
    """Gather retained rows of the hidden states and their positions together,
    keeping original relative order."""
    keep = mask.keep if isinstance(mask, RetentionMask) else np.asarray(mask, dtype=bool)
    H_ref = np.asarray(H_ref)
    P_ref = np.asarray(P_ref)
    if len(keep) != H_ref.shape[0] or len(keep) != len(P_ref):
        raise ValueError(f"mask length {len(keep)} does not match {H_ref.shape[0]} reference tokens")
    idx = np.flatnonzero(keep)
    if ref_index is None:
        return H_ref[idx], P_ref[idx]
    return H_ref[idx], P_ref[idx], np.asarray(ref_index)[idx]


def merge_context(H_ref, P_ref, mask: RetentionMask, scores=None):
    """Fold every pruned token into its nearest retained token (Euclidean
    distance on hidden states); each retained token becomes the unweighted
    mean of itself and the tokens assigned to it. Positions of retained tokens
    are unchanged. ``scores`` is accepted for interface symmetry and unused."""
    keep = mask.keep if isinstance(mask, RetentionMask) else np.asarray(mask, dtype=bool)
    H_ref = np.asarray(H_ref, dtype=np.float64)
    kept = np.flatnonzero(keep)
    if len(kept) == 0:
        raise ValueError("merge needs at least one retained token")
    pruned = np.flatnonzero(~keep)
    out = H_ref[kept].copy()
    if len(pruned):
        diff = H_ref[pruned][:, None, :] - H_ref[kept][None, :, :]
        nearest = np.argmin(np.einsum("pkd,pkd->pk", diff, diff), axis=1)
        counts = np.ones(len(kept))
        np.add.at(out, nearest, H_ref[pruned])
        np.add.at(counts, nearest, 1.0)
        out /= counts[:, None]
    return out, np.asarray(P_ref)[kept]


@dataclass
class PrunerPolicy:
    """Holds the pruning configuration plus the one mutable slot: the current mask.

    ``update`` is called by the engine at anchor steps with full-context
    captures; ``reduce`` is applied to the sequence in every other step.
    """

    tau: float
    schedule: AnchorSchedule
    layers: tuple
    n_ref: int
    metric: str = "influence"
    reduction: str = "prune"
    k_exempt: int = 0
    clamp: bool = True
    seed: int = 0
    mask: RetentionMask = None
    last_scores: InfluenceScores | None = None
    history: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.reduction!r}")
        if self.k_exempt < 0:
            raise ValueError("k_exempt must be >= 0")
        self.layers = tuple(int(x) for x in self.layers)
        if self.mask is None:
            self.mask = RetentionMask.full(self.n_ref)

    def is_anchor(self, t: int) -> bool:
        return t in self.schedule

    def compute_mask(self, t: int, captures) -> RetentionMask:
        """Influence and attn_only apply the tau rule to their own scores.
        Similarity and random have no mass interpretation, so they keep as many
        tokens as the influence rule would and only change which ones."""
        if self.metric in ("influence", "attn_only"):
            scores = score(self.metric, captures, self.layers, t)
            mask = select_subset(scores, self.tau, self.clamp)
        else:
            budget = select_subset(score("influence", captures, self.layers, t), self.tau, self.clamp)
            if self.metric == "similarity":
                scores = score("similarity", captures, self.layers, t)
                ranking = scores.values
            else:
                scores = None
                rng = Xoshiro256pp(derive_seed(self.seed, t, 0x5EED))
                ranking = rng.uniform01(self.n_ref)
            chosen = np.argsort(-np.asarray(ranking), kind="stable")[: budget.k_sel]
            keep = np.zeros(self.n_ref, dtype=bool)
            keep[chosen] = True
            mask = RetentionMask(keep, clamped=budget.clamped)
        self.last_scores = scores
        return replace(mask, anchor=t)

    def update(self, t: int, captures, counters: Counter | None = None) -> RetentionMask:
        self.mask = self.compute_mask(t, captures)
        self.history[t] = self.mask
        if counters is not None:
            counters["score_computations"] += 1
        return self.mask

    def reduce(self, state, counters: Counter | None = None):
        if counters is not None:
            counters["gather_ops"] += 1
            counters["gather_rows"] += self.mask.k_sel
        if self.reduction == "merge":
            h, p = merge_context(state.H_ref, state.P_ref, self.mask)
            idx = state.ref_index[self.mask.keep]
        else:
            h, p, idx = realign_context(state.H_ref, state.P_ref, self.mask, state.ref_index)
        return replace(state, H_ref=h, P_ref=p, ref_index=idx)


def current_mask(policy: PrunerPolicy, t: int, scores_provider) -> RetentionMask:
    """Mask in force at step ``t``: recomputed from fresh full-context captures
    at anchors, otherwise carried over from the previous step."""
    if policy.is_anchor(t):
        return policy.update(t, scores_provider())
    return policy.mask
