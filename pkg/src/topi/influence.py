"""Token influence scoring for reference tokens.

A reference token's influence at one layer and head is the norm of its value
vector times the total attention it receives from the noisy tokens. Summing
over representative layers and heads gives the score used for pruning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("influence", "attn_only", "similarity")


class MissingCaptureError(KeyError):
    pass


@dataclass(frozen=True)
class InfluenceScores:
    values: np.ndarray
    kind: str = "influence"
    layers: tuple = ()
    timestep: int | None = None
    ref_index: np.ndarray | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.values)

    @property
    def total(self) -> float:
        return float(np.sum(self.values))


def contribution_norms(capture) -> np.ndarray:
    """``||A_ij v_j||`` for every (head, noisy i, reference j).

    Attention weights are non-negative scalars, so the norm factors as
    ``A_ij * ||v_j||``.
    """
    return capture.attn * capture.value_norms[:, None, :]


def _by_layer(captures, layers):
    found = {cp.layer: cp for cp in captures}
    layers = tuple(sorted(found)) if layers is None else tuple(layers)
    missing = [ly for ly in layers if ly not in found]
    if missing:
        raise MissingCaptureError(f"no capture for layers {missing}")
    return [found[ly] for ly in layers], layers


def _weighted_mass(caps, use_values: bool) -> np.ndarray:
    total = None
    for cp in caps:
        received = cp.attn.sum(axis=1)  # (heads, |C|)
        weighted = cp.value_norms * received if use_values else received
        term = np.sum(weighted, axis=0)
        total = term if total is None else total + term
    return total


def influence_scores(captures, layers=None, timestep=None) -> InfluenceScores:
    """Sum over layers and heads of ``||v_j|| * sum_i A_ij``."""
    caps, layers = _by_layer(captures, layers)
    return InfluenceScores(_weighted_mass(caps, True), "influence", layers, timestep, caps[0].ref_index)


def attn_only_scores(captures, layers=None, timestep=None) -> InfluenceScores:
    caps, layers = _by_layer(captures, layers)
    return InfluenceScores(_weighted_mass(caps, False), "attn_only", layers, timestep, caps[0].ref_index)


def similarity_scores(captures, layers=None, timestep=None) -> InfluenceScores:
    """Redundancy baseline: each reference token scores the negative of its mean
    cosine similarity to the other reference tokens, averaged over the given
    layers' pre-attention hidden states. Highly redundant tokens rank lowest."""
    caps, layers = _by_layer(captures, layers)
    acc = None
    for cp in caps:
        h = cp.ref_hidden
        n = h.shape[0]
        unit = h / np.maximum(np.linalg.norm(h, axis=1, keepdims=True), 1e-12)
        sim = unit @ unit.T
        if n > 1:
            mean_other = (sim.sum(axis=1) - np.diag(sim)) / (n - 1)
        else:
            mean_other = np.zeros(n)
        acc = -mean_other if acc is None else acc - mean_other
    return InfluenceScores(acc / len(caps), "similarity", layers, timestep, caps[0].ref_index)


def baseline_scores(kind: str, captures, layers=None, timestep=None) -> InfluenceScores:
    if kind == "attn_only":
        return attn_only_scores(captures, layers, timestep)
    if kind == "similarity":
        return similarity_scores(captures, layers, timestep)
    raise ValueError(f"unknown baseline kind {kind!r}")


def score(kind: str, captures, layers=None, timestep=None) -> InfluenceScores:
    if kind == "influence":
        return influence_scores(captures, layers, timestep)
    return baseline_scores(kind, captures, layers, timestep)
