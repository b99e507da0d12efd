"""Measurements of how much attention noisy tokens pay to the reference.

The per-token quantity is the target-aware score: attention a reference token
receives, averaged over noisy queries and heads. Summed over reference tokens
it is the share of attention the reference gets, which is below 1 because
softmax rows also cover noisy and prompt keys.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_SCHEMA_VERSION = 1


def target_aware_score(capture) -> np.ndarray:
    attn = np.asarray(capture.attn if hasattr(capture, "attn") else capture, dtype=np.float64)
    n_heads, n_noisy, _ = attn.shape
    if n_noisy == 0 or n_heads == 0:
        raise ValueError("target-aware score is undefined without noisy queries")
    return attn.sum(axis=(0, 1)) / (n_noisy * n_heads)


def _totals(record):
    """``{(layer, t): sum_j S_j}`` for every captured (layer, step)."""
    out = {}
    for step in record.steps:
        for layer, entry in step.get("ref_attention", {}).items():
            out[(int(layer), step["t"])] = float(np.sum(entry["score"]))
    if not out:
        raise ValueError("trajectory has no attention captures; run it with capture_layers")
    return out


def layer_profile(record) -> dict:
    """Total reference attention per layer, averaged over captured steps."""
    grid = _totals(record)
    layers = sorted({ly for ly, _ in grid})
    return {ly: float(np.mean([v for (l2, _), v in grid.items() if l2 == ly])) for ly in layers}


def temporal_profile(record) -> dict:
    """Total reference attention per timestep (descending t), averaged over layers."""
    grid = _totals(record)
    steps = sorted({t for _, t in grid}, reverse=True)
    return {t: float(np.mean([v for (_, t2), v in grid.items() if t2 == t])) for t in steps}


def token_profile(record, layers=None) -> dict:
    """``{t: array of S_j}`` over the original reference tokens, averaged over
    ``layers`` (default: every captured layer). Tokens absent at a step (pruned)
    are NaN."""
    n_ref = record.config.n_ref
    out = {}
    for step in record.steps:
        entries = step.get("ref_attention", {})
        chosen = [e for ly, e in entries.items() if layers is None or int(ly) in layers]
        if not chosen:
            continue
        acc = np.zeros(n_ref)
        for e in chosen:
            row = np.full(n_ref, np.nan)
            row[np.asarray(e["ref_index"], dtype=int)] = e["score"]
            acc += row
        out[step["t"]] = acc / len(chosen)
    return out


@dataclass
class AttentionProfile:
    layer_totals: dict = field(default_factory=dict)
    step_totals: dict = field(default_factory=dict)
    token_series: dict = field(default_factory=dict)

    @classmethod
    def from_record(cls, record, layers=None):
        return cls(layer_profile(record), temporal_profile(record), token_profile(record, layers))

    def write_csv(self, out_dir) -> list[Path]:
        """Writes ``layer_profile.csv`` (layer,total_attention),
        ``temporal_profile.csv`` (timestep,total_attention) and
        ``token_profile.csv`` (timestep,token,score). Each file starts with a
        ``# schema_version: N`` comment line."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []

        def emit(name, header, rows):
            path = out_dir / name
            with path.open("w", newline="") as fh:
                fh.write(f"# schema_version: {CSV_SCHEMA_VERSION}\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            paths.append(path)

        emit("layer_profile.csv", ["layer", "total_attention"], [(k, repr(v)) for k, v in self.layer_totals.items()])
        emit("temporal_profile.csv", ["timestep", "total_attention"], [(k, repr(v)) for k, v in self.step_totals.items()])
        emit(
            "token_profile.csv",
            ["timestep", "token", "score"],
            [(t, j, repr(float(v))) for t, row in self.token_series.items() for j, v in enumerate(row)],
        )
        return paths
