"""Offline choice of representative layers.

Each layer's context sensitivity is the total noisy-to-reference attention
mass (summed over heads, noisy queries and reference keys), averaged over a
calibration set and a fixed set of probe timesteps. The top-M layers by that
score are used for influence scoring at inference time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .engine import make_noise, run_trajectory
from .tensor import Xoshiro256pp, derive_seed

STRATEGIES = ("top_m", "random", "first", "last", "all")
DEFAULT_M = 3
DEFAULT_INTERVAL = 10

# Published representative layers for the two production backbones, with
# their total attention-layer counts.
REFERENCE_FIXTURES = {
    "flux": ((13, 18, 31), 57),
    "qwen": ((35, 37, 42), 60),
}


class CalibrationError(ValueError):
    pass


def model_fingerprint(config) -> str:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_probe_steps(T: int, interval: int = DEFAULT_INTERVAL) -> tuple:
    return tuple(range(T, 0, -interval))


@dataclass(frozen=True)
class SensitivityTable:
    scores: tuple
    n_samples: int
    probe_steps: tuple
    fingerprint: str

    @property
    def n_layers(self) -> int:
        return len(self.scores)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "fingerprint": self.fingerprint,
            "n_samples": self.n_samples,
            "probe_steps": list(self.probe_steps),
            "scores": [float(s) for s in self.scores],
        }

    @classmethod
    def from_json(cls, data: dict):
        return cls(tuple(data["scores"]), data["n_samples"], tuple(data["probe_steps"]), data["fingerprint"])


@dataclass(frozen=True)
class RepresentativeLayers:
    layers: tuple
    strategy: str = "top_m"

    def __post_init__(self):
        layers = tuple(sorted(int(x) for x in self.layers))
        if len(set(layers)) != len(layers):
            raise CalibrationError("representative layers must be distinct")
        object.__setattr__(self, "layers", layers)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def to_json(self) -> dict:
        return {"schema_version": 1, "strategy": self.strategy, "M": len(self.layers), "layers": list(self.layers)}

    @classmethod
    def from_json(cls, data: dict):
        return cls(tuple(data["layers"]), data.get("strategy", "top_m"))


def sensitivity_scores(model, calib_samples, probe_steps=None) -> SensitivityTable:
    """``calib_samples`` is a list of ``(noise_seed, reference)`` pairs.
    ``probe_steps="all"`` probes every timestep."""
    samples = list(calib_samples)
    if not samples:
        raise CalibrationError("calibration needs at least one sample")
    c = model.config
    if probe_steps is None:
        probe_steps = default_probe_steps(c.T)
    elif probe_steps == "all":
        probe_steps = tuple(range(c.T, 0, -1))
    probe_steps = tuple(sorted(set(int(t) for t in probe_steps), reverse=True))
    all_layers = range(c.n_layers)
    per_sample = np.zeros((len(samples), c.n_layers))
    for s, (noise_seed, reference) in enumerate(samples):
        mass = np.zeros((len(probe_steps), c.n_layers))
        row = {t: i for i, t in enumerate(probe_steps)}

        def collect(t, cap, _mass=mass, _row=row):
            _mass[_row[t], cap.layer] = cap.attn.sum()

        run_trajectory(model, make_noise(c, noise_seed), reference, capture_layers=all_layers,
                       capture_steps=set(probe_steps), on_capture=collect)
        per_sample[s] = mass.mean(axis=0)
    scores = per_sample.mean(axis=0)
    return SensitivityTable(tuple(float(x) for x in scores), len(samples), probe_steps, model_fingerprint(c))


def select_layers(table, M: int = DEFAULT_M, strategy: str = "top_m", seed: int = 0) -> RepresentativeLayers:
    scores = np.asarray(table.scores if isinstance(table, SensitivityTable) else table, dtype=np.float64)
    n = len(scores)
    if strategy not in STRATEGIES:
        raise CalibrationError(f"unknown strategy {strategy!r}")
    if strategy == "all":
        return RepresentativeLayers(tuple(range(n)), strategy)
    if not 1 <= M <= n:
        raise CalibrationError(f"M={M} outside [1, {n}]")
    if strategy == "top_m":
        chosen = np.argsort(-scores, kind="stable")[:M]
    elif strategy == "first":
        chosen = range(M)
    elif strategy == "last":
        chosen = range(n - M, n)
    else:
        keys = Xoshiro256pp(derive_seed(seed, 0x1A7E)).uniform01(n)
        chosen = np.argsort(keys, kind="stable")[:M]
    return RepresentativeLayers(tuple(int(i) for i in chosen), strategy)


def load_reference_fixture(name: str) -> RepresentativeLayers:
    try:
        layers, _ = REFERENCE_FIXTURES[name]
    except KeyError:
        raise CalibrationError(f"unknown fixture {name!r}; expected one of {sorted(REFERENCE_FIXTURES)}") from None
    return RepresentativeLayers(layers, "fixture")


def fixture_depth(name: str) -> int:
    return REFERENCE_FIXTURES[name][1]
