"""Experiment configuration and the end-to-end runs behind the CLI."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .calibration import (
    DEFAULT_M,
    RepresentativeLayers,
    SensitivityTable,
    select_layers,
    sensitivity_scores,
)
from .engine import ConfigError, ModelConfig, build_model, make_noise, make_reference, run_trajectory
from .pruning import METRICS, REDUCTIONS, AnchorSchedule, PrunerPolicy

SCHEMA_VERSION = 1
TAU_GRID = (0.6, 0.7, 0.8, 0.85, 0.9, 1.0)
ABLATIONS = (
    "tau_sweep", "static", "dynamic", "prune", "merge",
    "influence", "attn_only", "similarity", "random",
    "layers_top_m", "layers_first", "layers_last", "layers_random", "layers_all",
)


@dataclass
class PolicyConfig:
    tau: float = 0.85
    delta_t: int = 10
    static: bool = False
    metric: str = "influence"
    reduction: str = "prune"
    k_exempt: int | None = None
    M: int = DEFAULT_M
    layer_strategy: str = "top_m"
    layers: list | None = None
    clamp: bool = True


@dataclass
class CalibrationConfig:
    source: str = "fresh"
    path: str | None = None
    n_samples: int = 2
    probe: str = "anchors"
    sample_seed: int = 1000


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    sample_seed: int = 0
    out: str = "topi_out"
    compare_full: bool = True

    def validate(self):
        p = self.policy
        if not 0.0 <= p.tau <= 1.0:
            raise ConfigError("policy.tau must lie in [0, 1]")
        if p.delta_t < 1:
            raise ConfigError("policy.delta_t must be >= 1")
        if p.metric not in METRICS:
            raise ConfigError(f"policy.metric must be one of {METRICS}")
        if p.reduction not in REDUCTIONS:
            raise ConfigError(f"policy.reduction must be one of {REDUCTIONS}")
        k = self.k_exempt
        if not 0 <= k < self.model.n_layers:
            raise ConfigError("policy.k_exempt must lie in [0, layer count)")
        if self.calibration.source not in ("fresh", "file"):
            raise ConfigError("calibration.source must be 'fresh' or 'file'")
        if self.calibration.source == "file":
            if not self.calibration.path or not Path(self.calibration.path).exists():
                raise ConfigError(f"calibration file {self.calibration.path!r} does not exist")
        if self.calibration.n_samples < 1:
            raise ConfigError("calibration.n_samples must be >= 1")
        return self

    @property
    def k_exempt(self) -> int:
        p = self.policy
        return self.model.depth_double // 2 if p.k_exempt is None else p.k_exempt

    @classmethod
    def from_dict(cls, data: dict):
        data = dict(data)
        data.pop("schema_version", None)
        try:
            model = ModelConfig(**data.pop("model", {}))
            policy = PolicyConfig(**data.pop("policy", {}))
            calib = CalibrationConfig(**data.pop("calibration", {}))
            cfg = cls(model=model, policy=policy, calibration=calib, **data)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None
        return cfg.validate()

    @classmethod
    def load(cls, path=None, seed=None, out=None):
        """Read a JSON config (or defaults). Output directory precedence:
        ``out`` argument, then ``TOPI_OUT``, then the file's ``out``."""
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
        if seed is not None:
            data.setdefault("model", {})["seed"] = seed
        cfg = cls.from_dict(data)
        if os.environ.get("TOPI_OUT"):
            cfg.out = os.environ["TOPI_OUT"]
        if out is not None:
            cfg.out = out
        return cfg

    def to_dict(self) -> dict:
        from dataclasses import asdict

        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model.to_dict(),
            "policy": asdict(self.policy),
            "calibration": asdict(self.calibration),
            "sample_seed": self.sample_seed,
            "out": self.out,
            "compare_full": self.compare_full,
        }


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def calibration_samples(cfg: ExperimentConfig) -> list:
    base = cfg.calibration.sample_seed
    return [(base + i, make_reference(cfg.model, base + i)) for i in range(cfg.calibration.n_samples)]


def calibrate(cfg: ExperimentConfig) -> SensitivityTable:
    model = build_model(cfg.model)
    probe = "all" if cfg.calibration.probe == "all" else None
    return sensitivity_scores(model, calibration_samples(cfg), probe)


def resolve_layers(cfg: ExperimentConfig, strategy: str | None = None, table=None) -> RepresentativeLayers:
    p = cfg.policy
    strategy = strategy or p.layer_strategy
    if p.layers is not None and strategy == p.layer_strategy:
        return RepresentativeLayers(tuple(p.layers), "explicit")
    if strategy in ("first", "last", "all", "random"):
        return select_layers([0.0] * cfg.model.n_layers, p.M, strategy, cfg.model.seed)
    if table is None:
        if cfg.calibration.source == "file":
            data = json.loads(Path(cfg.calibration.path).read_text())
            if "layers" in data and "scores" not in data:
                return RepresentativeLayers.from_json(data)
            table = SensitivityTable.from_json(data)
        else:
            table = calibrate(cfg)
    return select_layers(table, p.M, strategy)


def make_policy(cfg: ExperimentConfig, layers, tau=None, metric=None, reduction=None, static=None) -> PrunerPolicy:
    p = cfg.policy
    T = cfg.model.T
    static = p.static if static is None else static
    schedule = AnchorSchedule.static(T) if static else AnchorSchedule.every(T, p.delta_t)
    return PrunerPolicy(
        tau=p.tau if tau is None else tau,
        schedule=schedule,
        layers=tuple(layers),
        n_ref=cfg.model.n_ref,
        metric=metric or p.metric,
        reduction=reduction or p.reduction,
        k_exempt=cfg.k_exempt,
        clamp=p.clamp,
        seed=cfg.sample_seed,
    )


def sample_inputs(cfg: ExperimentConfig):
    return make_noise(cfg.model, cfg.sample_seed), make_reference(cfg.model, cfg.sample_seed)


def run_full(cfg: ExperimentConfig, capture_layers=()):
    noise, ref = sample_inputs(cfg)
    return run_trajectory(build_model(cfg.model), noise, ref, capture_layers=capture_layers)


def run_pruned(cfg: ExperimentConfig, policy: PrunerPolicy):
    noise, ref = sample_inputs(cfg)
    return run_trajectory(build_model(cfg.model), noise, ref, pruner=policy)


def mask_history(record) -> dict:
    return {"schema_version": SCHEMA_VERSION, "masks": {str(t): v for t, v in record.masks.items()}}


def summarize(record, policy: PrunerPolicy | None, full=None, label: str = "") -> dict:
    """One report row for a pruned (or full) run."""
    row = {"label": label}
    if policy is not None:
        b_steps = [s["retained"] for s in record.steps if s["mode"] == "B"]
        first = policy.history[max(policy.history)]
        row.update(
            tau=policy.tau,
            metric=policy.metric,
            reduction=policy.reduction,
            layers=list(policy.layers),
            anchors=len(record.mode_a_steps),
            k_sel_first_anchor=first.k_sel,
            mean_retained=float(np.mean(b_steps)) if b_steps else float(record.config.n_ref),
            context_token_fraction=_token_fraction(record),
        )
    if full is not None:
        row["quality"] = metrics.compare(full.final, record.final).to_json()
    return row


def _token_fraction(record) -> float:
    """Reference tokens processed across all steps, relative to no pruning."""
    n = record.config.n_ref
    return float(np.mean([s["retained"] for s in record.steps]) / n)


def run_ablation(cfg: ExperimentConfig, name: str, layers=None, full=None) -> dict:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")
    full = run_full(cfg) if full is None else full
    rows = []
    if name.startswith("layers_"):
        strat = name[len("layers_"):]
        chosen = resolve_layers(cfg, strat)
        pol = make_policy(cfg, chosen.layers)
        rows.append(summarize(run_pruned(cfg, pol), pol, full, name))
    else:
        layers = resolve_layers(cfg).layers if layers is None else layers
        if name == "tau_sweep":
            for tau in TAU_GRID:
                pol = make_policy(cfg, layers, tau=tau)
                rows.append(summarize(run_pruned(cfg, pol), pol, full, f"tau={tau}"))
        elif name in ("static", "dynamic"):
            pol = make_policy(cfg, layers, static=(name == "static"))
            rows.append(summarize(run_pruned(cfg, pol), pol, full, name))
        elif name in REDUCTIONS:
            pol = make_policy(cfg, layers, reduction=name)
            rows.append(summarize(run_pruned(cfg, pol), pol, full, name))
        else:
            pol = make_policy(cfg, layers, metric=name)
            rows.append(summarize(run_pruned(cfg, pol), pol, full, name))
    return {"schema_version": SCHEMA_VERSION, "ablation": name, "rows": rows}


def expected_anchor_count(T: int, delta_t: int) -> int:
    return math.ceil(T / delta_t)
