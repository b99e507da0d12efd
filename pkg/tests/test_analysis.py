import csv
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import random_capture
from topi.analysis import AttentionProfile, layer_profile, target_aware_score, temporal_profile, token_profile
from topi.engine import ToyDiT, make_noise, make_reference, run_trajectory


def _record(config, model=None, layers=None):
    model = model or ToyDiT(config)
    layers = range(config.n_layers) if layers is None else layers
    return run_trajectory(model, make_noise(config, 3), make_reference(config, 3), capture_layers=layers)


def test_uniform_attention():
    g, c, p = 5, 4, 3
    total = g + c + p
    attn = np.full((2, g, c), 1.0 / total)
    assert np.allclose(target_aware_score(attn), 1.0 / total, atol=1e-15)


def test_one_hot_attention():
    attn = np.zeros((1, 6, 4))
    attn[:, :, 0] = 1.0
    assert target_aware_score(attn).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_empty_queries_rejected():
    with pytest.raises(ValueError):
        target_aware_score(np.zeros((2, 0, 4)))


def test_nested_loop_oracle():
    rng = np.random.default_rng(0)
    cap = random_capture(rng)
    H, G, C = cap.attn.shape
    want = np.zeros(C)
    for j in range(C):
        acc = 0.0
        for h in range(H):
            for i in range(G):
                acc += cap.attn[h, i, j]
        want[j] = acc / (G * H)
    assert np.max(np.abs(target_aware_score(cap) - want)) <= 1e-12


def test_profiles_on_trajectory(tiny_config):
    rec = _record(tiny_config)
    lp = layer_profile(rec)
    tp = temporal_profile(rec)
    assert sorted(lp) == list(range(tiny_config.n_layers))
    assert list(tp) == list(range(tiny_config.T, 0, -1))
    assert all(0.0 <= v <= 1.0 + 1e-9 for v in lp.values())
    for step in rec.steps:
        for entry in step["ref_attention"].values():
            assert float(np.sum(entry["score"])) <= 1.0 + 1e-9
    # both profiles average the same (layer, step) grid
    assert abs(np.mean(list(lp.values())) - np.mean(list(tp.values()))) <= 1e-12


def test_temporal_matches_recomputation(tiny_config):
    model = ToyDiT(tiny_config)
    rec = _record(tiny_config, model)
    per_step = {}

    def collect(t, cap):
        per_step.setdefault(t, []).append(target_aware_score(cap).sum())

    run_trajectory(model, make_noise(tiny_config, 3), make_reference(tiny_config, 3),
                   capture_layers=range(tiny_config.n_layers), on_capture=collect)
    tp = temporal_profile(rec)
    for t, vals in per_step.items():
        assert abs(tp[t] - np.mean(vals)) <= 1e-12


def test_single_layer_profile(tiny_config):
    rec = _record(tiny_config, layers=[1])
    lp = layer_profile(rec)
    totals = [float(np.sum(s["ref_attention"]["1"]["score"])) for s in rec.steps]
    assert list(lp) == [1]
    assert abs(lp[1] - np.mean(totals)) <= 1e-15


def test_constant_attention_is_flat():
    score = np.full(4, 0.05)
    steps = [{"t": t, "ref_attention": {"0": {"ref_index": np.arange(4), "score": score}}} for t in range(5, 0, -1)]
    rec = SimpleNamespace(steps=steps, config=SimpleNamespace(n_ref=4))
    series = list(temporal_profile(rec).values())
    assert len(series) == 5 and len(set(series)) == 1


def test_boosted_reference_keys_exceed_median(tiny_config):
    boosted = 1
    rec = _record(tiny_config, ToyDiT(tiny_config, ref_key_scale={boosted: 4.0}))
    lp = layer_profile(rec)
    assert lp[boosted] > np.median(list(lp.values()))


def test_token_profile_marks_pruned(tiny_config):
    from topi.pruning import AnchorSchedule, PrunerPolicy

    pol = PrunerPolicy(tau=0.5, schedule=AnchorSchedule.every(tiny_config.T, 3), layers=(0, 1), n_ref=tiny_config.n_ref,
                       k_exempt=1)
    rec = run_trajectory(ToyDiT(tiny_config), make_noise(tiny_config, 3), make_reference(tiny_config, 3), pruner=pol,
                         capture_layers=(2, 3))
    prof = token_profile(rec, layers=(2, 3))
    b_step = next(s for s in rec.steps if s["mode"] == "B")
    row = prof[b_step["t"]]
    assert np.isnan(row).sum() == tiny_config.n_ref - b_step["retained"]


def test_csv_output(tiny_config, tmp_path):
    rec = _record(tiny_config)
    paths = AttentionProfile.from_record(rec).write_csv(tmp_path)
    assert sorted(p.name for p in paths) == ["layer_profile.csv", "temporal_profile.csv", "token_profile.csv"]
    lines = (tmp_path / "temporal_profile.csv").read_text().splitlines()
    assert lines[0] == "# schema_version: 1"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["timestep", "total_attention"]
    assert len(rows) - 1 == tiny_config.T
    tokens = list(csv.reader((tmp_path / "token_profile.csv").read_text().splitlines()[1:]))
    assert len(tokens) - 1 == tiny_config.T * tiny_config.n_ref
