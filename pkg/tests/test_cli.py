import json
import math

import pytest

from topi.cli import main

TINY = {
    "model": {"depth_double": 2, "depth_single": 2, "heads": 2, "head_dim": 8,
              "n_noisy": 16, "n_ref": 16, "n_prompt": 4, "T": 12},
    "policy": {"tau": 0.85, "delta_t": 5, "M": 2},
}


@pytest.fixture
def config(tmp_path):
    def write(**policy):
        data = json.loads(json.dumps(TINY))
        data["policy"].update(policy)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(data))
        return str(path)

    return write


def run(*argv):
    return main([str(a) for a in argv])


def test_calibrate_writes_files_deterministically(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert run("--config", config(), "--out", out, "calibrate") == 0
    layers = json.loads((out / "layers.json").read_text())
    assert layers["M"] == 2 and len(layers["layers"]) == 2
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run("--config", config(), "--out", out, "calibrate") == 0
    assert first == {p.name: p.read_bytes() for p in out.iterdir()}


def test_calibrate_m_out_of_range(config, tmp_path, capsys):
    assert run("--config", config(M=99), "--out", tmp_path, "calibrate") == 2
    assert "M=99" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"policy": {"tau": 1.5}}))
    assert run("--config", bad, "--out", tmp_path, "run", "--mode", "full") == 2
    assert run("--config", tmp_path / "missing.json", "run") == 2


def test_full_then_pruned_at_full_retention(config, tmp_path):
    cfg = config(tau=1.0)
    assert run("--config", cfg, "--out", tmp_path, "run", "--mode", "full") == 0
    assert (tmp_path / "trajectory_full.json").exists()
    assert run("--config", cfg, "--out", tmp_path, "run", "--mode", "pruned") == 0
    report = json.loads((tmp_path / "report_pruned.json").read_text())
    assert report["quality"]["psnr"] == 99.0
    masks = json.loads((tmp_path / "masks_pruned.json").read_text())
    assert masks["schema_version"] == 1


def test_tau_sweep(config, tmp_path):
    assert run("--config", config(), "--out", tmp_path, "run", "--mode", "ablation:tau_sweep") == 0
    rows = json.loads((tmp_path / "ablation_tau_sweep.json").read_text())["rows"]
    assert len(rows) == 6
    ks = [r["k_sel_first_anchor"] for r in rows]
    assert ks == sorted(ks)


def test_static_vs_dynamic_anchors(config, tmp_path):
    cfg = config()
    for name in ("static", "dynamic"):
        assert run("--config", cfg, "--out", tmp_path, "run", "--mode", f"ablation:{name}") == 0
    static = json.loads((tmp_path / "ablation_static.json").read_text())["rows"][0]
    dynamic = json.loads((tmp_path / "ablation_dynamic.json").read_text())["rows"][0]
    assert static["anchors"] == 1
    assert dynamic["anchors"] == math.ceil(TINY["model"]["T"] / 5)


def test_unknown_mode(config, tmp_path):
    assert run("--config", config(), "--out", tmp_path, "run", "--mode", "ablation:nope") == 2


def test_flops_defaults(tmp_path, capsys):
    assert run("--out", tmp_path, "flops") == 0
    text = capsys.readouterr().out
    for value in ("1241.25", "725.85", "3298.53", "2473.90", "206.16", "4745.94", "3405.91", "-41.5%", "-28.2%",
                  "3504.69", "4398.05", "274.88", "5914.17", "4299.26", "-27.3%"):
        assert value in text
    data = json.loads((tmp_path / "flops.json").read_text())
    printed = [line.split() for line in text.splitlines() if line.strip().startswith("Layer Total")]
    for rep, line in zip(data["reports"], printed):
        total = rep["rows"][-1]
        assert f"{total['baseline_gflops']:.2f}" == line[2]
        assert f"{total['pruned_gflops']:.2f}" == line[3]
        assert round(rep["total_flops"]["baseline"] / 1e9, 2) == total["baseline_gflops"]


def test_flops_no_pruning_zero_reduction(tmp_path, capsys):
    assert run("--out", tmp_path, "flops", "--n-img", 1024, "--pruned-n-img", 1024) == 0
    data = json.loads((tmp_path / "flops.json").read_text())
    assert all(r["reduction_pct"] == 0.0 for rep in data["reports"] for r in rep["rows"])
    assert run("--out", tmp_path, "flops", "--n-img", 10, "--pruned-n-img", 20) == 2


def test_topi_out_env(config, tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv("TOPI_OUT", str(env_dir))
    assert run("--config", config(), "run", "--mode", "full") == 0
    assert (env_dir / "trajectory_full.json").exists()
    flag_dir = tmp_path / "flag"
    assert run("--config", config(), "--out", flag_dir, "run", "--mode", "full") == 0
    assert (flag_dir / "trajectory_full.json").exists()


def test_report_writes_csv(config, tmp_path):
    assert run("--config", config(), "--out", tmp_path, "report") == 0
    summary = json.loads((tmp_path / "report.json").read_text())
    assert summary["csv"] == ["layer_profile.csv", "temporal_profile.csv", "token_profile.csv"]
    assert (tmp_path / "layer_profile.csv").read_text().startswith("# schema_version: 1\n")
