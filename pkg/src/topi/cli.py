"""``topi`` command line: calibrate, run, flops, report.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import flops as fl
from .analysis import AttentionProfile
from .calibration import CalibrationError, model_fingerprint, select_layers
from .engine import ConfigError
from .experiment import (
    ABLATIONS,
    ExperimentConfig,
    calibrate,
    dump_json,
    make_policy,
    mask_history,
    resolve_layers,
    run_ablation,
    run_full,
    run_pruned,
    summarize,
)

log = logging.getLogger("topi")


def cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    table = calibrate(cfg)
    layers = select_layers(table, cfg.policy.M, "top_m")
    out = Path(cfg.out)
    dump_json(table.to_json(), out / "sensitivity.json")
    dump_json(layers.to_json(), out / "layers.json")
    print(f"layers {list(layers.layers)} (M={len(layers)}) -> {out / 'layers.json'}")
    return 0


def cmd_run(cfg: ExperimentConfig, args) -> int:
    mode = args.mode
    out = Path(cfg.out)
    if mode == "full":
        rec = run_full(cfg)
        dump_json(rec.to_json(), out / "trajectory_full.json")
        print(f"full run: {len(rec.steps)} steps -> {out / 'trajectory_full.json'}")
        return 0
    full = run_full(cfg) if cfg.compare_full else None
    if mode == "pruned":
        layers = resolve_layers(cfg)
        pol = make_policy(cfg, layers.layers)
        rec = run_pruned(cfg, pol)
        dump_json(rec.to_json(), out / "trajectory_pruned.json")
        dump_json(mask_history(rec), out / "masks_pruned.json")
        row = summarize(rec, pol, full, "pruned")
        dump_json({"schema_version": 1, **row}, out / "report_pruned.json")
        msg = f"pruned run: layers {list(pol.layers)}, anchors {rec.mode_a_steps}, mean retained {row['mean_retained']:.1f}"
        if full is not None:
            msg += f", psnr {row['quality']['psnr']:.2f} dB"
        print(msg)
        return 0
    if mode.startswith("ablation:"):
        name = mode.split(":", 1)[1]
        report = run_ablation(cfg, name, full=full)
        path = dump_json(report, out / f"ablation_{name}.json")
        for r in report["rows"]:
            q = r.get("quality", {})
            print(f"{r['label']:<16} K_sel@T={r['k_sel_first_anchor']:>4}  anchors={r['anchors']}  psnr={q.get('psnr', float('nan')):.2f}")
        print(f"-> {path}")
        return 0
    raise ConfigError(f"unknown mode {mode!r}; expected full, pruned or ablation:<{'|'.join(ABLATIONS)}>")


def cmd_flops(cfg, args) -> int:
    variants = fl.VARIANTS if args.variant == "all" else (args.variant,)
    pruned = args.n_img if args.pruned_n_img is None else args.pruned_n_img
    if not 0 <= pruned <= args.n_img:
        raise ConfigError("--pruned-n-img must lie in [0, --n-img]")
    reports = [fl.layer_breakdown(fl.CostConfig(args.n_img, args.n_prompt, args.d, v), pruned) for v in variants]
    n_ref = args.n_ref if args.n_ref is not None else args.n_img // 2
    ov = fl.overhead_flops(args.layers, args.n_img - n_ref, n_ref, args.dt, args.heads)
    for r in reports:
        print(r.format_table())
    base_total = reports[0].total_baseline
    print(f"overhead per mask update: scoring {ov.scoring} FLOPs, selection {ov.selection} comparisons; "
          f"amortized {float(ov.amortized) / base_total * 100:.4f}% of one {reports[0].variant} layer")
    payload = {
        "schema_version": 1,
        "reports": [r.to_json() for r in reports],
        "overhead": {**ov.to_json(), "delta_t": args.dt, "layers": args.layers, "heads": args.heads},
    }
    out = Path(cfg.out) if cfg is not None else Path(args.out or "topi_out")
    dump_json(payload, out / "flops.json")
    return 0


def cmd_report(cfg: ExperimentConfig, args) -> int:
    rec = run_full(cfg, capture_layers=range(cfg.model.n_layers))
    out = Path(cfg.out)
    paths = AttentionProfile.from_record(rec).write_csv(out)
    summary = {
        "schema_version": 1,
        "fingerprint": model_fingerprint(cfg.model),
        "csv": sorted(p.name for p in paths),
        "runs": sorted(p.name for p in out.glob("report_*.json")) + sorted(p.name for p in out.glob("ablation_*.json")),
    }
    dump_json(summary, out / "report.json")
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="topi", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON experiment config (defaults if omitted)")
    ap.add_argument("--seed", type=int, help="override model.seed")
    ap.add_argument("--out", help="output directory (overrides TOPI_OUT and config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("calibrate", help="score layers and write sensitivity.json + layers.json")
    run = sub.add_parser("run", help="run a trajectory (full, pruned or an ablation)")
    run.add_argument("--mode", default="pruned", help="full | pruned | ablation:<name>")
    fp = sub.add_parser("flops", help="print the single-layer FLOPs breakdown and write flops.json")
    fp.add_argument("--variant", default="all", choices=("all",) + fl.VARIANTS)
    fp.add_argument("--n-img", type=int, default=8192)
    fp.add_argument("--n-prompt", type=int, default=512)
    fp.add_argument("--d", type=int, default=4096)
    fp.add_argument("--pruned-n-img", type=int, default=6144)
    fp.add_argument("--dt", type=int, default=10, help="mask update interval for the overhead estimate")
    fp.add_argument("--layers", type=int, default=3, help="representative layer count for the overhead estimate")
    fp.add_argument("--heads", type=int, default=32)
    fp.add_argument("--n-ref", type=int, default=None, help="reference tokens within --n-img (default half)")
    sub.add_parser("report", help="write attention-profile CSVs and an index of existing reports")
    return ap


COMMANDS = {"calibrate": cmd_calibrate, "run": cmd_run, "flops": cmd_flops, "report": cmd_report}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed, args.out)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CalibrationError) as exc:
        print(f"topi: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"topi: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
