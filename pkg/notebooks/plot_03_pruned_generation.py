"""
Pruned denoising against the full run
=====================================

Anchor steps run the full context and refresh the mask; the steps in between
gather only the retained reference rows, with their rotary positions, after
the first few exempt layers.
"""

from topi.experiment import ExperimentConfig, make_policy, resolve_layers, run_full, run_pruned, summarize

cfg = ExperimentConfig()
layers = resolve_layers(cfg).layers  # calibrated top-3 layers
full = run_full(cfg)
print("representative layers:", layers)

for tau in (0.5, 0.7, 0.85, 1.0):
    pol = make_policy(cfg, layers, tau=tau)
    rec = run_pruned(cfg, pol)
    row = summarize(rec, pol, full)
    q = row["quality"]
    print(f"tau={tau:<4} anchors={rec.mode_a_steps} kept={row['mean_retained']:5.1f} "
          f"psnr={q['psnr']:6.2f} ssim={q['ssim']:.4f}")

###############################################################################
# Same budget, different choice of tokens
for metric in ("influence", "attn_only", "similarity", "random"):
    pol = make_policy(cfg, layers, metric=metric)
    row = summarize(run_pruned(cfg, pol), pol, full)
    print(f"{metric:<10} K={row['k_sel_first_anchor']:2d} psnr={row['quality']['psnr']:.2f}")

###############################################################################
# Dropping tokens versus folding them into their nearest kept neighbour
for reduction in ("prune", "merge"):
    pol = make_policy(cfg, layers, reduction=reduction)
    row = summarize(run_pruned(cfg, pol), pol, full)
    print(f"{reduction:<6} psnr={row['quality']['psnr']:.2f}")
