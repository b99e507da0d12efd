"""
Scoring reference tokens and picking a subset
=============================================

Influence weights received attention by the norm of each token's value vector.
The retained set is the smallest prefix of the ranked tokens whose influence
covers a fraction tau of the total.
"""

import numpy as np

from topi import ModelConfig, build_model, make_noise, make_reference, run_trajectory
from topi.influence import attn_only_scores, influence_scores, similarity_scores
from topi.pruning import select_subset

config = ModelConfig()
layers = (8, 9, 10)
captures = []
run_trajectory(build_model(config), make_noise(config, 0), make_reference(config, 0),
               capture_layers=layers, capture_steps={config.T},
               on_capture=lambda t, cap: captures.append(cap))

inf = influence_scores(captures)
att = attn_only_scores(captures)
sim = similarity_scores(captures)

# how often do the metrics agree on the top 16 tokens?
top = lambda s: set(np.argsort(-s.values, kind="stable")[:16])
print("influence vs attention-only overlap:", len(top(inf) & top(att)))
print("influence vs similarity overlap:   ", len(top(inf) & top(sim)))

###############################################################################
# Retained count as the threshold grows
for tau in (0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 1.0):
    mask = select_subset(inf.values, tau)
    print(f"tau={tau:<5} keep {mask.k_sel:2d}/{config.n_ref}")

###############################################################################
# The kept tokens on the 8x8 reference grid
mask = select_subset(inf.values, 0.85)
print("\n".join("".join("X" if k else "." for k in row) for row in mask.keep.reshape(8, 8)))
