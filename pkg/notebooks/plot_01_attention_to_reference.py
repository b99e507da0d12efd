"""
How much do noisy tokens look at the reference?
===============================================

Run the seeded toy DiT over a full trajectory and measure, layer by layer and
step by step, the share of attention noisy tokens spend on reference tokens.
"""

import numpy as np

from topi import ModelConfig, build_model, make_noise, make_reference, run_trajectory
from topi.analysis import layer_profile, temporal_profile, token_profile

config = ModelConfig()
model = build_model(config)

# capture every layer; captures are observation only and do not change the output
record = run_trajectory(model, make_noise(config, 0), make_reference(config, 0),
                        capture_layers=range(config.n_layers))

###############################################################################
# Per-layer totals. Softmax rows also cover noisy and prompt keys, so the
# reference share stays well below 1.
for layer, total in layer_profile(record).items():
    kind = config.block_kind(layer)
    print(f"layer {layer:2d} ({kind:6s}) {total:.3f} " + "#" * int(total * 60))

###############################################################################
# The same quantity across timesteps, averaged over layers
steps = temporal_profile(record)
print("t=40..1:", " ".join(f"{v:.2f}" for v in steps.values()))

###############################################################################
# Which reference tokens get the attention? The blob in the reference image
# carries most of the signal.
tokens = token_profile(record)[config.T]
grid = tokens.reshape(8, 8)
np.set_printoptions(precision=3, suppress=True)
print(grid / grid.max())
