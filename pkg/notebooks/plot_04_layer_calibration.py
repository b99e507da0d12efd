"""
Choosing representative layers
==============================

Each layer's sensitivity is its total noisy-to-reference attention mass,
averaged over a small calibration set. The top layers stand in for the whole
network when scoring tokens.
"""

from topi import ModelConfig, build_model, make_reference
from topi.calibration import load_reference_fixture, select_layers, sensitivity_scores

config = ModelConfig()
model = build_model(config)
samples = [(1000 + i, make_reference(config, 1000 + i)) for i in range(2)]
table = sensitivity_scores(model, samples)

for layer, s in enumerate(table.scores):
    print(f"layer {layer:2d} {s:8.2f} " + "#" * int(s / 5))

for strategy in ("top_m", "first", "last", "random"):
    print(f"{strategy:<6}", select_layers(table, 3, strategy, seed=0).layers)

# the published sets for the production backbones, for comparison
print("flux", load_reference_fixture("flux").layers, "qwen", load_reference_fixture("qwen").layers)
