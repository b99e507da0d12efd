"""Influence-based reference-token pruning for in-context diffusion transformers."""

from .calibration import (
    RepresentativeLayers,
    SensitivityTable,
    load_reference_fixture,
    select_layers,
    sensitivity_scores,
)
from .engine import (
    AttentionCapture,
    ModelConfig,
    SequenceState,
    ToyDiT,
    build_model,
    denoise_step,
    make_noise,
    make_reference,
    run_trajectory,
)
from .influence import InfluenceScores, baseline_scores, contribution_norms, influence_scores
from .pruning import (
    AnchorSchedule,
    PrunerPolicy,
    RetentionMask,
    current_mask,
    merge_context,
    realign_context,
    select_subset,
)

__version__ = "0.1.0"
