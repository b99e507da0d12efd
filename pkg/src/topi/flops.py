"""Analytic FLOPs for double-stream and single-stream DiT blocks.

All counting is done on Python integers; conversion to GFLOPs (divisor 1e9,
round-half-even to two decimals) happens only when formatting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction

VARIANTS = ("flux_double", "flux_single", "qwen_double")

# Linear-op coefficient per token per d^2: QKV+O projections (8) plus a
# d -> m*d -> d MLP (4m). Single-stream: QKV (6) + MLP up (8) + fused out (10).
_DOUBLE_COEF = {"flux_double": 24, "qwen_double": 32}
_SINGLE_COEF = 6 + 8 + 10

_LABELS = {
    "attn_core": "Joint Attn Core",
    "image_linear": "Image Linear Ops",
    "text_linear": "Text Linear Ops",
    "single_attn_core": "Single Attn Core",
    "single_linear": "Single Linear Ops",
}

# Layer counts of the two published backbones.
FLUX_LAYERS = {"flux_double": 19, "flux_single": 38}
QWEN_LAYERS = {"qwen_double": 60}


def _check(*counts):
    for c in counts:
        if c < 0:
            raise ValueError("token counts must be >= 0")


def attn_core_flops(n_img: int, n_prompt: int, d: int) -> int:
    _check(n_img, n_prompt)
    return 4 * (n_img + n_prompt) ** 2 * d


def linear_flops(variant: str, n_img: int, n_prompt: int, d: int) -> dict:
    _check(n_img, n_prompt)
    if variant in _DOUBLE_COEF:
        coef = _DOUBLE_COEF[variant]
        return {"image_linear": coef * n_img * d * d, "text_linear": coef * n_prompt * d * d}
    if variant == "flux_single":
        return {"single_linear": _SINGLE_COEF * (n_img + n_prompt) * d * d}
    raise ValueError(f"unknown variant {variant!r}")


def layer_flops(variant: str, n_img: int, n_prompt: int, d: int) -> dict:
    attn_key = "single_attn_core" if variant == "flux_single" else "attn_core"
    out = {attn_key: attn_core_flops(n_img, n_prompt, d)}
    out.update(linear_flops(variant, n_img, n_prompt, d))
    return out


def to_gflops(flops) -> Decimal:
    return (Decimal(flops.numerator) / Decimal(flops.denominator) / Decimal(10**9) if isinstance(flops, Fraction)
            else Decimal(int(flops)) / Decimal(10**9)).quantize(Decimal("0.01"), rounding=ROUND_HALF_EVEN)


def reduction_pct(baseline: int, pruned: int) -> Fraction:
    if baseline == 0:
        return Fraction(0)
    return (1 - Fraction(pruned, baseline)) * 100


def _pct(x: Fraction, places: str = "0.1") -> Decimal:
    return (Decimal(x.numerator) / Decimal(x.denominator)).quantize(Decimal(places), rounding=ROUND_HALF_EVEN)


@dataclass(frozen=True)
class CostConfig:
    n_img: int = 8192
    n_prompt: int = 512
    d: int = 4096
    variant: str = "flux_double"
    layers: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        _check(self.n_img, self.n_prompt)
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass
class FlopsReport:
    variant: str
    n_img: int
    n_prompt: int
    d: int
    pruned_n_img: int
    baseline: dict
    pruned: dict

    @property
    def total_baseline(self) -> int:
        return sum(self.baseline.values())

    @property
    def total_pruned(self) -> int:
        return sum(self.pruned.values())

    def reduction(self, component: str | None = None) -> Fraction:
        if component is None:
            return reduction_pct(self.total_baseline, self.total_pruned)
        return reduction_pct(self.baseline[component], self.pruned[component])

    def rows(self) -> list[dict]:
        """Display rows: GFLOPs to 2 dp, reduction to 1 dp (negative = saving)."""
        out = []
        for name in self.baseline:
            out.append(self._row(_LABELS[name], self.baseline[name], self.pruned[name]))
        out.append(self._row("Layer Total", self.total_baseline, self.total_pruned))
        return out

    @staticmethod
    def _row(label, base, pruned):
        return {
            "component": label,
            "baseline_gflops": float(to_gflops(base)),
            "pruned_gflops": float(to_gflops(pruned)),
            "reduction_pct": float(-_pct(reduction_pct(base, pruned))),
        }

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "n_img": self.n_img,
            "n_prompt": self.n_prompt,
            "d": self.d,
            "pruned_n_img": self.pruned_n_img,
            "flops": {"baseline": self.baseline, "pruned": self.pruned},
            "total_flops": {"baseline": self.total_baseline, "pruned": self.total_pruned},
            "rows": self.rows(),
        }

    def format_table(self) -> str:
        lines = [f"{self.variant} (N_img={self.n_img} -> {self.pruned_n_img}, N_prompt={self.n_prompt}, d={self.d})"]
        lines.append(f"  {'Component':<20}{'Baseline':>12}{'Pruned':>12}{'Reduction':>12}")
        for r in self.rows():
            lines.append(
                f"  {r['component']:<20}{r['baseline_gflops']:>12.2f}{r['pruned_gflops']:>12.2f}"
                f"{r['reduction_pct']:>11.1f}%"
            )
        return "\n".join(lines)


def layer_breakdown(base: CostConfig, pruned_n_img: int | None = None) -> FlopsReport:
    pruned_n_img = base.n_img if pruned_n_img is None else pruned_n_img
    if not 0 <= pruned_n_img <= base.n_img:
        raise ValueError("pruned_n_img must lie in [0, n_img]")
    return FlopsReport(
        variant=base.variant,
        n_img=base.n_img,
        n_prompt=base.n_prompt,
        d=base.d,
        pruned_n_img=pruned_n_img,
        baseline=layer_flops(base.variant, base.n_img, base.n_prompt, base.d),
        pruned=layer_flops(base.variant, pruned_n_img, base.n_prompt, base.d),
    )


def model_flops(n_img: int, n_prompt: int, d: int, layers: dict) -> int:
    """Sum of per-layer FLOPs over a mix of block kinds, e.g. ``FLUX_LAYERS``."""
    return sum(count * sum(layer_flops(v, n_img, n_prompt, d).values()) for v, count in layers.items())


@dataclass(frozen=True)
class Overhead:
    scoring: int
    selection: int
    amortized: Fraction

    def to_json(self) -> dict:
        return {"scoring": self.scoring, "selection": self.selection, "amortized_per_step": float(self.amortized)}


def overhead_flops(n_layers: int, n_noisy: int, n_ref: int, delta_t, heads: int = 1) -> Overhead:
    """Cost of one mask update and its per-step amortisation.

    Scoring multiplies and accumulates one attention weight per (layer, head,
    noisy, reference) entry; selection is a comparison sort over the
    reference tokens. Pass ``delta_t=math.inf`` for a static mask.
    """
    for x in (n_layers, n_noisy, n_ref, heads):
        if x < 1:
            raise ValueError("counts must be >= 1")
    scoring = 2 * n_layers * heads * n_noisy * n_ref
    selection = n_ref * math.ceil(math.log2(n_ref)) if n_ref > 1 else 0
    if delta_t == math.inf:
        amortized = Fraction(0)
    else:
        if delta_t < 1:
            raise ValueError("delta_t must be >= 1")
        amortized = Fraction(scoring + selection, int(delta_t))
    return Overhead(scoring, selection, amortized)


def heavy_load_table(n_img: int = 8192, n_prompt: int = 512, d: int = 4096, pruned_n_img: int = 6144) -> list[FlopsReport]:
    """Breakdowns for all three variants at the heavy in-context load."""
    return [layer_breakdown(CostConfig(n_img, n_prompt, d, v), pruned_n_img) for v in VARIANTS]
