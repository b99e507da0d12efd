import math
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from topi import flops as fl


def _rows(variant):
    rep = fl.layer_breakdown(fl.CostConfig(variant=variant), 6144)
    return {r["component"]: r for r in rep.rows()}


def test_flux_double_table():
    r = _rows("flux_double")
    assert (r["Joint Attn Core"]["baseline_gflops"], r["Joint Attn Core"]["pruned_gflops"]) == (1241.25, 725.85)
    assert (r["Image Linear Ops"]["baseline_gflops"], r["Image Linear Ops"]["pruned_gflops"]) == (3298.53, 2473.90)
    assert r["Text Linear Ops"]["baseline_gflops"] == r["Text Linear Ops"]["pruned_gflops"] == 206.16
    assert (r["Layer Total"]["baseline_gflops"], r["Layer Total"]["pruned_gflops"]) == (4745.94, 3405.91)
    assert r["Joint Attn Core"]["reduction_pct"] == -41.5
    assert r["Image Linear Ops"]["reduction_pct"] == -25.0
    assert r["Layer Total"]["reduction_pct"] == -28.2


def test_flux_single_table():
    r = _rows("flux_single")
    assert r["Single Attn Core"]["baseline_gflops"] == 1241.25
    assert r["Single Linear Ops"]["baseline_gflops"] == 3504.69
    assert (r["Layer Total"]["baseline_gflops"], r["Layer Total"]["pruned_gflops"]) == (4745.94, 3405.91)
    assert r["Layer Total"]["reduction_pct"] == -28.2


def test_qwen_double_table():
    r = _rows("qwen_double")
    assert (r["Image Linear Ops"]["baseline_gflops"], r["Image Linear Ops"]["pruned_gflops"]) == (4398.05, 3298.53)
    assert r["Text Linear Ops"]["baseline_gflops"] == 274.88
    assert (r["Layer Total"]["baseline_gflops"], r["Layer Total"]["pruned_gflops"]) == (5914.17, 4299.26)
    assert r["Layer Total"]["reduction_pct"] == -27.3


def test_exact_integers_and_rounding():
    assert fl.attn_core_flops(8192, 512, 4096) == 4 * 8704**2 * 4096
    assert fl.to_gflops(1_005_000_000) == Decimal("1.00")  # half-even
    assert fl.to_gflops(1_015_000_000) == Decimal("1.02")
    assert fl.reduction_pct(4, 3) == Fraction(25)
    assert fl.reduction_pct(0, 0) == 0


def test_degenerate_and_errors():
    assert sum(fl.layer_flops("flux_double", 0, 0, 64).values()) == 0
    with pytest.raises(ValueError):
        fl.linear_flops("sdxl", 1, 1, 1)
    with pytest.raises(ValueError):
        fl.attn_core_flops(-1, 0, 8)
    with pytest.raises(ValueError):
        fl.layer_breakdown(fl.CostConfig(), 9000)


@given(st.integers(0, 5000), st.integers(0, 5000), st.integers(0, 600), st.sampled_from(fl.VARIANTS))
def test_linear_additive_and_pruning_never_costs_more(a, b, p, variant):
    n = a + b
    lin = fl.linear_flops(variant, n, 0, 64)
    la, lb = fl.linear_flops(variant, a, 0, 64), fl.linear_flops(variant, b, 0, 64)
    assert all(lin[k] == la[k] + lb[k] for k in lin)
    rep = fl.layer_breakdown(fl.CostConfig(n, p, 64, variant), a)
    assert rep.total_pruned <= rep.total_baseline
    assert all(rep.pruned[k] <= rep.baseline[k] for k in rep.baseline)


def test_model_flops_sums_layers():
    per = {v: sum(fl.layer_flops(v, 100, 10, 32).values()) for v in fl.VARIANTS}
    assert fl.model_flops(100, 10, 32, fl.FLUX_LAYERS) == 19 * per["flux_double"] + 38 * per["flux_single"]


def test_overhead_shape():
    ov = fl.overhead_flops(3, 4096, 4096, 10, heads=32)
    assert ov.scoring == 2 * 3 * 32 * 4096 * 4096
    assert ov.selection == 4096 * 12
    assert ov.amortized == Fraction(ov.scoring + ov.selection, 10)
    assert fl.overhead_flops(3, 64, 64, math.inf).amortized == 0
    # larger interval, smaller amortized cost
    assert fl.overhead_flops(3, 64, 64, 20).amortized < fl.overhead_flops(3, 64, 64, 5).amortized
    # selection grows superlinearly in |C|
    s1, s2 = fl.overhead_flops(1, 1, 256, 1).selection, fl.overhead_flops(1, 1, 512, 1).selection
    assert s2 > 2 * s1
    with pytest.raises(ValueError):
        fl.overhead_flops(3, 64, 64, 0)
