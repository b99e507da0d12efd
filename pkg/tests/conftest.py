import json
from pathlib import Path

import numpy as np
import pytest

from topi.engine import AttentionCapture, ModelConfig

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def tiny_config():
    return ModelConfig(depth_double=2, depth_single=2, heads=2, head_dim=8, n_noisy=16, n_ref=16, n_prompt=4, T=6)


@pytest.fixture
def fixture_json():
    def load(name):
        return json.loads((FIXTURES / name).read_text())

    return load


def random_capture(rng, layer=0, heads=2, n_noisy=16, n_ref=16, n_other=6, d=8):
    """Capture whose attention slice comes from genuine row-softmaxed logits over
    noisy + reference + extra keys."""
    n_keys = n_noisy + n_ref + n_other
    logits = rng.normal(size=(heads, n_noisy, n_keys)) * 2.0
    a = np.exp(logits - logits.max(axis=-1, keepdims=True))
    a /= a.sum(axis=-1, keepdims=True)
    return AttentionCapture(
        layer=layer,
        attn=a[:, :, n_noisy : n_noisy + n_ref].copy(),
        value_norms=rng.uniform(0.1, 3.0, size=(heads, n_ref)),
        ref_hidden=rng.normal(size=(n_ref, d)),
        ref_index=np.arange(n_ref),
        n_keys=n_keys,
    )


_GATE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    crit = item.get_closest_marker("criterion")
    if crit is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "FAIL"
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _GATE.append(f"{status} criterion {crit.args[0]}: {doc} ({rep.duration:.2f}s)")


def pytest_terminal_summary(terminalreporter):
    if _GATE:
        terminalreporter.section("acceptance gate")
        for line in sorted(_GATE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
