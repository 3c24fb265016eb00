import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptychodv.metrics import MetricReport, align_phase, nrmse, report, report_csv
from conftest import crandn


def grid_min(xhat, x, n=10_000):
    th = np.linspace(0, 2 * np.pi, n, endpoint=False)
    res = [np.linalg.norm(xhat - np.exp(1j * t) * x) for t in th]
    k = int(np.argmin(res))
    return th[k], res[k]


def test_align_phase_examples(rng):
    x = crandn(rng, 8, 8)
    assert align_phase(np.exp(1j * np.pi / 4) * x, x) == pytest.approx(np.pi / 4, abs=1e-12)
    assert align_phase(x, x) == pytest.approx(0.0, abs=1e-12)
    assert 0 <= align_phase(np.exp(-0.3j) * x, x) < 2 * np.pi


def test_closed_form_beats_grid(rng):
    for _ in range(5):
        x, xh = crandn(rng, 8, 8), crandn(rng, 8, 8)
        th = align_phase(xh, x)
        _, best = grid_min(xh, x)
        assert np.linalg.norm(xh - np.exp(1j * th) * x) <= best + 1e-12


def test_nrmse_examples(rng):
    x = crandn(rng, 8, 8)
    assert nrmse(x, x) == 0
    assert nrmse(np.zeros_like(x), x) == pytest.approx(1.0)
    for phi in rng.uniform(0, 2 * np.pi, 10):
        assert nrmse(np.exp(1j * phi) * x, x) < 1e-14


def test_nrmse_mask(rng):
    x = crandn(rng, 8, 8)
    y = x.copy()
    y[0, 0] += 10
    m = np.ones((8, 8), bool)
    m[0, 0] = False
    assert nrmse(y, x, m) < 1e-14
    assert nrmse(y, x) > 0.1


def test_zero_reference_rejected():
    with pytest.raises(ValueError):
        nrmse(np.ones(4), np.zeros(4))
    with pytest.raises(ValueError):
        align_phase(np.ones(4), np.zeros(4))
    with pytest.raises(ValueError):
        nrmse(np.ones(4), np.ones(5))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi))
def test_nrmse_invariances(seed, a, b):
    r = np.random.default_rng(seed)
    x, xh = crandn(r, 6, 6), crandn(r, 6, 6)
    base = nrmse(xh, x)
    assert nrmse(np.exp(1j * a) * xh, x) == pytest.approx(base, rel=1e-10)
    assert nrmse(np.exp(1j * b) * xh, np.exp(1j * b) * x) == pytest.approx(base, rel=1e-10)
    assert base <= (np.linalg.norm(xh) + np.linalg.norm(x)) / np.linalg.norm(x)


def test_nrmse_matches_dense_grid(rng):
    x, xh = crandn(rng, 8, 8), crandn(rng, 8, 8)
    _, best = grid_min(xh, x)
    # grid spacing 2*pi/1e4 bounds the gap
    assert nrmse(xh, x) * np.linalg.norm(x) <= best + 1e-12
    assert best - nrmse(xh, x) * np.linalg.norm(x) < 1e-3 * np.linalg.norm(x)


def test_report_statistics():
    r = MetricReport("pmace", [0.1, 0.2, 0.6], [1.0, 2.0, 3.0], "16:4")
    assert r.mean == pytest.approx(0.3)
    assert r.std == pytest.approx(math.sqrt(((0.2) ** 2 + 0.1**2 + 0.3**2) / 3))
    assert r.sec_per_image == pytest.approx(2.0)
    assert MetricReport("x", [0.5]).std == 0


def test_cell_format():
    r = MetricReport("PtychoDV", [0.043 - 0.19, 0.043 + 0.19], [0.212, 0.212])
    assert r.cell() == "0.043 ± 0.19 (0.212)"


def test_report_rows_and_csv():
    reps = report([("wf", "16:4", [0.1, 0.3], [0.01, 0.03])])
    text = report_csv(reps, "abc")
    lines = text.strip().splitlines()
    assert lines[0].startswith("method,pattern,n,mean_nrmse")
    assert lines[1].split(",")[:3] == ["wf", "16:4", "2"]
    assert lines[1].endswith("abc")
    with pytest.raises(ValueError):
        report([])
    with pytest.raises(ValueError):
        MetricReport("x", [])
