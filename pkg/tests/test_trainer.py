import math

import numpy as np
import pytest

from ptychodv import autodiff as ad
from ptychodv.network import ModelConfig, PtychoDV, ViTConfig
from ptychodv.physics import make_probe, make_scan_grid, simulate
from ptychodv import trainer as T

TINY = ModelConfig(ViTConfig(d=16, depth=1, heads=2, l_f=3, patch_side=8), k=1, cnn_width=8)


def overfit_config(**kw):
    base = dict(n_train=4, n_val=1, image_side=16, patch_side=8, patterns=["4:4"],
                r_p=math.inf, lr=1e-3, epochs=200, seed=0, model=TINY)
    base.update(kw)
    return T.TrainConfig(**base)


def test_dataset_contract():
    a = T.gen_dataset(5, 16, 3)
    b = T.gen_dataset(5, 16, 3)
    assert all(np.array_equal(p.image, q.image) for p, q in zip(a, b))
    assert np.linalg.norm(a[0].image - a[1].image) > 0
    pix = np.concatenate([s.image.ravel() for s in T.gen_dataset(4, 16, 9)])
    assert pix.size >= 1000
    assert np.all((np.abs(pix) >= 0.5 - 1e-12) & (np.abs(pix) <= 1 + 1e-12))
    assert np.all(np.abs(np.angle(pix)) <= np.pi / 2 + 1e-12)
    assert a[2].provenance == {"seed": 3, "index": 2, "image_side": 16}
    assert np.array_equal(T.gen_dataset(1, 16, 3, start=2)[0].image, a[2].image)
    with pytest.raises(ValueError):
        T.gen_dataset(0, 16, 3)


def test_parse_pattern():
    assert T.parse_pattern("16:4") == (16, 4)
    assert T.parse_pattern((9, 8)) == (9, 8)


def test_config_validation():
    for bad in ({"n_train": 0}, {"lr": 0.0}, {"batch": 2}):
        with pytest.raises(ValueError):
            overfit_config(**bad)
    c = overfit_config(model=TINY.to_dict())
    assert c.model == TINY
    paper = T.TrainConfig(lr=1e-5, epochs=30, model=ModelConfig())
    assert (paper.lam, paper.model.k, paper.batch) == (1.0, 3, 1)


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    s = T.AdamState()
    T.adam_step(s, p, {"w": np.zeros(2)}, 0.1)
    assert np.array_equal(p["w"], [1.0, -2.0]) and s.step == 1


def test_adam_first_step_hand_case():
    p = {"w": np.array([0.5])}
    s = T.AdamState()
    g = 0.3
    T.adam_step(s, p, {"w": np.array([g])}, 0.01)
    # m_hat = g and v_hat = g^2 after bias correction
    assert p["w"][0] == pytest.approx(0.5 - 0.01 * g / (abs(g) + 1e-8), abs=1e-15)
    assert s.m["w"][0] == pytest.approx(0.1 * g) and s.v["w"][0] == pytest.approx(0.001 * g * g)


def test_adam_reproducible_and_checks():
    rng = np.random.default_rng(0)
    grads = [{"w": rng.standard_normal(3)} for _ in range(5)]
    out = []
    for _ in range(2):
        p, s = {"w": np.ones(3)}, T.AdamState()
        for g in grads:
            T.adam_step(s, p, g, 1e-2)
        out.append(p["w"].tobytes())
    assert out[0] == out[1]
    with pytest.raises(ad.ContractError):
        T.adam_step(T.AdamState(), {"w": np.ones(1), "b": np.ones(1)}, {"w": np.ones(1)}, 0.1)


@pytest.fixture(scope="module")
def overfit_runs():
    return [T.train(overfit_config()) for _ in range(2)]


def test_overfit_oracle(overfit_runs):
    (_, hist), _ = overfit_runs
    loss = np.array([r["train_loss"] for r in hist])
    assert loss[-1] < 0.05 * loss[0]
    # constant-rate Adam jitters between single epochs; 10-epoch means must fall
    blocks = loss.reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(blocks) < 0)


def test_training_is_bit_reproducible(overfit_runs):
    (m1, h1), (m2, h2) = overfit_runs
    assert [r["train_loss"] for r in h1] == [r["train_loss"] for r in h2]
    assert [r["val_nrmse"] for r in h1] == [r["val_nrmse"] for r in h2]
    assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)
    assert all(np.all(np.isfinite(v)) for v in m1.params.values())


def test_train_writes_outputs(tmp_path):
    cfg = overfit_config(epochs=2, n_train=2, patterns=["4:4", "1:1"])
    rows = []
    model, hist = T.train(cfg, tmp_path, callback=rows.append)
    assert rows == hist and len(hist) == 2
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_nrmse,seconds" and len(lines) == 3
    back = T.checkpoint_load(tmp_path / "checkpoint", TINY)
    assert all(np.array_equal(back.params[k], model.params[k]) for k in model.params)


def test_non_finite_loss_aborts():
    model = PtychoDV(TINY, seed=0)
    model.params["head.1.b"][:] = np.nan
    with pytest.raises(T.TrainingError, match="noise seed"):
        T.train(overfit_config(epochs=1, r_p=1e5), model=model)


def test_checkpoint_round_trip(tmp_path):
    m = PtychoDV(TINY, seed=5)
    T.checkpoint_save(m, tmp_path / "a")
    back = T.checkpoint_load(tmp_path / "a", TINY)
    T.checkpoint_save(back, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    probe = make_probe("A", 8)
    grid = make_scan_grid(16, 8, 4, 4)
    d = simulate(T.make_phantom(16, 0, 0), probe, grid)
    assert np.array_equal(m.reconstruct(d, probe, grid), back.reconstruct(d, probe, grid))


def test_checkpoint_rejects_mismatch(tmp_path):
    m = PtychoDV(TINY, seed=5)
    T.checkpoint_save(m, tmp_path / "a")
    other = ModelConfig(TINY.vit, k=2, cnn_width=4)
    with pytest.raises(T.CheckpointError):
        T.checkpoint_load(tmp_path / "a", other)
    from ptychodv import io
    io.write_tensor(tmp_path / "a" / "cnn.0.b.ptyt", np.zeros(3))
    with pytest.raises(T.CheckpointError):
        T.checkpoint_load(tmp_path / "a")
    with pytest.raises(T.CheckpointError):
        T.checkpoint_load(tmp_path / "missing")


def test_sample_seeds_distinct():
    seeds = {T.sample_seed(0, e, i) for e in range(3) for i in range(50)}
    assert len(seeds) == 150
    assert T.sample_seed(0, T.EVAL_STREAM, 0) not in seeds
