import dataclasses

import numpy as np
import pytest

from vladpool import gradcheck, model, nn
from vladpool.config import ModelConfig

CFG = ModelConfig()


@pytest.fixture(scope="module")
def store():
    return model.init_model(CFG, np.random.default_rng(0))


def spec(t, seed=0, f=257):
    return np.random.default_rng(seed).standard_normal((f, t)).astype(np.float32)


def test_output_shapes(store):
    logits, emb, _ = model.forward(spec(500), store.values, CFG)
    assert logits.shape == (7,) and emb.shape == (64,)


@pytest.mark.parametrize("t", [200, 2000])
def test_variable_length(store, t):
    logits, emb, _ = model.forward(spec(t), store.values, CFG)
    assert logits.shape == (7,) and np.all(np.isfinite(logits))


def test_forward_is_deterministic(store):
    x = spec(300)
    a = model.forward(x, store.values, CFG)[0]
    b = model.forward(x.copy(), store.values, CFG)[0]
    assert np.array_equal(a, b)


def test_batched_matches_single(store):
    x = np.stack([spec(200, 1), spec(200, 2)])
    batched = model.forward(x, store.values, CFG)[0]
    for i in range(2):
        assert np.allclose(batched[i], model.forward(x[i], store.values, CFG)[0], atol=1e-5)


def test_wrong_row_count_is_a_shape_error(store):
    with pytest.raises(nn.ShapeError):
        model.forward(spec(100, f=256), store.values, CFG)


def test_saturated_logit_loss_is_finite():
    s = model.init_model(CFG, np.random.default_rng(1), np.float64)
    s.values["cls.b"][3] = 1e4
    logits, _, cache = model.forward(spec(100)[None], s.values, CFG)
    loss = model.backward(cache, [3], logits, s, CFG)
    assert np.isfinite(loss) and loss == pytest.approx(0.0, abs=1e-12)
    assert all(np.all(np.isfinite(g)) for g in s.grads.values())


def test_dead_embedding_gives_bias_only_logits():
    s = model.init_model(CFG, np.random.default_rng(2))
    s.values["proj.b"][:] = -1e6
    logits, emb, _ = model.forward(spec(100), s.values, CFG)
    assert not emb.any()
    assert np.array_equal(logits, s.values["cls.b"])


def test_input_normalization_is_frozen_and_applied():
    s = model.init_model(CFG, np.random.default_rng(3))
    specs = [spec(50, i) * 3 + 2 for i in range(4)]
    model.set_input_normalization(s, specs)
    assert "input.mean" not in s.trainable() and "input.scale" not in s.trainable()
    assert np.allclose(s["input.mean"], np.concatenate(specs, axis=1).mean(axis=1), atol=1e-5)


@pytest.mark.parametrize("kind", ["avg", "stats", "netvlad", "ghostvlad"])
def test_backbone_parameters_do_not_depend_on_pooling(kind):
    cfg = dataclasses.replace(CFG, pooling_kind=kind, g=2 if kind == "ghostvlad" else 0)
    shapes = model.expected_shapes(cfg)
    base = model.expected_shapes(CFG)
    assert {k: v for k, v in shapes.items() if k.startswith("backbone.")} == \
           {k: v for k, v in base.items() if k.startswith("backbone.")}
    assert ("pool.c" in shapes) == (kind in ("netvlad", "ghostvlad"))


@pytest.mark.parametrize("seed", range(5))
def test_tiny_model_gradients(seed):
    for name, layer, x, params, tol, *eps in gradcheck.checks(seed):
        if name.startswith("model["):
            assert nn.grad_check(layer, x, params, eps=eps[0]) < tol, name


def test_checkpoint_round_trip_is_bitwise(tmp_path, store):
    ckpt = model.Checkpoint(CFG, store, {"epoch": "3"}, ["a", "b", "c", "d", "e", "f", "g"])
    model.save(ckpt, tmp_path / "m.ckpt")
    back = model.load(tmp_path / "m.ckpt")
    assert back.config == CFG and back.labels == ckpt.labels and back.meta["epoch"] == "3"
    for name, value in store.values.items():
        assert np.array_equal(back.params[name], value)
    for i in range(3):
        x = spec(200 + 50 * i, seed=i)
        assert np.array_equal(back.predict(x)[0], ckpt.predict(x)[0])


def test_truncated_checkpoint(tmp_path, store):
    model.save(model.Checkpoint(CFG, store), tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:-100])
    with pytest.raises(model.CheckpointError):
        model.load(tmp_path / "cut.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(model.CheckpointError):
        model.load(tmp_path / "junk.ckpt")


def test_mismatched_cluster_count_names_the_tensor(tmp_path, store):
    model.save(model.Checkpoint(CFG, store), tmp_path / "m.ckpt")
    with pytest.raises(model.ShapeMismatchError, match="pool"):
        model.load(tmp_path / "m.ckpt", dataclasses.replace(CFG, k=4))


def test_unknown_version(tmp_path, store):
    model.save(model.Checkpoint(CFG, store), tmp_path / "m.ckpt")
    blob = (tmp_path / "m.ckpt").read_bytes().replace(b"format_version = 1", b"format_version = 9", 1)
    (tmp_path / "v.ckpt").write_bytes(blob)
    with pytest.raises(model.CheckpointVersionError):
        model.load(tmp_path / "v.ckpt")
