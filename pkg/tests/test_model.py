"""Encoder/projector semantics and checkpoint round trips."""

import numpy as np
import pytest

from depmax import tensor as T
from depmax.config import default_config, serialize_config
from depmax.descriptors import DescriptorOutput
from depmax.errors import ConfigError, FormatError, IntegrityError, ShapeError
from depmax.losses import LossWeights, total_loss
from depmax.model import (
    EncoderConfig,
    Model,
    ProjectorConfig,
    load_checkpoint,
    read_checkpoint_table,
    save_checkpoint,
)
from depmax.tensor import Tensor


def _model(seed=0, **kw):
    enc = EncoderConfig(**kw) if kw else EncoderConfig()
    return Model(enc, ProjectorConfig(), seed=seed)


def test_output_shapes():
    m = _model()
    batch = np.random.default_rng(0).random((4, 3, 32, 32)).astype(np.float32)
    emb = m.encode(batch, mode="eval")
    assert emb.data.shape == (4, 64)
    out = m.project(emb, mode="eval")
    assert out.data.shape == (4, 256)


def test_eval_mode_is_deterministic():
    m = _model()
    batch = np.random.default_rng(1).random((3, 3, 32, 32)).astype(np.float32)
    a = m.forward(batch, mode="eval").data
    b = m.forward(batch, mode="eval").data
    assert np.array_equal(a, b)


def test_zero_initialized_mlp_zero_embedding():
    enc = EncoderConfig(kind="mlp", mlp_widths=(8, 4), input_size=(3, 8, 8))
    m = Model(enc, ProjectorConfig(enabled=False), seed=0)
    for name, p in m.params.items():
        p.data[...] = 0.0
    out = m.encode(np.zeros((2, 3, 8, 8), dtype=np.float32))
    np.testing.assert_array_equal(out.data, 0.0)


def test_input_size_mismatch():
    m = _model()
    with pytest.raises(ShapeError):
        m.encode(np.zeros((2, 3, 16, 16), dtype=np.float32))


def test_projector_identity_when_weights_identity():
    enc = EncoderConfig(kind="mlp", mlp_widths=(6,), input_size=(3, 4, 4))
    m = Model(enc, ProjectorConfig(widths=(6,)), seed=0)
    m.params["proj.fc0.w"].data[...] = np.eye(6, dtype=np.float32)
    m.params["proj.fc0.b"].data[...] = 0.0
    emb = Tensor(np.random.default_rng(2).random((3, 6)).astype(np.float32))
    out = m.project(emb)
    np.testing.assert_allclose(out.data, emb.data, atol=1e-7)


def test_projector_disabled_passthrough():
    enc = EncoderConfig()
    m = Model(enc, ProjectorConfig(enabled=False), seed=0)
    assert m.project_dim == enc.embed_dim
    emb = Tensor(np.ones((2, 64), dtype=np.float32))
    assert m.project(emb) is emb


def test_parameter_count_under_desk_budget():
    m = _model()
    count = m.parameter_count()
    assert count <= 500_000
    assert count == sum(p.data.size for p in m.params.values())


def test_deep_stride_chain_saturates_at_one_pixel():
    # with same-padding the spatial extent floors at 1x1 and stays valid
    enc = EncoderConfig(channels=(4,) * 8, input_size=(3, 16, 16))
    m = Model(enc, ProjectorConfig(enabled=False), seed=0)
    out = m.encode(np.zeros((2, 3, 16, 16), dtype=np.float32), mode="eval")
    assert out.data.shape == (2, 4)


def test_gradients_reach_every_parameter():
    with T.using_dtype(np.float64):
        m = Model(EncoderConfig(input_size=(3, 16, 16)), ProjectorConfig(widths=(32, 16)), seed=3)
        rng = np.random.default_rng(4)
        batch = rng.random((8, 3, 16, 16))
        z = m.forward(batch, mode="train")
        zt = m.forward(rng.random((8, 3, 16, 16)), mode="train")
        desc = DescriptorOutput(values=rng.normal(size=(8, 12)), kind="test", name="d")
        total, _ = total_loss(z, zt, [desc], LossWeights())
        total.backward()
        for name, p in m.params.items():
            assert p.grad is not None and np.abs(p.grad).max() > 0, name


def test_checkpoint_round_trip_bitwise(tmp_path):
    cfg = default_config()
    m = Model(cfg.model_config(), cfg.projector_config(), seed=5)
    batch = np.random.default_rng(5).random((2, 3, 32, 32)).astype(np.float32)
    # make running stats non-trivial before saving
    m.forward(batch, mode="train")
    before = m.forward(batch, mode="eval").data.copy()
    path = tmp_path / "model.mvck"
    save_checkpoint(m, path, config_toml=serialize_config(cfg), config_digest="x" * 8)
    restored, extras = load_checkpoint(path)
    after = restored.forward(batch, mode="eval").data
    assert np.array_equal(before, after)
    assert extras["digest"] == "x" * 8
    for name in m.params:
        assert np.array_equal(m.params[name].data, restored.params[name].data)
    for name in m.buffers:
        assert np.array_equal(m.buffers[name], restored.buffers[name])


def test_checkpoint_preserves_optimizer_and_rng(tmp_path):
    cfg = default_config()
    m = Model(cfg.model_config(), cfg.projector_config(), seed=6)
    opt_state = {"m/enc.conv0.w": np.random.default_rng(0).random((16, 3, 3, 3)).astype(np.float32),
                 "t": np.array([7], dtype=np.int64)}
    rng_state = np.random.default_rng(9).bit_generator.state
    path = tmp_path / "model.mvck"
    save_checkpoint(
        m, path, optimizer_state=opt_state, rng_state=rng_state,
        config_toml=serialize_config(cfg),
    )
    _, extras = load_checkpoint(path)
    assert np.array_equal(extras["optimizer"]["m/enc.conv0.w"], opt_state["m/enc.conv0.w"])
    assert int(extras["optimizer"]["t"][0]) == 7
    assert extras["rng"] == rng_state


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.mvck"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        read_checkpoint_table(path)


def test_checkpoint_rejects_truncation(tmp_path):
    cfg = default_config()
    m = Model(cfg.model_config(), cfg.projector_config(), seed=7)
    path = tmp_path / "model.mvck"
    save_checkpoint(m, path, config_toml=serialize_config(cfg))
    blob = path.read_bytes()
    (tmp_path / "trunc.mvck").write_bytes(blob[: len(blob) - 10])
    with pytest.raises(IntegrityError, match="offset"):
        read_checkpoint_table(tmp_path / "trunc.mvck")


def test_checkpoint_size_and_speed(tmp_path):
    import time

    cfg = default_config()
    m = Model(cfg.model_config(), cfg.projector_config(), seed=8)
    path = tmp_path / "model.mvck"
    save_checkpoint(m, path, config_toml=serialize_config(cfg))
    assert path.stat().st_size < 8 * 2**20  # a few MB at most
    t0 = time.perf_counter()
    load_checkpoint(path)
    assert time.perf_counter() - t0 < 1.0
