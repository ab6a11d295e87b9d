"""Parameter layout, initialization, forward pass, and checkpoint format."""

import dataclasses

import numpy as np
import pytest

from graphfusion.config import FusionConfig
from graphfusion.network import (
    CHECKPOINT_MAGIC,
    CheckpointError,
    count_parameters,
    forward,
    fuse_arrays,
    he_normal,
    init_params,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
)
from graphfusion.reference import reference_forward
from graphfusion.tensor import ShapeError, Tensor


def cfg(**overrides) -> FusionConfig:
    return dataclasses.replace(FusionConfig(), **overrides)


SMALL = dict(channels=8, nodes=2, loops=2, reduction=4)


class TestParameterTable:
    def test_counts_frozen_for_reference_widths(self):
        assert len(parameter_shapes(cfg(channels=8))) == 130
        assert count_parameters(cfg(channels=8)) == 22477
        assert count_parameters(cfg(channels=16)) == 88473

    def test_disabling_stages_removes_their_parameters(self):
        names_full = set(parameter_shapes(cfg(channels=8)))
        names_no_sal = set(parameter_shapes(cfg(channels=8, use_salience=False)))
        names_no_graph = set(parameter_shapes(cfg(channels=8, use_graph=False)))
        assert names_no_sal == {n for n in names_full if not n.startswith("salience.")}
        assert names_no_graph == {n for n in names_full if not n.startswith("graph.")}

    def test_share_loop_params_stores_one_loop_bank(self):
        shared = parameter_shapes(cfg(channels=8, share_loop_params=True))
        loops = {n.split(".")[1] for n in shared if n.startswith("graph.loop")}
        assert loops == {"loop1"}
        # Sharing with multiple loops still needs deliver convs for handoff.
        assert "graph.loop1.deliver0.ir.weight" in shared

    def test_single_node_graph_has_no_intra_convs(self):
        shapes = parameter_shapes(cfg(channels=8, nodes=1))
        assert not any(".intra." in n for n in shapes)
        assert "graph.loop1.inter.weight" in shapes

    def test_head_consumes_both_branches(self):
        shapes = parameter_shapes(cfg(channels=8))
        assert shapes["head.conv1.weight"] == (8, 16, 3, 3)
        assert shapes["head.conv2.weight"] == (1, 8, 3, 3)


class TestInitialization:
    def test_same_seed_is_bit_identical(self):
        a = init_params(cfg(**SMALL), seed=7)
        b = init_params(cfg(**SMALL), seed=7)
        assert a.names() == b.names()
        for name in a.names():
            np.testing.assert_array_equal(a[name].data, b[name].data)

    def test_different_seeds_differ(self):
        a = init_params(cfg(**SMALL), seed=0)
        b = init_params(cfg(**SMALL), seed=1)
        assert any(not np.array_equal(a[n].data, b[n].data) for n in a.names())

    def test_biases_start_at_zero(self):
        params = init_params(cfg(**SMALL), seed=0)
        for name, t in params.items():
            if name.endswith(".bias"):
                assert not t.data.any(), name

    def test_he_normal_std_tracks_fan_in(self):
        rng = np.random.default_rng(0)
        w = he_normal(rng, (256, 128, 3, 3))
        assert abs(w.std() / np.sqrt(2.0 / (128 * 9)) - 1.0) < 0.02
        lin = he_normal(rng, (512, 200))
        assert abs(lin.std() / np.sqrt(2.0 / 200) - 1.0) < 0.02

    def test_he_normal_rejects_odd_ranks(self):
        with pytest.raises(ShapeError):
            he_normal(np.random.default_rng(0), (3, 3, 3))

    def test_params_require_grad(self):
        params = init_params(cfg(**SMALL), seed=0)
        assert all(t.requires_grad for _, t in params.items())


class TestForward:
    def test_output_shape_and_range(self, rng):
        config = cfg(**SMALL)
        params = init_params(config, seed=0)
        ir = Tensor(rng.uniform(size=(2, 1, 8, 8)).astype(np.float32))
        vis = Tensor(rng.uniform(size=(2, 1, 8, 8)).astype(np.float32))
        out = forward(ir, vis, params, config)
        assert out.shape == (2, 1, 8, 8)
        assert np.all(out.data > 0.0) and np.all(out.data < 1.0)

    def test_rejects_mismatched_inputs(self):
        config = cfg(**SMALL)
        params = init_params(config, seed=0)
        with pytest.raises(ShapeError):
            forward(Tensor.zeros((1, 1, 8, 8)), Tensor.zeros((1, 1, 8, 9)), params, config)

    @pytest.mark.parametrize(
        "overrides",
        [
            {},
            {"use_salience": False},
            {"use_graph": False},
            {"use_leader": False},
            {"share_loop_params": True},
            {"nodes": 1, "loops": 1},
        ],
    )
    def test_matches_float64_reference(self, rng, overrides):
        config = cfg(**{**SMALL, **overrides})
        params = init_params(config, seed=2)
        ir = rng.uniform(size=(1, 1, 8, 8)).astype(np.float32)
        vis = rng.uniform(size=(1, 1, 8, 8)).astype(np.float32)
        got = forward(Tensor(ir), Tensor(vis), params, config)
        arrays = {name: t.data.astype(np.float64) for name, t in params.items()}
        want = reference_forward(ir, vis, arrays, config)
        np.testing.assert_allclose(got.data, want, rtol=1e-4, atol=1e-5)

    def test_fuse_arrays_matches_forward(self, rng):
        config = cfg(**SMALL)
        params = init_params(config, seed=0)
        ir = rng.uniform(size=(8, 8)).astype(np.float32)
        vis = rng.uniform(size=(8, 8)).astype(np.float32)
        fused = fuse_arrays(ir, vis, params, config)
        batched = forward(
            Tensor(ir.reshape(1, 1, 8, 8)), Tensor(vis.reshape(1, 1, 8, 8)), params, config
        )
        np.testing.assert_array_equal(fused, batched.data[0, 0])

    def test_fuse_arrays_rejects_batched_input(self):
        config = cfg(**SMALL)
        params = init_params(config, seed=0)
        with pytest.raises(ShapeError):
            fuse_arrays(np.zeros((1, 8, 8), np.float32), np.zeros((1, 8, 8), np.float32), params, config)


class TestCheckpoint:
    def test_roundtrip_is_bit_exact(self, tmp_path):
        config = cfg(**SMALL)
        params = init_params(config, seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, config)
        loaded, loaded_config = load_checkpoint(path)
        assert loaded_config == config
        assert loaded.names() == params.names()
        for name in params.names():
            np.testing.assert_array_equal(loaded[name].data, params[name].data)

    def test_file_starts_with_magic(self, tmp_path):
        config = cfg(**SMALL)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(config, seed=0), config)
        assert path.read_bytes()[:4] == CHECKPOINT_MAGIC == b"IGN1"

    def test_save_is_deterministic(self, tmp_path):
        config = cfg(**SMALL)
        params = init_params(config, seed=0)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, params, config)
        save_checkpoint(p2, params, config)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        config = cfg(**SMALL)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(config, seed=0), config)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"WAT1"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="bad magic"):
            load_checkpoint(path)

    def test_truncation_rejected_with_offset(self, tmp_path):
        config = cfg(**SMALL)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(config, seed=0), config)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated checkpoint"):
            load_checkpoint(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        config = cfg(**SMALL)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(config, seed=0), config)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(CheckpointError, match="trailing bytes"):
            load_checkpoint(path)

    def test_architecture_mismatch_names_offending_parameter(self, tmp_path):
        config = cfg(**SMALL)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, init_params(config, seed=0), config)
        wider = cfg(**{**SMALL, "channels": 16})
        with pytest.raises(CheckpointError, match=r"extract\.ir\.conv1\.weight"):
            load_checkpoint(path, expected_config=wider)

    def test_missing_tensor_detected(self, tmp_path):
        # Drop the tensor count by one and strip the last record.
        config = cfg(channels=8, nodes=1, loops=1, use_salience=False, use_graph=False)
        params = init_params(config, seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, config)
        loaded, _ = load_checkpoint(path)
        assert loaded.names() == params.names()
        blob = bytearray(path.read_bytes())
        import json
        import struct

        config_len = struct.unpack_from("<I", blob, 8)[0]
        count_at = 12 + config_len
        count = struct.unpack_from("<I", blob, count_at)[0]
        struct.pack_into("<I", blob, count_at, count - 1)
        last = params.names()[-1]
        record = struct.pack("<I", len(last.encode())) + last.encode()
        cut = bytes(blob).rindex(record)
        path.write_bytes(bytes(blob[:cut]))
        with pytest.raises(CheckpointError, match="missing parameter"):
            load_checkpoint(path)
