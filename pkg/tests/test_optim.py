import numpy as np
import pytest

from blenda.optim import (
    CheckpointError,
    NonFiniteGradientError,
    adamw_init,
    adamw_step,
    load_arrays,
    save_arrays,
)


class TestAdamW:
    def test_zero_grad_zero_decay_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = adamw_init(params)
        adamw_step(params, {"w": np.zeros(2)}, state, lr=0.1, weight_decay=0.0)
        assert params["w"] == pytest.approx([1.0, -2.0])

    def test_first_step_is_lr_times_sign(self):
        # from zero state: m_hat/(sqrt(v_hat)+eps) = g/(|g|+eps) ~ sign(g)
        params = {"w": np.array([0.0, 0.0])}
        state = adamw_init(params)
        g = np.array([0.3, -7.0])
        adamw_step(params, {"w": g}, state, lr=0.01, weight_decay=0.0, eps=1e-12)
        assert params["w"] == pytest.approx(-0.01 * np.sign(g), rel=1e-9)

    def test_decay_only_shrinks_by_factor(self):
        params = {"w": np.array([2.0, -4.0])}
        state = adamw_init(params)
        adamw_step(params, {"w": np.zeros(2)}, state, lr=0.1, weight_decay=0.01)
        assert params["w"] == pytest.approx(np.array([2.0, -4.0]) * (1 - 0.1 * 0.01))

    def test_non_finite_gradient_aborts(self):
        params = {"w": np.zeros(2)}
        state = adamw_init(params)
        with pytest.raises(NonFiniteGradientError, match="'w'"):
            adamw_step(params, {"w": np.array([1.0, np.nan])}, state, lr=0.1)
        # aborted before mutating anything
        assert state["step"] == 0

    def test_partial_update_leaves_other_params(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        state = adamw_init(params)
        adamw_step(params, {"a": np.ones(2)}, state, lr=0.1, weight_decay=0.1)
        assert params["b"] == pytest.approx(np.ones(2))
        assert not np.allclose(params["a"], np.ones(2))

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(0)
            params = {"w": rng.normal(size=(4, 3))}
            state = adamw_init(params)
            for _ in range(10):
                adamw_step(params, {"w": rng.normal(size=(4, 3))}, state, lr=1e-3)
            return params["w"]

        assert np.array_equal(run(), run())


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        arrays = {
            "weights": rng.normal(size=(7, 3)),
            "bias": rng.normal(size=(1, 3)),
            "scalar": np.float64(42.5),
        }
        path = tmp_path / "model.ckpt"
        save_arrays(arrays, path)
        back = load_arrays(path)
        assert set(back) == set(arrays)
        for key in arrays:
            assert np.array_equal(back[key], np.asarray(arrays[key]))
            assert back[key].dtype == np.float64

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_arrays(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "trunc.ckpt"
        save_arrays({"w": np.ones((4, 4))}, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CheckpointError, match="truncated"):
            load_arrays(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_arrays(tmp_path / "nope.ckpt")
