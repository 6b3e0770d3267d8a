import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fd_cases import CASES, conv_case, context_encoder_case, glimpse_encoder_case, tiny_net, worst_error
from roiscope.imaging import Glimpse
from roiscope.nn import (CheckpointError, HiddenState, NetConfig, ParameterSet, class_head, encode_context,
                         encode_glimpse, encoder_forward, init_params, is_bias, load_checkpoint, location_head,
                         param_shapes, recurrent_step, residual_block, save_checkpoint, softmax)

TOL = 1e-4


class TestResidualBlock:
    def test_zero_weights_nonnegative_identity(self):
        p = np.random.default_rng(0).uniform(0, 1, (1, 4, 6, 6))
        out, _ = residual_block(p, np.zeros((4, 4, 3, 3)), np.zeros((4, 4, 3, 3)))
        assert np.array_equal(out, p)

    def test_zero_weights_relu(self):
        p = np.random.default_rng(1).normal(size=(2, 3, 5, 5))
        out, _ = residual_block(p, np.zeros((3, 3, 3, 3)), np.zeros((3, 3, 3, 3)))
        assert np.array_equal(out, np.maximum(p, 0))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            residual_block(np.zeros((1, 3, 4, 4)), np.zeros((5, 3, 3, 3)), np.zeros((5, 5, 3, 3)))

    @pytest.mark.parametrize("seed", range(3))
    def test_gradient(self, seed):
        assert worst_error(*CASES["residual block"](seed)) <= TOL

    @pytest.mark.parametrize("seed", range(4))
    def test_conv_gradient(self, seed):
        assert worst_error(*conv_case(seed)) <= TOL


class TestEncoders:
    def test_identical_patches_equal_halves(self):
        net = NetConfig()
        params = init_params(net, 0)
        patch = np.random.default_rng(0).uniform(size=(16, 16, 3))
        v = encode_glimpse(Glimpse(fine=patch, coarse=patch, center=(0.5, 0.5)), params, net)
        assert v.shape == (128,) and np.array_equal(v[:64], v[64:])

    def test_zero_final_map(self):
        net = NetConfig()
        params = init_params(net, 0)
        params["theta_c1.fc_w"][:] = 0
        g = np.random.default_rng(1).uniform(size=(16, 16, 3))
        assert not encode_glimpse(Glimpse(fine=g, coarse=g, center=(0.5, 0.5)), params, net).any()

    def test_wrong_patch_side(self):
        net = NetConfig()
        with pytest.raises(ValueError):
            small = np.zeros((8, 8, 3))
            encode_glimpse(Glimpse(fine=small, coarse=small, center=(0.5, 0.5)), init_params(net, 0), net)

    def test_zero_context_zero_features(self):
        net = NetConfig()
        params = init_params(net, 0)
        out, _ = encoder_forward(params, "theta_c2", np.zeros((1, 16, 16, 3)), net.context_pool)
        assert out.shape == (1, 128) and not out.any()
        identity = NetConfig(input_mean=0.0, input_std=1.0)
        assert not encode_context(np.zeros((16, 16, 3)), init_params(identity, 0), identity).any()

    def test_context_deterministic(self):
        net = NetConfig()
        params = init_params(net, 2)
        ctx = np.random.default_rng(3).uniform(size=(16, 16, 3))
        assert np.array_equal(encode_context(ctx, params, net), encode_context(ctx, params, net))

    def test_context_shape_checked(self):
        net = NetConfig()
        with pytest.raises(ValueError):
            encode_context(np.zeros((8, 8, 3)), init_params(net, 0), net)

    def test_unshared_branches_have_own_weights(self):
        net = NetConfig(share_branches=False)
        assert "theta_c1b.fc_w" in param_shapes(net) and "theta_c1b.fc_w" not in param_shapes(NetConfig())

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("share", [True, False])
    def test_glimpse_gradient(self, seed, share):
        assert worst_error(*glimpse_encoder_case(seed, share)) <= TOL

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("pool", ["flatten", "mean"])
    def test_context_gradient(self, seed, pool):
        assert worst_error(*context_encoder_case(seed, pool)) <= TOL


class TestRecurrence:
    def test_zero_everything(self):
        net = NetConfig()
        params = ParameterSet({k: np.zeros(s) for k, s in param_shapes(net).items()})
        state, out = recurrent_step(np.zeros(128), HiddenState.zeros(net), params)
        assert out.shape == (128,) and not out.any() and not state.c1.any()

    def test_deterministic(self):
        net = tiny_net()
        params = init_params(net, 1)
        v = np.random.default_rng(0).normal(size=net.feature_dim)
        state = HiddenState.zeros(net)
        a, b = recurrent_step(v, state, params), recurrent_step(v, state, params)
        assert np.array_equal(a[1], b[1])

    @pytest.mark.parametrize("seed", range(3))
    def test_three_step_gradient(self, seed):
        assert worst_error(*CASES["recurrent step x3"](seed)) <= TOL


class TestHeads:
    def test_zero_context_centres(self):
        net = NetConfig()
        params = init_params(net, 0)
        h = np.random.default_rng(0).normal(size=128)
        assert np.array_equal(location_head(h, np.zeros(128), params), [0.5, 0.5])

    def test_hadamard_symmetric(self):
        params = init_params(NetConfig(), 0)
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=128), rng.normal(size=128)
        assert np.array_equal(location_head(a, b, params), location_head(b, a, params))

    def test_location_in_unit_square(self):
        params = init_params(NetConfig(init_std=5.0), 0)
        mu = location_head(np.full(128, 3.0), np.full(128, 3.0), params)
        assert np.all((mu >= 0) & (mu <= 1))

    def test_zero_class_head_uniform(self):
        params = ParameterSet({"theta_y.W": np.zeros((128, 4)), "theta_y.b": np.zeros(4)})
        assert np.array_equal(class_head(np.ones(128), params), [0.25] * 4)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10**6), shift=st.floats(-50, 50))
    def test_softmax_shift_and_sum(self, seed, shift):
        z = np.random.default_rng(seed).normal(0, 5, 4)
        p = softmax(z)
        assert abs(p.sum() - 1) <= 1e-12 and np.all(p > 0)
        # z + shift rounds z at the ulp of the shifted magnitude
        tol = 8 * np.finfo(float).eps * (np.abs(z).max() + abs(shift) + 1)
        assert np.allclose(softmax(z + shift), p, rtol=0, atol=tol)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("head", ["class head", "location head"])
    def test_gradient(self, seed, head):
        assert worst_error(*CASES[head](seed)) <= TOL


class TestInit:
    def test_biases_zero(self):
        params = init_params(NetConfig(), 0)
        assert all(not v.any() for k, v in params.items() if is_bias(k))

    def test_same_seed(self):
        assert init_params(NetConfig(), 4).equal(init_params(NetConfig(), 4))
        assert not init_params(NetConfig(), 4).equal(init_params(NetConfig(), 5))

    def test_weight_std(self):
        params = init_params(NetConfig(hidden=(256, 128)), 0)
        w = params["theta_hstar.W"]
        assert w.size >= 10**5
        assert abs(w.std() - 0.01) <= 0.05 * 0.01

    def test_fan_in_scale(self):
        params = init_params(NetConfig(init_scheme="fan_in"), 0)
        w = params["theta_hstar.W"]
        assert abs(w.std() - np.sqrt(1 / w.shape[0])) <= 0.05 * np.sqrt(1 / w.shape[0])

    def test_bad_scheme(self):
        with pytest.raises(ValueError):
            NetConfig(init_scheme="xavier")

    def test_context_width_must_match(self):
        with pytest.raises(ValueError):
            NetConfig(context_features=64)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        net = tiny_net()
        params = init_params(net, 3)
        save_checkpoint(tmp_path / "c.bin", params, net, step=7, seed=3, extra={"note": "x"})
        back, cfg, manifest = load_checkpoint(tmp_path / "c.bin")
        assert back.equal(params) and cfg == net
        assert manifest["step"] == 7 and manifest["note"] == "x"

    def test_bytes_stable(self, tmp_path):
        net = tiny_net()
        params = init_params(net, 3)
        save_checkpoint(tmp_path / "a.bin", params, net)
        save_checkpoint(tmp_path / "b.bin", params, net)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_truncated(self, tmp_path):
        net = tiny_net()
        save_checkpoint(tmp_path / "c.bin", init_params(net, 0), net)
        data = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "c.bin").write_bytes(data[:-10])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.bin")

    def test_not_a_checkpoint(self, tmp_path):
        net = tiny_net()
        save_checkpoint(tmp_path / "c.bin", init_params(net, 0), net)
        (tmp_path / "c.bin").write_bytes(b"garbage")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.bin")

    def test_nan_rejected(self, tmp_path):
        net = tiny_net()
        params = init_params(net, 0)
        params["theta_y.b"][0] = np.nan
        save_checkpoint(tmp_path / "c.bin", params, net)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.bin")
