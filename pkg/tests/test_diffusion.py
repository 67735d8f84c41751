import numpy as np
import pytest

from deskworld.autodiff import Tensor
from deskworld.diffusion import (DitConfig, DitDynamics, MaeConfig,
                                 MaeTokenizer, diffusion_rollout,
                                 forcing_corrupt)
from deskworld.rng import stream

from gradcheck import check_gradients

MAE_TINY = MaeConfig(model_dim=8, heads=2, ffn_dim=8, blocks=1, latent_dim=4,
                     patch=4, height=8, width=8, max_frames=8)
DIT_TINY = DitConfig(model_dim=8, heads=2, ffn_dim=8, blocks=1, latent_dim=4,
                     action_latent_dim=4, action_vocab=5, patches_per_frame=4,
                     max_frames=8)


def unit_frames(seed, b, t, cfg=MAE_TINY, dtype=np.float64):
    rng = stream(seed, "dif-frames")
    return rng.uniform(-1, 1, size=(b, t, cfg.height, cfg.width, cfg.channels)).astype(dtype)


def rand_latents(seed, b, t, n=4, dl=4, dtype=np.float64):
    return stream(seed, "z").normal(size=(b, t, n, dl)).astype(dtype)


def action_lat(seed, b, t, dl=4, dtype=np.float64):
    return Tensor(stream(seed, "a").normal(size=(b, t, dl)).astype(dtype))


class TestCorruption:
    def test_tau_zero_is_identity(self):
        z = rand_latents(0, 2, 3)
        out = forcing_corrupt(z, np.zeros((2, 3)), stream(0, "c"))
        np.testing.assert_array_equal(out, z)

    def test_tau_one_is_pure_noise(self):
        z = rand_latents(1, 1, 2)
        r1 = stream(1, "c")
        out = forcing_corrupt(z, np.ones((1, 2)), r1)
        r2 = stream(1, "c")
        eps = r2.standard_normal(z.shape)
        np.testing.assert_allclose(out, eps, atol=1e-12)

    def test_intermediate_tau_statistics(self):
        # z fixed at 0: var(z_tau) = tau^2; mean ~ 0
        z = np.zeros((1, 1, 4096, 8))
        out = forcing_corrupt(z, np.full((1, 1), 0.5), stream(2, "c"))
        assert abs(out.std() - 0.5) < 0.01
        assert abs(out.mean()) < 0.01

    def test_per_frame_tau_broadcast(self):
        z = rand_latents(3, 1, 2)
        tau = np.array([[0.0, 1.0]])
        out = forcing_corrupt(z, tau, stream(3, "c"))
        np.testing.assert_array_equal(out[:, 0], z[:, 0])
        assert not np.allclose(out[:, 1], z[:, 1])


class TestMae:
    def test_latents_tanh_bounded(self):
        mae = MaeTokenizer(MAE_TINY, seed=0, dtype=np.float64)
        lat = mae.encode(Tensor(unit_frames(4, 2, 3)))
        assert lat.shape == (2, 3, 4, 4)
        assert np.all(np.abs(lat.data) < 1.0)

    def test_forward_shapes_and_mask_cap(self):
        mae = MaeTokenizer(MAE_TINY, seed=1, dtype=np.float64)
        frames = unit_frames(5, 2, 3)
        recon, latents, loss = mae.forward(Tensor(frames), stream(4, "m"))
        assert recon.shape == frames.shape
        assert latents.shape == (2, 3, 4, 4)
        assert float(loss.data) > 0

    def test_mask_changes_latents(self):
        mae = MaeTokenizer(MAE_TINY, seed=2, dtype=np.float64)
        frames = Tensor(unit_frames(6, 1, 2))
        clear = mae.encode(frames)
        mask = np.zeros((1, 2, 4), dtype=bool)
        mask[0, 1, 0] = True
        masked = mae.encode(frames, mask=mask)
        assert not np.allclose(clear.data, masked.data)
        # frame 0 unmasked: spatial attention within the frame is untouched,
        # but temporal mixing may propagate; only assert the masked frame moved
        assert not np.allclose(clear.data[:, 1], masked.data[:, 1])

    def test_mae_loss_gradcheck(self):
        mae = MaeTokenizer(MAE_TINY, seed=3, dtype=np.float64)
        frames = unit_frames(7, 1, 2)
        mask = np.zeros((1, 2, 4), dtype=bool)
        mask[0, 1, :2] = True
        names = sorted(mae.params)
        arrays = [mae.params[n].data.copy() for n in names]

        def loss(ps):
            saved = mae.params
            mae.params = {n: ps[i] for i, n in enumerate(names)}
            try:
                latents = mae.encode(Tensor(frames), mask=mask)
                recon = mae.decode(latents)
                from deskworld.nn import mse
                return mse(recon, frames)
            finally:
                mae.params = saved

        check_gradients(loss, arrays)


class TestDit:
    def test_predict_clean_shape(self):
        dit = DitDynamics(DIT_TINY, seed=0, dtype=np.float64)
        z = rand_latents(8, 2, 3)
        pred = dit.predict_clean(z, np.full((2, 3), 0.5), action_lat(9, 2, 2))
        assert pred.shape == (2, 3, 4, 4)

    def test_action_count_validated(self):
        dit = DitDynamics(DIT_TINY, seed=0, dtype=np.float64)
        with pytest.raises(ValueError):
            dit.predict_clean(rand_latents(10, 1, 3), np.full((1, 3), 0.5),
                              action_lat(11, 1, 1))

    def test_ramp_weight_zero_tau_contributes_nothing(self):
        # if every tau were 0 the loss would be exactly 0; verified through
        # the weighting algebra with a forced tau draw
        dit = DitDynamics(DIT_TINY, seed=1, dtype=np.float64)
        z = rand_latents(12, 1, 2)

        class ZeroTauRng:
            def uniform(self, lo, hi, size=None):
                return np.zeros(size)

            def standard_normal(self, shape):
                return stream(5, "eps").standard_normal(shape)

        loss = dit.loss(z, action_lat(13, 1, 1), ZeroTauRng())
        assert float(loss.data) == 0.0

    def test_loss_gradcheck(self):
        dit = DitDynamics(DIT_TINY, seed=2, dtype=np.float64)
        z = rand_latents(14, 1, 2)
        names = sorted(dit.params)
        arrays = [dit.params[n].data.copy() for n in names]

        def loss(ps):
            saved = dit.params
            dit.params = {n: ps[i] for i, n in enumerate(names)}
            try:
                return dit.loss(z, action_lat(15, 1, 1), stream(6, "tau"))
            finally:
                dit.params = saved

        check_gradients(loss, arrays)


class _CleanOracle:
    """Predictor that always returns the true clean latents."""

    def __init__(self, dit, truth):
        self.cfg = dit.cfg
        self.params = dit.params
        self.dtype = dit.dtype
        self._truth = truth

    def predict_clean(self, noised, tau, action_latents):
        t = noised.shape[1]
        return Tensor(self._truth[:, :t].copy())

    sample_frame = DitDynamics.sample_frame


class TestSampler:
    def test_oracle_predictor_recovers_truth_in_one_step(self):
        dit = DitDynamics(DIT_TINY, seed=3, dtype=np.float64)
        truth = rand_latents(16, 2, 4)
        oracle = _CleanOracle(dit, truth)
        ctx = truth[:, :3]
        out = oracle.sample_frame(ctx, action_lat(17, 2, 3), steps=1,
                                  rng=stream(7, "s"))
        np.testing.assert_allclose(out, truth[:, 3], atol=1e-10)

    @pytest.mark.parametrize("steps", [5, 25])
    def test_oracle_predictor_multi_step_exact(self, steps):
        # Euler update z' = z + dtau (x - z)/tau contracts to x; with a
        # perfect predictor the first update already lands on x and every
        # later update leaves it fixed
        dit = DitDynamics(DIT_TINY, seed=3, dtype=np.float64)
        truth = rand_latents(18, 1, 3)
        oracle = _CleanOracle(dit, truth)
        out = oracle.sample_frame(truth[:, :2], action_lat(19, 1, 2),
                                  steps=steps, rng=stream(8, "s"))
        np.testing.assert_allclose(out, truth[:, 2], atol=1e-10)

    def test_steps_validation(self):
        dit = DitDynamics(DIT_TINY, seed=3, dtype=np.float64)
        with pytest.raises(ValueError):
            dit.sample_frame(rand_latents(20, 1, 2), action_lat(21, 1, 2), steps=0)

    def test_sample_determinism(self):
        dit = DitDynamics(DIT_TINY, seed=4, dtype=np.float64)
        ctx = rand_latents(22, 1, 2)
        a = dit.sample_frame(ctx, action_lat(23, 1, 2), steps=3, rng=stream(9, "s"))
        b = dit.sample_frame(ctx, action_lat(23, 1, 2), steps=3, rng=stream(9, "s"))
        np.testing.assert_array_equal(a, b)


class TestRollout:
    def _models(self):
        mae = MaeTokenizer(MAE_TINY, seed=5, dtype=np.float64)
        dit = DitDynamics(DIT_TINY, seed=6, dtype=np.float64)
        return mae, dit

    def test_rollout_shape_dtype_and_range(self):
        mae, dit = self._models()
        frames = stream(24, "f").integers(0, 256, size=(1, 4, 8, 8, 3)).astype(np.uint8)
        actions = [np.array([1]), np.array([3])]
        out = diffusion_rollout(mae, dit, frames, actions, horizon=2, steps=2,
                                rng=stream(10, "r"))
        assert out.shape == (1, 6, 8, 8, 3)
        assert out.dtype == np.uint8

    def test_rollout_determinism(self):
        mae, dit = self._models()
        frames = stream(25, "f").integers(0, 256, size=(1, 4, 8, 8, 3)).astype(np.uint8)
        actions = [np.array([0]), np.array([2])]
        a = diffusion_rollout(mae, dit, frames, actions, 2, steps=2, rng=stream(11, "r"))
        b = diffusion_rollout(mae, dit, frames, actions, 2, steps=2, rng=stream(11, "r"))
        np.testing.assert_array_equal(a, b)

    def test_rollout_missing_actions_rejected(self):
        mae, dit = self._models()
        frames = np.zeros((1, 4, 8, 8, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            diffusion_rollout(mae, dit, frames, [np.array([0])], horizon=2)
