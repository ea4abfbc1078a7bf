import numpy as np
import pytest

from dualvic.geometry import Pose, quat_from_rotvec
from dualvic.policy import (
    BinSet,
    Observation,
    actions_to_stiffness,
    build_observation,
    forward,
    greedy_actions,
    head_distributions,
    init_params,
    load_checkpoint,
    log_prob_entropy,
    policy_forward,
    sample_actions,
    save_checkpoint,
    sinusoidal_embedding,
)


class TestEmbedding:
    def test_zero(self):
        np.testing.assert_allclose(sinusoidal_embedding(0.0), [0, 1, 0, 1, 0, 1, 0, 1])

    def test_range(self):
        rng = np.random.default_rng(1)
        for v in rng.uniform(-1e4, 1e4, size=50):
            e = sinusoidal_embedding(v)
            assert np.all(e >= -1.0) and np.all(e <= 1.0)

    def test_first_pair_direct(self):
        e = sinusoidal_embedding(1.0)
        assert e[0] == pytest.approx(np.sin(1.0), abs=1e-12)
        assert e[1] == pytest.approx(np.cos(1.0), abs=1e-12)
        # second pair at frequency 10000^(-2/8)
        f = 1.0 / 10000.0 ** (2.0 / 8.0)
        assert e[2] == pytest.approx(np.sin(f), abs=1e-12)
        assert e[3] == pytest.approx(np.cos(f), abs=1e-12)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            sinusoidal_embedding(np.nan)


class TestObservation:
    def _obs(self, n=7, tick=3, mass=1.0):
        pose = Pose([0.1, 0.2, 0.3], quat_from_rotvec([0.0, 0.1, 0.0]))
        return build_observation(
            pose, pose, pose, pose, Pose.identity(),
            np.zeros(n), np.zeros(n), np.zeros(6), np.zeros(6), np.zeros(6),
            tick, mass,
        )

    def test_length_69_for_7dof(self):
        assert Observation.length(7) == 69
        assert self._obs(7).flatten().shape == (69,)

    def test_stationary_identity_blocks(self):
        obs = self._obs()
        np.testing.assert_allclose(obs.dx_left, [0, 0, 0, 1, 0, 0, 0], atol=1e-15)
        np.testing.assert_allclose(obs.dx_right, [0, 0, 0, 1, 0, 0, 0], atol=1e-15)

    def test_roundtrip_bit_exact(self):
        rng = np.random.default_rng(3)
        for n in (3, 7):
            obs = build_observation(
                Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3))),
                Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3))),
                Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3))),
                Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3))),
                Pose(rng.normal(size=3), quat_from_rotvec(rng.normal(size=3))),
                rng.normal(size=n), rng.normal(size=n),
                rng.normal(size=6), rng.normal(size=6), rng.uniform(20, 600, 6),
                11, 2.5,
            )
            flat = obs.flatten()
            back = Observation.unflatten(flat, n)
            assert np.array_equal(back.flatten(), flat)

    def test_determinism(self):
        a = self._obs().flatten()
        b = self._obs().flatten()
        assert np.array_equal(a, b)


class TestPolicyNetwork:
    def test_distributions_normalized(self):
        params = init_params(3, hidden=16, seed=0)
        obs = Observation.unflatten(np.random.default_rng(0).normal(size=Observation.length(3)), 3)
        dists, value = policy_forward(params, obs)
        assert len(dists) == 6
        for d in dists:
            assert d.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.isfinite(value)

    def test_zero_final_layer_uniform(self):
        params = init_params(3, hidden=16, seed=1)
        W, b = params.weights[4 + 4]  # final policy layer
        W[:] = 0.0
        b[:] = 0.0
        obs = Observation.unflatten(np.zeros(Observation.length(3)), 3)
        dists, _ = policy_forward(params, obs)
        for d in dists:
            np.testing.assert_allclose(d, np.full_like(d, 1.0 / d.shape[0]), atol=1e-12)

    def test_greedy_is_bin_multiple(self):
        params = init_params(3, hidden=16, seed=2)
        rng = np.random.default_rng(5)
        obs = rng.normal(size=(4, Observation.length(3)))
        logits, _ = forward(params, obs)
        acts = greedy_actions(params, logits)
        ks = actions_to_stiffness(params, acts)
        assert np.all(ks > 0)
        np.testing.assert_allclose(ks % 20.0, 0.0, atol=1e-9)
        assert np.all(ks[:, :3] <= 600.0) and np.all(ks[:, 3:] <= 400.0)

    def test_sampling_respects_distribution(self):
        params = init_params(3, hidden=16, seed=3)
        rng = np.random.default_rng(11)
        obs = rng.normal(size=(1, Observation.length(3)))
        logits, _ = forward(params, obs)
        acts = sample_actions(params, np.repeat(logits, 4000, axis=0), rng)
        dists = head_distributions(params, logits)
        for h in range(6):
            freq = np.bincount(acts[:, h], minlength=dists[h].shape[1]) / 4000.0
            assert np.max(np.abs(freq - dists[h][0])) < 0.05

    def test_per_arm_bins(self):
        bins = BinSet(per_arm=True)
        params = init_params(3, bins=bins, hidden=16, seed=4)
        assert len(params.head_sizes) == 12

    def test_logprob_matches_manual(self):
        params = init_params(3, hidden=16, seed=6)
        rng = np.random.default_rng(13)
        obs = rng.normal(size=(3, Observation.length(3)))
        logits, _ = forward(params, obs)
        acts = sample_actions(params, logits, rng)
        lp, ent = log_prob_entropy(params, logits, acts)
        dists = head_distributions(params, logits)
        manual = np.zeros(3)
        for h in range(6):
            manual += np.log(dists[h][np.arange(3), acts[:, h]])
        np.testing.assert_allclose(lp, manual, atol=1e-10)
        assert np.all(ent > 0)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        params = init_params(3, hidden=16, seed=7)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(params, path, extra={"note": "test"})
        loaded = load_checkpoint(path)
        assert loaded.head_sizes == params.head_sizes
        assert loaded.bins == params.bins
        rng = np.random.default_rng(17)
        obs = rng.normal(size=(2, params.obs_dim))
        a, va = forward(params, obs)
        b, vb = forward(loaded, obs)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(va, vb)
