import numpy as np
import pytest

from wbm.env import (
    STAGE_APPROACH,
    STAGE_EMBRACE,
    STAGE_TRANSPORT,
    EmbraceConfig,
    EmbraceEnv,
    ObjectSpec,
    ScriptedEmbracePolicy,
    act_through_prior,
    attach_check,
    task_features,
    write_trace_csv,
)
from wbm.errors import ConfigError, ContractViolation
from wbm.nsdf import nsdf_features
from wbm.prior import DistillConfig, PriorBundle
from wbm.robot import fk_batch


def make_env(spec, nsdf, n=4, scenarios=(1, 2, 3), **kw):
    return EmbraceEnv(spec, nsdf, EmbraceConfig(n_lanes=n, scenarios=scenarios, **kw))


def posed_frames(spec, posture_name, root_xy, yaw):
    q = spec.posture(posture_name)[None]
    root_pos = np.array([[root_xy[0], root_xy[1], spec.root_height]])
    from wbm.rotations import quat_from_yaw

    return fk_batch(spec, root_pos, quat_from_yaw(np.array([yaw])), q)


class TestConfig:
    def test_bad_annulus_rejected(self):
        with pytest.raises(ConfigError):
            EmbraceConfig(annulus=(4.0, 3.5))

    def test_bad_scenarios_rejected(self):
        with pytest.raises(ConfigError):
            EmbraceConfig(scenarios=(0, 4))
        with pytest.raises(ConfigError):
            EmbraceConfig(scenarios=())

    def test_bad_radii_rejected(self):
        with pytest.raises(ConfigError):
            EmbraceConfig(pickup_radius=0.0)

    def test_object_spec_validation(self):
        with pytest.raises(ConfigError):
            ObjectSpec(shape="torus")
        with pytest.raises(ConfigError):
            ObjectSpec(dims=(0.2, -0.1))
        with pytest.raises(ConfigError):
            ObjectSpec(mass=0.0)

    def test_object_half_height(self):
        assert ObjectSpec("cylinder", (0.2, 0.4), 1.0).half_height == 0.2
        assert ObjectSpec("cuboid", (0.1, 0.2, 0.3), 1.0).half_height == 0.3
        assert ObjectSpec("sphere", (0.25,), 1.0).half_height == 0.25


class TestAttachCheck:
    OBJ = ObjectSpec()
    OBJ_POS = np.array([[0.0, 0.0, 1.0]])
    OBJ_QUAT = np.array([[1.0, 0.0, 0.0, 0.0]])

    def check(self, spec, posture, standoff):
        pos, quat = posed_frames(spec, posture, (-standoff, 0.0), 0.0)
        return attach_check(spec, pos, quat, self.OBJ, self.OBJ_POS, self.OBJ_QUAT)

    def test_hug_attaches(self, spec):
        attached, contact, dist = self.check(spec, "hug", 0.30)
        assert attached[0]
        assert contact[0].sum() >= 3

    def test_prehug_never_attaches_at_spawn_standoffs(self, spec):
        for d in (0.28, 0.30, 0.33):
            attached, _, _ = self.check(spec, "prehug", d)
            assert not attached[0], f"prehug attached at standoff {d}"

    def test_neutral_contacts_without_squeeze(self, spec):
        attached, contact, _ = self.check(spec, "neutral", 0.32)
        assert not attached[0]

    def test_far_away_no_contacts(self, spec):
        attached, contact, dist = self.check(spec, "hug", 2.0)
        assert not attached[0]
        assert contact[0].sum() == 0
        assert np.all(dist[0] > 0.5)

    def _hand_tip(self, spec):
        pos, quat = posed_frames(spec, "neutral", (0.0, 0.0), 0.0)
        h = spec.hand_links[0]
        from wbm.rotations import quat_rotate

        tip = pos[0, h] + quat_rotate(quat[0, h], spec.links[h].capsule.b)
        return pos, quat, tip

    def test_single_link_touch_not_attached(self, spec):
        pos, quat, tip = self._hand_tip(spec)
        obj = ObjectSpec("sphere", (0.06,), 0.5)
        center = (tip + np.array([0.10, 0.0, 0.0]))[None]
        attached, contact, _ = attach_check(spec, pos, quat, obj, center,
                                            self.OBJ_QUAT)
        assert contact[0].sum() == 1
        assert not attached[0]

    def test_two_contacts_same_side_not_attached(self, spec):
        pos, quat, tip = self._hand_tip(spec)
        obj = ObjectSpec("sphere", (0.12,), 0.5)
        center = (tip + np.array([0.14, 0.0, 0.05]))[None]
        attached, contact, _ = attach_check(spec, pos, quat, obj, center,
                                            self.OBJ_QUAT)
        assert contact[0].sum() == 2
        assert not attached[0]

    def test_vectorized_matches_single(self, spec):
        pos1, quat1 = posed_frames(spec, "hug", (-0.30, 0.0), 0.0)
        pos2, quat2 = posed_frames(spec, "prehug", (-0.30, 0.0), 0.0)
        pos = np.concatenate([pos1, pos2])
        quat = np.concatenate([quat1, quat2])
        obj_pos = np.tile(self.OBJ_POS, (2, 1))
        obj_quat = np.tile(self.OBJ_QUAT, (2, 1))
        attached, contact, dist = attach_check(spec, pos, quat, self.OBJ, obj_pos, obj_quat)
        a1, c1, d1 = attach_check(spec, pos1, quat1, self.OBJ, self.OBJ_POS, self.OBJ_QUAT)
        assert attached[0] == a1[0] and attached.tolist() == [True, False]
        np.testing.assert_array_equal(contact[0], c1[0])
        np.testing.assert_allclose(dist[0], d1[0], atol=1e-12)


class TestResets:
    def test_scenario1_annulus_and_stage(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=64, scenarios=(1,))
        obs = env.reset_all(np.random.default_rng(0))
        assert obs.shape == (64, 106)
        d = np.hypot(*(env.sim.root_pos[:, :2] - np.asarray(env.cfg.object_xy)).T)
        assert np.all(d >= env.cfg.annulus[0]) and np.all(d <= env.cfg.annulus[1])
        assert np.all(env.stage == STAGE_APPROACH)
        assert not env.attached.any()
        # spread over the annulus rather than a single arc
        assert d.std() > 0.05

    def test_scenario2_standoff_facing(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=32, scenarios=(2,))
        obs = env.reset_all(np.random.default_rng(1))
        d = np.hypot(*(env.sim.root_pos[:, :2] - np.asarray(env.cfg.object_xy)).T)
        lo, hi = env.cfg.prehug_standoff
        assert np.all(d >= lo) and np.all(d <= hi)
        th_box = obs[:, 88]
        np.testing.assert_allclose(th_box, 0.0, atol=1e-9)
        assert np.all(env.stage == STAGE_EMBRACE)
        assert not env.attached.any()

    def test_scenario3_attached_from_start(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=8, scenarios=(3,))
        env.reset_all(np.random.default_rng(2))
        assert env.attached.all()
        assert np.all(env.stage == STAGE_TRANSPORT)
        # the captured grip really is a squeeze at spawn
        attached, contact, _ = attach_check(
            spec, env.sim.link_pos, env.sim.link_quat, env.obj,
            env.obj_pos, env.obj_quat, env.cfg.contact_eps)
        assert attached.all()
        assert np.all(contact.sum(axis=1) >= 3)

    def test_fixed_seed_identical(self, spec, nsdf_quick):
        e1 = make_env(spec, nsdf_quick, n=6)
        e2 = make_env(spec, nsdf_quick, n=6)
        o1 = e1.reset_all(np.random.default_rng(9))
        o2 = e2.reset_all(np.random.default_rng(9))
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(e1.lane_scenario, e2.lane_scenario)

    def test_untrained_nsdf_rejected(self, spec):
        from wbm.nsdf import NsdfFitConfig, fit_nsdf

        blank = fit_nsdf(spec, NsdfFitConfig(samples_per_link=100, epochs=0), seed=0)
        with pytest.raises(ContractViolation):
            EmbraceEnv(spec, blank, EmbraceConfig(n_lanes=2))


class TestObs:
    def test_layout(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=5)
        obs = env.reset_all(np.random.default_rng(4))
        assert np.all(np.isfinite(obs))
        np.testing.assert_array_equal(
            obs[:, :87], env.sim.deploy_obs(env.prev_action))
        d_t = nsdf_features(nsdf_quick, env.sim.link_pos, env.sim.link_quat,
                            env.obj_pos)
        np.testing.assert_array_equal(obs[:, 91:], d_t)
        rel = env.obj_pos[:, :2] - env.sim.root_pos[:, :2]
        np.testing.assert_allclose(obs[:, 87], np.hypot(rel[:, 0], rel[:, 1]),
                                   atol=1e-12)

    def test_task_features_bearings(self):
        root = np.array([[0.0, 0.0, 0.9]])
        obj = np.array([[1.0, 1.0, 1.0]])
        target = np.array([0.0, 2.0])
        f = task_features(root, np.array([0.0]), obj, target, np.zeros((1, 15)))
        np.testing.assert_allclose(f[0, 0], np.sqrt(2.0))
        np.testing.assert_allclose(f[0, 1], np.pi / 4)
        np.testing.assert_allclose(f[0, 2], 2.0)
        np.testing.assert_allclose(f[0, 3], np.pi / 2)
        # yaw subtracts from the bearing
        f2 = task_features(root, np.array([np.pi / 4]), obj, target,
                           np.zeros((1, 15)))
        np.testing.assert_allclose(f2[0, 1], 0.0, atol=1e-12)


class TestStepMechanics:
    def test_hold_action_is_stationary(self, spec, nsdf_quick):
        for sc in (1, 2, 3):
            env = make_env(spec, nsdf_quick, n=3, scenarios=(sc,))
            env.reset_all(np.random.default_rng(sc))
            root0 = env.sim.root_pos.copy()
            obj0 = env.obj_pos.copy()
            for _ in range(5):
                env.step(env.sim.q.copy())
            np.testing.assert_allclose(env.sim.root_pos, root0, atol=1e-12)
            np.testing.assert_allclose(env.obj_pos, obj0, atol=1e-12)
            if sc == 3:
                assert env.attached.all()

    def test_nonfinite_action_rejected(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=2)
        env.reset_all(np.random.default_rng(0))
        bad = np.zeros((2, env.act_dim))
        bad[1, 3] = np.inf
        with pytest.raises(ContractViolation):
            env.step(bad)

    def test_wrong_shape_rejected(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=2)
        env.reset_all(np.random.default_rng(0))
        with pytest.raises(ContractViolation):
            env.step(np.zeros((2, env.act_dim + 1)))

    def test_zone_gating_of_reward_branches(self, spec, nsdf_quick):
        # far outside the zone: walk shaping active, manipulation terms zero
        env = make_env(spec, nsdf_quick, n=4, scenarios=(1,))
        env.reset_all(np.random.default_rng(5))
        env.step(env.sim.q.copy())
        b = env.last_breakdown
        assert np.all(b.r_carry == 0.0) and np.all(b.r_arm == 0.0)
        assert np.all(b.r_nsdf == 0.0)
        assert np.all(b.r_walk > 0.0) and np.all(b.r_walk <= 3.0)
        # inside the zone: walk saturates at exactly 1
        env2 = make_env(spec, nsdf_quick, n=4, scenarios=(2,))
        env2.reset_all(np.random.default_rng(6))
        env2.step(env2.sim.q.copy())
        b2 = env2.last_breakdown
        np.testing.assert_array_equal(b2.r_walk, np.ones(4))
        assert np.all(b2.r_nsdf > 0.0)

    def test_detach_drops_object_and_fails(self, spec, nsdf_quick):
        # an attachment with no supporting contacts decays after the
        # 10-step hysteresis window and the object falls below the pedestal
        env = make_env(spec, nsdf_quick, n=2, scenarios=(3,))
        env.reset_all(np.random.default_rng(7))
        env.rel_pos[0] = env.rel_pos[0] * np.array([2.5, 2.5, 1.0])
        hold = env.sim.q.copy()
        saw_failure = False
        for t in range(env.cfg.detach_steps + 2):
            _, _, term, _, _ = env.step(hold)
            if env.last_episode_stats:
                assert not any(env.last_episode_stats["successes"])
                assert t + 1 >= env.cfg.detach_steps
                saw_failure = True
                break
        assert saw_failure, "contact-free attachment never dropped the object"
        assert env.attached[1]  # untouched lane keeps its grip

    def test_chest_contact_keeps_attachment(self, spec, nsdf_quick):
        # a chest-captured object keeps >= 2 contact links even with the
        # arms fully open, so the grip persists by the detach rule
        env = make_env(spec, nsdf_quick, n=2, scenarios=(3,))
        env.reset_all(np.random.default_rng(7))
        release = np.tile(spec.posture("neutral"), (2, 1))
        for _ in range(80):
            env.step(release)
        assert env.attached.all()
        assert np.all(env.last_contact_count >= 2)

    def test_stage_progression_and_success(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=4, scenarios=(2,))
        obs = env.reset_all(np.random.default_rng(8))
        pol = ScriptedEmbracePolicy(env)
        stages0 = []
        succ = []
        for _ in range(400):
            obs, rew, term, tout, _ = env.step(pol(obs))
            stages0.append(int(env.stage[0]))
            if env.last_episode_stats:
                succ.extend(env.last_episode_stats["successes"])
            if len(succ) >= 4:
                break
        assert STAGE_TRANSPORT in stages0
        assert len(succ) >= 4 and all(succ)

    def test_full_course_from_annulus(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=2, scenarios=(1,))
        obs = env.reset_all(np.random.default_rng(10))
        pol = ScriptedEmbracePolicy(env)
        seen = set()
        succ = []
        for _ in range(750):
            obs, *_ = env.step(pol(obs))
            seen.add(int(env.stage[0]))
            if env.last_episode_stats:
                succ.extend(env.last_episode_stats["successes"])
            if succ:
                break
        assert seen >= {STAGE_APPROACH, STAGE_EMBRACE, STAGE_TRANSPORT}
        assert succ and succ[0]

    def test_rollout_determinism(self, spec, nsdf_quick):
        rewards = []
        for _ in range(2):
            env = make_env(spec, nsdf_quick, n=3)
            obs = env.reset_all(np.random.default_rng(11))
            pol = ScriptedEmbracePolicy(env)
            acc = []
            for _ in range(120):
                obs, rew, *_ = env.step(pol(obs))
                acc.append(rew.copy())
            rewards.append(np.array(acc))
        np.testing.assert_array_equal(rewards[0], rewards[1])


@pytest.fixture(scope="module")
def bundle(spec):
    b = PriorBundle.create(spec, DistillConfig(), np.random.default_rng(0))
    b.freeze_deployment()
    return b


class TestLatentMode:

    def test_unfrozen_bundle_rejected(self, spec, nsdf_quick):
        raw = PriorBundle.create(spec, DistillConfig(), np.random.default_rng(1))
        with pytest.raises(ContractViolation):
            EmbraceEnv(spec, nsdf_quick, EmbraceConfig(n_lanes=2), bundle=raw)
        with pytest.raises(ContractViolation):
            act_through_prior(raw, np.zeros((2, 106)), np.zeros((2, 32)))

    def test_zero_latent_is_prior_mean_decode(self, spec, nsdf_quick, bundle):
        env = EmbraceEnv(spec, nsdf_quick, EmbraceConfig(n_lanes=3),
                         bundle=bundle)
        obs = env.reset_all(np.random.default_rng(2))
        assert env.act_dim == bundle.manifest["latent_dim"]
        u0 = np.zeros((3, env.act_dim))
        got = act_through_prior(bundle, obs, u0)
        s_d = obs[:, :bundle.manifest["deploy_dim"]]
        want = bundle.decode(s_d, bundle.prior(s_d).mu)
        np.testing.assert_array_equal(got, want)

    def test_latent_steps_run_and_are_deterministic(self, spec, nsdf_quick,
                                                    bundle):
        outs = []
        for _ in range(2):
            env = EmbraceEnv(spec, nsdf_quick, EmbraceConfig(n_lanes=3),
                             bundle=bundle)
            obs = env.reset_all(np.random.default_rng(13))
            rng = np.random.default_rng(99)
            tot = 0.0
            for _ in range(30):
                u = rng.normal(size=(3, env.act_dim))
                obs, rew, *_ = env.step(u)
                tot += rew.sum()
            outs.append(tot)
        assert outs[0] == outs[1]

    def test_latent_composes_additively_with_prior_mean(self, spec,
                                                        nsdf_quick, bundle):
        env = EmbraceEnv(spec, nsdf_quick, EmbraceConfig(n_lanes=2),
                         bundle=bundle)
        obs = env.reset_all(np.random.default_rng(3))
        s_d = obs[:, :bundle.manifest["deploy_dim"]]
        u = np.random.default_rng(4).normal(size=(2, env.act_dim))
        got = act_through_prior(bundle, obs, u)
        want = bundle.decode(s_d, u + bundle.prior(s_d).mu)
        np.testing.assert_array_equal(got, want)

    def test_env_latent_step_squashes_to_three_sigma(self, spec, nsdf_quick,
                                                     bundle):
        env = EmbraceEnv(spec, nsdf_quick, EmbraceConfig(n_lanes=2),
                         bundle=bundle)
        obs = env.reset_all(np.random.default_rng(5))
        s_d = obs[:, :bundle.manifest["deploy_dim"]]
        pri = bundle.prior(s_d)
        cap = bundle.decode(s_d, 3.0 * pri.sigma + pri.mu)
        env.step(np.full((2, env.act_dim), 1e9))
        np.testing.assert_allclose(env.prev_action, cap, atol=1e-9)


@pytest.fixture(scope="module")
def golden():
    import os

    path = os.path.join(os.path.dirname(__file__), "data", "golden_env.npz")
    return np.load(path)


class TestGoldenFixtures:
    """Recorded world states pin the observation/action pipelines in place."""

    def test_golden_observation(self, spec, nsdf_quick, golden):
        env = EmbraceEnv(spec, nsdf_quick, EmbraceConfig(n_lanes=3))
        obs = env.reset_all(np.random.default_rng(42))
        np.testing.assert_array_equal(env.lane_scenario, golden["scenario"])
        np.testing.assert_allclose(obs, golden["obs"], atol=1e-8)

    def test_golden_action_through_prior(self, bundle, golden):
        action = act_through_prior(bundle, golden["obs"], golden["latent"])
        np.testing.assert_allclose(action, golden["action"], atol=1e-8)


class TestTrace:
    def test_trace_rows_and_csv_determinism(self, spec, nsdf_quick, tmp_path):
        files = []
        for k in range(2):
            env = make_env(spec, nsdf_quick, n=2, scenarios=(2,))
            obs = env.reset_all(np.random.default_rng(21))
            pol = ScriptedEmbracePolicy(env)
            env.start_trace()
            for _ in range(60):
                obs, *_ = env.step(pol(obs))
            rows = env.take_trace()
            assert len(rows) == 60
            assert [r[0] for r in rows] == list(range(1, 61))
            assert all(r[1] in ("approach", "embrace", "transport") for r in rows)
            p = tmp_path / f"trace{k}.csv"
            write_trace_csv(rows, str(p))
            files.append(p.read_bytes())
        assert files[0] == files[1]
        assert files[0].startswith(b"t,stage,dist_box,dist_target,contacts\n")

    def test_take_trace_clears(self, spec, nsdf_quick):
        env = make_env(spec, nsdf_quick, n=2)
        env.reset_all(np.random.default_rng(0))
        env.start_trace()
        env.step(env.sim.q.copy())
        assert len(env.take_trace()) == 1
        assert env.take_trace() == []
