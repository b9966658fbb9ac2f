import numpy as np
import pytest

from dsp.envs import EnvState, TaskName, execute, expert_controller, get_task, reset, rollout, step
from dsp.errors import ConfigurationError, ShapeError

ALL_TASKS = [name.value for name in TaskName]


def _zero_controller(task):
    width = get_task(task).spec.action_dim

    def control(state, obs):
        return np.zeros(width)

    return control


def test_observation_dims():
    _, obs = reset("point_reach", 0)
    assert obs.shape == (13,)
    _, obs = reset("bi_handover", 0)
    assert obs.shape == (17,)
    assert get_task("bi_handover").spec.action_dim == 8


def test_unknown_task():
    with pytest.raises(ConfigurationError):
        get_task("peg_insertion")


@pytest.mark.parametrize("task", ALL_TASKS)
def test_reset_is_deterministic(task):
    left, obs_left = reset(task, 42)
    right, obs_right = reset(task, 42)
    assert left.same_as(right)
    assert np.array_equal(obs_left, obs_right)
    assert np.all(left.gripper == -1)


def test_zero_action_only_advances_clock():
    state, _ = reset("block_transfer", 3)
    after, _, done, success = step("block_transfer", state, np.zeros(4))
    assert after.step_count == 1
    assert after.same_as(state.evolve(step_count=1))
    assert not done and not success


def test_motion_step_size():
    state, _ = reset("point_reach", 0)
    after, obs, _, _ = step("point_reach", state, np.array([1.0, 0.0, 0.0, -1.0]))
    assert after.ee_pos[0, 0] == pytest.approx(0.05)
    assert obs[0] == pytest.approx(0.05)


def test_actions_are_clamped_before_moving():
    state, _ = reset("point_reach", 0)
    after, _, _, _ = step("point_reach", state, np.array([7.0, -3.0, 0.0, -1.0]))
    np.testing.assert_allclose(after.ee_pos[0], [0.05, -0.05, 0.0])


def test_wrong_action_width():
    state, _ = reset("point_reach", 0)
    with pytest.raises(ShapeError):
        step("point_reach", state, np.zeros(8))


def test_zero_policy_times_out():
    traj = rollout(_zero_controller("point_reach"), "point_reach", 5)
    assert traj.length == 50
    assert not traj.success


@pytest.mark.parametrize("task", ALL_TASKS)
def test_expert_solves_every_seed(task):
    controller = expert_controller(task)
    for seed in range(1000):
        traj = rollout(controller, task, seed)
        assert traj.success, f"{task} seed {seed}"
        assert traj.observations.shape[0] == traj.length + 1
        assert np.max(np.abs(traj.actions)) <= 1.0
        assert not traj.perturbed_mask.any()


@pytest.mark.parametrize("task", ALL_TASKS)
def test_expert_idles_once_solved(task):
    env = get_task(task)
    controller = expert_controller(env)
    state, obs = reset(env, 0)
    done = False
    while not done:
        state, obs, done, success = step(env, state, controller(state, obs))
    assert success
    action = env.expert(state).reshape(env.arms, 4)
    assert np.all(action[:, :3] == 0)


def test_rollouts_are_reproducible():
    controller = expert_controller("bi_handover")
    left = rollout(controller, "bi_handover", 17)
    right = rollout(controller, "bi_handover", 17)
    assert left.same_as(right)


@pytest.mark.parametrize("task", ALL_TASKS)
def test_random_actions_keep_invariants(task):
    env = get_task(task)
    rng = np.random.default_rng(0)
    for seed in range(20):
        state, _ = reset(env, seed)
        for _ in range(50):
            state, _, done, _ = step(env, state, rng.uniform(-1, 1, env.spec.action_dim))
            assert np.all(np.abs(state.ee_pos) <= 1.0)
            assert np.all(np.abs(state.obj_pos) <= 1.0)
            if state.held_by is not None:
                assert np.array_equal(state.obj_pos, state.ee_pos[state.held_by])
            if done:
                break


@pytest.mark.parametrize(
    "task,episodes",
    [("point_reach", 2000), ("block_transfer", 500), ("bi_handover", 500)],
)
def test_random_policy_rarely_reaches(task, episodes):
    rng = np.random.default_rng(1)
    width = get_task(task).spec.action_dim

    def control(state, obs):
        return rng.uniform(-1, 1, width)

    successes = sum(rollout(control, task, seed).success for seed in range(episodes))
    assert successes < 0.01 * episodes


def test_grasp_needs_open_to_closed_transition():
    env = get_task("block_transfer")
    state, _ = reset(env, 0)
    state = state.evolve(ee_pos=state.obj_pos[None, :].copy())
    closed, _, _, _ = step(env, state, np.zeros(4))
    assert closed.held_by is None
    opened, _, _, _ = step(env, closed, np.array([0.0, 0.0, 0.0, 1.0]))
    grasped, _, _, _ = step(env, opened, np.array([0.0, 0.0, 0.0, -1.0]))
    assert grasped.held_by == 0
    lifted, _, _, _ = step(env, grasped, np.array([0.0, 0.0, 1.0, -1.0]))
    assert np.array_equal(lifted.obj_pos, lifted.ee_pos[0])


def test_handover_happens_in_one_step():
    env = get_task("bi_handover")
    point = np.array([0.0, 0.0, 0.2])
    state = EnvState(
        task=TaskName.BI_HANDOVER,
        ee_pos=np.stack([point, point]),
        gripper=np.array([-1.0, 1.0]),
        obj_pos=point.copy(),
        goal_pos=np.array([0.5, 0.0, -0.1]),
        held_by=0,
    )
    action = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0])
    after, _, _, success = step(env, state, action)
    assert after.held_by == 1
    assert after.last_holder == 0
    assert after.handed_over
    assert not success


def test_execute_stops_when_episode_ends():
    expert = rollout(expert_controller("point_reach"), "point_reach", 2)
    padded = np.concatenate([expert.actions, np.zeros((5, 4))])
    replayed = execute("point_reach", 2, padded)
    assert replayed.length == expert.length
    assert replayed.success
    assert np.array_equal(replayed.observations, expert.observations)
