import math

import numpy as np
import pytest

from sbmguard import maze
from sbmguard.core import Action, BehavioralModel, Deadlock, Engine, Event, Strategy
from sbmguard.guards import make_distribution_odnn, make_sensor
from sbmguard.maze import (
    ACTIONS,
    COLLISION,
    FORWARD,
    FORWARD_OUTPUT,
    INPUT,
    LEFT,
    OUTPUT,
    RIGHT,
    SUCCESS,
    TIMEOUT,
    UNKNOWN,
    EpisodeConfig,
    EpisodeResult,
    LidarConfig,
    ObstacleAhead,
    Pose,
    World,
    aggregate_metrics,
    apply_action,
    cast_lidar,
    conservative_select,
    episode,
    front_distance,
    heuristic_policy,
    observe,
    path_hits_wall,
    relaxed_threshold,
    wrap_angle,
)

BOX = (-5.0, -5.0, 5.0, 5.0)


def world(segments=(), target=(4.0, 4.0), goal_radius=0.2):
    return World(list(segments), target, goal_radius, BOX)


def ray_hit(origin, angle, seg):
    """Independent line-line intersection: solve origin + t*d = a + s*(b - a)."""
    d = np.array([math.cos(angle), math.sin(angle)])
    a, b = np.array(seg[:2]), np.array(seg[2:])
    m = np.column_stack([d, a - b])
    t, s = np.linalg.solve(m, a - np.asarray(origin))
    return t if t > 0 and 0 <= s <= 1 else math.inf


def scan(front_m, k=7, max_range=3.5, bearing=0.0, dist=2.0):
    """Observation whose three central rays read ``front_m`` metres, the rest max range."""
    rays = np.ones(k)
    rays[k // 2 - 1: k // 2 + 2] = front_m / max_range
    return tuple(rays) + (bearing, dist)


def dist_request(p):
    return [(Event(OUTPUT, Action(a, pa)), pa) for a, pa in zip(ACTIONS, p)]


# -- geometry and sensing ---------------------------------------------------


def test_empty_world_rays_hit_max_range():
    assert np.all(cast_lidar(world(), Pose(0, 0, 0.3)) == 3.5)


def test_wall_dead_ahead():
    wall = (1.0, -0.5, 1.0, 0.5)
    rays = cast_lidar(world([wall]), Pose(0, 0, 0))
    assert rays[3] == pytest.approx(ray_hit((0, 0), 0.0, wall), abs=1e-12)
    assert rays[3] == pytest.approx(1.0, abs=1e-12)


def test_lidar_matches_line_intersection_oracle():
    rng = np.random.default_rng(4)
    segs = [tuple(rng.uniform(-3, 3, 4)) for _ in range(6)]
    w = world(segs)
    pose = Pose(0.1, -0.2, 0.7)
    rays = cast_lidar(w, pose)
    for angle, got in zip(pose.heading + LidarConfig().offsets, rays):
        expect = min([ray_hit((pose.x, pose.y), angle, s) for s in segs] + [3.5])
        assert got == pytest.approx(expect, abs=1e-9)


def test_wall_behind_is_invisible():
    rays = cast_lidar(world([(-1.0, -1.0, -1.0, 1.0)]), Pose(0, 0, 0))
    assert np.all(rays == 3.5)


def test_ray_layout_spans_field_of_view():
    offs = LidarConfig().offsets
    assert len(offs) == 7 and offs[0] == pytest.approx(-math.pi / 2) and offs[-1] == pytest.approx(math.pi / 2)
    assert len(LidarConfig(k=8, fov=2 * math.pi).offsets) == 8


@pytest.mark.parametrize("pose,action,expect", [
    (Pose(0, 0, 0), FORWARD, (0.2, 0.0, 0.0)),
    (Pose(0, 0, 0), LEFT, (0.0, 0.0, math.pi / 6)),
    (Pose(0, 0, 0), RIGHT, (0.0, 0.0, -math.pi / 6)),
    (Pose(0, 0, math.radians(170)), LEFT, (0.0, 0.0, math.radians(-160))),
])
def test_apply_action(pose, action, expect):
    out = apply_action(pose, action)
    assert (out.x, out.y, out.heading) == pytest.approx(expect, abs=1e-12)


def test_heading_normalization():
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert -math.pi < Pose(0, 0, -7.0).heading <= math.pi


def test_unknown_action_rejected():
    with pytest.raises(ValueError):
        apply_action(Pose(0, 0), "Jump")


def test_observe_target_dead_ahead():
    obs = observe(world(target=(0, 1)), Pose(0, 0, math.pi / 2))
    assert obs[7] == pytest.approx(0.0, abs=1e-12) and obs[8] == pytest.approx(1.0)
    assert np.all(obs[:7] == 1.0)


def test_observe_target_to_the_right():
    obs = observe(world(target=(1, 0)), Pose(0, 0, math.pi / 2))
    assert obs[7] == pytest.approx(math.atan2(0, 1) - math.pi / 2)


def test_lidar_entries_in_unit_interval():
    w = maze.bundled_world()
    rng = np.random.default_rng(0)
    for _ in range(50):
        obs = observe(w, maze.sample_start(w, rng))
        assert np.all((obs[:7] > 0) & (obs[:7] <= 1))


def test_front_distance_uses_central_sector():
    assert front_distance(scan(0.15)) == pytest.approx(0.15)
    side = list(scan(3.5))
    side[0] = 0.01
    assert front_distance(side) == pytest.approx(3.5)


def test_path_crossing_wall_collides():
    w = world([(1.0, -1.0, 1.0, 1.0)])
    assert path_hits_wall(w, (0.9, 0.0), (1.1, 0.0))
    assert not path_hits_wall(w, (0.5, 0.0), (0.7, 0.0))
    assert path_hits_wall(w, (0.5, 0.0), (0.7, 0.0), radius=0.31)


def test_world_validation():
    with pytest.raises(maze.WorldError):
        World([], (9.0, 9.0), 0.2, BOX)
    with pytest.raises(maze.WorldError):
        World([(0, 0, math.nan, 1)], (0, 0), 0.2, BOX)
    with pytest.raises(maze.WorldError):
        World.from_dict({"segments": []})


def test_world_round_trip():
    w = maze.bundled_world()
    again = World.from_dict(w.to_dict())
    assert np.array_equal(again.segments, w.segments) and again.target == w.target


# -- heuristic policy -------------------------------------------------------


def test_symmetric_view_gives_equal_turns():
    probs = dict(heuristic_policy(scan(1.0), 1.0))
    assert probs[LEFT] == pytest.approx(probs[RIGHT], abs=1e-12)


def test_close_wall_discourages_forward():
    probs = dict(heuristic_policy(scan(0.1), 1.0))
    assert probs[FORWARD] < min(probs[LEFT], probs[RIGHT])


def test_hot_policy_is_nearly_uniform():
    probs = [p for _, p in heuristic_policy(scan(0.1, bearing=1.0), 1e3)]
    assert max(abs(p - 1 / 3) for p in probs) <= 0.01


def test_policy_turns_toward_target():
    probs = dict(heuristic_policy(scan(3.5, bearing=1.0), 1.0))
    assert probs[LEFT] > probs[RIGHT]


def test_policy_output_is_distribution():
    probs = [p for _, p in heuristic_policy(scan(0.4, bearing=-2.0), 2.5)]
    assert all(p >= 0 for p in probs) and abs(sum(probs) - 1) <= 1e-6


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        heuristic_policy(scan(1.0), 0.0)


# -- obstacle guard ---------------------------------------------------------


def _guard_model(probs, front_m, threshold=0.22):
    feed = iter([scan(front_m), None])
    sensor = make_sensor(lambda: next(feed), INPUT, resume_on=[OUTPUT], kind="vector")
    odnn = make_distribution_odnn(lambda v: list(zip(ACTIONS, probs)), ACTIONS)
    return BehavioralModel([sensor, odnn, ObstacleAhead(threshold)])


@pytest.mark.parametrize("seed", range(20))
def test_close_obstacle_blocks_forward(seed):
    engine = Engine(_guard_model((0.8, 0.1, 0.1), 0.15), Strategy.WEIGHTED, seed)
    engine.step()
    out = engine.step()
    assert out.event.payload.name in (LEFT, RIGHT)
    assert any(p is FORWARD_OUTPUT for p in out.record.blocked)


def test_far_obstacle_blocks_nothing():
    engine = Engine(_guard_model((0.8, 0.1, 0.1), 0.5), Strategy.WEIGHTED, 0)
    engine.step()
    assert engine.step().record.blocked == ()


def test_certain_forward_into_obstacle_deadlocks():
    engine = Engine(_guard_model((1.0, 0.0, 0.0), 0.15), Strategy.WEIGHTED, 0)
    engine.step()
    assert isinstance(engine.step(), Deadlock)


def test_guard_threshold_must_be_positive():
    with pytest.raises(ValueError):
        ObstacleAhead(0.0)


# -- conservative selection -------------------------------------------------

SKEWED_VECTOR = (0.2, 0.5, 0.3)


def test_low_confidence_forward_becomes_left():
    req = dist_request(SKEWED_VECTOR)
    for seed in range(20):
        out = conservative_select(req[0][0], req, [], 0.35, np.random.default_rng(seed))
        assert out == req[1][0]


def test_confident_candidate_passes_unchanged():
    req = dist_request(SKEWED_VECTOR)
    assert conservative_select(req[1][0], req, [], 0.35, np.random.default_rng(0)) is req[1][0]


def test_relaxation_ladder():
    assert relaxed_threshold(SKEWED_VECTOR, 0.9) == 0.45
    assert relaxed_threshold((0.2, 0.4, 0.4), 0.9) == 0.225
    assert relaxed_threshold((0.5,), 0.5) == 0.5
    with pytest.raises(ValueError):
        relaxed_threshold((0.0, 0.0), 0.5)


def test_relaxed_draw_covers_qualifying_actions_only():
    req = dist_request((0.2, 0.4, 0.4))
    picks = {conservative_select(req[0][0], req, [], 0.9, np.random.default_rng(s)).payload.name
             for s in range(60)}
    assert picks == {LEFT, RIGHT}


def test_conservative_select_respects_blocking():
    req = dist_request(SKEWED_VECTOR)
    block_left = maze.Pattern(OUTPUT, lambda a: a.name == LEFT)
    picks = set()
    for seed in range(40):
        out = conservative_select(req[0][0], req, [block_left], 0.35, np.random.default_rng(seed))
        assert not block_left.matches(out)
        picks.add(out.payload.name)
    assert picks == {FORWARD, RIGHT}  # threshold relaxes to 0.175, which both remaining actions meet


def test_relaxed_draw_is_renormalized():
    req = dist_request((0.1, 0.3, 0.6))
    rng = np.random.default_rng(1)
    n = 20_000
    lefts = sum(conservative_select(req[0][0], req, [], 0.2, rng).payload.name == LEFT for _ in range(n))
    assert abs(lefts / n - 1 / 3) <= 0.01


def test_tau_range_checked():
    req = dist_request(SKEWED_VECTOR)
    with pytest.raises(ValueError):
        conservative_select(req[0][0], req, [], 0.0, np.random.default_rng(0))


def test_non_output_candidates_pass_through():
    ev = Event(INPUT, (1.0,))
    assert conservative_select(ev, [(ev, 1.0)], [], 0.5, np.random.default_rng(0)) is ev


# -- episodes ---------------------------------------------------------------


def always(action_probs):
    return lambda obs: list(zip(ACTIONS, action_probs))


def test_start_inside_goal_is_immediate_success():
    w = world(target=(0.0, 0.0), goal_radius=0.5)
    r = episode(w, always((1, 0, 0)), (), EpisodeConfig(), start=Pose(0.1, 0.0, 0.0))
    assert (r.outcome, r.steps) == (SUCCESS, 0)


WALL_AHEAD = [(1.0, -2.0, 1.0, 2.0)]


def test_forward_into_wall_collides():
    r = episode(world(WALL_AHEAD), always((1, 0, 0)), (), EpisodeConfig(), start=Pose(0, 0, 0))
    assert r.outcome == COLLISION and r.collision_action == FORWARD and r.steps == 5


def test_guard_prevents_forward_collision_when_sides_clear():
    for seed in range(10):
        r = episode(world(WALL_AHEAD), always((0.98, 0.01, 0.01)), ["obstacle_ahead"],
                    EpisodeConfig(seed=seed, max_steps=80), start=Pose(0, 0, 0))
        assert r.outcome != COLLISION and r.overrides_fired > 0


def test_certain_forward_with_guard_is_unknown_failure():
    r = episode(world(WALL_AHEAD), always((1, 0, 0)), ["obstacle_ahead"], EpisodeConfig(), start=Pose(0, 0, 0))
    assert r.outcome == UNKNOWN and r.steps == 4


def test_bad_distribution_is_unknown_failure():
    r = episode(world(), always((0.5, 0.2, 0.2)), (), EpisodeConfig(), start=Pose(0, 0, 0))
    assert r.outcome == UNKNOWN and r.steps == 0


def test_spinning_agent_times_out():
    r = episode(world(), always((0, 1, 0)), (), EpisodeConfig(max_steps=12), start=Pose(0, 0, 0))
    assert (r.outcome, r.steps) == (TIMEOUT, 12)


def test_start_touching_wall_rejected():
    with pytest.raises(maze.WorldError):
        episode(world(WALL_AHEAD), always((1, 0, 0)), (), EpisodeConfig(), start=Pose(1.0, 0.0, 0.0))


def test_episode_is_deterministic():
    w = maze.bundled_world()
    cfg = EpisodeConfig(seed=123)
    a = episode(w, maze.HeuristicPolicy(), ["conservative"], cfg)
    b = episode(w, maze.HeuristicPolicy(), ["conservative"], cfg)
    assert a == b and a.actions == b.actions and a.trace == b.trace


def test_steps_bounded_by_max_steps():
    results = maze.run_batch(maze.bundled_world(), maze.HeuristicPolicy(), (), 15, 2, EpisodeConfig(max_steps=30))
    assert all(r.steps <= 30 for r in results)


def test_unknown_guard_name_rejected():
    with pytest.raises(ValueError):
        maze.build_guards(["nope"], "modifier", maze.HeuristicPolicy(), EpisodeConfig())


def test_episode_seeds_are_distinct_and_stable():
    seeds = [maze.episode_seed(0, i) for i in range(100)]
    assert len(set(seeds)) == 100 and seeds == [maze.episode_seed(0, i) for i in range(100)]


# -- metrics ----------------------------------------------------------------


def test_metrics_partition_and_mean():
    rs = [EpisodeResult(SUCCESS, 10, 0), EpisodeResult(SUCCESS, 20, 1), EpisodeResult(COLLISION, 3, 0),
          EpisodeResult(TIMEOUT, 200, 0), EpisodeResult(UNKNOWN, 1, 0)]
    m = aggregate_metrics(rs)
    assert (m.num_of_solved, m.num_of_collision, m.num_of_timeout, m.num_of_unknown) == (2, 1, 1, 1)
    assert m.total == 5 and m.avg_num_of_steps == 15


def test_metrics_without_successes_have_no_mean():
    assert aggregate_metrics([EpisodeResult(TIMEOUT, 200, 0)]).avg_num_of_steps is None


def test_metrics_need_results():
    with pytest.raises(ValueError):
        aggregate_metrics([])


def test_results_csv_header():
    text = maze.results_csv([EpisodeResult(SUCCESS, 10, 2, 99)])
    assert text.splitlines() == ["episode,outcome,steps,overrides_fired,seed", "0,Success,10,2,99"]


def test_resolve_policy():
    assert maze.resolve_policy("heuristic").temperature == maze.DEFAULT_TEMPERATURE
    assert maze.resolve_policy("heuristic:0.5").temperature == 0.5
