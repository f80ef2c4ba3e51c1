"""Acceptance suite: one test per criterion, each with its wall-clock budget.

Run ``pytest tests/test_acceptance.py`` (or this file directly); a summary
with one PASS/FAIL line per criterion is printed at the end of the session.
"""

import functools
import random
import time
from contextlib import contextmanager

import numpy as np
import pytest

from sbmguard import maze, pcc
from sbmguard.core import Engine, Event, Strategy, Sync, TableScenario, BehavioralModel, select_event
from sbmguard.maze import FORWARD, INPUT, OUTPUT, front_distance
from sbmguard.models import FORCE_Y1, FORCE_Y1_IF_Y2_ABOVE_1, classify
from sbmguard.nn import Layer, Network, activations, fixture_path, load_network
from sbmguard.oracle import enumerate_runs, is_prefix_of_some

DATA = fixture_path("maze.json").parent


@contextmanager
def budget(seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < seconds, f"took {elapsed:.1f} s, budget {seconds} s"


# -- 1 ---------------------------------------------------------------------


def test_criterion_01_small_network_forward_pass_is_exact():
    with budget(1):
        net = load_network(fixture_path("small_network.json"))
        hidden, out = activations(net, (1, 0))
        assert hidden.tolist() == [1.0, 2.0, 0.0]
        assert out.tolist() == [0.0, 2.0]


# -- 2, 3 ------------------------------------------------------------------


def test_criterion_02_blocking_override_flips_output():
    with budget(1):
        assert classify([(1, 0)], FORCE_Y1)[0] == ["y1"]
        assert classify([(1, 0)])[0] == ["y2"]


def test_criterion_03_modifier_override_flips_output():
    with budget(1):
        assert classify([(1, 0)], FORCE_Y1_IF_Y2_ABOVE_1)[0] == ["y1"]
        # stub network whose y2 score is 0.5 <= 1: the output predicate fails, passthrough
        stub = Network((Layer(np.zeros((2, 2)), [0.0, 0.5], "linear"),), 2, ("y1", "y2"))
        outputs, trace = classify([(1, 0)], FORCE_Y1_IF_Y2_ABOVE_1, network=stub)
        assert outputs == ["y2"] and not any(r.modifier_fired for r in trace.records)


# -- 4 ---------------------------------------------------------------------


def random_model(rng: random.Random) -> BehavioralModel:
    labels = [f"e{i}" for i in range(rng.randint(1, 4))]
    scenarios = []
    for s in range(rng.randint(1, 3)):
        n_states = rng.randint(1, 3)
        statements, transitions = {}, {}
        for q in range(n_states):
            req = rng.sample(labels, rng.randint(0, len(labels)))
            rest = [l for l in labels if l not in req]
            block = rng.sample(rest, rng.randint(0, len(rest)))
            wait = rng.sample(labels, rng.randint(0, len(labels)))
            statements[q] = Sync(request=[(Event(l), rng.choice([0.5, 1.0, 2.0])) for l in req],
                                 block=block, wait=wait)
            for l in labels:
                transitions[(q, l)] = rng.randrange(n_states)
        scenarios.append(TableScenario(f"s{s}", 0, statements, transitions))
    return BehavioralModel(scenarios)


def test_criterion_04_engine_traces_agree_with_state_space_oracle():
    rng = random.Random(20240601)
    with budget(30):
        for _ in range(50):
            model = random_model(rng)
            depth = rng.randint(1, 8)
            runs = enumerate_runs(model, depth)
            for strategy in Strategy:
                for seed in range(10):
                    trace = Engine(model, strategy, seed).run(depth)
                    assert is_prefix_of_some(trace.events, runs)
                    if strategy is Strategy.PRIORITY:
                        assert tuple(trace.events) == runs[0]


# -- 5 ---------------------------------------------------------------------


def test_criterion_05_redraw_renormalizes():
    req = [(Event(OUTPUT, "Forward"), 0.2), (Event(OUTPUT, "Left"), 0.5), (Event(OUTPUT, "Right"), 0.3)]
    blocked = [maze.FORWARD_OUTPUT]
    rng = np.random.default_rng(5)
    n = 100_000
    with budget(5):
        lefts = sum(select_event(Strategy.WEIGHTED, req, blocked, rng).payload.name == "Left" for _ in range(n))
    assert abs(lefts / n - 0.625) <= 0.01


# -- 6 ---------------------------------------------------------------------


def test_criterion_06_proxy_and_modifier_guards_are_equivalent():
    pcc_configs = sorted(DATA.glob("pcc_*.json"))
    maze_configs = sorted(DATA.glob("maze_*.json"))
    assert pcc_configs and maze_configs
    with budget(30):
        for path in pcc_configs:
            cfg = pcc.load_config(path)
            a = pcc.simulate_config(cfg, guard_style="proxy")
            b = pcc.simulate_config(cfg, guard_style="modifier")
            assert pcc.external_events(a.trace) == pcc.external_events(b.trace), path.name
            assert a.to_csv() == b.to_csv(), path.name
        for path in maze_configs:
            settings = maze.load_settings(path)
            a = settings.run("proxy")
            b = settings.run("modifier")
            assert a == b, path.name
            for x, y in zip(a, b):
                assert maze.external_events(x.trace) == maze.external_events(y.trace), path.name


# -- 7 ---------------------------------------------------------------------


@functools.cache
def scavenger_run():
    cfg = pcc.load_config(fixture_path("pcc_scripted.json"))
    return cfg, pcc.simulate_config(cfg)


def test_criterion_07_scavenger_yield_and_restore_shape():
    with budget(5):
        cfg, result = scavenger_run()
    assert cfg.detector.script == {5: pcc.ENTER_YIELD, 20: pcc.ENTER_RESTORE} and cfg.link.num_mis == 40
    fixed = cfg.policies.yield_policy.rate
    rows = result.rows
    final, dnn = result.column("final_rate"), result.column("dnn_rate")
    for mi in range(5):
        assert final[mi] == dnn[mi]
    for mi in range(5, 20):
        assert final[mi] == fixed
    mi, prev = 20, final[19]
    while True:  # slow start: double the previous rate until it meets the network's rate
        expect = min(dnn[mi], 2.0 * prev)
        assert final[mi] == expect and rows[mi].mode is pcc.Mode.RESTORE
        prev, mi = expect, mi + 1
        if expect == dnn[mi - 1]:
            break
    assert mi > 21  # at least one full doubling before the cap
    for m in range(mi, 40):
        assert final[m] == dnn[m]
    comp = result.column("thr_competitor")
    assert np.mean(comp[5:20]) > np.mean(comp[:5])


# -- 8 ---------------------------------------------------------------------


def _forward_violations(result, threshold):
    bad, last_obs = 0, None
    for e in result.trace.events:
        if e.label == INPUT:
            last_obs = e.payload
        elif e.label == OUTPUT and e.payload.name == FORWARD and front_distance(last_obs) < threshold:
            bad += 1
    return bad


@functools.cache
def safety_run():
    settings = maze.load_settings(DATA / "maze_obstacle_ahead.json")
    return settings, settings.run()


def test_criterion_08_obstacle_guard_is_safe():
    with budget(60):
        settings, results = safety_run()
    assert settings.guards == ("obstacle_ahead",) and len(results) == 100
    threshold = settings.config.threshold
    assert threshold == 0.22
    assert sum(_forward_violations(r, threshold) for r in results) == 0
    collisions = [r for r in results if r.outcome == maze.COLLISION]
    assert not [r for r in collisions if r.collision_action == FORWARD]
    assert sum(r.overrides_fired for r in results) > 0
    print(f"turn collisions: {len(collisions)}")


# -- 9 ---------------------------------------------------------------------


@functools.cache
def conservative_runs():
    settings = maze.load_settings(DATA / "maze_conservative.json")
    plain = maze.run_batch(settings.world, settings.policy, (), settings.episodes, settings.seed, settings.config)
    guarded = settings.run()
    return settings, plain, guarded


def test_criterion_09_conservative_guard_improves_weak_agent():
    with budget(120):
        settings, plain, guarded = conservative_runs()
    assert settings.guards == ("conservative",) and settings.episodes == 100
    base, safe = maze.aggregate_metrics(plain), maze.aggregate_metrics(guarded)
    print(f"unguarded {base.as_dict()}\nconservative {safe.as_dict()}")
    assert 30 <= base.num_of_solved <= 60
    assert base.num_of_collision > 0
    assert safe.num_of_collision <= 0.7 * base.num_of_collision
    assert safe.num_of_solved >= base.num_of_solved


# -- 10 --------------------------------------------------------------------


def test_criterion_10_reruns_are_byte_identical():
    with budget(120):
        first = (scavenger_run()[1].to_csv(), maze.results_csv(safety_run()[1]),
                 maze.results_csv(conservative_runs()[1]), maze.results_csv(conservative_runs()[2]))
        scavenger_run.cache_clear()
        safety_run.cache_clear()
        conservative_runs.cache_clear()
        second = (scavenger_run()[1].to_csv(), maze.results_csv(safety_run()[1]),
                  maze.results_csv(conservative_runs()[1]), maze.results_csv(conservative_runs()[2]))
    for a, b in zip(first, second):
        assert a.encode() == b.encode()


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
