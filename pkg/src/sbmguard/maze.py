"""2D mapless-navigation harness: geometry, lidar, policies, guards and episode metrics."""

from __future__ import annotations

import csv
import functools
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import (
    Action,
    Deadlock,
    Engine,
    Event,
    Modifier,
    Pattern,
    PayloadError,
    Scenario,
    Strategy,
    Sync,
    Terminal,
    Trace,
    select_event,
)
from .guards import GuardedModel, InvalidDistribution, make_actuator, make_distribution_odnn, make_sensor
from .nn import Network, forward, load_network, to_distribution

FORWARD, LEFT, RIGHT = "Forward", "Left", "Right"
ACTIONS = (FORWARD, LEFT, RIGHT)
INPUT = "InputEvent"
OUTPUT = "OutputEvent"
OUTPUT_PROXY = "OutputEventProxy"

SUCCESS, COLLISION, TIMEOUT, UNKNOWN = "Success", "Collision", "Timeout", "UnknownFailure"
OUTCOMES = (SUCCESS, COLLISION, TIMEOUT, UNKNOWN)
RESULTS_HEADER = ("episode", "outcome", "steps", "overrides_fired", "seed")

DEFAULT_THRESHOLD = 0.22
DEFAULT_TAU = 0.35
FRONT_HALF_ANGLE = math.pi / 6
DEFAULT_TEMPERATURE = 2.5  # unguarded success ~47% on the bundled maze


class WorldError(ValueError):
    pass


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.remainder(float(a), 2 * math.pi)
    return math.pi if a <= -math.pi else a


# -- geometry ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class World:
    segments: np.ndarray  # (m, 4): x1, y1, x2, y2
    target: tuple[float, float]
    goal_radius: float
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    def __post_init__(self):
        seg = np.array(self.segments, dtype=float).reshape(-1, 4)
        if not np.isfinite(seg).all():
            raise WorldError("wall segments must be finite")
        xmin, ymin, xmax, ymax = (float(b) for b in self.bounds)
        if not (xmin < xmax and ymin < ymax):
            raise WorldError("bounds must be (xmin, ymin, xmax, ymax) with positive extent")
        tx, ty = (float(t) for t in self.target)
        if not (xmin <= tx <= xmax and ymin <= ty <= ymax):
            raise WorldError("target lies outside bounds")
        if not self.goal_radius > 0:
            raise WorldError("goal_radius must be > 0")
        seg.setflags(write=False)
        object.__setattr__(self, "segments", seg)
        object.__setattr__(self, "target", (tx, ty))
        object.__setattr__(self, "bounds", (xmin, ymin, xmax, ymax))
        object.__setattr__(self, "goal_radius", float(self.goal_radius))

    @classmethod
    def from_dict(cls, data: dict) -> "World":
        try:
            return cls(data["segments"], tuple(data["target"]), data["goal_radius"], tuple(data["bounds"]))
        except KeyError as exc:
            raise WorldError(f"missing field {exc.args[0]!r}") from exc

    def to_dict(self) -> dict:
        return {"segments": self.segments.tolist(), "target": list(self.target),
                "goal_radius": self.goal_radius, "bounds": list(self.bounds)}


def load_world(path) -> World:
    with open(path) as fh:
        return World.from_dict(json.load(fh))


def bundled_world() -> World:
    from .nn import fixture_path
    return load_world(fixture_path("maze.json"))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass(frozen=True)
class LidarConfig:
    k: int = 7
    fov: float = math.pi
    max_range: float = 3.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.fov <= 2 * math.pi:
            raise ValueError("fov must lie in (0, 2pi]")
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        offsets = ray_offsets(self.k, self.fov)
        offsets.flags.writeable = False
        object.__setattr__(self, "_offsets", offsets)

    @property
    def offsets(self) -> np.ndarray:
        return self._offsets


@dataclass(frozen=True)
class Kinematics:
    step_len: float = 0.2
    turn_angle: float = math.pi / 6


def ray_offsets(k: int, fov: float) -> np.ndarray:
    """Ray angles relative to the heading, right to left."""
    if k == 1:
        return np.zeros(1)
    if fov >= 2 * math.pi:  # full circle: don't double the rear ray
        return -math.pi + fov * (np.arange(k) + 0.5) / k
    return np.linspace(-fov / 2, fov / 2, k)


@functools.lru_cache(maxsize=16)
def _cached_offsets(k: int, fov: float) -> np.ndarray:
    offsets = ray_offsets(k, fov)
    offsets.flags.writeable = False
    return offsets


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def cast_rays(segments: np.ndarray, origin, angles: np.ndarray, max_range: float) -> np.ndarray:
    px, py = float(origin[0]), float(origin[1])
    dx, dy = np.cos(angles)[:, None], np.sin(angles)[:, None]
    if len(segments) == 0:
        return np.full(len(angles), float(max_range))
    ax, ay, bx, by = (segments[:, i][None, :] for i in range(4))
    ex, ey = bx - ax, by - ay
    wx, wy = ax - px, ay - py
    denom = _cross(dx, dy, ex, ey)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(wx, wy, ex, ey) / denom
        s = _cross(wx, wy, dx, dy) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 1e-12) & (s >= 0) & (s <= 1)
    dist = np.where(hit, t, np.inf).min(axis=1)
    return np.minimum(dist, max_range)


def cast_lidar(world: World, pose: Pose, k: int = 7, fov: float = math.pi, max_range: float = 3.5) -> np.ndarray:
    """Distances (m) along ``k`` rays spread evenly over ``fov`` around the heading."""
    angles = pose.heading + _cached_offsets(k, fov)
    return cast_rays(world.segments, (pose.x, pose.y), angles, max_range)


def apply_action(pose: Pose, action: str, step_len: float = 0.2, turn_angle: float = math.pi / 6) -> Pose:
    if action == FORWARD:
        return Pose(pose.x + step_len * math.cos(pose.heading), pose.y + step_len * math.sin(pose.heading), pose.heading)
    if action == LEFT:
        return Pose(pose.x, pose.y, pose.heading + turn_angle)
    if action == RIGHT:
        return Pose(pose.x, pose.y, pose.heading - turn_angle)
    raise ValueError(f"unknown action {action!r}")


def observe(world: World, pose: Pose, lidar: LidarConfig = LidarConfig()) -> np.ndarray:
    """Normalized lidar, then bearing to the target (0 = dead ahead, + = left), then distance."""
    scan = cast_lidar(world, pose, lidar.k, lidar.fov, lidar.max_range) / lidar.max_range
    tx, ty = world.target
    bearing = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.heading)
    return np.concatenate([scan, [bearing, math.hypot(tx - pose.x, ty - pose.y)]])


def point_segment_distance(segments: np.ndarray, point) -> np.ndarray:
    px, py = float(point[0]), float(point[1])
    ax, ay, bx, by = (segments[:, i] for i in range(4))
    ex, ey = bx - ax, by - ay
    length2 = ex * ex + ey * ey
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(length2 > 0, ((px - ax) * ex + (py - ay) * ey) / length2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    return np.hypot(ax + u * ex - px, ay + u * ey - py)


def path_hits_wall(world: World, start, end, radius: float = 0.0) -> bool:
    """True if the straight move from ``start`` to ``end`` touches a wall or passes within ``radius`` of one."""
    seg = world.segments
    if len(seg) == 0:
        return False
    p = np.asarray(start, dtype=float)
    q = np.asarray(end, dtype=float)
    d = q - p
    ax, ay, bx, by = (seg[:, i] for i in range(4))
    ex, ey = bx - ax, by - ay
    wx, wy = ax - p[0], ay - p[1]
    denom = _cross(d[0], d[1], ex, ey)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(wx, wy, ex, ey) / denom
        s = _cross(wx, wy, d[0], d[1]) / denom
    eps = 1e-12
    if np.any((np.abs(denom) > eps) & (t >= -eps) & (t <= 1 + eps) & (s >= -eps) & (s <= 1 + eps)):
        return True
    if not d.any():  # turning in place
        return bool(point_segment_distance(seg, p).min() <= radius)
    if radius <= 0:
        return False
    # non-crossing segments: closest pair involves an endpoint of one of them
    ends = np.concatenate([seg[:, :2], seg[:, 2:]])
    u = np.clip((ends - p) @ d / (d @ d), 0.0, 1.0)
    near = np.hypot(*(p + u[:, None] * d - ends).T).min()
    dist = min(point_segment_distance(seg, p).min(), point_segment_distance(seg, q).min())
    return bool(min(near, dist) <= radius)


def clearance(world: World, point) -> float:
    if len(world.segments) == 0:
        return math.inf
    return float(point_segment_distance(world.segments, point).min())


# -- policies ---------------------------------------------------------------


def sector_masks(offsets: np.ndarray, half_angle: float = FRONT_HALF_ANGLE):
    eps = 1e-9
    front = np.abs(offsets) <= half_angle + eps
    left = offsets >= half_angle - eps
    right = offsets <= -half_angle + eps
    return front, left, right


def front_distance(observation, lidar: LidarConfig = LidarConfig(), half_angle: float = FRONT_HALF_ANGLE) -> float:
    """Smallest de-normalized lidar distance within ``half_angle`` of the heading."""
    scan = np.asarray(observation, dtype=float)[: lidar.k]
    return float(scan[_front_mask(lidar.k, lidar.fov, half_angle)].min()) * lidar.max_range


@functools.lru_cache(maxsize=64)
def _front_mask(k: int, fov: float, half_angle: float) -> np.ndarray:
    offsets = ray_offsets(k, fov)
    front, _, _ = sector_masks(offsets, half_angle)
    if not front.any():  # sparse layout: fall back to the ray nearest the heading
        front = np.abs(offsets) == np.abs(offsets).min()
    front.flags.writeable = False
    return front


def heuristic_policy(observation, temperature: float, lidar: LidarConfig = LidarConfig(),
                     clear_weight: float = 3.0, turn_weight: float = 0.7, horizon: float = 1.0):
    """Softmax over hand-made action scores; high temperature gives a weak agent.

    Forward scores its front clearance (saturating at ``horizon`` metres) plus
    how well it points at the target. The turns score a constant plus a pull
    toward the target's side, so in front of an obstacle they split the mass
    rather than alternating.
    """
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    obs = np.asarray(observation, dtype=float)
    bearing = float(obs[lidar.k])
    ahead = min(front_distance(obs, lidar), horizon) / horizon
    pull = turn_weight * math.sin(bearing)
    scores = np.array([clear_weight * ahead + math.cos(bearing) - 1.0, 1.0 + pull, 1.0 - pull])
    return to_distribution(scores / temperature, ACTIONS)


@dataclass(frozen=True)
class HeuristicPolicy:
    temperature: float = DEFAULT_TEMPERATURE
    lidar: LidarConfig = LidarConfig()

    def __call__(self, observation):
        return heuristic_policy(observation, self.temperature, self.lidar)


@dataclass(frozen=True)
class NetworkPolicy:
    """Softmax over a loaded network's three outputs (Forward, Left, Right)."""

    network: Network

    def __call__(self, observation):
        return to_distribution(forward(self.network, observation), ACTIONS)


# -- guards -----------------------------------------------------------------


def _is_forward(payload) -> bool:
    return isinstance(payload, Action) and payload.name == FORWARD


FORWARD_OUTPUT = Pattern(OUTPUT, _is_forward, desc=f"{OUTPUT}({FORWARD})")


class ObstacleAhead(Scenario):
    """Blocks ``OutputEvent(Forward)`` for a cycle whose input shows an obstacle closer than the threshold."""

    alphabet = {INPUT: "vector", OUTPUT: "action"}

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, lidar: LidarConfig = LidarConfig(),
                 name: str = "OverrideObstacleAhead"):
        if not threshold > 0:
            raise ValueError("threshold must be > 0")
        self.threshold = float(threshold)
        self.lidar = lidar
        self.name = name
        self._idle = Sync(wait=[INPUT])
        self._blocking = Sync(block=[FORWARD_OUTPUT], wait=[INPUT, OUTPUT])

    def too_close(self, observation) -> bool:
        return front_distance(observation, self.lidar) < self.threshold

    def blocked_actions(self, observation) -> frozenset:
        return frozenset({FORWARD}) if self.too_close(observation) else frozenset()

    def initial_state(self):
        return "idle"

    def sync(self, state):
        return self._idle if state == "idle" else self._blocking

    def advance(self, state, event):
        if event.label == INPUT:
            return "blocking" if self.too_close(event.payload) else "idle"
        return "idle"


def obstacle_ahead_guard(threshold: float = DEFAULT_THRESHOLD, lidar: LidarConfig = LidarConfig()) -> ObstacleAhead:
    return ObstacleAhead(threshold, lidar)


def relaxed_threshold(probs: Iterable[float], tau: float) -> float:
    """Halve ``tau`` until some probability reaches it."""
    probs = [float(p) for p in probs]
    if not probs or max(probs) <= 0:
        raise ValueError("no action with positive probability")
    best = max(probs)
    while best < tau:
        tau /= 2
    return tau


def conservative_select(candidate: Event, requested, blocked, tau: float, rng: np.random.Generator,
                        output_label: str = OUTPUT) -> Event:
    """Replace a low-confidence output with a redraw among confident, enabled outputs.

    The redraw uses the same rejection sampler as the weighted strategy, with
    the extra rejection of outputs below the (possibly relaxed) threshold.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    if candidate.label != output_label or not isinstance(candidate.payload, Action) or candidate.payload.prob is None:
        return candidate
    if candidate.payload.prob >= tau:
        return candidate
    pairs = [(e, float(w)) for e, w in requested]
    blocked = tuple(blocked)
    enabled = [e for e, _ in pairs if e.label == output_label and isinstance(e.payload, Action)
               and not any(p.matches(e) for p in blocked)]
    probs = [e.payload.prob or 0.0 for e in enabled]
    if not any(p > 0 for p in probs):
        return candidate
    eff = relaxed_threshold(probs, tau)
    low = Pattern(output_label, lambda a: not (isinstance(a, Action) and (a.prob or 0.0) >= eff))
    return select_event(Strategy.WEIGHTED, pairs, (*blocked, low), rng)


class ConservativeAction(Modifier):
    name = "ConservativeAction"
    alphabet = {OUTPUT: "action"}

    def __init__(self, tau: float = DEFAULT_TAU, output_label: str = OUTPUT):
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        self.tau = tau
        self.output_label = output_label

    def initial_state(self):
        return "q1"

    def modify(self, state, requested, blocked, candidate, rng):
        return conservative_select(candidate, requested, blocked, self.tau, rng, self.output_label)


class ConservativeProxy(Scenario):
    """Replay-based variant: rejects a low-confidence output by re-injecting the input.

    Accepted outputs are re-issued as ``OutputEventProxy``. Scenarios cannot
    see what others block, so ``blocked_view(observation)`` supplies the set
    of action names blocked for that input (used only for relaxing the
    threshold).
    """

    name = "ConservativeAction"
    alphabet = {INPUT: "vector", OUTPUT: "action", OUTPUT_PROXY: "action"}

    def __init__(self, policy: Callable, tau: float = DEFAULT_TAU,
                 blocked_view: Callable[[tuple], Iterable[str]] | None = None):
        if not 0 < tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        self.policy = policy
        self.tau = tau
        self.blocked_view = blocked_view or (lambda obs: ())
        self._waiting = Sync(wait=[INPUT])
        self._judging = Sync(wait=[OUTPUT])

    def initial_state(self):
        return ("wait",)

    def sync(self, state):
        tag = state[0]
        if tag == "wait":
            return self._waiting
        if tag == "seen":
            return self._judging
        if tag == "replay":
            return Sync(request=[Event(INPUT, state[1])])
        return Sync(request=[Event(OUTPUT_PROXY, state[1])])

    def relaxed(self, observation) -> float:
        blocked = set(self.blocked_view(observation))
        probs = [p for a, p in self.policy(observation) if a not in blocked]
        return relaxed_threshold(probs, self.tau)

    def advance(self, state, event):
        tag = state[0]
        if tag == "wait":
            return ("seen", event.payload, self.tau)
        if tag == "seen":
            _, obs, tau = state
            if (event.payload.prob or 0.0) >= tau:
                return ("pass", event.payload)
            return ("replay", obs, tau if tau < self.tau else self.relaxed(obs))
        if tag == "replay":
            return ("seen", state[1], state[2])
        return ("wait",)


# -- episodes ---------------------------------------------------------------

GUARD_NAMES = ("obstacle_ahead", "conservative")
GUARD_STYLES = ("modifier", "proxy")


def external_events(trace: Trace) -> list[Event]:
    """Observations and actuated actions, without proxy relabelling or replayed inputs."""
    if not any(e.label == OUTPUT_PROXY for e in trace.events):
        return [e for e in trace.events if e.label in (INPUT, OUTPUT)]
    out: list[Event] = []
    for e in trace.events:
        if e.label == OUTPUT_PROXY:
            out.append(Event(OUTPUT, e.payload))
        elif e.label == INPUT and not (out and out[-1].label == INPUT):
            out.append(e)
    return out


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 200
    seed: int = 0
    threshold: float = DEFAULT_THRESHOLD
    tau: float = DEFAULT_TAU
    guard_style: str = "modifier"
    collision_radius: float = 0.0
    start_clearance: float = 0.3
    kinematics: Kinematics = Kinematics()
    lidar: LidarConfig = LidarConfig()

    def __post_init__(self):
        if int(self.max_steps) < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.guard_style not in GUARD_STYLES:
            raise ValueError(f"unknown guard style {self.guard_style!r}")
        if self.collision_radius < 0:
            raise ValueError("collision_radius must be >= 0")


@dataclass(frozen=True)
class EpisodeResult:
    outcome: str
    steps: int
    overrides_fired: int
    seed: int = 0
    collision_action: str | None = None
    start: Pose | None = field(default=None, compare=False)
    actions: tuple[str, ...] = field(default=(), compare=False)
    trace: Trace = field(default=Trace((), Terminal.HARNESS_STOP), compare=False, repr=False)


def sample_start(world: World, rng: np.random.Generator, min_clearance: float = 0.3, attempts: int = 10_000) -> Pose:
    xmin, ymin, xmax, ymax = world.bounds
    for _ in range(attempts):
        x, y = rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)
        if clearance(world, (x, y)) >= min_clearance:
            return Pose(x, y, rng.uniform(-math.pi, math.pi))
    raise WorldError("could not sample a collision-free start pose")


def episode_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1, np.uint64)[0])


def build_guards(names: Sequence[str], style: str, policy, cfg: EpisodeConfig):
    unknown = set(names) - set(GUARD_NAMES)
    if unknown:
        raise ValueError(f"unknown guard(s) {sorted(unknown)}; choose from {GUARD_NAMES}")
    if style not in GUARD_STYLES:
        raise ValueError(f"unknown guard style {style!r}")
    guards = []
    obstacle = ObstacleAhead(cfg.threshold, cfg.lidar) if "obstacle_ahead" in names else None
    if obstacle is not None:
        guards.append(obstacle)
    if "conservative" in names:
        if style == "modifier":
            guards.append(ConservativeAction(cfg.tau))
        else:
            view = obstacle.blocked_actions if obstacle is not None else None
            guards.append(ConservativeProxy(policy, cfg.tau, view))
    return guards


def episode(world: World, policy: Callable, guards: Sequence[str] = (), config: EpisodeConfig = EpisodeConfig(),
            start: Pose | None = None) -> EpisodeResult:
    """Run one navigation episode; the engine is seeded from ``config.seed``."""
    if start is None:
        start = sample_start(world, np.random.default_rng([config.seed, 1]), config.start_clearance)
    elif clearance(world, (start.x, start.y)) <= config.collision_radius:
        raise WorldError("start pose touches a wall")
    proxy = config.guard_style == "proxy" and "conservative" in guards
    final = OUTPUT_PROXY if proxy else OUTPUT
    sim = {"pose": start, "steps": 0, "outcome": None, "collision_action": None, "actions": []}
    kin = config.kinematics

    def reached(pose):
        return math.hypot(world.target[0] - pose.x, world.target[1] - pose.y) < world.goal_radius

    if reached(start):
        return EpisodeResult(SUCCESS, 0, 0, config.seed, start=start, trace=Trace((), Terminal.HARNESS_STOP))

    def feed():
        if sim["outcome"] is not None:
            return None
        return observe(world, sim["pose"], config.lidar)

    def sink(action: Action):
        before = sim["pose"]
        after = apply_action(before, action.name, kin.step_len, kin.turn_angle)
        sim["pose"] = after
        sim["steps"] += 1
        sim["actions"].append(action.name)
        if path_hits_wall(world, (before.x, before.y), (after.x, after.y), config.collision_radius):
            sim["outcome"], sim["collision_action"] = COLLISION, action.name
        elif reached(after):
            sim["outcome"] = SUCCESS
        elif sim["steps"] >= config.max_steps:
            sim["outcome"] = TIMEOUT

    guarded = GuardedModel(
        make_sensor(feed, INPUT, resume_on=[final], kind="vector"),
        make_distribution_odnn(policy, ACTIONS),
        make_actuator(sink, [final]),
        input_labels=[INPUT], output_labels=[OUTPUT],
    )
    for g in build_guards(guards, config.guard_style, policy, config):
        guarded.add(g)
    engine = Engine(guarded.build(), Strategy.WEIGHTED, config.seed)

    overrides = 0
    cycle = {"first": None, "blocked": False, "modified": False}
    terminal = Terminal.HARNESS_STOP
    try:
        while sim["outcome"] is None:
            result = engine.step()
            if isinstance(result, Deadlock):
                sim["outcome"], terminal = UNKNOWN, Terminal.DEADLOCK
                break
            rec = result.record
            if rec.triggered.label == OUTPUT:
                if cycle["first"] is None:
                    cycle["first"] = rec.triggered.payload.name
                    cycle["blocked"] = any(p.label == OUTPUT for p in rec.blocked)
                cycle["modified"] |= rec.modifier_fired
            if rec.triggered.label == final:
                name = rec.triggered.payload.name
                if cycle["blocked"] or cycle["modified"] or name != cycle["first"]:
                    overrides += 1
                cycle = {"first": None, "blocked": False, "modified": False}
    except (InvalidDistribution, PayloadError):
        sim["outcome"] = UNKNOWN
    return EpisodeResult(sim["outcome"], sim["steps"], overrides, config.seed, sim["collision_action"],
                         start, tuple(sim["actions"]), engine.trace(terminal))


@dataclass(frozen=True)
class Metrics:
    num_of_solved: int
    num_of_collision: int
    num_of_timeout: int
    num_of_unknown: int
    avg_num_of_steps: float | None

    @property
    def total(self) -> int:
        return self.num_of_solved + self.num_of_collision + self.num_of_timeout + self.num_of_unknown

    def as_dict(self) -> dict:
        return {"num_of_solved": self.num_of_solved, "num_of_collision": self.num_of_collision,
                "num_of_timeout": self.num_of_timeout, "num_of_unknown": self.num_of_unknown,
                "avg_num_of_steps": self.avg_num_of_steps}


def aggregate_metrics(results: Sequence[EpisodeResult]) -> Metrics:
    if not results:
        raise ValueError("no episode results to aggregate")
    counts = {o: 0 for o in OUTCOMES}
    for r in results:
        counts[r.outcome] += 1
    steps = [r.steps for r in results if r.outcome == SUCCESS]
    avg = sum(steps) / len(steps) if steps else None
    return Metrics(counts[SUCCESS], counts[COLLISION], counts[TIMEOUT], counts[UNKNOWN], avg)


def run_batch(world: World, policy: Callable, guards: Sequence[str] = (), episodes: int = 100, seed: int = 0,
              config: EpisodeConfig = EpisodeConfig()) -> list[EpisodeResult]:
    """Episodes ``0..episodes-1``; start pose and engine seed depend only on ``(seed, index)``."""
    out = []
    for i in range(episodes):
        cfg = replace(config, seed=episode_seed(seed, i))
        out.append(episode(world, policy, guards, cfg))
    return out


def results_csv(results: Sequence[EpisodeResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULTS_HEADER)
    for i, r in enumerate(results):
        w.writerow([i, r.outcome, r.steps, r.overrides_fired, r.seed])
    return buf.getvalue()


def resolve_policy(text: str, lidar: LidarConfig = LidarConfig()):
    """``heuristic:TEMP`` or a path to a network JSON file."""
    if text.startswith("heuristic"):
        _, _, temp = text.partition(":")
        return HeuristicPolicy(float(temp) if temp else DEFAULT_TEMPERATURE, lidar)
    return NetworkPolicy(load_network(text))


@dataclass(frozen=True)
class RunSettings:
    """A batch of episodes as described by a run configuration file."""

    world: World
    policy: Callable
    episodes: int = 100
    guards: tuple[str, ...] = ()
    seed: int = 0
    config: EpisodeConfig = EpisodeConfig()

    def run(self, guard_style: str | None = None) -> list[EpisodeResult]:
        cfg = self.config if guard_style is None else replace(self.config, guard_style=guard_style)
        return run_batch(self.world, self.policy, self.guards, self.episodes, self.seed, cfg)


RUN_KEYS = ("world", "policy", "episodes", "guards", "guard_style", "seed", "max_steps", "tau", "threshold")


def settings_from_dict(data: dict, base_dir=None) -> RunSettings:
    """Build run settings; a relative ``world`` path is resolved against ``base_dir``.

    Raises ``ValueError`` (or ``WorldError``) for anything malformed.
    """
    unknown = set(data) - set(RUN_KEYS)
    if unknown:
        raise ValueError(f"unknown maze config key(s) {sorted(unknown)}")
    world = data.get("world")
    if world is None:
        world = bundled_world()
    elif isinstance(world, dict):
        world = World.from_dict(world)
    else:
        path = Path(world)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            world = load_world(path)
        except OSError as exc:
            raise WorldError(f"cannot read world {path}: {exc.strerror or exc}") from exc
    guards = data.get("guards", [])
    if isinstance(guards, str):
        guards = [g for g in guards.split(",") if g]
    episodes = int(data.get("episodes", 100))
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    try:
        config = EpisodeConfig(guard_style=data.get("guard_style", "modifier"),
                               **{k: data[k] for k in ("max_steps", "tau", "threshold") if k in data})
    except TypeError as exc:
        raise ValueError(str(exc)) from exc
    policy = resolve_policy(str(data.get("policy", "heuristic")), config.lidar)
    build_guards(guards, config.guard_style, policy, config)  # validate names and style early
    return RunSettings(world, policy, episodes, tuple(guards), int(data.get("seed", 0)), config)


def load_settings(path) -> RunSettings:
    path = Path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise WorldError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise WorldError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise WorldError(f"{path}: top level must be an object")
    return settings_from_dict(data, path.parent)
