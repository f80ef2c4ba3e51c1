"""Monitor-interval congestion control harness with scavenger-mode override scenarios.

One guarded agent and one hard-coded competitor share a link. Each monitor
interval (MI) the agent's network proposes a sending rate; the yield/restore
machinery may override it, either through proxy events (``proxy`` style)
or through a single modifier scenario (``modifier`` style).
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Engine, Event, Modifier, Scenario, SBMError, Strategy, Sync, Terminal, Trace
from .guards import GuardedModel, make_actuator, make_sensor
from .nn import Network, forward, load_network

MONITOR_INTERVAL = "MonitorInterval"
QUERY_RATE = "QueryNextSendingRate"
UPDATE_RATE = "UpdateSendingRate"
UPDATE_REDUCE = "UpdateSendingRateReduce"
UPDATE_RESTORE = "UpdateSendingRateRestore"
ENTER_YIELD = "EnterYield"
ENTER_RESTORE = "EnterRestore"
OVERRIDE_OFF = "OverrideOff"
SIGNALS = (OVERRIDE_OFF, ENTER_YIELD, ENTER_RESTORE)

CSV_HEADER = ("mi", "dnn_rate", "final_rate", "mode", "thr_guarded", "thr_competitor", "loss_rate")


class SimulationError(SBMError):
    pass


class ConfigError(ValueError):
    pass


class Mode(str, enum.Enum):
    OFF = "OverrideOff"
    YIELD = "Yield"
    RESTORE = "Restore"


# -- policies ---------------------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    rate: float

    def __post_init__(self):
        _positive(rate=self.rate)


@dataclass(frozen=True)
class StepDown:
    delta: float
    floor: float

    def __post_init__(self):
        _positive(delta=self.delta, floor=self.floor)


@dataclass(frozen=True)
class ExpDecay:
    alpha: float
    floor: float

    def __post_init__(self):
        _positive(floor=self.floor)
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class Immediate:
    pass


@dataclass(frozen=True)
class SlowStart:
    initial: float = 1.0

    def __post_init__(self):
        _positive(initial=self.initial)


def _positive(**values):
    for name, v in values.items():
        if not v > 0:
            raise ConfigError(f"{name} must be > 0, got {v}")


@dataclass(frozen=True)
class Policies:
    yield_policy: Fixed | StepDown | ExpDecay = Fixed(2.0)
    restore_policy: Immediate | SlowStart = SlowStart()


def parse_yield(text: str):
    """``fixed:R``, ``step:D,F`` or ``expdecay:A,F``."""
    kind, _, args = text.partition(":")
    try:
        nums = [float(a) for a in args.split(",")] if args else []
        if kind == "fixed" and len(nums) == 1:
            return Fixed(*nums)
        if kind == "step" and len(nums) == 2:
            return StepDown(*nums)
        if kind == "expdecay" and len(nums) == 2:
            return ExpDecay(*nums)
    except ValueError as exc:
        raise ConfigError(f"bad yield policy {text!r}: {exc}") from exc
    raise ConfigError(f"bad yield policy {text!r}")


def parse_restore(text: str):
    """``immediate``, ``slowstart`` or ``slowstart:INITIAL``."""
    kind, _, args = text.partition(":")
    try:
        if kind == "immediate" and not args:
            return Immediate()
        if kind == "slowstart":
            return SlowStart(float(args)) if args else SlowStart()
    except ValueError as exc:
        raise ConfigError(f"bad restore policy {text!r}: {exc}") from exc
    raise ConfigError(f"bad restore policy {text!r}")


@dataclass(frozen=True)
class RateState:
    ticks_in_mode: int = 1  # 1 for the first MI spent in the current mode
    current_rate: float | None = None  # rate applied in the previous MI
    entry_rate: float | None = None  # rate in force when yield was entered


def override_rate(mode: Mode | str, policies: Policies, dnn_rate: float, state: RateState = RateState()) -> float:
    """Sending rate to apply given the network's proposal and the override mode."""
    mode = Mode(mode)
    if mode is Mode.OFF:
        return dnn_rate
    if mode is Mode.YIELD:
        p = policies.yield_policy
        if isinstance(p, Fixed):
            return p.rate
        entry = state.entry_rate if state.entry_rate is not None else dnn_rate
        if isinstance(p, StepDown):
            return max(p.floor, entry - p.delta * state.ticks_in_mode)
        return max(p.floor, entry * p.alpha ** state.ticks_in_mode)
    p = policies.restore_policy
    if isinstance(p, Immediate):
        return dnn_rate
    base = state.current_rate if state.current_rate is not None else p.initial
    return min(dnn_rate, 2.0 * base)


@dataclass(frozen=True)
class ControlState:
    """Override mode plus the rate bookkeeping the policies need."""

    mode: Mode = Mode.OFF
    ticks: int = 0  # MIs completed in the current mode
    current_rate: float | None = None
    entry_rate: float | None = None

    def on_signal(self, label: str) -> "ControlState":
        if label == ENTER_YIELD:
            return replace(self, mode=Mode.YIELD, ticks=0, entry_rate=self.current_rate)
        if label == ENTER_RESTORE:
            return replace(self, mode=Mode.RESTORE, ticks=0)
        return replace(self, mode=Mode.OFF, ticks=0)

    def rate_state(self) -> RateState:
        return RateState(self.ticks + 1, self.current_rate, self.entry_rate)

    def rate_for(self, dnn_rate: float, policies: Policies) -> float:
        return override_rate(self.mode, policies, dnn_rate, self.rate_state())

    def on_actuated(self, rate: float, policies: Policies) -> "ControlState":
        nxt = replace(self, ticks=self.ticks + 1, current_rate=rate)
        if self.mode is Mode.RESTORE:
            p = policies.restore_policy
            if isinstance(p, Immediate):
                return replace(nxt, mode=Mode.OFF, ticks=0)
            base = self.current_rate if self.current_rate is not None else p.initial
            if rate < 2.0 * base:  # doubling was capped: caught up with the network
                return replace(nxt, mode=Mode.OFF, ticks=0)
        return nxt


# -- link model -------------------------------------------------------------


@dataclass(frozen=True)
class LinkConfig:
    capacity: float = 10.0  # MB/s
    mi_duration: float = 0.1  # seconds
    num_mis: int = 40
    competitor_schedule: tuple[tuple[int, int], ...] = ((0, 40),)
    competitor_initial_rate: float = 2.0
    competitor_min_rate: float = 0.1
    capacity_jitter: float = 0.0  # relative, drawn per MI from the run seed

    def __post_init__(self):
        if not self.capacity > 0:
            raise ConfigError("capacity must be > 0")
        if self.num_mis < 0:
            raise ConfigError("num_mis must be >= 0")
        if not 0 <= self.capacity_jitter < 1:
            raise ConfigError("capacity_jitter must lie in [0, 1)")
        windows = tuple((int(a), int(b)) for a, b in self.competitor_schedule)
        for a, b in windows:
            if not (0 <= a <= b <= self.num_mis):
                raise ConfigError(f"competitor window {(a, b)} outside [0, {self.num_mis})")
        object.__setattr__(self, "competitor_schedule", windows)

    def competitor_active(self, mi: int) -> bool:
        return any(a <= mi < b for a, b in self.competitor_schedule)


@dataclass(frozen=True)
class MiStats:
    throughput: float = 0.0  # MB/s delivered
    loss_rate: float = 0.0
    utilization: float = 0.0

    def as_vector(self) -> tuple[float, float, float]:
        return (self.throughput, self.loss_rate, self.utilization)

    @classmethod
    def from_vector(cls, v) -> "MiStats":
        return cls(*map(float, v))


def compute_mi_stats(sent_guarded: float, sent_competitor: float, capacity: float) -> tuple[MiStats, MiStats]:
    """Proportional sharing: each sender gets ``sent * min(1, capacity / total)``."""
    total = sent_guarded + sent_competitor
    share = 1.0 if total <= capacity else capacity / total
    delivered = (sent_guarded * share, sent_competitor * share)
    util = sum(delivered) / capacity
    out = []
    for sent, got in zip((sent_guarded, sent_competitor), delivered):
        loss = 0.0 if sent == 0 else 1.0 - got / sent
        out.append(MiStats(got, loss, util))
    return out[0], out[1]


def competitor_rate_update(prev_rate: float, loss_rate: float, active: bool,
                           capacity: float = float("inf"), min_rate: float = 0.1) -> float:
    """Hard-coded competitor: x1.1 on a clean MI, x0.7 on loss."""
    if not active:
        return 0.0
    if loss_rate > 0:
        return max(min_rate, prev_rate * 0.7)
    return max(min_rate, min(capacity, prev_rate * 1.1))


# -- detectors --------------------------------------------------------------


@dataclass(frozen=True)
class ScriptedDetector:
    """Emits the scripted signal when the history reaches the keyed MI."""

    script: Mapping[int, str]

    def __post_init__(self):
        script = {int(k): v for k, v in dict(self.script).items()}
        for v in script.values():
            if v not in SIGNALS:
                raise ConfigError(f"unknown signal {v!r}")
        object.__setattr__(self, "script", script)

    @property
    def window(self) -> int:
        return 1


@dataclass(frozen=True)
class LossThresholdDetector:
    theta_in: float = 0.2
    theta_out: float = 0.05
    k: int = 2

    @property
    def window(self) -> int:
        return self.k


def monitor_network_state(history: Sequence[MiStats], detector, yielding: bool = False,
                          index: int | None = None) -> str | None:
    """Signal to raise after the last entry of ``history``, if any.

    ``index`` is the MI number of the last entry; it defaults to
    ``len(history) - 1`` and lets callers pass a truncated history.
    """
    if index is None:
        index = len(history) - 1
    if isinstance(detector, ScriptedDetector):
        return detector.script.get(index)
    recent = [h.loss_rate for h in history[-detector.k:]]
    if len(recent) < detector.k:
        return None
    if not yielding and all(l > detector.theta_in for l in recent):
        return ENTER_YIELD
    if yielding and all(l < detector.theta_out for l in recent):
        return ENTER_RESTORE
    return None


# -- scenarios --------------------------------------------------------------


class MonitorNetworkState(Scenario):
    """Watches MI statistics and raises mode signals before the next rate update."""

    name = "MonitorNetworkState"
    alphabet = {MONITOR_INTERVAL: "vector", UPDATE_RATE: "scalar", **{s: "empty" for s in SIGNALS}}

    def __init__(self, detector):
        self.detector = detector

    def initial_state(self):
        # (MIs seen, recent stats, yielding, pending signal)
        return (0, (), False, None)

    def sync(self, state):
        pending = state[3]
        if pending is not None:
            return Sync(request=[Event(pending)], block=[UPDATE_RATE])
        return Sync(wait=[MONITOR_INTERVAL])

    def advance(self, state, event):
        seen, recent, yielding, pending = state
        if event.label == MONITOR_INTERVAL:
            recent = (recent + (MiStats.from_vector(event.payload),))[-self.detector.window:]
            signal = monitor_network_state(recent, self.detector, yielding, index=seen)
            return (seen + 1, recent, yielding, signal)
        if event.label == ENTER_YIELD:
            yielding = True
        elif event.label in (ENTER_RESTORE, OVERRIDE_OFF):
            yielding = False
        return (seen, recent, yielding, None)


class RateNetwork(Scenario):
    """Network scenario for a rate controller: input statistics in, one rate out."""

    name = "ODNN"
    alphabet = {MONITOR_INTERVAL: "vector", QUERY_RATE: "empty", UPDATE_RATE: "scalar"}

    def __init__(self, policy: Callable[[tuple], float]):
        self.policy = policy

    def initial_state(self):
        return ("wait",)

    def sync(self, state):
        if state[0] == "wait":
            return Sync(wait=[MONITOR_INTERVAL])
        if state[0] == "ready":
            return Sync(wait=[QUERY_RATE])
        return Sync(request=[Event(UPDATE_RATE, state[1])], wait=[UPDATE_RATE])

    def advance(self, state, event):
        if state[0] == "wait":
            return ("ready", event.payload)
        if state[0] == "ready":
            return ("request", float(self.policy(state[1])))
        return ("wait",)


class ControlThroughput(Modifier):
    """Single modifier scenario implementing yield and restore."""

    name = "ControlThroughput"
    alphabet = {UPDATE_RATE: "scalar", **{s: "empty" for s in SIGNALS}}

    def __init__(self, policies: Policies):
        self.policies = policies

    def initial_state(self):
        return ControlState()

    def advance(self, state, event):
        if event.label in SIGNALS:
            return state.on_signal(event.label)
        if event.label == UPDATE_RATE:
            return state.on_actuated(event.payload, self.policies)
        return state

    def modify(self, state, requested, blocked, candidate, rng):
        if candidate.label != UPDATE_RATE or state.mode is Mode.OFF:
            return candidate
        return Event(UPDATE_RATE, state.rate_for(candidate.payload, self.policies))


class _ProxyThrottle(Scenario):
    """Shared bookkeeping of the two proxy-event override scenarios."""

    mode: Mode
    proxy: str
    alphabet = {UPDATE_RATE: "scalar", UPDATE_REDUCE: "scalar", UPDATE_RESTORE: "scalar",
                **{s: "empty" for s in SIGNALS}}

    def __init__(self, policies: Policies):
        self.policies = policies

    def initial_state(self):
        return (ControlState(), None)

    def wants(self, ctl: ControlState) -> bool:
        raise NotImplementedError

    def sync(self, state):
        ctl, pending = state
        wait = [*SIGNALS, UPDATE_REDUCE, UPDATE_RESTORE]
        if pending is None:
            return Sync(wait=[UPDATE_RATE, *wait])
        return self.proposal(ctl, pending, wait)

    def advance(self, state, event):
        ctl, pending = state
        if event.label in SIGNALS:
            return (ctl.on_signal(event.label), pending)
        if event.label == UPDATE_RATE:
            return (ctl, event.payload if self.wants(ctl) else None)
        return (ctl.on_actuated(event.payload, self.policies), None)


class ReduceThroughput(_ProxyThrottle):
    """Re-issues every proposed rate as a proxy event, lowered while yielding."""

    name = "ReduceThroughput"

    def wants(self, ctl):
        return True

    def proposal(self, ctl, pending, wait):
        rate = ctl.rate_for(pending, self.policies) if ctl.mode is Mode.YIELD else pending
        return Sync(request=[Event(UPDATE_REDUCE, rate)], wait=wait)


class RestoreThroughput(_ProxyThrottle):
    """While restoring, issues its own proxy rate and blocks the reduce proxy."""

    name = "RestoreThroughput"

    def wants(self, ctl):
        return ctl.mode is Mode.RESTORE

    def proposal(self, ctl, pending, wait):
        rate = ctl.rate_for(pending, self.policies)
        return Sync(request=[Event(UPDATE_RESTORE, rate)], block=[UPDATE_REDUCE], wait=wait)


# -- agent policies ---------------------------------------------------------


@dataclass(frozen=True)
class HeuristicRatePolicy:
    """Stand-in for a trained rate controller.

    Tracks delivered throughput; on a clean MI it probes upward in proportion
    to the unused share of the link.
    """

    probe: float = 1.0
    gain: float = 1.0
    floor: float = 0.1

    def __call__(self, v) -> float:
        thr, loss, util = (float(a) for a in v)
        if loss > 0:
            return max(self.floor, thr)
        return max(self.floor, thr * (1.0 + self.gain * (1.0 - util)) + self.probe * (1.0 - util))


@dataclass(frozen=True)
class NetworkRatePolicy:
    """Rate from the first output of a loaded network over the stats vector."""

    network: Network
    floor: float = 0.1

    def __call__(self, v) -> float:
        return max(self.floor, float(forward(self.network, v)[0]))


class _Recording:
    def __init__(self, policy):
        self.policy = policy
        self.last: float | None = None

    def __call__(self, v):
        self.last = float(self.policy(v))
        return self.last


# -- simulation -------------------------------------------------------------


@dataclass(frozen=True)
class PccRow:
    mi: int
    dnn_rate: float
    final_rate: float
    mode: Mode
    thr_guarded: float
    thr_competitor: float
    loss_rate: float

    def as_tuple(self):
        return (self.mi, self.dnn_rate, self.final_rate, self.mode.value,
                self.thr_guarded, self.thr_competitor, self.loss_rate)


@dataclass(frozen=True)
class PccTrace:
    rows: tuple[PccRow, ...]
    trace: Trace = field(compare=False, repr=False)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.rows]

    @property
    def actuated(self) -> list[float]:
        return self.column("final_rate")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row.as_tuple()])
        return buf.getvalue()


GUARD_STYLES = ("proxy", "modifier")


def build_model(policy, detector, policies: Policies, guard_style: str, feed, sink):
    """Assemble the guarded rate-control model; returns the model and the final-rate labels."""
    if guard_style not in GUARD_STYLES:
        raise ConfigError(f"unknown guard style {guard_style!r}")
    final = [UPDATE_REDUCE, UPDATE_RESTORE] if guard_style == "proxy" else [UPDATE_RATE]
    sensor = make_sensor(feed, MONITOR_INTERVAL, then=[QUERY_RATE], resume_on=final, kind="vector")
    guarded = GuardedModel(sensor, RateNetwork(policy), make_actuator(sink, final),
                           input_labels=[MONITOR_INTERVAL, QUERY_RATE], output_labels=[UPDATE_RATE])
    guarded.add(MonitorNetworkState(detector))
    if guard_style == "proxy":
        guarded.add(ReduceThroughput(policies)).add(RestoreThroughput(policies))
    else:
        guarded.add(ControlThroughput(policies))
    return guarded.build(), final


def external_events(trace: Trace) -> list[Event]:
    """Events as the environment sees them: proxy outputs relabelled, raw proposals dropped."""
    if not any(e.label in (UPDATE_REDUCE, UPDATE_RESTORE) for e in trace.events):
        return list(trace.events)
    out = []
    for e in trace.events:
        if e.label in (UPDATE_REDUCE, UPDATE_RESTORE):
            out.append(Event(UPDATE_RATE, e.payload))
        elif e.label != UPDATE_RATE:
            out.append(e)
    return out


def current_mode(engine: Engine, guard_style: str) -> Mode:
    if guard_style == "proxy":
        return engine.state_of("ReduceThroughput")[0].mode
    return engine.state_of("ControlThroughput").mode


def simulate(link: LinkConfig, policies: Policies, detector, guard_style: str = "modifier",
             seed: int = 0, policy: Callable[[tuple], float] | None = None) -> PccTrace:
    """Run ``link.num_mis`` monitor intervals of the guarded agent against the competitor."""
    rng = np.random.default_rng(seed)
    agent = _Recording(policy or HeuristicRatePolicy())
    sim = {"stats": MiStats(), "comp_rate": 0.0, "comp_loss": 0.0, "pending": None}
    rows: list[PccRow] = []

    def feed():
        if len(rows) >= link.num_mis:
            return None
        return sim["stats"].as_vector()

    def sink(rate):
        mi = len(rows)
        capacity = link.capacity
        if link.capacity_jitter:
            capacity *= 1.0 + link.capacity_jitter * (2.0 * rng.random() - 1.0)
        if not link.competitor_active(mi):
            comp = 0.0
        elif sim["comp_rate"] == 0:  # (re)joining the link
            comp = link.competitor_initial_rate
        else:
            comp = competitor_rate_update(sim["comp_rate"], sim["comp_loss"], True, capacity,
                                          link.competitor_min_rate)
        guarded, competitor = compute_mi_stats(rate, comp, capacity)
        sim.update(stats=guarded, comp_rate=comp, comp_loss=competitor.loss_rate)
        sim["pending"] = (mi, agent.last, rate, guarded.throughput, competitor.throughput, guarded.loss_rate)

    model, final = build_model(agent, detector, policies, guard_style, feed, sink)
    engine = Engine(model, Strategy.PRIORITY, seed)
    while len(rows) < link.num_mis:
        mode = current_mode(engine, guard_style)
        result = engine.step()
        if not hasattr(result, "event"):
            raise SimulationError(f"model deadlocked at MI {len(rows)}")
        if result.event.label in final:
            mi, dnn, rate, thr_g, thr_c, loss = sim["pending"]
            rows.append(PccRow(mi, dnn, rate, mode, thr_g, thr_c, loss))
    return PccTrace(tuple(rows), engine.trace(Terminal.HARNESS_STOP))


# -- configuration ----------------------------------------------------------


@dataclass(frozen=True)
class PccConfig:
    link: LinkConfig = LinkConfig()
    policies: Policies = Policies()
    detector: ScriptedDetector | LossThresholdDetector = ScriptedDetector({5: ENTER_YIELD, 20: ENTER_RESTORE})
    guard_style: str = "modifier"
    seed: int = 0
    policy: str = "heuristic"


def parse_detector(data: Mapping):
    kind = data.get("kind", "scripted")
    if kind == "scripted":
        return ScriptedDetector({int(k): v for k, v in data.get("script", {}).items()})
    if kind == "loss":
        return LossThresholdDetector(float(data.get("theta_in", 0.2)), float(data.get("theta_out", 0.05)),
                                     int(data.get("k", 2)))
    raise ConfigError(f"unknown detector kind {kind!r}")


def config_from_dict(data: Mapping) -> PccConfig:
    try:
        link_data = dict(data.get("link", {}))
        if "competitor_schedule" in link_data:
            link_data["competitor_schedule"] = tuple(tuple(w) for w in link_data["competitor_schedule"])
        link = LinkConfig(**link_data)
        pol = data.get("policies", {})
        policies = Policies(parse_yield(pol.get("yield", "fixed:2.0")),
                            parse_restore(pol.get("restore", "slowstart")))
        detector = parse_detector(data.get("detector", {}))
        style = data.get("guard_style", "modifier")
        if style not in GUARD_STYLES:
            raise ConfigError(f"unknown guard style {style!r}")
        return PccConfig(link, policies, detector, style, int(data.get("seed", 0)), data.get("policy", "heuristic"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> PccConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)


def resolve_policy(text: str):
    if text == "heuristic":
        return HeuristicRatePolicy()
    return NetworkRatePolicy(load_network(text))


def simulate_config(cfg: PccConfig, guard_style: str | None = None, seed: int | None = None) -> PccTrace:
    return simulate(cfg.link, cfg.policies, cfg.detector, guard_style or cfg.guard_style,
                    cfg.seed if seed is None else seed, resolve_policy(cfg.policy))
