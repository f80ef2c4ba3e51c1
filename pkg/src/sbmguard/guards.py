"""Builders for network-wrapping scenarios, sensors, actuators and override rules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from .core import (
    Action,
    BehavioralModel,
    Event,
    Modifier,
    Pattern,
    PayloadError,
    SBMError,
    Scenario,
    Sync,
    as_pattern,
    normalize_payload,
    payload_kind,
)
from .nn import Network, forward, ranking

WAIT = ("wait",)


class InvalidDistribution(SBMError, ValueError):
    pass


class ConventionViolation(SBMError):
    pass


# -- network scenarios ------------------------------------------------------


class NetworkScenario(Scenario):
    """Wraps a classifier network: waits for an input, then requests every output.

    Output event ``output_labels[i]`` stands for network output ``i`` and
    carries the full output vector as payload. Requests are declared best
    score first, so a priority engine triggers the network's choice and falls
    back to the next-highest score when it is blocked. With
    ``weighted=True`` the top output gets weight 1 and the others 0.
    """

    def __init__(self, network: Network, input_label: str, output_labels: Sequence[str],
                 weighted: bool = False, name: str = "ODNN"):
        if len(output_labels) != network.output_dim:
            raise ValueError(f"{len(output_labels)} output labels for network width {network.output_dim}")
        self.name = name
        self.network = network
        self.input_label = input_label
        self.output_labels = tuple(output_labels)
        self.weighted = weighted
        self.alphabet = {input_label: "vector", **{l: "vector" for l in self.output_labels}}

    def initial_state(self):
        return WAIT

    def sync(self, state):
        if state == WAIT:
            return Sync(wait=[self.input_label])
        scores = state[1]
        order = ranking(scores, self.output_labels)
        request = [(Event(l, scores), 1.0 if (not self.weighted or i == 0) else 0.0) for i, l in enumerate(order)]
        return Sync(request=request, wait=self.output_labels)

    def advance(self, state, event):
        if state == WAIT:
            x = event.payload
            if not isinstance(x, tuple) or len(x) != self.network.input_dim:
                raise PayloadError(f"{self.name}: input payload {x!r} does not match network input width {self.network.input_dim}")
            return ("eval", tuple(float(v) for v in forward(self.network, x)))
        return WAIT


def make_odnn(network: Network, input_label: str, output_labels: Sequence[str],
              weighted: bool = False, name: str = "ODNN") -> NetworkScenario:
    return NetworkScenario(network, input_label, output_labels, weighted, name)


def check_distribution(dist, actions: Sequence[str], tol: float = 1e-6) -> tuple[tuple[str, float], ...]:
    out = []
    for name, p in dist:
        p = float(p)
        if name not in actions:
            raise InvalidDistribution(f"unknown action {name!r}")
        if not math.isfinite(p):
            raise InvalidDistribution(f"non-finite probability for {name!r}")
        if p < 0:
            raise InvalidDistribution(f"negative probability {p} for {name!r}")
        out.append((name, p))
    if not out:
        raise InvalidDistribution("empty distribution")
    total = sum(p for _, p in out)
    if abs(total - 1.0) > tol:
        raise InvalidDistribution(f"probabilities sum to {total}, not 1")
    return tuple(out)


class DistributionScenario(Scenario):
    """Wraps a stochastic policy that maps an input vector to action probabilities.

    Every action is requested as ``output_label(Action(name, p))`` with
    weight ``p``; meant for the weighted-redraw strategy.
    """

    def __init__(self, policy: Callable[[tuple], Iterable[tuple[str, float]]], actions: Sequence[str],
                 input_label: str = "InputEvent", output_label: str = "OutputEvent", name: str = "ODNN"):
        self.name = name
        self.policy = policy
        self.actions = tuple(actions)
        self.input_label = input_label
        self.output_label = output_label
        self.alphabet = {input_label: "vector", output_label: "action"}
        self._waiting = Sync(wait=[input_label])

    def initial_state(self):
        return WAIT

    def sync(self, state):
        if state == WAIT:
            return self._waiting
        request = [(Event(self.output_label, Action(name, p)), p) for name, p in state[1]]
        return Sync(request=request, wait=[self.output_label])

    def advance(self, state, event):
        if state == WAIT:
            dist = dict(check_distribution(self.policy(event.payload), self.actions))
            return ("eval", tuple((a, dist.get(a, 0.0)) for a in self.actions))
        return WAIT


def make_distribution_odnn(policy, actions: Sequence[str], input_label: str = "InputEvent",
                           output_label: str = "OutputEvent", name: str = "ODNN") -> DistributionScenario:
    return DistributionScenario(policy, actions, input_label, output_label, name)


# -- sensors and actuators --------------------------------------------------


class Sensor(Scenario):
    """Injects input events pulled from ``feed``.

    Each cycle requests ``input_label(payload)`` and then each label in
    ``then`` (empty payload). With ``resume_on`` the sensor then waits for one
    of those events before pulling the next payload; without it the next
    payload is pulled right away. ``feed`` returning ``None`` ends the
    stream and the sensor goes quiet.
    """

    def __init__(self, feed: Callable[[], Any], input_label: str, then: Sequence[str] = (),
                 resume_on: Sequence = (), kind: str | None = None, name: str = "Sensor"):
        self.name = name
        self.feed = feed
        self.input_label = input_label
        self.then = tuple(then)
        self.resume_on = tuple(as_pattern(p) for p in resume_on)
        self.kind = kind
        self.alphabet = {input_label: kind} if kind else {}
        self.alphabet.update({t: "empty" for t in self.then})
        self._idle = Sync(wait=self.resume_on)
        self._quiet = Sync()

    def _pull(self):
        raw = self.feed()
        if raw is None:
            return ("done",)
        payload = normalize_payload(raw)
        kind = payload_kind(payload)
        if self.kind is None:
            self.kind = kind
        elif kind != self.kind:
            raise PayloadError(f"{self.name}: feed produced a {kind} payload, expected {self.kind}")
        return ("inject", payload, 0)

    def initial_state(self):
        return self._pull()

    def sync(self, state):
        if state[0] == "inject":
            _, payload, k = state
            event = Event(self.input_label, payload) if k == 0 else Event(self.then[k - 1])
            return Sync(request=[event])
        if state[0] == "idle":
            return self._idle
        return self._quiet

    def advance(self, state, event):
        if state[0] == "inject":
            _, payload, k = state
            if k < len(self.then):
                return ("inject", payload, k + 1)
            return ("idle",) if self.resume_on else self._pull()
        if state[0] == "idle":
            return self._pull()
        return state


def make_sensor(feed, input_label: str, then: Sequence[str] = (), resume_on: Sequence = (),
                kind: str | None = None, name: str = "Sensor") -> Sensor:
    return Sensor(feed, input_label, then, resume_on, kind, name)


class Actuator(Scenario):
    """Waits for matching events and forwards their payloads to ``sink``. Never blocks."""

    def __init__(self, sink: Callable[[Any], None], patterns: Sequence = (), name: str = "Actuator"):
        self.name = name
        self.sink = sink
        self.patterns = tuple(as_pattern(p) for p in patterns)

    def initial_state(self):
        return None

    def sync(self, state):
        return Sync(wait=self.patterns)

    def advance(self, state, event):
        self.sink(event.payload)
        return state


def make_actuator(sink, output_patterns: Sequence = (), name: str = "Actuator") -> Actuator:
    return Actuator(sink, output_patterns, name)


# -- override rules ---------------------------------------------------------


@dataclass(frozen=True)
class BlockingRule:
    """Force ``action`` whenever ``when_input`` holds on the network input."""

    when_input: Callable[[tuple], bool]
    action: str


@dataclass(frozen=True)
class ModifierRule:
    """Rewrite the selected output with ``replace`` when both predicates hold.

    ``when_output`` sees the output event's payload (the network output
    vector); ``replace`` gets the candidate event and the blocked patterns.
    """

    when_input: Callable[[tuple], bool]
    when_output: Callable[[Any], bool] | None
    replace: Callable[[Event, tuple], Event]


def replace_with(label: str) -> Callable[[Event, tuple], Event]:
    """Replacement that keeps the payload and swaps the label."""
    def replace(candidate: Event, blocked) -> Event:
        return Event(label, candidate.payload)
    return replace


class BlockingGuard(Scenario):
    def __init__(self, rule: BlockingRule, labels: Sequence[str], input_label: str, name: str):
        if rule.action not in labels:
            raise ValueError(f"override action {rule.action!r} is not an output label")
        self.rule = rule
        self.labels = tuple(labels)
        self.input_label = input_label
        self.name = name

    def initial_state(self):
        return "idle"

    def sync(self, state):
        if state == "idle":
            return Sync(wait=[self.input_label])
        others = [l for l in self.labels if l != self.rule.action]
        return Sync(block=others, wait=[self.input_label, *self.labels])

    def advance(self, state, event):
        if event.label == self.input_label:
            return "armed" if self.rule.when_input(event.payload) else "idle"
        return "idle"


def compile_blocking_rule(rule: BlockingRule, labels: Sequence[str], input_label: str = "InputEvent",
                          name: str = "Override") -> BlockingGuard:
    return BlockingGuard(rule, labels, input_label, name)


class RuleModifier(Modifier):
    def __init__(self, rule: ModifierRule, labels: Sequence[str], input_label: str, name: str):
        self.rule = rule
        self.labels = frozenset(labels)
        self.input_label = input_label
        self.name = name

    def initial_state(self):
        return "idle"

    def advance(self, state, event):
        if event.label == self.input_label:
            return "armed" if self.rule.when_input(event.payload) else "idle"
        if event.label in self.labels:
            return "idle"
        return state

    def modify(self, state, requested, blocked, candidate, rng):
        if state != "armed" or candidate.label not in self.labels:
            return candidate
        q = self.rule.when_output
        if q is not None and not q(candidate.payload):
            return candidate
        return self.rule.replace(candidate, blocked)


def compile_modifier_rule(rule: ModifierRule, labels: Sequence[str], input_label: str = "InputEvent",
                          name: str = "OverrideModifier") -> RuleModifier:
    return RuleModifier(rule, labels, input_label, name)


# -- conventions ------------------------------------------------------------


class ConventionChecked(Scenario):
    """Delegating wrapper that rejects statements blocking inputs or requesting outputs."""

    def __init__(self, inner: Scenario, input_labels: Iterable[str], output_labels: Iterable[str]):
        self.inner = inner
        self.name = inner.name
        self.alphabet = inner.alphabet
        self.states = inner.states
        self.input_labels = frozenset(input_labels)
        self.output_labels = frozenset(output_labels)

    def check(self, st: Sync) -> Sync:
        for p in st.block:
            if p.label in self.input_labels:
                raise ConventionViolation(f"{self.name!r} blocks input event {p.label!r}")
        for e, _ in st.request:
            if e.label in self.output_labels:
                raise ConventionViolation(f"{self.name!r} requests output event {e.label!r}")
        return st

    def initial_state(self):
        return self.inner.initial_state()

    def sync(self, state):
        return self.check(self.inner.sync(state))

    def advance(self, state, event):
        return self.inner.advance(state, event)


class GuardedModel:
    """Sensor, network scenario, actuator and guards wired in a fixed order.

    Registration order is actuator, sensor, network scenario, then guards
    and modifiers in the order added; the actuator goes first so that the
    sensor reads the world after the action has been applied.
    """

    def __init__(self, sensor: Scenario, odnn: Scenario, actuator: Scenario,
                 input_labels: Iterable[str], output_labels: Iterable[str]):
        self.sensor = sensor
        self.odnn = odnn
        self.actuator = actuator
        self.input_labels = frozenset(input_labels)
        self.output_labels = frozenset(output_labels)
        self.guards: list[Scenario | Modifier] = []

    def add(self, guard: Scenario | Modifier) -> "GuardedModel":
        if isinstance(guard, Scenario):
            guard = ConventionChecked(guard, self.input_labels, self.output_labels)
            guard.check(guard.inner.sync(guard.inner.initial_state()))
        self.guards.append(guard)
        return self

    def build(self) -> BehavioralModel:
        return BehavioralModel([self.actuator, self.sensor, self.odnn, *self.guards])
