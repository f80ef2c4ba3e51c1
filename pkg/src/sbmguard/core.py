"""Scenario-based execution engine.

Scenarios are explicit state machines: each one maps its current state to a
synchronization statement (requested / blocked / waited-for events) and
advances deterministically when an event it requested or waits for is
triggered. Modifier scenarios observe the requested and blocked sets at a
synchronization point and may rewrite the event chosen for triggering.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import json
import logging
import math
import numbers
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class SBMError(Exception):
    """Base class for engine errors."""


class PayloadError(SBMError, ValueError):
    pass


class StatementError(SBMError, ValueError):
    pass


class RegistrationError(SBMError):
    pass


class ModifierReturnedBlockedEvent(SBMError):
    def __init__(self, modifier: str, event: "Event", blocked: Sequence["Pattern"]):
        self.modifier = modifier
        self.event = event
        self.blocked = tuple(blocked)
        names = ", ".join(p.describe() for p in self.blocked)
        super().__init__(f"modifier {modifier!r} returned blocked event {event} (blocked: {names})")


class NoSelectableEvent(SBMError):
    """Raised by a selection strategy that cannot pick an event."""


# -- payloads ---------------------------------------------------------------


@dataclass(frozen=True)
class Action:
    """Discrete action payload, optionally carrying the policy's probability."""

    name: str
    prob: float | None = None

    def __post_init__(self):
        if not self.name:
            raise PayloadError("action name must be non-empty")
        if self.prob is not None:
            p = float(self.prob)
            if not math.isfinite(p):
                raise PayloadError(f"action probability must be finite, got {self.prob!r}")
            object.__setattr__(self, "prob", p)

    def __str__(self):
        return self.name if self.prob is None else f"{self.name}:{self.prob:.3g}"


PAYLOAD_KINDS = ("empty", "scalar", "vector", "action")


def normalize_payload(payload: Any) -> Any:
    """Coerce a payload into its canonical immutable form.

    Scalars become ``float``, vectors become tuples of ``float`` and strings
    become :class:`Action`. Non-finite reals are rejected.
    """
    if payload is None or isinstance(payload, Action):
        return payload
    if isinstance(payload, str):
        return Action(payload)
    if isinstance(payload, bool):
        raise PayloadError("boolean payloads are not supported")
    if isinstance(payload, numbers.Real):
        value = float(payload)
        if not math.isfinite(value):
            raise PayloadError(f"non-finite scalar payload {payload!r}")
        return value
    try:
        arr = np.asarray(payload, dtype=float).ravel()
    except (TypeError, ValueError) as exc:
        raise PayloadError(f"unsupported payload {payload!r}") from exc
    if not np.isfinite(arr).all():
        raise PayloadError(f"non-finite entry in vector payload {payload!r}")
    return tuple(arr.tolist())


def payload_kind(payload: Any) -> str:
    if payload is None:
        return "empty"
    if isinstance(payload, Action):
        return "action"
    if isinstance(payload, float):
        return "scalar"
    return "vector"


def encode_payload(payload: Any) -> Any:
    """JSON-ready form of a canonical payload."""
    if isinstance(payload, Action):
        return {"action": payload.name, "prob": payload.prob}
    if isinstance(payload, tuple):
        return list(payload)
    return payload


# -- events and patterns ----------------------------------------------------


@dataclass(frozen=True)
class Event:
    label: str
    payload: Any = None

    def __post_init__(self):
        if not isinstance(self.label, str) or not self.label:
            raise PayloadError(f"event label must be a non-empty string, got {self.label!r}")
        object.__setattr__(self, "payload", normalize_payload(self.payload))

    @property
    def kind(self) -> str:
        return payload_kind(self.payload)

    def __str__(self):
        if self.payload is None:
            return self.label
        if isinstance(self.payload, tuple):
            inner = ",".join(f"{v:g}" for v in self.payload)
            return f"{self.label}({inner})"
        if isinstance(self.payload, float):
            return f"{self.label}({self.payload:g})"
        return f"{self.label}({self.payload})"


@dataclass(frozen=True)
class Pattern:
    """Matches events by label, optionally filtered by a payload predicate.

    The predicate must be pure.
    """

    label: str
    where: Callable[[Any], bool] | None = None
    desc: str | None = None

    def matches(self, event: Event) -> bool:
        if event.label != self.label:
            return False
        return self.where is None or bool(self.where(event.payload))

    def describe(self) -> str:
        if self.desc is not None:
            return self.desc
        return self.label if self.where is None else f"{self.label}(?)"

    @classmethod
    def exactly(cls, event: Event) -> "Pattern":
        payload = event.payload
        return cls(event.label, lambda p: p == payload, desc=str(event))


def as_pattern(item: str | Event | Pattern) -> Pattern:
    if type(item) is Pattern:
        return item
    if isinstance(item, Pattern):
        return item
    if isinstance(item, Event):
        return Pattern.exactly(item)
    if isinstance(item, str):
        return Pattern(item)
    raise StatementError(f"cannot interpret {item!r} as an event pattern")


def _as_request(item) -> tuple[Event, float]:
    if type(item) is tuple and len(item) == 2 and type(item[0]) is Event and type(item[1]) is float:
        return item
    if isinstance(item, Event):
        return item, 1.0
    if isinstance(item, str):
        return Event(item), 1.0
    event, weight = item
    if not isinstance(event, Event):
        event = Event(event)
    return event, float(weight)


@dataclass(frozen=True)
class Sync:
    """Synchronization statement: what a scenario requests, blocks and waits for.

    ``request`` accepts events (weight 1) or ``(event, weight)`` pairs;
    ``block`` and ``wait`` accept labels, events or patterns.
    """

    request: tuple = ()
    block: tuple = ()
    wait: tuple = ()

    def __post_init__(self):
        request = tuple(map(_as_request, self.request))
        block = tuple(map(as_pattern, self.block))
        wait = tuple(map(as_pattern, self.wait))
        for event, weight in request:
            if not 0 <= weight < math.inf:
                raise StatementError(f"request weight for {event} must be finite and >= 0, got {weight}")
        if request and block:
            clash = {e.label for e, _ in request} & {p.label for p in block}
            if clash:
                raise StatementError(f"statement both requests and blocks {sorted(clash)}")
        object.__setattr__(self, "request", request)
        object.__setattr__(self, "block", block)
        object.__setattr__(self, "wait", wait)

    def requests(self, event: Event) -> bool:
        return any(e == event for e, _ in self.request)

    def notifies(self, event: Event) -> bool:
        """True if a scenario holding this statement reacts to ``event``."""
        return self.requests(event) or any(p.matches(event) for p in self.wait)


IDLE = Sync()


# -- scenario objects -------------------------------------------------------


class Scenario:
    """A scenario object.

    Subclasses implement :meth:`initial_state`, :meth:`sync` and
    :meth:`advance`. ``advance`` is only called for events the current
    statement requests or waits for; for every other event the state is left
    unchanged. ``alphabet`` optionally declares the payload kind per label.
    """

    name: str = "scenario"
    alphabet: Mapping[str, str] = {}
    states: frozenset | None = None

    def initial_state(self) -> Hashable:
        raise NotImplementedError

    def sync(self, state) -> Sync:
        raise NotImplementedError

    def advance(self, state, event: Event):
        raise NotImplementedError

    def step(self, state, event: Event):
        """Apply one triggered event; returns ``(next_state, next_statement)``."""
        current = self.sync(state)
        nxt = self.advance(state, event) if current.notifies(event) else state
        return nxt, self.sync(nxt)

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r}>"


class FunctionScenario(Scenario):
    """Scenario assembled from plain functions."""

    def __init__(
        self,
        name: str,
        initial: Hashable,
        sync: Callable[[Any], Sync],
        advance: Callable[[Any, Event], Any],
        alphabet: Mapping[str, str] | None = None,
        states: Iterable | None = None,
    ):
        self.name = name
        self._initial = initial
        self._sync = sync
        self._advance = advance
        self.alphabet = dict(alphabet or {})
        self.states = frozenset(states) if states is not None else None

    def initial_state(self):
        return self._initial

    def sync(self, state):
        return self._sync(state)

    def advance(self, state, event):
        return self._advance(state, event)


class TableScenario(Scenario):
    """Finite scenario given as per-state statements and a transition table.

    ``transitions`` maps ``(state, label)`` to the next state; a missing entry
    keeps the state.
    """

    def __init__(self, name: str, initial, statements: Mapping[Any, Sync], transitions: Mapping):
        self.name = name
        self._initial = initial
        self.statements = dict(statements)
        self.transitions = dict(transitions)
        self.states = frozenset(self.statements)

    def initial_state(self):
        return self._initial

    def sync(self, state):
        return self.statements[state]

    def advance(self, state, event):
        return self.transitions.get((state, event.label), state)


class Modifier:
    """A modifier scenario.

    ``advance`` is the transition function and sees every triggered event.
    ``modify`` receives the requested ``(event, weight)`` pairs, the blocked
    patterns, the candidate picked by the selection strategy and the engine's
    random generator; it returns the event to trigger, which must not be
    blocked.
    """

    name: str = "modifier"
    alphabet: Mapping[str, str] = {}
    states: frozenset | None = None

    def initial_state(self) -> Hashable:
        return None

    def advance(self, state, event: Event):
        return state

    def modify(self, state, requested, blocked, candidate: Event, rng: np.random.Generator) -> Event:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__} {self.name!r}>"


class IdentityModifier(Modifier):
    def __init__(self, name: str = "identity"):
        self.name = name

    def modify(self, state, requested, blocked, candidate, rng):
        return candidate


class BehavioralModel:
    """An ordered collection of scenarios and modifiers."""

    def __init__(self, objects: Iterable[Scenario | Modifier] = ()):
        self._scenarios: list[Scenario] = []
        self._modifiers: list[Modifier] = []
        self._names: list[str] = []
        self.alphabet: dict[str, str] = {}
        for obj in objects:
            self.register(obj)

    def register(self, obj: Scenario | Modifier) -> "BehavioralModel":
        if not isinstance(obj, (Scenario, Modifier)):
            raise RegistrationError(f"cannot register {obj!r}")
        if obj.name in self._names:
            raise RegistrationError(f"duplicate scenario id {obj.name!r}")
        if obj.states is not None and obj.initial_state() not in obj.states:
            raise RegistrationError(f"initial state of {obj.name!r} is not among its states")
        for label, kind in obj.alphabet.items():
            if kind not in PAYLOAD_KINDS:
                raise RegistrationError(f"unknown payload kind {kind!r} for {label!r}")
            known = self.alphabet.get(label)
            if known is not None and known != kind:
                raise RegistrationError(
                    f"{obj.name!r} declares {label!r} as {kind}, model already has {known}"
                )
        self.alphabet.update(obj.alphabet)
        self._names.append(obj.name)
        if isinstance(obj, Modifier):
            self._modifiers.append(obj)
        else:
            self._scenarios.append(obj)
        return self

    @property
    def scenarios(self) -> tuple[Scenario, ...]:
        return tuple(self._scenarios)

    @property
    def modifiers(self) -> tuple[Modifier, ...]:
        return tuple(self._modifiers)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self._names)

    def __len__(self):
        return len(self._names)


# -- event selection --------------------------------------------------------


class Strategy(str, enum.Enum):
    PRIORITY = "priority"
    UNIFORM = "uniform"
    WEIGHTED = "weighted"


def _is_blocked(event: Event, blocked: Iterable[Pattern]) -> bool:
    return any(p.matches(event) for p in blocked)


def _requested_pairs(requested) -> list[tuple[Event, float]]:
    return [_as_request(r) for r in requested]


def enabled_events(requested, blocked) -> list[Event]:
    """Requested events not matched by any blocked pattern.

    Order follows first appearance in ``requested`` (registration order, then
    declaration order) and duplicates are dropped.
    """
    blocked = [as_pattern(b) for b in blocked]
    out: list[Event] = []
    for event, _ in _requested_pairs(requested):
        if event not in out and not _is_blocked(event, blocked):
            out.append(event)
    return out


MAX_REDRAWS = 10_000


def select_event(strategy: Strategy | str, requested, blocked, rng: np.random.Generator) -> Event:
    """Pick the event to trigger.

    ``priority`` takes the first enabled event; ``uniform`` draws uniformly
    over the enabled set; ``weighted`` draws proportionally to request
    weights over the whole requested set and redraws while the draw is
    blocked. Raises :class:`NoSelectableEvent` when nothing can be picked.
    """
    return _select(Strategy(strategy), _requested_pairs(requested), [as_pattern(b) for b in blocked], rng)


def _select(strategy: Strategy, requested: Sequence[tuple[Event, float]], blocked: Sequence[Pattern],
            rng: np.random.Generator) -> Event:
    if strategy is not Strategy.WEIGHTED:
        enabled: list[Event] = []
        for event, _ in requested:
            if event not in enabled and not _is_blocked(event, blocked):
                enabled.append(event)
        if not enabled:
            raise NoSelectableEvent("no enabled events")
        if strategy is Strategy.PRIORITY or len(enabled) == 1:
            return enabled[0]
        return enabled[int(rng.integers(len(enabled)))]

    totals: dict[Event, float] = {}
    for event, weight in requested:
        totals[event] = totals.get(event, 0.0) + weight
    if not any(not _is_blocked(e, blocked) for e in totals):
        raise NoSelectableEvent("no enabled events")
    events = [e for e, w in totals.items() if w > 0]
    live = [not _is_blocked(e, blocked) for e in events]
    if not any(live):
        raise NoSelectableEvent("every event with positive weight is blocked")
    if len(events) == 1:
        return events[0]
    weights = [totals[e] for e in events]
    cumulative = list(itertools.accumulate(weights))
    total = cumulative[-1]
    for _ in range(MAX_REDRAWS):
        i = bisect.bisect_right(cumulative, rng.random() * total)
        i = min(i, len(events) - 1)
        if live[i]:
            return events[i]
    # pathological mass on blocked events: sample the renormalized law directly
    mask = np.array(live, dtype=float) * np.array(weights)
    return events[int(rng.choice(len(events), p=mask / mask.sum()))]


def apply_modifier(modifier: Modifier, state, requested, blocked, candidate: Event, rng) -> Event:
    """Run one modifier's selection function and enforce the no-blocked-event rule."""
    out = modifier.modify(state, tuple(requested), tuple(blocked), candidate, rng)
    if not isinstance(out, Event):
        raise SBMError(f"modifier {modifier.name!r} returned {out!r}, expected an Event")
    if _is_blocked(out, blocked):
        raise ModifierReturnedBlockedEvent(modifier.name, out, blocked)
    return out


# -- execution --------------------------------------------------------------


class Terminal(str, enum.Enum):
    DEADLOCK = "Deadlock"
    MAX_STEPS = "MaxSteps"
    HARNESS_STOP = "HarnessStop"


@dataclass(frozen=True)
class StepRecord:
    index: int
    triggered: Event
    requested: tuple[tuple[Event, float], ...]
    blocked: tuple[Pattern, ...]
    modifier_fired: bool = False

    def to_json(self) -> dict:
        return {
            "step": self.index,
            "event": self.triggered.label,
            "payload": encode_payload(self.triggered.payload),
            "requested": [[e.label, encode_payload(e.payload), w] for e, w in self.requested],
            "blocked": [p.describe() for p in self.blocked],
            "modifier_fired": self.modifier_fired,
        }


@dataclass(frozen=True)
class Trace:
    records: tuple[StepRecord, ...]
    terminal: Terminal

    @property
    def events(self) -> list[Event]:
        return [r.triggered for r in self.records]

    @property
    def labels(self) -> list[str]:
        return [r.triggered.label for r in self.records]

    def __len__(self):
        return len(self.records)

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.to_json(), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"terminal": self.terminal.value, "steps": len(self.records)}, sort_keys=True))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Triggered:
    event: Event
    record: StepRecord


@dataclass(frozen=True)
class Deadlock:
    requested: tuple[tuple[Event, float], ...] = ()
    blocked: tuple[Pattern, ...] = ()


class Engine:
    """Executes a :class:`BehavioralModel` one synchronization point at a time."""

    def __init__(self, model: BehavioralModel, strategy: Strategy | str = Strategy.PRIORITY, seed: int | None = None):
        self.model = model
        self.strategy = Strategy(strategy)
        self.seed = seed
        self.reset()

    def reset(self) -> None:
        self.rng = np.random.default_rng(self.seed)
        self._states = [s.initial_state() for s in self.model.scenarios]
        self._statements = [s.sync(q) for s, q in zip(self.model.scenarios, self._states)]
        self._mod_states = [m.initial_state() for m in self.model.modifiers]
        self._kinds = dict(self.model.alphabet)
        self.records: list[StepRecord] = []

    def state_of(self, name: str):
        for obj, state in zip(self.model.scenarios, self._states):
            if obj.name == name:
                return state
        for obj, state in zip(self.model.modifiers, self._mod_states):
            if obj.name == name:
                return state
        raise KeyError(name)

    def statement_of(self, name: str) -> Sync:
        for obj, st in zip(self.model.scenarios, self._statements):
            if obj.name == name:
                return st
        raise KeyError(name)

    def snapshot(self) -> tuple[tuple[tuple[Event, float], ...], tuple[Pattern, ...]]:
        requested: list[tuple[Event, float]] = []
        blocked: list[Pattern] = []
        for st in self._statements:
            requested.extend(st.request)
            blocked.extend(st.block)
        return tuple(requested), tuple(blocked)

    def _check_kind(self, event: Event) -> None:
        known = self._kinds.setdefault(event.label, event.kind)
        if known != event.kind:
            raise PayloadError(f"{event.label!r} carries {event.kind} payload, expected {known}")

    def step(self) -> Triggered | Deadlock:
        requested, blocked = self.snapshot()
        try:
            candidate = _select(self.strategy, requested, blocked, self.rng)
        except NoSelectableEvent:
            return Deadlock(requested, blocked)
        event = candidate
        for modifier, state in zip(self.model.modifiers, self._mod_states):
            event = apply_modifier(modifier, state, requested, blocked, event, self.rng)
        self._check_kind(event)

        states = list(self._states)
        notified = []
        for i, (scenario, st) in enumerate(zip(self.model.scenarios, self._statements)):
            if st.notifies(event):
                states[i] = scenario.advance(states[i], event)
                notified.append(i)
        mod_states = [m.advance(q, event) for m, q in zip(self.model.modifiers, self._mod_states)]
        statements = list(self._statements)
        for i in notified:
            statements[i] = self.model.scenarios[i].sync(states[i])
        self._states, self._mod_states, self._statements = states, mod_states, statements

        record = StepRecord(len(self.records), event, requested, blocked, event != candidate)
        self.records.append(record)
        log.debug("step %d: %s%s", record.index, event, " (modified)" if record.modifier_fired else "")
        return Triggered(event, record)

    def trace(self, terminal: Terminal | str) -> Trace:
        return Trace(tuple(self.records), Terminal(terminal))

    def run(self, max_steps: int, until: Callable[[StepRecord], bool] | None = None) -> Trace:
        """Step until deadlock, ``max_steps`` steps, or ``until(record)`` is true."""
        if max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        while len(self.records) < max_steps:
            result = self.step()
            if isinstance(result, Deadlock):
                return self.trace(Terminal.DEADLOCK)
            if until is not None and until(result.record):
                return self.trace(Terminal.HARNESS_STOP)
        return self.trace(Terminal.MAX_STEPS)


def run(model: BehavioralModel, max_steps: int, seed: int | None = None, strategy: Strategy | str = Strategy.PRIORITY) -> Trace:
    return Engine(model, strategy, seed).run(max_steps)
