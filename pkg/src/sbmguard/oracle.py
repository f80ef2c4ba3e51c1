"""Brute-force exploration of the labeled transition system of a model.

Used as an independent oracle for the engine: it recomputes requested,
blocked and enabled sets from scratch at every node instead of going through
:class:`sbmguard.core.Engine`.
"""

from __future__ import annotations

from .core import BehavioralModel, Event, SBMError


class StateSpaceExceeded(SBMError):
    pass


def enumerate_runs(model: BehavioralModel, depth: int, max_states: int = 10**6) -> list[tuple[Event, ...]]:
    """All runs of the model truncated at ``depth`` events.

    A run shorter than ``depth`` ends in a terminal state (no enabled event).
    Runs are listed in priority order: at every node the branches follow
    registration order of the requesting scenario, then declaration order,
    so the first run is the path a priority-driven engine takes.
    """
    if model.modifiers:
        raise ValueError("enumerate_runs covers modifier-free models only")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    scenarios = model.scenarios
    runs: list[tuple[Event, ...]] = []
    visited = 0

    def explore(states: tuple, prefix: tuple[Event, ...]) -> None:
        nonlocal visited
        visited += 1
        if visited > max_states:
            raise StateSpaceExceeded(f"more than {max_states} states explored")
        if len(prefix) == depth:
            runs.append(prefix)
            return
        statements = [s.sync(q) for s, q in zip(scenarios, states)]
        candidates: list[Event] = []
        for st in statements:
            for event, _weight in st.request:
                if event not in candidates:
                    candidates.append(event)
        enabled = [
            e for e in candidates
            if not any(p.matches(e) for st in statements for p in st.block)
        ]
        if not enabled:
            runs.append(prefix)
            return
        for event in enabled:
            nxt = []
            for scenario, state, st in zip(scenarios, states, statements):
                reacts = any(e == event for e, _ in st.request) or any(p.matches(event) for p in st.wait)
                nxt.append(scenario.advance(state, event) if reacts else state)
            explore(tuple(nxt), prefix + (event,))

    explore(tuple(s.initial_state() for s in scenarios), ())
    return runs


def is_prefix_of_some(run, language) -> bool:
    run = tuple(run)
    n = len(run)
    return any(tuple(candidate[:n]) == run for candidate in language)
