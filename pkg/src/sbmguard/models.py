"""Small ready-made models: a corridor-following robot and a guarded classifier."""

from __future__ import annotations

from typing import Sequence

from .core import BehavioralModel, Engine, Event, Scenario, Strategy, Sync, Trace
from .guards import (
    BlockingRule,
    ModifierRule,
    compile_blocking_rule,
    compile_modifier_rule,
    make_actuator,
    make_odnn,
    replace_with,
    GuardedModel,
)
from .nn import Network, small_network

FORWARD, LEFT, LEFT_CLEAR = "Forward", "Left", "LeftClear"


class MoveForward(Scenario):
    name = "MoveForward"
    states = frozenset({"go"})

    def initial_state(self):
        return "go"

    def sync(self, state):
        return Sync(request=[FORWARD])

    def advance(self, state, event):
        return state


class TurnLeft(Scenario):
    """Once the left side is reported clear, prefers a left turn to moving forward."""

    name = "TurnLeft"
    states = frozenset({"watch", "turn"})

    def initial_state(self):
        return "watch"

    def sync(self, state):
        if state == "watch":
            return Sync(wait=[LEFT_CLEAR])
        return Sync(request=[LEFT], block=[FORWARD])

    def advance(self, state, event):
        return "turn" if state == "watch" else "watch"


class Corridor(Scenario):
    """Environment stand-in: position along a corridor with openings on the left.

    Reports ``LeftClear`` (holding movement until it is reported) at every
    position with an opening. The run ends after a left turn or at the
    corridor's end.
    """

    name = "Corridor"

    def __init__(self, openings: Sequence[bool]):
        self.openings = tuple(bool(o) for o in openings)

    def initial_state(self):
        return (0, False)

    def sync(self, state):
        if state in ("turned", "end"):
            return Sync(block=[FORWARD, LEFT])
        pos, reported = state
        if self.openings[pos] and not reported:
            return Sync(request=[LEFT_CLEAR], block=[FORWARD])
        return Sync(wait=[FORWARD, LEFT])

    def advance(self, state, event):
        pos, _ = state
        if event.label == LEFT_CLEAR:
            return (pos, True)
        if event.label == LEFT:
            return "turned"
        return (pos + 1, False) if pos + 1 < len(self.openings) else "end"


def corridor_model(openings: Sequence[bool] = (False, False, False, True, False)) -> BehavioralModel:
    return BehavioralModel([MoveForward(), TurnLeft(), Corridor(openings)])


# -- guarded classifier -----------------------------------------------------

INPUT_LABEL = "x"


def x1_gt_x2(x) -> bool:
    return x[0] > x[1]


FORCE_Y1 = BlockingRule(x1_gt_x2, "y1")
FORCE_Y1_IF_Y2_ABOVE_1 = ModifierRule(x1_gt_x2, lambda y: y[1] > 1, replace_with("y1"))


class InputList(Scenario):
    """Pure sensor over a fixed list of inputs: injects one, waits for an output, repeats."""

    name = "Sensor"

    def __init__(self, inputs: Sequence, input_label: str, resume_on: Sequence[str]):
        self.inputs = tuple(tuple(float(v) for v in x) for x in inputs)
        self.input_label = input_label
        self.resume_on = tuple(resume_on)
        self.alphabet = {input_label: "vector"}

    def initial_state(self):
        return ("inject", 0) if self.inputs else ("done", 0)

    def sync(self, state):
        tag, i = state
        if tag == "inject":
            return Sync(request=[Event(self.input_label, self.inputs[i])])
        if tag == "idle":
            return Sync(wait=self.resume_on)
        return Sync()

    def advance(self, state, event):
        tag, i = state
        if tag == "inject":
            return ("idle", i)
        return ("inject", i + 1) if i + 1 < len(self.inputs) else ("done", i + 1)


def classifier_model(inputs: Sequence, rule: BlockingRule | ModifierRule | None = None,
                     network: Network | None = None, weighted: bool = False) -> BehavioralModel:
    """Sensor feeding ``inputs`` to the network scenario, optionally guarded by ``rule``."""
    network = network or small_network()
    labels = list(network.labels)
    guarded = GuardedModel(
        InputList(inputs, INPUT_LABEL, labels),
        make_odnn(network, INPUT_LABEL, labels, weighted=weighted),
        make_actuator(lambda payload: None, labels),
        input_labels=[INPUT_LABEL], output_labels=labels,
    )
    if isinstance(rule, BlockingRule):
        guarded.add(compile_blocking_rule(rule, labels, INPUT_LABEL))
    elif isinstance(rule, ModifierRule):
        guarded.add(compile_modifier_rule(rule, labels, INPUT_LABEL))
    elif rule is not None:
        raise TypeError(f"unsupported rule {rule!r}")
    return guarded.build()


def classify(inputs: Sequence, rule=None, network: Network | None = None, seed: int = 0,
             strategy: Strategy | str = Strategy.PRIORITY, weighted: bool = False) -> tuple[list[str], Trace]:
    """Triggered output labels for each input, plus the full trace."""
    model = classifier_model(inputs, rule, network, weighted)
    labels = set((network or small_network()).labels)
    trace = Engine(model, strategy, seed).run(max_steps=4 * len(inputs) + 4)
    return [e.label for e in trace.events if e.label in labels], trace


BUNDLED = {
    "corridor": lambda: corridor_model(),
    "override": lambda: classifier_model([(1, 0), (0, 1)], FORCE_Y1),
    "classifier": lambda: classifier_model([(1, 0), (0, 1)]),
}
