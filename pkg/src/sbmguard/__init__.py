"""Scenario-based guards for neural-network controllers."""

from .core import (
    Action,
    BehavioralModel,
    Deadlock,
    Engine,
    Event,
    Modifier,
    ModifierReturnedBlockedEvent,
    Pattern,
    Scenario,
    Strategy,
    Sync,
    Terminal,
    Trace,
    Triggered,
    enabled_events,
    run,
    select_event,
)
from .nn import Network, forward, load_network, small_network
from .oracle import enumerate_runs

__version__ = "0.1.0"
