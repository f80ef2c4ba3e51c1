"""Minimal feedforward network evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

ACTIVATIONS = {
    "relu": lambda v: np.maximum(v, 0.0),
    "linear": lambda v: v,
}


class NetworkError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Layer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        b = np.array(self.biases, dtype=float).ravel()
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        if w.ndim != 2 or w.shape[0] == 0 or w.shape[1] == 0:
            raise NetworkError(f"weights must be a non-empty matrix, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise NetworkError(f"bias length {b.shape[0]} != weight rows {w.shape[0]}")
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NetworkError("non-finite weight or bias")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return ACTIVATIONS[self.activation](self.weights @ x + self.biases)


@dataclass(frozen=True, eq=False)
class Network:
    layers: tuple[Layer, ...]
    input_dim: int
    labels: tuple[str, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        labels = tuple(self.labels)
        if not layers:
            raise NetworkError("network needs at least one layer")
        width = int(self.input_dim)
        for i, layer in enumerate(layers):
            if layer.in_dim != width:
                raise NetworkError(f"layer {i} expects {layer.in_dim} inputs, previous width is {width}")
            width = layer.out_dim
        if len(labels) != width:
            raise NetworkError(f"{len(labels)} labels for output width {width}")
        if len(set(labels)) != len(labels):
            raise NetworkError("output labels must be unique")
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "input_dim", int(self.input_dim))

    @property
    def output_dim(self) -> int:
        return len(self.labels)

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)


def activations(network: Network, x) -> list[np.ndarray]:
    """Values of every layer for input ``x``; the last entry is the output."""
    v = np.asarray(x, dtype=float).ravel()
    if v.shape[0] != network.input_dim:
        raise NetworkError(f"input has {v.shape[0]} entries, network expects {network.input_dim}")
    if not np.isfinite(v).all():
        raise NetworkError("non-finite input")
    out = []
    for layer in network.layers:
        v = layer(v)
        out.append(v)
    return out


def forward(network: Network, x) -> np.ndarray:
    return activations(network, x)[-1]


def network_from_dict(data: dict) -> Network:
    try:
        layers = tuple(
            Layer(entry["weights"], entry["biases"], entry.get("activation", "relu"))
            for entry in data["layers"]
        )
        return Network(layers, data["input_dim"], tuple(data["labels"]))
    except KeyError as exc:
        raise NetworkError(f"missing field {exc.args[0]!r}") from exc


def network_to_dict(network: Network) -> dict:
    return {
        "input_dim": network.input_dim,
        "labels": list(network.labels),
        "layers": [
            {"weights": l.weights.tolist(), "biases": l.biases.tolist(), "activation": l.activation}
            for l in network.layers
        ],
    }


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


SMALL_NETWORK_RESOURCE = "small_network.json"


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("sbmguard") / "data" / name))


def small_network() -> Network:
    """The bundled 2-3-2 ReLU network used by the demos."""
    return load_network(fixture_path(SMALL_NETWORK_RESOURCE))


def rank_labels(scores: Sequence[float], labels: Sequence[str], excluded=()) -> str:
    """Label of the highest score outside ``excluded``; ties go to the earlier label."""
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores for {len(labels)} labels")
    excluded = set(excluded)
    best = None
    for label, score in zip(labels, scores):
        if label in excluded:
            continue
        if best is None or score > best[1]:
            best = (label, score)
    if best is None:
        raise ValueError("every label is excluded")
    return best[0]


def ranking(scores: Sequence[float], labels: Sequence[str]) -> list[str]:
    order = sorted(range(len(labels)), key=lambda i: (-float(scores[i]), i))
    return [labels[i] for i in order]


def to_distribution(scores: Sequence[float], labels: Sequence[str] | None = None) -> list[tuple[str, float]]:
    """Softmax of ``scores`` paired with labels (indices when no labels)."""
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0 or not np.isfinite(s).all():
        raise ValueError("scores must be a non-empty finite vector")
    z = np.exp(s - s.max())
    p = z / z.sum()
    if labels is None:
        labels = [str(i) for i in range(s.size)]
    if len(labels) != s.size:
        raise ValueError(f"{s.size} scores for {len(labels)} labels")
    return [(label, float(v)) for label, v in zip(labels, p)]


def is_distribution(probs: Sequence[float], tol: float = 1e-6) -> bool:
    p = [float(v) for v in probs]
    return bool(p) and all(math.isfinite(v) and v >= 0 for v in p) and abs(sum(p) - 1.0) <= tol
