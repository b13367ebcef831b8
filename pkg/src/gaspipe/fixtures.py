"""Built-in test networks, stored as scenario documents.

Compression ratio and withdrawal profiles of the two networks are hand-tuned
sinusoids that keep every simulated pressure inside the junction bounds over the
whole periodic orbit (single pipe: 519-1073 psi in [500, 1100]; four-node:
490-783 psi and twenty-five-node: 500-683 psi, both in [300, 900]).
"""
from __future__ import annotations

import copy

from .errors import InvalidArgument

NAMES = ("single-pipe", "four-node", "twenty-five-node")


def _q(value, unit):
    return {"value": value, "unit": unit}


def _sin(mean, amplitude, harmonic, phase, unit):
    return {
        "type": "sinusoid",
        "mean": mean,
        "unit": unit,
        "terms": [{"amplitude": amplitude, "harmonic": harmonic, "phase": phase}],
    }


def _junctions(ids, p_min, p_max):
    return [
        {"id": i, "kind": "slack" if i == 1 else "nonslack", "p_min": _q(p_min, "psi"), "p_max": _q(p_max, "psi")}
        for i in ids
    ]


_CONSTANTS = {"sound_speed": _q(377.0, "m/s"), "horizon": _q(24, "h")}

_SINGLE = {
    "name": "single-pipe",
    "constants": _CONSTANTS,
    "network": {
        "junctions": _junctions((1, 2), 500, 1100),
        "pipes": [{"id": 1, "from": 1, "to": 2, "length": _q(100, "km"), "diameter": _q(0.5, "m"), "friction": 0.011}],
        # a constant 1.14 boost lets the outlet sag below 500 psi late in the day
        "compressors": [{"pipe": 1, "orientation": "+", "ratio": _sin(1.14, 0.02, 2, 0.0, "1")}],
    },
    "slack": {"1": {"type": "constant", "value": 942.75, "unit": "psi"}},
    "withdrawals": {"2": _sin(68.094, 6.8094, 2, 0.0, "kg/s")},
    "grid": {"N": 24, "delta": _q(5, "km")},
}

_FOUR = {
    "name": "four-node",
    "constants": _CONSTANTS,
    "network": {
        "junctions": _junctions((1, 2, 3, 4), 300, 900),
        "pipes": [
            {"id": 1, "from": 1, "to": 2, "length": _q(60, "km"), "diameter": _q(0.6, "m"), "friction": 0.01},
            {"id": 2, "from": 2, "to": 3, "length": _q(40, "km"), "diameter": _q(0.5, "m"), "friction": 0.01},
            {"id": 3, "from": 3, "to": 4, "length": _q(30, "km"), "diameter": _q(0.5, "m"), "friction": 0.01},
            {"id": 4, "from": 2, "to": 4, "length": _q(50, "km"), "diameter": _q(0.5, "m"), "friction": 0.01},
        ],
        "compressors": [
            {"pipe": 1, "orientation": "+", "ratio": _sin(1.55, 0.05, 1, 0.5, "1")},
            {"pipe": 2, "orientation": "+", "ratio": _sin(1.2, 0.03, 2, -0.8, "1")},
        ],
    },
    "slack": {"1": {"type": "constant", "value": 500, "unit": "psi"}},
    "withdrawals": {
        "2": _sin(30.0, 4.0, 1, 1.0, "kg/s"),
        "3": _sin(25.0, 3.0, 2, 0.3, "kg/s"),
        "4": _sin(35.0, 5.0, 1, -1.2, "kg/s"),
    },
    "grid": {"N": 24, "delta": _q(5, "km")},
}

# (id, from, to, length km, diameter m)
_TREE_PIPES = (
    (1, 1, 2, 80, 1.0), (2, 2, 3, 60, 1.0), (3, 3, 4, 50, 0.9), (4, 4, 5, 70, 0.8),
    (5, 5, 6, 40, 0.7), (6, 6, 7, 30, 0.5), (7, 2, 8, 25, 0.5), (8, 8, 9, 10, 0.4),
    (9, 8, 10, 15, 0.4), (10, 3, 11, 45, 0.6), (11, 11, 12, 20, 0.5), (12, 12, 13, 8, 0.4),
    (13, 11, 14, 35, 0.5), (14, 14, 15, 12, 0.4), (15, 4, 16, 55, 0.6), (16, 16, 17, 18, 0.5),
    (17, 17, 18, 6, 0.4), (18, 16, 19, 28, 0.5), (19, 5, 20, 22, 0.5), (20, 20, 21, 9, 0.4),
    (21, 6, 22, 16, 0.4), (22, 22, 23, 7, 0.4), (23, 7, 24, 14, 0.4), (24, 24, 25, 5, 0.4),
)  # fmt: skip

# pipe -> (mean, amplitude, harmonic, phase)
_TREE_COMPRESSORS = {
    1: (1.3, 0.04, 1, 0.0),
    3: (1.08, 0.03, 2, 0.7),
    5: (1.06, 0.03, 1, -0.5),
    10: (1.05, 0.02, 1, 1.1),
    15: (1.08, 0.03, 2, -1.3),
}


def _tree_withdrawal(j):
    mean = float(3 + (7 * j) % 5)
    return _sin(mean, round(0.15 * mean, 3), 1 + j % 2, round(((37 * j) % 62) / 10 - 3.1, 1), "kg/s")


_TREE = {
    "name": "twenty-five-node",
    "constants": _CONSTANTS,
    "network": {
        "junctions": _junctions(range(1, 26), 300, 900),
        "pipes": [
            {"id": i, "from": a, "to": b, "length": _q(L, "km"), "diameter": _q(D, "m"), "friction": 0.01}
            for i, a, b, L, D in _TREE_PIPES
        ],
        "compressors": [
            {"pipe": p, "orientation": "+", "ratio": _sin(m, am, h, ph, "1")}
            for p, (m, am, h, ph) in _TREE_COMPRESSORS.items()
        ],
    },
    "slack": {"1": {"type": "constant", "value": 500, "unit": "psi"}},
    "withdrawals": {str(j): _tree_withdrawal(j) for j in range(2, 26)},
    "grid": {"N": 24, "delta": _q(5, "km")},
}

_DOCS = {"single-pipe": _SINGLE, "four-node": _FOUR, "twenty-five-node": _TREE}


def fixture_document(name: str) -> dict:
    """A fresh copy of the scenario document for a built-in fixture."""
    try:
        return copy.deepcopy(_DOCS[name])
    except KeyError:
        raise InvalidArgument(f"unknown fixture {name!r}; choose from {', '.join(NAMES)}") from None
