"""Symmetric quadrature on the reference triangle (0,0), (1,0), (0,1).

All rules have positive weights summing to 1/2. Points/weights are the
Strang-Fix / Dunavant symmetric families.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np


def _orbit(a: float, b: float | None = None):
    # barycentric orbits: (1/3,1/3,1/3), (a,a,1-2a) permutations, (a,b,1-a-b) permutations
    if b is None:
        c = 1.0 - 2.0 * a
        return [(a, a, c), (a, c, a), (c, a, a)]
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _rule(groups):
    pts, wts = [], []
    for weight, orbit in groups:
        for bary in orbit:
            pts.append((bary[1], bary[2]))
            wts.append(weight)
    return np.array(pts), 0.5 * np.array(wts)


_S15 = 15 ** 0.5

_RULES = {
    1: [(1.0, [(1 / 3, 1 / 3, 1 / 3)])],
    2: [(1 / 3, _orbit(1 / 6))],
    # degree-4 six-point rule also serves order 3 (the 4-point degree-3 rule has a negative weight)
    4: [
        (0.223381589678011, _orbit(0.445948490915965)),
        (0.109951743655322, _orbit(0.091576213509771)),
    ],
    # Radon's seven-point rule in closed form
    5: [
        (9 / 40, [(1 / 3, 1 / 3, 1 / 3)]),
        ((155 - _S15) / 1200, _orbit((6 - _S15) / 21)),
        ((155 + _S15) / 1200, _orbit((6 + _S15) / 21)),
    ],
    6: [
        (0.116786275726379, _orbit(0.249286745170910)),
        (0.050844906370207, _orbit(0.063089014491502)),
        (0.082851075618374, _orbit(0.053145049844817, 0.310352451033784)),
    ],
}
_RULES[3] = _RULES[4]


@lru_cache(maxsize=None)
def quadrature_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(points, weights)`` exact for total degree <= ``order``.

    Points are (n, 2) reference coordinates, weights (n,) sum to 1/2.
    """
    if order not in _RULES:
        raise ValueError(f"unsupported quadrature order {order}; choose 1..6")
    points, weights = _rule(_RULES[order])
    # renormalize the tabulated 15-digit weights so they sum to the area exactly
    weights = weights * (0.5 / weights.sum())
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights
