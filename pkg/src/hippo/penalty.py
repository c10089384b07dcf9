"""SCAD and l1 penalties, their derivatives, and majorization weights.

The SCAD penalty is defined through its derivative

    rho'(t) = lam * [ 1{t <= lam} + (a*lam - t)_+ / ((a - 1)*lam) * 1{t > lam} ],

with rho'(0+) = lam, so large coefficients escape shrinkage entirely while
small ones are penalized like l1.  Majorizing the concave penalty at the
current iterate turns a SCAD problem into a weighted-l1 problem, which is
what the inner solvers consume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCAD = "scad"
L1 = "l1"
FAMILIES = (SCAD, L1)


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty family with tuning parameter lam and SCAD shape a (> 2)."""

    family: str
    lam: float
    a: float = 3.7

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lam must be finite and >= 0")
        if self.family == SCAD and self.a <= 2:
            raise ValueError("SCAD shape parameter a must exceed 2")


def _nonneg(t, name: str) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0):
        raise ValueError(f"{name} must be >= 0")
    return arr


def penalty_derivative(spec: PenaltySpec, t):
    """rho'(t) for t >= 0.  Vectorized; scalar in, scalar out."""
    arr = _nonneg(t, "t")
    lam, a = spec.lam, spec.a
    if spec.family == L1:
        out = np.full_like(arr, lam)
    elif lam == 0.0:
        out = np.zeros_like(arr)
    else:
        tail = np.clip(a * lam - arr, 0.0, None) / ((a - 1.0) * lam)
        out = lam * np.where(arr <= lam, 1.0, tail)
    return float(out) if np.isscalar(t) else out


def penalty_value(spec: PenaltySpec, t):
    """rho(t) = integral of rho' from 0 to t, in closed form."""
    arr = _nonneg(t, "t")
    lam, a = spec.lam, spec.a
    if spec.family == L1:
        out = lam * arr
    elif lam == 0.0:
        out = np.zeros_like(arr)
    else:
        mid = (2.0 * a * lam * arr - arr * arr - lam * lam) / (2.0 * (a - 1.0))
        out = np.where(
            arr <= lam,
            lam * arr,
            np.where(arr <= a * lam, mid, lam * lam * (a + 1.0) / 2.0),
        )
    return float(out) if np.isscalar(t) else out


def lla_weights(spec: PenaltySpec, current, unpenalized=()) -> np.ndarray:
    """Per-coordinate l1 weights rho'(|current_j|) for the majorized problem.

    A zero `current` yields the constant weight lam everywhere, so the first
    majorization step is exactly the l1-penalized problem.  Indices listed
    in `unpenalized` (intercepts) get weight 0.
    """
    cur = np.asarray(current, dtype=float)
    w = penalty_derivative(spec, np.abs(cur))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    if cur.size == 0:
        return np.zeros(0)
    for j in unpenalized:
        w[j] = 0.0
    return w


def soft_threshold(z, t):
    """sign(z) * max(|z| - t, 0): the proximal map of t * |.|"""
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)
