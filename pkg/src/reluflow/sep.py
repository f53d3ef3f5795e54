"""Separability witnesses, hidden-neighborhoods, the masking-matrix lemma,
and the gradient-norm lower bound computed from measured constants.

A parameter point is separable from a dataset with constants
gamma, m < M, q < Q when every constant-label interval I_j hosts three
well-spread breakpoints (weights bounded below by m, biases above by M,
consecutive gaps in [q, Q]) and four additional always-active neurons (two
breakpoint signs each) exist; gamma lower-bounds the data gap at label
switches.  Separability plus L >= 1/(2n) forces

    (1/2) ||grad L||^2 >= gamma^2 q^2 m^6 / (259200 n^4 Q^2 M^4).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .net import DEAD_SLOPE, Params
from .data import Dataset, TeacherSpec, interval_x_ranges
from .init import breakpoints_of


@dataclass(frozen=True)
class SeparabilityConstants:
    gamma: float
    m: float
    M: float
    q: float
    Q: float

    def __post_init__(self):
        if not (self.gamma > 0 and 0 < self.m and 0 < self.q):
            raise ValueError("constants must be positive")

    def to_json(self) -> str:
        return json.dumps({"gamma": self.gamma, "m": self.m, "M": self.M, "q": self.q, "Q": self.Q})


@dataclass(frozen=True)
class NeighborhoodSpec:
    center: Params
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")


def neighborhood_membership(spec: NeighborhoodSpec, p: Params) -> bool:
    """True iff every hidden pair (w_j, b_j) moved at most delta from the
    center (closed balls); output weights are unconstrained."""
    if p.k != spec.center.k:
        raise ValueError("width mismatch")
    dw = p.w - spec.center.w
    db = p.b - spec.center.b
    return bool(np.all(np.hypot(dw, db) <= spec.delta + 1e-15 * max(1.0, spec.delta)))


def check_separability(p: Params, d: Dataset, spec: TeacherSpec | None = None):
    """Search Definition-style witnesses and report achieved constants.

    Returns (verdict, SeparabilityConstants) on success or
    (False, failure description dict) naming the first unsatisfiable item.
    """
    ranges = interval_x_ranges(d, spec)
    I = [i for i in range(1, d.n) if d.ys[i - 1] != d.ys[i]]  # 0-based switch starts

    bps = breakpoints_of(p)
    live = np.abs(p.w) > DEAD_SLOPE
    finite = live & np.isfinite(bps)

    # always-active neurons w.r.t. the data (preactivation > 0 at both
    # extreme data points; preactivations are monotone in x)
    lo_x, hi_x = float(d.xs[0]), float(d.xs[-1])
    pre_lo = p.w * lo_x + p.b
    pre_hi = p.w * hi_x + p.b
    always_active = (pre_lo > 0) & (pre_hi > 0)

    triples = []
    used = set()
    for (a, b) in ranges:
        cand = [j for j in range(p.k) if finite[j] and a < bps[j] < b]
        cand.sort(key=lambda j: bps[j])
        if len(cand) < 3:
            return False, {"item": 1, "interval": (a, b), "reason": "fewer than 3 breakpoints"}
        # tie-break clause: left-most and right-most breakpoints; middle one
        # picked to balance the gaps
        j1, j3 = cand[0], cand[-1]
        mid_target = 0.5 * (bps[j1] + bps[j3])
        j2 = min((j for j in cand[1:-1]), key=lambda j: abs(bps[j] - mid_target), default=None)
        if j2 is None:
            return False, {"item": 3, "interval": (a, b), "reason": "no middle breakpoint"}
        triples.append((j1, j2, j3))
        used.update((j1, j2, j3))

    pos_active = [j for j in range(p.k) if always_active[j] and j not in used and finite[j] and bps[j] > 0]
    neg_active = [j for j in range(p.k) if always_active[j] and j not in used and finite[j] and bps[j] < 0]
    if len(pos_active) < 2 or len(neg_active) < 2:
        return False, {"item": 2, "reason": "fewer than two always-active neurons per side"}
    # tightest Q contribution: pick the smallest-|breakpoint| pairs
    pos_active.sort(key=lambda j: abs(bps[j]))
    neg_active.sort(key=lambda j: abs(bps[j]))
    four = pos_active[:2] + neg_active[:2]

    witness = [j for tri in triples for j in tri] + four
    m = float(np.min(np.abs(p.w[witness])))
    M = float(np.max(np.abs(p.b[witness])))
    gaps = []
    for (j1, j2, j3) in triples:
        gaps.extend([bps[j2] - bps[j1], bps[j3] - bps[j2]])
    if min(gaps) <= 0:
        return False, {"item": 3, "reason": "coincident breakpoints"}
    q = float(min(gaps))
    Q_parts = list(gaps) + [abs(bps[j]) for j in four]
    for j in range(len(triples) - 1):
        Q_parts.append(abs(bps[triples[j + 1][0]] - bps[triples[j][2]]))
    Q = float(max(Q_parts))

    if I:
        gamma = float(min(d.xs[i] - d.xs[i - 1] for i in I))
    else:
        gamma = float("inf")
    if not gamma > 0:
        return False, {"item": 5, "reason": "zero gap at a label switch"}
    if not (m < M):
        M = np.nextafter(m, np.inf)
    if not (q < Q):
        Q = np.nextafter(q, np.inf)
    return True, SeparabilityConstants(gamma=gamma, m=m, M=M, q=q, Q=Q)


def grad_lower_bound(c: SeparabilityConstants, n: int) -> float:
    """gamma^2 q^2 m^6 / (259200 n^4 Q^2 M^4)."""
    return (c.gamma**2 * c.q**2 * c.m**6) / (259200.0 * n**4 * c.Q**2 * c.M**4)


def masking_patterns(d: int):
    """All 2^(d-1) valid masking matrices: first row all-ones, row i with
    i-1 leading ones or i-1 leading zeros."""
    if not 1 <= d <= 8:
        raise ValueError("exhaustive enumeration supports 1 <= d <= 8")
    rows = []
    for i in range(2, d + 1):
        ones = np.zeros(d)
        ones[: i - 1] = 1.0
        zeros = np.zeros(d)
        zeros[i - 1 :] = 1.0
        rows.append((ones, zeros))
    for choice in itertools.product((0, 1), repeat=d - 1):
        A = np.ones((d, d))
        for i, c in enumerate(choice):
            A[i + 1] = rows[i][c]
        yield A


def masking_inverse_bound(d: int) -> float:
    """Worst spectral norm of A^{-1} over all valid patterns; asserts
    invertibility of each."""
    worst = 0.0
    for A in masking_patterns(d):
        if abs(np.linalg.det(A)) < 1e-9:
            raise AssertionError("masking pattern not invertible")
        worst = max(worst, float(np.linalg.norm(np.linalg.inv(A), 2)))
    return worst


def theoretical_constants(spec: TeacherSpec, n: int, delta: float):
    """Reference magnitudes (k_min, sigma_h_min, sigma_o_max, Delta) from
    the optimization theorem's constraint shapes."""
    if not (0 < delta < 1) or n < 1:
        raise ValueError("need n >= 1 and delta in (0, 1)")
    R, C, rho, r = spec.R, spec.C, spec.rho, spec.r
    k_min = 6144.0 * R**4 * math.log(24 * r / delta) / rho
    k = max(k_min, 1.0)
    sigma_h_min = 4200.0 * n**2 * C * R**3.5 * math.sqrt(r * k) / (delta * rho)
    sigma_o_max = 1.0 / (4 * k * R * sigma_h_min * math.log(6 * k / delta))
    delta_nbhd = delta * rho * sigma_h_min / (24 * n * k * C * R**3)
    return k_min, sigma_h_min, sigma_o_max, delta_nbhd


def practical_sigma_o(k: int, R: float, sigma_h: float, delta: float) -> float:
    """Harness surrogate sigma_o = 1 / (4 k R sigma_h log(12 k / delta))."""
    return 1.0 / (4 * k * R * sigma_h * math.log(12 * k / delta))


def pl_bound(delta: float, rho: float, n: int, r: int, C: float, R: float, sigma_h: float) -> float:
    """3e-11 * delta^2 rho^2 / (n^6 r^2 C^2 R^8) * sigma_h^2."""
    return 3e-11 * delta**2 * rho**2 / (n**6 * r**2 * C**2 * R**8) * sigma_h**2


def delta_neighborhood_radius(delta: float, rho: float, sigma_h: float, n: int, k: int, C: float, R: float) -> float:
    """Delta = delta rho sigma_h / (24 n k C R^3)."""
    return delta * rho * sigma_h / (24 * n * k * C * R**3)


def event_probability_bound(eps: float, R: float) -> float:
    """Floor eps / (512 R^4) on P[w in (sigma_h/R, 2 sigma_h/R), breakpoint
    in (a, a + eps)] for |a| <= R and eps <= R/6."""
    return eps / (512.0 * R**4)


def event_probability_mc(a: float, eps: float, R: float, sigma_h: float, trials: int, seed: int) -> float:
    """Monte-Carlo estimate of the breakpoint event probability."""
    rng = np.random.default_rng(seed)
    w = rng.normal(0, sigma_h, size=trials)
    b = rng.normal(0, sigma_h, size=trials)
    bp = -b / w
    hit = (w > sigma_h / R) & (w < 2 * sigma_h / R) & (bp > a) & (bp < a + eps)
    return float(np.mean(hit))
