"""Univariate depth-2 ReLU networks and their exact piecewise-linear structure.

A network of width k computes

    N(x) = sum_j v_j * max(0, w_j * x + b_j)

and is 2-homogeneous in its parameter vector theta = [w, b, v]: scaling
every coordinate by alpha > 0 scales the function by alpha^2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Hidden units with |w| at or below this are treated as constant
# contributions; they never produce a breakpoint.
DEAD_SLOPE = 1e-12

# Breakpoints closer than BREAKPOINT_MERGE_TOL * max(1, |domain|) are merged;
# adjacent pieces whose slopes agree to SLOPE_MERGE_TOL (relative) are fused.
BREAKPOINT_MERGE_TOL = 1e-10
SLOPE_MERGE_TOL = 1e-10


def _as_float_array(x, name):
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class Params:
    """Parameter vector theta = [w, b, v] of a width-k network."""

    w: np.ndarray
    b: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        w = _as_float_array(self.w, "w")
        b = _as_float_array(self.b, "b")
        v = _as_float_array(self.v, "v")
        if not (len(w) == len(b) == len(v)) or len(w) < 1:
            raise ValueError("w, b, v must share a common length k >= 1")
        for name, a in (("w", w), ("b", b), ("v", v)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def k(self) -> int:
        return len(self.w)

    def vector(self) -> np.ndarray:
        """Flat parameter vector in (w, b, v) order."""
        return np.concatenate([self.w, self.b, self.v])

    @staticmethod
    def from_vector(theta: np.ndarray) -> "Params":
        theta = np.asarray(theta, dtype=float)
        if theta.size % 3 != 0:
            raise ValueError("flat parameter vector length must be 3k")
        k = theta.size // 3
        return Params(theta[:k], theta[k : 2 * k], theta[2 * k :])

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector()))

    def to_json(self) -> str:
        return json.dumps(
            {"w": self.w.tolist(), "b": self.b.tolist(), "v": self.v.tolist(), "k": self.k}
        )

    @staticmethod
    def from_json(s: str) -> "Params":
        d = json.loads(s)
        p = Params(d["w"], d["b"], d["v"])
        if p.k != d.get("k", p.k):
            raise ValueError("width field inconsistent with arrays")
        return p


@dataclass(frozen=True)
class PiecewiseLinear:
    """Canonical continuous piecewise-linear function on a closed interval.

    ``breakpoints`` is strictly increasing with all points interior to
    ``domain``; ``slopes`` has one entry per piece (len(breakpoints) + 1).
    The function value is anchored at ``anchor`` (the left domain end).
    """

    breakpoints: np.ndarray
    slopes: np.ndarray
    anchor: float
    value_at_anchor: float
    domain: tuple[float, float]

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        sl = np.asarray(self.slopes, dtype=float)
        if len(sl) != len(bp) + 1:
            raise ValueError("need one slope per piece (breakpoints + 1)")
        if len(bp) > 1 and not np.all(np.diff(bp) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        bp.setflags(write=False)
        sl.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)

    @property
    def num_pieces(self) -> int:
        return len(self.slopes)

    def knot_values(self) -> np.ndarray:
        """Function values at the breakpoints (accumulated from the anchor)."""
        vals = np.empty(len(self.breakpoints))
        x_prev, y_prev = self.anchor, self.value_at_anchor
        for i, x in enumerate(self.breakpoints):
            y_prev += self.slopes[i] * (x - x_prev)
            vals[i] = y_prev
            x_prev = x
        return vals

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.breakpoints, x, side="right")
        knots = np.concatenate([[self.anchor], self.breakpoints])
        kvals = np.concatenate([[self.value_at_anchor], self.knot_values()])
        return kvals[idx] + self.slopes[idx] * (x - knots[idx])


def evaluate(p: Params, x) -> np.ndarray | float:
    """N(x) = sum_j v_j * max(0, w_j x + b_j); vectorized over x."""
    x = np.asarray(x, dtype=float)
    pre = np.multiply.outer(x, p.w) + p.b
    out = np.maximum(pre, 0.0) @ p.v
    return float(out) if out.ndim == 0 else out


def scale(p: Params, alpha: float) -> Params:
    """Return alpha * theta. evaluate(scale(p, a), x) == a^2 evaluate(p, x)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return Params(alpha * p.w, alpha * p.b, alpha * p.v)


def slope_at(p: Params, x) -> np.ndarray | float:
    """Derivative of the network at x (kinks resolved as sigma'(0)=0)."""
    x = np.asarray(x, dtype=float)
    pre = np.multiply.outer(x, p.w) + p.b
    out = (pre > 0.0) @ (p.v * p.w)
    return float(out) if out.ndim == 0 else out


def to_piecewise(p: Params, domain: tuple[float, float]) -> PiecewiseLinear:
    """Exact canonical piecewise-linear form of the network on ``domain``."""
    lo, hi = float(domain[0]), float(domain[1])
    if not lo < hi:
        raise ValueError("domain must be a nonempty interval")
    live = np.abs(p.w) > DEAD_SLOPE
    bp = -p.b[live] / p.w[live]
    bp = np.sort(bp[(bp > lo) & (bp < hi)])

    merge_tol = BREAKPOINT_MERGE_TOL * max(1.0, abs(hi - lo))
    merged = []
    for x in bp:
        if merged and x - merged[-1] <= merge_tol:
            # cluster representative: keep the first member
            continue
        merged.append(x)
    bp = np.asarray(merged)

    # slope of each candidate piece, read off at midpoints
    edges = np.concatenate([[lo], bp, [hi]])
    mids = 0.5 * (edges[:-1] + edges[1:])
    slopes = np.atleast_1d(slope_at(p, mids))

    # fuse adjacent pieces with equal slopes (relative tolerance)
    scale_ref = max(np.max(np.abs(slopes)), 1e-300)
    keep_bp, keep_slopes = [], [slopes[0]]
    for i in range(len(bp)):
        if abs(slopes[i + 1] - keep_slopes[-1]) <= SLOPE_MERGE_TOL * scale_ref:
            continue
        keep_bp.append(bp[i])
        keep_slopes.append(slopes[i + 1])
    return PiecewiseLinear(
        breakpoints=np.asarray(keep_bp),
        slopes=np.asarray(keep_slopes),
        anchor=lo,
        value_at_anchor=float(evaluate(p, lo)),
        domain=(lo, hi),
    )


def sign_changes(f: PiecewiseLinear, domain: tuple[float, float] | None = None,
                 zero_tol: float = 0.0) -> list[float]:
    """Locations where sign(f) changes, with the sign(0) = -1 convention.

    A strict crossing inside a piece is located exactly; a piece on which f
    is identically zero has sign -1, so a zero plateau flanked by positive
    values on a side contributes a change at that plateau endpoint.  An
    isolated zero touched between two positive pieces is not a change.
    """
    lo, hi = f.domain if domain is None else (float(domain[0]), float(domain[1]))
    edges = np.concatenate([[lo], f.breakpoints[(f.breakpoints > lo) & (f.breakpoints < hi)], [hi]])
    vals = np.asarray(f(edges), dtype=float)
    n_pieces = len(edges) - 1

    tol = zero_tol
    def z(y):  # treat tiny values as exact zeros
        return 0.0 if abs(y) <= tol else y

    # per-piece sign of sign(f) on the OPEN piece: +1, -1 (covers f<0 and f==0)
    # plus the crossing location if the sign is not constant on the piece
    changes: list[float] = []
    prev_sign = None
    for i in range(n_pieces):
        a, b = edges[i], edges[i + 1]
        ya, yb = z(vals[i]), z(vals[i + 1])
        if ya == 0.0 and yb == 0.0:
            piece_signs = [(-1, a)]
        elif ya * yb < 0.0:
            x0 = a + (b - a) * (-ya) / (yb - ya)
            piece_signs = [(1 if ya > 0 else -1, a), (1 if yb > 0 else -1, x0)]
        else:
            # constant strict sign in the interior (endpoint zeros are isolated)
            ref = ya if ya != 0.0 else yb
            piece_signs = [(1 if ref > 0 else -1, a)]
        for s, where in piece_signs:
            if prev_sign is not None and s != prev_sign:
                changes.append(float(where))
            prev_sign = s
    return changes
