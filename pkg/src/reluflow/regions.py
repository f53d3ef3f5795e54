"""Linear-region counting and activation-point structure of trained nets.

The headline bound: a network at a KKT point of the max-margin problem on
data with r label switches has at most 32r + 67 linear regions.  Counting
runs on a domain slightly exceeding the data support; beyond the outermost
activation point the function is affine, so this captures the count on all
of the real line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .net import DEAD_SLOPE, Params, to_piecewise
from .data import Dataset
from .loss import margins

# slope differences at or below this fraction of the max slope are float
# noise, not region boundaries
SPURIOUS_SLOPE_FRACTION = 1e-8


def region_bound(r: int) -> int:
    return 32 * r + 67


@dataclass(frozen=True)
class RegionReport:
    region_count: int
    boundaries: np.ndarray  # non-spurious boundaries
    classification: tuple  # per boundary: "derivative-increases"/"derivative-decreases"
    spurious: np.ndarray  # suppressed near-equal-slope breakpoints
    domain: tuple
    suppression_threshold: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "region_count": self.region_count,
                "boundaries": self.boundaries.tolist(),
                "classification": list(self.classification),
                "spurious": self.spurious.tolist(),
                "domain": list(self.domain),
                "suppression_threshold": self.suppression_threshold,
            }
        )


def count_regions(p: Params, domain: tuple[float, float]) -> RegionReport:
    """Canonical piece count over the domain with spurious-boundary
    suppression and per-boundary derivative classification."""
    f = to_piecewise(p, domain)
    slopes = f.slopes
    max_slope = float(np.max(np.abs(slopes))) if len(slopes) else 0.0
    thresh = SPURIOUS_SLOPE_FRACTION * max_slope

    boundaries, classes, spurious = [], [], []
    cur = slopes[0]
    for i, x in enumerate(f.breakpoints):
        nxt = slopes[i + 1]
        if abs(nxt - cur) <= thresh:
            spurious.append(x)
            continue
        boundaries.append(x)
        classes.append("derivative-increases" if nxt > cur else "derivative-decreases")
        cur = nxt
    return RegionReport(
        region_count=len(boundaries) + 1,
        boundaries=np.asarray(boundaries),
        classification=tuple(classes),
        spurious=np.asarray(spurious),
        domain=(float(domain[0]), float(domain[1])),
        suppression_threshold=thresh,
    )


def counting_domain(R: float) -> tuple[float, float]:
    return (-R - 1.0, R + 1.0)


def activation_points(p: Params) -> np.ndarray:
    """Finite breakpoints -b_j/w_j of live neurons, sorted."""
    live = np.abs(p.w) > DEAD_SLOPE
    return np.sort(-p.b[live] / p.w[live])


def activation_points_per_interval(
    p: Params, d: Dataset, margin_tolerance: float = 1e-3
):
    """Counts of activation points strictly between consecutive margin-1
    data points, plus the two outer unbounded intervals.

    The point must be margin-1 normalized; margin-1 points are those with
    y_i Phi <= 1 + margin_tolerance.
    """
    q = margins(p, d)
    anchors = d.xs[q <= 1.0 + margin_tolerance]
    pts = activation_points(p)
    out = {}
    if len(anchors) == 0:
        out[("-inf", "inf")] = len(pts)
        return out
    out[("-inf", float(anchors[0]))] = int(np.sum(pts < anchors[0]))
    for a, b in zip(anchors[:-1], anchors[1:]):
        out[(float(a), float(b))] = int(np.sum((pts > a) & (pts < b)))
    out[(float(anchors[-1]), "inf")] = int(np.sum(pts > anchors[-1]))
    return out


def region_bound_check(report: RegionReport, r: int):
    """Pass iff region_count <= 32r + 67; returns (verdict, slack)."""
    bound = region_bound(r)
    return report.region_count <= bound, bound - report.region_count
