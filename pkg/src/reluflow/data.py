"""Teacher networks, target sign functions, data distributions and samples.

Labels come from y = sign(N*(x)) with the sign(z) = 1 if z > 0, else -1
convention.  The canonical teacher family realizes the alternating target

    f_r(x) = sign(sin(0.5 * pi * (r+1) * (x+1)))

on [-1, 1] with sign changes at x_m = -1 + 2m/(r+1), m = 1..r, using a
width-r ReLU network.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .net import Params, evaluate, sign_changes, to_piecewise


def sign(z):
    """sign(z) = 1 if z > 0 and -1 otherwise (note: sign(0) = -1)."""
    z = np.asarray(z)
    out = np.where(z > 0, 1, -1)
    return int(out) if out.ndim == 0 else out


def fr(x, r: int):
    """The target f_r(x) = sign(sin(0.5 pi (r+1)(x+1))) on [-1, 1]."""
    return sign(np.sin(0.5 * np.pi * (r + 1) * (np.asarray(x, dtype=float) + 1.0)))


@dataclass(frozen=True)
class TeacherSpec:
    """Width-r teacher with its Assumption-style data constants.

    R bounds the support, C bounds the density, rho is the length of the
    shortest constant-sign interval of sign(N*) inside [-R, R], r the number
    of sign changes.
    """

    teacher: Params
    R: float
    C: float
    rho: float
    r: int

    def __post_init__(self):
        if self.R < 1 or self.C < 1.0 / (2 * self.R) or self.rho <= 0:
            raise ValueError("invalid teacher constants")

    def sign_change_points(self) -> list[float]:
        f = to_piecewise(self.teacher, (-self.R, self.R))
        return sign_changes(f, zero_tol=1e-12)

    def to_json(self) -> str:
        return json.dumps(
            {
                "teacher": json.loads(self.teacher.to_json()),
                "R": self.R,
                "C": self.C,
                "rho": self.rho,
                "r": self.r,
            }
        )


@dataclass(frozen=True)
class Dataset:
    """Sorted labeled sample {(x_i, y_i)} with x strictly increasing."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=int)
        if xs.ndim != 1 or len(xs) < 1 or xs.shape != ys.shape:
            raise ValueError("xs and ys must be matching nonempty 1-d arrays")
        if len(xs) > 1 and not np.all(np.diff(xs) > 0):
            raise ValueError("xs must be strictly increasing")
        if not np.all(np.abs(ys) == 1):
            raise ValueError("labels must be in {-1, +1}")
        xs.setflags(write=False)
        ys.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return len(self.xs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["x", "y"])
        for x, y in zip(self.xs, self.ys):
            w.writerow([repr(float(x)), int(y)])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        xs = [float(r[0]) for r in rows[1:]]
        ys = [int(r[1]) for r in rows[1:]]
        return Dataset(np.asarray(xs), np.asarray(ys))

    def to_json(self) -> str:
        return json.dumps({"x": self.xs.tolist(), "y": self.ys.tolist(), "n": self.n})


def make_fr_teacher(r: int) -> TeacherSpec:
    """Width-r ReLU teacher whose sign on [-1, 1] equals f_r.

    Construction: one left-opening unit carries the leftmost positive
    segment and dies at x_1; one unit rises at x_2; the remaining r-2
    units alternate with coefficients -+2/D at the midpoints of
    (x_m, x_{m+1}), m = 2..r-1, so every later crossing lands exactly on
    x_m.  Amplitude is normalized to max |N*| = 1 on [-1, 1].
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    D = 2.0 / (r + 1)
    xm = [-1.0 + D * m for m in range(1, r + 1)]
    a = 1.0 / D
    w, b, v = [-1.0], [xm[0]], [a]
    if r >= 2:
        w.append(1.0)
        b.append(-xm[1])
        v.append(a)
    for m in range(2, r):
        t = 0.5 * (xm[m - 1] + xm[m])
        w.append(1.0)
        b.append(-t)
        v.append(2.0 * a if m % 2 == 1 else -2.0 * a)
    teacher = Params(np.asarray(w), np.asarray(b), np.asarray(v))
    return TeacherSpec(teacher=teacher, R=1.0, C=0.5, rho=D, r=r)


@dataclass(frozen=True)
class PiecewiseDensity:
    """Density given as (sub-interval, weight) pairs, normalized internally."""

    pieces: tuple  # ((lo, hi, weight), ...)

    def normalized(self):
        total = sum(wt for _, _, wt in self.pieces)
        if total <= 0:
            raise ValueError("weights must have positive total")
        return [(lo, hi, wt / total / (hi - lo)) for lo, hi, wt in self.pieces]

    def max_density(self) -> float:
        return max(h for _, _, h in self.normalized())


def _density_of(distribution, spec: TeacherSpec):
    """Return (sampler(rng, n), density pieces [(lo, hi, height)])."""
    R = spec.R
    if distribution == "uniform":
        height = 1.0 / (2 * R)
        return (lambda rng, n: rng.uniform(-R, R, size=n), [(-R, R, height)])
    if distribution == "truncated-gaussian":
        # std R/2, truncated to [-R, R]; density peak < 1/R
        from scipy import stats

        sd = R / 2.0
        dist = stats.truncnorm(-R / sd, R / sd, loc=0.0, scale=sd)
        return (lambda rng, n: dist.rvs(size=n, random_state=rng), dist)
    if isinstance(distribution, PiecewiseDensity):
        pieces = distribution.normalized()
        lows = np.array([p[0] for p in pieces])
        highs = np.array([p[1] for p in pieces])
        probs = np.array([(p[1] - p[0]) * p[2] for p in pieces])
        probs = probs / probs.sum()

        def sampler(rng, n):
            idx = rng.choice(len(pieces), size=n, p=probs)
            return rng.uniform(lows[idx], highs[idx])

        return sampler, pieces
    raise ValueError(f"unknown distribution: {distribution!r}")


def sample_dataset(spec: TeacherSpec, distribution, n: int, seed: int) -> Dataset:
    """n i.i.d. draws from the distribution, sorted and teacher-labeled.

    Draws colliding (in float) with a sign-change point of the teacher are
    resampled, up to 100 retries per slot.
    """
    if n < 1:
        raise ValueError("n must be positive")
    sampler, density = _density_of(distribution, spec)
    if distribution == "uniform":
        peak = 1.0 / (2 * spec.R)
    elif isinstance(distribution, PiecewiseDensity):
        peak = distribution.max_density()
    else:
        peak = None
    if peak is not None and peak > spec.C * (1 + 1e-12):
        raise ValueError("density exceeds the C bound of the teacher spec")

    changes = np.asarray(spec.sign_change_points())
    rng = np.random.default_rng(seed)
    xs = np.asarray(sampler(rng, n), dtype=float)
    for _ in range(100):
        bad = np.zeros(len(xs), dtype=bool)
        if len(changes):
            bad = np.min(np.abs(xs[:, None] - changes[None, :]), axis=1) == 0.0
        if not bad.any():
            break
        xs[bad] = sampler(rng, int(bad.sum()))
    else:
        raise RuntimeError("could not avoid sign-change collisions")

    xs = np.sort(xs)
    ys = sign(evaluate(spec.teacher, xs))
    return Dataset(xs, ys)


def interval_structure(d: Dataset):
    """Label-switch indices I, the gap gamma at switches, and the
    overlapping constant-label index ranges I_j = (i_{j-1}, i_j + 1).

    Returns (sign_change_indices, gamma, constant_intervals) where indices
    are 1-based positions i with y_i != y_{i+1} (matching x_i / x_{i+1}
    pairs) and constant_intervals are (start, stop) 0-based half-open index
    ranges covering the j-th constant block extended by one point per side.
    """
    ys = d.ys
    switch = np.nonzero(ys[:-1] != ys[1:])[0]  # 0-based: y[i] != y[i+1]
    I = [int(i) + 1 for i in switch]
    if len(I) == 0:
        gamma = float("inf")
    else:
        gamma = float(min(d.xs[i] - d.xs[i - 1] for i in I))
    # I_j spans from the last index of the previous block to the first of
    # the next block, inclusive (the paper's overlapping intervals)
    bounds = [0] + [i for i in I] + [d.n]
    intervals = []
    for j in range(len(bounds) - 1):
        start = bounds[j] - 1 if j > 0 else 0
        stop = min(bounds[j + 1] + 1, d.n)
        intervals.append((start, stop))
    return I, gamma, intervals


def interval_x_ranges(d: Dataset, spec: TeacherSpec | None = None):
    """Open x-intervals I_j = (x_{i_{j-1}}, x_{i_j + 1}) of constant label,
    with the outer endpoints replaced by -R / R (or the extreme data points
    when no spec is given)."""
    I, _, _ = interval_structure(d)
    R = spec.R if spec is not None else max(abs(d.xs[0]), abs(d.xs[-1]))
    left = [-R] + [float(d.xs[i - 1]) for i in I]
    right = [float(d.xs[i]) for i in I] + [R]
    return list(zip(left, right))
