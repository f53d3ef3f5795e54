"""Random initialization of networks and neuron geometry classification.

Hidden weights and biases are i.i.d. N(0, sigma_h^2), output weights
i.i.d. N(0, sigma_o^2).  The breakpoint -b/w of a freshly initialized
neuron follows a standard Cauchy law (ratio of independent centered
Gaussians), which drives the dormancy census.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .net import DEAD_SLOPE, Params
from .data import Dataset


@dataclass(frozen=True)
class InitConfig:
    sigma_h: float
    sigma_o: float
    k: int
    seed: int
    scheme: str = "gaussian"  # or "uniform" (no certified constants)

    def __post_init__(self):
        if self.sigma_h <= 0 or self.sigma_o <= 0 or self.k < 1:
            raise ValueError("invalid init config")


@dataclass(frozen=True)
class NeuronGeometry:
    breakpoint: float  # -b/w, or +-inf for dead slope
    orientation: str  # "opens-right" (w > 0) or "opens-left"
    active_on_all: bool
    dormant: bool


def sample_init(cfg: InitConfig) -> Params:
    rng = np.random.default_rng(cfg.seed)
    if cfg.scheme == "gaussian":
        w = rng.normal(0.0, cfg.sigma_h, size=cfg.k)
        b = rng.normal(0.0, cfg.sigma_h, size=cfg.k)
        v = rng.normal(0.0, cfg.sigma_o, size=cfg.k)
    elif cfg.scheme == "uniform":
        # robustness option; paper notes it works with different constants
        lim_h = np.sqrt(3.0) * cfg.sigma_h
        lim_o = np.sqrt(3.0) * cfg.sigma_o
        w = rng.uniform(-lim_h, lim_h, size=cfg.k)
        b = rng.uniform(-lim_h, lim_h, size=cfg.k)
        v = rng.uniform(-lim_o, lim_o, size=cfg.k)
    else:
        raise ValueError(f"unknown scheme {cfg.scheme!r}")
    return Params(w, b, v)


def breakpoints_of(p: Params) -> np.ndarray:
    """Per-neuron breakpoints -b/w; dead slopes map to signed infinity."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = -p.b / p.w
    dead = np.abs(p.w) <= DEAD_SLOPE
    bp[dead] = np.where(p.b[dead] >= 0, -np.inf, np.inf)
    return bp


def breakpoint_law_check(cfg: InitConfig, m: int) -> float:
    """KS statistic between the empirical law of -b/w and standard Cauchy."""
    if m < 1000:
        raise ValueError("need at least 1e3 samples")
    rng = np.random.default_rng(cfg.seed)
    w = rng.normal(0.0, cfg.sigma_h, size=m)
    b = rng.normal(0.0, cfg.sigma_h, size=m)
    return float(stats.kstest(-b / w, stats.cauchy.cdf).statistic)


def classify_neurons(p: Params, d: Dataset | None, support: tuple[float, float]) -> list[NeuronGeometry]:
    """Geometry of every hidden neuron w.r.t. a support interval.

    dormant := breakpoint outside the support and preactivation <= 0 on all
    of it; dead-slope neurons are dormant iff b <= 0.
    """
    lo, hi = float(support[0]), float(support[1])
    out = []
    bps = breakpoints_of(p)
    for j in range(p.k):
        w, b = float(p.w[j]), float(p.b[j])
        bp = float(bps[j])
        orientation = "opens-right" if w > 0 else "opens-left"
        if abs(w) <= DEAD_SLOPE:
            active_all = b > 0
            dormant = b <= 0
        else:
            # preactivation is monotone; check the endpoints
            ends = (w * lo + b, w * hi + b)
            active_all = min(ends) > 0
            dormant = (not (lo <= bp <= hi)) and max(ends) <= 0
        out.append(NeuronGeometry(bp, orientation, bool(active_all), bool(dormant)))
    return out


def dormant_count(p: Params, support: tuple[float, float] = (-1.0, 1.0)) -> int:
    return sum(g.dormant for g in classify_neurons(p, None, support))


def exact_dormancy_tail(k: int, p: float = 0.25) -> float:
    """P[Binomial(k, p) >= ceil(p*k)], computed exactly."""
    thresh = int(np.ceil(p * k))
    return float(stats.binom.sf(thresh - 1, k, p))
