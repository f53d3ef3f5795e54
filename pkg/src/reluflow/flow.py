"""Gradient-flow integration with activation-event handling.

Integrates d theta/dt = -grad L(theta) with an embedded Dormand-Prince 5(4)
pair (or fixed-step classical RK4).  Between kink events (a data point
crossing a neuron's activation boundary) the right-hand side is smooth;
events are located on each accepted step and the step is re-taken to land
on the crossing, so every step integrates a single smooth piece.

Because directional convergence is logarithmic in t, the stepper can
optionally advance the time-reparameterized flow d theta/ds = -grad L / L,
which follows the identical path; the true time t is carried as an extra
quadrature state with dt/ds = 1/L.  All reported channels use true t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .net import Params
from .data import Dataset
from .loss import (
    DEFAULT_POLICY,
    EXPONENTIAL,
    LossKind,
    SubgradientPolicy,
    empirical_loss,
    loss_gradient,
    margins,
    rescaled_direction,
    SLIDING_BAND,
)


@dataclass(frozen=True)
class FlowConfig:
    integrator: str = "adaptive-RK45"  # or "fixed-RK4"
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_time: float = 1e300
    loss_floor: float | None = None  # default 1e-8 / n
    direction_window: int = 8
    event_time_tol: float = 1e-12
    rescale_time: bool = True
    sliding_mode: bool = True  # Filippov selection on the kink band
    max_steps: int = 200_000
    fixed_step: float = 1e-3
    plateau_angle: float = 1e-4
    plateau_norm_growth: float = 10.0
    record_every: int = 1

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0 or self.max_time <= 0:
            raise ValueError("tolerances and horizon must be positive")


@dataclass
class Trajectory:
    """Recorded gradient-flow run.

    ``times``/``loss``/... are per-accepted-step channels; ``snapshots``
    is a decimated list of (t, Params) states including the endpoints.
    """

    times: np.ndarray
    loss: np.ndarray
    min_margin: np.ndarray
    normalized_margin: np.ndarray
    grad_norm: np.ndarray
    theta_norm: np.ndarray
    snapshots: list  # [(t, Params), ...]
    events: list  # [(kind, t), ...]
    path_length: float
    stop_reason: str
    kind: LossKind
    policy: SubgradientPolicy

    @property
    def final_params(self) -> Params:
        return self.snapshots[-1][1]

    @property
    def initial_params(self) -> Params:
        return self.snapshots[0][1]

    def directions(self):
        """Unit parameter vectors of the decimated snapshots."""
        out = []
        for t, p in self.snapshots:
            v = p.vector()
            nrm = np.linalg.norm(v)
            out.append((t, v / nrm if nrm > 0 else v))
        return out

    def summary(self) -> dict:
        return {
            "steps": int(len(self.times)),
            "t_final": float(self.times[-1]),
            "loss_final": float(self.loss[-1]),
            "min_margin_final": float(self.min_margin[-1]),
            "theta_norm_final": float(self.theta_norm[-1]),
            "path_length": float(self.path_length),
            "stop_reason": self.stop_reason,
            "events": [(k, float(t)) for k, t in self.events],
            "plateau_proxy": "angular residual < {:g} over a {:g}x norm-growth window "
                             "(finite-time proxy for directional convergence)".format(1e-4, 10.0),
        }

    def to_jsonl(self) -> str:
        lines = []
        for i in range(len(self.times)):
            lines.append(json.dumps({
                "t": float(self.times[i]),
                "loss": float(self.loss[i]),
                "min_margin": float(self.min_margin[i]),
                "normalized_margin": float(self.normalized_margin[i]),
                "grad_norm": float(self.grad_norm[i]),
                "theta_norm": float(self.theta_norm[i]),
            }))
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["t,loss,min_margin,theta_norm"]
        for i in range(len(self.times)):
            rows.append(f"{self.times[i]!r},{self.loss[i]!r},{self.min_margin[i]!r},{self.theta_norm[i]!r}")
        return "\n".join(rows) + "\n"


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class _System:
    """RHS of the (optionally time-rescaled) subgradient flow."""

    def __init__(self, d: Dataset, kind: LossKind, policy: SubgradientPolicy, rescale: bool,
                 sliding: bool = False):
        self.d = d
        self.kind = kind
        self.policy = policy
        self.rescale = rescale
        self.sliding = sliding

    def loss_of(self, theta: np.ndarray) -> float:
        return empirical_loss(Params.from_vector(theta), self.d, self.kind)

    def rhs(self, theta: np.ndarray):
        """Return (dtheta, dt_true, loss, grad_norm).

        A non-finite stage point (an overshooting trial stage) yields NaNs
        so the step is rejected by error control instead of raising."""
        if not np.all(np.isfinite(theta)):
            bad = np.full_like(theta, np.nan)
            return bad, np.nan, np.nan, np.nan
        p = Params.from_vector(theta)
        if self.rescale:
            direction, L, gn = rescaled_direction(p, self.d, self.kind, self.policy, self.sliding)
            # 1/L can overflow/divide-by-zero once the loss underflows; the
            # run stops at loss_floor long before dt accuracy matters there
            return direction, 1.0 / max(L, np.finfo(float).tiny), L, gn
        g = loss_gradient(p, self.d, self.kind, self.policy, self.sliding).vector()
        L = empirical_loss(p, self.d, self.kind)
        return -g, 1.0, L, float(np.linalg.norm(g))

    def preactivations(self, theta: np.ndarray) -> np.ndarray:
        p = Params.from_vector(theta)
        return np.multiply.outer(self.d.xs, p.w) + p.b

    def pre_sign(self, theta: np.ndarray) -> np.ndarray:
        """Preactivation signs, zeroed on the sliding band so that riding a
        kink does not register as a crossing every step."""
        p = Params.from_vector(theta)
        pre = np.multiply.outer(self.d.xs, p.w) + p.b
        if not self.sliding:
            return np.sign(pre)
        eps = SLIDING_BAND * (np.abs(np.multiply.outer(self.d.xs, p.w)) + np.abs(p.b) + 1e-300)
        out = np.sign(pre)
        out[np.abs(pre) <= eps] = 0.0
        return out


def _dp_step(sys: _System, theta, h, f0):
    """One DP45 step; returns (theta5, err_vec, f_end, t_incr5)."""
    k = [f0[0]]
    tk = [f0[1]]
    fi = f0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, 7):
            a = _DP_A[i]
            dy = sum(aij * kj for aij, kj in zip(a, k))
            fi = sys.rhs(theta + h * dy)
            k.append(fi[0])
            tk.append(fi[1])
        y5 = theta + h * sum(b * kj for b, kj in zip(_DP_B5, k))
        y4 = theta + h * sum(b * kj for b, kj in zip(_DP_B4, k))
        t5 = h * sum(b * tj for b, tj in zip(_DP_B5, tk))
    if not np.isfinite(t5):
        t5 = 1e308  # true time beyond float range; channels saturate
    # FSAL: the 7th stage sits at y5, so fi doubles as the RHS there
    return y5, y5 - y4, fi, t5


def integrate(
    p0: Params,
    d: Dataset,
    kind: LossKind = EXPONENTIAL,
    cfg: FlowConfig = FlowConfig(),
    policy: SubgradientPolicy = DEFAULT_POLICY,
) -> Trajectory:
    """Integrate the subgradient flow from p0 until the horizon, the loss
    floor, a direction plateau, or the step budget."""
    theta = p0.vector()
    if not np.all(np.isfinite(theta)):
        raise ValueError("initial parameters must be finite")
    sys = _System(d, kind, policy, cfg.rescale_time, cfg.sliding_mode)
    loss_floor = cfg.loss_floor if cfg.loss_floor is not None else 1e-8 / d.n

    t_true = 0.0
    s_total = 0.0  # integration-variable progress; equals t when not rescaling
    f0 = sys.rhs(theta)
    pre_sign = sys.pre_sign(theta)

    ch: dict[str, list] = {c: [] for c in ("t", "loss", "mm", "nm", "gn", "tn")}
    snapshots: list = []
    events: list = []
    path_length = 0.0
    snap_stride = 1

    def record(t, th, L, gn, force=False):
        p = Params.from_vector(th)
        mm = float(np.min(margins(p, d)))
        nrm = float(np.linalg.norm(th))
        ch["t"].append(t)
        ch["loss"].append(L)
        ch["mm"].append(mm)
        ch["nm"].append(mm / nrm**2 if nrm > 0 else 0.0)
        ch["gn"].append(gn)
        ch["tn"].append(nrm)
        nonlocal snap_stride
        if force or (len(ch["t"]) - 1) % snap_stride == 0:
            snapshots.append((t, p))
            if len(snapshots) > 2400:
                # geometric thinning; always keep the first and last
                del snapshots[1:-1:2]
                snap_stride *= 2

    L0, gn0 = f0[2], f0[3]
    record(0.0, theta, L0, gn0, force=True)
    crossed = {"1/n": L0 < 1.0 / d.n, "1/(2n)": L0 < 1.0 / (2 * d.n)}

    adaptive = cfg.integrator == "adaptive-RK45"
    if not adaptive and cfg.integrator != "fixed-RK4":
        raise ValueError(f"unknown integrator {cfg.integrator!r}")
    h = cfg.fixed_step if not adaptive else _initial_step(sys, theta, f0, cfg)
    stop = "max_steps"

    nsteps = 0
    while nsteps < cfg.max_steps:
        nsteps += 1
        if not np.all(np.isfinite(theta)):
            stop = "non-finite state"
            break

        # land on the horizon instead of overshooting: exact in plain time,
        # via the quadrature estimate dt = ds / L in rescaled time
        remaining = cfg.max_time - t_true
        h_cap = remaining if not cfg.rescale_time else remaining * max(f0[2], np.finfo(float).tiny)
        if np.isfinite(h_cap) and h_cap < h:
            h = max(h_cap, 1e-15 * max(1.0, abs(s_total)))

        if adaptive:
            y_new, err, f_end, dt5 = _dp_step(sys, theta, h, f0)
            err_norm = _error_norm(theta, y_new, err, cfg)
            if not np.isfinite(err_norm):
                h *= 0.25
                if h < 1e-15 * max(1.0, abs(s_total)):
                    stop = "step underflow"
                    break
                continue
            if err_norm > 1.0:
                h *= max(0.2, 0.9 * err_norm ** -0.2)
                continue
        else:
            y_new, f_end, dt5 = _rk4_step(sys, theta, h, f0)
            err_norm = 0.0
        h_used = h

        # event location: any preactivation sign flip across the step
        new_sign = sys.pre_sign(y_new)
        flips = (pre_sign * new_sign) < 0
        event_hit = bool(flips.any())
        if event_hit:
            frac = _first_crossing_fraction(sys, theta, y_new, f0[0], f_end[0], h, flips)
            if frac is not None and frac < 1.0 - cfg.event_time_tol:
                h_ev = max(frac * h, 1e-15 * max(1.0, abs(s_total)))
                if adaptive:
                    y_ev, err_ev, f_ev, dt_ev = _dp_step(sys, theta, h_ev, f0)
                    en_ev = _error_norm(theta, y_ev, err_ev, cfg)
                    # only land on the event if the shorter step is itself
                    # acceptable; otherwise keep the full step (the crossing
                    # is handled by the subgradient policy anyway)
                    if np.isfinite(en_ev) and en_ev <= 1.0:
                        y_new, f_end, dt5 = y_ev, f_ev, dt_ev
                        err_norm, h_used = en_ev, h_ev
                else:
                    y_new, f_end, dt5 = _rk4_step(sys, theta, h_ev, f0)
                    h_used = h_ev

        if adaptive:
            # flow guards on the final candidate: the exact flow cannot
            # increase the loss, and a trustworthy step should not teleport
            # or corrupt the state
            L_probe = f_end[2]
            theta_ref = float(np.linalg.norm(theta))
            bad = (not np.all(np.isfinite(y_new))
                   or not np.isfinite(L_probe)
                   or L_probe > f0[2] * (1 + 10 * cfg.rel_tol) + 10 * cfg.abs_tol
                   or float(np.linalg.norm(y_new - theta)) > 0.5 * (theta_ref + 1.0))
            if bad:
                h = h_used * 0.25
                if h < 1e-15 * max(1.0, abs(s_total)):
                    stop = "step underflow"
                    break
                continue

        # accept
        if event_hit:
            events.append(("kink-crossing", t_true + dt5))
        path_length += float(np.linalg.norm(y_new - theta))
        with np.errstate(over="ignore"):
            t_true = float(min(t_true + dt5, 1e308))
        s_total += h_used
        pre_sign = new_sign if not event_hit else sys.pre_sign(y_new)
        theta = y_new
        f0 = f_end if adaptive else sys.rhs(theta)
        L, gn = (f0[2], f0[3])
        record(t_true, theta, L, gn)

        for key, thresh in (("1/n", 1.0 / d.n), ("1/(2n)", 1.0 / (2 * d.n))):
            if not crossed[key] and L < thresh:
                crossed[key] = True
                events.append((f"loss<{key}", t_true))

        if L <= loss_floor:
            stop = "loss_floor"
            break
        if t_true >= cfg.max_time:
            stop = "horizon"
            break
        if (nsteps % 16 == 0 and crossed["1/n"]
                and _plateau_reached(snapshots, cfg)):
            events.append(("plateau", t_true))
            stop = "plateau"
            break

        if adaptive:
            h = h_used * min(5.0, max(0.2, 0.9 * (err_norm + 1e-16) ** -0.2))
            # keep the next trial displacement within the flow-guard budget so
            # stages cannot overflow on near-stationary stretches
            dn = float(np.linalg.norm(f0[0]))
            if dn > 0:
                h = min(h, 0.5 * (float(np.linalg.norm(theta)) + 1.0) / dn)

    if snapshots[-1][0] != t_true:
        snapshots.append((t_true, Params.from_vector(theta)))

    return Trajectory(
        times=np.asarray(ch["t"]),
        loss=np.asarray(ch["loss"]),
        min_margin=np.asarray(ch["mm"]),
        normalized_margin=np.asarray(ch["nm"]),
        grad_norm=np.asarray(ch["gn"]),
        theta_norm=np.asarray(ch["tn"]),
        snapshots=snapshots,
        events=events,
        path_length=path_length,
        stop_reason=stop,
        kind=kind,
        policy=policy,
    )


def _error_norm(theta, y_new, err, cfg: FlowConfig) -> float:
    scale_v = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(theta), np.abs(y_new))
    with np.errstate(invalid="ignore", over="ignore"):
        return float(np.sqrt(np.mean((err / scale_v) ** 2)))


def _initial_step(sys, theta, f0, cfg):
    scale_ref = cfg.abs_tol + cfg.rel_tol * float(np.linalg.norm(theta))
    d0 = float(np.linalg.norm(f0[0]))
    return min(1e-2, scale_ref / d0) if d0 > 0 else 1e-6


def _rk4_step(sys, theta, h, f0):
    k1, t1 = f0[0], f0[1]
    f2 = sys.rhs(theta + 0.5 * h * k1)
    f3 = sys.rhs(theta + 0.5 * h * f2[0])
    f4 = sys.rhs(theta + h * f3[0])
    y = theta + (h / 6.0) * (k1 + 2 * f2[0] + 2 * f3[0] + f4[0])
    dt = (h / 6.0) * (t1 + 2 * f2[1] + 2 * f3[1] + f4[1])
    return y, sys.rhs(y), dt


def _first_crossing_fraction(sys, y0, y1, fy0, fy1, h, flips):
    """Earliest zero of a flipped preactivation along the step, as a
    fraction of the step, via cubic Hermite interpolation refined by
    bisection to ~1e-12 relative accuracy in the step fraction."""
    idx = np.argwhere(flips)
    xs = sys.d.xs
    k = len(y0) // 3

    def pre_of(y, i, j):
        return y[j] * xs[i] + y[k + j]

    def dpre_of(f, i, j):
        return f[j] * xs[i] + f[k + j]

    best = None
    for i, j in idx:
        p0, p1 = pre_of(y0, i, j), pre_of(y1, i, j)
        d0, d1 = h * dpre_of(fy0, i, j), h * dpre_of(fy1, i, j)
        # cubic Hermite on [0, 1]; bisect on the sign of the interpolant
        def herm(s):
            s2, s3 = s * s, s * s * s
            return ((2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * d0
                    + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * d1)
        lo, hi_ = 0.0, 1.0
        flo = p0
        for _ in range(50):
            mid = 0.5 * (lo + hi_)
            fm = herm(mid)
            if flo * fm <= 0:
                hi_ = mid
            else:
                lo, flo = mid, fm
            if hi_ - lo < 1e-13:
                break
        frac = 0.5 * (lo + hi_)
        if best is None or frac < best:
            best = frac
    if best is not None and best < 1e-13:
        return None  # crossing at the very start; take the step as-is
    return best


def _plateau_reached(snapshots, cfg: FlowConfig) -> bool:
    if len(snapshots) < cfg.direction_window:
        return False
    t_end, p_end = snapshots[-1]
    v_end = p_end.vector()
    n_end = np.linalg.norm(v_end)
    if n_end <= 0:
        return False
    window = []
    grew = False
    for t, p in reversed(snapshots):
        v = p.vector()
        nrm = np.linalg.norm(v)
        if nrm < n_end / cfg.plateau_norm_growth:
            grew = True  # norm actually spans the 10x factor
            break
        window.append(v / nrm)
    if len(window) < cfg.direction_window or not grew:
        return False
    if len(window) > 96:  # subsample; the residual is a max over pairs
        idx = np.linspace(0, len(window) - 1, 96).astype(int)
        window = [window[i] for i in idx]
    W = np.asarray(window)
    G = np.clip(W @ W.T, -1.0, 1.0)
    residual = float(np.max(np.arccos(G)))
    return residual < cfg.plateau_angle


def direction_of(tr: Trajectory, window: int | None = None):
    """Final unit direction and the plateau residual (max pairwise angular
    distance) over the trailing window of snapshots."""
    dirs = tr.directions()
    w = window or 8
    if len(dirs) < 1:
        raise ValueError("empty trajectory")
    tail = [v for _, v in dirs[-w:]]
    W = np.asarray(tail)
    G = np.clip(W @ W.T, -1.0, 1.0)
    residual = float(np.max(np.arccos(G))) if len(tail) > 1 else 0.0
    return dirs[-1][1], residual


def pl_diagnostic(tr: Trajectory, d: Dataset):
    """Per-snapshot PL ratio 0.5 ||grad L||^2 / L and the empirical PL
    constant lambda-hat = min ratio over the region where L >= 1/(2n)."""
    with np.errstate(over="ignore"):
        ratio = 0.5 * tr.grad_norm**2 / tr.loss
    mask = tr.loss >= 1.0 / (2 * d.n)
    lam = float(np.min(ratio[mask])) if mask.any() else float("nan")
    return list(zip(tr.times, ratio)), lam


def trajectory_length(tr: Trajectory):
    """Accumulated path length and the maximum per-neuron hidden-layer
    displacement from initialization over the decimated snapshots."""
    p0 = tr.initial_params
    hidden0 = np.stack([p0.w, p0.b], axis=1)
    max_disp = 0.0
    for _, p in tr.snapshots:
        hidden = np.stack([p.w, p.b], axis=1)
        disp = float(np.max(np.linalg.norm(hidden - hidden0, axis=1)))
        max_disp = max(max_disp, disp)
    return tr.path_length, max_disp
