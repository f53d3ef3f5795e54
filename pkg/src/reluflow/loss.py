"""Exponential/logistic losses, empirical and population objectives, and
Clarke subgradients of the training loss.

The empirical objective is L(theta) = (1/n) sum_i l(y_i * N(x_i)); its
Clarke subgradient element is selected by a policy assigning sigma'(0) a
fixed value in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .net import Params, evaluate, to_piecewise
from .data import Dataset, TeacherSpec, PiecewiseDensity, sign

_EXP_CLIP = 700.0  # exp argument guard; margins are clipped before exp


@dataclass(frozen=True)
class LossKind:
    kind: str  # "exponential" or "logistic"

    def __post_init__(self):
        if self.kind not in ("exponential", "logistic"):
            raise ValueError("kind must be 'exponential' or 'logistic'")

    def value(self, q):
        q = np.asarray(q, dtype=float)
        if self.kind == "exponential":
            return np.exp(np.clip(-q, None, _EXP_CLIP))
        # stable log(1 + e^{-q})
        return np.logaddexp(0.0, -q)

    def dvalue(self, q):
        """l'(q); strictly negative for both losses."""
        q = np.asarray(q, dtype=float)
        if self.kind == "exponential":
            return -np.exp(np.clip(-q, None, _EXP_CLIP))
        # -1 / (1 + e^q), stably
        return -np.exp(-np.logaddexp(0.0, q))

    def at_zero(self) -> float:
        return float(self.value(0.0))


EXPONENTIAL = LossKind("exponential")
LOGISTIC = LossKind("logistic")


@dataclass(frozen=True)
class SubgradientPolicy:
    """Value assigned to sigma' at exactly zero preactivation."""

    kink_value: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.kink_value <= 1.0:
            raise ValueError("kink_value must lie in [0, 1]")


DEFAULT_POLICY = SubgradientPolicy(0.0)

# relative half-width of the activation band |w_j x_i + b_j| <= eps treated
# as "on the kink" by the sliding-mode subgradient selection
SLIDING_BAND = 1e-8


def sliding_sigma(pre: np.ndarray, w: np.ndarray, b: np.ndarray, xs: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """sigma' matrix with a Filippov sliding-mode selection on the kink band.

    When a data point rides a neuron's activation boundary the flow is a
    differential inclusion whose solution slides along the boundary.  For
    each (i, j) with |w_j x_i + b_j| inside the band, sigma'_{ij} is chosen
    in [0, 1] so that the boundary-normal velocity x_i w_j-dot + b_j-dot
    vanishes; off the band sigma' is the ordinary 0/1 indicator.  ``coef``
    holds the per-example weights of the parameter velocity
    (w_j-dot = v_j sum_i coef_i sigma'_{ij} x_i, likewise for b).
    """
    eps = SLIDING_BAND * (np.abs(np.multiply.outer(xs, w)) + np.abs(b) + 1e-300)
    sig = (pre > eps).astype(float)
    band = np.abs(pre) <= eps
    if band.any():
        for j in np.nonzero(band.any(axis=0))[0]:
            idx = np.nonzero(band[:, j])[0]
            K = np.outer(xs, xs[idx]) + 1.0  # K[a, t] = x_a x_{idx[t]} + 1
            rhs = -(coef * sig[:, j]) @ K
            M = K[idx, :].T * coef[idx][None, :]
            alpha, *_ = np.linalg.lstsq(M, rhs, rcond=None)
            sig[idx, j] = np.clip(alpha, 0.0, 1.0)
    return sig


def margins(p: Params, d: Dataset) -> np.ndarray:
    """Per-example margins q_i = y_i * N(x_i)."""
    return d.ys * evaluate(p, d.xs)


def empirical_loss(p: Params, d: Dataset, kind: LossKind = EXPONENTIAL) -> float:
    return float(np.mean(kind.value(margins(p, d))))


def loss_gradient(
    p: Params,
    d: Dataset,
    kind: LossKind = EXPONENTIAL,
    policy: SubgradientPolicy = DEFAULT_POLICY,
    sliding: bool = False,
) -> Params:
    """Selected Clarke subgradient of the empirical loss, Params-shaped.

    dL/dw_j = (1/n) sum_i l'(y_i N(x_i)) y_i v_j sigma'_{ij} x_i, with the
    b-component dropping x_i and the v-component using sigma(w_j x_i + b_j).
    """
    x, y = d.xs, d.ys
    pre = np.multiply.outer(x, p.w) + p.b  # (n, k)
    act = np.maximum(pre, 0.0)
    q = y * (act @ p.v)
    coef = kind.dvalue(q) * y / d.n  # (n,)
    if sliding:
        sig = sliding_sigma(pre, p.w, p.b, x, coef)
    else:
        sig = (pre > 0.0).astype(float)
        if policy.kink_value != 0.0:
            sig[pre == 0.0] = policy.kink_value
    gw = p.v * (sig.T @ (coef * x))
    gb = p.v * (sig.T @ coef)
    gv = act.T @ coef
    return Params(gw, gb, gv)


def gradient_norm(p, d, kind=EXPONENTIAL, policy=DEFAULT_POLICY) -> float:
    return loss_gradient(p, d, kind, policy).norm()


def rescaled_direction(
    p: Params,
    d: Dataset,
    kind: LossKind = EXPONENTIAL,
    policy: SubgradientPolicy = DEFAULT_POLICY,
    sliding: bool = False,
):
    """Stable evaluation of (-grad L / L, L, ||grad L||).

    For the exponential loss -grad L / L is a softmax-weighted combination
    of the per-example margin gradients, which stays finite even when raw
    per-example losses overflow.  With ``sliding`` the kink band uses the
    Filippov selection of ``sliding_sigma``.
    """
    x, y = d.xs, d.ys
    pre = np.multiply.outer(x, p.w) + p.b
    act = np.maximum(pre, 0.0)
    q = y * (act @ p.v)

    if kind.kind == "exponential":
        qmin = float(np.min(q))
        wts = np.exp(-(q - qmin))
        Z = float(np.sum(wts))
        wts = wts / Z
        # L = e^{-qmin} Z / n, computed in guarded form
        L = float(np.exp(np.clip(-qmin, None, _EXP_CLIP)) * Z / d.n)
    else:
        lvals = kind.value(q)
        L = float(np.mean(lvals))
        wts = -kind.dvalue(q) / (d.n * L)

    coef = wts * y
    if sliding:
        sig = sliding_sigma(pre, p.w, p.b, x, coef)
    else:
        sig = (pre > 0.0).astype(float)
        if policy.kink_value != 0.0:
            sig[pre == 0.0] = policy.kink_value
    gw = p.v * (sig.T @ (coef * x))
    gb = p.v * (sig.T @ coef)
    gv = act.T @ coef
    direction = np.concatenate([gw, gb, gv])
    grad_norm = L * float(np.linalg.norm(direction))
    return direction, L, grad_norm


def _teacher_sign_grid(spec: TeacherSpec) -> list[float]:
    return spec.sign_change_points()


def population_loss(
    p: Params,
    spec: TeacherSpec,
    kind: LossKind = EXPONENTIAL,
    distribution="uniform",
    tol: float = 1e-10,
) -> float:
    """E_x[ l( N(x) * sign(N*(x)) )] under the closed-form density.

    The integrand is piecewise smooth; integration splits at every student
    breakpoint and teacher sign change.  Exponential pieces integrate in
    closed form; logistic pieces use adaptive quadrature.
    """
    R = spec.R
    if distribution == "uniform":
        density = [(-R, R, 1.0 / (2 * R))]
    elif isinstance(distribution, PiecewiseDensity):
        density = distribution.normalized()
    else:
        raise ValueError("population loss needs a closed-form density")

    student = to_piecewise(p, (-R, R))
    cuts = set()
    for lo, hi, _ in density:
        cuts.update((lo, hi))
    cuts.update(float(t) for t in student.breakpoints)
    cuts.update(float(t) for t in _teacher_sign_grid(spec))
    cuts = sorted(c for c in cuts if -R <= c <= R)

    total = 0.0
    for lo, hi, h in density:
        local = [c for c in cuts if lo < c < hi]
        edges = [lo] + local + [hi]
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a <= 0:
                continue
            mid = 0.5 * (a + b)
            s = sign(float(evaluate(spec.teacher, mid)))
            ya = float(evaluate(p, a))
            yb = float(evaluate(p, b))
            slope = (yb - ya) / (b - a)
            total += h * _piece_integral(kind, s, ya, slope, a, b, tol)
    return total


def _piece_integral(kind: LossKind, s: int, ya: float, slope: float, a: float, b: float, tol: float) -> float:
    """integral_a^b l(s * (ya + slope (x - a))) dx for affine student piece."""
    c0 = s * ya
    c1 = s * slope
    if kind.kind == "exponential":
        # integral of exp(-(c0 + c1 (x-a))) = e^{-c0} (1 - e^{-c1 u}) / c1
        u = b - a
        e0 = np.exp(min(-c0, _EXP_CLIP))
        if abs(c1) * u < 1e-300:
            return float(e0 * u)
        return float(e0 * (-np.expm1(max(-c1 * u, -_EXP_CLIP))) / c1)
    # u is the offset from the left edge a
    val, err = quad(lambda u: float(kind.value(c0 + c1 * u)), 0.0, b - a,
                    epsabs=tol, epsrel=tol, limit=200)
    return float(val)


def fixed_sign_piece_bound(beta1: float, beta2: float, r: int, kind: LossKind = EXPONENTIAL) -> float:
    """Lower bound (1/2) l(0) (beta2 - beta1 - 2/(r+1)) on the unweighted
    integral of l(N(x) f_r(x)) over [beta1, beta2] for fixed-sign N."""
    return 0.5 * kind.at_zero() * (beta2 - beta1 - 2.0 / (r + 1))


def fixed_sign_piece_integral(
    p: Params, s_net: int, beta1: float, beta2: float, spec: TeacherSpec,
    kind: LossKind = EXPONENTIAL, tol: float = 1e-10,
) -> float:
    """Unweighted integral of l(|N(x)| * s * f_r(x)) over [beta1, beta2]
    where s is the (fixed) sign of the network on the piece."""
    from .net import sign_changes

    student = to_piecewise(p, (min(beta1, -spec.R), max(beta2, spec.R)))
    # |N| is affine only between kinks of N and zeros of N
    zeros = sign_changes(student, zero_tol=1e-300)
    cuts = sorted(
        {beta1, beta2}
        | {float(t) for t in student.breakpoints if beta1 < t < beta2}
        | {float(t) for t in zeros if beta1 < t < beta2}
        | {t for t in _teacher_sign_grid(spec) if beta1 < t < beta2}
    )
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (a + b)
        fr_s = sign(float(evaluate(spec.teacher, mid)))
        ya = abs(float(evaluate(p, a))) * s_net
        yb = abs(float(evaluate(p, b))) * s_net
        slope = (yb - ya) / (b - a)
        total += _piece_integral(kind, fr_s, ya, slope, a, b, tol)
    return total


def width_lower_bound(r_prime: int, r: int) -> float:
    """Population-loss floor (1/4)(1 - r'/r) for width-r' nets vs f_r."""
    return 0.25 * (1.0 - r_prime / r)


def thm4_bound(alpha: float) -> float:
    """Population-loss floor (1/4)(1 - 0.75 alpha) for dormant-heavy runs."""
    return 0.25 * (1.0 - 0.75 * alpha)
