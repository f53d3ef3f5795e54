"""Certification of (approximate) KKT points of the max-margin problem

    min (1/2)||theta||^2  s.t.  y_i Phi(theta; x_i) >= 1 for all i.

Stationarity demands theta = sum_i lambda_i y_i g_i with lambda >= 0
supported on the active set {i : y_i Phi = 1}, where g_i is a Clarke
gradient of Phi(.; x_i).  Multipliers are fit by nonnegative least squares
restricted to the active set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .net import Params, scale
from .data import Dataset
from .flow import Trajectory
from .loss import DEFAULT_POLICY, SLIDING_BAND, SubgradientPolicy, margins

ACTIVE_TOL_DEFAULT = 1e-3


@dataclass(frozen=True)
class KKTCertificate:
    lambdas: np.ndarray  # length n, zero off the active set
    active_set: tuple
    stationarity_residual: float  # ||theta - sum lambda_i y_i g_i|| / ||theta||
    complementarity_residual: float  # max_i lambda_i |y_i Phi - 1|
    feasibility_margin: float  # min_i y_i Phi - 1
    policy_kink_value: float
    active_tolerance: float
    uninformative: bool = False

    def is_eps_kkt(self, eps: float) -> bool:
        return (
            not self.uninformative
            and self.stationarity_residual <= eps
            and self.complementarity_residual <= eps
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambda": self.lambdas.tolist(),
                "active_set": list(self.active_set),
                "stationarity_residual": self.stationarity_residual,
                "complementarity_residual": self.complementarity_residual,
                "feasibility_margin": self.feasibility_margin,
                "policy_kink_value": self.policy_kink_value,
                "active_tolerance": self.active_tolerance,
                "uninformative": self.uninformative,
            }
        )


def normalize_to_margin_one(p: Params, d: Dataset) -> Params:
    """Rescale theta so the minimum margin is exactly 1 (2-homogeneity:
    alpha = (min margin)^(-1/2))."""
    mm = float(np.min(margins(p, d)))
    if mm <= 0:
        raise ValueError("margin must be positive to normalize")
    return scale(p, mm ** -0.5)


def phi_gradients(p: Params, d: Dataset, policy: SubgradientPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Selected Clarke gradients g_i of Phi(.; x_i); shape (n, 3k)."""
    x = d.xs
    pre = np.multiply.outer(x, p.w) + p.b
    act = np.maximum(pre, 0.0)
    sig = (pre > 0.0).astype(float)
    if policy.kink_value != 0.0:
        sig[pre == 0.0] = policy.kink_value
    gw = sig * (p.v * x[:, None])
    gb = sig * p.v
    gv = act
    return np.concatenate([gw, gb, gv], axis=1)


def nnls_projected_gradient(G: np.ndarray, target: np.ndarray,
                            gap_tol: float = 1e-12, max_iter: int = 200_000) -> np.ndarray:
    """min_{lam >= 0} ||G lam - target||^2 by accelerated projected
    gradient, stopping on the KKT/duality gap of the quadratic program."""
    m = G.shape[1]
    if m == 0:
        return np.zeros(0)
    GtG = G.T @ G
    Gt_t = G.T @ target
    lip = float(np.linalg.norm(GtG, 2)) or 1.0
    lam = np.zeros(m)
    z = lam.copy()
    t_acc = 1.0
    ref = float(target @ target) or 1.0
    for _ in range(max_iter):
        grad = GtG @ z - Gt_t
        lam_new = np.maximum(z - grad / lip, 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t_acc * t_acc))
        z = lam_new + ((t_acc - 1) / t_new) * (lam_new - lam)
        lam, t_acc = lam_new, t_new
        g_now = GtG @ lam - Gt_t
        # duality gap of the NNLS QP at a feasible lam:
        # sum lam_i g_i (complementarity) plus violation of g >= 0
        gap = float(abs(lam @ g_now) + np.abs(np.minimum(g_now, 0.0)).sum() * max(np.max(lam), 1.0))
        if gap <= gap_tol * ref:
            break
    return lam


def certify(
    p: Params,
    d: Dataset,
    policy: SubgradientPolicy = DEFAULT_POLICY,
    active_tolerance: float = ACTIVE_TOL_DEFAULT,
) -> KKTCertificate:
    """KKT certificate of a margin-1-normalized point.

    At convergence neuron breakpoints typically sit exactly on support
    vectors; Clarke stationarity there holds for SOME sigma' in [0, 1] at
    each on-kink (example, neuron) pair.  The selection enters stationarity
    only through the products mu_t = lambda_i * sigma'_{ij}, so the search
    over valid selections is an exact nonnegative least squares in
    (lambda, mu) followed by a check of the box constraint mu_t <=
    lambda_i; pairs pushed past sigma' = 1 are clamped there and the system
    re-solved.
    """
    q = margins(p, d)
    theta = p.vector()
    theta_norm = float(np.linalg.norm(theta))
    active = np.nonzero(q <= 1.0 + active_tolerance)[0]

    pre = np.multiply.outer(d.xs, p.w) + p.b
    eps = SLIDING_BAND * (np.abs(np.multiply.outer(d.xs, p.w)) + np.abs(p.b) + 1e-300)
    band = np.abs(pre) <= eps
    sig0 = (pre > eps).astype(float)
    act = np.maximum(pre, 0.0)
    G_all = np.concatenate([sig0 * (p.v * d.xs[:, None]), sig0 * p.v, act], axis=1)
    G = (d.ys[active, None] * G_all[active]).T  # (3k, |A|)

    lam = np.zeros(d.n)
    if G.size == 0 or not np.any(np.abs(G) > 0):
        return KKTCertificate(
            lambdas=lam, active_set=tuple(int(i) for i in active),
            stationarity_residual=1.0, complementarity_residual=0.0,
            feasibility_margin=float(np.min(q) - 1.0),
            policy_kink_value=policy.kink_value,
            active_tolerance=active_tolerance, uninformative=True,
        )

    k = p.k
    pairs = [(ai, int(i), j) for ai, i in enumerate(active) for j in range(p.k) if band[i, j]]
    C = np.zeros((3 * k, len(pairs)))
    for t, (ai, i, j) in enumerate(pairs):
        C[j, t] = d.ys[i] * p.v[j] * d.xs[i]
        C[k + j, t] = d.ys[i] * p.v[j]

    free = list(range(len(pairs)))  # pairs whose sigma' is still searched
    for _ in range(len(pairs) + 1):
        M = np.concatenate([G, C[:, free]], axis=1) if free else G
        sol = nnls_projected_gradient(M, theta)
        lam_active = sol[: len(active)]
        mu = sol[len(active):]
        # mu_t = lambda_i sigma' must not exceed lambda_i
        over = [t for t, mt in zip(free, mu)
                if mt > lam_active[pairs[t][0]] * (1 + 1e-9) + 1e-15]
        if not over:
            break
        for t in over:  # clamp sigma' = 1: fold the pair into its column
            G[:, pairs[t][0]] += C[:, t]
        free = [t for t in free if t not in over]
    resid = float(np.linalg.norm(theta - M @ sol))

    lam[active] = lam_active
    comp = float(np.max(lam * np.abs(q - 1.0))) if d.n else 0.0
    return KKTCertificate(
        lambdas=lam,
        active_set=tuple(int(i) for i in active),
        stationarity_residual=resid / theta_norm if theta_norm > 0 else resid,
        complementarity_residual=comp,
        feasibility_margin=float(np.min(q) - 1.0),
        policy_kink_value=policy.kink_value,
        active_tolerance=active_tolerance,
    )


def track_kkt_along(
    tr: Trajectory,
    d: Dataset,
    policy: SubgradientPolicy = DEFAULT_POLICY,
    active_tolerance: float = ACTIVE_TOL_DEFAULT,
    max_points: int = 50,
):
    """Certificates of the margin-normalized direction along the trajectory
    tail (snapshots with positive margin)."""
    out = []
    snaps = tr.snapshots[-max_points:]
    for t, p in snaps:
        q = margins(p, d)
        if np.min(q) <= 0:
            out.append((t, None))
            continue
        cert = certify(normalize_to_margin_one(p, d), d, policy, active_tolerance)
        out.append((t, cert))
    return out


def margin_one_feasible(p: Params, d: Dataset, tol: float = 0.0) -> bool:
    return bool(np.min(margins(p, d)) >= 1.0 - tol)


def witness_search_width2(d: Dataset, n_starts: int = 20, seed: int = 0):
    """Search width-2 margin-1-feasible nets for small ||theta||^2.

    Used on the two-point fixture to exhibit non-optimality of the KKT
    point the flow converges to.
    """
    from scipy.optimize import minimize
    from .net import evaluate

    rng = np.random.default_rng(seed)

    def norm2(th):
        return float(th @ th)

    def cons_f(th):
        p = Params.from_vector(th)
        return margins(p, d) - 1.0

    best = None
    for _ in range(n_starts):
        th0 = rng.normal(0, 1, size=6)
        res = minimize(
            norm2, th0, jac=lambda th: 2 * th,
            constraints=[{"type": "ineq", "fun": cons_f}],
            method="SLSQP", options={"maxiter": 500, "ftol": 1e-14},
        )
        if res.success and np.min(cons_f(res.x)) >= -1e-9:
            if best is None or norm2(res.x) < norm2(best):
                best = res.x
    return None if best is None else Params.from_vector(best)
