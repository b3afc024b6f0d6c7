"""Exact distribution geometry on finite atom spaces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from labelshift.core import (
    DiscreteDistribution,
    InvalidInputError,
    NumericalError,
    SimplexVector,
    UnsupportedSizeError,
    as_simplex,
    project_rows,
    stack_on_universe,
)

MAX_K = 12
DISAGREEMENT_TOL = 1e-3


def _aligned(p, q) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(p, DiscreteDistribution) and isinstance(q, DiscreteDistribution):
        _, M = stack_on_universe([p, q])
        return M[:, 0], M[:, 1]
    if isinstance(p, DiscreteDistribution) or isinstance(q, DiscreteDistribution):
        raise InvalidInputError("cannot compare a DiscreteDistribution with a raw vector")
    a = np.asarray(p, dtype=float).ravel()
    b = np.asarray(q, dtype=float).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"mismatched atom universes: {a.size} vs {b.size} atoms")
    return a, b


def hellinger_vectors(a: np.ndarray, b: np.ndarray) -> float:
    h2 = 0.5 * np.sum((np.sqrt(a) - np.sqrt(b)) ** 2)
    return float(np.sqrt(min(max(h2, 0.0), 1.0)))


def hellinger(p, q) -> float:
    """Hellinger distance ``sqrt(1/2 sum (sqrt p - sqrt q)^2)``.

    Accepts two ``DiscreteDistribution`` objects (aligned on the union of their
    atoms) or two probability vectors over the same atoms.
    """
    return hellinger_vectors(*_aligned(p, q))


def total_variation(p, q) -> float:
    a, b = _aligned(p, q)
    return float(min(0.5 * np.sum(np.abs(a - b)), 1.0))


def hellinger_weights(w, w2) -> float:
    """Hellinger distance between two weight vectors seen as distributions on labels."""
    w, w2 = as_simplex(w), as_simplex(w2)
    if w.k != w2.k:
        raise InvalidInputError(f"dimension mismatch: {w.k} vs {w2.k}")
    return hellinger_vectors(w.values, w2.values)


@dataclass(frozen=True)
class SeparationResult:
    delta_star: float
    argmin_subset: tuple
    argmin_gamma: SimplexVector
    argmin_lambda: SimplexVector
    lower_bound_l2: float
    method: str = "exact"
    descent_value: float | None = None
    flagged: bool = False
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "delta_star": self.delta_star,
            "argmin_subset": list(self.argmin_subset),
            "argmin_gamma": self.argmin_gamma.tolist(),
            "argmin_lambda": self.argmin_lambda.tolist(),
            "lower_bound_l2": self.lower_bound_l2,
            "method": self.method,
            "descent_value": self.descent_value,
            "flagged": self.flagged,
        }


def _subsets(k: int):
    """Nonempty proper subsets of range(k), in increasing bitmask order."""
    for mask in range(1, 2**k - 1):
        yield mask, [i for i in range(k) if mask >> i & 1], [i for i in range(k) if not mask >> i & 1]


def _tv_split_lp(A: np.ndarray, B: np.ndarray):
    """min over (gamma, lambda) of 1/2 ||A gamma - B lambda||_1 as a linear program."""
    m, a = A.shape
    b = B.shape[1]
    nv = a + b + m
    c = np.concatenate([np.zeros(a + b), 0.5 * np.ones(m)])
    D = np.hstack([A, -B])
    I = np.eye(m)
    A_ub = np.vstack([np.hstack([D, -I]), np.hstack([-D, -I])])
    b_ub = np.zeros(2 * m)
    A_eq = np.zeros((2, nv))
    A_eq[0, :a] = 1.0
    A_eq[1, a:a + b] = 1.0
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0, 1.0], bounds=(0, None), method="highs")
    if res.status != 0:
        raise NumericalError(f"linear program failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    gamma = x[:a] / x[:a].sum()
    lam = x[a:a + b] / x[a:a + b].sum()
    value = 0.5 * np.abs(A @ gamma - B @ lam).sum()
    return float(value), gamma, lam


def _tv_split_descent(A, B, rng, restarts=20, iters=400):
    """Projected subgradient descent on the same split objective, batched over restarts."""
    a, b = A.shape[1], B.shape[1]
    G = rng.dirichlet(np.ones(a), size=restarts)
    Lm = rng.dirichlet(np.ones(b), size=restarts)
    G[0], Lm[0] = 1.0 / a, 1.0 / b
    scale = max(np.abs(A).sum(axis=0).max(), np.abs(B).sum(axis=0).max(), 1e-12)
    best = np.inf
    for t in range(1, iters + 1):
        R = G @ A.T - Lm @ B.T
        vals = 0.5 * np.abs(R).sum(axis=1)
        best = min(best, float(vals.min()))
        S = np.sign(R)
        step = 0.5 / (scale * np.sqrt(t))
        G = project_rows(G - step * 0.5 * S @ A) if a > 1 else G
        Lm = project_rows(Lm + step * 0.5 * S @ B) if b > 1 else Lm
    R = G @ A.T - Lm @ B.T
    return min(best, float((0.5 * np.abs(R).sum(axis=1)).min()))


def _active_set_qp(Q: np.ndarray, E: np.ndarray, x: np.ndarray, max_iter: int = 500) -> np.ndarray:
    """Primal active-set method for min x'Qx subject to E x = 1, x >= 0.

    ``x`` must be feasible. Q is positive semidefinite; singular KKT systems
    are solved in the least-squares sense.
    """
    n = x.size
    working = x <= 0
    for _ in range(max_iter):
        free = np.flatnonzero(~working)
        g = Q @ x
        Ef = E[:, free]
        m = E.shape[0]
        K = np.block([[Q[np.ix_(free, free)], Ef.T], [Ef, np.zeros((m, m))]])
        rhs = np.concatenate([-g[free], np.zeros(m)])
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p = np.zeros(n)
        p[free] = sol[:free.size]
        if np.abs(p).max() <= 1e-13:
            nu = np.linalg.lstsq(Ef.T, g[free], rcond=None)[0]
            z = g - E.T @ nu
            bound = np.flatnonzero(working)
            if bound.size == 0 or z[bound].min() >= -1e-12:
                return x
            working[bound[np.argmin(z[bound])]] = False
            continue
        neg = free[p[free] < 0]
        step, block = 1.0, None
        if neg.size:
            ratios = -x[neg] / p[neg]
            j = int(np.argmin(ratios))
            if ratios[j] < 1.0:
                step, block = ratios[j], neg[j]
        x = np.maximum(x + step * p, 0.0)
        if block is not None:
            x[block] = 0.0
            working[block] = True
    return x


def _l2_split_qp(A, B, warm: np.ndarray | None = None):
    """min ||A gamma - B lambda||_2^2 over the product of two simplices."""
    a, b = A.shape[1], B.shape[1]
    D = np.hstack([A, -B])
    E = np.zeros((2, a + b))
    E[0, :a] = 1.0
    E[1, a:] = 1.0
    x0 = np.concatenate([np.full(a, 1.0 / a), np.full(b, 1.0 / b)])
    x = _active_set_qp(D.T @ D, E, x0)
    x = np.concatenate([x[:a] / x[:a].sum(), x[a:] / x[a:].sum()])

    def f(v):
        r = D @ v
        return float(r @ r)

    fx = f(x)
    # Any feasible point upper-bounds the minimum; keep the better one.
    if warm is not None and f(warm) < fx:
        x, fx = warm, f(warm)
    return fx, x[:a], x[a:]


def delta_star(components: Sequence[DiscreteDistribution], method: str = "exact",
               cross_check: bool | None = None, seed: int = 0) -> SeparationResult:
    """Minimal total-variation separation between complementary component hulls.

    ``exact`` solves one linear program per nonempty proper subset split; the
    result is cross-checked by projected subgradient descent (20 restarts) when
    ``cross_check`` is on (default for k <= 4) and ``flagged`` is set if the two
    routes disagree by more than 1e-3. ``qp_lower_bound`` minimises the squared
    L2 distance instead and reports ``min / (2 M)`` with ``M`` the largest atom
    probability, which never exceeds the exact value.
    """
    if method not in ("exact", "qp_lower_bound"):
        raise InvalidInputError(f"unknown method {method!r}")
    k = len(components)
    if not 2 <= k <= MAX_K:
        raise UnsupportedSizeError(f"delta_star supports 2 <= k <= {MAX_K}, got {k}")
    _, F = stack_on_universe(components)
    M = float(F.max())
    if cross_check is None:
        cross_check = method == "exact" and k <= 4
    rng = np.random.default_rng(seed)

    best_tv = best_l2 = None
    for mask, I, J in _subsets(k):
        A, B = F[:, I], F[:, J]
        tv, g, lam = _tv_split_lp(A, B)
        if best_tv is None or tv < best_tv[0] - 1e-15:
            best_tv = (tv, I, g, lam, A, B)
        warm = np.concatenate([g, lam])
        l2, g2, lam2 = _l2_split_qp(A, B, warm=warm)
        if best_l2 is None or l2 < best_l2[0] - 1e-18:
            best_l2 = (l2, I, g2, lam2)

    lower = min(max(best_l2[0], 0.0) / (2.0 * M), 1.0) if M > 0 else 0.0
    if method == "qp_lower_bound":
        _, I, g, lam = best_l2
        return SeparationResult(lower, tuple(I), SimplexVector.normalized(g), SimplexVector.normalized(lam),
                                lower, method=method)

    tv, I, g, lam, A, B = best_tv
    tv = min(max(tv, 0.0), 1.0)
    descent = None
    flagged = False
    if cross_check:
        descent = min(_tv_split_descent(F[:, Ii], F[:, Jj], rng) for _, Ii, Jj in _subsets(k))
        flagged = abs(descent - tv) > DISAGREEMENT_TOL
    return SeparationResult(tv, tuple(I), SimplexVector.normalized(g), SimplexVector.normalized(lam),
                            min(lower, tv), method=method, descent_value=descent, flagged=flagged)


def mixture(components: Sequence[DiscreteDistribution], weights) -> DiscreteDistribution:
    w = as_simplex(weights)
    if w.k != len(components):
        raise InvalidInputError("weights and components differ in length")
    universe, F = stack_on_universe(components)
    p = F @ w.values
    return DiscreteDistribution(tuple(universe), p / p.sum())


@dataclass(frozen=True)
class SandwichReport:
    hellinger: float
    lower_bound: float
    upper_bound: float
    delta_star: float
    holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_mixture_sandwich(components: Sequence[DiscreteDistribution], beta, beta2,
                           delta: float | None = None, tol: float = 1e-12) -> SandwichReport:
    """Verify ``Delta*/(2 sqrt 2) ||beta - beta2||_1 <= h(P_beta, P_beta2) <= h(beta, beta2)``.

    ``delta`` may carry a precomputed separation constant for the components.
    """
    beta, beta2 = as_simplex(beta), as_simplex(beta2)
    if beta.k != len(components) or beta2.k != len(components):
        raise InvalidInputError("weights and components differ in length")
    _, F = stack_on_universe(components)
    h = hellinger_vectors(F @ beta.values, F @ beta2.values)
    upper = hellinger_weights(beta, beta2)
    if delta is None:
        delta = delta_star(components, cross_check=False).delta_star
    lower = delta / (2.0 * np.sqrt(2.0)) * float(np.abs(beta.values - beta2.values).sum())
    holds = lower <= h + tol and h <= upper + tol
    return SandwichReport(h, lower, upper, float(delta), bool(holds))
