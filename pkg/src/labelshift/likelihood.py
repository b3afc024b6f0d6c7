"""Estimators of the target label distribution.

``estimate_mle`` runs EM on the mixture log-likelihood given density
evaluations; ``estimate_mle_predictor`` reduces predictor outputs to density
evaluations by dividing by the source prior. ``estimate_grid_oracle`` is a
lattice search used to check EM, and ``estimate_bbse`` is the
confusion-matrix baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Union

import numpy as np

from labelshift.core import (
    EstimationResult,
    InvalidInputError,
    NumericalError,
    SimplexVector,
    SingularMatrixError,
    UnsupportedSizeError,
    as_simplex,
    simplex_project,
    validate_eval_matrix,
)

log = logging.getLogger(__name__)

FLOOR = 1e-12
PREDICTOR_ROW_TOL = 1e-6
GRID_MAX_K = 4
# Lattice size times sample count above which the grid oracle switches from
# plain enumeration to the concavity-based line search.
_EXHAUSTIVE_BUDGET = 2e7


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 10_000
    tolerance: float = 1e-10
    init: Union[str, SimplexVector] = "uniform"
    polish: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be > 0")
        if isinstance(self.init, str):
            if self.init != "uniform":
                raise InvalidInputError(f"unknown init {self.init!r}")
        else:
            object.__setattr__(self, "init", as_simplex(self.init))


def _loglik(L, w, beta) -> float:
    with np.errstate(divide="ignore"):
        return float(w @ np.log(L @ beta))


def _row_weights(n, weights):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != n or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise InvalidInputError("weights must be n finite nonnegative numbers with positive sum")
    return w


def _newton_polish(L, w, beta, max_iter=50):
    """Equality-constrained Newton steps on the support of ``beta``."""
    beta = beta.copy()
    ll = _loglik(L, w, beta)
    for _ in range(max_iter):
        S = np.flatnonzero(beta > 1e-10)
        if S.size < 2:
            break
        p = L @ beta
        LS = L[:, S]
        g = LS.T @ (w / p)
        H = -(LS * (w / p**2)[:, None]).T @ LS
        s = S.size
        K = np.zeros((s + 1, s + 1))
        K[:s, :s] = H
        K[:s, s] = K[s, :s] = 1.0
        try:
            sol = np.linalg.solve(K, np.concatenate([-g, [0.0]]))
        except np.linalg.LinAlgError:
            break
        d = sol[:s]
        t = 1.0
        improved = False
        while t > 1e-12:
            cand = beta.copy()
            cand[S] += t * d
            if np.all(cand[S] >= 0):
                ll_c = _loglik(L, w, cand)
                if ll_c >= ll:
                    improved = True
                    break
            t *= 0.5
        if not improved:
            break
        step = np.abs(cand - beta).max()
        beta, ll = cand / cand.sum(), ll_c
        if step < 1e-15:
            break
    return beta


def estimate_mle(L, cfg: EmConfig | None = None, weights=None) -> EstimationResult:
    """Maximum likelihood mixture weights by the EM fixed point.

    Iterates ``beta_j <- mean_i beta_j L_ij / (L_i . beta)`` (row-weighted when
    ``weights`` are given, e.g. atom counts) until the log-likelihood gain drops
    below ``cfg.tolerance``. The log-likelihood must not decrease; a decrease
    beyond rounding raises ``NumericalError``. Weights below 1e-12 are set to
    zero on output and listed in ``metadata["floored"]``.
    """
    cfg = cfg or EmConfig()
    L = validate_eval_matrix(L).values
    n, k = L.shape
    w = _row_weights(n, weights)
    wn = w / w.sum()
    if isinstance(cfg.init, SimplexVector):
        if cfg.init.k != k:
            raise InvalidInputError(f"init has {cfg.init.k} entries, expected {k}")
        beta = cfg.init.values.copy()
    else:
        beta = np.full(k, 1.0 / k)

    ll = _loglik(L, w, beta)
    if not np.isfinite(ll):
        raise InvalidInputError("initial weights give zero likelihood to some sample")
    it = 0
    converged = False
    while it < cfg.max_iterations:
        it += 1
        p = L @ beta
        new = beta * (L.T @ (wn / p))
        new /= new.sum()
        ll_new = _loglik(L, w, new)
        if ll_new < ll - 1e-10 * max(1.0, abs(ll)):
            raise NumericalError(f"EM log-likelihood decreased at iteration {it}: {ll!r} -> {ll_new!r}")
        gain = ll_new - ll
        beta, ll = new, ll_new
        if gain < cfg.tolerance:
            converged = True
            break

    meta = {}
    if cfg.polish:
        beta = _newton_polish(L, w, beta)
        ll = _loglik(L, w, beta)
    small = beta < FLOOR
    if small.any() and not small.all():
        floored = beta.copy()
        floored[small] = 0.0
        floored /= floored.sum()
        ll_f = _loglik(L, w, floored)
        if np.isfinite(ll_f):
            beta, ll = floored, ll_f
            meta["floored"] = np.flatnonzero(small).tolist()
    return EstimationResult(SimplexVector(beta), ll, it, converged, metadata=meta)


def predictor_to_evals(F, alpha) -> np.ndarray:
    """``L[i, j] = F[i, j] / alpha[j]`` after checking rows of ``F`` and ``alpha``."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2:
        raise InvalidInputError("predictor outputs must be a 2-D array")
    if not np.all(np.isfinite(F)) or np.any(F < -PREDICTOR_ROW_TOL):
        raise InvalidInputError("predictor outputs must be finite and nonnegative")
    bad = np.flatnonzero(np.abs(F.sum(axis=1) - 1.0) > PREDICTOR_ROW_TOL)
    if bad.size:
        raise InvalidInputError(f"predictor row {bad[0]} is not a probability vector")
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != F.shape[1]:
        raise InvalidInputError(f"alpha has {alpha.size} entries, predictor has {F.shape[1]} columns")
    if np.any(alpha <= 0):
        raise InvalidInputError("alpha must be strictly positive")
    as_simplex(alpha)
    return np.maximum(F, 0.0) / alpha


def estimate_mle_predictor(F, alpha, cfg: EmConfig | None = None, weights=None) -> EstimationResult:
    """Maximum likelihood label shift from predictor outputs and the source prior."""
    return estimate_mle(predictor_to_evals(F, alpha), cfg, weights=weights)


def _lattice(k: int, N: int) -> np.ndarray:
    """All nonnegative integer k-vectors summing to N, lexicographically ascending."""
    rows = []
    for bars in combinations(range(N + k - 1), k - 1):
        prev = -1
        row = []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(N + k - 2 - prev)
        rows.append(row)
    out = np.array(rows, dtype=np.int64).reshape(-1, k)
    return out[np.lexsort(out.T[::-1])]


def _lattice_size(k: int, N: int) -> int:
    from math import comb
    return comb(N + k - 1, k - 1)


def _eval_points(L, w, B):
    with np.errstate(divide="ignore"):
        return np.log(L @ B.T).T @ w


def _grid_exhaustive(L, w, N, tie):
    k = L.shape[1]
    P = _lattice(k, N)
    vals = np.concatenate([_eval_points(L, w, P[s:s + 50_000] / N) for s in range(0, len(P), 50_000)])
    best = vals.max()
    idx = int(np.flatnonzero(vals >= best - tie(best))[0])
    return P[idx] / N, float(vals[idx]), len(P)


def _grid_concave(L, w, N, tie):
    """Exhaustive over the first k-2 coordinates, binary search on the next one.

    The log-likelihood restricted to a lattice line is a concave sequence, so
    the first index where the forward difference stops being positive is the
    (lexicographically first) maximiser on that line.
    """
    k = L.shape[1]
    # Dropping the slack column of the (k-1)-lattice leaves every (k-2)-prefix with sum <= N, in order.
    prefixes = _lattice(k - 1, N)[:, :-1] if k > 2 else np.zeros((1, 0), dtype=np.int64)
    best_val, best_pt, evals = -np.inf, None, 0
    for s in range(0, len(prefixes), 20_000):
        pre = prefixes[s:s + 20_000]
        R = N - pre.sum(axis=1)
        lo = np.zeros_like(R)
        hi = R.copy()

        def point(t):
            return np.column_stack([pre, t, R - t]) / N

        while np.any(lo < hi):
            act = lo < hi
            mid = (lo + hi) // 2
            f0 = _eval_points(L, w, point(mid))
            f1 = _eval_points(L, w, point(np.minimum(mid + 1, R)))
            evals += 2 * int(act.sum())
            with np.errstate(invalid="ignore"):
                d = f1 - f0
            stop = ~(d > tie(np.maximum(np.abs(f0), 1.0)))
            hi = np.where(act & stop, mid, hi)
            lo = np.where(act & ~stop, mid + 1, lo)
        P = point(lo)
        vals = _eval_points(L, w, P)
        evals += len(pre)
        i = int(np.argmax(vals))
        if best_pt is None or (np.isfinite(vals[i]) and vals[i] > best_val + tie(best_val)):
            # earliest chunk point within tie tolerance of the chunk maximum
            i = int(np.flatnonzero(vals >= vals[i] - tie(vals[i]))[0]) if np.isfinite(vals[i]) else 0
            best_val, best_pt = vals[i], P[i]
    return best_pt, float(best_val), evals


def estimate_grid_oracle(L, resolution: float, weights=None, method: str = "auto") -> EstimationResult:
    """Lattice argmax of the log-likelihood over the simplex.

    The lattice has step ``resolution`` (which must divide 1). Ties are broken
    towards the lexicographically smallest lattice point. ``method`` is
    ``exhaustive`` (every lattice point), ``concave`` (line search exploiting
    concavity, same argmax) or ``auto``. ``metadata["flat"]`` is set when the
    objective is constant on the simplex.
    """
    L = validate_eval_matrix(L).values
    n, k = L.shape
    if k > GRID_MAX_K:
        raise UnsupportedSizeError(f"grid oracle supports k <= {GRID_MAX_K}, got {k}")
    if not 0 < resolution <= 1:
        raise InvalidInputError("resolution must be in (0, 1]")
    N = int(round(1.0 / resolution))
    if abs(N * resolution - 1.0) > 1e-9:
        raise InvalidInputError(f"resolution {resolution} does not divide 1")
    w = _row_weights(n, weights)

    def tie(v):
        return 1e-12 * np.maximum(np.abs(v), 1.0)

    if method == "auto":
        method = "exhaustive" if _lattice_size(k, N) * n <= _EXHAUSTIVE_BUDGET else "concave"
    if method == "exhaustive":
        beta, ll, evals = _grid_exhaustive(L, w, N, tie)
    elif method == "concave":
        beta, ll, evals = _grid_concave(L, w, N, tie)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    vertices = _eval_points(L, w, np.eye(k))
    flat = bool(np.all(np.abs(vertices - ll) <= tie(ll)))
    if not np.isfinite(ll):
        raise NumericalError("log-likelihood is -inf on the whole lattice")
    return EstimationResult(SimplexVector(beta), ll, evals, True,
                            metadata={"flat": flat, "resolution": resolution, "method": method})


def estimate_bbse(F, M) -> SimplexVector:
    """Black-box shift estimate: solve ``M beta = mean(F)`` and project onto the simplex."""
    F = np.asarray(F, dtype=float)
    M = np.asarray(M, dtype=float)
    if F.ndim != 2 or M.shape != (F.shape[1], F.shape[1]):
        raise InvalidInputError(f"shape mismatch: predictor {F.shape}, confusion matrix {M.shape}")
    bad = np.flatnonzero(np.abs(F.sum(axis=1) - 1.0) > PREDICTOR_ROW_TOL)
    if bad.size or np.any(F < -PREDICTOR_ROW_TOL):
        raise InvalidInputError("predictor rows must be probability vectors")
    k = M.shape[0]
    scale = max(np.abs(M).max(), 1e-300) ** k
    if abs(np.linalg.det(M)) < 1e-12 * scale:
        raise SingularMatrixError("confusion matrix is singular")
    log.debug("bbse confusion matrix condition number %.3g", np.linalg.cond(M))
    mu = F.mean(axis=0)
    return simplex_project(np.linalg.solve(M, mu))
