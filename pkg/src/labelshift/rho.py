"""Rho-estimation criterion and the numerical certificate for candidate weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from labelshift.core import InvalidInputError, SimplexVector, as_simplex, project_rows, validate_eval_matrix

CERTIFICATE_THRESHOLD = 11.36
ASCENT_TOL = 1e-10
ASCENT_MAX_ITER = 10_000


def psi(x: float) -> float:
    """``(x - 1) / (x + 1)`` on ``[0, +inf]``, with ``psi(+inf) = 1``."""
    x = float(x)
    if math.isnan(x) or x < 0:
        raise InvalidInputError(f"psi is defined on [0, +inf], got {x!r}")
    if math.isinf(x):
        return 1.0
    return (x - 1.0) / (x + 1.0)


def _psi_sqrt(r: np.ndarray) -> np.ndarray:
    s = np.sqrt(r)
    return (s - 1.0) / (s + 1.0)


def _terms(L: np.ndarray, beta: np.ndarray, beta2: np.ndarray) -> np.ndarray:
    num = L @ beta2
    den = L @ beta
    out = np.zeros(L.shape[0])
    pos = den > 0
    out[pos] = _psi_sqrt(num[pos] / den[pos])
    # 0/0 = 1 gives psi(1) = 0; a/0 = +inf gives psi(+inf) = 1.
    out[~pos & (num > 0)] = 1.0
    return out


def _check_pair(L, beta, beta2=None):
    L = validate_eval_matrix(L, min_k=1).values
    beta = as_simplex(beta)
    if beta.k != L.shape[1]:
        raise InvalidInputError(f"beta has {beta.k} entries, matrix has {L.shape[1]} columns")
    if beta2 is not None:
        beta2 = as_simplex(beta2)
        if beta2.k != L.shape[1]:
            raise InvalidInputError(f"beta2 has {beta2.k} entries, matrix has {L.shape[1]} columns")
    return L, beta, beta2


def t_statistic(L, beta, beta2) -> float:
    """Robust test statistic comparing the mixture at ``beta`` against ``beta2``."""
    L, beta, beta2 = _check_pair(L, beta, beta2)
    return float(_terms(L, beta.values, beta2.values).sum())


@dataclass(frozen=True)
class CertificateReport:
    upsilon: float
    maximizer_beta: SimplexVector
    is_certified: bool
    iterations: int
    converged: bool = True
    threshold: float = CERTIFICATE_THRESHOLD

    @property
    def status(self) -> str:
        # The certificate can validate a candidate but never reject one.
        return "certified" if self.is_certified else "inconclusive"

    def to_dict(self) -> dict:
        return {
            "upsilon": self.upsilon,
            "certified": self.is_certified,
            "status": self.status,
            "maximizer": self.maximizer_beta.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
            "threshold": self.threshold,
        }


def _smooth_ascent(L: np.ndarray, den: np.ndarray, tol: float, max_iter: int):
    """Maximise sum_i psi(sqrt(L_i.b / den_i)) over the simplex (concave in b)."""
    k = L.shape[1]
    W = L / den[:, None]

    def value(b):
        r = W @ b
        return float(_psi_sqrt(r).sum())

    def grad(b):
        s = np.sqrt(np.maximum(W @ b, 1e-300))
        return W.T @ (1.0 / (s * (s + 1.0) ** 2))

    b = np.full(k, 1.0 / k)
    f = value(b)
    step = 1.0
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        g = grad(b)
        step *= 2.0
        accepted = False
        for _ in range(80):
            cand = project_rows((b + step * g)[None, :])[0]
            f_cand = value(cand)
            if f_cand >= f + 1e-4 * g @ (cand - b):
                accepted = True
                break
            step *= 0.5
        if not accepted or f_cand <= f:
            converged = True
            break
        gain = f_cand - f
        b, f = cand, f_cand
        if gain < tol:
            converged = True
            break
    return b, f, it, converged


def upsilon(L, beta, tol: float = ASCENT_TOL, max_iter: int = ASCENT_MAX_ITER,
            threshold: float = CERTIFICATE_THRESHOLD) -> CertificateReport:
    """Supremum over ``beta'`` in the simplex of ``t_statistic(L, beta, beta')``.

    Rows whose mixture density vanishes at ``beta`` contribute 1 for any
    ``beta'`` that charges one of their nonzero columns, so their total is
    added up front and the ascent runs on the remaining smooth rows.
    """
    L, beta, _ = _check_pair(L, beta)
    n, k = L.shape
    den = L @ beta.values
    dead = den <= 0
    n_dead = int(dead.sum())
    if k == 1:
        return CertificateReport(0.0, SimplexVector([1.0]), 0.0 < threshold, 0, True, threshold)
    live = ~dead
    if live.any():
        b, f, it, converged = _smooth_ascent(L[live], den[live], tol, max_iter)
    else:
        b, f, it, converged = np.full(k, 1.0 / k), 0.0, 0, True
    if n_dead:
        # The sup is approached by mixing in an arbitrarily small uniform component.
        b = 0.999_999_999 * b + 1e-9 / k
    value = max(f + n_dead, 0.0)
    return CertificateReport(float(value), SimplexVector.normalized(b), bool(value < threshold), it,
                             converged, threshold)


def certify(L, beta, threshold: float = CERTIFICATE_THRESHOLD, **kw) -> CertificateReport:
    """Run :func:`upsilon` and certify ``beta`` as a rho-estimator when the value is below ``threshold``."""
    if not threshold > 0:
        raise InvalidInputError("threshold must be positive")
    return upsilon(L, beta, threshold=threshold, **kw)
