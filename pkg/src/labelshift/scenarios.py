"""Ground-truth generative machinery on finite atom spaces.

Everything population-level here (Bayes predictor, confusion matrix,
calibration gaps, population likelihood) is computed exactly as a finite sum,
so these functions double as oracles for the estimators.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from labelshift.core import (
    DiscreteDistribution,
    EstimationResult,
    InvalidInputError,
    PreconditionError,
    SimplexVector,
    as_simplex,
    stack_on_universe,
)
from labelshift.distances import hellinger_vectors
from labelshift.likelihood import EmConfig, estimate_mle

CALIBRATION_TOL = 1e-9
_ROW_DECIMALS = 12

# Stream identifiers for SeedSequence spawn keys.
_SAMPLE_STREAM = 0
_PERTURB_STREAM = 1


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator derived from ``seed`` and a counter path ``key``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(key))))


def _components_matrix(components, universe) -> np.ndarray:
    return np.column_stack([c.on(universe) for c in components])


@dataclass(frozen=True)
class ScenarioSpec:
    """Generative description of a label-shift experiment on atoms ``0..m-1``."""

    k: int
    m: int
    components: tuple
    beta_star: SimplexVector
    alpha: Optional[SimplexVector] = None
    contamination_rate: float = 0.0
    contaminant: Optional[DiscreteDistribution] = None
    outlier_indices: tuple = ()
    outlier_distribution: Optional[DiscreteDistribution] = None
    component_perturbation: float = 0.0
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "beta_star", as_simplex(self.beta_star))
        if self.alpha is not None:
            object.__setattr__(self, "alpha", as_simplex(self.alpha))
        object.__setattr__(self, "outlier_indices", tuple(sorted(int(i) for i in self.outlier_indices)))
        if self.k < 1 or len(self.components) != self.k or self.beta_star.k != self.k:
            raise InvalidInputError("k must match the number of components and the length of beta_star")
        for c in self.components:
            if any(not 0 <= a < self.m for a in c.support):
                raise InvalidInputError(f"component charges atoms outside 0..{self.m - 1}")
        if self.alpha is not None:
            if self.alpha.k != self.k or np.any(self.alpha.values <= 0):
                raise InvalidInputError("alpha must be a strictly positive vector of length k")
        if not 0.0 <= self.contamination_rate < 1.0:
            raise InvalidInputError("contamination_rate must lie in [0, 1)")
        if self.contaminant is None and self.contamination_rate != 0.0:
            raise InvalidInputError("contamination_rate must be 0 without a contaminant")
        if self.outlier_distribution is None and self.outlier_indices:
            raise InvalidInputError("outlier indices need an outlier_distribution")
        if self.n < 1:
            raise InvalidInputError("n must be positive")
        if self.outlier_indices and not (0 <= self.outlier_indices[0] and self.outlier_indices[-1] < self.n):
            raise InvalidInputError("outlier indices must lie in 0..n-1")
        if len(set(self.outlier_indices)) != len(self.outlier_indices):
            raise InvalidInputError("outlier indices must be distinct")
        if self.component_perturbation < 0 or self.component_perturbation > 1:
            raise InvalidInputError("component_perturbation must lie in [0, 1]")

    @property
    def universe(self) -> list[int]:
        return list(range(self.m))

    @property
    def true_matrix(self) -> np.ndarray:
        """``m x k`` matrix of true component probabilities."""
        return _components_matrix(self.components, self.universe)

    @property
    def is_well_posed(self) -> bool:
        return int(np.linalg.matrix_rank(self.true_matrix, tol=1e-10)) == self.k

    @property
    def eval_components(self) -> tuple:
        """Components handed to the estimators: ``(1 - eps) Q*_i + eps R_i`` with seeded random ``R_i``."""
        eps = self.component_perturbation
        if eps == 0:
            return self.components
        rng = rng_stream(self.seed, _PERTURB_STREAM)
        R = rng.dirichlet(np.ones(self.m), size=self.k).T
        Q = (1.0 - eps) * self.true_matrix + eps * R
        return tuple(DiscreteDistribution.from_vector(Q[:, j] / Q[:, j].sum()) for j in range(self.k))

    def realized_misspecification(self) -> float:
        """``max_i h^2(Q_i, Q*_i)`` between estimator-side and true components."""
        Q = _components_matrix(self.eval_components, self.universe)
        Qs = self.true_matrix
        return max(hellinger_vectors(Q[:, j], Qs[:, j]) ** 2 for j in range(self.k))

    def target_distribution(self) -> DiscreteDistribution:
        """Law of a non-outlier sample: ``(1 - lam0) P_beta* + lam0 Pbar``."""
        parts = list(self.components)
        weights = list((1.0 - self.contamination_rate) * self.beta_star.values)
        if self.contaminant is not None and self.contamination_rate > 0:
            parts.append(self.contaminant)
            weights.append(self.contamination_rate)
        universe, F = stack_on_universe(parts)
        p = F @ np.array(weights)
        return DiscreteDistribution(tuple(universe), p / p.sum())

    def with_(self, **changes) -> "ScenarioSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "components": [c.to_dict() for c in self.components],
            "beta_star": self.beta_star.tolist(),
            "alpha": None if self.alpha is None else self.alpha.tolist(),
            "contamination_rate": self.contamination_rate,
            "contaminant": None if self.contaminant is None else self.contaminant.to_dict(),
            "outlier_indices": list(self.outlier_indices),
            "outlier_distribution": None if self.outlier_distribution is None else self.outlier_distribution.to_dict(),
            "component_perturbation": self.component_perturbation,
            "n": self.n,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        try:
            comps = tuple(DiscreteDistribution.from_dict(c) for c in d["components"])
            opt = lambda key: None if d.get(key) is None else DiscreteDistribution.from_dict(d[key])  # noqa: E731
            return cls(
                k=int(d.get("k", len(comps))),
                m=int(d["m"]),
                components=comps,
                beta_star=SimplexVector(d["beta_star"]),
                alpha=None if d.get("alpha") is None else SimplexVector(d["alpha"]),
                contamination_rate=float(d.get("contamination_rate", 0.0)),
                contaminant=opt("contaminant"),
                outlier_indices=tuple(d.get("outlier_indices", ())),
                outlier_distribution=opt("outlier_distribution"),
                component_perturbation=float(d.get("component_perturbation", 0.0)),
                n=int(d["n"]),
                seed=int(d.get("seed", 0)),
            )
        except InvalidInputError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad scenario JSON: missing or malformed {exc}") from exc


def _inverse_cdf(dist: DiscreteDistribution, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(dist.probs)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(dist.atoms) - 1)
    return np.asarray(dist.atoms, dtype=np.int64)[idx]


def sample_target_labeled(spec: ScenarioSpec, replication: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(atoms, origin)``; origin is the label, -1 for contamination, -2 for outliers.

    A fixed number of uniforms is drawn per sample regardless of the
    contamination rate, so runs sharing a seed use common random numbers.
    """
    n = spec.n
    rng = rng_stream(spec.seed, _SAMPLE_STREAM, int(replication))
    u_contam, u_label, u_atom, u_pbar, u_out = (rng.random(n) for _ in range(5))
    cum = np.cumsum(spec.beta_star.values)
    labels = np.minimum(np.searchsorted(cum, u_label * cum[-1], side="right"), spec.k - 1)
    atoms = np.empty(n, dtype=np.int64)
    for j, comp in enumerate(spec.components):
        sel = labels == j
        atoms[sel] = _inverse_cdf(comp, u_atom[sel])
    origin = labels.astype(np.int64)
    if spec.contaminant is not None and spec.contamination_rate > 0:
        hit = u_contam < spec.contamination_rate
        atoms[hit] = _inverse_cdf(spec.contaminant, u_pbar[hit])
        origin[hit] = -1
    if spec.outlier_indices:
        idx = np.asarray(spec.outlier_indices)
        atoms[idx] = _inverse_cdf(spec.outlier_distribution, u_out[idx])
        origin[idx] = -2
    return atoms, origin


def sample_target(spec: ScenarioSpec, replication: int = 0) -> np.ndarray:
    """Draw ``spec.n`` target atoms; deterministic in ``(spec.seed, replication)``."""
    return sample_target_labeled(spec, replication)[0]


def eval_matrix(samples, components: Sequence[DiscreteDistribution]) -> np.ndarray:
    """``L[i, j] = q_j(x_i)``; atoms outside every support give zero rows."""
    lookup = [dict(zip(c.atoms, c.probs.tolist())) for c in components]
    return np.array([[d.get(int(x), 0.0) for d in lookup] for x in samples], dtype=float).reshape(-1, len(components))


@dataclass(frozen=True)
class PredictorTable:
    """Predictor values on a finite atom set; undefined rows are NaN."""

    atoms: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != len(self.atoms):
            raise InvalidInputError("predictor table must have one row per atom")
        v.setflags(write=False)
        object.__setattr__(self, "atoms", tuple(int(a) for a in self.atoms))
        object.__setattr__(self, "values", v)

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values).any(axis=1)

    def on(self, universe: Sequence[int]) -> np.ndarray:
        pos = {a: i for i, a in enumerate(self.atoms)}
        out = np.full((len(universe), self.values.shape[1]), np.nan)
        for r, a in enumerate(universe):
            if int(a) in pos:
                out[r] = self.values[pos[int(a)]]
        return out

    def rows_for(self, samples) -> np.ndarray:
        return self.on([int(x) for x in samples])


def _as_table(predictor, universe) -> np.ndarray:
    if isinstance(predictor, PredictorTable):
        return predictor.on(universe)
    F = np.asarray(predictor, dtype=float)
    if F.ndim != 2 or F.shape[0] != len(universe):
        raise InvalidInputError(f"predictor table must have {len(universe)} rows")
    return F


def _positive_alpha(alpha, k) -> np.ndarray:
    alpha = as_simplex(alpha)
    if alpha.k != k:
        raise InvalidInputError(f"alpha has {alpha.k} entries, expected {k}")
    if np.any(alpha.values <= 0):
        raise InvalidInputError("alpha must be strictly positive")
    return alpha.values


def bayes_predictor(components: Sequence[DiscreteDistribution], alpha) -> PredictorTable:
    """``f_i(x) = alpha_i q_i(x) / sum_j alpha_j q_j(x)`` on the support of ``P_alpha``."""
    a = _positive_alpha(alpha, len(components))
    universe, Q = stack_on_universe(components)
    joint = Q * a
    mass = joint.sum(axis=1)
    F = np.full_like(joint, np.nan)
    ok = mass > 0
    F[ok] = joint[ok] / mass[ok, None]
    return PredictorTable(tuple(universe), F)


def reconstruct_components(predictor, alpha, p_alpha: DiscreteDistribution) -> list[DiscreteDistribution]:
    """Invert the Bayes predictor: ``Q_i(x) = f_i(x) P_alpha(x) / alpha_i``."""
    universe = list(p_alpha.atoms)
    F = _as_table(predictor, universe)
    a = _positive_alpha(alpha, F.shape[1])
    p = p_alpha.on(universe)
    F = np.where(np.isnan(F) & (p[:, None] == 0), 0.0, F)
    Q = F * p[:, None] / a
    return [DiscreteDistribution(tuple(universe), Q[:, j]) for j in range(F.shape[1])]


@dataclass(frozen=True)
class ConfusionMatrix:
    """``values[i, j] = E_{Q*_j}[f_i]``; column-stochastic."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidInputError("confusion matrix must be square")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise InvalidInputError("confusion matrix entries must lie in [0, 1]")
        if np.any(np.abs(v.sum(axis=0) - 1.0) > 1e-9):
            raise InvalidInputError("confusion matrix columns must sum to 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def _charged_rows(F, Q):
    charged = Q.sum(axis=1) > 0
    bad = charged & np.isnan(F).any(axis=1)
    if bad.any():
        raise InvalidInputError(f"predictor undefined on charged atom index {int(np.flatnonzero(bad)[0])}")
    return np.where(np.isnan(F), 0.0, F)


def confusion_matrix(predictor, components: Sequence[DiscreteDistribution]) -> ConfusionMatrix:
    universe, Q = stack_on_universe(components)
    F = _charged_rows(_as_table(predictor, universe), Q)
    return ConfusionMatrix(F.T @ Q)


@dataclass(frozen=True)
class CalibrationReport:
    mode: str
    gap: float
    calibrated: bool
    n_groups: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _group_keys(col_or_rows: np.ndarray) -> list:
    r = np.round(col_or_rows, _ROW_DECIMALS) + 0.0
    if r.ndim == 1:
        return r.tolist()
    return [tuple(row) for row in r.tolist()]


def _conditional_gap(f_vals: np.ndarray, keys: list, joint_i: np.ndarray, mass: np.ndarray) -> tuple[float, int]:
    """Max |f - P(Y=i | key)| over atoms with positive mass, grouping by ``keys``."""
    groups: dict = {}
    for idx, key in enumerate(keys):
        if mass[idx] > 0:
            groups.setdefault(key, []).append(idx)
    gap = 0.0
    for members in groups.values():
        cond = joint_i[members].sum() / mass[members].sum()
        gap = max(gap, float(np.abs(f_vals[members] - cond).max()))
    return gap, len(groups)


def check_calibration(predictor, components: Sequence[DiscreteDistribution], alpha,
                      mode: str = "canonical") -> CalibrationReport:
    """Calibration gap of ``predictor`` under the source joint law with label prior ``alpha``.

    ``canonical`` groups atoms by the whole predictor row, ``marginal`` by one
    coordinate at a time. Calibrated means the gap is at most 1e-9.
    """
    if mode not in ("canonical", "marginal"):
        raise InvalidInputError(f"unknown calibration mode {mode!r}")
    a = _positive_alpha(alpha, len(components))
    universe, Q = stack_on_universe(components)
    joint = Q * a
    mass = joint.sum(axis=1)
    F = _charged_rows(_as_table(predictor, universe), Q)
    gap, groups = 0.0, 0
    if mode == "canonical":
        keys = _group_keys(F)
        for i in range(F.shape[1]):
            g, groups = _conditional_gap(F[:, i], keys, joint[:, i], mass)
            gap = max(gap, g)
    else:
        for i in range(F.shape[1]):
            g, n_g = _conditional_gap(F[:, i], _group_keys(F[:, i]), joint[:, i], mass)
            gap, groups = max(gap, g), groups + n_g
    return CalibrationReport(mode, gap, gap <= CALIBRATION_TOL, groups)


def coarsened_predictor(components: Sequence[DiscreteDistribution], alpha, groups: Sequence[Sequence[int]]) -> PredictorTable:
    """Predictor constant on each atom group, equal to the group's label posterior.

    Such a predictor is canonically calibrated whenever the group posteriors are
    distinct; it is not the Bayes predictor unless every group is a single atom.
    """
    a = _positive_alpha(alpha, len(components))
    universe, Q = stack_on_universe(components)
    pos = {x: i for i, x in enumerate(universe)}
    joint = Q * a
    F = np.full_like(joint, np.nan)
    for g in groups:
        rows = [pos[int(x)] for x in g]
        tot = joint[rows].sum()
        if tot > 0:
            F[rows] = joint[rows].sum(axis=0) / tot
    return PredictorTable(tuple(universe), F)


def r_beta(predictor, components, alpha, beta) -> np.ndarray:
    """Measure ``sum_i beta_i f_i / alpha_i * P_alpha`` on the component universe."""
    a = _positive_alpha(alpha, len(components))
    universe, Q = stack_on_universe(components)
    F = _charged_rows(_as_table(predictor, universe), Q)
    p_alpha = Q @ a
    return (F / a) @ as_simplex(beta).values * p_alpha


def expectation_gap(predictor, components, alpha, beta_star, phi: Callable[[np.ndarray], float]) -> tuple[float, float]:
    """``(E_{P*}[phi(f(X))], E_{R_beta*}[phi(f(X))])`` computed exactly."""
    universe, Q = stack_on_universe(components)
    F = _charged_rows(_as_table(predictor, universe), Q)
    p_star = Q @ as_simplex(beta_star).values
    r = r_beta(predictor, components, alpha, beta_star)
    vals = np.array([phi(row) for row in F])
    return float(p_star @ vals), float(r @ vals)


def population_mlls_argmax(predictor, components: Sequence[DiscreteDistribution], alpha, beta_star) -> EstimationResult:
    """Maximiser of ``E_{P*}[log sum_j beta_j f_j(X) / alpha_j]`` over the simplex.

    Requires ``predictor`` to be canonically calibrated. The expectation is a
    finite weighted sum, maximised by weighted EM with Newton refinement.
    ``metadata["identifiable"]`` is False when ``f_j P_alpha`` are linearly
    dependent, in which case the objective has no unique maximiser.
    """
    report = check_calibration(predictor, components, alpha, "canonical")
    if not report.calibrated:
        raise PreconditionError(f"predictor is not canonically calibrated (check_calibration gap {report.gap:.3g})")
    a = _positive_alpha(alpha, len(components))
    universe, Q = stack_on_universe(components)
    F = _charged_rows(_as_table(predictor, universe), Q)
    p_star = Q @ as_simplex(beta_star).values
    p_alpha = Q @ a
    identifiable = int(np.linalg.matrix_rank(F * p_alpha[:, None], tol=1e-10)) == len(components)
    keep = p_star > 0
    L = F[keep] / a
    cfg = EmConfig(max_iterations=100_000, tolerance=1e-16, polish=identifiable)
    res = estimate_mle(L, cfg, weights=p_star[keep])
    meta = dict(res.metadata)
    meta["identifiable"] = identifiable
    return EstimationResult(res.beta_hat, res.log_likelihood, res.iterations, res.converged, metadata=meta)


def assumption_gamma(predictor, components, alpha) -> dict:
    """Solve ``M(f) gamma = alpha``; report ``||alpha - gamma||_1`` or infeasibility."""
    a = _positive_alpha(alpha, len(components))
    M = confusion_matrix(predictor, components).values
    try:
        gamma = np.linalg.solve(M, a)
    except np.linalg.LinAlgError:
        return {"feasible": False, "gamma": None, "l1_gap": None, "reason": "singular confusion matrix"}
    feasible = bool(np.all(gamma > 0))
    return {
        "feasible": feasible,
        "gamma": gamma.tolist(),
        "l1_gap": float(np.abs(a - gamma).sum()),
        "reason": None if feasible else "gamma has nonpositive entries",
    }


def random_components(k: int, m: int, rng: np.random.Generator, concentration: float = 1.0) -> tuple:
    Q = rng.dirichlet(np.full(m, concentration), size=k)
    return tuple(DiscreteDistribution.from_vector(q) for q in Q)


def adversarial_atom(components: Sequence[DiscreteDistribution], beta_star) -> int:
    """Atom whose likelihood ratio most favours the lightest-weighted component."""
    b = as_simplex(beta_star).values
    universe, Q = stack_on_universe(components)
    j = int(np.argmin(b))
    p = Q @ b
    ratio = np.where(p > 0, Q[:, j] / np.where(p > 0, p, 1.0), -np.inf)
    return int(universe[int(np.argmax(ratio))])


def random_scenario(k: int, m: int, n: int, seed: int, concentration: float = 1.0,
                    beta_star=None, alpha=None) -> ScenarioSpec:
    """Well-posed scenario with Dirichlet components; beta* and alpha drawn when not given."""
    rng = rng_stream(seed, 2)
    while True:
        comps = random_components(k, m, rng, concentration)
        spec_b = as_simplex(beta_star) if beta_star is not None else SimplexVector.normalized(rng.dirichlet(np.ones(k)))
        spec_a = as_simplex(alpha) if alpha is not None else SimplexVector.uniform(k)
        spec = ScenarioSpec(k=k, m=m, components=comps, beta_star=spec_b, alpha=spec_a, n=n, seed=seed)
        if spec.is_well_posed:
            return spec
