"""Foundational types: simplex vectors, finite distributions, evaluation matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

SIMPLEX_TOL = 1e-9
# A vector already this close to the simplex is returned untouched by the projection,
# which makes the projection exactly idempotent.
_PROJECTION_FAST_PATH_TOL = 1e-12


class LabelShiftError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(LabelShiftError, ValueError):
    pass


class DegenerateSampleError(InvalidInputError):
    """A sample row has zero evaluation under every component."""

    def __init__(self, row: int):
        super().__init__(f"row {row} is zero for every component (degenerate sample)")
        self.row = row


class UnsupportedSizeError(InvalidInputError):
    pass


class SingularMatrixError(LabelShiftError):
    pass


class PreconditionError(LabelShiftError):
    pass


class ConfigurationError(InvalidInputError):
    pass


class NumericalError(LabelShiftError, ArithmeticError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SimplexVector:
    """Probability vector over ``k`` labels.

    Construction checks nonnegativity and that the entries sum to one within
    ``SIMPLEX_TOL``. The stored array is read-only.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1:
            raise InvalidInputError("a simplex vector needs at least one entry")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("simplex vector has non-finite entries")
        if np.any(v < 0):
            raise InvalidInputError(f"simplex vector has negative entries: {v.tolist()}")
        if abs(v.sum() - 1.0) > SIMPLEX_TOL:
            raise InvalidInputError(f"simplex vector sums to {float(v.sum())!r}, not 1")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def normalized(cls, v: Iterable[float]) -> "SimplexVector":
        """Build from nonnegative weights by dividing by their sum."""
        v = np.asarray(list(v) if not isinstance(v, np.ndarray) else v, dtype=float)
        if np.any(v < 0) or not np.all(np.isfinite(v)) or v.sum() <= 0:
            raise InvalidInputError("cannot normalize: need finite nonnegative weights with positive sum")
        return cls(v / v.sum())

    @classmethod
    def uniform(cls, k: int) -> "SimplexVector":
        return cls(np.full(k, 1.0 / k))

    @property
    def k(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]

    def __iter__(self):
        return iter(self.values.tolist())

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __eq__(self, other):
        if isinstance(other, SimplexVector):
            return np.array_equal(self.values, other.values)
        return NotImplemented

    def __hash__(self):
        return hash(self.values.tobytes())


def as_simplex(v: Any) -> SimplexVector:
    return v if isinstance(v, SimplexVector) else SimplexVector(v)


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution on integer atoms."""

    atoms: tuple
    probs: np.ndarray

    def __post_init__(self):
        atoms = tuple(int(a) for a in self.atoms)
        probs = np.asarray(self.probs, dtype=float).ravel()
        if len(atoms) != probs.size:
            raise InvalidInputError("atoms and probs must have the same length")
        if len(set(atoms)) != len(atoms):
            raise InvalidInputError("atoms must be pairwise distinct")
        SimplexVector(probs)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", _frozen(probs))

    @classmethod
    def from_vector(cls, probs: Sequence[float]) -> "DiscreteDistribution":
        """Distribution on atoms ``0..m-1``."""
        probs = np.asarray(probs, dtype=float)
        return cls(tuple(range(probs.size)), probs)

    @classmethod
    def point_mass(cls, atom: int) -> "DiscreteDistribution":
        return cls((int(atom),), np.array([1.0]))

    @property
    def support(self) -> tuple:
        return tuple(a for a, p in zip(self.atoms, self.probs) if p > 0)

    def pmf(self, atom: int) -> float:
        try:
            return float(self.probs[self.atoms.index(int(atom))])
        except ValueError:
            return 0.0

    def on(self, universe: Sequence[int]) -> np.ndarray:
        """Probabilities aligned to ``universe``, zero-filled off the declared atoms."""
        lookup = dict(zip(self.atoms, self.probs.tolist()))
        extra = set(self.atoms) - set(int(a) for a in universe)
        if any(lookup[a] > 0 for a in extra):
            raise InvalidInputError("universe does not cover the support of the distribution")
        return np.array([lookup.get(int(a), 0.0) for a in universe])

    def to_dict(self) -> dict:
        return {"atoms": list(self.atoms), "probs": self.probs.tolist()}

    def __eq__(self, other):
        if isinstance(other, DiscreteDistribution):
            return self.atoms == other.atoms and np.array_equal(self.probs, other.probs)
        return NotImplemented

    def __hash__(self):
        return hash((self.atoms, self.probs.tobytes()))

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDistribution":
        try:
            return cls(tuple(d["atoms"]), np.asarray(d["probs"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"bad distribution JSON: {exc}") from exc


def common_universe(dists: Iterable[DiscreteDistribution]) -> list[int]:
    """Sorted union of the declared atoms."""
    out: set[int] = set()
    for d in dists:
        out.update(d.atoms)
    return sorted(out)


def stack_on_universe(dists: Sequence[DiscreteDistribution], universe=None) -> tuple[list[int], np.ndarray]:
    """Return the universe and an ``m x k`` matrix of probabilities, one column per distribution."""
    universe = common_universe(dists) if universe is None else list(universe)
    return universe, np.column_stack([d.on(universe) for d in dists])


@dataclass(frozen=True)
class EvalMatrix:
    """Validated ``n x k`` matrix with ``values[i, j] = q_j(x_i)``."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def validate_eval_matrix(raw, min_k: int = 2) -> EvalMatrix:
    """Check shape, finiteness, nonnegativity and the absence of all-zero rows.

    ``min_k`` defaults to 2 as required for estimation; the certificate code
    passes 1 because a single-column model is meaningful there.
    """
    if isinstance(raw, EvalMatrix):
        L = raw.values
    else:
        try:
            L = np.asarray(raw, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"evaluation matrix is not numeric: {exc}") from exc
    if L.ndim == 1:
        L = L.reshape(1, -1)
    if L.ndim != 2:
        raise InvalidInputError(f"evaluation matrix must be 2-D, got shape {L.shape}")
    n, k = L.shape
    if n < 1:
        raise InvalidInputError("evaluation matrix has no rows")
    if k < min_k:
        raise InvalidInputError(f"evaluation matrix needs at least {min_k} columns, got {k}")
    if not np.all(np.isfinite(L)):
        raise InvalidInputError("evaluation matrix has non-finite entries")
    if np.any(L < 0):
        i, j = np.argwhere(L < 0)[0]
        raise InvalidInputError(f"negative entry {L[i, j]!r} at row {i}, column {j}")
    zero_rows = np.flatnonzero(~np.any(L > 0, axis=1))
    if zero_rows.size:
        raise DegenerateSampleError(int(zero_rows[0]))
    return raw if isinstance(raw, EvalMatrix) else EvalMatrix(L)


def simplex_project(v) -> SimplexVector:
    """Euclidean projection of ``v`` onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise InvalidInputError("simplex_project needs a nonempty finite vector")
    return SimplexVector(project_rows(v[None, :])[0])


def project_rows(V: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection of a 2-D array."""
    V = np.asarray(V, dtype=float)
    n, k = V.shape
    out = np.empty_like(V)
    done = np.all(V >= 0, axis=1) & (np.abs(V.sum(axis=1) - 1.0) <= _PROJECTION_FAST_PATH_TOL)
    out[done] = V[done]
    rest = ~done
    if np.any(rest):
        W = V[rest]
        U = -np.sort(-W, axis=1)
        css = np.cumsum(U, axis=1) - 1.0
        idx = np.arange(1, k + 1)
        cond = U - css / idx > 0
        rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(W.shape[0]), rho] / (rho + 1)
        P = np.maximum(W - theta[:, None], 0.0)
        # Guard against rounding leaving the sum a few ulps off.
        P /= P.sum(axis=1, keepdims=True)
        out[rest] = P
    return out


@dataclass(frozen=True)
class EstimationResult:
    beta_hat: SimplexVector
    log_likelihood: float
    iterations: int
    converged: bool
    certificate: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.log_likelihood):
            raise NumericalError("log-likelihood is not finite")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be nonnegative")

    def to_dict(self) -> dict:
        d = {
            "beta_hat": self.beta_hat.tolist(),
            "log_likelihood": float(self.log_likelihood),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "certificate": None if self.certificate is None else float(self.certificate),
        }
        if self.metadata:
            d["metadata"] = to_jsonable(self.metadata)
        return d


def to_jsonable(obj):
    """Recursively convert numpy containers/scalars into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, SimplexVector):
        return obj.tolist()
    if isinstance(obj, DiscreteDistribution):
        return obj.to_dict()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def read_matrix_csv(path) -> np.ndarray:
    """Read a headerless comma-separated numeric matrix."""
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from exc


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        for row in M:
            fh.write(",".join(format(float(x), ".17g") for x in row) + "\n")


def read_distribution_json(path) -> DiscreteDistribution | list[DiscreteDistribution]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, list):
        return [DiscreteDistribution.from_dict(d) for d in data]
    if isinstance(data, dict) and "components" in data:
        return [DiscreteDistribution.from_dict(d) for d in data["components"]]
    return DiscreteDistribution.from_dict(data)


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError as exc:
        raise InvalidInputError(f"cannot parse vector {text!r}") from exc
