"""
Finitely supported probability distributions.

Provides the immutable DiscreteDistribution value and the primitive
transformations used throughout the package: Dirac and empirical
construction, pushforward through a linear map, convolution with a Dirac
(translation) and the t-fold product distribution. TrajectoryBatch holds
stacked noise trajectories, ordered latest-first [w_{t-1}; ...; w_0].

The true noise law is only assumed light-tailed; that assumption has no
finite-sample representation and is not checked here.
"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from config import DISTRIBUTION_CONFIG, format_row
from errors import CapExceededError, ConfigError, DimensionError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """
    Probability distribution supported on finitely many atoms.

    Attributes:
        atoms: (N, d) array, one atom per row, in insertion order
        weights: (N,) array of nonnegative masses summing to one
    """

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1) if weights.size == atoms.size else atoms.reshape(1, -1)
        if atoms.ndim != 2 or atoms.shape[0] == 0 or atoms.shape[1] == 0:
            raise DimensionError(f"atoms must be a non-empty (N, d) array, got shape {atoms.shape}")
        if weights.shape[0] != atoms.shape[0]:
            raise DimensionError(
                f"{weights.shape[0]} weights given for {atoms.shape[0]} atoms"
            )
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(weights))):
            raise DimensionError("atoms and weights must be finite")
        if np.any(weights < 0):
            raise DimensionError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > DISTRIBUTION_CONFIG["weight_sum_tol"]:
            raise DimensionError(f"weights sum to {weights.sum()!r}, expected 1")
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    def is_dirac(self) -> bool:
        return self.size == 1

    def mean(self) -> np.ndarray:
        return self.weights @ self.atoms

    def expectation(self, values: np.ndarray) -> float:
        """Weighted average of per-atom values."""
        return float(self.weights @ np.asarray(values, dtype=float))

    def allclose(self, other: "DiscreteDistribution", atol: float = 1e-12) -> bool:
        """Atom-by-atom comparison in storage order."""
        return (
            self.atoms.shape == other.atoms.shape
            and np.allclose(self.atoms, other.atoms, rtol=0.0, atol=atol)
            and np.allclose(self.weights, other.weights, rtol=0.0, atol=atol)
        )

    def __repr__(self) -> str:
        return f"DiscreteDistribution(N={self.size}, d={self.dim})"


def _as_vector(x: ArrayLike) -> np.ndarray:
    vector = np.asarray(x, dtype=float).reshape(-1)
    if vector.size == 0:
        raise DimensionError("vector of dimension 0")
    return vector


def dirac(x: ArrayLike) -> DiscreteDistribution:
    """Delta distribution at x."""
    vector = _as_vector(x)
    return DiscreteDistribution(vector.reshape(1, -1), np.ones(1))


def empirical(samples: Union[Iterable[ArrayLike], np.ndarray]) -> DiscreteDistribution:
    """
    Empirical distribution putting mass 1/n on each sample.

    Args:
        samples: n vectors of common dimension (rows of an (n, d) array)

    Returns:
        Uniform distribution on the samples, in the given order
    """
    rows = [np.asarray(s, dtype=float).reshape(-1) for s in samples]
    if not rows:
        raise DimensionError("empirical distribution needs at least one sample")
    dims = {row.size for row in rows}
    if len(dims) != 1 or 0 in dims:
        raise DimensionError(f"samples have inconsistent dimensions {sorted(dims)}")
    atoms = np.vstack(rows)
    n = atoms.shape[0]
    return DiscreteDistribution(atoms, np.full(n, 1.0 / n))


def merge_atoms(atoms: np.ndarray, weights: np.ndarray, tol: Optional[float] = None) -> DiscreteDistribution:
    """
    Merge atoms closer than tol, summing their weights.

    The first occurrence of each cluster keeps its position and coordinates,
    so the output order is stable.
    """
    tol = DISTRIBUTION_CONFIG["merge_tol"] if tol is None else tol
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    kept_atoms = []
    kept_weights = []
    for atom, weight in zip(atoms, weights):
        if kept_atoms:
            distances = np.linalg.norm(np.asarray(kept_atoms) - atom, axis=1)
            nearest = int(np.argmin(distances))
            if distances[nearest] <= tol:
                kept_weights[nearest] += weight
                continue
        kept_atoms.append(atom)
        kept_weights.append(weight)
    merged = np.asarray(kept_weights)
    if len(kept_atoms) < atoms.shape[0]:
        logger.debug("merged %d atoms into %d", atoms.shape[0], len(kept_atoms))
    return DiscreteDistribution(np.asarray(kept_atoms), merged / merged.sum())


def pushforward(A: ArrayLike, P: DiscreteDistribution) -> DiscreteDistribution:
    """
    Image distribution of P under x -> A x.

    Coincident images (within the merge tolerance) are merged.
    """
    matrix = np.atleast_2d(np.asarray(A, dtype=float))
    if matrix.shape[1] != P.dim:
        raise DimensionError(f"map has {matrix.shape[1]} columns, distribution has dimension {P.dim}")
    return merge_atoms(P.atoms @ matrix.T, P.weights)


def convolve_delta(y: ArrayLike, P: DiscreteDistribution) -> DiscreteDistribution:
    """Distribution of x + y for x ~ P: every atom shifted by y."""
    shift = _as_vector(y)
    if shift.size != P.dim:
        raise DimensionError(f"shift has dimension {shift.size}, distribution has dimension {P.dim}")
    return DiscreteDistribution(P.atoms + shift, P.weights)


def product_power(P: DiscreteDistribution, t: int, cap: Optional[int] = None) -> DiscreteDistribution:
    """
    t-fold product distribution of P.

    Atom (i_1, ..., i_t) stacks atoms i_1..i_t of P with i_1 varying slowest;
    its weight is the product of the component weights.

    Raises:
        CapExceededError: if N^t exceeds cap; use trajectory mode instead
    """
    if t < 1:
        raise DimensionError(f"product power needs t >= 1, got {t}")
    cap = DISTRIBUTION_CONFIG["product_cap"] if cap is None else cap
    count = P.size ** t
    if count > cap:
        raise CapExceededError(f"{P.size}^{t} = {count} atoms exceeds the cap of {cap}")
    indices = np.array(list(itertools.product(range(P.size), repeat=t)), dtype=int)
    atoms = P.atoms[indices].reshape(count, t * P.dim)
    weights = np.prod(P.weights[indices], axis=1)
    return DiscreteDistribution(atoms, weights / weights.sum())


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """
    N noise trajectories, each stacked latest-first as [w_{t-1}; ...; w_0].

    Attributes:
        trajectories: (N, t*r) array
        horizon: t
        noise_dim: r
    """

    trajectories: np.ndarray
    horizon: int
    noise_dim: int

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.trajectories, dtype=float))
        if self.horizon < 1 or self.noise_dim < 1:
            raise DimensionError("horizon and noise dimension must be positive")
        if data.shape[0] == 0 or data.shape[1] != self.horizon * self.noise_dim:
            raise DimensionError(
                f"trajectories must have length t*r = {self.horizon * self.noise_dim}, "
                f"got shape {data.shape}"
            )
        if not np.all(np.isfinite(data)):
            raise DimensionError("trajectories must be finite")
        object.__setattr__(self, "trajectories", _frozen(data))

    @classmethod
    def from_steps(cls, steps: np.ndarray) -> "TrajectoryBatch":
        """Build from an (N, t, r) array indexed in time order w_0..w_{t-1}."""
        steps = np.asarray(steps, dtype=float)
        if steps.ndim != 3:
            raise DimensionError(f"expected an (N, t, r) array, got shape {steps.shape}")
        n, t, r = steps.shape
        return cls(steps[:, ::-1, :].reshape(n, t * r), t, r)

    @property
    def size(self) -> int:
        return self.trajectories.shape[0]

    def step(self, k: int) -> np.ndarray:
        """All samples of w_k as an (N, r) array."""
        if not 0 <= k < self.horizon:
            raise DimensionError(f"step {k} outside horizon {self.horizon}")
        start = (self.horizon - 1 - k) * self.noise_dim
        return self.trajectories[:, start:start + self.noise_dim]

    def pooled(self) -> np.ndarray:
        """Every per-step sample of every trajectory as an (N*t, r) array."""
        return self.trajectories.reshape(-1, self.noise_dim)

    def to_distribution(self) -> DiscreteDistribution:
        return empirical(self.trajectories)


def read_samples_csv(path: Union[str, Path], header: bool = False) -> np.ndarray:
    """
    Read one sample (or stacked trajectory) per row from a CSV file.

    Raises:
        ConfigError: if the file is missing, empty or ragged
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"sample file not found: {path}")
    try:
        rows = np.loadtxt(path, delimiter=",", skiprows=1 if header else 0, ndmin=2)
    except ValueError as e:
        raise ConfigError(f"could not parse {path}: {e}") from e
    if rows.size == 0:
        raise ConfigError(f"sample file {path} has no rows")
    return rows


def write_samples_csv(path: Union[str, Path], rows: np.ndarray) -> None:
    """Write one row per sample with 17 significant digits."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(format_row(row) + "\n")
