"""A-posteriori regularization parameter choice by the balancing principle.

Reconstructions are computed on a geometric grid of regularization parameters.
For a hypothesized noise-propagation constant K, the adaptive rule keeps the
largest grid value whose reconstruction stays within a K-scaled tube of every
reconstruction at smaller parameters.  Sweeping K over a second geometric grid
and thresholding the resulting parameters yields the final choice together
with an estimate of the effective noise constant.  The procedure reads only
the grid reconstructions, their pairwise norms, and a reference noise level;
it never touches the unknown or the exact data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .inversion import GalerkinSystem, Reconstruction, solve_tikhonov


class BalancingGridError(ValueError):
    """Parameter grid violates its normalization."""


class BalancingSelectionError(RuntimeError):
    """The threshold rule could not select a parameter."""


@dataclass(frozen=True)
class BalancingConfig:
    """Grids for the parameter choice.

    The alpha grid is ``alpha0 * q**n`` for n = 0..N and must top out just
    above one (``alpha_{N-1} <= 1 < alpha_N``).  Leave ``N`` unset to size it
    automatically.  The hypothesis grid is ``k0 * p**j`` for j = 0..M.
    ``delta`` is the reference noise level entering the adaptive rule.
    """

    alpha0: float
    q: float
    k0: float
    p: float
    M: int
    delta: float
    N: int | None = None

    def __post_init__(self) -> None:
        if self.alpha0 <= 0.0 or self.alpha0 > 1.0:
            raise BalancingGridError(f"alpha0 must be in (0, 1], got {self.alpha0}")
        if self.q <= 1.0:
            raise BalancingGridError(f"q must exceed 1, got {self.q}")
        if self.p <= 1.0:
            raise BalancingGridError(f"p must exceed 1, got {self.p}")
        if self.k0 <= 0.0:
            raise BalancingGridError(f"k0 must be positive, got {self.k0}")
        if self.M < 1:
            raise BalancingGridError(f"M must be >= 1, got {self.M}")
        if self.delta < 0.0:
            raise BalancingGridError(f"delta must be nonnegative, got {self.delta}")
        if self.N is None:
            object.__setattr__(self, "N", unit_top_grid_length(self.alpha0, self.q))
        if self.N < 1:
            raise BalancingGridError(f"N must be >= 1, got {self.N}")


def unit_top_grid_length(alpha0: float, q: float) -> int:
    """Smallest N with ``alpha0 * q**N > 1 >= alpha0 * q**(N-1)``."""
    n = max(1, math.ceil(-math.log(alpha0) / math.log(q)))
    while alpha0 * q**n <= 1.0:
        n += 1
    while n > 1 and alpha0 * q ** (n - 1) > 1.0:
        n -= 1
    return n


def alpha_grid(config: BalancingConfig) -> np.ndarray:
    """The N+1 grid values, strictly increasing, normalized at the top.

    Raises :class:`BalancingGridError` when ``alpha_{N-1} <= 1 < alpha_N``
    fails, reporting the offending values.
    """
    grid = config.alpha0 * config.q ** np.arange(config.N + 1)
    if grid[-2] > 1.0 or grid[-1] <= 1.0:
        raise BalancingGridError(
            "grid top is not normalized: need alpha_{N-1} <= 1 < alpha_N, got "
            f"alpha_{config.N - 1} = {grid[-2]:.6e} and alpha_{config.N} = {grid[-1]:.6e}"
        )
    return grid


def k_grid(config: BalancingConfig) -> np.ndarray:
    """Hypothesis values ``k0 * p**j`` for j = 0..M."""
    return config.k0 * config.p ** np.arange(config.M + 1)


def threshold(config: BalancingConfig) -> float:
    """Smallest adaptive parameter considered trustworthy: 9*alpha0*((p^2+1)/(p-1))^2."""
    ratio = (config.p**2 + 1.0) / (config.p - 1.0)
    return 9.0 * config.alpha0 * ratio**2


def adaptive_alpha(
    K: float,
    grid: Sequence[float],
    norms: Callable[[int, int], float] | np.ndarray,
    delta: float,
) -> float:
    """Largest grid value whose reconstruction stays in the K-tube.

    Grid index n is admissible when, for every m < n, the distance between the
    reconstructions at positions n and m is at most
    ``K * delta * (3/sqrt(alpha_n) + 1/sqrt(alpha_m))``.  Index 0 is vacuously
    admissible, so the result is never below the grid bottom.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise BalancingGridError("empty parameter grid")
    if isinstance(norms, np.ndarray):
        dist = lambda n, m: norms[n, m]
    else:
        dist = norms
    inv_sqrt = 1.0 / np.sqrt(grid)
    best = grid[0]
    for n in range(1, grid.size):
        tube = K * delta * (3.0 * inv_sqrt[n] + inv_sqrt[:n])
        if all(dist(n, m) <= tube[m] for m in range(n)):
            best = grid[n]
    return float(best)


@dataclass(frozen=True)
class BalancingTrace:
    """Everything the selection consumed and produced, for replay and audit."""

    alphas: np.ndarray
    alpha_of_k: np.ndarray
    k_values: np.ndarray
    threshold: float
    selected_index: int  # smallest j with alpha(k_j) >= threshold
    alpha_plus: float
    K_estimate: float
    delta: float
    solutions: tuple[Reconstruction, ...] | None = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "alphas": self.alphas.tolist(),
            "alpha_of_k": self.alpha_of_k.tolist(),
            "k_values": self.k_values.tolist(),
            "threshold": self.threshold,
            "selected_index": self.selected_index,
            "alpha_plus": self.alpha_plus,
            "K_estimate": self.K_estimate,
            "delta": self.delta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def select_from_alpha_of_k(
    config: BalancingConfig,
    alpha_of_k: Sequence[float],
    alphas: Sequence[float] | None = None,
    solutions: tuple[Reconstruction, ...] | None = None,
) -> BalancingTrace:
    """Apply the threshold rule to an adaptive-parameter sequence.

    The smallest hypothesis whose parameter clears the threshold is the
    estimate's anchor; the final parameter and the reported noise constant
    come from the next hypothesis.  Errors out when nothing clears the
    threshold or the clearing happens only at the last hypothesis.
    """
    alpha_of_k = np.asarray(alpha_of_k, dtype=float)
    kvals = k_grid(config)
    if alpha_of_k.shape != kvals.shape:
        raise BalancingSelectionError(
            f"expected {kvals.size} adaptive parameters, got {alpha_of_k.size}"
        )
    thr = threshold(config)
    clearing = np.flatnonzero(alpha_of_k >= thr)
    if clearing.size == 0:
        raise BalancingSelectionError(
            f"no hypothesis clears threshold {thr:.4e}; largest adaptive parameter "
            f"is {alpha_of_k.max():.4e} (hypothesis grid too small or alpha grid mis-sized)"
        )
    # literal rule: the index of the minimal clearing value (first, under ties)
    i = int(clearing[np.argmin(alpha_of_k[clearing])])
    if i >= config.M:
        raise BalancingSelectionError(
            f"threshold cleared only at the last hypothesis k_{i}; extend the hypothesis grid"
        )
    return BalancingTrace(
        alphas=np.asarray(alphas, dtype=float) if alphas is not None else alpha_grid(config),
        alpha_of_k=alpha_of_k,
        k_values=kvals,
        threshold=thr,
        selected_index=i,
        alpha_plus=float(alpha_of_k[i + 1]),
        K_estimate=float(kvals[i + 1]),
        delta=config.delta,
        solutions=solutions,
    )


def select_alpha_plus(
    config: BalancingConfig, system: GalerkinSystem, rhs: np.ndarray
) -> BalancingTrace:
    """Full balancing run: solve on the grid, sweep hypotheses, threshold.

    All grid reconstructions are computed eagerly and cached on the trace;
    the adaptive rule then only needs their pairwise Gram-norm distances.
    """
    grid = alpha_grid(config)
    solutions = tuple(solve_tikhonov(system, rhs, a) for a in grid)
    coeffs = np.stack([sol.coefficients for sol in solutions])
    gram = coeffs @ system.G @ coeffs.T
    d2 = np.diag(gram)[:, None] + np.diag(gram)[None, :] - 2.0 * gram
    norms = np.sqrt(np.clip(d2, 0.0, None))
    kvals = k_grid(config)
    alpha_of_k = np.array(
        [adaptive_alpha(k, grid, norms, config.delta) for k in kvals]
    )
    return select_from_alpha_of_k(config, alpha_of_k, alphas=grid, solutions=solutions)
