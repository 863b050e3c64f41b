"""Exact t-SNE for the 2D labeling canvas.

Implements the standard formulation from scratch: per-row Gaussian
bandwidths found by binary search to hit a target perplexity, symmetrized
input affinities, Student-t (one degree of freedom) output affinities, and
plain gradient descent with a momentum schedule and an early-exaggeration
phase.  Everything is O(N^2) and deterministic for a fixed seed; sessions
are at most a few thousand objects, so there is no approximation layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    DegenerateDistances,
    NumericalDivergence,
    PerplexityTooLarge,
    SchemaError,
    TooFewPoints,
)
from .jsonio import dump_json, load_json

Q_FLOOR = 1e-12
_MAX_SEARCH_STEPS = 200
_PERPLEXITY_TOL = 1e-6


@dataclass(frozen=True)
class TsneParams:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration_factor: float = 12.0
    early_exaggeration_iters: int = 250
    learning_rate: float = 200.0
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    momentum_switch_iter: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.perplexity <= 0:
            raise SchemaError("perplexity must be positive")
        if self.learning_rate <= 0:
            raise SchemaError("learning_rate must be positive")
        for m in (self.initial_momentum, self.final_momentum):
            if not 0.0 <= m < 1.0:
                raise SchemaError("momentum values must lie in [0, 1)")
        if self.iterations < self.early_exaggeration_iters:
            raise SchemaError("iterations must cover the early-exaggeration phase")
        if min(self.iterations, self.early_exaggeration_iters,
               self.momentum_switch_iter) < 0:
            raise SchemaError("iteration counts must be non-negative")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "perplexity": self.perplexity,
            "iterations": self.iterations,
            "early_exaggeration_factor": self.early_exaggeration_factor,
            "early_exaggeration_iters": self.early_exaggeration_iters,
            "learning_rate": self.learning_rate,
            "initial_momentum": self.initial_momentum,
            "final_momentum": self.final_momentum,
            "momentum_switch_iter": self.momentum_switch_iter,
            "seed": self.seed,
        }

    @staticmethod
    def from_json_dict(doc: dict[str, Any]) -> "TsneParams":
        known = {f for f in TsneParams.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown t-SNE parameter(s): {sorted(unknown)}")
        return TsneParams(**doc)


@dataclass
class ProjectionLayout:
    """2D coordinates per object, row-aligned with object_ids.

    ``post_exaggeration_kl`` is an in-memory diagnostic (the objective right
    after the early-exaggeration phase ends); it is not serialized and does
    not take part in equality.
    """

    object_ids: list[str]
    points: np.ndarray
    final_kl: float
    post_exaggeration_kl: float = field(default=math.nan, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (len(self.object_ids), 2):
            raise SchemaError(
                f"points shape {pts.shape} does not match {len(self.object_ids)} objects"
            )
        if not np.all(np.isfinite(pts)):
            raise NumericalDivergence("layout contains non-finite coordinates")
        self.points = pts

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProjectionLayout):
            return NotImplemented
        return (
            self.object_ids == other.object_ids
            and np.array_equal(self.points, other.points)
            and self.final_kl == other.final_kl
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "object_ids": list(self.object_ids),
            "points": [[float(x), float(y)] for x, y in self.points],
            "final_kl": float(self.final_kl),
        }

    @staticmethod
    def from_json_dict(doc: dict[str, Any]) -> "ProjectionLayout":
        try:
            return ProjectionLayout(
                object_ids=[str(v) for v in doc["object_ids"]],
                points=np.asarray(doc["points"], dtype=np.float64),
                final_kl=float(doc["final_kl"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"bad layout document: {e}") from e


def save_layout(layout: ProjectionLayout, path: str | Path) -> None:
    dump_json(layout.to_json_dict(), path)


def load_layout(path: str | Path) -> ProjectionLayout:
    return ProjectionLayout.from_json_dict(load_json(path))


def pairwise_sq_distances(points: np.ndarray, block: int = 256) -> np.ndarray:
    """Squared Euclidean distances, accumulated coordinate-by-coordinate in a
    fixed order (no BLAS reduction), row-blocked to bound memory."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = pts[start:stop, None, :] - pts[None, :, :]
        np.sum(diff * diff, axis=-1, out=out[start:stop])
    return out


def _row_affinities(sq_dist_row: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Normalized Gaussian affinities of one row for precision ``beta`` and
    their entropy in nats.  The row must exclude the diagonal entry."""
    shifted = sq_dist_row - sq_dist_row.min()
    weights = np.exp(-beta * shifted)
    total = float(np.sum(weights))
    probs = weights / total
    # H = ln(sum w) + beta * E[d_shifted]; the distance shift cancels in the
    # normalized distribution but keeps the exponentials in range.
    entropy = math.log(total) + beta * float(np.sum(shifted * probs))
    return probs, entropy


def _calibrate_row(sq_dist_row: np.ndarray, target_entropy: float) -> np.ndarray:
    """Binary search (bracket expansion first) on the Gaussian precision so
    the row's entropy hits the target; at most 200 evaluations."""
    beta = 1.0
    beta_min = -math.inf
    beta_max = math.inf
    probs, entropy = _row_affinities(sq_dist_row, beta)
    steps = 1
    while abs(entropy - target_entropy) > _PERPLEXITY_TOL and steps < _MAX_SEARCH_STEPS:
        if entropy > target_entropy:
            beta_min = beta
            beta = beta * 2.0 if math.isinf(beta_max) else (beta + beta_max) / 2.0
        else:
            beta_max = beta
            beta = beta / 2.0 if math.isinf(beta_min) else (beta + beta_min) / 2.0
        probs, entropy = _row_affinities(sq_dist_row, beta)
        steps += 1
    return probs


def conditional_affinities(embeddings: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-stochastic Gaussian affinities with per-row bandwidths calibrated
    so every row's perplexity (2^entropy) matches the target within 1e-3."""
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    if perplexity > (n - 1) / 3.0:
        raise PerplexityTooLarge(
            f"perplexity {perplexity} exceeds (N-1)/3 = {(n - 1) / 3.0:.3f}"
        )
    sq_dist = pairwise_sq_distances(X)
    off_diag = ~np.eye(n, dtype=bool)
    if not np.any(sq_dist[off_diag]):
        raise DegenerateDistances("all pairwise distances are zero")

    target_entropy = math.log(perplexity)
    P = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        row = sq_dist[i, off_diag[i]]
        P[i, off_diag[i]] = _calibrate_row(row, target_entropy)
    return P


def symmetrize(conditional: np.ndarray) -> np.ndarray:
    """Joint affinities P = (P_cond + P_cond^T) / (2N); sums to 1."""
    P = np.asarray(conditional, dtype=np.float64)
    n = P.shape[0]
    return (P + P.T) / (2.0 * n)


def kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    """KL(P || Q) in nats over pair distributions, with 0*log(0/q) = 0 and Q
    floored at 1e-12."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.maximum(np.asarray(Q, dtype=np.float64), Q_FLOOR)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def _student_t_weights(Y: np.ndarray) -> np.ndarray:
    """Unnormalized Student-t (nu=1) affinities 1/(1+d^2), zero diagonal."""
    sq_dist = pairwise_sq_distances(Y)
    weights = 1.0 / (1.0 + sq_dist)
    np.fill_diagonal(weights, 0.0)
    return weights


def tsne_project(
    embeddings: np.ndarray,
    params: TsneParams = TsneParams(),
    object_ids: Sequence[str] | None = None,
) -> ProjectionLayout:
    """Project embeddings to 2D by gradient descent on KL(P || Q).

    The requested perplexity is clamped to (N-1)/3.  Deterministic for a
    fixed seed.  Raises NumericalDivergence if any coordinate leaves the
    finite range.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    n = X.shape[0]
    ids = [str(i) for i in range(n)] if object_ids is None else [str(v) for v in object_ids]
    if len(ids) != n:
        raise SchemaError(f"{len(ids)} object ids for {n} embeddings")

    perplexity = min(params.perplexity, (n - 1) / 3.0)
    P = symmetrize(conditional_affinities(X, perplexity))

    rng = np.random.default_rng(params.seed)
    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(Y)

    P_run = P * params.early_exaggeration_factor if params.early_exaggeration_iters > 0 else P
    post_exaggeration_kl = math.nan

    for t in range(params.iterations):
        if t == params.early_exaggeration_iters:
            P_run = P
            weights = _student_t_weights(Y)
            post_exaggeration_kl = kl_divergence(P, np.maximum(weights / weights.sum(), Q_FLOOR))

        weights = _student_t_weights(Y)
        Q = np.maximum(weights / weights.sum(), Q_FLOOR)

        # grad_i = 4 * sum_j (p_ij - q_ij) w_ij (y_i - y_j)
        WPQ = (P_run - Q) * weights
        grad = 4.0 * (Y * WPQ.sum(axis=1)[:, None] - WPQ @ Y)

        momentum = (
            params.initial_momentum
            if t < params.momentum_switch_iter
            else params.final_momentum
        )
        velocity = momentum * velocity - params.learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

        if not np.all(np.isfinite(Y)):
            raise NumericalDivergence(f"non-finite coordinates at iteration {t}")

    weights = _student_t_weights(Y)
    final_kl = kl_divergence(P, np.maximum(weights / weights.sum(), Q_FLOOR))
    if math.isnan(post_exaggeration_kl):
        # Degenerate schedule: exaggeration never ended before the last step.
        post_exaggeration_kl = final_kl
    return ProjectionLayout(
        object_ids=ids,
        points=Y,
        final_kl=final_kl,
        post_exaggeration_kl=post_exaggeration_kl,
    )
