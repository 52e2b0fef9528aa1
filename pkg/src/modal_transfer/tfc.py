"""Transfer feature criterion: pick features that classify well and match in mode shape.

A candidate subset ``v_s`` of source modes is scored by

    -L(v_s) + lambda * d_MAC(v_s, v_t)

where ``L`` is the cross-validated 1-NN error on the source and ``v_t`` pairs
each chosen source mode with its highest-MAC target mode.  Subsets whose
pairing sends two source modes to one target mode are infeasible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .adaptation import AlignmentStats
from .errors import InfeasibleCandidateError, InvalidConfigError, NoFeasibleSubsetError
from .population import TransferTask
from .similarity import ModePairing, mac_matrix, pair_modes

log = logging.getLogger(__name__)

__all__ = [
    "TfcConfig",
    "SearchPolicy",
    "HyperGrid",
    "FeatureSelection",
    "GridSearchResult",
    "SourceLoss",
    "source_loss_for",
    "tfc_objective",
    "select_features",
    "multitask_grid_search",
    "MAX_CANDIDATES",
]

MAX_CANDIDATES = 200_000


@dataclass(frozen=True)
class SearchPolicy:
    """How colliding target indices are handled.  Only hard exclusion is supported."""

    duplicate_handling: str = "hard-constraint"
    strategy: str = "exhaustive"

    def __post_init__(self):
        if self.duplicate_handling != "hard-constraint":
            raise InvalidConfigError("only 'hard-constraint' duplicate handling is implemented")
        if self.strategy != "exhaustive":
            raise InvalidConfigError("only exhaustive search is implemented")


@dataclass(frozen=True)
class TfcConfig:
    D: int = 7
    lam: float = 0.1
    folds: int = 5
    policy: SearchPolicy = SearchPolicy()
    max_candidates: int = MAX_CANDIDATES

    def __post_init__(self):
        if self.D < 1:
            raise InvalidConfigError("D must be >= 1")
        if self.lam < 0:
            raise InvalidConfigError("lambda must be >= 0")
        if self.folds < 2:
            raise InvalidConfigError("need at least 2 folds")


@dataclass(frozen=True)
class HyperGrid:
    lambda_values: tuple = (0.01, 0.1, 1.0)
    D_values: tuple = tuple(range(2, 11))
    tasks: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "lambda_values", tuple(sorted(float(v) for v in self.lambda_values)))
        object.__setattr__(self, "D_values", tuple(sorted(int(v) for v in self.D_values)))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.lambda_values or not self.D_values:
            raise InvalidConfigError("hyperparameter grid is empty")

    def points(self):
        """Grid points ordered by the tie-break: smaller D first, then smaller lambda."""
        return [(D, lam) for D in self.D_values for lam in self.lambda_values]


class SourceLoss:
    """Cross-validated 1-NN error of source training data on feature groups.

    Parameters
    ----------
    X : (n, d) array
        Standardised source training features.
    y : (n,) labels
    groups : list of index arrays, optional
        Columns belonging to each selectable unit (mode).  Defaults to one
        column per unit.
    folds : int
        Stratified folds; reduced when a class has fewer samples.

    Losses are memoised per subset, so one instance can serve every task that
    shares the source.
    """

    def __init__(self, X, y, groups=None, folds: int = 5):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.groups = [np.arange(X.shape[1])[[j]] for j in range(X.shape[1])] if groups is None \
            else [np.atleast_1d(np.asarray(g, dtype=int)) for g in groups]
        self.n_units = len(self.groups)
        min_count = np.bincount(np.unique(y, return_inverse=True)[1]).min()
        self.folds = max(2, min(folds, int(min_count)))
        splitter = StratifiedKFold(n_splits=self.folds)
        self._y = y
        self._parts = []
        for tr, te in splitter.split(X, y):
            # squared differences per unit, summed over the unit's columns
            diff = np.stack([((X[te][:, None, g] - X[tr][None, :, g]) ** 2).sum(axis=2)
                             for g in self.groups], axis=0)
            self._parts.append((tr, te, diff))
        self._cache = {}

    def __call__(self, subset) -> float:
        key = tuple(int(i) for i in subset)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        errors = 0
        for tr, te, diff in self._parts:
            d = diff[list(key)].sum(axis=0)
            errors += int(np.sum(self._y[tr][d.argmin(axis=1)] != self._y[te]))
        loss = errors / self._y.size
        self._cache[key] = loss
        return loss


def source_loss_for(task: TransferTask, groups=None, folds: int = 5) -> SourceLoss:
    """SourceLoss on the task's NCA-standardised source training split."""
    src = task.source
    X, y = src.train()
    normal = src.features[src.normal_mask & src.train_mask]
    stats = AlignmentStats(normal.mean(0), normal.std(0), normal.mean(0), normal.std(0))
    return SourceLoss(stats.standardize_source(X), y, groups=groups, folds=folds)


@dataclass(frozen=True)
class FeatureSelection:
    source_indices: tuple
    target_indices: tuple
    score: float
    pairing: ModePairing = field(compare=False)
    source_loss: float = 0.0
    mac_discrepancy: float = 0.0
    n_feasible: int = 0

    def columns(self, groups_s=None, groups_t=None):
        """Feature columns of the source and target for the selected modes."""
        def expand(idx, groups):
            if groups is None:
                return np.asarray(idx, dtype=int)
            return np.concatenate([np.atleast_1d(groups[i]) for i in idx]).astype(int)
        return expand(self.source_indices, groups_s), expand(self.target_indices, groups_t)


def tfc_objective(task: Optional[TransferTask], v_s, v_t, lam: float, loss,
                  mac: Optional[np.ndarray] = None) -> float:
    """Score of one feasible candidate pairing.

    ``loss`` is a :class:`SourceLoss` (or any callable on the subset).
    """
    v_s = tuple(int(i) for i in v_s)
    v_t = tuple(int(i) for i in v_t)
    if len(v_s) != len(v_t) or not v_s:
        raise InfeasibleCandidateError("source and target index vectors must be non-empty and equal length")
    if len(set(v_s)) != len(v_s) or len(set(v_t)) != len(v_t):
        raise InfeasibleCandidateError(f"duplicate indices in pairing {v_s} -> {v_t}")
    M = mac_matrix(task.source_modal, task.target_modal) if mac is None else np.asarray(mac)
    d_mac = float(M[list(v_s), list(v_t)].mean())
    return -loss(v_s) + lam * d_mac


def select_features(task: Optional[TransferTask], config: TfcConfig, loss=None, mac=None,
                    n_units: Optional[int] = None) -> FeatureSelection:
    """Exhaustively search size-``D`` subsets of source modes.

    Ties keep the lexicographically smallest ``v_s``.

    Parameters
    ----------
    task : TransferTask
        Supplies source data and modal models; optional when both ``loss`` and
        ``mac`` are given.
    loss : callable, optional
        Source loss on a subset; built from ``task`` if omitted.
    mac : array, optional
        Source-by-target MAC matrix; built from ``task`` if omitted.
    """
    M = mac_matrix(task.source_modal, task.target_modal) if mac is None else np.asarray(mac)
    if loss is None:
        loss = source_loss_for(task, folds=config.folds)
    n = M.shape[0] if n_units is None else n_units
    D = config.D
    if D > n:
        raise InvalidConfigError(f"D={D} exceeds the {n} available modes")
    if math.comb(n, D) > config.max_candidates:
        raise InvalidConfigError(
            f"{math.comb(n, D)} candidates exceed the exhaustive-search budget {config.max_candidates}")
    best = None
    n_feasible = 0
    for subset in combinations(range(n), D):
        pairing = pair_modes(M, subset)
        if not pairing.feasible:
            continue
        n_feasible += 1
        d_mac = float(pairing.mac_values.mean())
        L = loss(subset)
        score = -L + config.lam * d_mac
        if best is None or score > best[0]:
            best = (score, pairing, L, d_mac)
    if best is None:
        raise NoFeasibleSubsetError(f"every size-{D} subset maps two source modes onto one target mode")
    score, pairing, L, d_mac = best
    return FeatureSelection(tuple(pairing.source_indices.tolist()), tuple(pairing.target_indices.tolist()),
                            float(score), pairing, float(L), d_mac, n_feasible)


@dataclass(frozen=True)
class GridSearchResult:
    best: tuple
    losses: dict
    failures: dict

    @property
    def D(self) -> int:
        return self.best[0]

    @property
    def lam(self) -> float:
        return self.best[1]


def multitask_grid_search(grid: HyperGrid, pipeline: Callable) -> GridSearchResult:
    """Pick ``(D, lambda)`` minimising the summed target 0-1 loss over tasks.

    ``pipeline(task, D, lam)`` returns ``(n_errors, n_target)``.  A task that
    raises is charged ``n_target`` errors, the worst case, where
    ``n_target`` comes from the task's target test split.
    """
    if not grid.tasks:
        raise InvalidConfigError("grid search needs at least one validation task")
    losses, failures = {}, {}
    for D, lam in grid.points():
        total = 0
        for task in grid.tasks:
            try:
                errors, _ = pipeline(task, D, lam)
            except Exception as exc:  # noqa: BLE001 - any pipeline failure is penalised
                errors = int((~task.target.train_mask).sum())
                failures.setdefault((D, lam), []).append(f"{task.task_id}: {exc}")
                log.warning("grid point D=%d lam=%g failed on task %s: %s", D, lam, task.task_id, exc)
            total += errors
        losses[(D, lam)] = total
    best = min(grid.points(), key=lambda p: (losses[p], p[0], p[1]))
    return GridSearchResult(best, losses, failures)
