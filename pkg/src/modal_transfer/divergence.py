"""Sample-based distribution discrepancies: MMD, joint MMD and proxy A-distance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.model_selection import train_test_split
from sklearn.svm import SVC

from .errors import DegenerateScaleError, InvalidInputError, MissingClassError

__all__ = ["KernelSpec", "median_heuristic", "rbf_kernel", "mmd", "pad", "jmmd", "PAD_C"]

MEDIAN = "median-heuristic"
PAD_C = 1.0


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian RBF kernel ``exp(-|x - y|^2 / (2 l^2))``.

    ``length_scale`` is a positive number or ``"median-heuristic"``, in which
    case it is resolved from the data at hand.  ``median_mode`` chooses
    between pooled pairwise distances and cross-domain distances only.
    """

    length_scale: Union[float, str] = MEDIAN
    median_mode: str = "pooled"

    def __post_init__(self):
        if self.length_scale != MEDIAN:
            ls = float(self.length_scale)
            if not ls > 0 or not np.isfinite(ls):
                raise DegenerateScaleError(f"length scale must be positive, got {self.length_scale}")
            object.__setattr__(self, "length_scale", ls)
        if self.median_mode not in ("pooled", "cross"):
            raise ValueError("median_mode must be 'pooled' or 'cross'")

    def resolve(self, X_s, X_t) -> "KernelSpec":
        if self.length_scale != MEDIAN:
            return self
        return KernelSpec(median_heuristic(X_s, X_t, mode=self.median_mode), self.median_mode)


def _as2d(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def median_heuristic(X_s, X_t, mode: str = "pooled") -> float:
    """Median Euclidean distance between distinct points.

    ``mode="pooled"`` uses all pairs of the combined sample, ``"cross"`` only
    source-target pairs.
    """
    A, B = _as2d(X_s), _as2d(X_t)
    if mode == "pooled":
        P = np.vstack([A, B])
        if P.shape[0] < 2:
            raise InvalidInputError("need at least two points")
        d = pdist(P)
    elif mode == "cross":
        d = cdist(A, B).ravel()
    else:
        raise ValueError("mode must be 'pooled' or 'cross'")
    ls = float(np.median(d)) if d.size else 0.0
    if ls <= 0:
        raise DegenerateScaleError("median pairwise distance is zero (coincident points)")
    return ls


def rbf_kernel(A, B, length_scale: float) -> np.ndarray:
    return np.exp(-cdist(_as2d(A), _as2d(B), "sqeuclidean") / (2.0 * length_scale ** 2))


def mmd(X_s, X_t, kernel: KernelSpec = KernelSpec()) -> float:
    """Biased squared maximum mean discrepancy."""
    A, B = _as2d(X_s), _as2d(X_t)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InvalidInputError("both samples must be non-empty")
    ls = kernel.resolve(A, B).length_scale
    # the two cross terms are summed separately so that mmd(A, B) == mmd(B, A) exactly
    cross = rbf_kernel(A, B, ls).mean() + rbf_kernel(B, A, ls).mean()
    val = rbf_kernel(A, A, ls).mean() + rbf_kernel(B, B, ls).mean() - cross
    return float(max(val, 0.0))


def jmmd(X_s, y_s, X_t, y_t, kernel: KernelSpec = KernelSpec()) -> float:
    """Marginal MMD plus one class-conditional MMD per shared class.

    A median-heuristic kernel is resolved once on the full samples and reused
    for every term.  Needs target labels, so it is an evaluation tool only.
    """
    A, B = _as2d(X_s), _as2d(X_t)
    y_s, y_t = np.asarray(y_s), np.asarray(y_t)
    cs, ct = set(np.unique(y_s).tolist()), set(np.unique(y_t).tolist())
    if cs != ct:
        raise MissingClassError(cs ^ ct)
    k = kernel.resolve(A, B)
    total = mmd(A, B, k)
    for c in sorted(cs):
        total += mmd(A[y_s == c], B[y_t == c], k)
    return float(total)


def pad(X_s, X_t, split: float = 0.7, seed: int = 0, C: float = PAD_C) -> float:
    """Proxy A-distance ``2 (1 - 2 err)`` from an RBF-SVM domain classifier.

    The classifier trains on a stratified ``split`` fraction of the pooled
    data; ``err`` is its error on the remainder.  Clipped to ``[0, 2]``.
    """
    A, B = _as2d(X_s), _as2d(X_t)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InvalidInputError("PAD needs samples from both domains")
    X = np.vstack([A, B])
    y = np.r_[np.zeros(A.shape[0]), np.ones(B.shape[0])]
    try:
        Xtr, Xte, ytr, yte = train_test_split(X, y, train_size=split, random_state=seed, stratify=y)
    except ValueError as exc:
        raise InvalidInputError(f"cannot split for PAD: {exc}") from exc
    clf = SVC(C=C, kernel="rbf", gamma="scale").fit(Xtr, ytr)
    err = float(np.mean(clf.predict(Xte) != yte))
    return float(np.clip(2.0 * (1.0 - 2.0 * err), 0.0, 2.0))
