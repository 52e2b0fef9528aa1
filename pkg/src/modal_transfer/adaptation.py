"""Domain adaptation transforms and the nearest-neighbour transfer classifier.

Normal condition alignment (NCA) standardises each domain by the statistics
of its undamaged data.  TCA and BDA learn a kernel embedding in which the
source and target samples (or their class-conditional parts) have small MMD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .divergence import KernelSpec, rbf_kernel
from .errors import (DegenerateFeatureError, IllConditionedError, InvalidInputError, RankError,
                     ShapeError)
from .population import LabeledDataset

log = logging.getLogger(__name__)

__all__ = [
    "AlignmentStats",
    "LatentMap",
    "nca",
    "nca_arrays",
    "pca_fit",
    "pca_apply",
    "tca",
    "bda",
    "knn_predict",
    "accuracy",
    "binary_accuracy",
]


@dataclass(frozen=True)
class AlignmentStats:
    """Per-feature mean and std of the normal-condition data in each domain."""

    mu_s_n: np.ndarray
    sigma_s_n: np.ndarray
    mu_t_n: np.ndarray
    sigma_t_n: np.ndarray

    def __post_init__(self):
        for name in ("sigma_s_n", "sigma_t_n"):
            sig = np.asarray(getattr(self, name), dtype=float)
            bad = np.flatnonzero(~(sig > 0))
            if bad.size:
                raise DegenerateFeatureError(
                    f"feature(s) {bad.tolist()} have zero normal-condition variance ({name})")

    def standardize_source(self, X):
        return (np.asarray(X, dtype=float) - self.mu_s_n) / self.sigma_s_n

    def standardize_target(self, X):
        return (np.asarray(X, dtype=float) - self.mu_t_n) / self.sigma_t_n

    def map_target(self, X):
        """Express target samples in source units by matching normal-condition moments."""
        return self.standardize_target(X) * self.sigma_s_n + self.mu_s_n


def _normal_stats(X, mask):
    N = np.asarray(X, dtype=float)[np.asarray(mask, dtype=bool)]
    if N.shape[0] == 0:
        raise InvalidInputError("no normal-condition samples to align on")
    return N.mean(axis=0), N.std(axis=0)


def nca_arrays(X_s, normal_s, X_t, normal_t):
    """NCA on raw arrays; returns standardised ``(Z_s, Z_t, stats)``.

    ``normal_s`` / ``normal_t`` mark the rows the statistics are computed
    from (normal condition, training partition).
    """
    X_s, X_t = np.asarray(X_s, dtype=float), np.asarray(X_t, dtype=float)
    if X_s.shape[1] != X_t.shape[1]:
        raise ShapeError(f"source has {X_s.shape[1]} features, target {X_t.shape[1]}")
    stats = AlignmentStats(*_normal_stats(X_s, normal_s), *_normal_stats(X_t, normal_t))
    return stats.standardize_source(X_s), stats.standardize_target(X_t), stats


def nca(source: LabeledDataset, target: LabeledDataset):
    """Normal condition alignment of two labelled datasets.

    Statistics come from the normal-condition rows of each training
    partition.  Both outputs are in standardised source units, so the target
    normal-condition training data has zero mean and unit std.
    """
    Zs, Zt, stats = nca_arrays(source.features, source.normal_mask & source.train_mask,
                               target.features, target.normal_mask & target.train_mask)
    return source.with_features(Zs), target.with_features(Zt), stats


@dataclass(frozen=True)
class LatentMap:
    """A fitted projection that embeds new samples.

    For PCA ``basis`` is a (d, D) loading matrix applied after subtracting
    ``mean``.  For TCA/BDA it holds the (n_ref, D) coefficients applied to
    kernel evaluations against ``reference_data``.
    """

    method: str
    basis: np.ndarray
    D: int
    mu: float = 0.0
    kernel: Optional[KernelSpec] = None
    reference_data: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    explained_variance_ratio: Optional[np.ndarray] = None
    history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.D < 1:
            raise RankError("latent dimension must be >= 1")
        if not np.all(np.isfinite(self.basis)):
            raise IllConditionedError("non-finite projection basis")

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.method == "PCA":
            return (X - self.mean) @ self.basis
        if X.shape[1] != self.reference_data.shape[1]:
            raise ShapeError(f"expected {self.reference_data.shape[1]} features, got {X.shape[1]}")
        return rbf_kernel(X, self.reference_data, self.kernel.length_scale) @ self.basis


def pca_fit(train, variance_kept: Union[float, int] = 0.9) -> LatentMap:
    """Principal components of ``train``.

    ``variance_kept`` is either a fraction in (0, 1], selecting the fewest
    components whose variance ratio reaches it, or an integer dimension.
    """
    X = np.asarray(train, dtype=float)
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    var = s ** 2
    tol = s.max(initial=0.0) * max(X.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    if rank == 0:
        raise RankError("training data has zero variance")
    ratio = var / var.sum()
    if isinstance(variance_kept, (int, np.integer)) and not isinstance(variance_kept, bool):
        D = int(variance_kept)
        if D > rank:
            raise RankError(f"requested {D} components but the data has rank {rank}")
    else:
        if not 0 < variance_kept <= 1:
            raise ValueError("variance fraction must lie in (0, 1]")
        D = min(int(np.searchsorted(np.cumsum(ratio), variance_kept - 1e-12) + 1), rank)
    V = Vt[:D].T.copy()
    _fix_signs(V)
    return LatentMap("PCA", V, D, mean=mean, explained_variance_ratio=ratio[:D])


def pca_apply(latent: LatentMap, X) -> np.ndarray:
    return latent.transform(X)


def _fix_signs(W):
    # largest-magnitude entry of each column made positive
    idx = np.abs(W).argmax(axis=0)
    signs = np.sign(W[idx, np.arange(W.shape[1])])
    signs[signs == 0] = 1.0
    W *= signs
    return W


def _mmd_matrix(ns, nt):
    e = np.r_[np.full(ns, 1.0 / ns), np.full(nt, -1.0 / nt)]
    return np.outer(e, e)


def _conditional_mmd_matrix(y_s, y_t_hat, classes):
    ns, nt = len(y_s), len(y_t_hat)
    M = np.zeros((ns + nt, ns + nt))
    for c in classes:
        src = y_s == c
        tgt = y_t_hat == c
        if not tgt.any() or not src.any():
            log.info("class %s has no pseudo-labelled target samples; term skipped", c)
            continue
        e = np.r_[src / src.sum(), -(tgt / tgt.sum())]
        M += np.outer(e, e)
    return M


def _solve_embedding(K, M, D, mu):
    n = K.shape[0]
    if D > n - 1:
        raise RankError(f"latent dimension {D} needs at least {D + 1} pooled samples, got {n}")
    norm = np.linalg.norm(M)
    if norm > 0:
        M = M / norm
    H = np.eye(n) - 1.0 / n
    A = K @ M @ K + mu * np.eye(n)
    B = K @ H @ K
    A = (A + A.T) / 2
    B = (B + B.T) / 2
    try:
        _, W = scipy.linalg.eigh(B, A, subset_by_index=[n - D, n - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(
            f"embedding eigenproblem failed ({exc}); increase the regularisation mu (now {mu})") from exc
    return _fix_signs(W[:, ::-1].copy())


def _fit_kernel_map(method, X_s, X_t, M, D, mu, kernel):
    X = np.vstack([X_s, X_t])
    k = kernel.resolve(X_s, X_t)
    K = rbf_kernel(X, X, k.length_scale)
    W = _solve_embedding(K, M, D, mu)
    return LatentMap(method, W, D, mu=mu, kernel=k, reference_data=X), K @ W


def tca(X_s, X_t, D: int = 9, mu: float = 0.1, kernel: KernelSpec = KernelSpec()):
    """Transfer component analysis.

    Returns the embedded source and target samples and the fitted
    :class:`LatentMap`, which can embed further samples.
    """
    X_s, X_t = np.asarray(X_s, dtype=float), np.asarray(X_t, dtype=float)
    if X_s.shape[1] != X_t.shape[1]:
        raise ShapeError("source and target feature counts differ")
    ns = X_s.shape[0]
    latent, Z = _fit_kernel_map("TCA", X_s, X_t, _mmd_matrix(ns, X_t.shape[0]), D, mu, kernel)
    return Z[:ns], Z[ns:], latent


def bda(X_s, y_s, X_t, D: int = 5, mu: float = 0.1, iterations: int = 10, balance: float = 1.0,
        kernel: KernelSpec = KernelSpec()):
    """Balanced distribution adaptation with iterative target pseudo-labels.

    Starts from 1-NN pseudo-labels in the input space; each iteration
    rebuilds the class-conditional MMD matrix from the latest pseudo-labels,
    re-solves the embedding and relabels the target.  ``balance`` weights the
    conditional term against the marginal one.

    Returns
    -------
    Z_s, Z_t, latent, pseudo_labels
        ``latent.history`` holds the pseudo-labels after each iteration.
    """
    X_s, X_t = np.asarray(X_s, dtype=float), np.asarray(X_t, dtype=float)
    y_s = np.asarray(y_s)
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if not 0 <= balance <= 1:
        raise ValueError("balance must lie in [0, 1]")
    if X_s.shape[1] != X_t.shape[1]:
        raise ShapeError("source and target feature counts differ")
    ns, nt = X_s.shape[0], X_t.shape[0]
    classes = np.unique(y_s)
    M0 = _mmd_matrix(ns, nt)
    y_hat = knn_predict(X_s, y_s, X_t)
    history = []
    for _ in range(iterations):
        M = (1.0 - balance) * M0 + balance * _conditional_mmd_matrix(y_s, y_hat, classes)
        latent, Z = _fit_kernel_map("BDA", X_s, X_t, M, D, mu, kernel)
        y_hat = knn_predict(Z[:ns], y_s, Z[ns:])
        history.append(y_hat)
    latent = replace(latent, history=tuple(history))
    return Z[:ns], Z[ns:], latent, y_hat


def knn_predict(train_X, train_y, test_X, k: int = 1) -> np.ndarray:
    """Euclidean k-nearest-neighbour labels.

    Distance ties go to the lower training index; for ``k > 1`` vote ties go
    to the label whose nearest member is closest.
    """
    A = np.atleast_2d(np.asarray(train_X, dtype=float))
    B = np.atleast_2d(np.asarray(test_X, dtype=float))
    y = np.asarray(train_y)
    if A.shape[0] == 0:
        raise InvalidInputError("empty training set")
    if A.shape[1] != B.shape[1]:
        raise ShapeError(f"train has {A.shape[1]} features, test {B.shape[1]}")
    if not 1 <= k <= A.shape[0]:
        raise ValueError(f"k={k} must lie in 1..{A.shape[0]}")
    d = cdist(B, A, "sqeuclidean")
    if k == 1:
        return y[d.argmin(axis=1)]
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    out = np.empty(B.shape[0], dtype=y.dtype)
    for i, row in enumerate(order):
        labels = y[row]
        uniq, first, counts = np.unique(labels, return_index=True, return_counts=True)
        best = np.flatnonzero(counts == counts.max())
        out[i] = uniq[best[np.argmin(first[best])]]
    return out


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise InvalidInputError("accuracy of an empty prediction set")
    return float(np.mean(pred == truth))


def binary_accuracy(tp, tn, fp, fn) -> float:
    """``(TP + TN) / (TP + TN + FP + FN)``."""
    total = tp + tn + fp + fn
    if total <= 0:
        raise InvalidInputError("no predictions counted")
    return (tp + tn) / total
