"""Mode-shape similarity between structures via the modal assurance criterion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IncompatibleSensorsError, InvalidPairingError, ShapeError, UndefinedMACError
from .spectral import ModalModel

__all__ = ["ModePairing", "mac", "mac_matrix", "mac_discrepancy", "pair_modes", "write_mac_csv"]


def _real(a, name):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        raise TypeError(f"{name} must be real-valued")
    return a.astype(float)


def mac(psi_s, psi_t) -> float:
    """MAC between two real mode shapes, ``(a.b)^2 / ((a.a)(b.b))``."""
    a = _real(psi_s, "psi_s").ravel()
    b = _real(psi_t, "psi_t").ravel()
    if a.shape != b.shape:
        raise IncompatibleSensorsError(f"mode shapes have {a.size} and {b.size} entries")
    aa, bb = a @ a, b @ b
    if aa == 0 or bb == 0:
        raise UndefinedMACError("MAC is undefined for a zero mode shape")
    return float(min((a @ b) ** 2 / (aa * bb), 1.0))


def _shapes(x):
    return x.shapes if isinstance(x, ModalModel) else np.atleast_2d(_real(x, "shapes"))


def mac_matrix(Psi_s, Psi_t) -> np.ndarray:
    """MAC between every source mode (rows) and target mode (columns).

    Accepts :class:`ModalModel` instances or arrays with one mode per column.
    """
    A, B = _shapes(Psi_s), _shapes(Psi_t)
    if A.shape[0] != B.shape[0]:
        raise IncompatibleSensorsError(
            f"source has {A.shape[0]} sensors, target {B.shape[0]}; co-locate sensors first")
    na, nb = (A * A).sum(axis=0), (B * B).sum(axis=0)
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedMACError("MAC is undefined for a zero mode shape")
    return np.minimum((A.T @ B) ** 2 / np.outer(na, nb), 1.0)


@dataclass(frozen=True)
class ModePairing:
    """Source mode indices matched to target mode indices.

    ``feasible`` is False when two source modes were matched to the same
    target mode; such a pairing cannot be used as a feature mapping.
    """

    source_indices: np.ndarray
    target_indices: np.ndarray
    mac_values: np.ndarray

    def __post_init__(self):
        vs = np.atleast_1d(np.asarray(self.source_indices, dtype=int))
        vt = np.atleast_1d(np.asarray(self.target_indices, dtype=int))
        vals = np.atleast_1d(np.asarray(self.mac_values, dtype=float))
        if not vs.shape == vt.shape == vals.shape or vs.ndim != 1:
            raise ShapeError("source, target and MAC vectors must have equal length")
        if len(set(vs.tolist())) != vs.size:
            raise InvalidPairingError(f"duplicate source modes in {vs.tolist()}")
        if np.any(vals < 0) or np.any(vals > 1):
            raise InvalidPairingError("MAC values must lie in [0, 1]")
        object.__setattr__(self, "source_indices", vs)
        object.__setattr__(self, "target_indices", vt)
        object.__setattr__(self, "mac_values", vals)

    def __len__(self):
        return self.source_indices.size

    @property
    def feasible(self) -> bool:
        return len(set(self.target_indices.tolist())) == self.target_indices.size

    @classmethod
    def from_indices(cls, mac_mat, source_indices, target_indices) -> "ModePairing":
        M = np.asarray(mac_mat)
        vs = np.asarray(source_indices, dtype=int)
        vt = np.asarray(target_indices, dtype=int)
        _check_bounds(M, vs, vt)
        return cls(vs, vt, M[vs, vt])

    def as_rows(self):
        return list(zip(self.source_indices.tolist(), self.target_indices.tolist(),
                        self.mac_values.tolist()))


def _check_bounds(M, vs, vt=None):
    if vs.size and (vs.min() < 0 or vs.max() >= M.shape[0]):
        raise InvalidPairingError(f"source indices {vs.tolist()} outside 0..{M.shape[0] - 1}")
    if vt is not None and vt.size and (vt.min() < 0 or vt.max() >= M.shape[1]):
        raise InvalidPairingError(f"target indices {vt.tolist()} outside 0..{M.shape[1] - 1}")


def mac_discrepancy(Psi_s, Psi_t, pairing: ModePairing) -> float:
    """Mean MAC over the paired modes; 1 means every paired shape matches."""
    if len(pairing) == 0:
        raise InvalidPairingError("pairing is empty")
    M = mac_matrix(Psi_s, Psi_t)
    _check_bounds(M, pairing.source_indices, pairing.target_indices)
    return float(M[pairing.source_indices, pairing.target_indices].mean())


def pair_modes(mac_mat, source_indices) -> ModePairing:
    """Match each source mode to its highest-MAC target mode.

    Ties go to the lowest target index.  Collisions are reported, not
    resolved; check :attr:`ModePairing.feasible`.
    """
    M = np.asarray(mac_mat, dtype=float)
    vs = np.atleast_1d(np.asarray(source_indices, dtype=int))
    _check_bounds(M, vs)
    vt = M[vs].argmax(axis=1)
    return ModePairing(vs, vt, M[vs, vt])


def write_mac_csv(mac_mat, path):
    """Long-format CSV (``source_mode,target_mode,mac``) for heatmap plotting."""
    M = np.asarray(mac_mat)
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_mode", "target_mode", "mac"])
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                w.writerow([i, j, repr(float(M[i, j]))])
