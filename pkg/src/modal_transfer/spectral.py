"""Lumped mass-spring-damper chains and their modal properties.

A chain of ``n`` masses is joined by ``n + 1`` springs: spring 0 ties mass 0
to ground, spring ``i`` (``0 < i < n``) joins masses ``i - 1`` and ``i``, and
spring ``n`` ties the last mass to ground.  Extra ground springs may be
attached to any mass.  Dampers share the spring topology.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np
import scipy.linalg

from .errors import DegenerateDampingError, InvalidSpecError, NumericalError, ShapeError

__all__ = [
    "StructureSpec",
    "SystemMatrices",
    "ModalModel",
    "assemble_matrices",
    "undamped_modes",
    "damped_frequencies",
    "modal_damping_ratios",
    "frf_magnitude",
    "modal_stiffness",
    "modal_mass",
]

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class StructureSpec:
    """Physical parameters of one chain structure.

    Parameters
    ----------
    masses : (n,) array
        Lumped masses in kg.
    spring_k : (n + 1,) array
        Chain stiffnesses in N/m.  The two boundary springs may be zero
        (free end); inter-mass springs must be positive.
    ground_k : mapping of mass index to stiffness
        Additional connections to ground.
    damping_c : (n + 1,) array, optional
        Chain damper coefficients in Ns/m, same layout as ``spring_k``.
    ground_c : mapping, optional
        Dampers in parallel with the ground springs.
    damage : (spring index, reduction) or None
        Bookkeeping only; the reduction is already applied to ``spring_k``.
    """

    masses: np.ndarray
    spring_k: np.ndarray
    ground_k: Mapping[int, float] = field(default_factory=dict)
    damping_c: Optional[np.ndarray] = None
    ground_c: Mapping[int, float] = field(default_factory=dict)
    damage: Optional[tuple] = None

    def __post_init__(self):
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        spring_k = np.atleast_1d(np.asarray(self.spring_k, dtype=float))
        n = masses.size
        if n < 1:
            raise InvalidSpecError("a structure needs at least one mass")
        if spring_k.size != n + 1:
            raise InvalidSpecError(f"expected {n + 1} chain springs for {n} masses, got {spring_k.size}")
        damping = (np.zeros(n + 1) if self.damping_c is None
                   else np.atleast_1d(np.asarray(self.damping_c, dtype=float)))
        if damping.size != n + 1:
            raise InvalidSpecError(f"expected {n + 1} chain dampers, got {damping.size}")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "spring_k", spring_k)
        object.__setattr__(self, "damping_c", damping)
        object.__setattr__(self, "ground_k", {int(k): float(v) for k, v in self.ground_k.items()})
        object.__setattr__(self, "ground_c", {int(k): float(v) for k, v in self.ground_c.items()})

    @property
    def dof(self) -> int:
        return self.masses.size

    @property
    def ground_locations(self) -> tuple:
        return tuple(sorted(self.ground_k))

    def validate(self):
        if not np.all(np.isfinite(self.masses)) or np.any(self.masses <= 0):
            raise InvalidSpecError("masses must be finite and strictly positive")
        k = self.spring_k
        if not np.all(np.isfinite(k)) or np.any(k < 0) or np.any(k[1:-1] <= 0):
            raise InvalidSpecError("inter-mass stiffnesses must be > 0 and boundary stiffnesses >= 0")
        for idx, kg in self.ground_k.items():
            if not 0 <= idx < self.dof:
                raise InvalidSpecError(f"ground spring at mass {idx} is outside the chain")
            if not kg > 0:
                raise InvalidSpecError(f"ground stiffness at mass {idx} must be > 0")
        if np.any(self.damping_c < 0) or any(c < 0 for c in self.ground_c.values()):
            raise InvalidSpecError("damping coefficients must be >= 0")
        for idx in self.ground_c:
            if idx not in self.ground_k:
                raise InvalidSpecError(f"ground damper at mass {idx} has no matching spring")
        if k[0] == 0 and k[-1] == 0 and not self.ground_k:
            raise InvalidSpecError("structure is not attached to ground (rigid-body mode)")


@dataclass(frozen=True)
class SystemMatrices:
    mass: np.ndarray
    stiffness: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        M, K, C = (np.asarray(a, dtype=float) for a in (self.mass, self.stiffness, self.damping))
        n = M.shape[0]
        for name, a in (("mass", M), ("stiffness", K), ("damping", C)):
            if a.shape != (n, n):
                raise ShapeError(f"{name} matrix has shape {a.shape}, expected {(n, n)}")
        if np.any(M - np.diag(np.diag(M))) or np.any(np.diag(M) <= 0):
            raise InvalidSpecError("mass matrix must be diagonal with positive entries")
        for name, a in (("stiffness", K), ("damping", C)):
            scale = max(np.abs(a).max(), 1.0)
            if np.abs(a - a.T).max() > 1e-12 * scale:
                raise InvalidSpecError(f"{name} matrix is not symmetric")
        object.__setattr__(self, "mass", M)
        object.__setattr__(self, "stiffness", K)
        object.__setattr__(self, "damping", C)

    @property
    def dof(self) -> int:
        return self.mass.shape[0]


@dataclass(frozen=True)
class ModalModel:
    """Natural frequencies (rad/s, ascending) and mode shapes (one per column)."""

    frequencies: np.ndarray
    shapes: np.ndarray
    mass_normalized: bool = False

    def __post_init__(self):
        freqs = np.atleast_1d(np.asarray(self.frequencies, dtype=float))
        shapes = np.asarray(self.shapes)
        if np.iscomplexobj(shapes):
            raise TypeError("mode shapes must be real-valued")
        shapes = np.atleast_2d(shapes.astype(float))
        if shapes.shape[1] != freqs.size:
            raise ShapeError(f"{freqs.size} frequencies but {shapes.shape[1]} mode shapes")
        if np.any(freqs <= 0) or np.any(np.diff(freqs) < 0):
            raise InvalidSpecError("frequencies must be strictly positive and non-decreasing")
        if np.any(np.all(shapes == 0, axis=0)):
            raise InvalidSpecError("mode shapes must be nonzero")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "shapes", shapes)

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    @property
    def n_sensors(self) -> int:
        return self.shapes.shape[0]

    def to_json(self) -> str:
        # one inner list per mode
        return json.dumps({
            "frequencies": self.frequencies.tolist(),
            "shapes": self.shapes.T.tolist(),
            "mass_normalized": bool(self.mass_normalized),
        })

    @classmethod
    def from_json(cls, text: str) -> "ModalModel":
        obj = json.loads(text)
        shapes = np.asarray(obj["shapes"], dtype=float).T
        return cls(np.asarray(obj["frequencies"], dtype=float), shapes,
                   bool(obj.get("mass_normalized", False)))


def _chain_matrix(values, ground, n):
    A = np.zeros((n, n))
    idx = np.arange(n)
    A[idx, idx] += values[:-1] + values[1:]
    off = -values[1:-1]
    A[idx[:-1], idx[1:]] = off
    A[idx[1:], idx[:-1]] = off
    for j, v in ground.items():
        A[j, j] += v
    return A


def assemble_matrices(spec: StructureSpec) -> SystemMatrices:
    """Build the lumped mass, stiffness and damping matrices of a chain."""
    spec.validate()
    n = spec.dof
    K = _chain_matrix(spec.spring_k, spec.ground_k, n)
    C = _chain_matrix(spec.damping_c, spec.ground_c, n)
    return SystemMatrices(np.diag(spec.masses), K, C)


def _fix_signs(V):
    # first nonzero entry of each column positive
    for j in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, j]) > 1e-12 * np.abs(V[:, j]).max())
        if V[nz[0], j] < 0:
            V[:, j] = -V[:, j]
    return V


def undamped_modes(mats: SystemMatrices) -> ModalModel:
    """Solve ``K psi = w^2 M psi``; modes are mass-normalised and ascending."""
    K, M = mats.stiffness, mats.mass
    try:
        w2, V = scipy.linalg.eigh(K, M)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed (cond(K) = {np.linalg.cond(K):.3e}): {exc}") from exc
    if np.any(w2 <= 0):
        raise NumericalError(
            f"non-positive eigenvalue {w2.min():.3e}; cond(K) = {np.linalg.cond(K):.3e}")
    V = _fix_signs(V)
    KV = K @ V
    resid = np.abs(KV - (M @ V) * w2).max(axis=0) / np.abs(KV).max(axis=0)
    if np.any(resid > RESIDUAL_TOL):
        raise NumericalError(
            f"eigen-residual {resid.max():.3e} exceeds {RESIDUAL_TOL:g}; cond(K) = {np.linalg.cond(K):.3e}")
    return ModalModel(np.sqrt(w2), V, mass_normalized=True)


def damped_frequencies(mats: SystemMatrices) -> np.ndarray:
    """Damped natural frequencies from the first-order state-space form.

    The system is first scaled to mass-normalised coordinates so the state
    matrix is well balanced.  Each conjugate pair contributes ``|Im(lambda)|``
    once.
    """
    n = mats.dof
    s = 1.0 / np.sqrt(np.diag(mats.mass))
    Kt = mats.stiffness * np.outer(s, s)
    Ct = mats.damping * np.outer(s, s)
    if not np.any(Ct):
        w2 = scipy.linalg.eigvalsh(Kt)
        if np.any(w2 <= 0):
            raise NumericalError(f"non-positive eigenvalue {w2.min():.3e}")
        return np.sqrt(w2)
    A = np.zeros((2 * n, 2 * n))
    A[:n, n:] = np.eye(n)
    A[n:, :n] = -Kt
    A[n:, n:] = -Ct
    lam = scipy.linalg.eigvals(A)
    scale = np.abs(lam).max()
    oscillatory = np.abs(lam.imag) > 1e-9 * scale
    if oscillatory.sum() != 2 * n:
        # over-damped modes show up as real eigenvalue pairs; name them by position
        n_bad = (2 * n - oscillatory.sum()) // 2
        real_parts = np.sort(lam[~oscillatory].real)
        raise DegenerateDampingError(
            f"{n_bad} mode(s) have no oscillatory component (real eigenvalues {real_parts.tolist()})")
    wd = np.sort(lam.imag[lam.imag > 0])
    return wd


def modal_damping_ratios(modal: ModalModel, mats: SystemMatrices) -> np.ndarray:
    """Diagonal modal damping ratios ``psi' C psi / (2 w)`` for mass-normalised modes."""
    if not modal.mass_normalized:
        raise InvalidSpecError("modal damping ratios need mass-normalised modes")
    c = np.einsum("ij,ik,kj->j", modal.shapes, mats.damping, modal.shapes)
    return c / (2.0 * modal.frequencies)


def frf_magnitude(modal: ModalModel, mats: SystemMatrices, force_dof: int, response_dof: int,
                  freqs) -> np.ndarray:
    """Receptance magnitude by modal superposition at ``freqs`` (Hz).

    Modal frequencies are read as undamped natural frequencies (rad/s);
    damping enters through :func:`modal_damping_ratios`.
    """
    n = mats.dof
    if not (0 <= force_dof < n and 0 <= response_dof < n):
        raise ShapeError(f"force/response index outside 0..{n - 1}")
    f = np.asarray(freqs, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequencies must be positive")
    w = 2 * np.pi * f
    wn = modal.frequencies
    zeta = modal_damping_ratios(modal, mats)
    num = modal.shapes[force_dof] * modal.shapes[response_dof]
    den = wn[None, :] ** 2 - w[:, None] ** 2 + 2j * zeta[None, :] * wn[None, :] * w[:, None]
    return np.abs((num[None, :] / den).sum(axis=1))


def modal_stiffness(modal: ModalModel, K) -> np.ndarray:
    """``psi_i' K psi_i`` for every mode."""
    return np.einsum("ij,ik,kj->j", modal.shapes, np.asarray(K), modal.shapes)


def modal_mass(modal: ModalModel, M) -> np.ndarray:
    return np.einsum("ij,ik,kj->j", modal.shapes, np.asarray(M), modal.shapes)


def with_frequencies(modal: ModalModel, frequencies) -> ModalModel:
    """Copy of ``modal`` carrying different frequencies (e.g. damped ones)."""
    return replace(modal, frequencies=np.asarray(frequencies, dtype=float))
