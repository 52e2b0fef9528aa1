"""Randomised populations of damaged chain structures and their datasets.

Every structure in a population shares the same beam-and-mass geometry and
differs only in where it is tied to ground and in random material scatter.
Damage is a crack in one inter-mass connection, reducing its stiffness by a
fixed fraction.  Features are damped natural frequencies in Hz.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.stats import spearmanr

from .errors import (InvalidConfigError, InvalidCrackError, InvalidDamageError, NumericalError,
                     ParseError)
from .spectral import (ModalModel, StructureSpec, assemble_matrices, damped_frequencies,
                       undamped_modes)

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "PopulationConfig",
    "LabeledDataset",
    "PopulationMember",
    "TransferTask",
    "sample_structure",
    "sample_instance",
    "apply_damage",
    "crack_reduction_factor",
    "generate_population",
    "build_tasks",
    "mirror_set",
    "is_symmetric_pair",
    "SensitivityCurves",
    "sensitivity_demo",
]

SCHEMA_VERSION = 1
MAX_REDRAWS = 100

# stream tags for SeedSequence spawn keys
_TEMPLATE, _SAMPLE, _REFERENCE = 0, 1, 2


@dataclass(frozen=True)
class PopulationConfig:
    """Parameters of a simulated population.

    Gaussian second parameters are read as variances unless
    ``gaussian_spread="std"``.  Elastic modulus is given in GPa, density in
    kg/m^3 and the damping Gamma distribution as (shape, scale) in Ns/m.
    """

    n_structures: int = 20
    dof: int = 10
    ground_candidates: tuple = (2, 3, 4, 5, 6, 7)
    ground_count_range: tuple = (1, 3)
    samples_per_class: int = 100
    geometry: dict = field(default_factory=lambda: {"l": 5.6, "w": 1.1, "t": 6.0})
    crack: dict = field(default_factory=lambda: {"length": 0.1, "location": 2.8})
    crack_decay: float = 0.667
    damage_reduction: Optional[float] = None
    E_dist: tuple = (20.0, 1e-9)
    rho_dist: tuple = (2300.0, 20.0)
    c_dist: tuple = (8.0, 0.8)
    gaussian_spread: str = "variance"
    train_fraction: float = 0.5
    seed: int = 159
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for name in ("ground_candidates", "ground_count_range", "E_dist", "rho_dist", "c_dist"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "geometry", dict(self.geometry))
        object.__setattr__(self, "crack", dict(self.crack))
        self.validate()

    def validate(self):
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidConfigError(
                f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        if self.n_structures < 1 or self.dof < 2 or self.samples_per_class < 1:
            raise InvalidConfigError("n_structures, samples_per_class must be >= 1 and dof >= 2")
        if any(not 0 <= g < self.dof for g in self.ground_candidates):
            raise InvalidConfigError(f"ground candidates {self.ground_candidates} outside 0..{self.dof - 1}")
        if len(set(self.ground_candidates)) != len(self.ground_candidates):
            raise InvalidConfigError("ground candidates contain duplicates")
        lo, hi = self.ground_count_range
        if not 0 <= lo <= hi:
            raise InvalidConfigError(f"bad ground_count_range {self.ground_count_range}")
        if hi > len(self.ground_candidates):
            raise InvalidConfigError(
                f"up to {hi} ground connections requested but only "
                f"{len(self.ground_candidates)} candidate locations")
        if set(self.geometry) != {"l", "w", "t"} or min(self.geometry.values()) <= 0:
            raise InvalidConfigError("geometry needs positive l, w, t")
        if self.gaussian_spread not in ("variance", "std"):
            raise InvalidConfigError("gaussian_spread must be 'variance' or 'std'")
        if self.damage_reduction is not None and not 0 < self.damage_reduction < 1:
            raise InvalidConfigError("damage_reduction must lie in (0, 1)")
        if not 0 < self.train_fraction < 1:
            raise InvalidConfigError("train_fraction must lie in (0, 1)")
        if min(self.c_dist) <= 0:
            raise InvalidConfigError("Gamma shape and scale must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise InvalidConfigError("seed must be an unsigned 64-bit integer")

    @property
    def n_classes(self) -> int:
        # normal plus one class per inter-mass spring
        return self.dof

    @property
    def class_names(self) -> list:
        return ["normal"] + [f"spring{i}" for i in range(1, self.dof)]

    def reduction(self) -> float:
        if self.damage_reduction is not None:
            return float(self.damage_reduction)
        return crack_reduction_factor(self.crack, self.geometry, decay=self.crack_decay)

    def _spread(self, value):
        return np.sqrt(value) if self.gaussian_spread == "variance" else value

    def E_params(self):
        """Mean and standard deviation of E in Pa."""
        mean, second = self.E_dist
        return mean * 1e9, self._spread(second) * 1e9

    def rho_params(self):
        mean, second = self.rho_dist
        return mean, self._spread(second)

    # serialisation

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, tuple):
                out[key] = list(val)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PopulationConfig":
        """Read a JSON or TOML config.  A ``[population]`` table is accepted in TOML."""
        path = Path(path)
        text = path.read_text()
        try:
            if path.suffix.lower() == ".toml":
                data = tomllib.loads(text)
            else:
                data = json.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ParseError(f"{path}: {exc}") from exc
        if "population" in data and isinstance(data["population"], dict):
            data = data["population"]
        return cls.from_dict(data)

    def dump(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def cantilever_stiffness(E, geometry) -> np.ndarray:
    """Tip stiffness ``3 E I / l^3`` of a rectangular cantilever."""
    l, w, t = geometry["l"], geometry["w"], geometry["t"]
    return 3.0 * np.asarray(E) * (w * t ** 3 / 12.0) / l ** 3


def lumped_mass(rho, geometry) -> np.ndarray:
    return np.asarray(rho) * geometry["l"] * geometry["w"] * geometry["t"]


def crack_reduction_factor(crack: dict, beam: dict, *, decay: float = 0.667) -> float:
    """Fractional tip-stiffness loss of a cantilever with an open edge crack.

    The second moment of area recovers exponentially away from the crack,
    ``EI(x) = EI0 / (1 + C exp(-2 decay |x - x_c| / t))`` with
    ``C = (I0 - Ic) / Ic``.  The tip flexibility ``int (l - x)^2 / EI dx`` is
    integrated numerically and compared with the intact ``l^3 / 3 EI0``.

    Parameters
    ----------
    crack : dict
        ``length`` (crack depth through the thickness, m) and ``location``
        (distance from the root, m).
    beam : dict
        ``l``, ``w``, ``t`` in m.
    """
    a = float(crack["length"])
    loc = float(crack["location"])
    l, w, t = (float(beam[k]) for k in ("l", "w", "t"))
    if not 0 <= loc <= l:
        raise InvalidCrackError(f"crack location {loc} m is outside the beam [0, {l}]")
    if not 0 <= a < t:
        raise InvalidCrackError(f"crack depth {a} m must lie in [0, {t})")
    if a == 0:
        return 0.0
    I0 = w * t ** 3 / 12.0
    Ic = w * (t - a) ** 3 / 12.0
    C = (I0 - Ic) / Ic

    def integrand(x):
        return (l - x) ** 2 * (1.0 + C * np.exp(-2.0 * decay * abs(x - loc) / t))

    flex, _ = quad(integrand, 0.0, l, points=[loc], epsabs=0.0, epsrel=1e-13, limit=200)
    return float(1.0 - (l ** 3 / 3.0) / flex)


def _stream(config: PopulationConfig, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(config.seed, spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def sample_structure(config: PopulationConfig, structure_index: int) -> StructureSpec:
    """Draw the ground-connection layout of one structure; nominal material values."""
    if not 0 <= structure_index < config.n_structures:
        raise IndexError(f"structure_index {structure_index} outside 0..{config.n_structures - 1}")
    rng = _stream(config, _TEMPLATE, structure_index)
    lo, hi = config.ground_count_range
    count = int(rng.integers(lo, hi + 1))
    locations = rng.choice(np.asarray(config.ground_candidates), size=count, replace=False)
    n = config.dof
    E_mean, _ = config.E_params()
    k = float(cantilever_stiffness(E_mean, config.geometry))
    c = config.c_dist[0] * config.c_dist[1]
    return StructureSpec(
        masses=np.full(n, float(lumped_mass(config.rho_params()[0], config.geometry))),
        spring_k=np.full(n + 1, k),
        ground_k={int(g): k for g in sorted(locations)},
        damping_c=np.full(n + 1, c),
        ground_c={int(g): c for g in sorted(locations)},
    )


def _positive_normal(rng, mean, std, size):
    out = rng.normal(mean, std, size)
    redraws = 0
    bad = out <= 0
    while bad.any():
        redraws += 1
        if redraws > MAX_REDRAWS:
            raise NumericalError(f"more than {MAX_REDRAWS} consecutive non-positive draws "
                                 f"from N({mean}, {std}^2)")
        out[bad] = rng.normal(mean, std, bad.sum())
        bad = out <= 0
    return out, redraws


def sample_instance(template: StructureSpec, config: PopulationConfig,
                    rng: np.random.Generator) -> StructureSpec:
    """Draw material scatter for one observation of ``template``.

    Each mass gets its own density, each spring (chain and ground) its own
    modulus and each damper its own coefficient.
    """
    template.validate()
    n = template.dof
    ground = template.ground_locations
    n_springs = n + 1 + len(ground)
    rho, _ = _positive_normal(rng, *config.rho_params(), n)
    E, _ = _positive_normal(rng, *config.E_params(), n_springs)
    c = rng.gamma(config.c_dist[0], config.c_dist[1], n_springs)
    k = cantilever_stiffness(E, config.geometry)
    # preserve any free boundary of the template
    chain_k = np.where(template.spring_k > 0, k[: n + 1], 0.0)
    chain_c = np.where(template.spring_k > 0, c[: n + 1], 0.0)
    return StructureSpec(
        masses=lumped_mass(rho, config.geometry),
        spring_k=chain_k,
        ground_k={g: float(k[n + 1 + j]) for j, g in enumerate(ground)},
        damping_c=chain_c,
        ground_c={g: float(c[n + 1 + j]) for j, g in enumerate(ground)},
    )


def apply_damage(spec: StructureSpec, location: int, reduction: float) -> StructureSpec:
    """Scale inter-mass spring ``location`` by ``1 - reduction``."""
    if not 1 <= location <= spec.dof - 1:
        raise InvalidDamageError(
            f"damage location {location} is not an inter-mass spring (valid 1..{spec.dof - 1})")
    if not 0 <= reduction < 1:
        raise InvalidDamageError(f"reduction {reduction} must lie in [0, 1)")
    if reduction == 0:
        return spec
    k = spec.spring_k.copy()
    k[location] *= 1.0 - reduction
    return replace(spec, spring_k=k, damage=(int(location), float(reduction)))


@dataclass
class LabeledDataset:
    """Feature matrix with class labels, normal-condition mask and train/test split.

    Attributes
    ----------
    features : (n, d) array
    labels : (n,) int array
    normal_mask : (n,) bool array
    train_mask : (n,) bool array, ``True`` for the training partition
    domain_id : str
    sample_ids : (n,) int array
    mode_columns : (d,) int array
        Mode index that each column was taken from.
    """

    features: np.ndarray
    labels: np.ndarray
    normal_mask: np.ndarray
    train_mask: np.ndarray
    domain_id: str = "0"
    sample_ids: Optional[np.ndarray] = None
    mode_columns: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        n, d = self.features.shape
        self.labels = np.asarray(self.labels).astype(int)
        self.normal_mask = np.asarray(self.normal_mask, dtype=bool)
        self.train_mask = np.asarray(self.train_mask, dtype=bool)
        self.sample_ids = np.arange(n) if self.sample_ids is None else np.asarray(self.sample_ids, dtype=int)
        self.mode_columns = np.arange(d) if self.mode_columns is None else np.asarray(self.mode_columns, dtype=int)
        for name in ("labels", "normal_mask", "train_mask", "sample_ids"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected ({n},)")
        if self.mode_columns.shape != (d,):
            raise ValueError(f"mode_columns has shape {self.mode_columns.shape}, expected ({d},)")
        self.domain_id = str(self.domain_id)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def split(self) -> np.ndarray:
        return np.where(self.train_mask, "train", "test")

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def train(self):
        return self.features[self.train_mask], self.labels[self.train_mask]

    def test(self):
        return self.features[~self.train_mask], self.labels[~self.train_mask]

    def select(self, columns) -> "LabeledDataset":
        """Dataset restricted to the given feature columns."""
        cols = np.asarray(columns, dtype=int)
        return replace(self, features=self.features[:, cols], mode_columns=self.mode_columns[cols])

    def with_features(self, features) -> "LabeledDataset":
        features = np.asarray(features, dtype=float)
        return replace(self, features=features, mode_columns=np.arange(features.shape[1]))

    def check_split(self):
        """Every class must appear in both partitions."""
        tr = set(np.unique(self.labels[self.train_mask]))
        te = set(np.unique(self.labels[~self.train_mask]))
        if tr != te:
            raise ValueError(f"classes {sorted(tr ^ te)} missing from one partition")


CSV_FIXED = ("domain_id", "sample_id", "split", "class")


def write_datasets_csv(datasets: Sequence[LabeledDataset], path_or_buf):
    """Write datasets to one CSV with header ``domain_id,sample_id,split,class,f1..fd``.

    Normal condition rows are class 0.
    """
    d = {ds.n_features for ds in datasets}
    if len(d) != 1:
        raise ValueError("all datasets must share the feature count")
    d = d.pop()
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh)
        writer.writerow(list(CSV_FIXED) + [f"f{i + 1}" for i in range(d)])
        for ds in datasets:
            for i in range(ds.n_samples):
                writer.writerow([ds.domain_id, int(ds.sample_ids[i]), ds.split[i], int(ds.labels[i])]
                                + [repr(float(v)) for v in ds.features[i]])
    finally:
        if own:
            fh.close()


def read_datasets_csv(path_or_buf, normal_class: int = 0) -> list:
    """Inverse of :func:`write_datasets_csv`; domains keep file order."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, newline="") if own else path_or_buf
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        for j, name in enumerate(CSV_FIXED):
            if j >= len(header) or header[j] != name:
                raise ParseError(f"expected column '{name}'", line=1, field=name)
        feat_cols = header[len(CSV_FIXED):]
        if not feat_cols or feat_cols != [f"f{i + 1}" for i in range(len(feat_cols))]:
            raise ParseError("feature columns must be f1..fd", line=1)
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            dom, sid, split, cls = row[:4]
            if split not in ("train", "test"):
                raise ParseError(f"split must be train/test, got {split!r}", line=lineno, field="split")
            try:
                sid_i, cls_i = int(sid), int(cls)
            except ValueError:
                raise ParseError("sample_id and class must be integers", line=lineno) from None
            try:
                vals = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            rows.setdefault(dom, []).append((sid_i, split == "train", cls_i, vals))
    finally:
        if own:
            fh.close()
    out = []
    for dom, recs in rows.items():
        sid, tr, cls, feats = zip(*recs)
        cls = np.asarray(cls)
        out.append(LabeledDataset(np.asarray(feats), cls, cls == normal_class, np.asarray(tr),
                                  domain_id=dom, sample_ids=np.asarray(sid)))
    return out


class PopulationMember(NamedTuple):
    dataset: LabeledDataset
    modal: ModalModel
    spec: StructureSpec


@dataclass(frozen=True)
class TransferTask:
    """A source/target pair.  Target labels are kept for evaluation only."""

    source: LabeledDataset
    target: LabeledDataset
    source_modal: ModalModel
    target_modal: ModalModel
    source_index: int = 0
    target_index: int = 1

    @property
    def task_id(self) -> str:
        return f"{self.source_index}->{self.target_index}"


def _modal_from_spec(spec: StructureSpec) -> ModalModel:
    mats = assemble_matrices(spec)
    shapes = undamped_modes(mats)
    return ModalModel(damped_frequencies(mats), shapes.shapes, mass_normalized=True)


def _generate_structure(config: PopulationConfig, s: int, reduction: float) -> PopulationMember:
    template = sample_structure(config, s)
    n_per = config.samples_per_class
    n_train = int(round(config.train_fraction * n_per))
    if not 0 < n_train < n_per and n_per > 1:
        n_train = min(max(n_train, 1), n_per - 1)
    X = np.empty((config.n_classes * n_per, config.dof))
    labels = np.repeat(np.arange(config.n_classes), n_per)
    sample_ids = np.arange(X.shape[0])
    train = np.tile(np.arange(n_per) < n_train, config.n_classes)
    row = 0
    for cls in range(config.n_classes):
        for k in range(n_per):
            rng = _stream(config, _SAMPLE, s, cls, k)
            try:
                inst = sample_instance(template, config, rng)
                if cls > 0:
                    inst = apply_damage(inst, cls, reduction)
                X[row] = damped_frequencies(assemble_matrices(inst)) / (2 * np.pi)
            except NumericalError as exc:
                raise type(exc)(f"structure {s}, class {cls}, sample {k}: {exc}") from exc
            row += 1
    ref = sample_instance(template, config, _stream(config, _REFERENCE, s))
    ds = LabeledDataset(X, labels, labels == 0, train, domain_id=str(s), sample_ids=sample_ids)
    return PopulationMember(ds, _modal_from_spec(ref), template)


def generate_population(config: PopulationConfig, jobs: int = 1) -> list:
    """Simulate every structure of the population.

    Returns a list of ``(dataset, modal_model, template_spec)`` members.  The
    modal model comes from a single undamaged observation.  Output does not
    depend on ``jobs``.
    """
    reduction = config.reduction()
    idx = range(config.n_structures)
    if jobs == 1:
        return [_generate_structure(config, s, reduction) for s in idx]
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_generate_structure, [config] * len(idx), idx, [reduction] * len(idx)))


def mirror_set(locations, dof: int) -> frozenset:
    return frozenset(dof - 1 - i for i in locations)


def is_symmetric_pair(a, b, dof: int) -> bool:
    """True when two ground sets are equal or mirror images about the chain midpoint."""
    a, b = frozenset(a), frozenset(b)
    return a == b or a == mirror_set(b, dof)


def build_tasks(population: Sequence, exclude_symmetric: bool = True,
                indices: Optional[Sequence[int]] = None) -> list:
    """All ordered (source, target) pairs of distinct structures.

    Pairs whose ground layouts are equal or mirrored are dropped when
    ``exclude_symmetric`` is set, since their spectra coincide.
    """
    idx = range(len(population)) if indices is None else indices
    tasks = []
    for s in idx:
        for t in idx:
            if s == t:
                continue
            ps, pt = population[s], population[t]
            if exclude_symmetric and is_symmetric_pair(ps.spec.ground_locations,
                                                       pt.spec.ground_locations, ps.spec.dof):
                continue
            tasks.append(TransferTask(ps.dataset, pt.dataset, ps.modal, pt.modal, s, t))
    return tasks


@dataclass(frozen=True)
class SensitivityCurves:
    """Per-mode normalised |mode shape| and frequency drop, indexed by location."""

    mode_shape: np.ndarray
    frequency_shift: np.ndarray

    def spearman(self) -> np.ndarray:
        return np.array([spearmanr(a, b)[0] for a, b in zip(self.mode_shape, self.frequency_shift)])


def _minmax(a):
    a = np.asarray(a, dtype=float)
    span = a.max(axis=-1, keepdims=True) - a.min(axis=-1, keepdims=True)
    span[span == 0] = 1.0
    return (a - a.min(axis=-1, keepdims=True)) / span


def sensitivity_demo(dof: int = 100, reduction: float = 0.1, n_modes: Optional[int] = None,
                     ) -> SensitivityCurves:
    """Frequency drop caused by damaging each location of a uniform chain.

    Damage at location ``i`` softens the spring joining mass ``i`` to its
    left neighbour (or ground for ``i = 0``).  Returns, per mode, the
    min-max normalised ``|psi_i|`` and ``omega_normal - omega_damaged``.
    """
    if dof < 3:
        raise ValueError("dof must be >= 3")
    spec = StructureSpec(np.ones(dof), np.ones(dof + 1))
    mats = assemble_matrices(spec)
    modes = undamped_modes(mats)
    n_modes = dof if n_modes is None else n_modes
    w0 = damped_frequencies(mats)[:n_modes]
    shift = np.empty((n_modes, dof))
    for i in range(dof):
        k = spec.spring_k.copy()
        k[i] *= 1.0 - reduction
        shift[:, i] = w0 - damped_frequencies(assemble_matrices(replace(spec, spring_k=k)))[:n_modes]
    return SensitivityCurves(_minmax(np.abs(modes.shapes[:, :n_modes].T)), _minmax(shift))
