"""Frequency response function datasets and resonance-window features.

An FRF dataset holds magnitude spectra on a common frequency grid together
with the natural frequencies (and optionally mode shapes) of the undamaged
structure.  Features are windows of bins centred on each natural frequency,
so every block of ``window`` columns belongs to one mode.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .adaptation import bda, knn_predict, nca_arrays, tca
from .errors import ParseError, ShapeError, WindowError
from .population import LabeledDataset
from .similarity import mac_matrix
from .spectral import (ModalModel, StructureSpec, assemble_matrices, frf_magnitude,
                       undamped_modes)
from .tfc import FeatureSelection, SourceLoss, TfcConfig, select_features

__all__ = [
    "FrfDataset",
    "window_features",
    "mode_groups",
    "ingest_frf",
    "export_frf",
    "synthetic_blade_pair",
    "loo_transfer",
    "LooResult",
]

FRF_SCHEMA_VERSION = 1


@dataclass
class FrfDataset:
    """Magnitude spectra of one structure in several health states.

    Attributes
    ----------
    frequencies : (bins,) grid in Hz, strictly increasing
    magnitudes : (samples, bins)
    labels : (samples,) state ids
    normal_mask : (samples,) bool
    natural_frequencies : (modes,) Hz, ascending, inside the grid
    mode_shapes : (sensors, modes) or None
    domain_id : str
    """

    frequencies: np.ndarray
    magnitudes: np.ndarray
    labels: np.ndarray
    normal_mask: np.ndarray
    natural_frequencies: np.ndarray
    mode_shapes: Optional[np.ndarray] = None
    domain_id: str = "0"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float).ravel()
        self.magnitudes = np.atleast_2d(np.asarray(self.magnitudes, dtype=float))
        self.labels = np.asarray(self.labels).astype(int).ravel()
        self.normal_mask = np.asarray(self.normal_mask, dtype=bool).ravel()
        self.natural_frequencies = np.asarray(self.natural_frequencies, dtype=float).ravel()
        self.domain_id = str(self.domain_id)
        f = self.frequencies
        if f.size < 2 or np.any(np.diff(f) <= 0):
            raise ShapeError("frequency grid must be strictly increasing with at least 2 bins")
        n = self.magnitudes.shape[0]
        if self.magnitudes.shape[1] != f.size:
            raise ShapeError(f"magnitudes have {self.magnitudes.shape[1]} bins, grid has {f.size}")
        if self.labels.shape != (n,) or self.normal_mask.shape != (n,):
            raise ShapeError("labels and normal_mask need one entry per sample")
        wn = self.natural_frequencies
        if np.any(np.diff(wn) < 0):
            raise ShapeError("natural frequencies must be ascending")
        if wn.size and (wn.min() < f[0] or wn.max() > f[-1]):
            raise ShapeError(f"natural frequencies outside the grid [{f[0]}, {f[-1]}] Hz")
        if self.mode_shapes is not None:
            self.mode_shapes = np.atleast_2d(np.asarray(self.mode_shapes, dtype=float))
            if self.mode_shapes.shape[1] != wn.size:
                raise ShapeError(f"{self.mode_shapes.shape[1]} mode shapes for {wn.size} modes")

    @property
    def n_samples(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def n_modes(self) -> int:
        return self.natural_frequencies.size

    def modal(self) -> ModalModel:
        if self.mode_shapes is None:
            raise ShapeError(f"domain {self.domain_id} has no mode shapes")
        return ModalModel(2 * np.pi * self.natural_frequencies, self.mode_shapes)

    def __eq__(self, other):
        if not isinstance(other, FrfDataset):
            return NotImplemented
        same = lambda a, b: (a is None and b is None) or (
            a is not None and b is not None and np.array_equal(a, b))
        return (same(self.frequencies, other.frequencies) and same(self.magnitudes, other.magnitudes)
                and same(self.labels, other.labels) and same(self.normal_mask, other.normal_mask)
                and same(self.natural_frequencies, other.natural_frequencies)
                and same(self.mode_shapes, other.mode_shapes) and self.domain_id == other.domain_id)


def window_features(frf: FrfDataset, window: int = 20) -> LabeledDataset:
    """Concatenate ``window`` bins around each natural frequency.

    The window around mode ``i`` covers bins ``c - window // 2`` up to
    ``c + (window - 1) // 2`` where ``c`` is the bin nearest the mode's
    natural frequency, so the centre bin sits at offset ``window // 2``.
    ``mode_columns`` of the result records which mode each column belongs to.
    Every sample is placed in the training partition.
    """
    if window < 1:
        raise WindowError("window must be >= 1")
    f = frf.frequencies
    starts = []
    for i, wn in enumerate(frf.natural_frequencies):
        c = int(np.argmin(np.abs(f - wn)))
        lo, hi = c - window // 2, c - window // 2 + window
        if lo < 0 or hi > f.size:
            raise WindowError(f"window for mode {i} ({wn:g} Hz) runs past the frequency grid")
        if starts and lo < starts[-1] + window:
            raise WindowError(f"windows of modes {i - 1} and {i} overlap")
        starts.append(lo)
    cols = np.concatenate([np.arange(s, s + window) for s in starts]) if starts else np.array([], int)
    return LabeledDataset(frf.magnitudes[:, cols], frf.labels, frf.normal_mask,
                          np.ones(frf.n_samples, dtype=bool), domain_id=frf.domain_id,
                          mode_columns=np.repeat(np.arange(frf.n_modes), window))


def mode_groups(dataset: LabeledDataset) -> list:
    """Column indices belonging to each mode, ordered by mode."""
    return [np.flatnonzero(dataset.mode_columns == m) for m in np.unique(dataset.mode_columns)]


# ---------------------------------------------------------------- file formats

def _as_floats(seq, what, line=None):
    try:
        return [float(v) for v in seq]
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric value in {what}", line=line, field=what) from None


def _from_json(path: Path) -> FrfDataset:
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from exc
    if not isinstance(obj, dict):
        raise ParseError("top level must be an object")
    version = obj.get("schema_version", FRF_SCHEMA_VERSION)
    if version != FRF_SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version}", field="schema_version")
    for key in ("frequencies", "natural_frequencies", "labels", "normal_mask", "magnitudes"):
        if key not in obj:
            raise ParseError("required field missing", field=key)
    normal = obj["normal_mask"]
    if not all(isinstance(v, bool) for v in normal):
        raise ParseError("entries must be true/false", field="normal_mask")
    mags = obj["magnitudes"]
    if not isinstance(mags, list) or not all(isinstance(r, list) for r in mags):
        raise ParseError("must be a list of rows", field="magnitudes")
    for i, r in enumerate(mags):
        _as_floats(r, f"magnitudes[{i}]")
    shapes = obj.get("mode_shapes")
    try:
        return FrfDataset(
            _as_floats(obj["frequencies"], "frequencies"), mags, obj["labels"], normal,
            _as_floats(obj["natural_frequencies"], "natural_frequencies"),
            None if shapes is None else np.asarray(shapes, dtype=float).T,
            obj.get("domain_id", path.stem), obj.get("metadata", {}))
    except (ShapeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc


_META_FLOATS = ("natural_frequencies",)


def _from_csv(path: Path) -> FrfDataset:
    meta = {}
    rows = []
    header = None
    header_line = None
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#"):
                key, sep, val = text[1:].partition(":")
                if not sep:
                    raise ParseError("metadata lines must look like '# key: value'", line=lineno)
                meta[key.strip()] = (val.strip(), lineno)
                continue
            fields_ = next(csv.reader([text]))
            if header is None:
                header, header_line = fields_, lineno
                continue
            rows.append((lineno, fields_))
    if header is None:
        raise ParseError("no header row")
    for col in ("state", "normal"):
        if col not in header:
            raise ParseError("required column missing", line=header_line, field=col)
    bin_cols = [j for j, h in enumerate(header) if h not in ("state", "normal")]
    freqs = _as_floats([header[j] for j in bin_cols], "frequency header", header_line)
    if "natural_frequencies" not in meta:
        raise ParseError("metadata line missing", field="natural_frequencies")
    val, ln = meta["natural_frequencies"]
    wn = _as_floats(val.split(), "natural_frequencies", ln)
    shapes = None
    if "mode_shapes" in meta:
        val, ln = meta["mode_shapes"]
        shapes = np.array([_as_floats(m.split(), "mode_shapes", ln) for m in val.split(";")]).T
    if "schema_version" in meta and meta["schema_version"][0] != str(FRF_SCHEMA_VERSION):
        raise ParseError("unsupported schema version", line=meta["schema_version"][1],
                         field="schema_version")
    i_state, i_norm = header.index("state"), header.index("normal")
    labels, normal, mags = [], [], []
    for lineno, r in rows:
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", line=lineno)
        try:
            labels.append(int(r[i_state]))
        except ValueError:
            raise ParseError("state must be an integer", line=lineno, field="state") from None
        flag = r[i_norm].strip().lower()
        if flag not in ("0", "1", "true", "false"):
            raise ParseError("normal must be 0/1/true/false", line=lineno, field="normal")
        normal.append(flag in ("1", "true"))
        mags.append(_as_floats([r[j] for j in bin_cols], "magnitude", lineno))
    domain = meta.get("domain_id", (path.stem, 0))[0]
    try:
        return FrfDataset(freqs, mags, labels, normal, wn, shapes, domain)
    except ShapeError as exc:
        raise ParseError(str(exc)) from exc


def ingest_frf(path) -> FrfDataset:
    """Load an FRF dataset from ``.json`` or ``.csv``.

    CSV layout: ``# key: value`` metadata lines (``natural_frequencies``
    space separated, optional ``mode_shapes`` with modes separated by ``;``,
    ``domain_id``, ``schema_version``), then a header ``state,normal,<f1>,...``
    whose bin columns are named by frequency in Hz, then one row per sample.
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        return _from_json(path)
    if path.suffix.lower() == ".csv":
        return _from_csv(path)
    raise ParseError(f"unsupported file type {path.suffix!r} (use .json or .csv)")


def export_frf(frf: FrfDataset, path):
    path = Path(path)
    if path.suffix.lower() == ".json":
        obj = {
            "schema_version": FRF_SCHEMA_VERSION,
            "domain_id": frf.domain_id,
            "frequencies": frf.frequencies.tolist(),
            "natural_frequencies": frf.natural_frequencies.tolist(),
            "mode_shapes": None if frf.mode_shapes is None else frf.mode_shapes.T.tolist(),
            "labels": frf.labels.tolist(),
            "normal_mask": frf.normal_mask.tolist(),
            "magnitudes": frf.magnitudes.tolist(),
        }
        path.write_text(json.dumps(obj))
        return
    if path.suffix.lower() != ".csv":
        raise ParseError(f"unsupported file type {path.suffix!r} (use .json or .csv)")
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {FRF_SCHEMA_VERSION}\n")
        fh.write(f"# domain_id: {frf.domain_id}\n")
        fh.write("# natural_frequencies: " + " ".join(repr(float(v)) for v in frf.natural_frequencies) + "\n")
        if frf.mode_shapes is not None:
            fh.write("# mode_shapes: " + ";".join(" ".join(repr(float(v)) for v in m)
                                                   for m in frf.mode_shapes.T) + "\n")
        w = csv.writer(fh)
        w.writerow(["state", "normal"] + [repr(float(v)) for v in frf.frequencies])
        for i in range(frf.n_samples):
            w.writerow([int(frf.labels[i]), int(frf.normal_mask[i])]
                       + [repr(float(v)) for v in frf.magnitudes[i]])


# ---------------------------------------------------------------- synthetic blades

def _blade_spec(masses, springs, ground, damping):
    springs = np.asarray(springs, float)
    return StructureSpec(np.asarray(masses, float), springs, ground,
                         damping_c=springs * damping,
                         ground_c={g: v * damping for g, v in ground.items()})


def synthetic_blade_pair(seed: int = 0, n_modes: int = 8, n_normal: int = 25, n_damaged: int = 10,
                         added_mass: float = 0.15, mass_sites=(1, 3, 6, 8),
                         stiffness_scale: float = 1.6, mass_scale: float = 1.25,
                         ground_site: int = 7, ground_stiffness: float = 3.0,
                         scatter: float = 0.005, noise: float = 0.01, window: int = 20):
    """Two heterogeneous lumped cantilever 'blades' measured by tip FRFs.

    The target is the source with all stiffnesses scaled by
    ``stiffness_scale`` and masses by ``mass_scale``, which on its own leaves
    every feature equivalent after normal-condition alignment, plus an extra
    ground spring at ``ground_site``.  That spring reshapes the modes with
    large displacement there and leaves the others nearly untouched, so only
    some resonances carry transferable damage information.  Damage states
    add a point mass at one of ``mass_sites``; Damping is stiffness
    proportional with equal modal damping ratios in both blades.

    Returns
    -------
    source, target : FrfDataset
        ``n_normal`` undamaged repeats plus ``n_damaged`` repeats per site.
    """
    rng = np.random.default_rng(seed)
    dof = 10
    m_src = np.linspace(1.3, 0.7, dof)
    k_src = np.r_[np.linspace(1.3e4, 0.7e4, dof), 0.0]  # fixed root, free tip
    freq_ratio = np.sqrt(stiffness_scale / mass_scale)
    damping = 2e-4
    k_tgt = k_src * stiffness_scale
    structures = {
        "source": (m_src, k_src, {}, damping, 1.0),
        "target": (m_src * mass_scale, k_tgt, {ground_site: ground_stiffness * k_tgt[:dof].mean()},
                   damping / freq_ratio, freq_ratio),
    }
    df = None
    out = []
    for name, (m0, k0, ground, c_ratio, f_ratio) in structures.items():
        mats = assemble_matrices(_blade_spec(m0, k0, ground, c_ratio))
        modes = undamped_modes(mats)
        wn = modes.frequencies[:n_modes] / (2 * np.pi)
        if df is None:
            df = np.diff(wn).min() / (2.5 * window)
        step = df * f_ratio
        grid = np.arange(wn[0] - window * step, wn[-1] + window * step, step)
        states = [(0, None, n_normal)] + [(i + 1, site, n_damaged) for i, site in enumerate(mass_sites)]
        mags, labels = [], []
        for label, site, reps in states:
            for _ in range(reps):
                m = m0 * (1 + scatter * rng.standard_normal(dof))
                k = k0 * (1 + scatter * rng.standard_normal(dof + 1))
                if site is not None:
                    m[site] += added_mass * m0.mean()
                mt = assemble_matrices(_blade_spec(m, k, ground, c_ratio))
                h = frf_magnitude(undamped_modes(mt), mt, 0, dof - 1, grid)
                mags.append(h * (1 + noise * rng.standard_normal(h.size)))
                labels.append(label)
        labels = np.asarray(labels)
        out.append(FrfDataset(grid, np.asarray(mags), labels, labels == 0, wn,
                              modes.shapes[:, :n_modes], domain_id=name))
    return out[0], out[1]


# ---------------------------------------------------------------- LOO evaluation

@dataclass(frozen=True)
class LooResult:
    method: str
    source_acc: float
    target_acc: float
    selection: Optional[FeatureSelection] = None
    predictions: Optional[np.ndarray] = None


def _adapt(method, Xs, ys, Xt, latent_D, mu, iterations):
    if method.endswith("TCA"):
        _, _, latent = tca(Xs, Xt, D=latent_D, mu=mu)
    else:
        _, _, latent, _ = bda(Xs, ys, Xt, D=latent_D, mu=mu, iterations=iterations)
    return latent.transform(Xs), latent.transform(Xt)


def loo_transfer(source: LabeledDataset, target: LabeledDataset, source_modal: ModalModel,
                 target_modal: ModalModel, method: str = "TFC+BDA", D: int = 2, lam: float = 0.1,
                 latent_D: Optional[int] = None, mu: float = 0.1, iterations: int = 10,
                 log_magnitude: bool = True) -> LooResult:
    """Leave-one-out transfer of a labelled source to an unlabelled target.

    Each target sample is held out in turn: normal-condition statistics and
    the embedding are fitted without it, then it is classified by 1-NN on the
    source.  Source accuracy is plain leave-one-out 1-NN on the aligned
    source.  ``method`` is one of ``NCA``, ``TFC``, ``TFC+TCA``, ``TFC+BDA``,
    ``TCA``, ``BDA``; feature selection treats each mode's window as a unit.
    """
    Xs, Xt = source.features, target.features
    if log_magnitude:
        Xs, Xt = np.log10(Xs), np.log10(Xt)
    selection = None
    cols_s = cols_t = np.arange(Xs.shape[1])
    if method.startswith("TFC"):
        gs, gt = mode_groups(source), mode_groups(target)
        normal = Xs[source.normal_mask]
        Z = (Xs - normal.mean(0)) / normal.std(0)
        loss = SourceLoss(Z, source.labels, groups=gs)
        M = mac_matrix(source_modal, target_modal)
        selection = select_features(None, TfcConfig(D=D, lam=lam), loss=loss, mac=M, n_units=len(gs))
        cols_s, cols_t = selection.columns(gs, gt)
    Xs, Xt = Xs[:, cols_s], Xt[:, cols_t]
    adapter = method.split("+")[-1] if method.split("+")[-1] in ("TCA", "BDA") else None
    if latent_D is None:
        latent_D = max(1, Xs.shape[1] - 1)

    n_t = Xt.shape[0]
    preds = np.empty(n_t, dtype=source.labels.dtype)
    for i in range(n_t):
        keep = np.arange(n_t) != i
        Zs, Zt, _ = nca_arrays(Xs, source.normal_mask, Xt[keep], target.normal_mask[keep])
        zi = (Xt[i] - Xt[keep][target.normal_mask[keep]].mean(0)) / Xt[keep][target.normal_mask[keep]].std(0)
        if adapter is not None:
            Zs_e, Zt_e = _adapt(adapter, Zs, source.labels, np.vstack([Zt, zi]), latent_D, mu, iterations)
            preds[i] = knn_predict(Zs_e, source.labels, Zt_e[-1:])[0]
        else:
            preds[i] = knn_predict(Zs, source.labels, zi[None, :])[0]
    Zs, _, _ = nca_arrays(Xs, source.normal_mask, Xt, target.normal_mask)
    src_pred = np.empty(Xs.shape[0], dtype=source.labels.dtype)
    for i in range(Xs.shape[0]):
        keep = np.arange(Xs.shape[0]) != i
        src_pred[i] = knn_predict(Zs[keep], source.labels[keep], Zs[i:i + 1])[0]
    return LooResult(method, float(np.mean(src_pred == source.labels)),
                     float(np.mean(preds == target.labels)), selection, preds)
