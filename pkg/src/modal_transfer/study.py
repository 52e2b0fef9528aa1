"""End-to-end transfer study over a simulated population.

Every method is run on every test task; similarity metrics are correlated
with transfer accuracy; hyperparameters of the feature criterion are picked
on a handful of labelled validation structures.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adaptation import bda, knn_predict, nca_arrays, pca_fit, tca
from .divergence import KernelSpec, jmmd, mmd, pad
from .errors import (InvalidConfigError, ModalTransferError, NoFeasibleSubsetError, ParseError,
                     StudyFailedError, UndefinedCorrelationError)
from .population import (SCHEMA_VERSION, PopulationConfig, TransferTask, build_tasks,
                         generate_population, tomllib)
from .similarity import mac_matrix
from .tfc import HyperGrid, SourceLoss, TfcConfig, multitask_grid_search, select_features

log = logging.getLogger(__name__)

__all__ = [
    "METHOD_NAMES",
    "MethodSpec",
    "StudySettings",
    "StudyConfig",
    "TaskResult",
    "StudyReport",
    "run_task",
    "run_numerical_study",
    "pearson",
    "CORRELATION_PAIRS",
]

METHOD_NAMES = ("noDA", "NCA", "PCA", "TCA", "BDA", "TFC", "TFC+TCA", "TFC+BDA")
CORRELATION_PAIRS = (("PAD", "Acc"), ("MMD", "Acc"), ("JMMD", "Acc"), ("MAC", "Acc"), ("MAC", "JMMD"))
FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class MethodSpec:
    """A transfer pipeline and its hyperparameters.

    Composite ``TFC+X`` methods select features first, align normal
    conditions, then embed with ``X`` using one fewer latent dimension than
    selected features unless ``latent_D`` is given.
    """

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise InvalidConfigError(f"unknown method {self.name!r}; choose from {METHOD_NAMES}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def uses_tfc(self) -> bool:
        return self.name.startswith("TFC")

    @property
    def adapter(self) -> Optional[str]:
        base = self.name.split("+")[-1]
        return base if base in ("PCA", "TCA", "BDA") else None


@dataclass(frozen=True)
class StudySettings:
    """Method hyperparameters and evaluation knobs shared by every task."""

    tca_D: int = 9
    tca_mu: float = 0.1
    bda_D: int = 5
    bda_mu: float = 0.1
    bda_iterations: int = 10
    pca_variance: float = 0.9
    tfc_D: int = 7
    tfc_lambda: float = 0.1
    tfc_folds: int = 5
    fit_stride: int = 2
    pad_split: float = 0.7

    def method(self, name: str) -> MethodSpec:
        p = {
            "noDA": {}, "NCA": {},
            "PCA": {"variance": self.pca_variance},
            "TCA": {"D": self.tca_D, "mu": self.tca_mu},
            "BDA": {"D": self.bda_D, "mu": self.bda_mu, "iterations": self.bda_iterations},
            "TFC": {"D": self.tfc_D, "lam": self.tfc_lambda},
            "TFC+TCA": {"D": self.tfc_D, "lam": self.tfc_lambda, "mu": self.tca_mu},
            "TFC+BDA": {"D": self.tfc_D, "lam": self.tfc_lambda, "mu": self.bda_mu,
                        "iterations": self.bda_iterations},
        }[name]
        return MethodSpec(name, p)


@dataclass(frozen=True)
class StudyConfig:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    settings: StudySettings = field(default_factory=StudySettings)
    methods: tuple = METHOD_NAMES
    n_validation: int = 5
    grid_lambdas: tuple = (0.01, 0.1, 1.0)
    grid_D: tuple = tuple(range(2, 11))
    fixed_theta: Optional[tuple] = None
    sweep_D: tuple = tuple(range(1, 11))
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for name in ("methods", "grid_lambdas", "grid_D", "sweep_D"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.fixed_theta is not None:
            object.__setattr__(self, "fixed_theta", (int(self.fixed_theta[0]), float(self.fixed_theta[1])))
        for m in self.methods:
            if m not in METHOD_NAMES:
                raise InvalidConfigError(f"unknown method {m!r}")
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidConfigError(f"unsupported schema_version {self.schema_version}")
        if self.n_validation < 0:
            raise InvalidConfigError("n_validation must be >= 0")

    def to_dict(self) -> dict:
        study = {f.name: getattr(self, f.name) for f in fields(self)
                 if f.name not in ("population", "settings")}
        study = {k: list(v) if isinstance(v, tuple) else v for k, v in study.items()}
        return {"schema_version": self.schema_version, "population": self.population.to_dict(),
                "settings": asdict(self.settings), "study": study}

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        data = dict(data)
        version = data.pop("schema_version", SCHEMA_VERSION)
        unknown = set(data) - {"population", "settings", "study"}
        if unknown:
            raise InvalidConfigError(f"unknown config sections: {sorted(unknown)}")
        pop = PopulationConfig.from_dict(data.get("population", {}))
        known = {f.name for f in fields(StudySettings)}
        bad = set(data.get("settings", {})) - known
        if bad:
            raise InvalidConfigError(f"unknown settings keys: {sorted(bad)}")
        settings = StudySettings(**data.get("settings", {}))
        study = dict(data.get("study", {}))
        study.pop("schema_version", None)
        known = {f.name for f in fields(cls)} - {"population", "settings"}
        bad = set(study) - known
        if bad:
            raise InvalidConfigError(f"unknown study keys: {sorted(bad)}")
        return cls(population=pop, settings=settings, schema_version=version, **study)

    @classmethod
    def load(cls, path) -> "StudyConfig":
        """Read JSON or TOML.  A file holding only population keys is accepted too."""
        path = Path(path)
        try:
            text = path.read_text()
            data = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ParseError(f"{path}: {exc}") from exc
        if not set(data) & {"population", "settings", "study"}:
            data = {"population": data}
        return cls.from_dict(data)


@dataclass
class TaskResult:
    """Outcome of every requested method on one task.

    ``methods`` maps a method name to a dict with ``source_acc``,
    ``target_acc``, ``jmmd`` and, for feature-selecting methods, the chosen
    ``v_s``/``v_t``.  A failed method holds ``{"failed": reason}`` instead.
    """

    task_id: str
    source: int
    target: int
    metrics: dict = field(default_factory=dict)
    methods: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    timing: float = 0.0

    @property
    def failed(self) -> bool:
        return any("failed" in m for m in self.methods.values())

    def accuracy(self, method: str, which: str = "target_acc") -> float:
        return self.methods.get(method, {}).get(which, float("nan"))

    def to_dict(self) -> dict:
        # timing is deliberately left out so reports are reproducible byte for byte
        return {"task_id": self.task_id, "source": self.source, "target": self.target,
                "metrics": self.metrics, "methods": self.methods,
                "sweep": {str(k): v for k, v in self.sweep.items()}}


def pearson(x, y) -> float:
    """Sample Pearson correlation."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors with at least 2 entries")
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation undefined for a constant vector")
    return float(np.clip((xc @ yc) / (sx * sy), -1.0, 1.0))


# ---------------------------------------------------------------- per-task work

_LOSS_CACHE: dict = {}


def _source_key(task: TransferTask, folds: int) -> str:
    h = hashlib.sha1(task.source.features.tobytes())
    h.update(task.source.labels.tobytes())
    h.update(task.source.train_mask.tobytes())
    return f"{h.hexdigest()}:{folds}"


def cached_source_loss(task: TransferTask, folds: int = 5) -> SourceLoss:
    """SourceLoss of the task's standardised source data, shared across tasks."""
    key = _source_key(task, folds)
    loss = _LOSS_CACHE.get(key)
    if loss is None:
        if len(_LOSS_CACHE) >= 64:
            _LOSS_CACHE.pop(next(iter(_LOSS_CACHE)))
        src = task.source
        Zs, _, _ = nca_arrays(src.features, src.normal_mask & src.train_mask,
                              src.features, src.normal_mask & src.train_mask)
        loss = SourceLoss(Zs[src.train_mask], src.labels[src.train_mask], folds=folds)
        _LOSS_CACHE[key] = loss
    return loss


def _fit_rows(task: TransferTask, stride: int):
    s_rows = np.flatnonzero(task.source.train_mask)[::stride]
    t_rows = np.arange(task.target.n_samples)[:: 2 * stride]
    return s_rows, t_rows


def _aligned(task, cols_s=None, cols_t=None):
    src, tgt = task.source, task.target
    Xs = src.features if cols_s is None else src.features[:, cols_s]
    Xt = tgt.features if cols_t is None else tgt.features[:, cols_t]
    Zs, Zt, _ = nca_arrays(Xs, src.normal_mask & src.train_mask, Xt, tgt.normal_mask & tgt.train_mask)
    return Zs, Zt


def _embed(adapter, task, Zs, Zt, D, params, stride):
    s_rows, t_rows = _fit_rows(task, stride)
    if adapter == "PCA":
        latent = pca_fit(Zs[task.source.train_mask], params.get("variance", 0.9))
    elif adapter == "TCA":
        _, _, latent = tca(Zs[s_rows], Zt[t_rows], D=D, mu=params["mu"])
    else:
        _, _, latent, _ = bda(Zs[s_rows], task.source.labels[s_rows], Zt[t_rows], D=D,
                              mu=params["mu"], iterations=params.get("iterations", 10))
    return latent.transform(Zs), latent.transform(Zt)


def transform_task(task: TransferTask, method: MethodSpec, settings: StudySettings = StudySettings(),
                   loss=None, mac=None):
    """Apply ``method`` to every row of both domains.

    Returns ``(Z_s, Z_t, info)`` where ``info`` records selected features.
    """
    info = {}
    if method.name == "noDA":
        return task.source.features, task.target.features, info
    cols_s = cols_t = None
    if method.uses_tfc:
        cfg = TfcConfig(D=int(method.params["D"]), lam=float(method.params["lam"]),
                        folds=settings.tfc_folds)
        if loss is None:
            loss = cached_source_loss(task, settings.tfc_folds)
        sel = select_features(task, cfg, loss=loss, mac=mac)
        cols_s, cols_t = list(sel.source_indices), list(sel.target_indices)
        info = {"v_s": cols_s, "v_t": cols_t, "score": sel.score}
    Zs, Zt = _aligned(task, cols_s, cols_t)
    adapter = method.adapter
    if adapter is None:
        return Zs, Zt, info
    if method.uses_tfc:
        D = int(method.params.get("latent_D", Zs.shape[1] - 1))
        if D < 1:
            raise ModalTransferError(f"{method.name}: no latent dimension left after selecting {Zs.shape[1]} feature(s)")
    else:
        D = int(method.params.get("D", 1))
    Zs, Zt = _embed(adapter, task, Zs, Zt, D, method.params, settings.fit_stride)
    return Zs, Zt, info


def _evaluate(task, Zs, Zt):
    src, tgt = task.source, task.target
    tr_s, te_s, te_t = src.train_mask, ~src.train_mask, ~tgt.train_mask
    pred_s = knn_predict(Zs[tr_s], src.labels[tr_s], Zs[te_s])
    pred_t = knn_predict(Zs[tr_s], src.labels[tr_s], Zt[te_t])
    return (float(np.mean(pred_s == src.labels[te_s])), float(np.mean(pred_t == tgt.labels[te_t])),
            pred_t)


def _test_jmmd(task, Zs, Zt):
    te_s, te_t = ~task.source.train_mask, ~task.target.train_mask
    return jmmd(Zs[te_s], task.source.labels[te_s], Zt[te_t], task.target.labels[te_t], KernelSpec())


def task_seed(base_seed: int, source: int, target: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(3, source, target))
    return int(ss.generate_state(1)[0])


def similarity_metrics(task: TransferTask, pad_seed: int = 0, pad_split: float = 0.7) -> dict:
    """MAC, MMD, PAD and JMMD between NCA-aligned test sets of a task."""
    M = mac_matrix(task.source_modal, task.target_modal)
    n = min(M.shape)
    Zs, Zt = _aligned(task)
    A, B = Zs[~task.source.train_mask], Zt[~task.target.train_mask]
    k = KernelSpec().resolve(A, B)
    return {
        "MAC": float(np.mean(M[np.arange(n), np.arange(n)])),
        "MMD": mmd(A, B, k),
        "PAD": pad(A, B, split=pad_split, seed=pad_seed),
        "JMMD": jmmd(A, task.source.labels[~task.source.train_mask],
                     B, task.target.labels[~task.target.train_mask], k),
    }


def tfc_errors(task: TransferTask, D: int, lam: float, settings: StudySettings = StudySettings()):
    """Target test errors of the plain feature-criterion pipeline (grid-search objective)."""
    Zs, Zt, _ = transform_task(task, MethodSpec("TFC", {"D": D, "lam": lam}), settings)
    _, acc, _ = _evaluate(task, Zs, Zt)
    n = int((~task.target.train_mask).sum())
    return int(round((1.0 - acc) * n)), n


def run_task(task: TransferTask, methods, settings: StudySettings = StudySettings(),
             sweep_D: Sequence[int] = (), sweep_lambda: Optional[float] = None,
             pad_seed: int = 0, metrics: bool = True) -> TaskResult:
    """Run one or several methods on a task.

    Failures of individual methods are recorded in the result, not raised.
    """
    t0 = time.perf_counter()
    if isinstance(methods, (MethodSpec, str)):
        methods = [methods]
    methods = [settings.method(m) if isinstance(m, str) else m for m in methods]
    res = TaskResult(task.task_id, task.source_index, task.target_index)
    mac = mac_matrix(task.source_modal, task.target_modal)
    if metrics:
        try:
            res.metrics = similarity_metrics(task, pad_seed, settings.pad_split)
        except ModalTransferError as exc:
            res.metrics = {"failed": str(exc)}
    loss = None
    if any(m.uses_tfc for m in methods) or sweep_D:
        loss = cached_source_loss(task, settings.tfc_folds)
    for m in methods:
        try:
            Zs, Zt, info = transform_task(task, m, settings, loss=loss, mac=mac)
            src_acc, tgt_acc, _ = _evaluate(task, Zs, Zt)
            entry = {"source_acc": src_acc, "target_acc": tgt_acc, "jmmd": _test_jmmd(task, Zs, Zt)}
            entry.update(info)
        except (ModalTransferError, np.linalg.LinAlgError) as exc:
            log.warning("task %s method %s failed: %s", task.task_id, m.name, exc)
            entry = {"failed": f"{type(exc).__name__}: {exc}"}
        res.methods[m.name] = entry
    lam = settings.tfc_lambda if sweep_lambda is None else sweep_lambda
    for D in sweep_D:
        try:
            Zs, Zt, _ = transform_task(task, MethodSpec("TFC", {"D": D, "lam": lam}), settings,
                                       loss=loss, mac=mac)
            res.sweep[int(D)] = _evaluate(task, Zs, Zt)[1]
        except NoFeasibleSubsetError:
            res.sweep[int(D)] = None
    res.timing = time.perf_counter() - t0
    return res


# ---------------------------------------------------------------- study driver

@dataclass
class StudyReport:
    config: dict
    theta: dict
    validation_structures: list
    n_tasks_total: int
    tasks: list
    correlations: dict
    mean_table: dict
    negative_transfer: dict
    sweep: dict
    grid_losses: dict
    failures: list
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "theta": self.theta,
            "validation_structures": self.validation_structures,
            "n_tasks_total": self.n_tasks_total,
            "n_test_tasks": len(self.tasks),
            "correlations": self.correlations,
            "mean_table": self.mean_table,
            "negative_transfer": self.negative_transfer,
            "sweep": self.sweep,
            "grid_losses": self.grid_losses,
            "failures": self.failures,
            "notes": self.notes,
            "tasks": [t.to_dict() for t in self.tasks],
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=1, sort_keys=True) + "\n"

    def accuracies(self, method: str, which: str = "target_acc") -> np.ndarray:
        return np.array([t.accuracy(method, which) for t in self.tasks])

    def write(self, out_dir, mac_matrices: Optional[dict] = None):
        """Write report.json, timing.json and the CSV tables into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json())
        timing = {t.task_id: round(t.timing, 6) for t in self.tasks}
        (out / "timing.json").write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n")
        with open(out / "table2.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["measure", "versus", "pearson_r"])
            for key, r in self.correlations.items():
                a, b = key.split("-")
                w.writerow([a, b, _fmt(r)])
        with open(out / "table3.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "source_test_acc", "target_test_acc", "target_jmmd",
                        "negative_transfer_rate", "n_tasks"])
            for name, row in self.mean_table.items():
                w.writerow([name, _fmt(row["source_acc"]), _fmt(row["target_acc"]), _fmt(row["jmmd"]),
                            _fmt(self.negative_transfer.get(name, {}).get("strict")), row["n"]])
        with open(out / "fig4.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "method", "target_acc", "delta_vs_nca"])
            for t in self.tasks:
                base = t.accuracy("NCA")
                for name in self.mean_table:
                    acc = t.accuracy(name)
                    w.writerow([t.task_id, name, _fmt(acc), _fmt(acc - base)])
        with open(out / "fig5.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["D", "mean_target_acc", "n_feasible", "n_infeasible"])
            for D, row in self.sweep.get("curve", {}).items():
                w.writerow([D, _fmt(row["mean"]), row["n_feasible"], row["n_infeasible"]])
        if mac_matrices is not None:
            with open(out / "macmatrix.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["source", "target", "source_mode", "target_mode", "mac"])
                for (s, t), M in mac_matrices.items():
                    for i in range(M.shape[0]):
                        for j in range(M.shape[1]):
                            w.writerow([s, t, i, j, repr(float(M[i, j]))])


def _fmt(v):
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return repr(float(v))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if np.isnan(f) else f
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _run_one(args):
    task, methods, settings, sweep_D, pad_seed = args
    return run_task(task, methods, settings, sweep_D=sweep_D, pad_seed=pad_seed)


def _grid_point(args):
    task, D, lam, settings = args
    try:
        return tfc_errors(task, D, lam, settings)
    except ModalTransferError as exc:
        return exc


def _map(fn, items, jobs):
    if jobs == 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        # chunking by source keeps the per-worker loss cache warm
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def split_tasks(tasks, n_validation: int):
    val = set(range(n_validation))
    validation = [t for t in tasks if t.source_index in val and t.target_index in val]
    test = [t for t in tasks if not (t.source_index in val and t.target_index in val)]
    return validation, test


def _summaries(results, method_names):
    table, neg = {}, {}
    for name in method_names:
        ok = [r for r in results if name in r.methods and "failed" not in r.methods[name]]
        src = np.array([r.methods[name]["source_acc"] for r in ok])
        tgt = np.array([r.methods[name]["target_acc"] for r in ok])
        jm = np.array([r.methods[name]["jmmd"] for r in ok])
        table[name] = {"source_acc": float(src.mean()) if ok else float("nan"),
                       "target_acc": float(tgt.mean()) if ok else float("nan"),
                       "jmmd": float(jm.mean()) if ok else float("nan"),
                       "n": len(ok)}
        both = [r for r in ok if "NCA" in r.methods and "failed" not in r.methods["NCA"]]
        if both:
            # rounding keeps a gap of exactly 0.02 from counting through float error
            d = np.round([r.methods[name]["target_acc"] - r.methods["NCA"]["target_acc"] for r in both], 12)
            neg[name] = {"strict": float(np.mean(d < 0)), "margin_0.02": float(np.mean(d < -0.02))}
    return table, neg


def _correlations(results):
    ok = [r for r in results if r.metrics and "failed" not in r.metrics
          and "NCA" in r.methods and "failed" not in r.methods["NCA"]]
    cols = {k: np.array([r.metrics[k] for r in ok]) for k in ("PAD", "MMD", "JMMD", "MAC")}
    cols["Acc"] = np.array([r.methods["NCA"]["target_acc"] for r in ok])
    out = {}
    for a, b in CORRELATION_PAIRS:
        try:
            out[f"{a}-{b}"] = pearson(cols[a], cols[b])
        except (UndefinedCorrelationError, ValueError) as exc:
            log.warning("correlation %s-%s undefined: %s", a, b, exc)
            out[f"{a}-{b}"] = float("nan")
    return out


def _sweep_curve(results, sweep_D):
    curve = {}
    for D in sweep_D:
        vals = [r.sweep.get(int(D)) for r in results]
        feas = np.array([v for v in vals if v is not None], dtype=float)
        curve[int(D)] = {"mean": float(feas.mean()) if feas.size else float("nan"),
                         "n_feasible": int(feas.size), "n_infeasible": int(len(vals) - feas.size)}
    means = {D: row["mean"] for D, row in curve.items() if not np.isnan(row["mean"])}
    argmax = max(means, key=lambda D: (means[D], -D)) if means else None
    return {"curve": curve, "argmax": argmax}


def run_numerical_study(config: StudyConfig = StudyConfig(), jobs: int = 1, population=None,
                        progress=None):
    """Generate the population, tune the feature criterion and evaluate all methods.

    Returns ``(report, mac_matrices)`` where ``mac_matrices`` maps
    ``(source, target)`` to the MAC matrix of each test task.

    Raises
    ------
    StudyFailedError
        When more than 5% of the test tasks have a failed method.  The
        partial report is attached as ``exc.report``.
    """
    pcfg = config.population
    if population is None:
        population = generate_population(pcfg, jobs=jobs)
    tasks = build_tasks(population)
    n_val = min(config.n_validation, max(pcfg.n_structures - 2, 0))
    validation, test = split_tasks(tasks, n_val)
    settings = config.settings
    notes = []
    if n_val != config.n_validation:
        notes.append(f"validation structures reduced to {n_val} for a population of {pcfg.n_structures}")

    if config.fixed_theta is not None:
        theta = config.fixed_theta
        grid_losses, grid_failures = {}, {}
    elif validation:
        grid = HyperGrid(config.grid_lambdas, config.grid_D, validation)
        points = [(t, D, lam, settings) for D, lam in grid.points() for t in grid.tasks]
        outcomes = dict(zip([(p[0].task_id, p[1], p[2]) for p in points], _map(_grid_point, points, jobs)))

        def pipeline(task, D, lam):
            out = outcomes[(task.task_id, D, lam)]
            if isinstance(out, Exception):
                raise out
            return out

        gs = multitask_grid_search(grid, pipeline)
        theta, grid_losses, grid_failures = gs.best, gs.losses, gs.failures
    else:
        theta = (settings.tfc_D, settings.tfc_lambda)
        grid_losses, grid_failures = {}, {}
        notes.append("no validation tasks; default feature-criterion hyperparameters used")
    settings = replace(settings, tfc_D=int(theta[0]), tfc_lambda=float(theta[1]))

    items = [(t, list(config.methods), settings, list(config.sweep_D),
              task_seed(pcfg.seed, t.source_index, t.target_index)) for t in test]
    results = _map(_run_one, items, jobs)
    results.sort(key=lambda r: (r.source, r.target))

    table, neg = _summaries(results, config.methods)
    failures = [{"task_id": r.task_id, "method": m, "reason": e["failed"]}
                for r in results for m, e in r.methods.items() if "failed" in e]
    report = StudyReport(
        config=config.to_dict(),
        theta={"D": int(theta[0]), "lambda": float(theta[1])},
        validation_structures=list(range(n_val)),
        n_tasks_total=len(tasks),
        tasks=results,
        correlations=_correlations(results),
        mean_table=table,
        negative_transfer=neg,
        sweep={"lambda": float(theta[1]), **_sweep_curve(results, config.sweep_D)},
        grid_losses={f"D={D},lambda={lam}": v for (D, lam), v in grid_losses.items()},
        failures=failures + [{"grid_point": f"D={k[0]},lambda={k[1]}", "reasons": v}
                             for k, v in grid_failures.items()],
        notes=notes + ["post-method JMMD is computed in each method's own feature space, "
                       "so it also depends on that space's dimension"],
    )
    macs = {(t.source_index, t.target_index): mac_matrix(t.source_modal, t.target_modal) for t in test}
    n_failed = sum(r.failed for r in results)
    if results and n_failed / len(results) > FAILURE_LIMIT:
        exc = StudyFailedError(f"{n_failed} of {len(results)} tasks failed (limit {FAILURE_LIMIT:.0%})")
        exc.report = report
        exc.mac_matrices = macs
        raise exc
    return report, macs
