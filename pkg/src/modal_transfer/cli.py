"""Command-line entry point: ``modal-transfer <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import ModalTransferError, StudyFailedError
from .frf import export_frf, ingest_frf, loo_transfer, synthetic_blade_pair, window_features
from .population import (TransferTask, build_tasks, generate_population, sensitivity_demo,
                         write_datasets_csv)
from .study import METHOD_NAMES, StudyConfig, run_numerical_study, run_task
from .tfc import TfcConfig, select_features


def _study_config(args) -> StudyConfig:
    cfg = StudyConfig.load(args.config) if args.config else StudyConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, population=replace(cfg.population, seed=args.seed))
    if getattr(args, "methods", None):
        cfg = replace(cfg, methods=tuple(_methods(args.methods)))
    return cfg


def _methods(text):
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in METHOD_NAMES]
    if bad:
        raise ModalTransferError(f"unknown method(s) {bad}; choose from {', '.join(METHOD_NAMES)}")
    return names


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _population_and_task(cfg: StudyConfig, source: int, target: int, jobs: int):
    pop = generate_population(cfg.population, jobs=jobs)
    n = len(pop)
    if not (0 <= source < n and 0 <= target < n):
        raise ModalTransferError(f"structure indices must lie in 0..{n - 1}")
    tasks = build_tasks(pop, exclude_symmetric=False, indices=[source, target])
    if source == target:
        p = pop[source]
        return TransferTask(p.dataset, p.dataset, p.modal, p.modal, source, source)
    return next(t for t in tasks if t.source_index == source)


def cmd_generate_population(args):
    cfg = _study_config(args).population
    out = _out_dir(args)
    pop = generate_population(cfg, jobs=args.jobs)
    write_datasets_csv([m.dataset for m in pop], out / "population.csv")
    modal = [{"structure": i, "ground": list(m.spec.ground_locations), **json.loads(m.modal.to_json())}
             for i, m in enumerate(pop)]
    (out / "modal.json").write_text(json.dumps(modal, indent=1) + "\n")
    cfg.dump(out / "population_config.json")
    print(f"{len(pop)} structures, {len(build_tasks(pop))} transfer tasks -> {out}")
    return 0


def cmd_run_study(args):
    cfg = _study_config(args)
    out = _out_dir(args)
    try:
        report, macs = run_numerical_study(cfg, jobs=args.jobs)
        status = 0
    except StudyFailedError as exc:
        report, macs = exc.report, exc.mac_matrices
        print(f"error: {exc}", file=sys.stderr)
        status = 2
    report.write(out, macs)
    d = report.to_dict()
    print(f"tasks: {d['n_tasks_total']} total, {d['n_test_tasks']} tested; "
          f"selected D={d['theta']['D']} lambda={d['theta']['lambda']}")
    for key, r in d["correlations"].items():
        print(f"  r({key}) = {r:+.3f}")
    print(f"  {'method':<8} {'source':>7} {'target':>7}")
    for name, row in d["mean_table"].items():
        print(f"  {name:<8} {row['source_acc']:7.3f} {row['target_acc']:7.3f}")
    print(f"report written to {out}")
    return status


def cmd_run_task(args):
    if args.loo:
        if not (args.source_frf and args.target_frf):
            raise ModalTransferError("--loo needs --source-frf and --target-frf")
        src, tgt = ingest_frf(args.source_frf), ingest_frf(args.target_frf)
        S, T = window_features(src, args.window), window_features(tgt, args.window)
        methods = _methods(args.methods) if args.methods else ["NCA", "TFC", "TFC+BDA"]
        rows = []
        for m in methods:
            res = loo_transfer(S, T, src.modal(), tgt.modal(), method=m, D=args.D, lam=args.lam)
            rows.append({"method": m, "source_acc": res.source_acc, "target_acc": res.target_acc,
                         "modes_source": None if res.selection is None else list(res.selection.source_indices),
                         "modes_target": None if res.selection is None else list(res.selection.target_indices)})
        print(json.dumps(rows, indent=1))
        return 0
    cfg = _study_config(args)
    task = _population_and_task(cfg, args.source, args.target, args.jobs)
    methods = list(cfg.methods)
    res = run_task(task, methods, cfg.settings, pad_seed=cfg.population.seed)
    print(json.dumps(res.to_dict(), indent=1))
    return 1 if res.failed else 0


def cmd_select_features(args):
    cfg = _study_config(args)
    task = _population_and_task(cfg, args.source, args.target, args.jobs)
    sel = select_features(task, TfcConfig(D=args.D, lam=args.lam))
    print(f"task {task.task_id}: D={args.D} lambda={args.lam} score={sel.score:.6f} "
          f"source_loss={sel.source_loss:.4f} d_MAC={sel.mac_discrepancy:.4f}")
    print(f"{'source':>6} {'target':>6} {'MAC':>8}")
    for vs, vt, m in sel.pairing.as_rows():
        print(f"{vs:>6} {vt:>6} {m:8.4f}")
    return 0


def cmd_ingest_frf(args):
    frf = ingest_frf(args.path)
    ds = window_features(frf, args.window)
    states, counts = np.unique(frf.labels, return_counts=True)
    print(f"domain {frf.domain_id}: {frf.n_samples} samples, {frf.frequencies.size} bins, "
          f"{frf.n_modes} modes -> {ds.n_features} window features")
    for s, c in zip(states, counts):
        print(f"  state {s}: {c} samples")
    if args.out:
        write_datasets_csv([ds], args.out)
        print(f"features written to {args.out}")
    return 0


def cmd_synth_frf(args):
    out = _out_dir(args)
    src, tgt = synthetic_blade_pair(args.seed if args.seed is not None else 0)
    for ds in (src, tgt):
        export_frf(ds, out / f"{ds.domain_id}.{args.format}")
    print(f"wrote {out / ('source.' + args.format)} and {out / ('target.' + args.format)}")
    return 0


def cmd_demo_sensitivity(args):
    curves = sensitivity_demo(args.dof, args.reduction, n_modes=args.modes)
    rho = curves.spearman()
    for i, r in enumerate(rho):
        print(f"mode {i + 1}: Spearman(|psi|, frequency drop) = {r:+.3f}")
    if args.out:
        out = _out_dir(args)
        with open(out / "sensitivity.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "location", "mode_shape", "frequency_shift"])
            for m in range(curves.mode_shape.shape[0]):
                for loc in range(curves.mode_shape.shape[1]):
                    w.writerow([m + 1, loc, repr(float(curves.mode_shape[m, loc])),
                                repr(float(curves.frequency_shift[m, loc]))])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modal-transfer",
                                description="Mode-shape informed feature selection for transfer learning.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True, methods=False):
        sp.add_argument("--config", help="study/population config (.json or .toml)")
        sp.add_argument("--seed", type=int, help="override the population seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes")
        if out:
            sp.add_argument("--out", default="out", help="output directory")
        if methods:
            sp.add_argument("--methods", help=f"comma list from {','.join(METHOD_NAMES)}")

    sp = sub.add_parser("generate-population", help="simulate the population and export datasets")
    common(sp)
    sp.set_defaults(func=cmd_generate_population)

    sp = sub.add_parser("run-study", help="run every method on every test task")
    common(sp, methods=True)
    sp.set_defaults(func=cmd_run_study)

    sp = sub.add_parser("run-task", help="run methods on one source/target pair")
    common(sp, out=False, methods=True)
    sp.add_argument("--source", type=int, default=0)
    sp.add_argument("--target", type=int, default=1)
    sp.add_argument("--loo", action="store_true", help="leave-one-out evaluation on FRF files")
    sp.add_argument("--source-frf")
    sp.add_argument("--target-frf")
    sp.add_argument("--window", type=int, default=20)
    sp.add_argument("--D", type=int, default=2, help="modes selected for FRF transfer")
    sp.add_argument("--lam", type=float, default=0.1)
    sp.set_defaults(func=cmd_run_task)

    sp = sub.add_parser("select-features", help="print the selected mode pairing for one task")
    common(sp, out=False)
    sp.add_argument("--source", type=int, default=0)
    sp.add_argument("--target", type=int, default=1)
    sp.add_argument("--D", type=int, default=7)
    sp.add_argument("--lam", type=float, default=0.1)
    sp.set_defaults(func=cmd_select_features)

    sp = sub.add_parser("ingest-frf", help="validate an FRF file and extract window features")
    sp.add_argument("path")
    sp.add_argument("--window", type=int, default=20)
    sp.add_argument("--out", help="write window features as dataset CSV")
    sp.set_defaults(func=cmd_ingest_frf)

    sp = sub.add_parser("synth-frf", help="write a synthetic pair of blade FRF datasets")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", default="frf")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_synth_frf)

    sp = sub.add_parser("demo-sensitivity", help="frequency drop versus mode shape on a uniform chain")
    sp.add_argument("--dof", type=int, default=100)
    sp.add_argument("--reduction", type=float, default=0.1)
    sp.add_argument("--modes", type=int, default=2)
    sp.add_argument("--out", help="directory for sensitivity.csv")
    sp.set_defaults(func=cmd_demo_sensitivity)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ModalTransferError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
