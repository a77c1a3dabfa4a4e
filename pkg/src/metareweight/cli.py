"""Command-line experiment orchestration.

Subcommands::

    run           train the variant x noise grid from a config file and
                  emit aggregate + per-run CSV reports
    verify        run the theory verification suite (exit 2 on failure)
    noise-matrix  emit one transition matrix as CSV
    gen-data      emit synthetic dataset splits as CSV

Exit codes: 0 success, 1 usage/config error, 2 verification failure,
3 runtime failure.  Identical configs and seeds reproduce byte-identical
output files.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import verify
from .bilevel import RunReport, Variant, train
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .data import BlobSpec, as_corrupted, make_blobs, save_dataset, standardize
from .noise import NoiseKind, NoiseSpec, build_transition, corrupt, majority_feasibility
from .numkit import Rng

# Purposes for deriving per-run random streams from the experiment seed.
# Chained spawns (purpose -> seed index -> cell index) cannot collide the
# way flat id arithmetic could for large grids.
_PURPOSE_DATA = 1
_PURPOSE_NOISE_MODEL = 2
_PURPOSE_TRAIN_CORRUPT = 3
_PURPOSE_META_CORRUPT = 4
_PURPOSE_TRAIN_SEED = 5


def _stream(experiment_seed: int, purpose: int, *ids: int) -> Rng:
    rng = Rng(experiment_seed).spawn(purpose)
    for i in ids:
        rng = rng.spawn(i)
    return rng


@dataclass
class ResultRow:
    variant: Variant
    noise_kind: NoiseKind
    noise_rate: float
    num_seeds: int
    final_acc_mean: float
    final_acc_std: float
    best_auc_mean: float
    best_auc_std: float
    final_auc_mean: float
    final_auc_std: float


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    reports: dict = field(default_factory=dict)  # (variant, kind, rate, seed_index) -> RunReport

    def lookup(self, variant: Variant, kind: NoiseKind, rate: float) -> ResultRow:
        for row in self.rows:
            if (row.variant, row.noise_kind) == (variant, kind) and row.noise_rate == rate:
                return row
        raise KeyError((variant, kind, rate))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["variant", "noise_kind", "noise_rate", "num_seeds",
                         "final_acc_mean", "final_acc_std",
                         "best_auc_mean", "best_auc_std",
                         "final_auc_mean", "final_auc_std"])
        for r in self.rows:
            writer.writerow([r.variant.value, r.noise_kind.value, repr(r.noise_rate),
                             r.num_seeds,
                             repr(r.final_acc_mean), repr(r.final_acc_std),
                             repr(r.best_auc_mean), repr(r.best_auc_std),
                             repr(r.final_auc_mean), repr(r.final_auc_std)])
        return buf.getvalue()


def run_single(cfg: ExperimentConfig, variant: Variant, kind: NoiseKind,
               rate: float, cell_index: int, seed_index: int) -> RunReport:
    """One fully deterministic training run of a grid cell.

    Data generation and corruption seeds depend only on the experiment
    seed, the seed index, and the noise cell -- never on the variant -- so
    all variants of a cell see identical data, identical corruption, and
    identical network initialization (paired comparison).
    """
    blob = replace(cfg.blob,
                   seed=_stream(cfg.seed, _PURPOSE_DATA, seed_index).seed)
    bundle = standardize(make_blobs(blob))

    spec = NoiseSpec(kind, rate, blob.num_classes,
                     seed=_stream(cfg.seed, _PURPOSE_NOISE_MODEL,
                                  seed_index, cell_index).seed)
    matrix = build_transition(spec)
    train_split = corrupt(bundle.train, matrix,
                          _stream(cfg.seed, _PURPOSE_TRAIN_CORRUPT,
                                  seed_index, cell_index))
    if variant.meta_is_noisy:
        meta_split = corrupt(bundle.meta, matrix,
                             _stream(cfg.seed, _PURPOSE_META_CORRUPT,
                                     seed_index, cell_index))
    else:
        meta_split = as_corrupted(bundle.meta)

    train_cfg = replace(cfg.train,
                        meta_loss=variant.meta_loss,
                        meta_is_noisy=variant.meta_is_noisy,
                        seed=_stream(cfg.seed, _PURPOSE_TRAIN_SEED, seed_index).seed)
    return train(variant, train_split, meta_split, bundle.test, train_cfg)


def _run_cell(args):
    cfg, variant, kind, rate, cell_index, seed_index = args
    try:
        report = run_single(cfg, variant, kind, rate, cell_index, seed_index)
    except Exception as exc:
        raise RuntimeError(
            f"run failed for variant={variant.value}, "
            f"noise={kind.value}@{rate}, seed={seed_index}: {exc}") from exc
    return (variant, kind, rate, seed_index), report


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ResultTable:
    """Execute the full grid, aggregate over seeds, and write CSV reports."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    cells = [(kind, rate) for kind in cfg.noise_kinds for rate in cfg.noise_rates]
    jobs = [(cfg, variant, kind, rate, ci, si)
            for variant in cfg.variants
            for ci, (kind, rate) in enumerate(cells)
            for si in range(cfg.num_seeds)]

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            finished = dict(pool.map(_run_cell, jobs))
    else:
        finished = dict(map(_run_cell, jobs))

    runs_dir = out / "runs"
    runs_dir.mkdir(parents=True, exist_ok=True)
    table = ResultTable(reports=finished)
    for variant in cfg.variants:
        for kind, rate in cells:
            reports = [finished[(variant, kind, rate, si)] for si in range(cfg.num_seeds)]
            for si, rep in enumerate(reports):
                rep.save_csv(runs_dir / f"{variant.value}_{kind.value}_{rate:g}_{si}.csv")
            accs = np.array([r.final_accuracy for r in reports])
            best = np.array([r.best_auc for r in reports])
            final = np.array([r.final_auc for r in reports])
            table.rows.append(ResultRow(
                variant, kind, rate, cfg.num_seeds,
                float(accs.mean()), float(accs.std()),
                float(best.mean()), float(best.std()),
                float(final.mean()), float(final.std())))

    (out / "results.csv").write_text(table.to_csv())
    (out / "config_resolved.cfg").write_text(serialize_config(cfg))
    return table


# -- subcommands --------------------------------------------------------------


def _cmd_run(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    for kind in cfg.noise_kinds:
        for rate in cfg.noise_rates:
            spec = NoiseSpec(kind, rate, cfg.blob.num_classes)
            if majority_feasibility(spec) == "warning":
                print(f"warning: {kind.value} noise at rate {rate} makes some "
                      "corrupted class the majority; learning may be infeasible",
                      file=sys.stderr)
    table = run_experiment(cfg, out_dir=args.out)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    print(f"wrote {out / 'results.csv'} ({len(table.rows)} grid cells, "
          f"{cfg.num_seeds} seeds each)")
    return 0


def _cmd_verify(args) -> int:
    results = verify.run_all(args.seed)
    for r in results:
        print(f"[{'ok' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["property", "passed", "detail"])
            for r in results:
                writer.writerow([r.name, int(r.passed), r.detail])
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} properties passed")
    return 0 if not failed else 2


def _cmd_noise_matrix(args) -> int:
    spec = NoiseSpec(NoiseKind(args.kind), args.rate, args.classes, seed=args.seed)
    matrix = build_transition(spec)
    if majority_feasibility(spec) == "warning":
        print("warning: some corrupted class outweighs the true class at this rate",
              file=sys.stderr)
    if args.out:
        matrix.save_csv(args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow([matrix.num_classes])
        for row in matrix.probs:
            writer.writerow([repr(float(x)) for x in row])
        sys.stdout.write(buf.getvalue())
    return 0


def _cmd_gen_data(args) -> int:
    spec = BlobSpec(num_classes=args.classes, dim=args.dim, n_train=args.n_train,
                    n_meta=args.n_meta, n_test=args.n_test,
                    separation=args.separation, cluster_std=args.cluster_std,
                    seed=args.seed)
    bundle = standardize(make_blobs(spec)) if args.standardize else make_blobs(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(bundle.train, out / "train.csv")
    save_dataset(bundle.meta, out / "meta.csv")
    save_dataset(bundle.test, out / "test.csv")
    if args.noise_kind is not None:
        noise_spec = NoiseSpec(NoiseKind(args.noise_kind), args.noise_rate,
                               args.classes, seed=args.seed)
        matrix = build_transition(noise_spec)
        rng = Rng(args.seed)
        save_dataset(corrupt(bundle.train, matrix, rng.spawn(1)),
                     out / "train_corrupted.csv")
        save_dataset(corrupt(bundle.meta, matrix, rng.spawn(2)),
                     out / "meta_corrupted.csv")
    print(f"wrote datasets to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metareweight",
        description="Meta-learned sample reweighting under label noise")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment grid from a config file")
    p_run.add_argument("--config", help="config file (omit for documented defaults)")
    p_run.add_argument("--out", help="output directory (overrides the config)")
    p_run.set_defaults(func=_cmd_run)

    p_verify = sub.add_parser("verify", help="run the theory verification suite")
    p_verify.add_argument("--seed", type=int, default=verify.DEFAULT_VERIFY_SEED)
    p_verify.add_argument("--csv", help="also write property results to this CSV")
    p_verify.set_defaults(func=_cmd_verify)

    p_noise = sub.add_parser("noise-matrix", help="emit a transition matrix as CSV")
    p_noise.add_argument("--kind", required=True,
                         choices=[k.value for k in NoiseKind])
    p_noise.add_argument("--rate", type=float, required=True)
    p_noise.add_argument("--classes", type=int, required=True)
    p_noise.add_argument("--seed", type=int, default=0)
    p_noise.add_argument("--out", help="output file (default: stdout)")
    p_noise.set_defaults(func=_cmd_noise_matrix)

    p_gen = sub.add_parser("gen-data", help="emit synthetic dataset splits as CSV")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--classes", type=int, default=BlobSpec.num_classes)
    p_gen.add_argument("--dim", type=int, default=BlobSpec.dim)
    p_gen.add_argument("--n-train", type=int, default=BlobSpec.n_train)
    p_gen.add_argument("--n-meta", type=int, default=BlobSpec.n_meta)
    p_gen.add_argument("--n-test", type=int, default=BlobSpec.n_test)
    p_gen.add_argument("--separation", type=float, default=BlobSpec.separation)
    p_gen.add_argument("--cluster-std", type=float, default=BlobSpec.cluster_std)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--standardize", action="store_true")
    p_gen.add_argument("--noise-kind", choices=[k.value for k in NoiseKind])
    p_gen.add_argument("--noise-rate", type=float, default=0.0)
    p_gen.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors; remap to 1
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
