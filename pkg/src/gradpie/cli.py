"""Command-line experiment runner.

Verbs::

    gradpie run <spec.yaml>        offline / online / random runs over seeds
    gradpie grad-eval <spec.yaml>  surrogate gradient quality against reference
    gradpie aggregate <dir>        re-aggregate trajectory CSVs in a directory

A spec is a YAML document::

    task: cnon                 # cnon | owms | analytic
    mode: online               # offline | online | random | grad-eval
    seeds: [0, 1, 2]
    methods: [gradpie, mae, exact, random]
    comparator: mae            # reference for the budget statistic
    task_params: {n: 10, t_end: 0.5}
    run: {tau: 200, k: 8, eta1: 1.0e-3, eta2: 0.05, n_s: 1, l_epochs: 10}

Methods name the gradient source: ``gradpie``/``mae``/``mse`` are surrogates
trained with that loss, ``exact`` uses the reference Jacobian and ``random``
is random search.  Exit status is 0 on success, 2 for an invalid spec (no
files written) and 1 for a runtime failure (partial artifacts kept).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .abbo import (ExactGradient, L1Target, OutputValue, RunConfig, TrajectoryRecord, offline_optimize,
                   offline_train, online_optimize, random_search_baseline)
from .blackbox import Cnon, CnonSystem, OpticalSystem, OpticalWavefront, analytic_blackbox
from .blackbox.optics import target_modulus
from .data import Dataset
from .metrics import surrogate_gradient_eval

ENV_OUT = "GRADPIE_OUT"
TASKS = ("cnon", "owms", "analytic")
MODES = ("offline", "online", "random", "grad-eval")
SURROGATE_METHODS = ("gradpie", "mae", "mse")
MODE_METHODS = {
    "offline": SURROGATE_METHODS + ("exact",),
    "online": SURROGATE_METHODS + ("exact", "random"),
    "random": ("random",),
    "grad-eval": SURROGATE_METHODS,
}
DEFAULT_METHODS = {
    "offline": ["gradpie", "mae", "exact"],
    "online": ["gradpie", "mae", "exact", "random"],
    "random": ["random"],
    "grad-eval": ["gradpie", "mae"],
}
CHECKPOINTS = (50, 100, 200)
PERCENTILE_METHOD = "linear"
# default CNON target: the five-oscillator reference vector, tiled to length n
CNON_LAMBDA = (-0.55, 0.125, 0.31, -0.38, 0.60)


class SpecError(ValueError):
    """Invalid experiment specification (exit status 2)."""


@dataclass
class ExperimentSpec:
    task: str
    mode: str
    run: RunConfig
    seeds: list
    methods: list
    task_params: dict = field(default_factory=dict)
    comparator: str | None = None
    output: str | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        if not isinstance(doc, dict):
            raise SpecError("spec must be a mapping")
        allowed = {"task", "mode", "run", "seeds", "methods", "task_params", "comparator", "output"}
        extra = set(doc) - allowed
        if extra:
            raise SpecError(f"unknown spec keys: {sorted(extra)}")
        task = doc.get("task")
        if task not in TASKS:
            raise SpecError(f"unknown task {task!r}; expected one of {TASKS}")
        mode = doc.get("mode", "online")
        if mode not in MODES:
            raise SpecError(f"unknown mode {mode!r}; expected one of {MODES}")
        seeds = doc.get("seeds", [0])
        if isinstance(seeds, int):
            seeds = [seeds]
        if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise SpecError("seeds must be a non-empty list of non-negative integers")
        methods = list(doc.get("methods") or DEFAULT_METHODS[mode])
        bad = [m for m in methods if m not in MODE_METHODS[mode]]
        if bad:
            raise SpecError(f"methods {bad} not supported in mode {mode!r}")
        run = dict(doc.get("run") or {})
        run.setdefault("task", task)
        try:
            cfg = RunConfig.from_dict(run)
        except (TypeError, ValueError) as exc:
            raise SpecError(f"invalid run config: {exc}") from exc
        if mode != "grad-eval" and cfg.tau < 1:
            raise SpecError("tau must be >= 1")
        comparator = doc.get("comparator")
        if comparator is not None and comparator not in methods:
            raise SpecError(f"comparator {comparator!r} is not among the methods")
        spec = cls(task, mode, cfg, list(seeds), methods, dict(doc.get("task_params") or {}),
                   comparator, doc.get("output"))
        build_task(spec, seed=spec.seeds[0])  # validates task parameters
        return spec

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            doc = yaml.safe_load(Path(path).read_text())
        except OSError as exc:
            raise SpecError(f"cannot read spec {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise SpecError(f"malformed YAML in {path}: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {"task": self.task, "mode": self.mode, "seeds": list(self.seeds),
                "methods": list(self.methods), "comparator": self.comparator,
                "task_params": self.task_params, "run": self.run.to_dict()}


# -- tasks ----------------------------------------------------------------------

def _cnon_lambda(value, n):
    if value is None:
        return np.resize(np.array(CNON_LAMBDA), n)
    lam = np.asarray(value, dtype=float)
    if lam.ndim == 0:
        return np.full(n, float(lam))
    if lam.shape != (n,):
        raise SpecError(f"lambda must be a scalar or a length-{n} list")
    return lam


def build_task(spec: ExperimentSpec, seed: int):
    """Return ``(blackbox, objective)`` for one seed.

    The physical system itself is fixed by ``task_params`` (``system_seed``
    for CNON); ``seed`` only drives the optimizer and data sampling.
    """
    p = dict(spec.task_params)
    try:
        if spec.task == "cnon":
            known = {"n", "t_end", "dt", "symmetric", "system_seed", "lambda", "n_train", "n_test"}
            _check_keys(p, known)
            n = int(p.get("n", 10))
            system = CnonSystem.random(n, seed=int(p.get("system_seed", 0)),
                                       t_end=float(p.get("t_end", 0.5)), dt=float(p.get("dt", 0.05)),
                                       symmetric=bool(p.get("symmetric", False)))
            return Cnon(system), L1Target(_cnon_lambda(p.get("lambda"), n))
        if spec.task == "owms":
            known = {"n", "pitch", "wavelength", "waist", "z", "target_spots", "n_train", "n_test"}
            _check_keys(p, known)
            kw = {k: p[k] for k in ("n", "pitch", "wavelength", "waist", "z", "target_spots") if k in p}
            system = OpticalSystem(**kw)
            return OpticalWavefront(system), L1Target(target_modulus(system))
        known = {"kind", "dim", "center", "A", "matrix_seed", "lambda", "n_train", "n_test"}
        _check_keys(p, known)
        kind = p.get("kind", "quadratic")
        dim = int(p.get("dim", 5))
        if kind == "linear":
            if "A" in p:
                bb = analytic_blackbox("linear", A=np.asarray(p["A"], dtype=float))
            else:
                bb = analytic_blackbox("linear", dim, seed=int(p.get("matrix_seed", 0)))
            lam = np.asarray(p.get("lambda", 0.0), dtype=float)
            return bb, L1Target(np.broadcast_to(lam, (bb.output_dim,)).copy())
        bb = analytic_blackbox(kind, dim, **({"center": p["center"]} if "center" in p else {}))
        return bb, OutputValue(spec.run.direction)
    except SpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise SpecError(f"invalid task_params for {spec.task}: {exc}") from exc


def _check_keys(p, known):
    extra = set(p) - known
    if extra:
        raise SpecError(f"unknown task_params keys: {sorted(extra)}")


def _training_set(blackbox, n_train, seed):
    rng = np.random.default_rng([seed, 2])
    X = rng.standard_normal((n_train, blackbox.input_dim))
    return Dataset(X, blackbox(X))


def run_method(spec: ExperimentSpec, method: str, seed: int):
    """Execute one (method, seed) cell; returns an :class:`OptimizeResult`."""
    blackbox, objective = build_task(spec, seed)
    cfg = RunConfig.from_dict({**spec.run.to_dict(), "seed": seed})
    if spec.mode == "random" or method == "random":
        return random_search_baseline(blackbox, objective, cfg)
    if spec.mode == "online":
        if method == "exact":
            return online_optimize(blackbox, objective, cfg, gradient="exact")
        return online_optimize(blackbox, objective, cfg, loss=method)
    # offline: a fixed training set, then descent from a seeded start point
    x0 = np.random.default_rng([seed, 3]).standard_normal(blackbox.input_dim)
    if method == "exact":
        source = ExactGradient(blackbox)
    else:
        n_train = int(spec.task_params.get("n_train", 1000))
        dataset = _training_set(blackbox, n_train, seed)
        source, _ = offline_train(dataset, cfg, loss=method)
    return offline_optimize(source, blackbox, objective, x0, cfg)


# -- artifacts ------------------------------------------------------------------

def write_trajectory(path, trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TrajectoryRecord.CSV_FIELDS)
        for rec in trajectory:
            w.writerow(rec.csv_row())


def read_trajectory(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != set(TrajectoryRecord.CSV_FIELDS):
        raise ValueError(f"{path}: unexpected columns {list(rows[0])}")
    return {"iter": np.array([int(r["iter"]) for r in rows]),
            "best_objective": np.array([float(r["best_objective"]) for r in rows])}


def summary_stats(values) -> dict:
    """Mean, population std, median and quartiles (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to summarize")
    p25, med, p75 = np.percentile(v, [25, 50, 75], method=PERCENTILE_METHOD)
    return {"mean": float(v.mean()), "std": float(v.std()), "median": float(med),
            "p25": float(p25), "p75": float(p75), "n": int(v.size)}


def aggregate(csv_files, checkpoints=CHECKPOINTS) -> dict:
    """Checkpoint statistics of ``best_objective`` across trajectory files.

    All files must share the same iteration grid.  Checkpoints beyond the
    last iteration are replaced by the last iteration.
    """
    files = [Path(f) for f in csv_files]
    if not files:
        raise ValueError("aggregate needs at least one trajectory file")
    trajs = {f: read_trajectory(f) for f in files}
    ref_file = files[0]
    ref = trajs[ref_file]["iter"]
    bad = [str(f) for f, t in trajs.items() if not np.array_equal(t["iter"], ref)]
    if bad:
        raise ValueError(f"iteration grids differ from {ref_file}: {bad}")
    if ref.size == 0:
        raise ValueError("trajectory files contain no iterations")
    last = int(ref[-1])
    cps = sorted({c if c <= last else last for c in checkpoints})
    curves = np.stack([t["best_objective"] for t in trajs.values()])
    out = {"percentile_method": PERCENTILE_METHOD, "n_runs": len(files),
           "files": [f.name for f in files], "checkpoints": {}}
    for c in cps:
        col = int(np.searchsorted(ref, c))
        out["checkpoints"][str(c)] = summary_stats(curves[:, col])
    out["mean_curve"] = curves.mean(axis=0).tolist()
    out["iterations"] = ref.tolist()
    return out


def budget_statistic(method_aggs: dict, comparator: str, direction: str = "minimize") -> dict:
    """First iteration at which each method's mean best objective reaches the
    comparator's final mean (``None`` if it never does)."""
    target = method_aggs[comparator]["mean_curve"][-1]
    out = {"comparator": comparator, "target_mean": target, "first_match_iteration": {}}
    for name, agg in method_aggs.items():
        curve = np.asarray(agg["mean_curve"])
        hit = curve <= target if direction == "minimize" else curve >= target
        idx = np.flatnonzero(hit)
        out["first_match_iteration"][name] = int(agg["iterations"][idx[0]]) if idx.size else None
    return out


def _group_by_method(paths):
    groups = {}
    for p in sorted(paths):
        method = p.stem.rsplit("_seed", 1)[0]
        groups.setdefault(method, []).append(p)
    return groups


def aggregate_directory(out_dir, comparator=None, direction="minimize") -> dict:
    paths = list(Path(out_dir).glob("*_seed*.csv"))
    if not paths:
        raise ValueError(f"no trajectory CSVs in {out_dir}")
    groups = _group_by_method(paths)
    aggs = {m: aggregate(files) for m, files in groups.items()}
    doc = {"methods": aggs}
    if comparator is None:
        comparator = "mae" if "mae" in aggs else sorted(aggs)[0]
    if comparator in aggs:
        doc["budget"] = budget_statistic(aggs, comparator, direction)
    return doc


# -- verbs ----------------------------------------------------------------------

def _resolve_out(spec: ExperimentSpec, spec_path, out):
    if out:
        return Path(out)
    if spec.output:
        return Path(spec.output)
    return Path(os.environ.get(ENV_OUT, "runs")) / Path(spec_path).stem


def _apply_overrides(spec: ExperimentSpec, args):
    if args.seed is not None:
        spec.seeds = [args.seed]


def _cell(job):
    spec, method, seed = job
    return method, seed, run_method(spec, method, seed)


def _run_jobs(jobs, threads):
    if threads <= 1:
        for job in jobs:
            yield _cell(job)
        return
    from concurrent.futures import ProcessPoolExecutor
    with ProcessPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(_cell, jobs)


def cmd_run(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    _apply_overrides(spec, args)
    if spec.mode == "grad-eval":
        return cmd_grad_eval(args, spec)
    out_dir = _resolve_out(spec, args.spec, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, m, s) for m in spec.methods for s in spec.seeds]
    runs, failures = [], []
    for method, seed, res in _run_jobs(jobs, 1 if args.deterministic else args.threads):
        write_trajectory(out_dir / f"{method}_seed{seed}.csv", res.trajectory)
        runs.append({"method": method, "seed": seed, "best_objective": res.best_objective,
                     "x_best": None if res.x_best is None else np.asarray(res.x_best).tolist(),
                     "queries": res.trajectory[-1].queries if res.trajectory else 0,
                     "error": res.error})
        if res.error:
            failures.append(f"{method} seed {seed}: {res.error}")
    summary = {"config": spec.to_dict(), "runs": runs}
    try:
        summary.update(aggregate_directory(out_dir, spec.comparator, spec.run.direction))
    except ValueError as exc:
        summary["aggregate_error"] = str(exc)
        failures.append(str(exc))
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    for msg in failures:
        print(f"error: {msg}", file=sys.stderr)
    print(f"wrote {len(runs)} trajectories to {out_dir}")
    return 1 if failures else 0


def cmd_grad_eval(args, spec: ExperimentSpec | None = None) -> int:
    if spec is None:
        spec = ExperimentSpec.load(args.spec)
        _apply_overrides(spec, args)
    bad = [m for m in spec.methods if m not in SURROGATE_METHODS]
    if bad:
        raise SpecError(f"grad-eval needs surrogate methods {SURROGATE_METHODS}, got {bad}")
    out_dir = _resolve_out(spec, args.spec, args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_train = int(spec.task_params.get("n_train", 1000))
    n_test = int(spec.task_params.get("n_test", 200))
    summary = {"config": spec.to_dict(), "results": {}}
    per_method = {}
    for seed in spec.seeds:
        blackbox, objective = build_task(spec, seed)
        dataset = _training_set(blackbox, n_train, seed)
        test = np.random.default_rng([seed, 4]).standard_normal((n_test, blackbox.input_dim))
        for method in spec.methods:
            cfg = RunConfig.from_dict({**spec.run.to_dict(), "seed": seed})
            surrogate, final = offline_train(dataset, cfg, loss=method)
            report = surrogate_gradient_eval(surrogate, objective, blackbox, test)
            report.to_csv(out_dir / f"{method}_seed{seed}_grad.csv")
            agg = report.aggregate()
            agg["final_loss"] = final
            summary["results"][f"{method}_seed{seed}"] = agg
            per_method.setdefault(method, {"rel_err": [], "cos_sim": []})
            per_method[method]["rel_err"].append(report.relative_error)
            per_method[method]["cos_sim"].append(report.cosine_similarity)
    summary["methods"] = {m: {k: summary_stats(v) for k, v in d.items()}
                          for m, d in per_method.items()}
    summary["percentile_method"] = PERCENTILE_METHOD
    (out_dir / "grad_eval.json").write_text(json.dumps(summary, indent=2))
    print(f"wrote gradient report to {out_dir}")
    return 0


def cmd_aggregate(args) -> int:
    doc = aggregate_directory(args.dir, args.comparator)
    target = Path(args.out) if args.out else Path(args.dir) / "aggregate.json"
    target.write_text(json.dumps(doc, indent=2))
    print(f"wrote {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradpie", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "grad-eval"):
        p = sub.add_parser(verb)
        p.add_argument("spec", help="YAML experiment spec")
        p.add_argument("--seed", type=int, default=None, help="run only this seed")
        p.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT}/<spec>)")
        p.add_argument("--threads", type=int, default=1, help="parallel seed/method workers")
        p.add_argument("--deterministic", action="store_true",
                       help="single worker and single-threaded linear algebra")
    p = sub.add_parser("aggregate")
    p.add_argument("dir")
    p.add_argument("--out", default=None)
    p.add_argument("--comparator", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    limiter = None
    if getattr(args, "deterministic", False):
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=1)
    try:
        if args.verb == "run":
            return cmd_run(args)
        if args.verb == "grad-eval":
            return cmd_grad_eval(args)
        return cmd_aggregate(args)
    except SpecError as exc:
        print(f"invalid spec: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
