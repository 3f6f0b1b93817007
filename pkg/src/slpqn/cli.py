"""Command-line benchmark harness.

Subcommands::

    slpqn run --config exp.ini [--seed S] [--jobs J] [--out DIR]
    slpqn fstar --config exp.ini [--tol T] [--out DIR]
    slpqn compare-inner --config exp.ini [--trials T] [--out DIR]
    slpqn plot RUN.csv [RUN.csv ...] | manifest.json [--output FILE.svg]
    slpqn datagen --n N --d D [--sparsity S] [--seed S] [--out DIR]

The output directory is resolved as ``--out``, then the ``SLPQN_OUTPUT_DIR``
environment variable, then ``output_dir`` from the config, then
``results``.  The config grammar is documented in the README.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure,
3 reference solve did not converge.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import difflib
import hashlib
import json
import logging
import math
import os
import sys
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import (load_libsvm, normalize_rows, save_libsvm, synth_gaussian,
                   train_test_split)
from .optimizer import (ALGORITHMS, CSV_COLUMNS, INNER_SOLVERS, RunConfig,
                        fista_reference_run, run)
from .problem import LogisticModel, logistic_problem

log = logging.getLogger("slpqn")

OUTPUT_ENV = "SLPQN_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NOCONV = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    data: str = "synth"
    n: int = 1000
    d: int = 500
    sparsity: float = 1.0
    data_seed: int = 0
    name: str = ""
    test_data: str = ""
    test_fraction: float = 0.0
    normalize: str = "none"
    mu: float = 1e-3
    lam: float = 1e-3
    algorithms: list = field(default_factory=lambda: ["slspqn"])
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    fstar: float | None = None
    fstar_tol: float = 1e-12
    fstar_max_iter: int = 200000
    defaults: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)

    def run_config(self, algorithm: str, seed: int) -> RunConfig:
        kw = {**self.defaults, **self.overrides.get(algorithm, {}), "seed": seed}
        return RunConfig(**kw)


_EXPERIMENT_KEYS = [f for f in ExperimentConfig.__dataclass_fields__
                    if f not in ("defaults", "overrides")]


def _suggest(key: str, known) -> str:
    close = difflib.get_close_matches(key, list(known), n=1, cutoff=0.5)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _parse_value(text: str, hint, key: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if text.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
    try:
        if hint is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {text!r} as {hint.__name__}") from None
    return text


_RUN_HINTS = typing.get_type_hints(RunConfig)
_EXP_HINTS = typing.get_type_hints(ExperimentConfig)


def _parse_run_section(section, where: str) -> dict:
    out = {}
    for key, text in section.items():
        if key not in _RUN_HINTS:
            raise ConfigError(f"unknown key {key!r} in [{where}]"
                              + _suggest(key, _RUN_HINTS))
        out[key] = _parse_value(text, _RUN_HINTS[key], key)
    return out


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment file; unknown sections and keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"),
                                       default_section="__none__")
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    exp = ExperimentConfig()
    sections = set(parser.sections())
    known_sections = {"experiment", "defaults", *ALGORITHMS}
    for sec in sorted(sections - known_sections):
        raise ConfigError(f"unknown section [{sec}]" + _suggest(sec, known_sections))
    if "experiment" in sections:
        for key, text in parser["experiment"].items():
            if key not in _EXPERIMENT_KEYS:
                raise ConfigError(f"unknown key {key!r} in [experiment]"
                                  + _suggest(key, _EXPERIMENT_KEYS))
            if key == "algorithms":
                value = [a.strip() for a in text.split(",") if a.strip()]
                for a in value:
                    if a not in ALGORITHMS:
                        raise ConfigError(f"unknown algorithm {a!r}" + _suggest(a, ALGORITHMS))
            elif key == "seeds":
                try:
                    value = [int(s) for s in text.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError(f"key 'seeds': expected integers, got {text!r}") from None
            else:
                value = _parse_value(text, _EXP_HINTS[key], key)
            setattr(exp, key, value)
    if "defaults" in sections:
        exp.defaults = _parse_run_section(parser["defaults"], "defaults")
    for alg in ALGORITHMS:
        if alg in sections:
            exp.overrides[alg] = _parse_run_section(parser[alg], alg)
    if exp.normalize not in ("none", "l2-rows"):
        raise ConfigError("key 'normalize' must be 'none' or 'l2-rows'")
    if not exp.algorithms or not exp.seeds:
        raise ConfigError("algorithms and seeds must be nonempty")
    if exp.data != "synth":
        exp.data = str((Path(path).parent / exp.data).resolve())
    if exp.test_data:
        exp.test_data = str((Path(path).parent / exp.test_data).resolve())
    return exp


def load_datasets(exp: ExperimentConfig):
    """Return ``(train, test_or_None)`` as described by the experiment."""
    if exp.data == "synth":
        ds = synth_gaussian(exp.n, exp.d, exp.sparsity, exp.data_seed, exp.name or None)
    else:
        ds = load_libsvm(exp.data)
    test = None
    if exp.test_data:
        test = load_libsvm(exp.test_data, d=ds.d)
        if test.d != ds.d:
            raise ConfigError("test data has more features than the training data")
    elif exp.test_fraction > 0:
        ds, test = train_test_split(ds, exp.test_fraction, exp.data_seed)
    if exp.normalize == "l2-rows":
        ds = normalize_rows(ds)
        test = normalize_rows(test) if test is not None else None
    return ds, test


def resolve_output_dir(cli_out, exp: ExperimentConfig | None = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(exp.output_dir if exp is not None else "results")


def _reference(exp, problem):
    if exp.fstar is not None:
        return exp.fstar, None
    ref = fista_reference_run(problem, tol=exp.fstar_tol, max_iter=exp.fstar_max_iter)
    if not ref.converged:
        log.warning("reference solve stopped at residual %.3e", ref.residual)
    return ref.fstar, ref


def _run_one(job):
    exp, algorithm, seed, fstar, csv_path = job
    train, test = load_datasets(exp)
    problem = logistic_problem(train, exp.mu, exp.lam)
    test_model = LogisticModel(test, exp.mu) if test is not None else None
    config = exp.run_config(algorithm, seed)
    trace = run(algorithm, problem, config, fstar, test_model=test_model,
                dataset_name=train.name)
    trace.write_csv(csv_path)
    last = trace.rows[-1]
    return {"name": f"{algorithm} seed={seed}", "algorithm": algorithm, "seed": seed,
            "csv": Path(csv_path).name, "config": asdict(config),
            "final_epochs": last.epochs, "final_gap": last.train_gap,
            "iterations": last.k, "pairs_rejected": trace.pairs_rejected,
            "reference_refreshes": trace.reference_refreshes}


def cmd_run(config_path, seed: int | None = None, jobs: int = 1, out=None) -> int:
    try:
        exp = load_config(config_path)
        if seed is not None:
            exp.seeds = [seed]
        train, _ = load_datasets(exp)
        for alg in exp.algorithms:
            exp.run_config(alg, 0).validate(train.n)
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    outdir = resolve_output_dir(out, exp)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
        problem = logistic_problem(train, exp.mu, exp.lam)
        fstar, _ = _reference(exp, problem)
        jobs_list = [(exp, alg, s, fstar, str(outdir / f"{alg}_seed{s}.csv"))
                     for alg in exp.algorithms for s in exp.seeds]
        if jobs > 1 and len(jobs_list) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                records = list(pool.map(_run_one, jobs_list))
        else:
            records = [_run_one(j) for j in jobs_list]
    except Exception as exc:  # any failure inside a run
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    exp_dict = asdict(exp)
    manifest = {"dataset": train.name, "n": train.n, "d": train.d, "fstar": fstar,
                "experiment": exp_dict, "columns": list(CSV_COLUMNS), "runs": records}
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for r in records:
        log.info("%-22s epochs %7.2f  gap %.3e", r["name"], r["final_epochs"], r["final_gap"])
    return EXIT_OK


def write_vector(path, x) -> str:
    """Write one float per line followed by a ``# sha256`` line over those lines."""
    body = "".join(f"{float(v)!r}\n" for v in x)
    digest = hashlib.sha256(body.encode()).hexdigest()
    with open(path, "w") as fh:
        fh.write(body)
        fh.write(f"# sha256 {digest}\n")
    return digest


def read_vector(path) -> np.ndarray:
    """Inverse of ``write_vector``; raises ``ValueError`` on a checksum mismatch."""
    lines = Path(path).read_text().splitlines(keepends=True)
    if not lines or not lines[-1].startswith("# sha256 "):
        raise ValueError(f"{path}: missing checksum line")
    body = "".join(lines[:-1])
    if hashlib.sha256(body.encode()).hexdigest() != lines[-1].split()[2]:
        raise ValueError(f"{path}: checksum mismatch")
    return np.array([float(v) for v in lines[:-1]])


def cmd_fstar(config_path, tol: float | None = None, max_iter: int | None = None,
              out=None) -> int:
    try:
        exp = load_config(config_path)
        train, _ = load_datasets(exp)
    except (ConfigError, ValueError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    problem = logistic_problem(train, exp.mu, exp.lam)
    ref = fista_reference_run(problem, tol=tol or exp.fstar_tol,
                              max_iter=max_iter or exp.fstar_max_iter)
    outdir = resolve_output_dir(out, exp)
    outdir.mkdir(parents=True, exist_ok=True)
    write_vector(outdir / "xstar.txt", ref.x)
    print(f"F* = {ref.fstar!r}  iterations = {ref.iterations}  residual = {ref.residual:.3e}")
    if not ref.converged:
        log.error("reference solve did not reach tol; residual %.3e", ref.residual)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_compare_inner(config_path, trials: int = 3, target: float = 1e-6,
                      out=None) -> int:
    """Run slspqn with every inner solver on identical seeds and tabulate inner cost."""
    try:
        exp = load_config(config_path)
        train, _ = load_datasets(exp)
        base = exp.run_config("slspqn", 0)
        base.validate(train.n)
    except (ConfigError, ValueError, TypeError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        problem = logistic_problem(train, exp.mu, exp.lam)
        fstar, _ = _reference(exp, problem)
        table = []
        for solver in INNER_SOLVERS:
            stats = []
            for t in range(trials):
                cfg = replace(base, inner_solver=solver, seed=t, target_rel_error=target)
                stats += run("slspqn", problem, cfg, fstar).inner_stats
            iters = np.array([s[0] for s in stats])
            secs = np.array([s[1] for s in stats])
            table.append((solver, float(secs.mean()) if stats else math.nan,
                          float(iters.mean()) if stats else math.nan,
                          int(iters.max()) if stats else 0, len(stats)))
    except Exception as exc:
        log.error("run failed: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    outdir = resolve_output_dir(out, exp)
    outdir.mkdir(parents=True, exist_ok=True)
    header = ("solver", "ave_time_s", "ave_iter", "max_iter", "subproblems")
    with open(outdir / "inner_solvers.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(table)
    lines = [f"{'Solver':<8}{'Ave Time':>12}{'Ave Iter':>10}{'Max Iter':>10}{'Count':>8}"]
    for solver, t, it, mx, cnt in table:
        lines.append(f"{solver.upper():<8}{t:>12.6f}{it:>10.2f}{mx:>10d}{cnt:>8d}")
    text = "\n".join(lines) + "\n"
    (outdir / "inner_solvers.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def _read_trace_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0].keys()) != list(CSV_COLUMNS):
        raise ValueError(f"{path}: unexpected columns")
    return rows


def load_series(inputs, floor: float = 1e-16):
    """``[(name, epochs, gap)]`` from trace CSVs and/or manifests; gaps below ``floor`` are clipped."""
    series = []
    for item in inputs:
        item = Path(item)
        if item.suffix == ".json":
            manifest = json.loads(item.read_text())
            pairs = [(r["name"], item.parent / r["csv"]) for r in manifest["runs"]]
        else:
            pairs = [(item.stem, item)]
        for name, path in pairs:
            rows = _read_trace_csv(path)
            if len(rows) < 2:
                raise ValueError(f"{path}: need at least two data rows, found {len(rows)}")
            ep = np.array([float(r["epochs"]) for r in rows])
            gap = np.array([float(r["train_gap"]) for r in rows])
            if np.all(np.isnan(gap)):
                raise ValueError(f"{path}: train_gap is empty (no F* was available)")
            series.append((name, ep, np.maximum(gap, floor)))
    if not series:
        raise ValueError("nothing to plot")
    return series


def cmd_plot(inputs, output=None, floor: float = 1e-16, out=None, title: str = "") -> int:
    """Render training error against epochs as a deterministic SVG."""
    try:
        series = load_series(inputs, floor)
    except (OSError, ValueError, KeyError) as exc:
        log.error("plot input error: %s", exc)
        return EXIT_CONFIG
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    target = Path(output) if output else resolve_output_dir(out) / "convergence.svg"
    target.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "slpqn", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        for i, (name, ep, gap) in enumerate(series):
            ax.semilogy(ep, gap, label=name, linewidth=1.2, gid=f"run-{i}")
        ax.set_xlabel("epochs")
        ax.set_ylabel("training error F(x) - F*")
        if title:
            ax.set_title(title)
        ax.legend(fontsize="small")
        ax.grid(True, which="major", alpha=0.3)
        fig.tight_layout()
        fig.savefig(target, format="svg", metadata={"Date": None})
        plt.close(fig)
    log.info("wrote %s", target)
    return EXIT_OK


def cmd_datagen(n: int, d: int, sparsity: float = 1.0, seed: int = 0,
                test_fraction: float = 0.0, out=None, name: str | None = None) -> int:
    try:
        ds = synth_gaussian(n, d, sparsity, seed, name)
        parts = {"train": ds}
        if test_fraction > 0:
            parts["train"], parts["test"] = train_test_split(ds, test_fraction, seed)
    except ValueError as exc:
        log.error("datagen: %s", exc)
        return EXIT_CONFIG
    outdir = resolve_output_dir(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for tag, part in parts.items():
        path = outdir / f"{ds.name}.{tag}.libsvm" if test_fraction > 0 else outdir / f"{ds.name}.libsvm"
        save_libsvm(part, path)
        log.info("wrote %s (n=%d, d=%d)", path, part.n, part.d)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slpqn", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="INI experiment file")
        sp.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV})")

    sp = sub.add_parser("run", help="run every algorithm x seed of an experiment")
    common(sp)
    sp.add_argument("--seed", type=int, help="run only this seed")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("fstar", help="reference minimizer by restarted FISTA")
    common(sp)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", type=int)

    sp = sub.add_parser("compare-inner", help="SSN vs FISTA vs ISTA inside slspqn")
    common(sp)
    sp.add_argument("--trials", type=int, default=3)
    sp.add_argument("--target", type=float, default=1e-6,
                    help="stop each outer run at this relative error")

    sp = sub.add_parser("plot", help="SVG of training error against epochs")
    common(sp, config=False)
    sp.add_argument("inputs", nargs="+", help="trace CSVs and/or manifest.json files")
    sp.add_argument("-o", "--output", help="SVG path (default OUT/convergence.svg)")
    sp.add_argument("--floor", type=float, default=1e-16)
    sp.add_argument("--title", default="")

    sp = sub.add_parser("datagen", help="write a synthetic LIBSVM dataset")
    common(sp, config=False)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--sparsity", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--test-fraction", type=float, default=0.0)
    sp.add_argument("--name")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.jobs, args.out)
    if args.command == "fstar":
        return cmd_fstar(args.config, args.tol, args.max_iter, args.out)
    if args.command == "compare-inner":
        return cmd_compare_inner(args.config, args.trials, args.target, args.out)
    if args.command == "plot":
        return cmd_plot(args.inputs, args.output, args.floor, args.out, args.title)
    return cmd_datagen(args.n, args.d, args.sparsity, args.seed, args.test_fraction,
                       args.out, args.name)


if __name__ == "__main__":
    sys.exit(main())
