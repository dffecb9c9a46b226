"""Command-line front end.

Subcommands::

    partavg run --config FILE [--set section.key=value ...]
    partavg compare --config FILE [--config FILE]
    partavg check-bound --config FILE [--seeds N]
    partavg verify-matrices [--m 2,3,4] [--dj 1,2,3]
    partavg export-split --config FILE --out FILE

Environment: ``PARTAVG_OUTPUT_ROOT`` (default ``runs``) and
``PARTAVG_THREADS`` (default 1).

Exit codes: 0 success, 1 usage or configuration error, 2 verification
failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np

from . import avgmat_oracle as oracle
from . import engine
from .config import SimConfig, load_config
from .data_gen import heterogeneity_report, write_split
from .errors import BoundNotApplicable, ConfigError, NumericalError, PartavgError
from .metrics import write_csv, write_metrics
from .param_space import make_partition
from .theory import bound_rhs_iid, linear_speedup_regime, theory_inputs_for

OUTPUT_ENV = "PARTAVG_OUTPUT_ROOT"

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3


def git_blob_hash(data: bytes) -> str:
    """Content hash as ``git hash-object`` computes it."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def output_root(config: SimConfig | None = None, override=None) -> Path:
    if override:
        return Path(override)
    if config is not None and config.metrics.output_dir:
        return Path(config.metrics.output_dir)
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def run_dir_name(config: SimConfig) -> str:
    return f"{config.digest()[:12]}-seed{config.seed}"


def execute_run(config: SimConfig, root, threads=None) -> list[Path]:
    """Run every repetition of ``config`` and write one directory per seed.

    Repetition ``r`` uses seed ``seed + r``.  Each directory holds
    ``iter.csv``, ``round.csv``, ``config.ini`` (the effective single-seed
    config, rerunnable as is) and ``manifest.json``.
    """
    dirs = []
    for rep in range(config.run.repetitions):
        cfg = config.replace(run={"seed": config.seed + rep, "repetitions": 1})
        out = Path(root) / run_dir_name(cfg)
        result = engine.run(cfg, threads=threads)
        write_metrics(result.metrics, out)
        (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
        outputs = {name: git_blob_hash((out / name).read_bytes()) for name in ("iter.csv", "round.csv", "config.ini")}
        manifest = {
            "config": cfg.to_ini(),
            "config_digest": cfg.digest(),
            "seed": cfg.seed,
            "repetition": rep,
            "effective_tau": result.tau,
            "outputs": outputs,
            "final_loss": result.metrics.global_loss[-1],
            "scalars_transferred": result.metrics.comm.scalars_transferred,
            "events": result.metrics.comm.events,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        dirs.append(out)
    return dirs


@dataclass
class BoundCheck:
    lhs: float
    lhs_per_seed: list
    bound: object  # BoundBreakdown
    speedup_regime: bool

    @property
    def passed(self) -> bool:
        return self.lhs <= self.bound.total

    def __str__(self):
        return (f"measured (1/K) sum |grad F(u_k)|^2 = {self.lhs:.6g} over {len(self.lhs_per_seed)} seeds\n"
                f"bound: {self.bound}\n"
                f"K > m^3: {self.speedup_regime}\n"
                f"{'PASS' if self.passed else 'FAIL'}")


def bound_partition(config: SimConfig, result):
    if result.partition is not None:
        return result.partition
    d = result.objective.d
    return make_partition(config.scheme.partition, d, min(result.tau, d))


def check_bound(config: SimConfig, seeds: int = 10, threads=None) -> BoundCheck:
    """Seed-mean of the average squared gradient norm against the IID bound.

    The step-size condition is checked before anything runs;
    :class:`BoundNotApplicable` is raised if it fails.
    """
    if config.objective.kind != "quadratic":
        raise ConfigError("bound checks need the quadratic objective (exact constants)", key="objective.kind")
    obj = engine.build_objective(config)
    tau = engine.effective_tau(config)
    part = make_partition(config.scheme.partition, obj.d, min(tau, obj.d))
    x0 = obj.initial_point(engine.rngmod.stream(config.seed, engine.rngmod.INIT), config.objective.init_scale)
    # Fails fast on an inadmissible step size.
    bound_rhs_iid(theory_inputs_for(obj, part, m=config.m, K=config.K, tau=tau, eta=config.scheme.eta, x0=x0))
    lhs, f_inits = [], []
    for s in range(seeds):
        cfg = config.replace(run={"seed": config.seed + s})
        res = engine.run(cfg, threads=threads)
        lhs.append(res.metrics.average_grad_sq_norm())
        f_inits.append(res.objective.loss(res.initial_model))
    obj = res.objective
    inputs = theory_inputs_for(obj, bound_partition(config, res), m=config.m, K=config.K, tau=res.tau,
                               eta=config.scheme.eta, x0=res.initial_model)
    # The bound is in expectation over the initial point too.
    inputs = dataclasses.replace(inputs, f_init=float(np.mean(f_inits)))
    return BoundCheck(float(np.mean(lhs)), lhs, bound_rhs_iid(inputs), linear_speedup_regime(config.m, config.K))


@dataclass
class Comparison:
    periodic: object  # RunResult
    partial: object

    @property
    def max_disc(self):
        return max(self.periodic.metrics.mean_disc), max(self.partial.metrics.mean_disc)

    @property
    def summary(self) -> dict:
        per, par = self.max_disc
        return {
            "max_mean_disc_periodic": per,
            "max_mean_disc_partial": par,
            "max_disc_ratio": par / per if per > 0 else (0.0 if par == 0 else float("inf")),
            "final_loss_periodic": self.periodic.metrics.global_loss[-1],
            "final_loss_partial": self.partial.metrics.global_loss[-1],
            "final_loss_gap": self.partial.metrics.global_loss[-1] - self.periodic.metrics.global_loss[-1],
            "scalars_periodic": self.periodic.metrics.comm.scalars_transferred,
            "scalars_partial": self.partial.metrics.comm.scalars_transferred,
        }

    def rows(self):
        a, b = self.periodic.metrics, self.partial.metrics
        for i, k in enumerate(a.k):
            yield (k, a.global_loss[i], b.global_loss[i], a.mean_disc[i], b.mean_disc[i],
                   a.cum_scalars[i], b.cum_scalars[i])


COMPARE_HEADER = ("k", "periodic_global_loss", "partial_global_loss", "periodic_mean_disc",
                  "partial_mean_disc", "periodic_cum_scalars", "partial_cum_scalars")


def compare(periodic: SimConfig, partial: SimConfig | None = None, threads=None) -> Comparison:
    """Run a periodic/partial pair.  With one config, its scheme name is swapped."""
    if partial is None:
        partial = periodic.replace(scheme={"name": "partial"})
        periodic = periodic.replace(scheme={"name": "periodic"})
    if periodic.scheme.name != "periodic" or partial.scheme.name != "partial":
        raise ConfigError("compare expects a periodic config followed by a partial one", key="scheme.name")
    if periodic.K != partial.K or periodic.seed != partial.seed:
        raise ConfigError("compared runs must share run.K and run.seed", key="run")
    return Comparison(engine.run(periodic, threads=threads), engine.run(partial, threads=threads))


def verify_matrices(ms, djs, out=print) -> bool:
    ok = True
    for m, dj in product(ms, djs):
        J = oracle.build_J(m, dj)
        eye = oracle.build_I(m, dj)
        seq = [J, eye]
        # Every length-5 product of I and J, plus the schedule over two cycles.
        for bits in product((0, 1), repeat=5):
            Q = eye
            for b in bits:
                Q = Q @ (J if b else eye)
            seq.append(Q)
        tau = 3
        seq += [oracle.build_P(m, dj, 1, k, tau) for k in range(1, 2 * tau + 1)]
        rep = oracle.check_properties(seq, J, m=m)
        spec = oracle.spectral_check(m, dj)
        good = rep.ok and spec.ok
        ok &= good
        out(f"{'PASS' if good else 'FAIL'} m={m} d_j={dj}")
        if not good:
            out(str(rep))
        out("  " + str(spec))
    example = oracle.worked_example_check()
    for name, dev in example.items():
        good = dev == 0.0
        ok &= good
        out(f"{'PASS' if good else 'FAIL'} worked example {name}: max deviation {dev:.3e}")
    return ok


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="partavg", description="Local SGD with partial model averaging: simulator and checks.")
    ap.add_argument("--threads", type=int, default=None, help=f"gradient worker threads (default ${engine.THREADS_ENV} or 1)")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--output-root", default=None)

    p = sub.add_parser("compare", help="periodic vs partial averaging on matched seeds")
    p.add_argument("--config", action="append", required=True, help="one config, or periodic then partial")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--output-root", default=None)

    p = sub.add_parser("check-bound", help="seed-mean gradient norm vs the IID convergence bound")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--seeds", type=int, default=10)

    p = sub.add_parser("verify-matrices", help="averaging-matrix property and spectral checks")
    p.add_argument("--m", type=_int_list, default=[2, 3, 4])
    p.add_argument("--dj", type=_int_list, default=[1, 2, 3])

    p = sub.add_parser("export-split", help="write the federated split of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    p.add_argument("--out", required=True)
    return ap


def _cmd_run(args):
    cfg = load_config(args.config, args.set)
    for d in execute_run(cfg, output_root(cfg, args.output_root), threads=args.threads):
        print(d)
    return EXIT_OK


def _cmd_compare(args):
    cfgs = [load_config(c, args.set) for c in args.config]
    if len(cfgs) > 2:
        raise ConfigError("compare takes one or two configs")
    cmp = compare(*cfgs, threads=args.threads)
    out = output_root(cfgs[0], args.output_root) / f"compare-{run_dir_name(cfgs[0])}"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "compare.csv", COMPARE_HEADER, cmp.rows())
    summary = cmp.summary
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for k, v in summary.items():
        print(f"{k}: {v}")
    print(out)
    return EXIT_OK


def _cmd_check_bound(args):
    cfg = load_config(args.config, args.set)
    try:
        res = check_bound(cfg, seeds=args.seeds, threads=args.threads)
    except BoundNotApplicable as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(res)
    return EXIT_OK if res.passed else EXIT_VERIFY


def _cmd_verify(args):
    return EXIT_OK if verify_matrices(args.m, args.dj) else EXIT_VERIFY


def _cmd_export_split(args):
    cfg = load_config(args.config, args.set)
    _, labels, split = engine.build_dataset(cfg)
    write_split(split, args.out)
    rep = heterogeneity_report(split, labels)
    print(f"{split.m} workers, {split.n} samples, mean TV distance {rep.mean_tv:.4f}")
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "compare": _cmd_compare,
    "check-bound": _cmd_check_bound,
    "verify-matrices": _cmd_verify,
    "export-split": _cmd_export_split,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PartavgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
