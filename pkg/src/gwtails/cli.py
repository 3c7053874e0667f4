"""Command-line front end: ``gwtails {tail,fluctuation,scales,verify,simulate}``.

Tables go to ``--out/<command>.csv`` (or stdout) and a JSON run manifest goes
to ``--out/manifest.json`` (or stderr).  Every flag can be set through an
environment variable named ``GWTAILS_<FLAG>``.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click
import numpy as np

from . import __version__
from .inversion import conditional_k, tail_W, tail_W_imm
from .laplace import PhiEvaluator
from .model import ModelConfig, ModelError, load_config
from .scales import (ScaleError, gamma_s, predict_fluctuation, predict_K_conditional_schroder,
                     predict_K_conditional_schroder_limit, predict_tail_W_immigration,
                     predict_tail_W_schroder, solve_scales)
from .simulate import SimConfig, estimate_tail_mc, simulate_batch, tail_from_batch
from .verify import run_checks

EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
LOG_SWITCH = 1e-300


@dataclass
class RunManifest:
    command: str
    model_config_path: str
    parameters: dict
    outputs: list = field(default_factory=list)
    seed: int = 0
    tool_version: str = __version__


class _Run:
    """Collects tables for one command and writes them with the manifest."""

    def __init__(self, command: str, model: str, out: str | None, seed: int, parameters: dict):
        self.out = Path(out) if out else None
        self.manifest = RunManifest(command, str(model), parameters, seed=seed)

    def emit(self, name: str, text: str):
        if self.out is None:
            click.echo(text, nl=False)
            return
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text, encoding="utf-8", newline="")
        self.manifest.outputs.append(str(path))

    def finish(self):
        text = json.dumps(asdict(self.manifest), indent=2, sort_keys=True, default=str)
        if self.out is None:
            click.echo(text, err=True)
        else:
            (self.out / "manifest.json").write_text(text + "\n", encoding="utf-8")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def parse_eps_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in re.split(r"[,\s]+", text.strip()) if t]
    except ValueError as exc:
        raise click.BadParameter(f"not a list of numbers: {text!r}") from exc
    if not vals or any(not v > 0 for v in vals):
        raise click.BadParameter("eps values must be positive")
    return vals


def parse_x_range(text: str) -> list[int]:
    """``"-2..3"`` (inclusive), ``"0"`` or ``"-1,2,4"``."""
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)\s*\.\.\s*(-?\d+)", text)
    try:
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise click.BadParameter(f"empty range {text!r}")
            return list(range(lo, hi + 1))
        return [int(t) for t in re.split(r"[,\s]+", text) if t]
    except ValueError as exc:
        raise click.BadParameter(f"bad x range {text!r}") from exc


def _load(model: str) -> ModelConfig:
    return load_config(model)


def _guarded(fn):
    """Map library exceptions to exit codes 2 (config) and 3 (numerical)."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ModelError, ScaleError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except (ArithmeticError, RuntimeError) as exc:
            click.echo(f"numerical failure: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)

    return wrapper


def _opt_model(f):
    return click.option("--model", "model", required=True, envvar="GWTAILS_MODEL",
                        type=click.Path(dir_okay=False), help="TOML or JSON model file.")(f)


def _opt_out(f):
    return click.option("--out", envvar="GWTAILS_OUT", type=click.Path(file_okay=False), default=None,
                        help="Output directory (default: table on stdout, manifest on stderr).")(f)


def _opt_eps(default: str | None):
    return click.option("--eps", "eps", envvar="GWTAILS_EPS", default=default, required=default is None,
                        help="Comma-separated list of eps values.")


def _opt_sim(f):
    f = click.option("--threads", envvar="GWTAILS_THREADS", type=click.IntRange(1), default=1)(f)
    f = click.option("--gens", envvar="GWTAILS_GENS", type=click.IntRange(1), default=30)(f)
    f = click.option("--samples", envvar="GWTAILS_SAMPLES", type=click.IntRange(1), default=1_000_000)(f)
    f = click.option("--seed", envvar="GWTAILS_SEED", type=click.IntRange(0, 2**64 - 1), default=None,
                     help="Monte Carlo seed (default: the model file's context seed).")(f)
    return f


@click.group()
@click.version_option(__version__, prog_name="gwtails")
def cli():
    """Left tails and first-branching statistics of Galton-Watson processes."""


@cli.command()
@_opt_model
@_opt_eps(None)
@click.option("--method", envvar="GWTAILS_METHOD", type=click.Choice(["invert", "mc", "predict"]),
              default="invert")
@click.option("--log", "force_log", envvar="GWTAILS_LOG", is_flag=True, help="Always write log columns.")
@_opt_sim
@_opt_out
@_guarded
def tail(model, eps, method, force_log, seed, samples, gens, threads, out):
    """P{W < eps} for each eps."""
    cfg = _load(model)
    eps_list = parse_eps_list(eps)
    seed = cfg.context.mc_seed if seed is None else seed
    run = _Run("tail", model, out, seed, dict(eps=eps_list, method=method, samples=samples, gens=gens,
                                             threads=threads))
    off, imm = cfg.offspring, cfg.immigration
    ev = PhiEvaluator(off, cfg.context)
    rows = []
    for e in eps_list:
        if method == "invert":
            r = tail_W(ev, e, cfg.context) if imm is None else tail_W_imm(ev, imm, e, cfg.context)
            rows.append((e, r.log_value, r.abs_error_est, r.rel_error_est, r.method))
        elif method == "mc":
            sim = SimConfig(generations=gens, samples=samples, seed=seed, threads=threads)
            r = estimate_tail_mc(off, imm, e, sim)
            rows.append((e, r.log_value, r.abs_error_est, r.rel_error_est, r.method))
        else:
            if imm is None:
                lv = math.log(predict_tail_W_schroder(off, ev, e, cfg.context))
            else:
                lv = predict_tail_W_immigration(off, imm, ev, e, cfg.context)
            rows.append((e, lv, math.nan, math.nan, "asymptotic"))
    use_log = force_log or any(r[1] < math.log(LOG_SWITCH) for r in rows)
    if use_log:
        # the error of a log value is the relative error of the value
        text = _csv(["eps", "log_value", "log_error_est", "method"], [(e, lv, rel, m) for e, lv, _, rel, m in rows])
    else:
        text = _csv(["eps", "value", "error_est", "method"], [(e, math.exp(lv), err, m) for e, lv, err, _, m in rows])
    run.emit("tail.csv", text)
    run.finish()


@cli.command()
@_opt_model
@_opt_eps("1e-5")
@click.option("--x", "x_range", envvar="GWTAILS_X", default="-2..3", help="x values, e.g. -2..3 or 0,1.")
@_opt_out
@_guarded
def fluctuation(model, eps, x_range, out):
    """Conditional law of the first branching time given W < eps."""
    cfg = _load(model)
    eps_list = parse_eps_list(eps)
    xs = parse_x_range(x_range)
    run = _Run("fluctuation", model, out, cfg.context.mc_seed, dict(eps=eps_list, x=xs))
    off, imm, ctx = cfg.offspring, cfg.immigration, cfg.context
    ev = PhiEvaluator(off, ctx)
    rows = []
    for e in eps_list:
        if imm is not None:
            sol = solve_scales(off, imm, ev, e, ctx)
            ks = [math.floor(sol.gamma) + x for x in xs]
            exact = conditional_k(ev, imm, e, ks, ctx)
            for x, k, p in zip(xs, ks, exact):
                rows.append((e, x, k, p, predict_fluctuation(off, imm, ev, e, x, ctx, sol)))
        else:
            n = math.floor(gamma_s(e, off))
            for x in xs:
                rows.append((e, x, n + x, predict_K_conditional_schroder(off, ev, e, x, ctx),
                             predict_K_conditional_schroder_limit(off, ev, e, x, ctx)))
    run.emit("fluctuation.csv", _csv(["eps", "x", "k", "exact", "predicted"], rows))
    run.finish()


@cli.command()
@_opt_model
@_opt_eps("1e-2,1e-3,1e-4,1e-5")
@_opt_out
@_guarded
def scales(model, eps, out):
    """Solve the scale equations for each eps."""
    cfg = _load(model)
    eps_list = parse_eps_list(eps)
    run = _Run("scales", model, out, cfg.context.mc_seed, dict(eps=eps_list))
    ev = PhiEvaluator(cfg.offspring, cfg.context)
    rows = []
    for e in eps_list:
        s = solve_scales(cfg.offspring, cfg.immigration, ev, e, cfg.context)
        rows.append((e, s.omega, s.rho, s.N, s.frac_rho, s.gamma, s.gamma_s, s.u))
    run.emit("scales.csv", _csv(["eps", "omega", "rho", "N", "frac_rho", "gamma", "gamma_s", "u"], rows))
    run.finish()


@cli.command()
@_opt_model
@_opt_out
@_guarded
def verify(model, out):
    """Run the invariant suite; exit 1 if any check fails."""
    cfg = _load(model)
    run = _Run("verify", model, out, cfg.context.mc_seed, {})
    results = run_checks(cfg)
    failed = [r.name for r in results if not r.passed]
    report = {"model": str(model), "n_checks": len(results), "n_failed": len(failed),
              "failed": failed, "checks": [r.as_dict() for r in results]}
    run.emit("verify.json", json.dumps(report, indent=2) + "\n")
    run.finish()
    if failed:
        sys.exit(EXIT_VERIFY_FAILED)


@cli.command()
@_opt_model
@_opt_eps("0.1,0.3,1.0")
@_opt_sim
@_opt_out
@_guarded
def simulate(model, eps, seed, samples, gens, threads, out):
    """Plain Monte Carlo: hit counts of W_gens < eps (no rare-event guard)."""
    cfg = _load(model)
    eps_list = parse_eps_list(eps)
    seed = cfg.context.mc_seed if seed is None else seed
    run = _Run("simulate", model, out, seed, dict(eps=eps_list, samples=samples, gens=gens, threads=threads))
    sim = SimConfig(generations=gens, samples=samples, seed=seed, threads=threads)
    batch = simulate_batch(cfg.offspring, cfg.immigration, sim)
    w = batch.w_approx
    rows = []
    for e in eps_list:
        r = tail_from_batch(batch, e)
        rows.append((e, int(np.count_nonzero(w < e)), w.size, r.value, r.abs_error_est))
    run.emit("simulate.csv", _csv(["eps", "hits", "samples", "value", "std_error"], rows))
    run.finish()


def main(argv=None):
    cli.main(args=argv, prog_name="gwtails")


if __name__ == "__main__":
    main()
