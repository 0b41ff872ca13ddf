"""Command-line interface ``follmer-epi``.

Exit codes: 0 when every applicable bound and gating check passes, 1 when
something failed, 2 for an invalid configuration, 3 for a module error.
"""
from __future__ import annotations

import dataclasses
import logging
import sys
from pathlib import Path

import click

from .. import __version__
from ..diagnostics import all_passed, format_table
from ..errors import ConfigInvalid, FollmerEPIError
from . import config as C
from . import report as R
from .runner import RunOptions, run_checks_only, run_curves, run_entropy, run_scenario

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ERROR = 0, 1, 2, 3


def _common(fn):
    opts = [
        click.argument("config"),
        click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), help="Override simulation.seed."),
        click.option("--paths", type=click.IntRange(100), help="Override simulation.paths."),
        click.option("--epsilon", type=float, help="Override grid.epsilon."),
        click.option("--out", type=click.Path(file_okay=False, path_type=Path), default=Path("out"),
                     show_default=True, help="Output directory."),
        click.option("--threads", type=click.IntRange(1), default=1, show_default=True,
                     help="Worker threads for simulation."),
        click.option("--no-cache", is_flag=True, help="Neither read nor write the ensemble cache."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _load(config, seed, paths, epsilon):
    scn = C.load(config)
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if paths is not None:
        changes["n_paths"] = paths
    if epsilon is not None:
        if not (0.0 < epsilon <= 0.01):
            raise ConfigInvalid("invalid config key 'grid.epsilon': must lie in (0, 0.01]", "grid.epsilon")
        changes["epsilon"] = epsilon
    return dataclasses.replace(scn, **changes)


def _options(out: Path, threads: int, no_cache: bool, require: bool = False) -> RunOptions:
    return RunOptions(threads=threads, cache_dir=out / "cache", use_cache=not no_cache, require_cache=require)


def _guarded(fn):
    try:
        return fn()
    except ConfigInvalid as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except FollmerEPIError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ERROR)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
@click.version_option(version=__version__, prog_name="follmer-epi")
def main(verbose):
    """Numerical laboratory for entropy-power deficits along the Föllmer process."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


def _do_run(config, seed, paths, epsilon, out, threads, no_cache, require):
    def go():
        scn = _load(config, seed, paths, epsilon)
        result = run_scenario(scn, _options(out, threads, no_cache, require))
        R.write_run(result, out)
        for rep in result.report["deficits"]:
            line = f"lambda={rep['lambda']:<5g} deficit={rep['deficit']:.6g} budget={rep['budget']:.2g}"
            fails = [b["name"] for b in rep["bounds"] if b["applicable"] and not b["passed"]
                     and not b["display_only"]]
            click.echo(line + ("  FAILED: " + ",".join(fails) if fails else ""))
        status = result.report["status"]
        click.echo(f"{scn.name}: bounds {'pass' if status['bounds_passed'] else 'FAIL'}, "
                   f"checks {'pass' if status['checks_passed'] else 'FAIL'} -> {out}")
        return EXIT_OK if result.passed else EXIT_FAIL
    sys.exit(_guarded(go))


@main.command()
@_common
def run(config, seed, paths, epsilon, out, threads, no_cache):
    """Run a scenario end to end (CONFIG is a TOML file or bundled name)."""
    _do_run(config, seed, paths, epsilon, out, threads, no_cache, False)


@main.command()
@_common
def report(config, seed, paths, epsilon, out, threads, no_cache):
    """Re-render all outputs from cached ensembles, without simulating."""
    if no_cache:
        click.echo("error: report needs the cache", err=True)
        sys.exit(EXIT_CONFIG)
    _do_run(config, seed, paths, epsilon, out, threads, False, True)


@main.command()
@_common
@click.option("--measure", type=click.Choice(["X", "Y"]), default="X", show_default=True)
def entropy(config, seed, paths, epsilon, out, threads, no_cache, measure):
    """Relative entropy of one measure by the direct, drift and Gamma routes."""
    def go():
        scn = _load(config, seed, paths, epsilon)
        doc = run_entropy(scn, measure, _options(out, threads, no_cache))
        out.mkdir(parents=True, exist_ok=True)
        R.write_json(doc, out / f"entropy_{measure}.json")
        for route in ("direct", "drift-energy", "gamma-identity"):
            est = doc["entropies"][route]
            click.echo(f"{route:15s} {est['value']:.8g}  (budget {est['budget']:.2g})")
        return EXIT_OK
    sys.exit(_guarded(go))


@main.command()
@_common
def curve(config, seed, paths, epsilon, out, threads, no_cache):
    """Moment curves only (CSV and gnuplot data)."""
    def go():
        scn = _load(config, seed, paths, epsilon)
        ws = run_curves(scn, _options(out, threads, no_cache))
        out.mkdir(parents=True, exist_ok=True)
        for label in ("X", "Y"):
            ws.curve(label)
        R.write_curves(ws, out)
        click.echo(f"wrote curves for {scn.name} -> {out}")
        return EXIT_OK
    sys.exit(_guarded(go))


@main.command()
@_common
def checks(config, seed, paths, epsilon, out, threads, no_cache):
    """Diagnostics only; exit status reflects gating checks."""
    def go():
        scn = _load(config, seed, paths, epsilon)
        _, rows = run_checks_only(scn, _options(out, threads, no_cache))
        out.mkdir(parents=True, exist_ok=True)
        R.write_checks(rows, out)
        for subject in ("X", "Y", "pair"):
            sub = [r for s, r in rows if s == subject]
            if sub:
                click.echo(f"[{subject}]\n{format_table(sub)}\n")
        return EXIT_OK if all_passed([r for _, r in rows]) else EXIT_FAIL
    sys.exit(_guarded(go))


@main.command(name="list")
def list_scenarios():
    """List the bundled scenarios."""
    for name in C.bundled_names():
        scn = C.load(name)
        click.echo(f"{name:28s} {scn.description}")


if __name__ == "__main__":
    main()
