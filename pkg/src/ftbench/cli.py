"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad input, failed compilation),
2 internal error.
"""

from __future__ import annotations

import sys
import traceback
from fractions import Fraction
from pathlib import Path

import click
import numpy as np

from . import gossip, reliability, tom
from .lang import compile_script, dir_loader, emit_artifacts
from .simnet import ScenarioError, parse_scenario

_KIND_TEXT = {"Output": "Output", "Listing": "Listing", "Tasks": "Tasks",
              "Logicals": "Logicals", "Alpha-counts": "Alpha-count parameters",
              "Time-outs": "Time-outs", "Identifiers": "Identifiers"}


class UserError(click.ClickException):
    exit_code = 1


def _read(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc.strerror}") from None


def _compile(path: str, verbose: bool):
    src = Path(path)
    text = _read(path)
    res = compile_script(text, dir_loader(src.parent, Path.cwd()), src.name, verbose)
    if not res.ok:
        click.echo("\n".join(res.transcript), err=True)
        raise UserError("compilation failed")
    return res


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def main():
    """Recovery-script compiler, platform simulator and analysis tools."""


@main.command("compile")
@click.option("-i", "--input", "script", required=True, help="Recovery script.")
@click.option("-o", "--outdir", default=".", show_default=True, help="Output directory.")
@click.option("--listing/--no-listing", default=True, help="Write the r-code listing.")
@click.option("-v", "--verbose", is_flag=True, help="Show substitutions and CPU time.")
def compile_cmd(script, outdir, listing, verbose):
    """Translate a script into r-code plus configuration tables."""
    res = _compile(script, verbose)
    click.echo("\n".join(res.transcript))
    try:
        written = emit_artifacts(res.program, res.symtab, outdir, Path(script).stem, listing,
                                 Path(script).name)
    except OSError as exc:
        raise UserError(str(exc)) from None
    for kind, path in written:
        click.echo(f"{_KIND_TEXT[kind]} written in file {path}.")


@main.command("run")
@click.option("-i", "--input", "script", required=True, help="Recovery script.")
@click.option("--scenario", required=True, help="Scenario file.")
@click.option("--trace", "trace_out", default=None, help="Trace file (default: stdout).")
@click.option("--until", type=int, default=None, help="Override the scenario horizon.")
def run_cmd(script, scenario, trace_out, until):
    """Compile a script and simulate it under a scenario."""
    from .system import System
    res = _compile(script, False)
    try:
        sc = parse_scenario(_read(scenario))
        system = System(res.symtab, res.program, sc)
    except (ScenarioError, ValueError) as exc:
        raise UserError(str(exc)) from None
    system.run(until)
    text = system.sim.trace_text()
    if trace_out:
        try:
            Path(trace_out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise UserError(f"cannot write {trace_out}: {exc.strerror}") from None
        click.echo(f"{len(system.sim.trace)} trace lines written in file {trace_out}.")
    else:
        click.echo(text, nl=False)


_PERMS = {"identity": gossip.IDENTITY, "random": gossip.PSEUDO_RANDOM,
          "pipelined": gossip.PIPELINED}


@main.command("gossip")
@click.option("--n", "n", type=click.IntRange(min=1), required=True,
              help="N; the run involves N+1 processors.")
@click.option("--perm", type=click.Choice(sorted(_PERMS)), default="identity",
              show_default=True)
@click.option("--sessions", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--csv", "csv_out", default=None, help="Write metrics as CSV.")
@click.option("--table", is_flag=True, help="Print the run table.")
def gossip_cmd(n, perm, sessions, seed, csv_out, table):
    """Simulate one all-to-all gossip run and report its metrics."""
    spec = gossip.PermutationSpec(_PERMS[perm], seed)
    run = gossip.simulate_run(n, spec, sessions, record=table)
    m = gossip.metrics(run)
    click.echo(f"N={n} perm={perm} sessions={sessions}")
    click.echo(f"lambda={m.lambda_} mu={float(m.mu):.2f} "
               f"epsilon={float(m.epsilon) * 100:.2f}% u4={m.u4}")
    click.echo("nu=" + " ".join(map(str, run.nu_list())))
    if sessions > 5:
        click.echo(f"sustained completions per step={gossip.sustained_rate(run):.4f}")
    if table:
        click.echo(run.dump(), nl=False)
    if csv_out:
        Path(csv_out).write_text(gossip.metrics_csv([(n, perm, m)]), encoding="utf-8")


_MODELS = {"tmr": "tmr", "tmr-spare": "tmr_spare", "tmr-alpha": "tmr_alpha"}


@main.command("reliability")
@click.option("--model", type=click.Choice(sorted(_MODELS)), required=True)
@click.option("--lambda", "lam", type=float, required=True, help="Failure rate.")
@click.option("--coverage", type=click.FloatRange(0, 1), default=1.0, show_default=True)
@click.option("--T", "transient", type=click.FloatRange(0, 1), default=0.0, show_default=True,
              help="Fraction of transient faults.")
@click.option("--R", "recover", type=click.FloatRange(0, 1), default=0.0, show_default=True,
              help="Probability a transient fault is recovered.")
@click.option("--tmax", type=float, required=True)
@click.option("--points", type=click.IntRange(min=2), default=51, show_default=True)
@click.option("--verify", is_flag=True, help="Check against the Markov-chain oracle.")
@click.option("--csv", "csv_out", default=None, help="Write curves to a file.")
def reliability_cmd(model, lam, coverage, transient, recover, tmax, points, verify, csv_out):
    """Reliability curves of a redundancy scheme next to simplex."""
    if lam <= 0 or tmax <= 0:
        raise UserError("--lambda and --tmax must be positive")
    p = reliability.ReliabilityParams(lam, coverage, transient, recover)
    t = np.linspace(0.0, tmax, points)
    key = _MODELS[model]
    cols = {"simplex": reliability.evaluate("simplex", p, t), model: reliability.evaluate(key, p, t)}
    if verify:
        chain = (reliability.tmr_spare_chain(p) if key == "tmr_spare"
                 else reliability.tmr_alpha_chain(p))
        oracle = reliability.useful_probability(chain, reliability.markov_solve(chain, t))
        cols["markov"] = oracle
        err = float(np.max(np.abs(oracle - cols[model])))
        status = "PASS" if err < 1e-6 else "FAIL"
        click.echo(f"verify: max |closed form - markov| = {err:.3e} {status}", err=True)
    text = reliability.curves_csv(t, cols)
    if csv_out:
        Path(csv_out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    if verify and status == "FAIL":
        sys.exit(1)


@main.command("tombench")
@click.option("--timeouts", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--horizon", type=click.IntRange(min=1), default=100_000_000, show_default=True)
@click.option("--delta", type=click.IntRange(min=0), default=20_000, show_default=True,
              help="Alarm duration in ticks.")
@click.option("--workers", "tau", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--mode", type=click.Choice(["wait", "cpu"]), default="wait", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--csv", "csv_out", default=None, help="Per-alarm delays (default: stdout).")
def tombench_cmd(timeouts, horizon, delta, tau, mode, seed, csv_out):
    """Alarm-delay benchmark of the time-out manager."""
    sched = tom.run_benchmark(timeouts, horizon, delta, tau, mode, seed=seed)
    text = sched.stats_csv()
    if csv_out:
        Path(csv_out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)
    mean = Fraction(sum(s.delta for s in sched.stats), len(sched.stats))
    click.echo(f"alarms={len(sched.stats)} violations={sched.violations} "
               f"mean_delay={float(mean):.1f}", err=True)


def run(argv=None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    try:
        main.main(args=argv, prog_name="ftbench", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception:  # noqa: BLE001 - last-resort internal error boundary
        traceback.print_exc()
        return 2
    return 0


def entry() -> None:
    sys.exit(run())


if __name__ == "__main__":
    entry()
