"""Command-line front end for asynchronous sample-and-hold analysis.

Exit status: 0 success or feasible, 2 infeasible or violated, 1 error.
"""

import logging
import sys
import traceback
from pathlib import Path

import click
import numpy as np
import pandas as pd

from asynciqc import config, iqc, plot, sim
from asynciqc.certify import (
    SearchSpec,
    certify_performance,
    certify_stability,
    parse_range,
    sweep_performance,
    sweep_stability,
)
from asynciqc.events import (
    MODES,
    AsyncBounds,
    bounds_from_h_delta,
    delay_profile,
    gen_admissible,
    load_schedule,
    load_sequence_text,
    save_schedule,
    validate,
)
from asynciqc.systemfile import resolve
from asynciqc.tables import write_csv

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

SIM_GAMMA_SLACK = 1e-3

logger = logging.getLogger("asynciqc.cli")


def _parse_bounds(text: str) -> AsyncBounds:
    try:
        values = [float(x) for x in text.split(",")]
    except ValueError:
        raise click.BadParameter(f"'{text}' is not a comma-separated list of numbers") from None
    if len(values) != 4:
        raise click.BadParameter("bounds need four values: tau',tau*,tau_circ,tau_natural")
    return AsyncBounds(*values)


def _out(ctx, name: str) -> Path:
    return Path(ctx.obj["output_dir"]) / name


def _search_spec(system, y_mode: str) -> SearchSpec:
    spec = SearchSpec.default().with_overrides(**system.search)
    return spec.with_y_zero() if y_mode == "zero" else spec


def _h_delta(system, h, delta):
    h = system.defaults.get("h") if h is None else h
    delta = system.defaults.get("delta", 0.0) if delta is None else delta
    if h is None:
        raise click.UsageError("--h is required (the system file has no default)")
    return h, delta


def _load_events(schedule, samples, updates, horizon):
    if schedule:
        return load_schedule(schedule)
    if not (samples and updates and horizon):
        raise click.UsageError("give --schedule, or --samples, --updates and --horizon")
    return load_sequence_text(samples, horizon), load_sequence_text(updates, horizon), None


@click.group()
@click.option("--output-dir", type=click.Path(file_okay=False), default=None,
              help="Directory for CSV and script artifacts (env ASYNCIQC_OUTPUT_DIR).")
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
@click.pass_context
def cli(ctx, output_dir, verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else config.LOG_LEVEL,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.ensure_object(dict)
    ctx.obj["output_dir"] = output_dir or config.output_dir()
    Path(ctx.obj["output_dir"]).mkdir(parents=True, exist_ok=True)


@cli.command("validate")
@click.option("--schedule", type=click.Path(exists=True, dir_okay=False), help="JSON schedule file.")
@click.option("--samples", type=click.Path(exists=True, dir_okay=False), help="Text file of sample times.")
@click.option("--updates", type=click.Path(exists=True, dir_okay=False), help="Text file of update times.")
@click.option("--horizon", type=float)
@click.option("--bounds", "bounds_text", help="tau',tau*,tau_circ,tau_natural (overrides the schedule file).")
@click.pass_context
def validate_cmd(ctx, schedule, samples, updates, horizon, bounds_text):
    """Check a schedule against the four asynchrony bounds."""
    Tp, Ts, bounds = _load_events(schedule, samples, updates, horizon)
    if bounds_text:
        bounds = _parse_bounds(bounds_text)
    if bounds is None:
        raise click.UsageError("no bounds given and none stored in the schedule")
    report = validate(Tp, Ts, bounds)
    rows = [{"constraint": v.constraint, "index": v.index, "value": v.value, "bound": v.bound}
            for v in report.violations]
    frame = pd.DataFrame(rows, columns=["constraint", "index", "value", "bound"])
    path = write_csv(frame, _out(ctx, "validation.csv"), {"value": "s", "bound": "s"})
    click.echo(f"checked {report.checked} samples, {len(report.violations)} violation(s), "
               f"{len(report.uncovered)} uncovered -> {path}")
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


@cli.command("delay-profile")
@click.option("--schedule", type=click.Path(exists=True, dir_okay=False))
@click.option("--samples", type=click.Path(exists=True, dir_okay=False))
@click.option("--updates", type=click.Path(exists=True, dir_okay=False))
@click.option("--horizon", type=float)
@click.option("--bounds", "bounds_text", help="Generate a schedule with these bounds instead of loading one.")
@click.option("--mode", type=click.Choice(MODES), default="jittered-delay")
@click.option("--co-timed", is_flag=True, help="Down-sampling updates exactly at the kept samples.")
@click.option("--seed", type=int)
@click.pass_context
def delay_profile_cmd(ctx, schedule, samples, updates, horizon, bounds_text, mode, co_timed, seed):
    """Tabulate the reset instants and values of the composed delay."""
    if bounds_text:
        if seed is None:
            raise click.UsageError("--seed is required when generating a schedule")
        if horizon is None:
            raise click.UsageError("--horizon is required when generating a schedule")
        bounds = _parse_bounds(bounds_text)
        Tp, Ts = gen_admissible(bounds, horizon, mode, seed, co_timed=co_timed)
        save_schedule(_out(ctx, "schedule.json"), Tp, Ts, bounds)
    else:
        Tp, Ts, _ = _load_events(schedule, samples, updates, horizon)
    p = delay_profile(Tp, Ts)
    frame = pd.DataFrame({"psi": p.psi, "lambda": p.lam, "reset_value": p.psi - p.lam})
    path = write_csv(frame, _out(ctx, "delay_profile.csv"), {"psi": "s", "lambda": "s", "reset_value": "s"})
    click.echo(f"{len(p.psi)} resets, {int(p.no_op.sum())} no-op updates, "
               f"max reset value {p.max_reset_value():.6g} -> {path}")
    return EXIT_OK


@cli.command("lemma-check")
@click.option("--bounds", "bounds_text", required=True)
@click.option("--trials", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--workers", type=int, default=None, help="Process pool size (env ASYNCIQC_WORKERS).")
@click.option("--plot-script", is_flag=True, help="Also write a standalone plotting script.")
@click.option("--png", is_flag=True, help="Also render the figure.")
@click.pass_context
def lemma_check_cmd(ctx, bounds_text, trials, seed, workers, plot_script, png):
    """Random gain and passivity trials of the delay operator."""
    bounds = _parse_bounds(bounds_text)
    rows = iqc.run_trials(bounds, trials, seed, workers=workers or config.WORKERS)
    path = iqc.trials_to_csv(rows, _out(ctx, "lemma_trials.csv"))
    summary = iqc.summarize(rows)
    click.echo(f"{summary['trials']} trials: max ratio {summary['max_ratio']:.6f}, "
               f"min normalized slack {summary['min_slack_normalized']:.3e} -> {path}")
    _plots(ctx, "lemma", path, "lemma", plot_script, png)
    failed = summary["gain_failures"] or summary["passivity_failures"]
    return EXIT_INFEASIBLE if failed else EXIT_OK


def _plots(ctx, kind: str, csv_path: Path, stem: str, script: bool, png: bool):
    if script:
        plot.write_plot_script(kind, csv_path, _out(ctx, f"plot_{stem}.py"))
    if png:
        plot.render(kind, csv_path, _out(ctx, f"{stem}.png"))


def _report_row(report) -> dict:
    return {"h": report.h, "delta": report.delta, "feasible": report.feasible, "X": report.X, "Y": report.Y,
            "margin": report.margin, "omega": report.omega, "gamma": report.gamma,
            "evaluations": report.evaluations}


_REPORT_UNITS = {"h": "s", "omega": "rad/s"}


@cli.command("certify-stability")
@click.option("--system", "system_spec", required=True, help="System file or example1 / example2[:tz].")
@click.option("--h", type=float)
@click.option("--delta", type=float)
@click.option("--y-mode", type=click.Choice(["free", "zero"]), default="free", show_default=True)
@click.pass_context
def certify_stability_cmd(ctx, system_spec, h, delta, y_mode):
    """Stability certificate at one (h, delta)."""
    system = resolve(system_spec)
    h, delta = _h_delta(system, h, delta)
    report = certify_stability(system.P, system.F, h, delta, _search_spec(system, y_mode))
    path = write_csv(pd.DataFrame([_report_row(report)]), _out(ctx, "certify_stability.csv"), _REPORT_UNITS)
    verdict = "feasible" if report.feasible else "infeasible"
    click.echo(f"h={h:g} delta={delta:g}: {verdict} (X={report.X:g}, Y={report.Y:g}, "
               f"margin={report.margin:.3e}) -> {path}")
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


@cli.command("certify-performance")
@click.option("--system", "system_spec", required=True)
@click.option("--h", type=float)
@click.option("--delta", type=float)
@click.option("--y-mode", type=click.Choice(["free", "zero"]), default="free", show_default=True)
@click.pass_context
def certify_performance_cmd(ctx, system_spec, h, delta, y_mode):
    """Smallest certified L2 gain from d to z at one (h, delta)."""
    system = resolve(system_spec)
    h, delta = _h_delta(system, h, delta)
    report = certify_performance(system.P, system.F, system.W, h, delta, _search_spec(system, y_mode))
    path = write_csv(pd.DataFrame([_report_row(report)]), _out(ctx, "certify_performance.csv"), _REPORT_UNITS)
    if report.feasible:
        click.echo(f"h={h:g} delta={delta:g}: gamma={report.gamma:.6g} (X={report.X:g}, Y={report.Y:g}) -> {path}")
        return EXIT_OK
    click.echo(f"h={h:g} delta={delta:g}: no performance certificate -> {path}")
    return EXIT_INFEASIBLE


@cli.command("sweep-stability")
@click.option("--system", "system_spec", required=True)
@click.option("--delta", "delta_range", default="0:0.25:2", show_default=True, help="start:step:stop")
@click.option("--y-mode", type=click.Choice(["free", "zero", "both"]), default="free", show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--plot-script", is_flag=True, help="Also write a standalone plotting script.")
@click.option("--png", is_flag=True, help="Also render the figure.")
@click.pass_context
def sweep_stability_cmd(ctx, system_spec, delta_range, y_mode, workers, plot_script, png):
    """Largest certified h over a delta grid."""
    system = resolve(system_spec)
    deltas = parse_range(delta_range)
    workers = workers or config.WORKERS
    modes = ["free", "zero"] if y_mode == "both" else [y_mode]
    frames = []
    for mode in modes:
        rows = sweep_stability(system.P, system.F, deltas, _search_spec(system, mode), workers)
        frames.append(pd.DataFrame(rows).assign(y_mode=mode))
    frame = pd.concat(frames, ignore_index=True)
    path = write_csv(frame, _out(ctx, "sweep_stability.csv"), {"h_max": "s"})
    for row in frame.itertuples(index=False):
        click.echo(f"[{row.y_mode}] delta={row.delta:g}: h_max={row.h_max:.6g}")
    _plots(ctx, "y-comparison" if y_mode == "both" else "h-max", path, "sweep_stability", plot_script, png)
    return EXIT_OK


@cli.command("sweep-performance")
@click.option("--system", "system_spec", required=True)
@click.option("--h", "h_range", required=True, help="start:step:stop")
@click.option("--delta", "delta_range", default="0", show_default=True, help="start:step:stop")
@click.option("--y-mode", type=click.Choice(["free", "zero"]), default="free", show_default=True)
@click.option("--workers", type=int, default=None)
@click.option("--plot-script", is_flag=True, help="Also write a standalone plotting script.")
@click.option("--png", is_flag=True, help="Also render the figure.")
@click.pass_context
def sweep_performance_cmd(ctx, system_spec, h_range, delta_range, y_mode, workers, plot_script, png):
    """Certified L2 gain over an (h, delta) grid."""
    system = resolve(system_spec)
    rows = sweep_performance(system.P, system.F, system.W, parse_range(h_range), parse_range(delta_range),
                             _search_spec(system, y_mode), workers or config.WORKERS)
    path = write_csv(pd.DataFrame(rows), _out(ctx, "sweep_performance.csv"), {"h": "s"})
    for row in rows:
        click.echo(f"h={row['h']:g} delta={row['delta']:g}: gamma={row['gamma']:.6g}")
    _plots(ctx, "gamma-surface", path, "sweep_performance", plot_script, png)
    return EXIT_OK


@cli.command("simulate")
@click.option("--system", "system_spec", required=True)
@click.option("--h", type=float)
@click.option("--delta", type=float)
@click.option("--seed", type=int, required=True)
@click.option("--mode", type=click.Choice(MODES), default="jittered-delay", show_default=True)
@click.option("--horizon", type=float, default=None, help="Defaults to 40 h.")
@click.option("--pulse-width", type=float, default=1.0, show_default=True)
@click.option("--trials", type=int, default=0, help="Monte-Carlo batch size instead of a single trace.")
@click.option("--gamma", type=float, default=None, help="Certified bound the empirical gains must respect.")
@click.option("--workers", type=int, default=None)
@click.option("--plot-script", is_flag=True, help="Also write a standalone plotting script.")
@click.option("--png", is_flag=True, help="Also render the figure.")
@click.pass_context
def simulate_cmd(ctx, system_spec, h, delta, seed, mode, horizon, pulse_width, trials, gamma, workers,
                 plot_script, png):
    """Simulate the sampled-data loop on random admissible schedules."""
    system = resolve(system_spec)
    h, delta = _h_delta(system, h, delta)
    bounds = bounds_from_h_delta(h, delta)
    horizon = horizon or sim.MC_HORIZON_FACTOR * h
    if trials:
        rows = sim.monte_carlo_gain(system.P, system.F, system.W, bounds, trials, seed, horizon=horizon,
                                    workers=workers or config.WORKERS)
        path = write_csv(pd.DataFrame(rows), _out(ctx, "monte_carlo.csv"))
        ratios = np.array([r["ratio"] for r in rows])
        click.echo(f"{trials} runs: max ||z||/||d|| = {ratios.max():.6g} -> {path}")
    else:
        Tp, Ts = gen_admissible(bounds, horizon, mode, seed, co_timed=bounds.tau_natural == 0)
        trace = sim.simulate_loop(system.P, system.F, system.W, Tp, Ts, sim.pulse(1.0, pulse_width, horizon))
        path = _out(ctx, "trace.csv")
        sim.trace_to_csv(trace, path)
        ratios = np.array([sim.empirical_gain(trace)])
        click.echo(f"||z||/||d|| = {ratios[0]:.6g} -> {path}")
        _plots(ctx, "trace", path, "trace", plot_script, png)
    if gamma is not None and ratios.max() > gamma + SIM_GAMMA_SLACK:
        click.echo(f"empirical gain exceeds the certified bound {gamma:g}", err=True)
        return EXIT_INFEASIBLE
    return EXIT_OK


def run(argv=None) -> int:
    """Run the CLI and map the outcome to the exit-status contract."""
    args = sys.argv[1:] if argv is None else list(argv)
    command = next((a for a in args if a in cli.commands), "asynciqc")
    try:
        status = cli.main(args=args, prog_name="asynciqc", standalone_mode=False)
    except click.exceptions.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except click.exceptions.Abort:
        return EXIT_ERROR
    except Exception:
        print(f"{command} failed:", file=sys.stderr)
        traceback.print_exc()
        return EXIT_ERROR
    return status if isinstance(status, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(run())
