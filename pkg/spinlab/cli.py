"""Command-line front end; every command reads and writes files."""
import logging
import os
from functools import wraps
from typing import Optional

import click

from .app import LabConfig, create_app
from .dynamics import add_noise, magnetization_trace
from .equivalence import equivalence_test, partner_pair
from .errors import CapExceededError, InvalidStateError, ParseError, SpinLabError
from .file_utils import (
    load_dataset,
    load_model,
    load_pair,
    load_schedule,
    save_dataset,
    save_pair,
    json_text,
    trace_to_csv,
    write_atomic,
    write_json,
)
from .identify import design_schedules, fit_known_state, fit_unknown_state, simulate_dataset, state_factor
from .liealg import analyze
from .models import Dataset, DatasetRecord, FitOptions, Hypothesis, ParameterVector

logger = logging.getLogger(__name__)

EXIT_ERROR = 1
EXIT_INVALID_STATE = 2
EXIT_CAP = 3
EXIT_NOT_EQUIVALENT = 10


def handle_errors(f):
    """Decorator turning library errors into messages on stderr and exit codes"""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except InvalidStateError as e:
            code = EXIT_INVALID_STATE
            message = f"invalid state: {e}"
        except CapExceededError as e:
            code = EXIT_CAP
            message = str(e)
        except ParseError as e:
            code = EXIT_ERROR
            message = f"parse error: {e}"
        except SpinLabError as e:
            code = EXIT_ERROR
            message = str(e)
        logger.debug(f"Command {f.__name__} failed with exit code {code}")
        click.echo(f"error: {message}", err=True)
        click.get_current_context().exit(code)

    return decorated_function


def _emit(text: str, out: Optional[str]):
    if out:
        write_atomic(out, text)
    else:
        click.echo(text, nl=False)


def _emit_json(payload, out: Optional[str]):
    if out:
        write_json(out, payload)
    else:
        click.echo(json_text(payload), nl=False)


def _check_simulation_cap(n: int, cap: int):
    if n > cap:
        raise CapExceededError(n, cap, "simulation")


def _sample_grid(grid: Optional[float], config: LabConfig) -> float:
    # explicit values, non-positive ones included, reach validation unchanged
    return config.grid if grid is None else grid


@click.group()
@click.option('--verbose', is_flag=True, help='Log at DEBUG level.')
@click.pass_context
def cli(ctx, verbose):
    """Heisenberg spin-network lab: simulate, analyze, compare and identify models."""
    ctx.obj = create_app('DEBUG' if verbose else None)


@cli.command()
@click.option('--model', required=True, type=click.Path(), help='Model file with an initial_state.')
@click.option('--schedule', required=True, type=click.Path(), help='Control schedule file.')
@click.option('--grid', type=float, default=None, help='Sample spacing (default from configuration).')
@click.option('--out', type=click.Path(), default=None, help='Trace CSV path (stdout when omitted).')
@click.pass_obj
@handle_errors
def simulate(config, model, schedule, grid, out):
    """Magnetization traces of a model under a schedule."""
    pair = load_pair(model)
    _check_simulation_cap(pair.net.n, config.simulation_cap)
    trace = magnetization_trace(pair.net, load_schedule(schedule), pair.rho0, _sample_grid(grid, config))
    _emit(trace_to_csv(trace), out)


@cli.command(name='analyze')
@click.option('--model', required=True, type=click.Path(), help='Model file.')
@click.option('--out', type=click.Path(), default=None, help='Report JSON path (stdout when omitted).')
@click.pass_obj
@handle_errors
def analyze_command(config, model, out):
    """Controllability and observability report."""
    net, _ = load_model(model, allow_indefinite=True)
    report = analyze(net, config.closure_cap)
    _emit_json(report.to_dict(), out)


@cli.command()
@click.option('--pair', 'pair_path', required=True, type=click.Path(), help='Pair file (model + initial_state).')
@click.option('--out', required=True, type=click.Path(), help='Partner pair path.')
@click.option('--state-form', type=click.Choice(['matrix', 'strings']), default='matrix',
              help='How the partner state is written.')
@handle_errors
def partner(pair_path, out, state_form):
    """Write the sign-flipped partner of a pair."""
    pair = load_pair(pair_path, allow_indefinite=True)
    result, psd_ok = partner_pair(pair)
    save_pair(out, result, state_form)
    click.echo(f"psd_ok: {str(psd_ok).lower()}")


@cli.command()
@click.option('--pair-a', required=True, type=click.Path(), help='First pair file.')
@click.option('--pair-b', required=True, type=click.Path(), help='Second pair file.')
@click.option('--trials', type=int, default=20, show_default=True, help='Number of random schedules.')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--tol', type=float, default=1e-8, show_default=True)
@click.option('--grid', type=float, default=None, help='Sample spacing (default from configuration).')
@click.option('--out', type=click.Path(), default=None, help='Verdict JSON path (stdout when omitted).')
@click.pass_obj
@handle_errors
def equiv(config, pair_a, pair_b, trials, seed, tol, grid, out):
    """Compare two pairs over random schedules; exit 10 when distinguishable."""
    a = load_pair(pair_a, allow_indefinite=True)
    b = load_pair(pair_b, allow_indefinite=True)
    _check_simulation_cap(max(a.net.n, b.net.n), config.simulation_cap)
    verdict = equivalence_test(a, b, trials, seed, tol, _sample_grid(grid, config), config.workers)
    _emit_json(verdict.to_dict(), out)
    if not verdict.equivalent:
        click.get_current_context().exit(EXIT_NOT_EQUIVALENT)


def _initial_guess(hypothesis: Hypothesis, guess_path: Optional[str]) -> ParameterVector:
    if guess_path is None:
        # unit couplings and distinct ratios 1..n
        return ParameterVector(hypothesis, tuple(1.0 for _ in hypothesis.edges),
                               tuple(float(k) for k in range(1, hypothesis.n + 1)))
    net, rho0 = load_model(guess_path)
    if net.n != hypothesis.n:
        raise ParseError(f"guess has n={net.n}, dataset hypothesis has n={hypothesis.n}", guess_path)
    factor = None
    if rho0 is not None and not hypothesis.known_state:
        factor = state_factor(rho0)
    return ParameterVector.from_network(hypothesis, net, factor)


@cli.command()
@click.option('--data-dir', required=True, type=click.Path(), help='Dataset directory.')
@click.option('--guess', type=click.Path(), default=None, help='Model file used as the starting point.')
@click.option('--starts', type=int, default=1, show_default=True)
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--max-iter', type=int, default=200, show_default=True)
@click.option('--out', type=click.Path(), default=None, help='Fit result JSON path (stdout when omitted).')
@click.pass_obj
@handle_errors
def identify(config, data_dir, guess, starts, seed, max_iter, out):
    """Estimate couplings and ratios (and the state when unknown) from a dataset."""
    dataset, rho0 = load_dataset(data_dir)
    options = FitOptions(starts=starts, seed=seed, max_iter=max_iter, workers=config.workers)
    initial = _initial_guess(dataset.hypothesis, guess)
    if dataset.hypothesis.known_state:
        result = fit_known_state(dataset, rho0, initial, options)
        _emit_json(result.to_dict(), out)
        return
    fitted, mirrored = fit_unknown_state(dataset, initial, options)
    _emit_json({"branches": [fitted.to_dict(), mirrored.to_dict()]}, out)
    for result in (fitted, mirrored):
        click.echo(f"branch {result.branch}: rms residual {result.residual:.3e}", err=True)


@cli.command()
@click.option('--model', required=True, type=click.Path(), help='Ground-truth model file with an initial_state.')
@click.option('--out-dir', required=True, type=click.Path(), help='Dataset directory to create.')
@click.option('--count', type=int, default=6, show_default=True, help='Number of schedules.')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--grid', type=float, default=None, help='Sample spacing (default from configuration).')
@click.option('--noise', type=float, default=0.0, show_default=True, help='Gaussian noise level added to traces.')
@click.option('--unknown-state', is_flag=True, help='Omit the state from the dataset.')
@click.pass_obj
@handle_errors
def dataset(config, model, out_dir, count, seed, grid, noise, unknown_state):
    """Synthetic identification dataset from designed schedules."""
    pair = load_pair(model)
    _check_simulation_cap(pair.net.n, config.simulation_cap)
    hypothesis = Hypothesis(pair.net.n, tuple(pair.net.edges), known_state=not unknown_state)
    schedules = design_schedules(pair.net.n, count, seed)
    data = simulate_dataset(pair.net, pair.rho0, schedules, hypothesis, _sample_grid(grid, config))
    if noise > 0:
        records = [DatasetRecord(record.schedule, add_noise(record.trace, noise, [seed, index]))
                   for index, record in enumerate(data.records)]
        data = Dataset(tuple(records), data.grid, hypothesis)
    save_dataset(out_dir, data, None if unknown_state else pair.rho0)
    click.echo(f"wrote {len(data)} records to {os.path.abspath(out_dir)}")


def main():
    cli()


if __name__ == '__main__':
    main()
