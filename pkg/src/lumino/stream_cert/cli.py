import functools
import logging
import sys
from dataclasses import dataclass

import click
import numpy as np
from lumino.stream_cert.adversary import AttackTarget, load_trace, replay_trace, validate_trace_budget
from lumino.stream_cert.certificate import bound_comparison_table, write_comparison_csv
from lumino.stream_cert.cli_utils import CLIUtils
from lumino.stream_cert.config import (
    load_environment, output_dir_from_env, resolve_experiment_config, setup_cli_logging
)
from lumino.stream_cert.constants import EXIT_FAILURE
from lumino.stream_cert.error_handler import ErrorHandler, StreamCertError, ValidationError
from lumino.stream_cert.event_handler import EventHandler
from lumino.stream_cert.harness import (
    ExperimentRunner, RunResult, emit_results, emit_sweep, run_simulation
)
from lumino.stream_cert.model import Architecture, load_model, save_model, train_sgd
from lumino.stream_cert.oracle import run_oracle_suite
from lumino.stream_cert.smoothing import SmoothingSpec
from lumino.stream_cert.stream import GeneratorConfig, emit_csv_stream, generate_synthetic_stream
from lumino.stream_cert.utils import check_and_create_dir, save_json_file

load_environment()


@dataclass
class CLIState:
    logger: logging.Logger
    event_handler: EventHandler
    error_handler: ErrorHandler


def initialize_cli_state() -> CLIState:
    """Set up logging and the event/error handlers shared by all commands"""
    logger = setup_cli_logging()
    return CLIState(logger=logger, event_handler=EventHandler(logger), error_handler=ErrorHandler())


def _fail(state: CLIState, error: BaseException) -> None:
    click.echo(f"Error: {state.error_handler.describe(error)}", err=True)
    sys.exit(state.error_handler.exit_code(error))


# Options mirroring ExperimentConfig fields; None means "not given on the command line"
_EXPERIMENT_OPTIONS = [
    click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='JSON experiment config file'),
    click.option('--tag', help='Run tag used in output file names'),
    click.option('--seed', type=int, help='Root seed'),
    click.option('--output-dir', help='Directory for results, manifests and traces'),
    click.option('--stream-csv', type=click.Path(exists=True, dir_okay=False), help='Evaluation stream CSV'),
    click.option('--train-csv', type=click.Path(exists=True, dir_okay=False), help='Training stream CSV'),
    click.option('--num-classes', type=int, help='Synthetic stream class count'),
    click.option('--num-features', type=int, help='Synthetic stream feature count'),
    click.option('--length', type=int, help='Synthetic evaluation stream length'),
    click.option('--train-length', type=int, help='Synthetic training stream length'),
    click.option('--w', type=int, help='Window size'),
    click.option('--smoothing', type=click.Choice(['gaussian', 'uniform']), help='Smoothing distribution'),
    click.option('--sigma', type=float, help='Gaussian smoothing noise'),
    click.option('--b', type=float, help='Uniform box width'),
    click.option('--eps-grid', help='Budgets, e.g. "0,0.25,0.5,1" or "0:2:9"'),
    click.option('--mc-reps', type=int, help='Monte Carlo repetitions'),
    click.option('--noise-policy', type=click.Choice(['per_item_once', 'fresh_per_window']),
                 help='Noise reuse across windows'),
    click.option('--alpha', type=int, help='Radius grid resolution of the attacker'),
    click.option('--pgd-steps', type=int, help='PGD iterations per radius'),
    click.option('--noise-draws', type=int, help='Noise draws averaged by the attacker'),
    click.option('--architecture', type=click.Choice([a.value for a in Architecture]), help='Model architecture'),
    click.option('--hidden-width', type=int, help='MLP hidden width'),
    click.option('--epochs', type=int, help='Training epochs'),
    click.option('--batch-size', type=int, help='Training batch size'),
    click.option('--learning-rate', type=float, help='Initial learning rate'),
    click.option('--augment/--no-augment', default=None, help='Train the smoothed model with noise augmentation'),
    click.option('--model-path', type=click.Path(exists=True, dir_okay=False), help='Undefended model file'),
    click.option('--smoothed-model-path', type=click.Path(exists=True, dir_okay=False), help='Smoothed model file'),
    click.option('--workers', type=int, help='Threads for eps-grid points'),
    click.option('--chunk-size', type=int, help='Steps per evaluation and attack chunk'),
]


def experiment_options(func):
    for option in reversed(_EXPERIMENT_OPTIONS):
        func = option(func)
    return func


def _build_config(options: dict, **extra):
    """ExperimentConfig from the command-line options of a command"""
    options = dict(options)
    config_path = options.pop('config_path', None)
    if options.get('eps_grid') is not None:
        options['eps_grid'] = CLIUtils.parse_grid(options['eps_grid'])
    options.update({k: v for k, v in extra.items() if v is not None})
    return resolve_experiment_config(options, config_path)


def _echo_result(result: RunResult) -> None:
    click.echo(f"Results for '{result.tag}' (config {result.config_hash[:12]}):")
    CLIUtils.echo_table(
        ['eps', 'clean_z', 'clean_z~', 'stderr', 'certified', 'attacked_z', 'attacked_z~'],
        [[r.eps, r.clean_z, r.clean_z_tilde, r.clean_z_tilde_stderr, r.certified_lower,
          r.attacked_z, r.attacked_z_tilde] for r in result.rows])


def handle_errors(func):
    """Route toolkit and I/O errors through the ErrorHandler"""
    @functools.wraps(func)
    def wrapper(state: CLIState, *args, **kwargs):
        try:
            return func(state, *args, **kwargs)
        except (StreamCertError, OSError, click.UsageError) as e:
            _fail(state, e)
    return wrapper


@click.group()
@click.pass_context
def cli(ctx):
    """Certified streaming performance under average-budget adversaries"""
    ctx.obj = initialize_cli_state()


@cli.command()
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Output CSV path')
@click.option('--num-classes', default=3, type=int, help='Number of classes')
@click.option('--num-features', default=4, type=int, help='Features per item')
@click.option('--length', default=300, type=int, help='Stream length')
@click.option('--min-segment', default=10, type=int, help='Shortest constant-label segment')
@click.option('--max-segment', default=30, type=int, help='Longest constant-label segment')
@click.option('--separation', default=3.0, type=float, help='Distance of class means from the origin')
@click.option('--noise', default=1.0, type=float, help='Within-class noise')
@click.option('--seed', default=0, type=int, help='Generator seed')
@click.pass_obj
@handle_errors
def gen(state: CLIState, out, num_classes, num_features, length, min_segment, max_segment,
        separation, noise, seed):
    """Write a synthetic labeled stream as CSV"""
    config = GeneratorConfig(num_classes=num_classes, num_features=num_features, length=length,
                             min_segment=min_segment, max_segment=max_segment, separation=separation,
                             noise=noise, seed=seed)
    stream = generate_synthetic_stream(config)
    emit_csv_stream(stream, out)
    click.echo(f"Wrote {stream.length} items ({stream.num_features} features, "
               f"{stream.num_classes} classes) to {out}")


@cli.command()
@experiment_options
@click.option('--out', required=True, type=click.Path(dir_okay=False), help='Model parameter file')
@click.option('--noise-sigma', type=float, help='Gaussian noise augmentation (none by default)')
@click.pass_obj
@handle_errors
def train(state: CLIState, out, noise_sigma, **options):
    """Train a window classifier and save its parameters"""
    config = _build_config(options)
    runner = ExperimentRunner(config, logger=state.logger, event_handler=state.event_handler)
    train_stream, _ = runner.load_streams()
    model = train_sgd(train_stream, config.w, Architecture(config.architecture),
                      config.train_config(noise_sigma=noise_sigma), logger=state.logger,
                      event_handler=state.event_handler)
    save_model(model, out)
    click.echo(f"Saved {model.architecture.value} model (w={model.window_size}) to {out}")


@cli.command()
@experiment_options
@click.pass_obj
@handle_errors
def certify(state: CLIState, **options):
    """Certified lower bounds on the smoothed performance over the eps grid"""
    config = _build_config(options)
    runner = ExperimentRunner(config, logger=state.logger, event_handler=state.event_handler)
    result = runner.run_certify_experiment()
    emit_results(result, runner.output_dir)
    _echo_result(result)


@cli.command()
@experiment_options
@click.option('--mode', type=click.Choice(['once', 'window', 'both']), help='Threat model')
@click.option('--emit-traces', is_flag=True, help='Write every attack trace')
@click.pass_obj
@handle_errors
def attack(state: CLIState, mode, emit_traces, **options):
    """Attack the undefended and smoothed models at every eps"""
    config = _build_config(options, attack_mode=mode)
    runner = ExperimentRunner(config, logger=state.logger, event_handler=state.event_handler)
    for result in runner.run_attack_experiments(emit_traces=emit_traces).values():
        emit_results(result, runner.output_dir)
        _echo_result(result)


@cli.command()
@experiment_options
@click.option('--mode', type=click.Choice(['once', 'window', 'both']), help='Threat model')
@click.option('--emit-traces', is_flag=True, help='Write every attack trace')
@click.pass_obj
@handle_errors
def simulate(state: CLIState, mode, emit_traces, **options):
    """Train, certify, attack and check the certificate end to end"""
    config = _build_config(options, attack_mode=mode)
    certify_result, attacks = run_simulation(config, logger=state.logger, event_handler=state.event_handler,
                                             emit_traces=emit_traces)
    _echo_result(certify_result)
    for result in attacks.values():
        _echo_result(result)
    click.echo("All checks passed")


@cli.command()
@click.option('--seed', default=0, type=int, help='Oracle seed')
@click.option('--instances', default=200, type=int, help='Random discrete instances for the lemma check')
@click.option('--output-dir', help='Where to dump counterexamples')
@click.pass_obj
@handle_errors
def verify(state: CLIState, seed, instances, output_dir):
    """Run the oracle suite"""
    results = run_oracle_suite(seed=seed, instances=instances, logger=state.logger,
                               event_handler=state.event_handler)
    if CLIUtils.echo_checks(results):
        click.echo("All oracle checks passed")
        return
    path = check_and_create_dir(output_dir or output_dir_from_env()) / 'verify_counterexamples.json'
    save_json_file(path, {r.name: r.counterexamples for r in results if not r.passed})
    click.echo(f"Counterexamples written to {path}", err=True)
    sys.exit(EXIT_FAILURE)


@cli.command()
@click.option('--sigma', default=1.0, type=float, help='Gaussian smoothing noise')
@click.option('--p-grid', default='0.6,0.75,0.9,0.99', help='Clean success probabilities')
@click.option('--eps-grid', default='0:3:25', help='Budgets')
@click.option('--out', type=click.Path(dir_okay=False), help='Optional CSV output')
@click.pass_obj
@handle_errors
def compare(state: CLIState, sigma, p_grid, eps_grid, out):
    """Our single-window bound next to the static smoothing bound"""
    p_values = CLIUtils.parse_grid(p_grid)
    rows = bound_comparison_table(sigma, p_values, CLIUtils.parse_grid(eps_grid))
    CLIUtils.echo_table(['eps', 'ours'] + [f"p={p:g}" for p in p_values],
                        [[r.eps, r.ours] + list(r.cohen) for r in rows])
    if out:
        write_comparison_csv(rows, p_values, out)
        click.echo(f"Wrote {out}")


@cli.command()
@experiment_options
@click.option('--windows', help='Window sizes, e.g. "1,2,4"')
@click.option('--sigmas', help='Smoothing noises, e.g. "0.25,0.5,1"')
@click.pass_obj
@handle_errors
def sweep(state: CLIState, windows, sigmas, **options):
    """Best certificate per window size over several smoothing noises"""
    config = _build_config(options, sweep_windows=CLIUtils.parse_grid(windows, int),
                           sweep_sigmas=CLIUtils.parse_grid(sigmas))
    runner = ExperimentRunner(config, logger=state.logger, event_handler=state.event_handler)
    result = runner.run_sweep_experiment()
    path = emit_sweep(result, runner.output_dir, config.tag)
    for w, best in result.best.items():
        click.echo(f"w={w}:")
        CLIUtils.echo_table(['eps', 'certified', 'setting'], best)
    click.echo(f"Wrote {path}")


@cli.command()
@click.option('--trace-dir', required=True, type=click.Path(exists=True, file_okay=False), help='Trace directory')
@click.option('--model-path', type=click.Path(exists=True, dir_okay=False), help='Replay outcomes with this model')
@click.option('--sigma', type=float, help='Smoothing noise used by a smoothed target (for replay)')
@click.pass_obj
@handle_errors
def audit(state: CLIState, trace_dir, model_path, sigma):
    """Re-validate the budget of a saved trace"""
    trace = load_trace(trace_dir)
    report = validate_trace_budget(trace)
    state.event_handler.emit('TraceAudited', mode=trace.mode.value, eps=trace.epsilon,
                             target=trace.target_kind, **report)
    click.echo(f"{trace.mode.value} trace, eps={trace.epsilon:g}, w={trace.w}: "
               f"average {report['average']:.6g}, worst prefix {report['worst_prefix_average']:.6g}")
    if not (report['compliant'] and report['prefix_compliant']):
        raise ValidationError(f"{trace_dir} exceeds its budget of {trace.epsilon:g}")
    if model_path:
        model = load_model(model_path)
        spec = SmoothingSpec.gaussian(sigma) if sigma is not None else None
        if trace.target_kind == 'smoothed' and spec is None:
            raise click.UsageError("--sigma is required to replay a smoothed trace")
        target = AttackTarget(model, spec, trace.noise_draws, trace.seed)
        replayed = replay_trace(trace, target)
        mismatches = int(np.sum(replayed != trace.outcomes_after))
        if mismatches:
            raise ValidationError(f"replay differs from recorded outcomes at {mismatches} steps")
        click.echo("Replay matches recorded outcomes")
    click.echo("Trace is budget compliant")


if __name__ == "__main__":
    cli()
