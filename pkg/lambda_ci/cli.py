#!/usr/bin/env python3
"""
Command-line front end for the lambda_ci toolkit
Resolves run configs, dispatches the subcommands and writes CSV, LNSF and manifest outputs

Exit codes: 0 on success, 1 when a validation or tolerance check fails, 2 on usage errors.
"""

import argparse
import itertools
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.fft

from . import __version__
from .ci_step import (
    COMPONENTS,
    ConvexIntegrationStep,
    IterationState,
    StepResult,
    desk_level,
    desk_toy_state,
    energy_gap_report,
    predicted_component_exponents,
    step_energy_profile,
)
from .config import ToolkitConfig, config
from .exceptions import ConfigError, LambdaCIError
from .field_io import load_series, save_series
from .geometry import admissible_c_star, build_wavevector_set, frame_table
from .jets import (
    JetParams,
    build_profiles,
    verify_corrector_identity,
    verify_decorrelation,
    verify_jet_scalings,
    verify_mean_oscillation,
)
from .lambda_nse import (
    LambdaSchedule,
    build_R0,
    high_mode_nonlinearity,
    initial_data,
    run_summary,
    solve,
    stress_decay_table,
)
from .schedule import (
    BackwardTimes,
    ScheduleSpec,
    backward_time_checks,
    delta_sequence,
    desk_scale_params,
    h3_params,
    paper_params,
    select_backward_times,
)
from .spectral_field import FieldSeries, norm, random_field
from .stochastic_forcing import NoiseSpec, moment_report, moments_monotone
from .utils import default_thread_count, format_timestamp, read_csv, run_parallel, safe_json_dump, setup_logging, write_csv
from .verification import CRITERIA, AcceptanceSuite, gated_failures

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

JET_SUITES = ('scalings', 'decorrelation', 'mean', 'wcwc')


@dataclass
class RunContext:
    """Global flags shared by every subcommand"""

    command: str
    argv: List[str]
    preset_name: str
    preset: Dict[str, Any]
    seed: Optional[int]
    threads: int
    output_dir: Path

    def seed_or(self, fallback: int) -> int:
        return int(fallback if self.seed is None else self.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='lambda-ci',
                                     description="Λ-NSE solver and convex-integration verification toolkit")
    parser.add_argument('--threads', type=int, default=None,
                        help="FFT workers and sweep pool size (default: physical cores)")
    parser.add_argument('--preset', choices=sorted(ToolkitConfig.PRESETS), default='desk',
                        help="Parameter regime (default: desk)")
    parser.add_argument('--seed', type=int, default=None, help="Seed overriding every seed in the run config")
    parser.add_argument('--output-dir', type=Path, default=None,
                        help=f"Output directory (default: {ToolkitConfig.DIRECTORIES['output']})")
    parser.add_argument('--log-level', default=ToolkitConfig.LOGGING['level'],
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")

    commands = parser.add_subparsers(dest='command', required=True)

    solve_cmd = commands.add_parser('solve', help="Integrate the Λ-NSE and emit diagnostics")
    solve_cmd.add_argument('--config', type=Path, default=None)

    noise_cmd = commands.add_parser('noise', help="Stochastic convolution reports")
    noise_actions = noise_cmd.add_subparsers(dest='action', required=True)
    report_cmd = noise_actions.add_parser('report', help="Monte-Carlo moment table")
    report_cmd.add_argument('--config', type=Path, default=None)

    jets_cmd = commands.add_parser('jets', help="Intermittent-jet verification")
    jets_actions = jets_cmd.add_subparsers(dest='action', required=True)
    verify_cmd = jets_actions.add_parser('verify', help="Run one jet verification suite")
    verify_cmd.add_argument('--suite', choices=JET_SUITES, required=True)

    geometry_cmd = commands.add_parser('geometry', help="Wave-vector set")
    geometry_actions = geometry_cmd.add_subparsers(dest='action', required=True)
    geometry_actions.add_parser('dump', help="Print the frames and certified constants as CSV")

    schedule_cmd = commands.add_parser('schedule', help="Backward schedule planning")
    schedule_actions = schedule_cmd.add_subparsers(dest='action', required=True)
    plan_cmd = schedule_actions.add_parser('plan', help="Plan T_q, δ_q, λ_q, ℓ_q")
    plan_cmd.add_argument('--r0', type=Path, default=None, help="CSV with columns T_star, R0_L1")
    plan_cmd.add_argument('--mode', choices=['desk', 'paper', 'h3'], default=None)
    plan_cmd.add_argument('--config', type=Path, default=None)

    step_cmd = commands.add_parser('step', help="One convex-integration step q → q+1")
    step_cmd.add_argument('--state', type=Path, default=None, help="State directory (default: desk toy state)")
    step_cmd.add_argument('--spec', type=Path, default=None, help="Schedule spec JSON from `schedule plan`")
    step_cmd.add_argument('--out', type=Path, default=None, help="Directory for the level q+1 state")
    step_cmd.add_argument('--config', type=Path, default=None)

    sweep_cmd = commands.add_parser('sweep', help="Grid of solve runs on the worker pool")
    sweep_cmd.add_argument('--config', type=Path, required=True)

    verify_all_cmd = commands.add_parser('verify-all', help="Run the acceptance suite")
    verify_all_cmd.add_argument('--only', nargs='+', choices=CRITERIA, default=None,
                                help="Run only these criteria")
    return parser


# ----------------------------------------------------------------------------------------------
# Helpers

def _run_config(command: str, path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return config.merge_run_config(command, {})
    return config.load_run_config(path, command)


def _write_failures(ctx: RunContext, failures: pd.DataFrame) -> bool:
    """Write failures.csv when anything failed; True when everything passed"""
    if len(failures):
        path = write_csv(failures, ctx.output_dir / 'failures.csv')
        logger.warning(f"{len(failures)} checks failed, see {path}")
        return False
    return True


def _write_manifest(ctx: RunContext, resolved: Dict[str, Any], exit_code: int):
    manifest = {
        'command': ctx.command,
        'argv': ctx.argv,
        'preset': ctx.preset_name,
        'seed': ctx.seed,
        'threads': ctx.threads,
        'config': resolved,
        'exit_code': exit_code,
        'toolkit_version': __version__,
        'timestamp': format_timestamp(format_str=ToolkitConfig.OUTPUT['timestamp_format']),
    }
    safe_json_dump(manifest, ctx.output_dir / 'manifest.json', indent=ToolkitConfig.OUTPUT['indent'])


def _set_nested(target: Dict[str, Any], dotted: str, value: Any):
    keys = dotted.split('.')
    node = target
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


# ----------------------------------------------------------------------------------------------
# solve and sweep

def run_solve(cfg: Dict[str, Any], out_dir: Path, preset: Dict[str, Any], seed: Optional[int] = None) -> Dict[str, Any]:
    """One Λ-NSE run with its diagnostics CSVs; returns {'success', 'max_balance_residual'}"""
    grid = tuple(cfg['grid'])
    exponent = cfg['schedule'].get('exponent') or preset['lambda_exponent']
    schedule = LambdaSchedule.for_grid(grid, cfg['T'], exponent=exponent, cap=cfg['schedule'].get('cap'),
                                       floor=cfg['schedule'].get('floor'))
    init_seed = cfg['init']['seed'] if seed is None else seed
    kind = cfg['init']['kind'] or preset['init_kind']
    v0 = initial_data(kind, grid, seed=init_seed, slope=cfg['init'].get('slope'))
    run = solve(v0, schedule, nu=cfg['nu'], T=cfg['T'], dt=cfg['dt'],
                geometric_levels=cfg['store']['geometric_levels'], store_every=cfg['store']['every'])

    high = high_mode_nonlinearity(run, cfg['T_star_sweep'])
    R0 = build_R0(run)
    diagnostics = pd.DataFrame(run_summary(run))
    diagnostics['dissipation'] = [float(d) for d in np.interp(diagnostics['t'], run.diagnostics['t'],
                                                              run.diagnostics['dissipation'])]
    diagnostics['Lambda'] = high['series']['Lambda'].to_numpy()
    diagnostics['band_L2'] = high['series']['band_L2'].to_numpy()
    diagnostics['stress_L1'] = high['series']['stress_L1'].to_numpy()
    diagnostics['R0_L1'] = [norm(R0.slice(i), 'Lp', p=1.0, oversample=1) for i in range(len(R0))]

    out_dir = Path(out_dir)
    write_csv(diagnostics, out_dir / 'diagnostics.csv')
    write_csv(high['table'], out_dir / 'high_modes.csv')
    write_csv(stress_decay_table(R0, cfg['T_star_sweep']), out_dir / 'r0_decay.csv')
    if cfg['write_fields']:
        save_series(out_dir / 'trajectory', 'u', run.trajectory)

    tol = config.get_tolerances(cfg['tolerances'])['energy_balance']
    worst = float(diagnostics['balance_residual'].max())
    failures = diagnostics.loc[diagnostics['balance_residual'] > tol, ['t', 'balance_residual']]
    return {'success': len(failures) == 0, 'max_balance_residual': worst, 'failures': failures,
            'steps': run.steps}


def cmd_solve(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    cfg = _run_config('solve', args.config)
    outcome = run_solve(cfg, ctx.output_dir, ctx.preset, ctx.seed)
    print(f"⚙️ Solved {outcome['steps']} steps, max energy-balance residual {outcome['max_balance_residual']:.3e}")
    ok = _write_failures(ctx, outcome['failures'])
    return (EXIT_OK if ok else EXIT_FAILED), cfg


def cmd_sweep(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    cfg = _run_config('sweep', args.config)
    vary = cfg['vary']
    names = sorted(vary)
    for name in names:
        if not isinstance(vary[name], list) or not vary[name]:
            raise ConfigError(f"sweep key '{name}' must map to a non-empty list")

    members = []
    for values in itertools.product(*(vary[name] for name in names)):
        raw = json.loads(json.dumps(cfg['base']))
        for name, value in zip(names, values):
            _set_nested(raw, name, value)
        members.append((dict(zip(names, values)), config.merge_run_config('solve', raw)))
    logger.info(f"Sweep over {names}: {len(members)} solve runs")

    def one(item):
        index, (point, member_cfg) = item
        outcome = run_solve(member_cfg, ctx.output_dir / f"run_{index:03d}", ctx.preset, ctx.seed)
        row = {'run': index}
        row.update({name: json.dumps(value) for name, value in point.items()})
        row.update({'max_balance_residual': outcome['max_balance_residual'], 'success': outcome['success']})
        return row

    rows = run_parallel(one, list(enumerate(members)), ctx.threads)
    summary = pd.DataFrame(rows)
    write_csv(summary, ctx.output_dir / 'sweep_summary.csv')
    ok = _write_failures(ctx, summary[~summary['success']])
    print(f"📊 Sweep finished: {int(summary['success'].sum())}/{len(summary)} runs passed")
    return (EXIT_OK if ok else EXIT_FAILED), cfg


# ----------------------------------------------------------------------------------------------
# noise, jets, geometry

def cmd_noise(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    cfg = _run_config('noise', args.config)
    spec = NoiseSpec(grid=tuple(cfg['grid']), nu=cfg['nu'], s_g=cfg['s_g'], amplitude=cfg['amplitude'],
                     seed=ctx.seed_or(cfg['seed']))
    report = moment_report(spec, n_samples=cfg['n_samples'], p_list=cfg['p_list'], delta=cfg['delta'],
                           T_sweep=cfg['T_sweep'], dt=cfg['dt'], threads=ctx.threads)
    table = report['table']
    write_csv(table, ctx.output_dir / 'noise_moments.csv')
    write_csv(report['holder'], ctx.output_dir / 'noise_holder.csv')

    tol = config.get_tolerances(cfg['tolerances'])['moment_exponent']
    fits = table.drop_duplicates('p')[['p', 'fitted_exponent', 'predicted_exponent']].copy()
    fits['gap'] = (fits['fitted_exponent'] - fits['predicted_exponent']).abs()
    failures = fits[~(fits['gap'] <= tol)]
    if not moments_monotone(table):
        failures = pd.concat([failures, pd.DataFrame([{'p': math.nan, 'gap': math.nan}])], ignore_index=True)
    print(f"🎲 Noise moments over {report['n_samples']} paths, empirical L = {report['L']:.4e}")
    ok = _write_failures(ctx, failures)
    return (EXIT_OK if ok else EXIT_FAILED), {**cfg, 'seed': spec.seed}


def jet_suite_rows(suite: str, preset: Dict[str, Any], seed: int,
                   tolerances: Dict[str, float]) -> Tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    """(rows, failed rows) of one jet verification suite"""
    jets = ToolkitConfig.JETS
    acceptance = ToolkitConfig.ACCEPTANCE
    rows: List[Dict[str, Any]] = []
    failed: List[Dict[str, Any]] = []

    if suite == 'scalings':
        profiles = build_profiles(jets['profile_resolution'])
        for p, N, M in acceptance['jets']['cases']:
            result = verify_jet_scalings(float(p), int(N), int(M), jets['lambda_sweep'], profiles)
            rows.extend(result['rows'])
            failed.extend(r for r in result['rows'] if r['point'].endswith('fit')
                          and not r['residual'] <= tolerances['jet_exponent'])
    elif suite == 'decorrelation':
        slack = acceptance['decorrelation']['slack']
        for p in acceptance['decorrelation']['p_list']:
            result = verify_decorrelation(lambda x: 1.0 + 0.5 * np.sin(2.0 * np.pi * x),
                                          lambda x: np.sin(2.0 * np.pi * x), acceptance['decorrelation']['sigma_sweep'], p=p)
            rows.extend(result['rows'])
            failed.extend(r for r in result['rows'] if r['point'].endswith('fit') and not r['residual'] <= slack)
    elif suite == 'mean':
        a = random_field(tuple(acceptance['decorrelation']['mean_grid']), 1, seed=seed, slope=4.0)
        v = random_field((8, 8, 8), 1, seed=seed + 1)
        result = verify_mean_oscillation(a, v, jets['mean_oscillation_lambda'])
        rows.extend(result['rows'])
        slack = acceptance['decorrelation']['max_exponent'] + 1.0
        failed.extend(r for r in result['rows'] if r['point'] == 'fit' and not r['residual'] <= slack)
    elif suite == 'wcwc':
        settings = acceptance['jets']
        wave_set = build_wavevector_set(seed=seed)
        params = JetParams.from_lambda(settings['lambda'], mode=preset['jet_mode'], wave_set=wave_set,
                                       strict_shifts=False)
        result = verify_corrector_identity(params, build_profiles(jets['profile_resolution']),
                                           tuple(settings['grid']), t=settings['time'], wave_set=wave_set)
        rows.extend(result['rows'])
        failed.extend(r for r in result['rows'] if not r['residual'] < tolerances['wcwc'])
    else:
        raise ConfigError(f"unknown jet suite '{suite}', expected one of {JET_SUITES}")
    return rows, failed


def cmd_jets(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    seed = ctx.seed_or(ToolkitConfig.NOISE['seed'])
    rows, failed = jet_suite_rows(args.suite, ctx.preset, seed, config.get_tolerances())
    write_csv(pd.DataFrame(rows, columns=['suite', 'point', 'measured', 'predicted', 'residual']),
              ctx.output_dir / f"jets_{args.suite}.csv")
    print(f"🧪 Jet suite {args.suite}: {len(rows)} rows, {len(failed)} failed")
    ok = _write_failures(ctx, pd.DataFrame(failed))
    return (EXIT_OK if ok else EXIT_FAILED), {'suite': args.suite, 'seed': seed}


def cmd_geometry(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    seed = ctx.seed_or(0)
    table = frame_table(build_wavevector_set(seed=seed))
    path = write_csv(table, ctx.output_dir / 'geometry.csv')
    print(path.read_text(encoding='utf-8'), end='')
    return EXIT_OK, {'seed': seed}


# ----------------------------------------------------------------------------------------------
# schedule and step

def plan_schedule(cfg: Dict[str, Any], mode: str, decay: Optional[pd.DataFrame],
                  seed: int) -> Tuple[ScheduleSpec, Optional[BackwardTimes]]:
    """ScheduleSpec for the mode, with backward times from the decay table when one is given"""
    c_star = cfg['c_star'] if cfg['c_star'] is not None else admissible_c_star(build_wavevector_set(seed=seed))
    eps = cfg['eps']
    depth = len(cfg['lambdas']) if mode == 'desk' else int(cfg['depth'])

    backward, deltas = None, None
    if decay is not None and mode != 'h3':
        # depth levels need T_0..T_{depth+1}
        deltas = delta_sequence(depth + 1)
        backward = select_backward_times(decay, c_star, deltas, cfg['T'], depth=depth + 1)

    if mode == 'desk':
        spec = desk_scale_params([float(lam) for lam in cfg['lambdas']], T=cfg['T'], c_star=c_star, eps=eps,
                                 delta_seq=deltas, backward=backward)
    elif mode == 'paper':
        b = cfg['b'] if cfg['b'] is not None else 14 * (math.floor(100.0 / eps / 14) + 1)
        spec = paper_params(cfg['a'], b, eps, depth, T=cfg['T'], c_star=c_star, delta_seq=deltas,
                            backward=backward)
    elif mode == 'h3':
        b = cfg['b'] if cfg['b'] is not None else 2 * (math.floor(1e4 / eps / 2) + 1)
        beta = cfg['beta'] if cfg['beta'] is not None else 1.0 / (1000.0 * b ** 4)
        spec = h3_params(cfg['a'], b, beta, c_star, depth, eps, T=cfg['T'])
    else:
        raise ConfigError(f"unknown schedule mode '{mode}'")
    return spec, backward


def cmd_schedule(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    cfg = _run_config('schedule', args.config)
    mode = args.mode or ctx.preset['schedule_mode']
    decay = None
    if args.r0 is not None:
        if not args.r0.exists():
            raise ConfigError(f"decay table {args.r0} does not exist")
        decay = read_csv(args.r0)
        missing = {'T_star', 'R0_L1'} - set(decay.columns)
        if missing:
            raise ConfigError(f"decay table {args.r0} lacks columns {sorted(missing)}")

    spec, backward = plan_schedule(cfg, mode, decay, ctx.seed_or(0))
    spec.to_json(ctx.output_dir / 'schedule_spec.json')
    checks = spec.checks()
    write_csv(checks, ctx.output_dir / 'schedule_checks.csv')
    write_csv(spec.table(), ctx.output_dir / 'schedule_plan.csv')
    failures = checks[~checks['ok'] & ~checks['relaxed']]
    if backward is not None:
        table = backward_time_checks(backward, decay, spec.c_star, spec.delta_seq)
        write_csv(table, ctx.output_dir / 'backward_checks.csv')
        failures = pd.concat([failures, table[~table['ok']]], ignore_index=True)

    print(f"📅 {mode} schedule with {spec.depth} levels, {int(checks['ok'].sum())}/{len(checks)} inequalities hold")
    ok = _write_failures(ctx, failures)
    return (EXIT_OK if ok else EXIT_FAILED), {**cfg, 'mode': mode, 'r0': args.r0}


def save_state(directory: Path, q: int, nu: float, u, R, z=None) -> Path:
    """u, R (and z) as LNSF series plus state.json"""
    directory = Path(directory)
    save_series(directory, 'u', u)
    save_series(directory, 'R', R)
    if z is not None:
        save_series(directory, 'z', z)
    safe_json_dump({'q': int(q), 'nu': float(nu)}, directory / 'state.json', indent=ToolkitConfig.OUTPUT['indent'])
    return directory


def load_state(directory: Path, level) -> IterationState:
    directory = Path(directory)
    meta_path = directory / 'state.json'
    if not meta_path.exists():
        raise ConfigError(f"{directory} is not a state directory (no state.json)")
    try:
        meta = json.loads(meta_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Malformed JSON in {meta_path} at line {e.lineno}, column {e.colno}: {e.msg}",
                          lineno=e.lineno, colno=e.colno) from e
    z = load_series(directory, 'z') if (directory / 'z_times.csv').exists() else None
    return IterationState(q=int(meta['q']), u=load_series(directory, 'u'), R=load_series(directory, 'R'),
                          level=level, nu=float(meta['nu']), z=z)


def _step_level(ctx: RunContext, args: argparse.Namespace, cfg: Dict[str, Any], wave_set):
    if args.spec is None:
        return desk_level(cfg['lambda'], wave_set)
    if not args.spec.exists():
        raise ConfigError(f"schedule spec {args.spec} does not exist")
    spec = ScheduleSpec.from_json(args.spec)
    q = 0
    if args.state is not None and (args.state / 'state.json').exists():
        q = int(json.loads((args.state / 'state.json').read_text(encoding='utf-8'))['q'])
    return spec.slice(q)


def write_step_outputs(result: StepResult, profile, out_dir: Path):
    """Norm, per-time and energy CSVs of one step"""
    predicted = predicted_component_exponents(result.eps)
    norms = result.norms.copy()
    norms['predicted_exponent'] = [predicted[name] for name in norms['component']]
    write_csv(norms, out_dir / 'step_norms.csv')
    write_csv(result.per_time, out_dir / 'step_times.csv')
    write_csv(energy_gap_report(result, profile), out_dir / 'energy_gap.csv')
    for name in COMPONENTS:
        save_series(out_dir / 'components', name, result.stored[name])


def cmd_step(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    cfg = _run_config('step', args.config)
    wave_set = build_wavevector_set(seed=ctx.seed_or(0))
    level = _step_level(ctx, args, cfg, wave_set)
    if args.state is None:
        state = desk_toy_state(level.lambda_next, wave_set=wave_set, nu=cfg['nu'])
        state = IterationState(q=level.q, u=state.u, R=state.R, level=level, nu=state.nu, z=state.z)
    else:
        state = load_state(args.state, level)

    profile = step_energy_profile(state, family=cfg['family'])
    step = ConvexIntegrationStep(state, level.lambda_next, wave_set=wave_set, energy_profile=profile,
                                 jet_mode=ctx.preset['jet_mode'], sigma_factor=cfg['sigma_factor'], eps=cfg['eps'],
                                 allow_truncation=cfg['allow_truncation'], store_every=cfg['store_every'])
    result = step.run()

    out_dir = args.out or ctx.output_dir / 'state_next'
    write_step_outputs(result, profile, ctx.output_dir)
    u_next = result.stored['u_next']
    z_next = None
    if state.z.max_abs() > 0.0:
        index = np.searchsorted(state.times, u_next.times)
        z_next = FieldSeries.from_fields(u_next.times, [state.z.slice(int(i)) for i in index])
    save_state(out_dir, state.q + 1, state.nu, u_next, result.stored['R_next'], z_next)

    factor = config.get_tolerances(cfg['tolerances'])['residual_floor_factor']
    print(f"🌀 Step q={state.q} → {state.q + 1} at λ={result.lam:g}: residual {result.residual:.3e}, "
          f"floor {result.floor:.3e}")
    failures = pd.DataFrame([] if result.residual_ok(factor) else [
        {'check': 'relaxed_residual', 'measured': result.residual, 'threshold': factor * result.floor}])
    ok = _write_failures(ctx, failures)
    return (EXIT_OK if ok else EXIT_FAILED), {**cfg, 'level': level.as_dict(), 'state': args.state,
                                              'spec': args.spec, 'out': out_dir}


# ----------------------------------------------------------------------------------------------
# verify-all

def cmd_verify_all(ctx: RunContext, args: argparse.Namespace) -> Tuple[int, Dict[str, Any]]:
    seed = ctx.seed_or(ToolkitConfig.NOISE['seed'])
    suite = AcceptanceSuite(preset=ctx.preset_name, seed=seed, threads=ctx.threads)
    outcome = suite.run_all(args.only)

    failed_rows = []
    for name in outcome['criteria']:
        rows = outcome['results'][name]['rows']
        write_csv(pd.DataFrame(rows), ctx.output_dir / f"criterion_{CRITERIA.index(name) + 1:02d}_{name}.csv")
        failed_rows.extend(gated_failures(rows))
    write_csv(outcome['summary'], ctx.output_dir / 'summary.csv')

    print("\n" + "=" * 60)
    for row in outcome['summary'].itertuples():
        marker = '✅' if row.success else '❌'
        print(f"{marker} {row.number:2d}. {row.criterion}: {row.n_checks - row.n_failed}/{row.n_checks} checks")
    print("=" * 60)

    ok = _write_failures(ctx, pd.DataFrame(failed_rows)) and outcome['success']
    return (EXIT_OK if ok else EXIT_FAILED), {'criteria': outcome['criteria'], 'seed': seed,
                                              'settings': suite.settings, 'tolerances': suite.tolerances}


HANDLERS = {
    'solve': cmd_solve,
    'noise': cmd_noise,
    'jets': cmd_jets,
    'geometry': cmd_geometry,
    'schedule': cmd_schedule,
    'step': cmd_step,
    'sweep': cmd_sweep,
    'verify-all': cmd_verify_all,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging('lambda_ci', args.log_level, ToolkitConfig.LOGGING['file'])
    threads = args.threads or default_thread_count()
    if threads < 1:
        print(f"❌ --threads must be positive, got {threads}", file=sys.stderr)
        return EXIT_USAGE

    ctx = RunContext(command=args.command, argv=argv, preset_name=args.preset,
                     preset=config.get_preset(args.preset), seed=args.seed, threads=threads,
                     output_dir=Path(args.output_dir or ToolkitConfig.DIRECTORIES['output']))
    ctx.output_dir.mkdir(parents=True, exist_ok=True)

    try:
        with scipy.fft.set_workers(threads):
            code, resolved = HANDLERS[args.command](ctx, args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except LambdaCIError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"❌ {args.command} failed: {e}", file=sys.stderr)
        _write_manifest(ctx, {'error': str(e)}, EXIT_FAILED)
        return EXIT_FAILED

    _write_manifest(ctx, resolved, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
