"""
Tests for the lambda-ci command line.

Validates:
- exit codes for success, failed checks and usage errors
- output files of the cheap subcommands
- byte-identical reruns of verify-all
"""

import json

import pytest

from lambda_ci import __version__
from lambda_ci.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, main
from lambda_ci.schedule import ScheduleSpec
from lambda_ci.utils import read_csv


def run(tmp_path, *args):
    return main(['--output-dir', str(tmp_path), '--threads', '1', '--log-level', 'WARNING', *args])


def write_config(tmp_path, data, name='run.json'):
    path = tmp_path / name
    path.write_text(data if isinstance(data, str) else json.dumps(data), encoding='utf-8')
    return str(path)


class TestUsage:
    """Test suite for argument and config errors."""

    def test_missing_subcommand(self, tmp_path):
        """No subcommand is a usage error."""
        assert main(['--output-dir', str(tmp_path)]) == EXIT_USAGE

    def test_unknown_subcommand(self, tmp_path):
        """Unknown subcommands are usage errors."""
        assert run(tmp_path, 'warp') == EXIT_USAGE

    def test_help(self, capsys):
        """--help exits cleanly."""
        assert main(['--help']) == EXIT_OK
        assert 'verify-all' in capsys.readouterr().out

    def test_negative_threads(self, tmp_path):
        """Thread counts must be positive."""
        assert main(['--output-dir', str(tmp_path), '--threads', '-1', 'geometry', 'dump']) == EXIT_USAGE

    def test_malformed_json(self, tmp_path, capsys):
        """Malformed config JSON exits 2 and names the position."""
        path = write_config(tmp_path, '{"grid": [16, 16, 16],,}')
        assert run(tmp_path, 'solve', '--config', path) == EXIT_USAGE
        assert 'line 1' in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        """Unknown config keys exit 2 and are named."""
        path = write_config(tmp_path, {'gird': [16, 16, 16]})
        assert run(tmp_path, 'solve', '--config', path) == EXIT_USAGE
        assert 'gird' in capsys.readouterr().err

    def test_sweep_needs_lists(self, tmp_path):
        """Sweep axes must be non-empty lists."""
        path = write_config(tmp_path, {'vary': {'nu': 0.1}})
        assert run(tmp_path, 'sweep', '--config', path) == EXIT_USAGE

    def test_missing_decay_table(self, tmp_path):
        """A decay table that does not exist is a usage error."""
        assert run(tmp_path, 'schedule', 'plan', '--r0', str(tmp_path / 'nope.csv')) == EXIT_USAGE


class TestGeometry:
    """Test suite for geometry dump."""

    def test_six_frames(self, tmp_path, capsys):
        """One row per frame, written to disk and echoed to stdout."""
        assert run(tmp_path, 'geometry', 'dump') == EXIT_OK
        table = read_csv(tmp_path / 'geometry.csv')
        assert len(table) == 6
        out = capsys.readouterr().out
        assert out == (tmp_path / 'geometry.csv').read_text(encoding='utf-8')

    def test_manifest(self, tmp_path):
        """The manifest records the command, flags and toolkit version."""
        assert run(tmp_path, '--seed', '7', 'geometry', 'dump') == EXIT_OK
        manifest = json.loads((tmp_path / 'manifest.json').read_text(encoding='utf-8'))
        assert manifest['command'] == 'geometry'
        assert manifest['seed'] == 7
        assert manifest['threads'] == 1
        assert manifest['exit_code'] == EXIT_OK
        assert manifest['toolkit_version'] == __version__
        assert manifest['config'] == {'seed': 7}


class TestSolve:
    """Test suite for solve."""

    def test_small_run(self, tmp_path):
        """Taylor-Green data on 16³ passes the energy balance and writes every output."""
        path = write_config(tmp_path, {'grid': [16, 16, 16], 'T': 0.05, 'dt': 1e-3,
                                       'init': {'kind': 'taylor_green'}})
        assert run(tmp_path, 'solve', '--config', path) == EXIT_OK
        diagnostics = read_csv(tmp_path / 'diagnostics.csv')
        assert {'t', 'energy', 'balance_residual', 'Lambda', 'band_L2', 'stress_L1', 'R0_L1'} <= set(diagnostics)
        assert diagnostics['balance_residual'].max() < 1e-5
        assert list(read_csv(tmp_path / 'r0_decay.csv').columns) == ['T_star', 'R0_L1']
        assert (tmp_path / 'trajectory' / 'u_times.csv').exists()
        assert not (tmp_path / 'failures.csv').exists()

    def test_tolerance_failure(self, tmp_path):
        """An unreachable balance tolerance exits 1 with a failures file."""
        path = write_config(tmp_path, {'grid': [8, 8, 8], 'T': 0.01, 'dt': 1e-3, 'write_fields': False,
                                       'init': {'kind': 'taylor_green'},
                                       'tolerances': {'energy_balance': -1.0}})
        assert run(tmp_path, 'solve', '--config', path) == EXIT_FAILED
        assert len(read_csv(tmp_path / 'failures.csv')) > 0


class TestSchedule:
    """Test suite for schedule plan."""

    def test_desk_plan(self, tmp_path):
        """The desk plan round-trips through its JSON file."""
        assert run(tmp_path, 'schedule', 'plan', '--mode', 'desk') == EXIT_OK
        spec = ScheduleSpec.from_json(tmp_path / 'schedule_spec.json')
        assert spec.mode == 'desk'
        assert spec.depth == 3
        checks = read_csv(tmp_path / 'schedule_checks.csv')
        assert checks[~checks['relaxed']]['ok'].all()

    def test_decay_table_columns(self, tmp_path):
        """Decay tables must carry T_star and R0_L1."""
        table = tmp_path / 'decay.csv'
        table.write_text('T_star,stress\n0.1,0.5\n', encoding='utf-8')
        assert run(tmp_path, 'schedule', 'plan', '--r0', str(table)) == EXIT_USAGE


class TestJets:
    """Test suite for jets verify."""

    def test_decorrelation_suite(self, tmp_path):
        """Sweep and fit rows for both Lebesgue exponents."""
        assert run(tmp_path, 'jets', 'verify', '--suite', 'decorrelation') == EXIT_OK
        rows = read_csv(tmp_path / 'jets_decorrelation.csv')
        assert list(rows.columns) == ['suite', 'point', 'measured', 'predicted', 'residual']
        assert rows['point'].str.endswith('fit').sum() == 2

    def test_unknown_suite(self, tmp_path):
        """Suites outside the known set are rejected by argparse."""
        assert run(tmp_path, 'jets', 'verify', '--suite', 'tubes') == EXIT_USAGE


class TestVerifyAll:
    """Test suite for verify-all."""

    def test_rerun_is_byte_identical(self, tmp_path):
        """Two runs of the same criterion with the same seed write identical CSVs."""
        first, second = tmp_path / 'a', tmp_path / 'b'
        assert run(first, '--seed', '7', 'verify-all', '--only', 'geometry') == EXIT_OK
        assert run(second, '--seed', '7', 'verify-all', '--only', 'geometry') == EXIT_OK
        name = 'criterion_04_geometry.csv'
        assert (first / name).read_bytes() == (second / name).read_bytes()
        assert (first / 'summary.csv').read_bytes() == (second / 'summary.csv').read_bytes()
        assert not (first / 'failures.csv').exists()

    def test_unknown_criterion(self, tmp_path):
        """--only accepts known criteria only."""
        assert run(tmp_path, 'verify-all', '--only', 'warp') == EXIT_USAGE


@pytest.mark.parametrize("argv", [['geometry'], ['noise'], ['schedule'], ['jets', 'verify']])
def test_incomplete_commands(tmp_path, argv):
    """Commands missing their action or required flag are usage errors."""
    assert run(tmp_path, *argv) == EXIT_USAGE
