#!/usr/bin/env python3
"""
Configuration Module for the lambda_ci toolkit
Centralizes every numerical default, the parameter presets and run-config loading
"""

import copy
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from .exceptions import ConfigError


class ToolkitConfig:
    """Configuration class for the Λ-NSE / convex-integration toolkit"""

    # Directory Configuration
    DIRECTORIES = {
        'output': Path("runs"),
        'logs': Path("logs")
    }

    # Grid Configuration
    GRID = {
        'default_dims': (32, 32, 32),
        'dealias_factor': 2,       # zero padding used for every quadratic product
        'linf_oversample': 2,
        'norm_oversample': 2
    }

    # Λ-NSE solver
    SOLVER = {
        'nu': 0.05,
        'T': 0.5,
        'dt': 1e-3,
        'cap': None,               # None means min(grid)/4
        'floor': 0.5,
        'lambda_exponent': 1.0 / 8.0,
        'smoothing_window': 0.05,
        'geometric_levels': 8,
        'store_every': 25,
        'growth_tolerance': 1e-3,
        'init_seed': 7,
        'rough_slope': 1.1,
        'h3_slope': 7.1
    }

    # Stochastic forcing
    NOISE = {
        'grid': (8, 8, 8),
        'nu': 0.05,
        's_g': 2.0,
        'amplitude': 1.0,
        'seed': 7,
        'n_samples': 200,
        'dt': 2.0 ** -10,
        'delta': 0.1,
        'p_list': [1.0, 2.0, 4.0],
        'T_sweep': [2.0 ** -8, 2.0 ** -7, 2.0 ** -6, 2.0 ** -5, 2.0 ** -4]
    }

    # Intermittent jets
    JETS = {
        'profile_resolution': 4096,
        'transverse_resolution': 1024,
        'shift_lattice': 8,
        'lambda_sweep': [2.0 ** 8, 2.0 ** 10, 2.0 ** 12, 2.0 ** 14, 2.0 ** 16],
        'mean_oscillation_lambda': [1, 2, 4, 8]
    }

    # Backward schedule
    SCHEDULE = {
        'mode': 'desk',
        'T': 2.0,
        'depth': 4,
        'eps': 1e-4,
        'desk_lambdas': [8.0, 16.0, 32.0],
        'energy_check_points': 10_000,
        'family': 0.0
    }

    # One convex-integration step
    STEP = {
        'grid': (32, 32, 32),
        'lambda_sweep': [8.0, 16.0, 32.0, 64.0],
        'eps': 0.01,
        'q': 0,
        'T': 0.004,
        'T_next': 0.002,
        'T_after_next': 0.001,
        'ell': 5e-5,
        'n_times': 161,
        'delta_next': 1.0,
        'delta_after_next': 0.1,
        'delta_third': 1e-4,
        'toy_amplitude': 1e-3,
        'store_every': 20,
        'perturbation_rhos': [1.0, 2.0],
        'time_sampling_limit': 0.1,
        'allow_truncation': True,
        'sigma_factor': 1.5
    }

    # Numerical tolerances
    TOLERANCES = {
        'divergence': 1e-11,
        'mean': 1e-12,
        'symmetry': 1e-12,
        'reconstruction': 1e-12,
        'wcwc': 1e-8,
        'velcancel': 1e-8,
        'energy_balance': 1e-5,
        'jet_exponent': 0.05,
        'component_exponent': 0.15,
        'moment_exponent': 0.15,
        'residual_floor_factor': 10.0,
        'residual_relative': 1e-6
    }

    # Acceptance suite, one entry per criterion
    ACCEPTANCE = {
        'energy_balance': {'grid': (64, 64, 64), 'nu': 0.05, 'T': 0.5, 'dt': 1e-3},
        'high_modes': {
            'grid': (32, 32, 32),
            'nu': 0.05,
            'dt': 2.0 ** -12,
            'T_star_sweep': [2.0 ** -8, 2.0 ** -7, 2.0 ** -6, 2.0 ** -5, 2.0 ** -4, 2.0 ** -3],
            'band_fraction': 0.5,
            'ratio': 0.2
        },
        'r0_decay': {
            'grid': (32, 32, 32),
            'nu': 0.05,
            'dt': 2.0 ** -12,
            'T_star_sweep': [2.0 ** -8, 2.0 ** -7, 2.0 ** -6, 2.0 ** -5, 2.0 ** -4, 2.0 ** -3],
            'min_exponent': 0.25
        },
        'geometry': {'n_matrices': 100},
        'inverse_divergence': {
            'grid': (16, 16, 16),
            'stationary_grid': (256, 4, 4),
            'k_list': [8, 16, 32, 64],
            'mode_tolerance': 1e-13,
            'max_exponent': -0.9
        },
        'jets': {
            'grid': (24, 24, 24),
            'lambda': 8.0,
            'time': 0.2,
            'norm_lambda': 2.0,
            'norm_resolution': 1024,
            'unit_tolerance': 1e-6,
            'cases': [[1.0, 0, 0], [2.0, 0, 0], [2.0, 1, 0], [2.0, 0, 1]]
        },
        'decorrelation': {
            'sigma_sweep': [4, 8, 16, 32],
            'p_list': [1.0, 2.0],
            'slack': 0.1,
            'mean_grid': (64, 64, 64),
            'mean_lambda': [1, 2, 4, 8],
            'max_exponent': -0.9
        },
        'velcancel': {'grid': (32, 32, 32), 'n_stresses': 4, 'gamma': 0.2, 'scale': 0.1},
        'step': {
            'grid': STEP['grid'],
            'lambda_sweep': STEP['lambda_sweep'],
            'sigma_factor': STEP['sigma_factor'],
            'gated': ['osc1', 'osc2', 'cor']
        },
        'schedule': {
            'T': 0.1,
            'depth': 4,
            'c_star': 1e-3,
            'decay_exponent': 0.5,
            'table_T_star': [2.0 ** -3, 2.0 ** -4, 2.0 ** -5, 2.0 ** -6, 2.0 ** -7, 2.0 ** -8],
            'lambdas': [8.0, 16.0, 32.0],
            'n_points': 10_000
        },
        'noise': {
            'grid': NOISE['grid'],
            'n_samples': NOISE['n_samples'],
            'delta': NOISE['delta'],
            'dt': NOISE['dt'],
            'T_sweep': NOISE['T_sweep'],
            'variance_paths': 10_000,
            'variance_T': 0.5,
            'variance_rtol': 0.05
        },
        'determinism': {'criteria': ['geometry', 'decorrelation', 'schedule']}
    }

    # Output Configuration
    OUTPUT = {
        'csv_schema_version': 1,
        'float_format': '%.12e',
        'indent': 2,
        'timestamp_format': '%Y%m%d_%H%M%S'
    }

    # Logging Configuration
    LOGGING = {
        'level': 'INFO',
        'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        'file': None,
    }

    # Parameter regimes selectable with --preset
    PRESETS = {
        'desk': {
            'lambda_exponent': 1.0 / 8.0,
            'schedule_mode': 'desk',
            'jet_mode': 'desk',
            'init_kind': 'rough'
        },
        'paper': {
            'lambda_exponent': 1.0 / 8.0,
            'schedule_mode': 'paper',
            'jet_mode': 'strict',
            'init_kind': 'rough'
        },
        'h3': {
            'lambda_exponent': 1.0 / 10.0,
            'schedule_mode': 'h3',
            'jet_mode': 'desk',
            'init_kind': 'h3'
        }
    }

    # Keys accepted in each subcommand's JSON config, with their defaults
    COMMAND_DEFAULTS = {
        'solve': {
            'grid': [32, 32, 32],
            'nu': SOLVER['nu'],
            'T': SOLVER['T'],
            'dt': SOLVER['dt'],
            'schedule': {'cap': None, 'floor': SOLVER['floor'], 'exponent': None},
            'init': {'kind': None, 'seed': SOLVER['init_seed'], 'slope': None},
            'store': {'geometric_levels': SOLVER['geometric_levels'], 'every': SOLVER['store_every']},
            'T_star_sweep': [2.0 ** -8, 2.0 ** -7, 2.0 ** -6, 2.0 ** -5, 2.0 ** -4, 2.0 ** -3],
            'write_fields': True,
            'tolerances': {}
        },
        'noise': {
            'grid': list(NOISE['grid']),
            'nu': NOISE['nu'],
            's_g': NOISE['s_g'],
            'amplitude': NOISE['amplitude'],
            'seed': NOISE['seed'],
            'n_samples': NOISE['n_samples'],
            'dt': NOISE['dt'],
            'delta': NOISE['delta'],
            'p_list': NOISE['p_list'],
            'T_sweep': NOISE['T_sweep'],
            'tolerances': {}
        },
        'schedule': {
            'T': SCHEDULE['T'],
            'depth': SCHEDULE['depth'],
            'eps': SCHEDULE['eps'],
            'c_star': None,
            'lambdas': SCHEDULE['desk_lambdas'],
            'a': 2,
            'b': None,
            'beta': None,
            'tolerances': {}
        },
        'step': {
            'lambda': 8.0,
            'nu': SOLVER['nu'],
            'eps': STEP['eps'],
            'allow_truncation': STEP['allow_truncation'],
            'sigma_factor': STEP['sigma_factor'],
            'family': SCHEDULE['family'],
            'store_every': STEP['store_every'],
            'tolerances': {}
        },
        'sweep': {
            'base': {},
            'vary': {},
            'tolerances': {}
        }
    }

    @classmethod
    def validate_config(cls) -> bool:
        """Validate the configuration"""
        errors = []

        for name, path in cls.DIRECTORIES.items():
            try:
                path.mkdir(parents=True, exist_ok=True)
            except Exception as e:
                errors.append(f"Cannot create directory {name}: {path} - {e}")

        if any(n <= 0 or n % 2 for n in cls.GRID['default_dims']):
            errors.append(f"Grid dims must be positive even integers, got {cls.GRID['default_dims']}")
        if cls.GRID['dealias_factor'] < 2:
            errors.append("Dealiasing of quadratic products needs a padding factor of at least 2")

        if cls.SOLVER['nu'] <= 0 or cls.SOLVER['dt'] <= 0 or cls.SOLVER['T'] <= 0:
            errors.append("Solver nu, dt and T must be positive")
        if not 0.0 < cls.SOLVER['smoothing_window'] < 0.5:
            errors.append(f"Smoothing window {cls.SOLVER['smoothing_window']} outside (0, 0.5)")

        if cls.NOISE['s_g'] <= 1.5:
            errors.append(f"Noise decay s_g={cls.NOISE['s_g']} does not give a trace-class covariance")
        if cls.NOISE['n_samples'] < 100:
            errors.append("Moment reports need at least 100 samples")

        if cls.JETS['profile_resolution'] < 2 ** 10:
            errors.append("Jet profiles need at least 2^10 samples")
        if len(cls.JETS['lambda_sweep']) < 4 or len(cls.STEP['lambda_sweep']) < 4:
            errors.append("Scaling sweeps need at least four points")

        if cls.STEP['ell'] * 20 > cls.STEP['T_next'] - cls.STEP['T_after_next']:
            errors.append("Step mollification scale violates the 1/20 spacing rule")

        for name, preset in cls.PRESETS.items():
            if preset['schedule_mode'] not in ('desk', 'paper', 'h3'):
                errors.append(f"Preset {name} has unknown schedule mode {preset['schedule_mode']}")

        if errors:
            print("❌ Configuration validation failed:")
            for error in errors:
                print(f"   - {error}")
            return False

        print("✅ Configuration validation passed")
        return True

    @classmethod
    def get_preset(cls, name: str) -> Dict[str, Any]:
        """Get a parameter preset by name"""
        if name not in cls.PRESETS:
            raise ConfigError(f"Unknown preset '{name}', expected one of {sorted(cls.PRESETS)}")
        return dict(cls.PRESETS[name])

    @classmethod
    def get_acceptance_config(cls, overrides: Optional[Dict[str, Dict[str, Any]]] = None) -> Dict[str, Dict[str, Any]]:
        """Get per-criterion acceptance settings, with per-run overrides"""
        settings = copy.deepcopy(cls.ACCEPTANCE)
        for criterion, values in (overrides or {}).items():
            if criterion not in settings:
                raise ConfigError(f"Unknown acceptance criterion '{criterion}'")
            unknown = sorted(set(values) - set(settings[criterion]))
            if unknown:
                raise ConfigError(f"Unknown keys for criterion '{criterion}': {', '.join(unknown)}")
            settings[criterion].update(values)
        return settings

    @classmethod
    def get_tolerances(cls, overrides: Optional[Dict[str, float]] = None) -> Dict[str, float]:
        """Get tolerances, with per-run overrides"""
        tolerances = dict(cls.TOLERANCES)
        for key, value in (overrides or {}).items():
            if key not in tolerances:
                raise ConfigError(f"Unknown tolerance override '{key}'")
            tolerances[key] = float(value)
        return tolerances

    @classmethod
    def load_run_config(cls, path: Path, command: str) -> Dict[str, Any]:
        """Load a JSON run config for a subcommand, merged over its defaults"""
        if command not in cls.COMMAND_DEFAULTS:
            raise ConfigError(f"Subcommand '{command}' takes no config file")

        try:
            text = Path(path).read_text(encoding='utf-8')
        except OSError as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e

        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(
                f"Malformed JSON in {path} at line {e.lineno}, column {e.colno}: {e.msg}",
                lineno=e.lineno, colno=e.colno
            ) from e

        if not isinstance(raw, dict):
            raise ConfigError(f"Config {path} must hold a JSON object, got {type(raw).__name__}")

        return cls.merge_run_config(command, raw)

    @classmethod
    def merge_run_config(cls, command: str, raw: Dict[str, Any]) -> Dict[str, Any]:
        """Merge user keys over the subcommand defaults, rejecting unknown keys"""
        defaults = copy.deepcopy(cls.COMMAND_DEFAULTS[command])
        unknown = _unknown_keys(defaults, raw, prefix='')
        if unknown:
            raise ConfigError(f"Unknown keys for '{command}': {', '.join(unknown)}")

        merged = defaults
        for key, value in raw.items():
            if isinstance(merged.get(key), dict) and isinstance(value, dict) and key not in ('tolerances', 'base', 'vary'):
                merged[key].update(value)
            else:
                merged[key] = value
        return merged

    @classmethod
    def print_config_summary(cls, preset: str = 'desk'):
        """Print a summary of the current configuration"""
        chosen = cls.get_preset(preset)
        print("🔧 LAMBDA-CI CONFIGURATION SUMMARY")
        print("=" * 50)

        print(f"📁 Output: {cls.DIRECTORIES['output']}")
        print(f"📁 Logs: {cls.DIRECTORIES['logs']}")
        print(f"🎛️ Preset: {preset} (schedule mode {chosen['schedule_mode']}, jets {chosen['jet_mode']})")

        print(f"\n⚙️ Solver:")
        print(f"   - Grid: {cls.GRID['default_dims']}, dealias x{cls.GRID['dealias_factor']}")
        print(f"   - nu={cls.SOLVER['nu']}, T={cls.SOLVER['T']}, dt={cls.SOLVER['dt']}")
        print(f"   - Λ(t) exponent: {chosen['lambda_exponent']:.4f}")

        print(f"\n🎲 Noise:")
        print(f"   - s_g={cls.NOISE['s_g']}, samples={cls.NOISE['n_samples']}, seed={cls.NOISE['seed']}")

        print(f"\n🌀 Step:")
        print(f"   - λ sweep: {cls.STEP['lambda_sweep']}, grid {cls.STEP['grid']}")
        print(f"   - ε={cls.STEP['eps']}, ℓ={cls.STEP['ell']}")

        print("=" * 50)


def _unknown_keys(defaults: Dict[str, Any], raw: Dict[str, Any], prefix: str) -> List[str]:
    unknown = []
    for key, value in raw.items():
        if key not in defaults:
            unknown.append(f"{prefix}{key}")
        elif isinstance(defaults[key], dict) and defaults[key] and isinstance(value, dict):
            unknown.extend(_unknown_keys(defaults[key], value, prefix=f"{prefix}{key}."))
    return unknown


# Global configuration instance
config = ToolkitConfig()
