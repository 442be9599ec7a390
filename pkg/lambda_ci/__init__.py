__version__ = "0.1.0"

from .config import ToolkitConfig, config
from .exceptions import ConfigError, LambdaCIError
from .spectral_field import FieldSeries, SpectralField, inverse_divergence, leray_project, norm
from .field_io import load_field, load_series, save_field, save_series
from .geometry import WaveVectorSet, build_wavevector_set, gamma
from .jets import JetFamily, JetParams, build_profiles
from .lambda_nse import LambdaSchedule, SolverRun, build_R0, solve
from .stochastic_forcing import NoiseSpec, moment_report, sample_convolution
from .schedule import EnergyProfile, LevelSlice, ScheduleSpec, build_energy_profile, select_backward_times
from .ci_step import ConvexIntegrationStep, IterationState, StepResult, run_lambda_sweep
from .verification import AcceptanceSuite
from .utils import setup_logging, safe_json_dump, write_csv, read_csv, loglog_fit, calculate_processing_time

__all__ = [
    # Configuration
    'ToolkitConfig',
    'config',

    # Errors
    'LambdaCIError',
    'ConfigError',

    # Fields
    'SpectralField',
    'FieldSeries',
    'leray_project',
    'inverse_divergence',
    'norm',
    'save_field',
    'load_field',
    'save_series',
    'load_series',

    # Building blocks
    'WaveVectorSet',
    'build_wavevector_set',
    'gamma',
    'JetParams',
    'JetFamily',
    'build_profiles',

    # Λ-NSE and noise
    'LambdaSchedule',
    'SolverRun',
    'solve',
    'build_R0',
    'NoiseSpec',
    'sample_convolution',
    'moment_report',

    # Iteration
    'LevelSlice',
    'ScheduleSpec',
    'EnergyProfile',
    'build_energy_profile',
    'select_backward_times',
    'IterationState',
    'ConvexIntegrationStep',
    'StepResult',
    'run_lambda_sweep',
    'AcceptanceSuite',

    # Utilities
    'setup_logging',
    'safe_json_dump',
    'write_csv',
    'read_csv',
    'loglog_fit',
    'calculate_processing_time'
]
