"""Coupled cavities in a common non-Markovian bath."""

import json as _json

from ._core import (  # noqa: F401
    CavityChainModel,
    ConfigError,
    HilbertSpec,
    NumericalError,
    __version__,
    builtin_names,
    cat_fidelity,
    cat_ket,
    cat_normalization,
    coherent_ket,
    fock_ket,
    mode_occupations,
    negativity,
    ou_coefficients,
    pair_negativity,
    partial_trace,
    trace_distance,
    wigner,
    wigner_point,
)
from . import _core


def builtin_config(name):
    """Config dict of a builtin scenario."""
    return _json.loads(_core._builtin_config_json(name))


def _as_config(config):
    return builtin_config(config) if isinstance(config, str) else config


def validate(config):
    """Validation report for a config dict or builtin name."""
    return _core._validate_json(_json.dumps(_as_config(config)))


def run(config, threads=0):
    """Runs every scenario of a config dict or builtin name in memory."""
    return _core._run_scenario_json(_json.dumps(_as_config(config)), threads)
