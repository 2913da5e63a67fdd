# Utils/config_utils.py

# ─── Editable Fields ───
FIELDS = [
    {"key": "p",                 "desc": "L_p exponent of the Minkowski problem", "type": float},
    {"key": "pexp",              "desc": "Capacity exponent",                      "type": float},
    {"key": "n",                 "desc": "Ambient dimension",                      "type": int},
    {"key": "grid_h",            "desc": "Grid spacing",                           "type": float},
    {"key": "grid_R",            "desc": "Half-width of the computational box",    "type": float},
    {"key": "max_iters",         "desc": "Newton iterations per energy solve",     "type": int},
    {"key": "energy_tol",        "desc": "Relative energy stopping tolerance",     "type": float},
    {"key": "boundary_mode",     "desc": "Outer boundary (zero | asymptotic)",     "type": str},
    {"key": "minimizer",         "desc": "Energy minimizer (newton | gauss_seidel)", "type": str},
    {"key": "max_sweeps",        "desc": "Gauss-Seidel sweep limit",               "type": int},
    {"key": "richardson",        "desc": "Estimate error from a 2h solve",         "type": bool},
    {"key": "min_box_ratio",     "desc": "Minimum R / circumradius",               "type": float},
    {"key": "measure_method",    "desc": "Facet masses (derivative | flux | variational)", "type": str},
    {"key": "threads",           "desc": "Worker threads",                         "type": int},
    {"key": "kkt_tol",           "desc": "Solver KKT tolerance",                   "type": float},
    {"key": "max_outer_iters",   "desc": "Solver iteration limit",                 "type": int},
    {"key": "step0",             "desc": "Initial relative step of the ascent",    "type": float},
    {"key": "floor_frac",        "desc": "Offset floor as a fraction of the largest offset", "type": float},
    {"key": "init",              "desc": "Solver start (uniform | random)",        "type": str},
    {"key": "seed",              "desc": "Random seed",                            "type": int},
]

import os
import json
from dataclasses import replace

from Core.errors import InvalidConfig
from Core.lattice import GridConfig
from Managers.minkowski_solver import SolverConfig
from Utils.log_utils import get_logger, DEBUG_L2

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "Config")
SETTINGS_FILE = os.path.join(CONFIG_DIR, "settings.json")

FIELD_TYPES = {f["key"]: f["type"] for f in FIELDS}

# config key -> GridConfig attribute
GRID_KEYS = {
    "n": "n", "grid_h": "h", "grid_R": "box_radius", "max_iters": "max_iters", "energy_tol": "energy_tol",
    "boundary_mode": "boundary_mode", "minimizer": "minimizer", "max_sweeps": "max_sweeps",
    "richardson": "richardson", "min_box_ratio": "min_box_ratio", "measure_method": "measure_method",
    "threads": "threads",
}
SOLVER_KEYS = ("kkt_tol", "max_outer_iters", "step0", "floor_frac", "init", "seed")


# ─── Get Default Config ───
def get_default_config(settings_path=SETTINGS_FILE):
    grid, solver = GridConfig(), SolverConfig()
    config = {
        "p": 2.0,
        "pexp": 2.0,
        **{key: getattr(grid, attr) for key, attr in GRID_KEYS.items()},
        **{key: getattr(solver, key) for key in SOLVER_KEYS},
    }
    return apply_overrides(config, load_settings(settings_path))


def load_settings(path):
    """Read a settings overlay; a missing file is an empty overlay, an unreadable one is logged."""
    logger = get_logger()
    if not path or not os.path.exists(path):
        return {}
    try:
        with open(path, "r") as f:
            settings = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error("Config", f"Error loading settings from {path}: {e}")
        return {}
    if not isinstance(settings, dict):
        logger.error("Config", f"Settings in {path} must be a JSON object")
        return {}
    logger.debug_at_level(DEBUG_L2, "Config", f"Loaded {len(settings)} settings from {path}")
    return settings


def load_config_file(path):
    """Overlay file given on the command line; unlike settings.json it must exist and parse."""
    try:
        with open(path, "r") as f:
            overlay = json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"config file {path} is not valid JSON: {e}") from e
    if not isinstance(overlay, dict):
        raise InvalidConfig(f"config file {path} must hold a JSON object")
    return overlay


def _coerce(key, value):
    kind = FIELD_TYPES[key]
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise InvalidConfig(f"{key} must be a boolean, got {value!r}")
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise InvalidConfig(f"{key} must be an integer, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError) as e:
        raise InvalidConfig(f"{key} must be of type {kind.__name__}, got {value!r}") from e


def apply_overrides(config, overrides):
    """New dict with overrides applied; None values are skipped and unknown keys warned about."""
    logger = get_logger()
    merged = dict(config)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in FIELD_TYPES:
            logger.warning("Config", f"Ignoring unknown config key '{key}'")
            continue
        merged[key] = _coerce(key, value)
    return merged


def grid_config_from(config):
    return GridConfig(**{attr: config[key] for key, attr in GRID_KEYS.items() if key in config})


def solver_config_from(config):
    grid = grid_config_from(config)
    return replace(SolverConfig(grid=grid), **{key: config[key] for key in SOLVER_KEYS if key in config})
