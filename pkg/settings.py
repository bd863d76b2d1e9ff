"""
MCVR SETTINGS
Environment defaults (.env) and the experiment config file loader
"""

import os
import re
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, List, Dict, Any

import yaml
from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

# Environment defaults, overridden by the config file, overridden by CLI flags
DEFAULT_THREADS = int(os.getenv('MCVR_THREADS', '1'))
DEFAULT_OUT_DIR = os.getenv('MCVR_OUT_DIR', 'reports')
DEFAULT_LOG_LEVEL = os.getenv('MCVR_LOG_LEVEL', 'INFO')
DEFAULT_SEED = int(os.getenv('MCVR_SEED', '0'))

# All (R, K) pairs with R x K <= 32 in the SDS experiment matrix
DEFAULT_GRID_CAP = 32

METHODS = ('uniform', 'iw', 'strat', 'iw+strat')
PROPOSAL_WEIGHTS = ('flat', 'sds', 'heuristic', 'oracle')

TASK_PATTERN = re.compile(r'^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\{(.*)\})?\s*$')


def parse_task_ref(ref) -> Dict[str, Any]:
    """
    Accepts 'toy{rho=0.1}', 'hier{sigmaA2=1,sigmaB2=4,dim=3}', 'toy' or a mapping
    {name: ..., params: {...}}. Returns {'name': str, 'params': dict}.
    """
    if isinstance(ref, dict):
        if 'name' not in ref:
            raise ConfigError("task mapping needs a 'name'")
        params = ref.get('params') or {}
        if not isinstance(params, dict):
            raise ConfigError("task 'params' must be a mapping")
        return {'name': str(ref['name']), 'params': dict(params)}

    if not isinstance(ref, str):
        raise ConfigError(f"Unrecognised task reference: {ref!r}")

    match = TASK_PATTERN.match(ref)
    if not match:
        raise ConfigError(f"Malformed task reference: {ref!r}")

    name, body = match.group(1), match.group(2)
    params = {}
    if body and body.strip():
        for item in body.split(','):
            if '=' not in item:
                raise ConfigError(f"Malformed task parameter {item!r} in {ref!r}")
            key, value = item.split('=', 1)
            params[key.strip()] = yaml.safe_load(value.strip())
    return {'name': name, 'params': params}


@dataclass
class Criterion:
    """Convergence gate for Welford variance runs; defaults ask for three consecutive checks within 0.1%"""
    warmup: int = 1000
    interval: int = 50
    rel_tol: float = 0.001
    consecutive: int = 3
    cap: int = 20000

    def validate(self):
        for name in ('warmup', 'interval', 'consecutive', 'cap'):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"criterion.{name} must be positive")
        if self.rel_tol <= 0:
            raise ConfigError("criterion.rel_tol must be positive")
        return self

    def to_dict(self) -> dict:
        return {
            'warmup': self.warmup,
            'interval': self.interval,
            'rel_tol': self.rel_tol,
            'consecutive': self.consecutive,
            'cap': self.cap,
        }


@dataclass
class ExperimentConfig:
    task: Dict[str, Any] = field(default_factory=lambda: {'name': 'hier', 'params': {}})
    grid: List[tuple] = field(default_factory=list)
    grid_cap: int = DEFAULT_GRID_CAP
    cost_model: Dict[str, Any] = field(default_factory=lambda: {'alpha': 1.0})
    proposal: str = 'heuristic'
    criterion: Criterion = field(default_factory=Criterion)
    n_gt: int = 0
    seed: int = DEFAULT_SEED
    out_dir: str = DEFAULT_OUT_DIR
    threads: int = DEFAULT_THREADS
    attribution: Dict[str, Any] = field(default_factory=dict)
    pairprob: Dict[str, Any] = field(default_factory=dict)

    def validate(self, require_grid: bool = True):
        if require_grid and not self.grid:
            raise ConfigError("Estimator grid is empty")
        for method, R, K in self.grid:
            if method not in METHODS:
                raise ConfigError(f"Unknown method {method!r} (expected one of {', '.join(METHODS)})")
            if R <= 0 or K <= 0:
                raise ConfigError(f"Grid cell ({method}, {R}, {K}) must have positive R and K")
            if R * K > self.grid_cap:
                raise ConfigError(f"Grid cell ({method}, {R}, {K}) exceeds R*K <= {self.grid_cap}")
        if self.proposal not in PROPOSAL_WEIGHTS:
            raise ConfigError(f"Unknown proposal weight {self.proposal!r} (expected one of {', '.join(PROPOSAL_WEIGHTS)})")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.n_gt < 0:
            raise ConfigError("n_gt must be >= 0")
        self.criterion.validate()
        return self


def _expand_grid(raw, cap: int) -> List[tuple]:
    """Explicit [[method, R, K], ...] cells or {methods, R, K, max_product}"""
    if raw is None:
        return []
    if isinstance(raw, dict):
        methods = raw.get('methods', ['uniform'])
        r_values = raw.get('R', [1, 2, 4, 8, 16, 32])
        k_values = raw.get('K', [1, 2, 4, 8, 16, 32])
        limit = int(raw.get('max_product', cap))
        cells = []
        for method in methods:
            for R in r_values:
                for K in k_values:
                    if int(R) * int(K) <= limit:
                        cells.append((str(method), int(R), int(K)))
        return cells

    cells = []
    for entry in raw:
        if isinstance(entry, dict):
            cells.append((str(entry.get('method', 'uniform')), int(entry['R']), int(entry['K'])))
        elif isinstance(entry, (list, tuple)) and len(entry) == 3:
            cells.append((str(entry[0]), int(entry[1]), int(entry[2])))
        elif isinstance(entry, (list, tuple)) and len(entry) == 2:
            cells.append(('uniform', int(entry[0]), int(entry[1])))
        else:
            raise ConfigError(f"Malformed grid cell: {entry!r}")
    return cells


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("Config file must hold a mapping at the top level")

    try:
        cap = int(data.get('grid_cap', DEFAULT_GRID_CAP))
        criterion = Criterion(**(data.get('criterion') or {}))
        config = ExperimentConfig(
            task=parse_task_ref(data.get('task', 'hier')),
            grid=_expand_grid(data.get('grid'), cap),
            grid_cap=cap,
            cost_model=dict(data.get('cost_model') or {'alpha': 1.0}),
            proposal=str(data.get('proposal', 'heuristic')),
            criterion=criterion,
            n_gt=int(data.get('n_gt', 0)),
            seed=int(data.get('seed', DEFAULT_SEED)),
            out_dir=str(data.get('out_dir', DEFAULT_OUT_DIR)),
            threads=int(data.get('threads', DEFAULT_THREADS)),
            attribution=dict(data.get('attribution') or {}),
            pairprob=dict(data.get('pairprob') or {}),
        )
    except (TypeError, KeyError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid config: {e}") from e
    return config


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read a YAML (or JSON) experiment file. No path means all defaults."""
    if path is None:
        return config_from_dict({})

    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(config_path, 'r') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e

    logger.debug("Loaded config %s", config_path)
    return config_from_dict(data)
