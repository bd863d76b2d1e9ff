"""
MCVR ESTIMATORS
Gradient estimators over (render, timestep, noise): naive, amortized re-noising,
per-render and global stratification, importance sampling and their combination
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

import streams
from efficiency import cost_of
from errors import ConfigError
from sampling import Proposal, base_proposal, inverse_cdf, importance_weight, stratified_quantiles
from settings import METHODS

logger = logging.getLogger(__name__)

IID = 'iid'
STRAT_PER_RENDER = 'strat_per_render'
STRAT_GLOBAL = 'strat_global'
ALLOCATIONS = (IID, STRAT_PER_RENDER, STRAT_GLOBAL)

BASE_MODE = 'base'
PROPOSAL_PREFIX = 'proposal:'


@dataclass(frozen=True)
class EstimatorSpec:
    """
    R renders, K re-noisings per render.
    timestep_mode: 'base' or 'proposal:<weight id>' (flat, sds, heuristic, oracle).
    allocation: iid, strat_per_render (K strata per render) or strat_global (R*K strata).
    """
    R: int = 1
    K: int = 1
    timestep_mode: str = BASE_MODE
    allocation: str = IID
    seed: int = 0

    def __post_init__(self):
        if int(self.R) < 1 or int(self.K) < 1:
            raise ConfigError(f"R and K must be positive, got R={self.R}, K={self.K}")
        if self.allocation not in ALLOCATIONS:
            raise ConfigError(f"Unknown allocation {self.allocation!r}")
        if self.timestep_mode != BASE_MODE and not self.timestep_mode.startswith(PROPOSAL_PREFIX):
            raise ConfigError(f"Unknown timestep mode {self.timestep_mode!r}")

    @property
    def weight_id(self) -> Optional[str]:
        if self.timestep_mode == BASE_MODE:
            return None
        return self.timestep_mode[len(PROPOSAL_PREFIX):]

    @property
    def degenerate(self) -> bool:
        """Per-render stratification with one stratum is plain IID"""
        return self.allocation == STRAT_PER_RENDER and self.K == 1

    @property
    def strata(self) -> int:
        if self.allocation == STRAT_PER_RENDER:
            return self.K
        if self.allocation == STRAT_GLOBAL:
            return self.R * self.K
        return 1

    def to_json(self) -> dict:
        return {
            'R': self.R,
            'K': self.K,
            'timestep_mode': self.timestep_mode,
            'allocation': self.allocation,
            'seed': self.seed,
        }

    @classmethod
    def from_json(cls, data: Union[dict, str]) -> 'EstimatorSpec':
        if isinstance(data, str):
            data = json.loads(data)
        return cls(R=int(data['R']), K=int(data['K']),
                   timestep_mode=data.get('timestep_mode', BASE_MODE),
                   allocation=data.get('allocation', IID),
                   seed=int(data.get('seed', 0)))

    @classmethod
    def from_method(cls, method: str, R: int, K: int, seed: int = 0,
                    weight_id: str = 'heuristic') -> 'EstimatorSpec':
        """Sweep presets: uniform, iw, strat, iw+strat"""
        if method not in METHODS:
            raise ConfigError(f"Unknown method {method!r} (expected one of {', '.join(METHODS)})")
        mode = PROPOSAL_PREFIX + weight_id if method.startswith('iw') else BASE_MODE
        if method.endswith('strat'):
            allocation = STRAT_PER_RENDER if K > 1 else STRAT_GLOBAL
        else:
            allocation = IID
        return cls(R=R, K=K, timestep_mode=mode, allocation=allocation, seed=seed)


@dataclass
class GradientEstimate:
    value: np.ndarray
    renders_used: int
    evals_used: int
    cost: float
    trial: int = 0


# ============================================
# DRAWS
# ============================================

def _proposal_for(task, spec: EstimatorSpec) -> Proposal:
    if spec.weight_id is None:
        return base_proposal(task.base)
    return task.proposal(spec.weight_id)


def _block_draws(task, spec: EstimatorSpec, block: int):
    """Fixed draw order per block: render normals, jitters, noise"""
    rng = streams.generator(spec.seed, streams.Stream.ESTIMATES, block)
    B, R, K = streams.BLOCK_SIZE, spec.R, spec.K
    z = rng.standard_normal((B, R, task.render_dim))
    xi = rng.random((B, R, K))
    eps = rng.standard_normal((B, R, K, task.noise_dim))
    return z, xi, eps


def _quantiles(spec: EstimatorSpec, xi: np.ndarray) -> np.ndarray:
    """Map jitters (..., R, K) to quantiles under the estimator's allocation"""
    R, K = spec.R, spec.K
    if spec.allocation == STRAT_PER_RENDER:
        return (np.arange(K, dtype=float) + xi) / K
    if spec.allocation == STRAT_GLOBAL:
        # stratum r*K + k belongs to render r
        offsets = (np.arange(R)[:, None] * K + np.arange(K)[None, :]).astype(float)
        return (offsets + xi) / (R * K)
    return xi


def _ordered_mean(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean with a fixed left-to-right summation order"""
    a = np.moveaxis(np.asarray(a), axis, 0)
    total = a[0].copy()
    for row in a[1:]:
        total = total + row
    return total / a.shape[0]


def _check_spec(spec: EstimatorSpec):
    if spec.degenerate:
        logger.warning("Per-render stratification with K = 1 is degenerate (equals IID)")


# ============================================
# ESTIMATORS
# ============================================

def run_estimator(task, spec: EstimatorSpec, trial: int = 0) -> GradientEstimate:
    """
    (1/R) sum_r (1/K) sum_k w~(t_rk) g(x_r, t_rk, eps_rk) for one trial index.
    Same (task, spec, trial) always gives the same estimate.
    """
    _check_spec(spec)
    proposal = _proposal_for(task, spec)
    block, row = streams.block_of(trial)
    z, xi, eps = _block_draws(task, spec, block)
    u = _quantiles(spec, xi[row])

    per_render = []
    for r in range(spec.R):
        x = task.render_state(z[row, r])
        t = inverse_cdf(proposal, u[r])
        w = importance_weight(proposal, t)
        g = task.contribution(x, t, eps[row, r])
        per_render.append(_ordered_mean(w[:, None] * g))

    value = _ordered_mean(np.stack(per_render))
    return GradientEstimate(value=value, renders_used=spec.R, evals_used=spec.R * spec.K,
                            cost=cost_of(spec, task.cost_model), trial=trial)


def combined_pipeline(task, spec: EstimatorSpec, trial: int = 0) -> GradientEstimate:
    """
    Reference composition of importance weighting, per-render stratification and
    re-noising, written as the explicit per-render loop. Matches run_estimator
    bit for bit.
    """
    if spec.allocation != STRAT_PER_RENDER:
        raise ValueError("combined_pipeline needs per-render stratification")
    _check_spec(spec)

    proposal = _proposal_for(task, spec)
    block, row = streams.block_of(trial)
    z, xi, eps = _block_draws(task, spec, block)

    per_render = []
    for r in range(spec.R):
        x = task.render_state(z[row, r])
        quantiles = stratified_quantiles(spec.K, jitter=xi[row, r])
        t = inverse_cdf(proposal, quantiles.u_values)
        w_tilde = importance_weight(proposal, t)
        eps_r = eps[row, r]
        residual = task.residual(x, t, eps_r)
        contributions = w_tilde[:, None] * (task.loss_weight(t)[:, None] * residual)
        per_render.append(_ordered_mean(contributions))

    value = _ordered_mean(np.stack(per_render))
    return GradientEstimate(value=value, renders_used=spec.R, evals_used=spec.R * spec.K,
                            cost=cost_of(spec, task.cost_model), trial=trial)


def _block_values(task, spec: EstimatorSpec, proposal: Proposal, block: int) -> np.ndarray:
    """All BLOCK_SIZE estimates of one block, shape (BLOCK_SIZE, dim)"""
    z, xi, eps = _block_draws(task, spec, block)
    x = task.render_state(z)
    u = _quantiles(spec, xi)
    t = inverse_cdf(proposal, u)
    w = importance_weight(proposal, t)
    g = task.contribution(x[:, :, None, :], t, eps)
    per_render = _ordered_mean(w[..., None] * g, axis=2)
    return _ordered_mean(per_render, axis=1)


def estimate_batch(task, spec: EstimatorSpec, start: int = 0, count: int = 1,
                   threads: int = 1) -> np.ndarray:
    """Estimates for trials start .. start + count - 1, shape (count, dim)"""
    if count < 1:
        raise ValueError("count must be >= 1")
    _check_spec(spec)
    proposal = _proposal_for(task, spec)

    first, _ = streams.block_of(start)
    last, _ = streams.block_of(start + count - 1)
    blocks = list(range(first, last + 1))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(lambda b: _block_values(task, spec, proposal, b), blocks))
    else:
        values = [_block_values(task, spec, proposal, b) for b in blocks]

    stacked = np.concatenate(values, axis=0)
    offset = start - first * streams.BLOCK_SIZE
    return stacked[offset:offset + count]


class EstimateStream:
    """Consecutive trials from `start`, one cached block at a time"""

    def __init__(self, task, spec: EstimatorSpec, start: int = 0):
        _check_spec(spec)
        self.task = task
        self.spec = spec
        self.position = start
        self._proposal = _proposal_for(task, spec)
        self._block = None
        self._values = None

    def _values_for(self, block: int) -> np.ndarray:
        if block != self._block:
            self._values = _block_values(self.task, self.spec, self._proposal, block)
            self._block = block
        return self._values

    def take(self, n: int) -> np.ndarray:
        """Next n estimates, shape (n, dim)"""
        chunks = []
        remaining = n
        while remaining > 0:
            block, row = streams.block_of(self.position)
            values = self._values_for(block)
            step = min(remaining, streams.BLOCK_SIZE - row)
            chunks.append(values[row:row + step])
            self.position += step
            remaining -= step
        if not chunks:
            return np.empty((0, self.task.dim))
        return np.concatenate(chunks, axis=0)

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        return self.take(1)[0]
