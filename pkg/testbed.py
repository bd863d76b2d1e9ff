"""
MCVR TESTBED
Synthetic tasks with known structure: toy integrand, hierarchical render/re-noise
task, SDS-like residual task, polynomial and linear checks, and oracle proposals
"""

import logging
import threading
from functools import cached_property
from dataclasses import dataclass
from typing import Optional, Dict, Any

import numpy as np
from scipy import integrate

import streams
from efficiency import CostModel
from errors import ConfigError
from sampling import BaseDistribution, Proposal, build_proposal, ORACLE_FLOOR_MIX
from settings import parse_task_ref, PROPOSAL_WEIGHTS as WEIGHT_IDS

logger = logging.getLogger(__name__)

ORACLE_BINS = 64
ORACLE_SAMPLES_PER_BIN = 10_000


# ============================================
# NOISE SCHEDULE
# ============================================

@dataclass(frozen=True)
class SyntheticSchedule:
    """Scaled-linear schedule: betas evenly spaced in sqrt(beta)"""
    beta_start: float = 0.00085
    beta_end: float = 0.012
    T: int = 1000

    @cached_property
    def alphas_cumprod(self) -> np.ndarray:
        betas = np.linspace(np.sqrt(self.beta_start), np.sqrt(self.beta_end), self.T) ** 2
        return np.cumprod(1.0 - betas)

    def alpha_bar(self, t):
        """Continuous t in [0, 1] mapped onto the discrete grid by linear interpolation"""
        steps = np.asarray(t, dtype=float) * (self.T - 1)
        return np.interp(steps, np.arange(self.T), self.alphas_cumprod)

    def alpha(self, t):
        return np.sqrt(self.alpha_bar(t))

    def sigma(self, t):
        return np.sqrt(1.0 - self.alpha_bar(t))


DEFAULT_SCHEDULE = SyntheticSchedule()


def weight_sds(t, schedule: SyntheticSchedule = DEFAULT_SCHEDULE, w_kind: str = 'sigma_sq'):
    """w_SDS(t) = w(t) * alpha_t with w(t) = sigma_t^2"""
    if w_kind != 'sigma_sq':
        raise ValueError(f"Unknown w_kind {w_kind!r}")
    alpha_bar = schedule.alpha_bar(t)
    return (1.0 - alpha_bar) * np.sqrt(alpha_bar)


# ============================================
# TASKS
# ============================================

class Task:
    """
    g(x, t, eps) = loss_weight(t) * residual(x, t, eps).

    x is the render state (render_dim standard normals pushed through
    render_state), eps the re-noising draw (noise_dim standard normals).
    Shapes broadcast: x (..., render_dim), t (...), eps (..., noise_dim).
    """

    name = 'task'
    dim = 1
    render_dim = 0
    noise_dim = 0

    def __init__(self, base: Optional[BaseDistribution] = None, alpha: float = 1.0, seed: int = 0):
        self.base = base or BaseDistribution()
        self.cost_model = CostModel.parametric(alpha)
        self.seed = int(seed)
        self.params: Dict[str, Any] = {}
        self._proposals: Dict[str, Proposal] = {}
        self._lock = threading.Lock()

    def render_state(self, z):
        return z

    def loss_weight(self, t):
        return np.ones(np.shape(t))

    def residual(self, x, t, eps):
        raise NotImplementedError

    def contribution(self, x, t, eps):
        return self.loss_weight(t)[..., None] * self.residual(x, t, eps)

    def conditional_mean(self, t):
        """F(t) = E[g | t]"""
        raise NotImplementedError

    def heuristic_weight(self, t):
        return np.ones(np.shape(t))

    def true_mean(self) -> np.ndarray:
        return self._true_mean

    @cached_property
    def _true_mean(self) -> np.ndarray:
        value, _ = integrate.quad_vec(self.conditional_mean, self.base.t_min, self.base.t_max,
                                      epsabs=1e-13, epsrel=1e-11)
        return np.atleast_1d(np.asarray(value, dtype=float)) / self.base.width

    @property
    def analytic(self) -> Dict[str, Any]:
        return {'true_mean': self.true_mean()}

    def proposal(self, weight_id: str) -> Proposal:
        if weight_id not in WEIGHT_IDS:
            raise ConfigError(f"Unknown proposal weight {weight_id!r} (expected one of {', '.join(WEIGHT_IDS)})")
        with self._lock:
            if weight_id not in self._proposals:
                self._proposals[weight_id] = self._build_proposal(weight_id)
            return self._proposals[weight_id]

    def _build_proposal(self, weight_id: str) -> Proposal:
        if weight_id == 'flat':
            return build_proposal(self.base, 1.0, label='flat')
        if weight_id == 'sds':
            return build_proposal(self.base, weight_sds, label='sds')
        if weight_id == 'heuristic':
            return build_proposal(self.base, self.heuristic_weight, label='heuristic')
        return oracle_proposal(self)

    def describe(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'params': dict(self.params),
            'dim': self.dim,
            't_min': self.base.t_min,
            't_max': self.base.t_max,
            'cost_model': self.cost_model.to_dict(),
        }

    def __repr__(self):
        params = ','.join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.name}{{{params}}}"


class ConstantTask(Task):
    name = 'constant'

    def __init__(self, value=(1.0,), **kwargs):
        super().__init__(**kwargs)
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.dim = self.value.size
        self.params = {'value': self.value.tolist()}

    def residual(self, x, t, eps):
        return np.zeros(np.shape(t) + (self.dim,)) + self.value

    def conditional_mean(self, t):
        return np.zeros(np.shape(t) + (self.dim,)) + self.value


class LinearTask(Task):
    name = 'linear'

    def residual(self, x, t, eps):
        return np.asarray(t, dtype=float)[..., None]

    def conditional_mean(self, t):
        return np.asarray(t, dtype=float)[..., None]


class PolynomialTask(Task):
    """g = (t, t^2, sin 2 pi t), default support [0.02, 0.98]"""

    name = 'poly'
    dim = 3

    def __init__(self, base: Optional[BaseDistribution] = None, **kwargs):
        super().__init__(base=base or BaseDistribution(0.02, 0.98), **kwargs)

    def residual(self, x, t, eps):
        t = np.asarray(t, dtype=float)
        return np.stack([t, t * t, np.sin(2 * np.pi * t)], axis=-1)

    def conditional_mean(self, t):
        return self.residual(None, t, None)


def toy_profile(t):
    """f(t): floor plus a sharp bump at 0.7 and a broad bump at 0.25"""
    t = np.asarray(t, dtype=float)
    return (0.05
            + np.exp(-(t - 0.7) ** 2 / (2 * 0.03 ** 2))
            + 0.2 * np.exp(-(t - 0.25) ** 2 / (2 * 0.1 ** 2)))


class ToyIntegrand(Task):
    """g(t, eps) = f(t) (cos pi t, sin pi t) + rho f(t) eps"""

    name = 'toy'
    dim = 2
    noise_dim = 2

    def __init__(self, rho: float = 0.1, **kwargs):
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        super().__init__(**kwargs)
        self.rho = float(rho)
        self.params = {'rho': self.rho}

    def residual(self, x, t, eps):
        t = np.asarray(t, dtype=float)
        f = toy_profile(t)[..., None]
        direction = np.stack([np.cos(np.pi * t), np.sin(np.pi * t)], axis=-1)
        return f * direction + self.rho * f * eps

    def conditional_mean(self, t):
        t = np.asarray(t, dtype=float)
        return toy_profile(t)[..., None] * np.stack([np.cos(np.pi * t), np.sin(np.pi * t)], axis=-1)

    def second_moment(self, t):
        """E[||g||^2 | t]"""
        return toy_profile(t) ** 2 * (1.0 + self.rho ** 2 * self.dim)

    def heuristic_weight(self, t):
        return toy_profile(t)


class HierarchicalTask(Task):
    """
    g = A(x) + B(eps): per-render Gaussian with total variance sigma_A2 plus a
    per-draw Gaussian with total variance sigma_B2. Var(estimate) = sA2/R + sB2/(RK).
    """

    name = 'hier'

    def __init__(self, sigma_A2: float = 1.0, sigma_B2: float = 4.0, dim: int = 3, **kwargs):
        if sigma_A2 < 0 or sigma_B2 < 0:
            raise ValueError("sigma_A2 and sigma_B2 must be nonnegative")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        super().__init__(**kwargs)
        self.sigma_A2 = float(sigma_A2)
        self.sigma_B2 = float(sigma_B2)
        self.dim = self.render_dim = self.noise_dim = int(dim)
        self._a_scale = np.sqrt(self.sigma_A2 / self.dim)
        self._b_scale = np.sqrt(self.sigma_B2 / self.dim)
        self.params = {'sigmaA2': self.sigma_A2, 'sigmaB2': self.sigma_B2, 'dim': self.dim}

    def render_state(self, z):
        return self._a_scale * np.asarray(z, dtype=float)

    def residual(self, x, t, eps):
        return x + self._b_scale * eps

    def conditional_mean(self, t):
        return np.zeros(np.shape(t) + (self.dim,))

    def predicted_variance(self, R: int, K: int) -> float:
        return self.sigma_A2 / R + self.sigma_B2 / (R * K)

    @property
    def analytic(self) -> Dict[str, Any]:
        return {'true_mean': self.true_mean(), 'sigma_A2': self.sigma_A2, 'sigma_B2': self.sigma_B2}


class SdsLikeTask(Task):
    """
    g = w_SDS(t) * (d(t) + render_scale * x + noise_scale * eps) with a smoothly
    rotating target direction d(t).
    """

    name = 'sdslike'

    def __init__(self, dim: int = 8, render_scale: float = 0.3, noise_scale: float = 0.5,
                 schedule: SyntheticSchedule = DEFAULT_SCHEDULE, **kwargs):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        super().__init__(**kwargs)
        self.dim = self.render_dim = self.noise_dim = int(dim)
        self.render_scale = float(render_scale)
        self.noise_scale = float(noise_scale)
        self.schedule = schedule
        self._phases = 2 * np.pi * np.arange(self.dim) / self.dim
        self.params = {'dim': self.dim, 'render_scale': self.render_scale, 'noise_scale': self.noise_scale}

    def direction(self, t):
        return np.cos(np.pi * np.asarray(t, dtype=float)[..., None] + self._phases)

    def loss_weight(self, t):
        return weight_sds(t, self.schedule)

    def residual(self, x, t, eps):
        return self.direction(t) + self.render_scale * x + self.noise_scale * eps

    def conditional_mean(self, t):
        return self.loss_weight(t)[..., None] * self.direction(t)

    def heuristic_weight(self, t):
        return weight_sds(t, self.schedule)


# ============================================
# ORACLE PROPOSAL
# ============================================

def estimate_norm_profile(task: Task, bins: int = ORACLE_BINS,
                          samples_per_bin: int = ORACLE_SAMPLES_PER_BIN,
                          seed: Optional[int] = None):
    """
    sqrt(E[||g||^2 | t]) per equal-width bin. Returns (edges, profile).
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if samples_per_bin < 1:
        raise ValueError("samples_per_bin must be >= 1")

    rng = streams.generator(task.seed if seed is None else seed, streams.Stream.ORACLE)
    edges = np.linspace(task.base.t_min, task.base.t_max, bins + 1)
    second_moment = np.empty(bins)

    for b in range(bins):
        t = edges[b] + (edges[b + 1] - edges[b]) * rng.random(samples_per_bin)
        x = task.render_state(rng.standard_normal((samples_per_bin, task.render_dim)))
        eps = rng.standard_normal((samples_per_bin, task.noise_dim))
        g = task.contribution(x, t, eps)
        second_moment[b] = np.mean(np.sum(g * g, axis=-1))

    return edges, np.sqrt(second_moment)


def oracle_proposal(task: Task, bins: int = ORACLE_BINS,
                    samples_per_bin: int = ORACLE_SAMPLES_PER_BIN,
                    floor_mix: float = ORACLE_FLOOR_MIX, seed: Optional[int] = None) -> Proposal:
    """q* proportional to p * sqrt(E[||g||^2 | t]), piecewise constant by bin"""
    edges, profile = estimate_norm_profile(task, bins, samples_per_bin, seed)
    logger.info("Oracle profile for %r: %d bins x %d samples", task, bins, samples_per_bin)

    def binned(t):
        idx = np.clip(np.searchsorted(edges, t, side='right') - 1, 0, bins - 1)
        return profile[idx]

    return build_proposal(task.base, binned, floor_mix=floor_mix, label='oracle')


# ============================================
# TASK FACTORY
# ============================================

TASKS = {
    'constant': ConstantTask,
    'linear': LinearTask,
    'poly': PolynomialTask,
    'polynomial': PolynomialTask,
    'toy': ToyIntegrand,
    'hier': HierarchicalTask,
    'sdslike': SdsLikeTask,
}

# CLI spelling -> constructor argument
PARAM_ALIASES = {'sigmaA2': 'sigma_A2', 'sigmaB2': 'sigma_B2'}


def make_task(ref) -> Task:
    """Build a task from 'toy{rho=0.1}' or {'name': ..., 'params': {...}}"""
    parsed = parse_task_ref(ref)
    name, params = parsed['name'], dict(parsed['params'])

    task_class = TASKS.get(name)
    if task_class is None:
        raise ConfigError(f"Unknown task {name!r} (expected one of {', '.join(sorted(TASKS))})")

    kwargs = {PARAM_ALIASES.get(k, k): v for k, v in params.items()}
    if 't_min' in kwargs or 't_max' in kwargs:
        kwargs['base'] = BaseDistribution(float(kwargs.pop('t_min', 0.0)), float(kwargs.pop('t_max', 1.0)))

    try:
        return task_class(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad parameters for task {name!r}: {e}") from e


# Easy functions
def toy_integrand(rho: float = 0.1) -> ToyIntegrand:
    return ToyIntegrand(rho=rho)


def hierarchical_task(sigma_A2: float = 1.0, sigma_B2: float = 4.0, dim: int = 3) -> HierarchicalTask:
    return HierarchicalTask(sigma_A2=sigma_A2, sigma_B2=sigma_B2, dim=dim)


def sdslike_task(dim: int = 8, render_scale: float = 0.3, noise_scale: float = 0.5) -> SdsLikeTask:
    return SdsLikeTask(dim=dim, render_scale=render_scale, noise_scale=noise_scale)


def constant_task(value=(1.0,)) -> ConstantTask:
    return ConstantTask(value=value)


def linear_task() -> LinearTask:
    return LinearTask()


def polynomial_task() -> PolynomialTask:
    return PolynomialTask()


if __name__ == "__main__":
    toy = toy_integrand(0.1)
    print(f"Toy true mean: {toy.true_mean()}")
    t_grid = np.linspace(0, 1, 1001)
    w = weight_sds(t_grid)
    print(f"w_SDS peak at t = {t_grid[np.argmax(w)]:.3f}, value {w.max():.4f}")
