"""
MCVR SAMPLING
Timestep distributions, importance proposals with tabulated inverse-CDFs,
stratified quantiles and discrete-grid snapping
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Union, Callable, Sequence

import numpy as np

from errors import DegenerateProposal, SupportViolation

logger = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 4096

# Floor mixing for estimated (oracle) weight profiles
ORACLE_FLOOR_MIX = 1e-3

WeightProfile = Union[Callable, Sequence[float], np.ndarray]


@dataclass(frozen=True)
class BaseDistribution:
    """Uniform timestep density on [t_min, t_max]"""
    t_min: float = 0.0
    t_max: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.t_min < self.t_max <= 1.0):
            raise ValueError(f"Need 0 <= t_min < t_max <= 1, got [{self.t_min}, {self.t_max}]")

    @property
    def width(self) -> float:
        return self.t_max - self.t_min

    def density(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.t_min) & (t <= self.t_max)
        out = np.where(inside, 1.0 / self.width, 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        out = np.clip((t - self.t_min) / self.width, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def inverse_cdf(self, u):
        u = np.asarray(u, dtype=float)
        out = self.t_min + u * self.width
        return float(out) if out.ndim == 0 else out


@dataclass
class Proposal:
    """
    Tabulated importance proposal q on the base support.

    `nodes` holds q at the grid points; the CDF is the trapezoid integral of the
    nodes, interpolated linearly, so the density actually sampled is constant
    within each grid cell (`cell_density`). Weights use that same cell density.
    """
    base: BaseDistribution
    grid: np.ndarray
    nodes: np.ndarray
    cdf_table: np.ndarray
    cell_density: np.ndarray
    floor_mix: float = 0.0
    uniform: bool = False
    label: str = ''

    @classmethod
    def from_nodes(cls, base: BaseDistribution, grid, nodes, floor_mix: float = 0.0,
                   uniform: bool = False, label: str = '') -> 'Proposal':
        grid = np.asarray(grid, dtype=float)
        nodes = np.asarray(nodes, dtype=float)
        if uniform:
            nodes = np.full_like(grid, 1.0 / base.width)

        spacing = np.diff(grid)
        masses = 0.5 * spacing * (nodes[:-1] + nodes[1:])
        total = masses.sum()
        if not np.isfinite(total) or total <= 0:
            raise DegenerateProposal("degenerate proposal: tabulated density has no mass")

        cdf = np.concatenate(([0.0], np.cumsum(masses / total)))
        cdf[-1] = 1.0
        cell_density = np.diff(cdf) / spacing
        empty = np.count_nonzero(cell_density <= 0)
        if empty:
            raise SupportViolation(f"proposal violates the support condition: q(t) = 0 on {empty} of "
                                   f"{cell_density.size} grid cells where p(t) > 0 (raise floor_mix)")
        return cls(base=base, grid=grid, nodes=nodes / total, cdf_table=cdf,
                   cell_density=cell_density, floor_mix=float(floor_mix),
                   uniform=uniform, label=label)

    @property
    def grid_size(self) -> int:
        return self.grid.size

    def _cell(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.grid, t, side='right') - 1
        return np.clip(idx, 0, self.grid.size - 2)

    def density(self, t):
        t = np.asarray(t, dtype=float)
        inside = (t >= self.base.t_min) & (t <= self.base.t_max)
        if self.uniform:
            out = np.where(inside, 1.0 / self.base.width, 0.0)
        else:
            out = np.where(inside, self.cell_density[self._cell(t)], 0.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.uniform:
            out = self.base.cdf(t)
        else:
            out = np.interp(t, self.grid, self.cdf_table)
        return float(out) if np.ndim(out) == 0 else out

    def integral(self) -> float:
        return float(np.sum(self.cell_density * np.diff(self.grid)))

    def to_json(self) -> dict:
        return {
            't_min': self.base.t_min,
            't_max': self.base.t_max,
            'grid': self.grid.tolist(),
            'density': self.nodes.tolist(),
            'floor_mix': self.floor_mix,
        }

    @classmethod
    def from_json(cls, data: Union[dict, str]) -> 'Proposal':
        if isinstance(data, str):
            data = json.loads(data)
        base = BaseDistribution(float(data['t_min']), float(data['t_max']))
        nodes = np.asarray(data['density'], dtype=float)
        uniform = bool(np.all(nodes == nodes[0]))
        return cls.from_nodes(base, data['grid'], nodes, data.get('floor_mix', 0.0), uniform=uniform)


@dataclass
class QuantileBatch:
    M: int
    u_values: np.ndarray
    jitter: np.ndarray = field(default=None)


def _tabulate_profile(weight_profile: WeightProfile, grid: np.ndarray) -> np.ndarray:
    if callable(weight_profile):
        values = weight_profile(grid)
    else:
        values = weight_profile
    values = np.broadcast_to(np.asarray(values, dtype=float), grid.shape).copy()
    return values


def build_proposal(base: BaseDistribution, weight_profile: WeightProfile,
                   grid_size: int = DEFAULT_GRID_SIZE, floor_mix: float = 0.0,
                   label: str = '') -> Proposal:
    """
    q proportional to (1 - floor_mix) * p * w / Z + floor_mix * p, tabulated at
    grid_size equally spaced support points.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    if not (0.0 <= floor_mix < 1.0):
        raise ValueError("floor_mix must lie in [0, 1)")

    grid = np.linspace(base.t_min, base.t_max, grid_size)
    weights = _tabulate_profile(weight_profile, grid)

    if not np.all(np.isfinite(weights)):
        raise ValueError("weight profile must be finite on the support")
    if np.any(weights < 0):
        raise ValueError("weight profile must be nonnegative (negative weight found)")

    p = 1.0 / base.width
    if np.all(weights == weights[0]) and weights[0] > 0:
        return Proposal.from_nodes(base, grid, np.full(grid_size, p), floor_mix,
                                   uniform=True, label=label)

    spacing = np.diff(grid)
    z = float(np.sum(0.5 * spacing * p * (weights[:-1] + weights[1:])))
    if z <= 0:
        if floor_mix == 0.0:
            raise DegenerateProposal("degenerate proposal: all-zero weight profile with floor_mix = 0")
        logger.warning("All-zero weight profile; proposal falls back to the base density")
        return Proposal.from_nodes(base, grid, np.full(grid_size, p), floor_mix, uniform=True, label=label)

    nodes = (1.0 - floor_mix) * p * weights / z + floor_mix * p
    return Proposal.from_nodes(base, grid, nodes, floor_mix, label=label)


def base_proposal(base: BaseDistribution) -> Proposal:
    return build_proposal(base, 1.0, grid_size=2, label='base')


def inverse_cdf(proposal: Proposal, u):
    """t with CDF(t) = u under the tabulation; clamped to [t_min, t_max]"""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0.0) or np.any(u_arr > 1.0) or np.any(np.isnan(u_arr)):
        raise ValueError("quantile u must lie in [0, 1]")

    base = proposal.base
    if proposal.uniform:
        t = base.t_min + u_arr * base.width
    else:
        t = np.interp(u_arr, proposal.cdf_table, proposal.grid)
    t = np.clip(t, base.t_min, base.t_max)
    return float(t) if t.ndim == 0 else t


def importance_weight(proposal: Proposal, t):
    """w~(t) = p(t) / q(t) under the same tabulation used for sampling"""
    t_arr = np.asarray(t, dtype=float)
    base = proposal.base
    p = np.asarray(base.density(t_arr), dtype=float)

    if proposal.uniform:
        out = np.where(p > 0, 1.0, 0.0)
        return float(out) if out.ndim == 0 else out

    q = np.asarray(proposal.density(t_arr), dtype=float)
    if np.any((q <= 0) & (p > 0)):
        raise SupportViolation("proposal violates the support condition: q(t) = 0 where p(t) > 0")

    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.where(p > 0, p / np.where(q > 0, q, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def stratified_quantiles(M: int, rng: Optional[np.random.Generator] = None,
                         jitter=None) -> QuantileBatch:
    """u_k = (k - 1 + xi_k) / M, one draw in each equal-mass stratum"""
    if M < 1:
        raise ValueError("M must be >= 1")
    if jitter is None:
        if rng is None:
            raise ValueError("pass either rng or jitter")
        jitter = rng.random(M)
    jitter = np.asarray(jitter, dtype=float)
    if jitter.shape != (M,):
        raise ValueError(f"jitter must have shape ({M},)")
    u = (np.arange(M, dtype=float) + jitter) / M
    return QuantileBatch(M=M, u_values=u, jitter=jitter)


def snap_to_grid(t, T: int):
    """Nearest index in {0, ..., T-1} to t * (T - 1); ties round down"""
    if T < 1:
        raise ValueError("T must be >= 1")
    x = np.asarray(t, dtype=float) * (T - 1)
    idx = np.clip(np.ceil(x - 0.5), 0, T - 1).astype(np.int64)
    return int(idx) if idx.ndim == 0 else idx


def sample(proposal: Proposal, n: int, rng: np.random.Generator) -> np.ndarray:
    """Plain inverse-transform draws"""
    return inverse_cdf(proposal, rng.random(n))
