"""
MCVR EFFICIENCY
Cost models, baseline Pareto curves with 1/N extrapolation,
effective compute multiplier (ECM) and relative efficiency (RE)
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, List, Dict, Tuple, Iterable

import numpy as np

from errors import ConfigError, UnreachableIsoVariance

logger = logging.getLogger(__name__)

SWEEP_HEADER = ('method', 'R', 'K', 'cost', 'variance', 'ecm', 're')


@dataclass
class CostModel:
    """
    Parametric: cost(R, K) = alpha * R + R * K (denoise unit cost 1).
    Measured: explicit table {(R, K): cost}.
    """
    kind: str = 'parametric'
    alpha: float = 1.0
    table: Dict[Tuple[int, int], float] = field(default_factory=dict)

    @classmethod
    def parametric(cls, alpha: float) -> 'CostModel':
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        return cls(kind='parametric', alpha=float(alpha))

    @classmethod
    def measured(cls, table) -> 'CostModel':
        parsed = {}
        items = table.items() if isinstance(table, dict) else table
        for key, cost in items:
            if isinstance(key, str):
                R, K = (int(part) for part in key.replace('x', ',').split(','))
            else:
                R, K = (int(part) for part in key)
            if cost <= 0:
                raise ValueError(f"measured cost for ({R}, {K}) must be positive")
            parsed[(R, K)] = float(cost)
        return cls(kind='measured', table=parsed)

    @classmethod
    def from_config(cls, data: Optional[dict]) -> 'CostModel':
        data = data or {}
        try:
            if 'table' in data:
                return cls.measured(data['table'])
            return cls.parametric(float(data.get('alpha', 1.0)))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid cost model: {e}") from e

    def to_dict(self) -> dict:
        if self.kind == 'measured':
            return {'kind': 'measured', 'table': {f"{R},{K}": c for (R, K), c in sorted(self.table.items())}}
        return {'kind': 'parametric', 'alpha': self.alpha}


def cost_of(spec, model: CostModel) -> float:
    """B = alpha * R + R * K, or the measured table entry for (R, K)"""
    R, K = int(spec.R), int(spec.K)
    if R < 1 or K < 1:
        raise ValueError("R and K must be positive")
    if model.kind == 'measured':
        if (R, K) not in model.table:
            raise ConfigError(f"No measured cost for (R={R}, K={K})")
        return model.table[(R, K)]
    return model.alpha * R + R * K


@dataclass
class ParetoCurve:
    """Dominance-filtered baseline: cost ascending, variance strictly decreasing"""
    costs: np.ndarray
    variances: np.ndarray

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.costs.tolist(), self.variances.tolist()))

    def cost_at(self, variance: float, extrapolate: bool = True) -> float:
        """Baseline cost reaching `variance`, piecewise linear in log-log space"""
        if variance <= 0:
            raise ValueError("variance must be positive")

        v_hi, v_lo = self.variances[0], self.variances[-1]
        if variance > v_hi or variance < v_lo:
            if not extrapolate:
                raise UnreachableIsoVariance(
                    f"iso-variance point unreachable: {variance:.6g} outside [{v_lo:.6g}, {v_hi:.6g}]")
            # slope -1 in log-log space (Var proportional to 1/cost)
            if variance > v_hi:
                return float(self.costs[0] * v_hi / variance)
            return float(self.costs[-1] * v_lo / variance)

        exact = np.nonzero(self.variances == variance)[0]
        if exact.size:
            return float(self.costs[exact[0]])

        # variances decrease; reverse for np.interp's increasing xp
        log_v = np.log(self.variances[::-1])
        log_c = np.log(self.costs[::-1])
        return float(np.exp(np.interp(np.log(variance), log_v, log_c)))

    def variance_at(self, cost: float) -> float:
        if cost <= 0:
            raise ValueError("cost must be positive")
        c_lo, c_hi = self.costs[0], self.costs[-1]
        if cost < c_lo:
            return float(self.variances[0] * c_lo / cost)
        if cost > c_hi:
            return float(self.variances[-1] * c_hi / cost)
        return float(np.exp(np.interp(np.log(cost), np.log(self.costs), np.log(self.variances))))


def pareto_baseline(points: Iterable[Tuple[float, float]]) -> ParetoCurve:
    pts = [(float(c), float(v)) for c, v in points]
    if not pts:
        raise ValueError("pareto_baseline needs at least one point")
    if any(c <= 0 or v <= 0 for c, v in pts):
        raise ValueError("costs and variances must be positive")

    pts.sort(key=lambda p: (p[0], p[1]))
    kept = []
    for cost, variance in pts:
        if kept and variance >= kept[-1][1]:
            continue  # dominated by a cheaper point
        kept.append((cost, variance))

    dropped = len(pts) - len(kept)
    if dropped:
        logger.debug("Dropped %d dominated baseline point(s)", dropped)
    return ParetoCurve(costs=np.array([p[0] for p in kept]),
                       variances=np.array([p[1] for p in kept]))


def ecm(method: Tuple[float, float], baseline: ParetoCurve, extrapolate: bool = True) -> float:
    """
    ECM at the method's own variance: baseline cost interpolated at the
    method's variance, divided by the method's cost.
    """
    cost_m, var_m = float(method[0]), float(method[1])
    if cost_m <= 0:
        raise ValueError("method cost must be positive")
    return baseline.cost_at(var_m, extrapolate=extrapolate) / cost_m


def ecm_at_anchor(method_curve: ParetoCurve, baseline: ParetoCurve, anchor_index: int = 0,
                  extrapolate: bool = True) -> float:
    """
    ECM at a baseline point's variance: that point's cost divided by the cost the
    method needs to reach the same variance (read off the method's own curve).
    """
    anchor_cost = float(baseline.costs[anchor_index])
    anchor_var = float(baseline.variances[anchor_index])
    return anchor_cost / method_curve.cost_at(anchor_var, extrapolate=extrapolate)


def relative_efficiency(var_uniform: float, var_method: float) -> float:
    """RE = Var_uniform / Var_method at identical (R, K)"""
    if var_uniform <= 0 or var_method <= 0:
        raise ValueError("variances must be positive")
    return var_uniform / var_method


def sweep_rows(cells: List[dict], baseline_method: str = 'uniform',
               extrapolate: bool = True) -> List[dict]:
    """
    cells: [{'method', 'R', 'K', 'cost', 'variance'}, ...]. Adds 'ecm' (against the
    uniform K = 1 Pareto curve, at the method's variance) and 're' (against uniform at
    matched (R, K)). Unavailable values are None.
    """
    base_points = [(c['cost'], c['variance']) for c in cells
                   if c['method'] == baseline_method and c['K'] == 1 and c['variance'] > 0]
    curve = pareto_baseline(base_points) if base_points else None
    if curve is None:
        logger.warning("No %s K=1 cells in the grid; ECM column left empty", baseline_method)

    uniform_var = {(c['R'], c['K']): c['variance'] for c in cells if c['method'] == baseline_method}

    rows = []
    for cell in cells:
        row = dict(cell)
        row['ecm'] = None
        row['re'] = None
        if curve is not None and cell['variance'] > 0:
            try:
                row['ecm'] = ecm((cell['cost'], cell['variance']), curve, extrapolate=extrapolate)
            except UnreachableIsoVariance as e:
                logger.warning("%s (R=%d, K=%d): %s", cell['method'], cell['R'], cell['K'], e)
        matched = uniform_var.get((cell['R'], cell['K']))
        if matched is not None and matched > 0 and cell['variance'] > 0:
            row['re'] = relative_efficiency(matched, cell['variance'])
        rows.append(row)
    return rows


def optimal_cell(rows: List[dict], method: Optional[str] = None) -> dict:
    """The row with the largest ECM (optionally restricted to one method)"""
    candidates = [r for r in rows if r.get('ecm') is not None and (method is None or r['method'] == method)]
    if not candidates:
        raise ValueError("no rows with an ECM value")
    return max(candidates, key=lambda r: (r['ecm'], -r['cost']))
