"""
MCVR PAIR PROBABILITIES
Two-draw without-replacement Horvitz-Thompson estimation: pair-matrix
constructions, closed-form variance and the Sinkhorn-optimal allocation
"""

import logging
from dataclasses import dataclass
from typing import List, Dict, Sequence

import numpy as np
import ot

import streams
from errors import ZeroMarginal, SinkhornDidNotConverge, DimensionMismatch
from testbed import weight_sds

logger = logging.getLogger(__name__)

IID = 'iid'
STRAT_INDEX = 'strat_index'
IW = 'iw'
IW_STRAT = 'iw_strat'
SINKHORN = 'sinkhorn'
KINDS = (IID, STRAT_INDEX, IW, IW_STRAT, SINKHORN)

# Sinkhorn knobs
DEFAULT_BETA = 5.0
DEFAULT_MAX_ITERS = 10_000
DEFAULT_TOL = 1e-9
MARGINAL_TOLERANCE = 1e-6
COST_PERCENTILE = 95

# Stands in for a zero target marginal so the Gibbs kernel stays positive
ZERO_NORM_FLOOR = 1e-12


@dataclass
class PairInstance:
    """N targets y_i = p_i g_i with their timesteps and weights w(t_i)"""
    y: np.ndarray
    timesteps: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        n = self.y.shape[0]
        self.timesteps = np.asarray(self.timesteps, dtype=float).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if n < 2:
            raise ValueError("a pair design needs N >= 2 items")
        if self.timesteps.shape != (n,) or self.weights.shape != (n,):
            raise DimensionMismatch("timesteps and weights need one entry per item")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def total(self) -> np.ndarray:
        """mu_y = sum_i y_i"""
        return self.y.sum(axis=0)

    @classmethod
    def from_values(cls, y, timesteps=None, weights=None) -> 'PairInstance':
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        if timesteps is None:
            timesteps = (np.arange(n) + 0.5) / n
        if weights is None:
            weights = np.ones(n)
        return cls(y=y, timesteps=timesteps, weights=weights)

    def to_json(self) -> dict:
        return {'y': self.y.tolist(), 'timesteps': self.timesteps.tolist(), 'weights': self.weights.tolist()}


@dataclass
class PairMatrix:
    """Symmetric q with zero diagonal; q[i, j] is the probability of the unordered pair {i, j}"""
    q: np.ndarray
    kind: str = ''

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def marginals(self) -> np.ndarray:
        """pi_i = sum_{j != i} q(i, j)"""
        return self.q.sum(axis=1)

    def upper(self):
        """(i, j) index arrays and probabilities of the pairs i < j"""
        i, j = np.triu_indices(self.N, k=1)
        return i, j, self.q[i, j]

    def validate(self, tol: float = 1e-9):
        if not np.allclose(self.q, self.q.T, atol=tol):
            raise ValueError("pair matrix is not symmetric")
        if np.any(np.diag(self.q) != 0):
            raise ValueError("pair matrix has a nonzero diagonal")
        if np.any(self.q < 0):
            raise ValueError("pair matrix has negative entries")
        _, _, probs = self.upper()
        if abs(probs.sum() - 1.0) > tol:
            raise ValueError(f"pair probabilities sum to {probs.sum():.12g}, expected 1")
        return self


def _from_upper_weights(weights: np.ndarray, kind: str) -> PairMatrix:
    """Symmetric, zero-diagonal, upper triangle normalized to 1"""
    q = np.triu(weights, k=1)
    total = q.sum()
    if total <= 0:
        raise ZeroMarginal(f"{kind}: no pair has positive probability")
    q = q / total
    return PairMatrix(q=q + q.T, kind=kind)


def _scaled_targets(instance: PairInstance, pi: np.ndarray) -> np.ndarray:
    """a_i = y_i / pi_i (zero where y_i = 0 and pi_i = 0)"""
    norms = np.linalg.norm(instance.y, axis=1)
    if np.any((pi <= 0) & (norms > 0)):
        bad = int(np.nonzero((pi <= 0) & (norms > 0))[0][0])
        raise ZeroMarginal(f"item {bad} has zero inclusion probability but a nonzero target")
    safe = np.where(pi > 0, pi, 1.0)
    return np.where(pi[:, None] > 0, instance.y / safe[:, None], 0.0)


# ============================================
# ESTIMATOR AND VARIANCE
# ============================================

def ht_estimate(instance: PairInstance, Q: PairMatrix, pair) -> np.ndarray:
    """y_i / pi_i + y_j / pi_j"""
    i, j = int(pair[0]), int(pair[1])
    if i == j:
        raise ValueError("a pair needs two distinct items")
    pi = Q.marginals
    if pi[i] <= 0 or pi[j] <= 0:
        raise ZeroMarginal(f"pair ({i}, {j}) has a zero marginal")
    return instance.y[i] / pi[i] + instance.y[j] / pi[j]


def ht_variance(instance: PairInstance, Q: PairMatrix) -> float:
    """
    sum_{i<j} q(i, j) ||a_i + a_j - mu||^2 in closed form. With d_i = a_i - mu/2 and
    G = D D^T the pair term is G_ii + G_jj + 2 G_ij.
    """
    if Q.N != instance.N:
        raise DimensionMismatch(f"pair matrix is {Q.N}x{Q.N}, instance has {instance.N} items")
    a = _scaled_targets(instance, Q.marginals)
    d = a - instance.total / 2.0
    gram = d @ d.T
    diag = np.diag(gram)
    pair_terms = diag[:, None] + diag[None, :] + 2.0 * gram
    np.fill_diagonal(pair_terms, 0.0)
    return float(max(0.5 * np.sum(Q.q * pair_terms), 0.0))


def expected_estimate(instance: PairInstance, Q: PairMatrix) -> np.ndarray:
    """sum_{i<j} q(i, j) mu_hat_ij by enumeration (equals mu_y for every valid Q)"""
    a = _scaled_targets(instance, Q.marginals)
    i, j, probs = Q.upper()
    return np.sum(probs[:, None] * (a[i] + a[j]), axis=0)


def sample_pairs(Q: PairMatrix, n: int, rng: np.random.Generator) -> np.ndarray:
    """n unordered pairs drawn from Q, shape (n, 2)"""
    i, j, probs = Q.upper()
    picks = rng.choice(probs.size, size=n, p=probs / probs.sum())
    return np.stack([i[picks], j[picks]], axis=1)


# ============================================
# CONSTRUCTIONS
# ============================================

def _weight_halves(instance: PairInstance):
    """Sort by t, split where cumulative weight is nearest half the total"""
    order = np.argsort(instance.timesteps, kind='stable')
    cumulative = np.cumsum(instance.weights[order])
    half = cumulative[-1] / 2.0
    # first half holds order[:split]; both halves nonempty
    split = int(np.argmin(np.abs(cumulative[:-1] - half))) + 1
    return order[:split], order[split:]


def _cross_mask(n: int, first: np.ndarray, second: np.ndarray) -> np.ndarray:
    mask = np.zeros((n, n))
    mask[np.ix_(first, second)] = 1.0
    mask[np.ix_(second, first)] = 1.0
    return mask


def build_pair_matrix(kind: str, instance: PairInstance, **sinkhorn_kwargs) -> PairMatrix:
    n = instance.N
    w = instance.weights

    if kind == IID:
        return _from_upper_weights(np.ones((n, n)), kind)

    if kind == STRAT_INDEX:
        half = n // 2
        mask = _cross_mask(n, np.arange(half), np.arange(half, n))
        return _from_upper_weights(mask, kind)

    if kind in (IW, IW_STRAT) and not np.any(w > 0):
        raise ZeroMarginal(f"{kind}: all item weights are zero")

    if kind == IW:
        return _from_upper_weights(np.outer(w, w), kind)

    if kind == IW_STRAT:
        first, second = _weight_halves(instance)
        return _from_upper_weights(np.outer(w, w) * _cross_mask(n, first, second), kind)

    if kind == SINKHORN:
        return sinkhorn_optimal(instance, **sinkhorn_kwargs)

    raise ValueError(f"Unknown pair matrix kind {kind!r} (expected one of {', '.join(KINDS)})")


def target_marginals(instance: PairInstance) -> np.ndarray:
    """pi_i = 2 ||y_i|| / sum ||y||, water-filled so no pi exceeds 1"""
    norms = np.linalg.norm(instance.y, axis=1)
    if not np.any(norms > 0):
        raise ZeroMarginal("all targets are zero; optimal marginals undefined")
    norms = np.where(norms > 0, norms, ZERO_NORM_FLOOR * norms.max())

    pi = np.empty_like(norms)
    capped = np.zeros(norms.size, dtype=bool)
    for _ in range(norms.size):
        budget = 2.0 - capped.sum()
        free = ~capped
        pi[capped] = 1.0
        pi[free] = budget * norms[free] / norms[free].sum()
        over = free & (pi > 1.0)
        if not np.any(over):
            break
        capped |= over
    return pi


def sinkhorn_optimal(instance: PairInstance, beta: float = DEFAULT_BETA,
                     max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL) -> PairMatrix:
    """
    Entropic OT over ordered pairs with cost C_ij = a_i . a_j (a = y / pi),
    kernel exp(-beta C / scale) with scale the 95th percentile of |C| off the
    diagonal, then symmetrized into unordered pair probabilities.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")

    n = instance.N
    if n == 2:
        return _from_upper_weights(np.ones((2, 2)), SINKHORN)

    pi = target_marginals(instance)
    a = instance.y / pi[:, None]
    cost = a @ a.T

    off_diagonal = ~np.eye(n, dtype=bool)
    scale = float(np.percentile(np.abs(cost[off_diagonal]), COST_PERCENTILE))
    if scale <= 0:
        scale = 1.0

    M = cost.copy()
    np.fill_diagonal(M, np.inf)
    half = pi / 2.0

    plan, log = ot.sinkhorn(half, half, M, scale / beta, method='sinkhorn_log',
                            numItermax=int(max_iters), stopThr=tol, log=True, warn=False)
    plan = np.asarray(plan, dtype=float)
    np.fill_diagonal(plan, 0.0)

    q = (plan + plan.T) / 2.0
    q = q / np.triu(q, k=1).sum()
    matrix = PairMatrix(q=q, kind=SINKHORN)

    residual = float(np.max(np.abs(matrix.marginals - pi)))
    iterations = int(log.get('niter', max_iters))
    if not np.isfinite(residual) or residual > MARGINAL_TOLERANCE:
        raise SinkhornDidNotConverge(residual, matrix=matrix, iterations=iterations)

    logger.debug("Sinkhorn converged: N=%d, %d iterations, residual %.2e", n, iterations, residual)
    return matrix


# ============================================
# INSTANCE FAMILY AND TABLES
# ============================================

def default_instance(rng: np.random.Generator, N: int = 64, dim: int = 3,
                     jitter: float = 0.05) -> PairInstance:
    """
    SDS-weighted items on an even t-grid; directions rotate smoothly through
    2 pi * speed radians of cumulative weight mass, speed in [0.75, 1.25].
    """
    t = (np.arange(N) + 0.5) / N
    w = np.asarray(weight_sds(t), dtype=float)
    mass = (np.cumsum(w) - w / 2.0) / w.sum()

    speed = rng.uniform(0.75, 1.25)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    theta = phase + 2.0 * np.pi * speed * mass

    directions = np.zeros((N, dim))
    directions[:, 0] = np.cos(theta)
    directions[:, 1] = np.sin(theta)
    directions += jitter * rng.standard_normal((N, dim))

    p = 1.0 / N
    y = p * w[:, None] * directions
    return PairInstance(y=y, timesteps=t, weights=w)


def default_family(n_instances: int = 100, N: int = 64, seed: int = 0, dim: int = 3) -> List[PairInstance]:
    return [default_instance(streams.generator(seed, streams.Stream.PAIR_INSTANCES, k), N=N, dim=dim)
            for k in range(n_instances)]


def pair_table(instance: PairInstance, kinds: Sequence[str] = KINDS, beta: float = DEFAULT_BETA,
               max_iters: int = DEFAULT_MAX_ITERS, tol: float = DEFAULT_TOL,
               keep_matrices: bool = False) -> List[Dict]:
    """
    One row per kind: {kind, N, marginals, variance, ecm_vs_iid, rank, error}.
    All designs draw two items, so the compute multiplier is the variance ratio to IID.
    """
    rows = []
    for kind in kinds:
        row = {'kind': kind, 'N': instance.N, 'marginals': None, 'variance': None,
               'ecm_vs_iid': None, 'rank': None, 'error': None}
        try:
            Q = build_pair_matrix(kind, instance, **({'beta': beta, 'max_iters': max_iters, 'tol': tol}
                                                      if kind == SINKHORN else {}))
            row['marginals'] = Q.marginals.tolist()
            row['variance'] = ht_variance(instance, Q)
            if keep_matrices:
                row['matrix'] = Q.q
        except (SinkhornDidNotConverge, ZeroMarginal) as e:
            logger.warning("%s pair matrix failed: %s", kind, e)
            row['error'] = str(e)
        rows.append(row)

    iid_var = next((r['variance'] for r in rows if r['kind'] == IID), None)
    for row in rows:
        if iid_var is not None and row['variance'] is not None and row['variance'] > 0:
            row['ecm_vs_iid'] = iid_var / row['variance']

    ranked = sorted((r for r in rows if r['variance'] is not None), key=lambda r: r['variance'])
    for position, row in enumerate(ranked, start=1):
        row['rank'] = position
    return rows
