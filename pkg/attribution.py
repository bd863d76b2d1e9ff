"""
MCVR ATTRIBUTION
Shared-draw cosine influence scores on a synthetic per-example gradient field,
IID vs globally stratified timestep budgets, ranking correlations
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, List, Dict, Sequence

import numpy as np
from scipy import stats

import streams
from errors import ConstantInput, ZeroNormGradient, DimensionMismatch
from sampling import BaseDistribution, Proposal, build_proposal, inverse_cdf, importance_weight

logger = logging.getLogger(__name__)

IID = 'iid'
STRAT_GLOBAL = 'strat_global'
IW = 'iw'
SCHEMES = (IID, STRAT_GLOBAL)
KNOWN_SCHEMES = SCHEMES + (IW,)

NORM_GRID_SIZE = 256

REFERENCE_BUDGET = 768
DEFAULT_BUDGETS = (4, 16, 64, 256, 768)

CSV_HEADER = ('example_id', 'score', 'budget', 'scheme', 'trial')


@dataclass
class GradientField:
    """
    g_n(t, eps) = c_n + m(t) d_n + s eps, with the query built the same way.
    m(t) = offset + amplitude * cos(pi t).
    """
    query_c: np.ndarray
    query_d: np.ndarray
    c: np.ndarray
    d: np.ndarray
    noise_scale: float = 0.05
    amplitude: float = 1.0
    offset: float = 0.0
    base: BaseDistribution = field(default_factory=BaseDistribution)

    def __post_init__(self):
        self.c = np.atleast_2d(np.asarray(self.c, dtype=float))
        self.d = np.atleast_2d(np.asarray(self.d, dtype=float))
        self.query_c = np.asarray(self.query_c, dtype=float)
        self.query_d = np.asarray(self.query_d, dtype=float)
        dim = self.query_c.shape[0]
        if (self.query_d.shape != (dim,) or self.c.shape != self.d.shape
                or self.c.shape[1] != dim):
            raise DimensionMismatch("query and example vectors must share one dimension")

    @property
    def n_examples(self) -> int:
        return self.c.shape[0]

    @property
    def dim(self) -> int:
        return self.query_c.shape[0]

    def profile(self, t):
        return self.offset + self.amplitude * np.cos(np.pi * np.asarray(t, dtype=float))

    def query(self, t, eps) -> np.ndarray:
        """(B, dim) query gradients"""
        m = self.profile(t)[:, None]
        return self.query_c + m * self.query_d + self.noise_scale * eps

    def examples(self, t, eps) -> np.ndarray:
        """(n_examples, B, dim) example gradients on the same draws"""
        m = self.profile(t)[None, :, None]
        return (self.c[:, None, :] + m * self.d[:, None, :]
                + self.noise_scale * eps[None, :, :])

    def norm_profile(self, t) -> np.ndarray:
        """Mean over examples of sqrt(||c_n + m(t) d_n||^2 + s^2 dim)"""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        m = self.profile(t)[None, :, None]
        mean_part = self.c[:, None, :] + m * self.d[:, None, :]
        return np.mean(np.sqrt(np.sum(mean_part ** 2, axis=-1) + self.noise_scale ** 2 * self.dim), axis=0)


@dataclass
class SharedDraws:
    t: np.ndarray
    eps: np.ndarray
    scheme: str
    trial: int = 0
    weights: Optional[np.ndarray] = None

    @property
    def budget(self) -> int:
        return self.t.size


@dataclass
class InfluenceReport:
    scores: np.ndarray
    budget: int
    scheme: str
    correlations: List[float] = field(default_factory=list)

    @property
    def correlation_to_reference(self) -> float:
        return float(np.mean(self.correlations)) if self.correlations else float('nan')

    def rows(self) -> List[Dict]:
        out = []
        for trial, trial_scores in enumerate(self.scores):
            for example_id, score in enumerate(trial_scores):
                out.append({'example_id': example_id, 'score': float(score), 'budget': self.budget,
                            'scheme': self.scheme, 'trial': trial})
        return out

    def summary(self) -> Dict:
        return {
            'budget': self.budget,
            'scheme': self.scheme,
            'trials': len(self.correlations),
            'mean_correlation': self.correlation_to_reference,
            'correlations': list(self.correlations),
        }


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _orthogonal_unit(rng: np.random.Generator, against: np.ndarray) -> np.ndarray:
    v = rng.standard_normal(against.shape)
    v = v - np.sum(v * against, axis=-1, keepdims=True) * against
    return _unit(v)


def default_field(seed: int = 0, n_examples: int = 32, dim: int = 16, noise_scale: float = 0.05,
                  amplitude: float = 1.0, offset: float = 0.0) -> GradientField:
    """
    Examples whose constant part aligns with the query's to graded degrees, each
    with a unit t-direction orthogonal to its constant part, so ||g|| stays
    within a factor sqrt(2) across t.
    """
    rng = streams.generator(seed, streams.Stream.FIELD)
    query_c = _unit(rng.standard_normal(dim))
    query_d = _orthogonal_unit(rng, query_c)

    alignment = rng.permutation(np.linspace(-0.9, 0.9, n_examples))
    side = _orthogonal_unit(rng, np.broadcast_to(query_c, (n_examples, dim)))
    c = alignment[:, None] * query_c + np.sqrt(1.0 - alignment[:, None] ** 2) * side
    d = _orthogonal_unit(rng, c)

    return GradientField(query_c=query_c, query_d=query_d, c=c, d=d, noise_scale=noise_scale,
                         amplitude=amplitude, offset=offset)


def draw_shared(gfield: GradientField, budget: int, scheme: str, seed: int = 0,
                trial: int = 0) -> SharedDraws:
    """
    budget (t, eps) pairs for one trial. Every scheme consumes the same jitters;
    strat_global places jitter k in stratum k, iw pushes them through the
    norm-proportional proposal and carries p/q weights.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if scheme not in KNOWN_SCHEMES:
        raise ValueError(f"Unknown scheme {scheme!r} (expected one of {', '.join(KNOWN_SCHEMES)})")

    rng = streams.generator(seed, streams.Stream.ATTRIBUTION, trial)
    xi = rng.random(budget)
    eps = rng.standard_normal((budget, gfield.dim))
    if scheme == IW:
        proposal = norm_proposal(gfield)
        t = np.atleast_1d(inverse_cdf(proposal, xi))
        weights = np.atleast_1d(importance_weight(proposal, t))
        return SharedDraws(t=t, eps=eps, scheme=scheme, trial=trial, weights=weights)

    u = (np.arange(budget, dtype=float) + xi) / budget if scheme == STRAT_GLOBAL else xi
    t = gfield.base.inverse_cdf(u)
    return SharedDraws(t=np.atleast_1d(t), eps=eps, scheme=scheme, trial=trial)


def norm_proposal(gfield: GradientField, grid_size: int = NORM_GRID_SIZE) -> Proposal:
    """q(t) proportional to the field's mean gradient norm"""
    return build_proposal(gfield.base, gfield.norm_profile, grid_size=grid_size, label='norm')


def _cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    norm_a = np.linalg.norm(a, axis=-1)
    norm_b = np.linalg.norm(b, axis=-1)
    if np.any(norm_a == 0) or np.any(norm_b == 0):
        raise ZeroNormGradient("zero-norm gradient on a shared draw")
    return np.clip(np.sum(a * b, axis=-1) / (norm_a * norm_b), -1.0, 1.0)


def influence_score(gfield: GradientField, n: int, draws: SharedDraws) -> float:
    """Mean cosine between query and example n over the shared draws"""
    if draws.budget < 1:
        raise ValueError("need at least one draw")
    query = gfield.query(draws.t, draws.eps)
    m = gfield.profile(draws.t)[:, None]
    example = gfield.c[n] + m * gfield.d[n] + gfield.noise_scale * draws.eps
    return float(_draw_mean(_cosines(query, example), draws))


def influence_scores(gfield: GradientField, draws: SharedDraws) -> np.ndarray:
    """All examples on one bitwise-identical draw set, shape (n_examples,)"""
    query = gfield.query(draws.t, draws.eps)
    examples = gfield.examples(draws.t, draws.eps)
    return _draw_mean(_cosines(query[None, :, :], examples), draws)


def _draw_mean(values: np.ndarray, draws: SharedDraws) -> np.ndarray:
    # averages over the last axis, importance-weighted for iw draws
    if draws.weights is None:
        return np.mean(values, axis=-1)
    return np.mean(values * draws.weights, axis=-1)


def ranking_correlation(scores, reference, method: str = 'pearson') -> float:
    scores = np.asarray(scores, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if scores.shape != reference.shape or scores.ndim != 1:
        raise DimensionMismatch("scores and reference must be 1-d with equal length")
    if scores.size < 2:
        raise ValueError("need at least two scores")
    if np.ptp(scores) == 0 or np.ptp(reference) == 0:
        raise ConstantInput("correlation undefined for constant input")

    if method == 'pearson':
        result = stats.pearsonr(scores, reference)
    elif method == 'spearman':
        result = stats.spearmanr(scores, reference)
    else:
        raise ValueError(f"Unknown correlation method {method!r}")
    return float(result[0])


def reference_scores(gfield: GradientField, seed: int = 0,
                     budget: int = REFERENCE_BUDGET) -> np.ndarray:
    """Stratified scores at the full budget on trial 0's stream"""
    return influence_scores(gfield, draw_shared(gfield, budget, STRAT_GLOBAL, seed=seed, trial=0))


def attribution_experiment(gfield: GradientField, budget: int, scheme: str, trials: int = 1,
                           seed: int = 0, reference: Optional[np.ndarray] = None,
                           method: str = 'pearson', threads: int = 1) -> InfluenceReport:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if reference is None:
        reference = reference_scores(gfield, seed)

    def one_trial(trial: int) -> np.ndarray:
        return influence_scores(gfield, draw_shared(gfield, budget, scheme, seed=seed, trial=trial))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(one_trial, range(trials)))
    else:
        scores = [one_trial(trial) for trial in range(trials)]

    correlations = [ranking_correlation(s, reference, method) for s in scores]
    return InfluenceReport(scores=np.array(scores), budget=budget, scheme=scheme,
                           correlations=correlations)


def budget_sweep(gfield: GradientField, budgets: Sequence[int] = DEFAULT_BUDGETS,
                 schemes: Sequence[str] = SCHEMES, trials: int = 10, seed: int = 0,
                 method: str = 'pearson', reference_budget: int = REFERENCE_BUDGET,
                 threads: int = 1) -> List[InfluenceReport]:
    reference = reference_scores(gfield, seed, reference_budget)
    reports = []
    for budget in budgets:
        for scheme in schemes:
            report = attribution_experiment(gfield, budget, scheme, trials=trials, seed=seed,
                                            reference=reference, method=method, threads=threads)
            logger.info("budget %4d %-12s mean correlation %.4f", budget, scheme,
                        report.correlation_to_reference)
            reports.append(report)
    return reports
