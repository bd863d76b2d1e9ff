"""
MCVR VARIANCE LAB
Mergeable Welford trace-covariance accumulation, convergence-gated variance runs,
high-sample reference means and MSE / cosine metrics
"""

import time
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import streams
from efficiency import cost_of
from errors import DimensionMismatch, ZeroNormGradient
from estimators import EstimatorSpec, EstimateStream, estimate_batch
from settings import Criterion

logger = logging.getLogger(__name__)

# Trials per reference chunk
REFERENCE_CHUNK = 64 * streams.BLOCK_SIZE


@dataclass
class WelfordState:
    """count, mean vector and m2 = running sum of ||x - mean||^2 over all dimensions"""
    count: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(0))
    m2: float = 0.0

    @classmethod
    def empty(cls, dim: int = 0) -> 'WelfordState':
        return cls(count=0, mean=np.zeros(dim), m2=0.0)

    @property
    def trace_cov(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0


@dataclass
class VarianceReport:
    mean: np.ndarray
    trace_cov: float
    samples: int
    converged_at: Optional[int] = None
    wall_cost: float = 0.0
    insufficient: bool = False

    def to_json(self) -> dict:
        return {
            'mean': np.asarray(self.mean).tolist(),
            'trace_cov': self.trace_cov,
            'samples': self.samples,
            'converged_at': self.converged_at,
            'wall_cost': self.wall_cost,
        }


def _check_dims(acc: WelfordState, x: np.ndarray):
    if acc.count > 0 and x.shape != acc.mean.shape:
        raise DimensionMismatch(f"sample has shape {x.shape}, accumulator has {acc.mean.shape}")


def welford_update(acc: WelfordState, x) -> WelfordState:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_dims(acc, x)

    count = acc.count + 1
    mean = acc.mean if acc.count > 0 else np.zeros_like(x)
    delta = x - mean
    new_mean = mean + delta / count
    m2 = acc.m2 + float(np.dot(delta, x - new_mean))
    return WelfordState(count=count, mean=new_mean, m2=max(m2, 0.0))


def welford_merge(a: WelfordState, b: WelfordState) -> WelfordState:
    """Chan et al. pairwise combination"""
    if a.count == 0:
        return WelfordState(b.count, b.mean.copy(), b.m2)
    if b.count == 0:
        return WelfordState(a.count, a.mean.copy(), a.m2)
    if a.mean.shape != b.mean.shape:
        raise DimensionMismatch(f"cannot merge shapes {a.mean.shape} and {b.mean.shape}")

    count = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / count)
    m2 = a.m2 + b.m2 + float(np.dot(delta, delta)) * a.count * b.count / count
    return WelfordState(count=count, mean=mean, m2=m2)


def welford_update_batch(acc: WelfordState, xs) -> WelfordState:
    """Accumulate rows of xs (n, dim) via a two-pass batch state and one merge"""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.shape[0] == 0:
        return acc
    batch_mean = xs.mean(axis=0)
    centred = xs - batch_mean
    batch = WelfordState(count=xs.shape[0], mean=batch_mean, m2=float(np.sum(centred * centred)))
    _check_dims(acc, batch_mean)
    return welford_merge(acc, batch)


def finalize(acc: WelfordState, converged_at: Optional[int] = None,
             wall_cost: float = 0.0) -> VarianceReport:
    insufficient = acc.count < 2
    if insufficient:
        logger.warning("Only %d sample(s); trace covariance reported as 0", acc.count)
    return VarianceReport(mean=acc.mean.copy(), trace_cov=acc.trace_cov, samples=acc.count,
                          converged_at=converged_at, wall_cost=wall_cost, insufficient=insufficient)


def _relative_change(previous: float, current: float) -> float:
    if previous == current:
        return 0.0
    if previous == 0.0:
        return float('inf')
    return abs(current - previous) / abs(previous)


def run_until_converged(task, spec: EstimatorSpec, criterion: Optional[Criterion] = None,
                        start: int = 0) -> VarianceReport:
    """
    Welford over fresh estimates. First check at `warmup`, then every `interval`;
    stops after `consecutive` checks with relative change < rel_tol, or at `cap`.
    wall_cost is the cost model's charge for all samples drawn.
    """
    criterion = (criterion or Criterion()).validate()
    began = time.perf_counter()

    stream = EstimateStream(task, spec, start=start)
    acc = WelfordState.empty(task.dim)
    checkpoint = criterion.warmup
    previous = None
    streak = 0
    converged_at = None

    while acc.count < criterion.cap:
        target = min(checkpoint, criterion.cap)
        acc = welford_update_batch(acc, stream.take(target - acc.count))
        if acc.count < checkpoint:
            break

        current = acc.trace_cov
        if previous is not None:
            if _relative_change(previous, current) < criterion.rel_tol:
                streak += 1
            else:
                streak = 0
            if streak >= criterion.consecutive:
                converged_at = acc.count
                break
        previous = current
        checkpoint += criterion.interval

    if converged_at is None:
        logger.info("%r %s: no convergence before cap (%d samples)", task, spec.to_json(), acc.count)

    wall_cost = acc.count * cost_of(spec, task.cost_model)
    logger.debug("Variance run finished in %.2fs", time.perf_counter() - began)
    return finalize(acc, converged_at=converged_at, wall_cost=wall_cost)


def reference_mean(task, spec: EstimatorSpec, n_gt: int, test_samples: Optional[int] = None,
                   threads: int = 1) -> np.ndarray:
    """
    Average of n_gt estimates on a stream disjoint from the test estimates.
    """
    if n_gt < 1:
        raise ValueError("n_gt must be >= 1")
    if test_samples is not None and n_gt < 100 * test_samples:
        logger.warning("Reference uses %d samples, fewer than 100x the %d test samples; "
                       "reference bias may show in the MSE", n_gt, test_samples)

    ref_spec = EstimatorSpec(R=spec.R, K=spec.K, timestep_mode=spec.timestep_mode,
                             allocation=spec.allocation,
                             seed=streams.derive_seed(spec.seed, 0, streams.Stream.REFERENCE))
    total = np.zeros(task.dim)
    done = 0
    while done < n_gt:
        count = min(REFERENCE_CHUNK, n_gt - done)
        chunk = estimate_batch(task, ref_spec, start=done, count=count, threads=threads)
        total = total + chunk.sum(axis=0)
        done += count
    return total / n_gt


def mse_to_reference(estimates, ref) -> float:
    """mean of ||estimate - ref||^2"""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    ref = np.atleast_1d(np.asarray(ref, dtype=float))
    if estimates.shape[1] != ref.shape[0]:
        raise DimensionMismatch(f"estimates have dim {estimates.shape[1]}, reference has {ref.shape[0]}")
    diff = estimates - ref
    return float(np.mean(np.sum(diff * diff, axis=1)))


def cosine_to_reference(estimate, ref) -> float:
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    ref = np.atleast_1d(np.asarray(ref, dtype=float))
    if estimate.shape != ref.shape:
        raise DimensionMismatch(f"shapes {estimate.shape} and {ref.shape} differ")
    norm_e, norm_r = np.linalg.norm(estimate), np.linalg.norm(ref)
    if norm_e == 0 or norm_r == 0:
        raise ZeroNormGradient("cosine undefined for a zero-norm vector")
    return float(np.clip(np.dot(estimate, ref) / (norm_e * norm_r), -1.0, 1.0))


def mean_cosine_to_reference(estimates, ref) -> float:
    """Expected cosine between single estimates and the reference direction"""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    ref = np.atleast_1d(np.asarray(ref, dtype=float))
    if estimates.shape[1] != ref.shape[0]:
        raise DimensionMismatch(f"estimates have dim {estimates.shape[1]}, reference has {ref.shape[0]}")
    norms = np.linalg.norm(estimates, axis=1)
    norm_r = np.linalg.norm(ref)
    if norm_r == 0 or np.any(norms == 0):
        raise ZeroNormGradient("cosine undefined for a zero-norm vector")
    cosines = np.clip(estimates @ ref / (norms * norm_r), -1.0, 1.0)
    return float(np.mean(cosines))
