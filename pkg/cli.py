"""
MCVR COMMAND LINE
Batch experiment driver: run, sweep, pairprob and attribution subcommands
writing CSV / JSON reports with deterministic seeds
"""

import sys
import argparse
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, List, Dict

import numpy as np
import yaml

import attribution
import pairprob
import streams
from efficiency import CostModel, cost_of, sweep_rows, optimal_cell, SWEEP_HEADER
from errors import McvrError, ConfigError, ZeroNormGradient
from estimators import EstimatorSpec, estimate_batch
from reports import ReportWriter
from settings import ExperimentConfig, load_config, DEFAULT_LOG_LEVEL
from testbed import make_task
from variance_lab import (run_until_converged, reference_mean, mse_to_reference, cosine_to_reference,
                          mean_cosine_to_reference)

logger = logging.getLogger('mcvr')

ECM_ANCHOR = 'method_variance'

COSINE_HEADER = ('method', 'R', 'K', 'cost', 'samples', 'expected_cosine', 'mse_to_reference')

PAIR_HEADER = ('instance', 'kind', 'N', 'variance', 'ecm_vs_iid', 'rank', 'error')


def _build_task(config: ExperimentConfig):
    task = make_task(config.task)
    task.cost_model = CostModel.from_config(config.cost_model)
    task.seed = config.seed
    return task


def _cell_spec(config: ExperimentConfig, index: int, method: str, R: int, K: int) -> EstimatorSpec:
    seed = streams.derive_seed(config.seed, index)
    return EstimatorSpec.from_method(method, R, K, seed=seed, weight_id=config.proposal)


# ============================================
# COMMANDS
# ============================================

def cmd_run(config: ExperimentConfig, writer: ReportWriter, fmt: str = 'csv') -> int:
    """Single-cell variance report for the first grid cell"""
    config.validate(require_grid=True)
    task = _build_task(config)
    method, R, K = config.grid[0]
    spec = _cell_spec(config, 0, method, R, K)

    logger.info("Running %r %s (R=%d, K=%d)", task, method, R, K)
    report = run_until_converged(task, spec, config.criterion)

    result = {
        'task': task.describe(),
        'method': method,
        'spec': spec.to_json(),
        'cost': cost_of(spec, task.cost_model),
        **report.to_json(),
    }

    if config.n_gt > 0:
        ref = reference_mean(task, spec, config.n_gt, test_samples=report.samples, threads=config.threads)
        estimates = estimate_batch(task, spec, start=0, count=report.samples, threads=config.threads)
        result['reference'] = ref
        result['mse_to_reference'] = mse_to_reference(estimates, ref)
        try:
            result['cosine_to_reference'] = cosine_to_reference(report.mean, ref)
        except ZeroNormGradient as e:
            logger.warning("Cosine to reference skipped: %s", e)
            result['cosine_to_reference'] = None

    writer.meta.update({'seed': config.seed, 'criterion': config.criterion.to_dict()})
    writer.add_json('report.json', result)
    return 0


def _run_cell(task, config: ExperimentConfig, index: int, cell, ref: Optional[np.ndarray] = None) -> Dict:
    method, R, K = cell
    spec = _cell_spec(config, index, method, R, K)
    report = run_until_converged(task, spec, config.criterion)
    logger.info("%-9s R=%-2d K=%-2d variance %.6g (%d samples)", method, R, K, report.trace_cov, report.samples)
    result = {
        'method': method,
        'R': R,
        'K': K,
        'cost': cost_of(spec, task.cost_model),
        'variance': report.trace_cov,
        'samples': report.samples,
        'converged_at': report.converged_at,
        'seed': spec.seed,
    }
    if ref is not None:
        estimates = estimate_batch(task, spec, start=0, count=report.samples)
        result['mse_to_reference'] = mse_to_reference(estimates, ref)
        try:
            result['expected_cosine'] = mean_cosine_to_reference(estimates, ref)
        except ZeroNormGradient as e:
            logger.warning("%s R=%d K=%d: expected cosine skipped: %s", method, R, K, e)
            result['expected_cosine'] = None
    return result


def cmd_sweep(config: ExperimentConfig, writer: ReportWriter, fmt: str = 'csv') -> int:
    config.validate(require_grid=True)
    task = _build_task(config)
    cells = list(enumerate(config.grid))

    ref = None
    if config.n_gt > 0:
        # one plain-estimator reference shared by every cell
        ref_spec = EstimatorSpec(R=1, K=1, seed=config.seed)
        ref = reference_mean(task, ref_spec, config.n_gt, test_samples=config.criterion.cap, threads=config.threads)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda item: _run_cell(task, config, *item, ref=ref), cells))
    else:
        results = [_run_cell(task, config, index, cell, ref=ref) for index, cell in cells]

    rows = sweep_rows(results)
    best = {}
    for method in dict.fromkeys(r['method'] for r in rows):
        try:
            cell = optimal_cell(rows, method)
            best[method] = {'R': cell['R'], 'K': cell['K'], 'ecm': cell['ecm']}
        except ValueError:
            continue

    writer.meta.update({
        'seed': config.seed,
        'task': task.describe(),
        'criterion': config.criterion.to_dict(),
        'ecm_anchor': ECM_ANCHOR,
        'cells': [{'method': r['method'], 'R': r['R'], 'K': r['K'], 'seed': r['seed'],
                   'samples': r['samples'], 'converged_at': r['converged_at']} for r in results],
        'best': best,
    })
    writer.add_rows('sweep.csv', rows, SWEEP_HEADER, fmt)
    if ref is not None:
        writer.meta['reference'] = ref
        writer.add_rows('sweep_cosine.csv', rows, COSINE_HEADER, fmt)
    return 0


def _load_pair_instances(path: str) -> List[pairprob.PairInstance]:
    source = Path(path)
    if not source.exists():
        raise ConfigError(f"Pair instance file not found: {path}")
    try:
        with open(source, 'r') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e

    entries = data if isinstance(data, list) else [data]
    try:
        return [pairprob.PairInstance.from_values(entry['y'], entry.get('timesteps'), entry.get('weights'))
                for entry in entries]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"Malformed pair instance in {path}: {e}") from e


def cmd_pairprob(config: ExperimentConfig, writer: ReportWriter, fmt: str = 'csv') -> int:
    config.validate(require_grid=False)
    options = dict(config.pairprob)
    try:
        beta = float(options.get('beta', pairprob.DEFAULT_BETA))
        max_iters = int(options.get('max_iters', pairprob.DEFAULT_MAX_ITERS))
        tol = float(options.get('tol', pairprob.DEFAULT_TOL))
        dump = bool(options.get('dump_matrices', False))
        kinds = list(options.get('kinds', pairprob.KINDS))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid pairprob options: {e}") from e
    unknown = [k for k in kinds if k not in pairprob.KINDS]
    if unknown:
        raise ConfigError(f"Unknown pair matrix kind(s): {', '.join(unknown)}")

    if options.get('input'):
        instances = _load_pair_instances(options['input'])
    else:
        instances = pairprob.default_family(n_instances=int(options.get('instances', 1)),
                                            N=int(options.get('N', 64)), seed=config.seed)

    def table(instance):
        return pairprob.pair_table(instance, kinds, beta=beta, max_iters=max_iters, tol=tol,
                                   keep_matrices=dump)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            tables = list(pool.map(table, instances))
    else:
        tables = [table(instance) for instance in instances]

    rows, details = [], []
    for index, instance_rows in enumerate(tables):
        for row in instance_rows:
            matrix = row.pop('matrix', None)
            row['instance'] = index
            rows.append(row)
            details.append({key: row[key] for key in ('instance', 'kind', 'N', 'marginals', 'variance',
                                                      'ecm_vs_iid', 'rank', 'error')})
            if matrix is not None:
                writer.add_matrix(f"matrix_{index}_{row['kind']}.csv", matrix)

    writer.meta.update({'seed': config.seed, 'beta': beta, 'max_iters': max_iters, 'tol': tol,
                        'instances': len(instances)})
    writer.add_rows('pairprob.csv', rows, PAIR_HEADER, fmt)
    writer.add_json('pairprob_marginals.json', details)
    return 0


def cmd_attribution(config: ExperimentConfig, writer: ReportWriter, fmt: str = 'csv') -> int:
    config.validate(require_grid=False)
    options = dict(config.attribution)
    try:
        budgets = [int(b) for b in options.get('budgets', attribution.DEFAULT_BUDGETS)]
        schemes = list(options.get('schemes', attribution.SCHEMES))
        trials = int(options.get('trials', 10))
        method = str(options.get('method', 'pearson'))
        reference_budget = int(options.get('reference_budget', attribution.REFERENCE_BUDGET))
        gfield = attribution.default_field(
            seed=config.seed,
            n_examples=int(options.get('n_examples', 32)),
            dim=int(options.get('dim', 16)),
            noise_scale=float(options.get('noise_scale', 0.05)),
            amplitude=float(options.get('amplitude', 1.0)),
            offset=float(options.get('offset', 0.0)),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid attribution options: {e}") from e
    if any(b < 1 for b in budgets) or trials < 1:
        raise ConfigError("attribution budgets and trials must be positive")
    if any(s not in attribution.KNOWN_SCHEMES for s in schemes):
        raise ConfigError(f"attribution schemes must be among {', '.join(attribution.KNOWN_SCHEMES)}")
    if method not in ('pearson', 'spearman'):
        raise ConfigError(f"Unknown correlation method {method!r}")

    reports = attribution.budget_sweep(gfield, budgets, schemes, trials=trials, seed=config.seed,
                                       method=method, reference_budget=reference_budget,
                                       threads=config.threads)

    rows = [row for report in reports for row in report.rows()]
    writer.meta.update({'seed': config.seed, 'method': method, 'reference_budget': reference_budget,
                        'trials': trials})
    writer.add_rows('attribution.csv', rows, attribution.CSV_HEADER, fmt)
    writer.add_json('attribution_summary.json', [report.summary() for report in reports])
    return 0


COMMANDS = {
    'run': cmd_run,
    'sweep': cmd_sweep,
    'pairprob': cmd_pairprob,
    'attribution': cmd_attribution,
}


# ============================================
# ENTRY POINT
# ============================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='mcvr', description="Compute-aware Monte Carlo variance reduction experiments")
    subparsers = parser.add_subparsers(dest='command', required=True)

    for name, handler in COMMANDS.items():
        sub = subparsers.add_parser(name, help=(handler.__doc__ or name).strip().splitlines()[0])
        sub.add_argument('--config', default=None, help="YAML/JSON experiment file")
        sub.add_argument('--seed', type=int, default=None, help="Master seed (u64)")
        sub.add_argument('--out', default=None, help="Output directory")
        sub.add_argument('--threads', type=int, default=None, help="Worker threads (results do not depend on it)")
        sub.add_argument('--format', choices=('csv', 'json'), default='csv', help="Tabular output format")
    return parser


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        config.seed = args.seed
    if args.out is not None:
        config.out_dir = args.out
    if args.threads is not None:
        config.threads = args.threads
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=getattr(logging, DEFAULT_LOG_LEVEL.upper(), logging.INFO),
                        format='[%(name)s] %(message)s')

    try:
        config = _apply_overrides(load_config(args.config), args)
        writer = ReportWriter(config.out_dir, command=args.command)
        status = COMMANDS[args.command](config, writer, args.format)
        writer.commit()
        logger.info("%s finished: %d file(s) in %s", args.command, len(writer.filenames) + 1, config.out_dir)
        return status
    except McvrError as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
