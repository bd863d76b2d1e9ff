import csv
import json

import pytest
import yaml

import cli
from errors import SupportViolation


def write_config(tmp_path, name='config.yaml', **data):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_rows(path):
    with open(path, newline='') as f:
        return list(csv.DictReader(f))


SMALL_CRITERION = {'warmup': 1000, 'interval': 50, 'rel_tol': 0.001, 'consecutive': 3, 'cap': 8000}


@pytest.fixture
def sweep_config(tmp_path):
    return write_config(tmp_path, task='hier{sigmaA2=1,sigmaB2=4,dim=3}',
                        grid=[['uniform', 1, 1], ['uniform', 2, 1]], criterion=SMALL_CRITERION, seed=7)


def test_sweep_variance_halves_with_two_renders(tmp_path, sweep_config):
    out = tmp_path / 'out'
    assert cli.main(['sweep', '--config', sweep_config, '--out', str(out)]) == 0

    rows = read_rows(out / 'sweep.csv')
    assert [(r['method'], r['R'], r['K']) for r in rows] == [('uniform', '1', '1'), ('uniform', '2', '1')]
    ratio = float(rows[1]['variance']) / float(rows[0]['variance'])
    assert ratio == pytest.approx(0.5, rel=0.10)
    assert float(rows[0]['ecm']) == pytest.approx(1.0)

    manifest = json.loads((out / 'manifest.json').read_text())
    assert manifest['command'] == 'sweep'
    assert manifest['seed'] == 7
    assert manifest['ecm_anchor'] == cli.ECM_ANCHOR
    assert [f['filename'] for f in manifest['files']] == ['sweep.csv']
    assert manifest['cells'][0]['seed'] != manifest['cells'][1]['seed']


def test_sweep_is_byte_identical_across_runs_and_threads(tmp_path, sweep_config):
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert cli.main(['sweep', '--config', sweep_config, '--out', str(first)]) == 0
    assert cli.main(['sweep', '--config', sweep_config, '--out', str(second), '--threads', '4']) == 0
    for name in ('sweep.csv', 'manifest.json'):
        assert (first / name).read_bytes() == (second / name).read_bytes()


SMALL_RUNS = {
    'run': dict(task={'name': 'toy', 'params': {'rho': 0.1}}, grid=[['iw+strat', 1, 8]], proposal='heuristic',
                n_gt=20_000, criterion={'warmup': 200, 'interval': 20, 'cap': 400}, seed=4),
    'pairprob': dict(pairprob={'instances': 3, 'N': 12}, seed=4),
    'attribution': dict(attribution={'budgets': [4, 16], 'trials': 4, 'n_examples': 8}, seed=4),
}


@pytest.mark.parametrize('command', sorted(SMALL_RUNS))
def test_outputs_do_not_depend_on_thread_count(tmp_path, command):
    config = write_config(tmp_path, **SMALL_RUNS[command])
    single, many = tmp_path / 'single', tmp_path / 'many'
    assert cli.main([command, '--config', config, '--out', str(single), '--threads', '1']) == 0
    assert cli.main([command, '--config', config, '--out', str(many), '--threads', '8']) == 0
    names = sorted(p.name for p in single.iterdir())
    assert names == sorted(p.name for p in many.iterdir())
    assert 'manifest.json' in names
    for name in names:
        assert (single / name).read_bytes() == (many / name).read_bytes(), name


def test_sweep_reports_expected_cosine_when_reference_is_requested(tmp_path):
    config = write_config(tmp_path, task={'name': 'toy', 'params': {'rho': 0.1}},
                          grid=[['uniform', 1, 1], ['iw+strat', 1, 8]], proposal='heuristic', n_gt=20_000,
                          criterion={'warmup': 200, 'interval': 20, 'cap': 400}, seed=5)
    out = tmp_path / 'out'
    assert cli.main(['sweep', '--config', config, '--out', str(out)]) == 0

    assert list(read_rows(out / 'sweep.csv')[0]) == ['method', 'R', 'K', 'cost', 'variance', 'ecm', 're']
    rows = read_rows(out / 'sweep_cosine.csv')
    assert [r['method'] for r in rows] == ['uniform', 'iw+strat']
    cosines = [float(r['expected_cosine']) for r in rows]
    assert all(-1.0 <= c <= 1.0 for c in cosines)
    # more compute per estimate plus variance reduction points closer to the truth
    assert cosines[1] > cosines[0]
    assert float(rows[1]['mse_to_reference']) < float(rows[0]['mse_to_reference'])
    manifest = json.loads((out / 'manifest.json').read_text())
    assert [f['filename'] for f in manifest['files']] == ['sweep.csv', 'sweep_cosine.csv']
    assert len(manifest['reference']) == 2


def test_seed_flag_overrides_config(tmp_path, sweep_config):
    assert cli.main(['sweep', '--config', sweep_config, '--out', str(tmp_path / 'a'), '--seed', '8']) == 0
    assert json.loads((tmp_path / 'a' / 'manifest.json').read_text())['seed'] == 8


def test_sweep_json_format(tmp_path, sweep_config):
    out = tmp_path / 'out'
    assert cli.main(['sweep', '--config', sweep_config, '--out', str(out), '--format', 'json']) == 0
    rows = json.loads((out / 'sweep.json').read_text())
    assert rows[0]['re'] == pytest.approx(1.0)
    assert not (out / 'sweep.csv').exists()


def test_empty_grid_is_a_config_error(tmp_path):
    config = write_config(tmp_path, task='hier', grid=[])
    assert cli.main(['sweep', '--config', config, '--out', str(tmp_path / 'out')]) == 2
    assert not (tmp_path / 'out').exists()


def test_unknown_task_is_a_config_error(tmp_path):
    config = write_config(tmp_path, task='nonesuch', grid=[['uniform', 1, 1]])
    assert cli.main(['run', '--config', config, '--out', str(tmp_path / 'out')]) == 2


def test_bad_seed_is_a_config_error(tmp_path, sweep_config):
    assert cli.main(['sweep', '--config', sweep_config, '--out', str(tmp_path), '--seed', '-1']) == 2


def test_missing_config_file(tmp_path):
    assert cli.main(['run', '--config', str(tmp_path / 'absent.yaml')]) == 2


def test_numerical_failures_exit_with_their_code(tmp_path, monkeypatch):
    def failing(config, writer, fmt='csv'):
        raise SupportViolation("q(t) = 0 where p(t) > 0")

    monkeypatch.setitem(cli.COMMANDS, 'run', failing)
    assert cli.main(['run', '--out', str(tmp_path / 'out')]) == 3


def test_run_writes_a_variance_report(tmp_path):
    config = write_config(tmp_path, task={'name': 'toy', 'params': {'rho': 0.1}}, grid=[['iw+strat', 1, 8]],
                          proposal='heuristic', n_gt=20_000,
                          criterion={'warmup': 200, 'interval': 20, 'cap': 400})
    out = tmp_path / 'out'
    assert cli.main(['run', '--config', config, '--out', str(out)]) == 0

    report = json.loads((out / 'report.json').read_text())
    assert report['method'] == 'iw+strat'
    assert report['spec']['timestep_mode'] == 'proposal:heuristic'
    assert report['spec']['allocation'] == 'strat_per_render'
    assert report['samples'] <= 400
    assert report['cost'] == pytest.approx(1.0 + 8)
    assert len(report['mean']) == 2
    assert report['trace_cov'] > 0
    assert -1.0 <= report['cosine_to_reference'] <= 1.0
    assert report['mse_to_reference'] > 0


def test_pairprob_default_family(tmp_path):
    config = write_config(tmp_path, pairprob={'instances': 2, 'N': 16, 'dump_matrices': True}, seed=3)
    out = tmp_path / 'out'
    assert cli.main(['pairprob', '--config', config, '--out', str(out)]) == 0

    rows = read_rows(out / 'pairprob.csv')
    assert len(rows) == 10
    assert {r['kind'] for r in rows} == {'iid', 'strat_index', 'iw', 'iw_strat', 'sinkhorn'}
    details = json.loads((out / 'pairprob_marginals.json').read_text())
    assert all(len(d['marginals']) == 16 for d in details if d['error'] is None)
    assert (out / 'matrix_0_iid.csv').exists()


def test_pairprob_symmetric_instances_have_no_variance(tmp_path):
    instances = tmp_path / 'instances.yaml'
    instances.write_text(yaml.safe_dump([{'y': [[1.0, 0.0]] * 4}, {'y': [[0.5], [2.0]]}]))
    config = write_config(tmp_path, pairprob={'input': str(instances)})
    out = tmp_path / 'out'
    assert cli.main(['pairprob', '--config', config, '--out', str(out)]) == 0

    rows = read_rows(out / 'pairprob.csv')
    assert len(rows) == 10
    assert all(float(r['variance']) < 1e-12 for r in rows)


def test_pairprob_rejects_unknown_kind(tmp_path):
    config = write_config(tmp_path, pairprob={'kinds': ['iid', 'antithetic']})
    assert cli.main(['pairprob', '--config', config, '--out', str(tmp_path / 'out')]) == 2


def test_attribution_tables(tmp_path):
    config = write_config(tmp_path, attribution={'budgets': [4, 16], 'trials': 2, 'n_examples': 8}, seed=1)
    out = tmp_path / 'out'
    assert cli.main(['attribution', '--config', config, '--out', str(out)]) == 0

    rows = read_rows(out / 'attribution.csv')
    assert len(rows) == 2 * 2 * 2 * 8
    assert set(rows[0]) == {'example_id', 'score', 'budget', 'scheme', 'trial'}
    summary = json.loads((out / 'attribution_summary.json').read_text())
    assert [(s['budget'], s['scheme']) for s in summary] == [(4, 'iid'), (4, 'strat_global'),
                                                            (16, 'iid'), (16, 'strat_global')]


def test_attribution_rejects_bad_options(tmp_path):
    config = write_config(tmp_path, attribution={'budgets': [0]})
    assert cli.main(['attribution', '--config', config, '--out', str(tmp_path / 'out')]) == 2
