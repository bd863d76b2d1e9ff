import pytest

from errors import ConfigError
from settings import Criterion, ExperimentConfig, parse_task_ref, config_from_dict, load_config


def test_task_reference_forms():
    assert parse_task_ref('toy') == {'name': 'toy', 'params': {}}
    assert parse_task_ref('toy{rho=0.1}') == {'name': 'toy', 'params': {'rho': 0.1}}
    assert parse_task_ref('hier{sigmaA2=1, sigmaB2=4, dim=3}')['params'] == {'sigmaA2': 1, 'sigmaB2': 4, 'dim': 3}
    assert parse_task_ref({'name': 'poly', 'params': {'t_min': 0.1}}) == {'name': 'poly', 'params': {'t_min': 0.1}}


@pytest.mark.parametrize('ref', ['toy{rho', '{rho=1}', 'toy{rho}', 42, {'params': {}}])
def test_malformed_task_references(ref):
    with pytest.raises(ConfigError):
        parse_task_ref(ref)


def test_grid_expansion_respects_product_cap():
    config = config_from_dict({'grid': {'methods': ['uniform', 'strat'], 'R': [1, 2, 4], 'K': [1, 8, 16],
                                        'max_product': 16}})
    assert ('uniform', 1, 16) in config.grid
    assert ('uniform', 2, 16) not in config.grid
    # (1,1) (1,8) (1,16) (2,1) (2,8) (4,1) per method
    assert len(config.grid) == 2 * 6


def test_explicit_grid_cells():
    config = config_from_dict({'grid': [['iw', 1, 4], [2, 2], {'method': 'strat', 'R': 4, 'K': 1}]})
    assert config.grid == [('iw', 1, 4), ('uniform', 2, 2), ('strat', 4, 1)]
    with pytest.raises(ConfigError):
        config_from_dict({'grid': [[1]]})


def test_validation():
    with pytest.raises(ConfigError, match='empty'):
        ExperimentConfig().validate(require_grid=True)
    ExperimentConfig().validate(require_grid=False)
    with pytest.raises(ConfigError):
        ExperimentConfig(grid=[('antithetic', 1, 1)]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(grid=[('uniform', 8, 8)]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(proposal='median').validate(require_grid=False)
    with pytest.raises(ConfigError):
        Criterion(cap=0).validate()


def test_load_config_from_yaml(tmp_path):
    path = tmp_path / 'sweep.yaml'
    path.write_text("task: hier{sigmaA2=1,sigmaB2=4,dim=3}\n"
                    "seed: 17\n"
                    "grid: [[uniform, 1, 1], [strat, 1, 4]]\n"
                    "criterion: {warmup: 200, interval: 20, cap: 400}\n"
                    "cost_model: {alpha: 4}\n")
    config = load_config(str(path))
    assert config.seed == 17
    assert config.task['name'] == 'hier'
    assert config.criterion.warmup == 200
    assert config.criterion.rel_tol == 0.001
    assert config.cost_model == {'alpha': 4}


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / 'missing.yaml'))
    bad = tmp_path / 'bad.yaml'
    bad.write_text("grid: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    scalar = tmp_path / 'scalar.yaml'
    scalar.write_text("3\n")
    with pytest.raises(ConfigError):
        load_config(str(scalar))
    unknown = tmp_path / 'unknown.yaml'
    unknown.write_text("criterion: {patience: 3}\n")
    with pytest.raises(ConfigError):
        load_config(str(unknown))


def test_no_path_gives_defaults():
    config = load_config(None)
    assert config.grid == []
    assert config.criterion == Criterion()
