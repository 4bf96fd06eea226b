import pytest

from terraincl.config import apply_overrides, coerce, dump_config, load_config, parse_lines
from terraincl.errors import ConfigurationError
from terraincl.experiment import RunConfig


def test_parse_lines():
    values = parse_lines(['# comment', '', 'scenario = hard2easy  # trailing', 'env.backend=surrogate'])
    assert values == {'scenario': 'hard2easy', 'env.backend': 'surrogate'}


@pytest.mark.parametrize('lines, message', [
    (['seed 3'], 'expected'),
    (['= 3'], 'expected'),
    (['seed = 1', 'seed = 2'], 'twice'),
])
def test_parse_errors(lines, message):
    with pytest.raises(ConfigurationError, match=message):
        parse_lines(lines, 'run.cfg')


def test_coerce_follows_default_type():
    assert coerce('yes', False) is True
    assert coerce('Off', True) is False
    assert coerce('0x10', 3) == 16
    assert coerce('1e-3', 0.5) == 0.001
    assert coerce('64, 32', (512, 256)) == (64, 32)
    assert coerce('-1, 1.5', (0.0, 0.0)) == (-1.0, 1.5)
    assert coerce(' walker ', 'surrogate') == 'walker'
    with pytest.raises(ConfigurationError, match='seed'):
        coerce('three', 0, 'seed')
    with pytest.raises(ConfigurationError):
        coerce('maybe', True)


def test_zero_padded_integers():
    assert coerce('007', 3) == 7
    assert coerce('00', 3) == 0
    assert coerce('08, 016', (512, 256)) == (8, 16)
    cfg = RunConfig()
    apply_overrides(cfg, parse_lines(['seed = 007', 'phase_length = 050']))
    assert (cfg.seed, cfg.phase_length) == (7, 50)
    with pytest.raises(ConfigurationError, match='seed'):
        apply_overrides(cfg, parse_lines(['seed = 0o9']))


def test_apply_overrides():
    cfg = apply_overrides(RunConfig(), {'seed': '4', 'ppo.learning_rate': '1e-3', 'policy.hidden_sizes': '16,16',
                                        'terrain.slope_grade': '0.1'})
    assert cfg.seed == 4
    assert cfg.ppo.learning_rate == 0.001
    assert cfg.policy.hidden_sizes == (16, 16)
    assert cfg.terrain.slope_grade == 0.1


@pytest.mark.parametrize('key', ['learning_rate', 'ppo.lr', 'optim.learning_rate', 'env'])
def test_unknown_keys(key):
    with pytest.raises(ConfigurationError, match='unknown config'):
        apply_overrides(RunConfig(), {key: '1'})


def test_dump_and_load_round_trip(tmp_path):
    cfg = RunConfig(scenario='custom:flat,slope_up+rough', seed=3, validation=False)
    cfg.policy.hidden_sizes = (64, 32)
    cfg.env.backend = 'surrogate'
    cfg.env.command_vx = (-0.5, 0.75)
    cfg.ppo.clip_ratio = 0.1 + 0.2
    path = tmp_path / 'config.txt'
    text = dump_config(cfg, path)
    assert 'env.backend = surrogate\n' in text
    assert 'validation = false\n' in text
    assert load_config(path) == cfg


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match='not found'):
        load_config(tmp_path / 'nope.cfg')


def test_load_on_top_of_config(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('phase_length = 7\n')
    cfg = load_config(path, RunConfig.full_scale())
    assert cfg.phase_length == 7
    assert cfg.num_train_agents == 4096
