import numpy as np
import pytest

from terraincl.cli import main

SMALL = ['-s', 'phase_length=2', '-s', 'num_train_agents=8', '-s', 'agents_per_terrain_val=2',
         '-s', 'env.backend=surrogate', '-s', 'policy.hidden_sizes=16,16', '-s', 'num_workers=1']


def test_gen_terrain(tmp_path, capsys):
    out = tmp_path / 'stairs.csv'
    assert main(['gen-terrain', '--kind', 'stairs_up', '--seed', '2', '--out', str(out)]) == 0
    assert capsys.readouterr().out.strip() == str(out)
    assert np.loadtxt(out, delimiter=',').shape == (241, 121)


def test_gen_terrain_unknown_kind(tmp_path, capsys):
    assert main(['gen-terrain', '--kind', 'lava', '--out', str(tmp_path / 'x.csv')]) == 1
    assert 'terraincl: error: unknown terrain' in capsys.readouterr().err


def test_train_validate_report(tmp_path, capsys):
    assert main(['-q', 'train', '--scenario', 'custom:flat,tiles', '--out', str(tmp_path), '--seed', '3', *SMALL]) == 0
    out = capsys.readouterr().out
    run_dir = tmp_path / 'custom_flat-tiles' / 'seed_3'
    assert str(run_dir) in out
    assert 'mean forgetting:' in out

    checkpoint = run_dir / 'checkpoints' / 'final.clqw'
    assert main(['validate', '--checkpoint', str(checkpoint), '--terrain', 'tiles', '-s', 'env.backend=surrogate',
                 '--agents', '4', '--windows', '2']) == 0
    assert 'tiles: reward_ma' in capsys.readouterr().out

    assert main(['report', '--runs', str(tmp_path)]) == 0
    assert '| terrain | custom:flat,tiles F' in capsys.readouterr().out


def test_train_with_config_file(tmp_path, capsys):
    config = tmp_path / 'run.cfg'
    config.write_text('scenario = custom:slope_down\nseed = 9\n' + '\n'.join(SMALL[1::2]) + '\n')
    assert main(['-q', 'train', '--config', str(config), '--out', str(tmp_path / 'runs')]) == 0
    assert (tmp_path / 'runs' / 'custom_slope_down' / 'seed_9' / 'validation.csv').is_file()


def test_sweep_command(tmp_path, capsys):
    assert main(['-q', 'sweep', '--scenario', 'custom:flat', '--out', str(tmp_path), '--seeds', '1,2', *SMALL]) == 0
    assert (tmp_path / 'custom_flat' / 'aggregate_validation.csv').is_file()


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(['train', '--scenario', 'medium', '--out', str(tmp_path)]) == 1
    assert 'unknown scenario' in capsys.readouterr().err
    assert main(['train', '--out', str(tmp_path), '-s', 'ppo.lr=1']) == 1
    assert 'unknown config key ppo.lr' in capsys.readouterr().err
    assert main(['report', '--runs', str(tmp_path / 'empty')]) == 1
    assert 'no runs found' in capsys.readouterr().err


def test_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main(['fly'])
    assert excinfo.value.code == 2
