import json
import math

import numpy as np
import pytest

from terraincl import experiment
from terraincl.errors import FaultError, ParameterError, ReportError
from terraincl.evaluation import TransferReport, ValidationMatrix
from terraincl.experiment import RunConfig, load_run_report, probe, report, run, scenario_dir_name, sweep


def small_config(tmp_path, scenario='custom:flat,tiles', phase_length=3, backend='surrogate', **kwargs):
    cfg = RunConfig(scenario=scenario, phase_length=phase_length, num_train_agents=16, agents_per_terrain_val=4,
                    out_dir=str(tmp_path), num_workers=2, **kwargs)
    cfg.env.backend = backend
    cfg.policy.hidden_sizes = (32, 32)
    return cfg


def same_transfer(a, b):
    for x, y in zip(a.terrains, b.terrains):
        assert x.name == y.name
        for metric, value in x.as_dict().items():
            other = y.as_dict()[metric]
            assert (math.isnan(value) and math.isnan(other)) or value == other


def test_full_scale_keys():
    cfg = RunConfig.full_scale()
    assert (cfg.num_train_agents, cfg.agents_per_terrain_val, cfg.phase_length) == (4096, 512, 500)
    assert cfg.total_iterations == 4000
    assert RunConfig().total_iterations == 400


def test_invalid_run_config(tmp_path):
    with pytest.raises(ParameterError):
        run(small_config(tmp_path, phase_length=0))


def test_run_writes_artifacts(tmp_path):
    artifacts = run(small_config(tmp_path))
    assert artifacts.run_dir == tmp_path / 'custom_flat-tiles' / 'seed_0'
    manifest = json.loads(artifacts.manifest_path.read_text())
    assert manifest['status'] == 'completed'
    assert manifest['total_iterations'] == 6
    assert [p.name for p in artifacts.checkpoints] == ['phase_00.clqw', 'final.clqw']

    log_lines = artifacts.training_log.read_text().splitlines()
    assert log_lines[0] == ('iteration,phase,terrain,split,reward_ma,episodes_terminated,loss_actor,loss_value,'
                            'entropy,clip_fraction,approx_kl')
    assert len(log_lines) == 1 + 6 * 3
    assert log_lines[1].startswith('0,0,flat,train,')
    assert log_lines[-1].startswith('5,1,tiles,validation,')

    matrix = ValidationMatrix.read_csv(artifacts.validation_csv)
    assert matrix.names == ['flat', 'tiles']
    assert matrix.values.shape == (6, 2)
    assert np.all(np.isfinite(matrix.values))
    assert matrix.counts[:, 0].tolist() == [4, 8, 12, 16, 20, 24]
    assert np.all(matrix.values <= 0.0)

    assert artifacts.report.scenario == 'custom:flat,tiles'
    assert 'formula = forgetting(k)' in artifacts.transfer_txt.read_text()
    same_transfer(TransferReport.read_csv(artifacts.transfer_csv), artifacts.report)
    same_transfer(load_run_report(artifacts.run_dir), artifacts.report)


def test_run_is_deterministic(tmp_path):
    outputs = []
    for name, workers in (('a', 1), ('b', 3)):
        cfg = small_config(tmp_path / name, scenario='custom:flat,stairs_up', phase_length=2, backend='walker')
        cfg.num_workers = workers
        artifacts = run(cfg)
        outputs.append((artifacts.training_log.read_bytes(), artifacts.validation_csv.read_bytes(),
                        artifacts.checkpoints[-1].read_bytes()))
    assert outputs[0] == outputs[1]


def test_validation_does_not_touch_training(tmp_path):
    params = []
    for name, validation, parallel in (('off', False, False), ('on', True, False), ('thread', True, True)):
        cfg = small_config(tmp_path / name, validation=validation, val_parallel=parallel)
        artifacts = run(cfg)
        params.append(artifacts.policy.params)
        if not validation:
            assert artifacts.report is None
            assert not (artifacts.run_dir / 'transfer.txt').exists()
    for other in params[1:]:
        for key in params[0]:
            assert np.array_equal(params[0][key], other[key])


def test_failed_run_marks_manifest(tmp_path, monkeypatch):
    calls = []
    real_update = experiment.update

    def failing_update(*args):
        calls.append(1)
        if len(calls) == 3:
            raise FaultError('synthetic fault')
        return real_update(*args)

    monkeypatch.setattr(experiment, 'update', failing_update)
    cfg = small_config(tmp_path)
    with pytest.raises(FaultError, match='synthetic'):
        run(cfg)
    manifest = json.loads((cfg.run_dir() / 'manifest.json').read_text())
    assert manifest['status'] == 'failed'
    assert manifest['failed_iteration'] == 2
    matrix = ValidationMatrix.read_csv(cfg.run_dir() / 'validation.csv')
    assert np.all(np.isfinite(matrix.values[:2])) and np.all(np.isnan(matrix.values[2:]))


def test_sweep_aggregates(tmp_path):
    cfg = small_config(tmp_path)
    result = sweep(cfg, [1, 2])
    assert result.completed == [1, 2] and not result.failed
    for line in result.aggregate_validation.read_text().splitlines()[1:]:
        _, name, m, lo, hi, runs = line.split(',')
        assert runs == '2'
        assert float(lo) <= float(m) <= float(hi)
    transfer = result.aggregate_transfer.read_text().splitlines()
    assert transfer[0] == 'terrain,metric,mean,min,max,runs'
    assert len(transfer) == 1 + 2 * 3


def test_single_seed_sweep(tmp_path):
    result = sweep(small_config(tmp_path), [5])
    for line in result.aggregate_validation.read_text().splitlines()[1:]:
        _, _, m, lo, hi, runs = line.split(',')
        assert m == lo == hi and runs == '1'
    with pytest.raises(ParameterError):
        sweep(small_config(tmp_path), [])


def test_report_side_by_side(tmp_path):
    for scenario in ('custom:flat,tiles', 'custom:tiles,flat'):
        sweep(small_config(tmp_path, scenario=scenario), [0, 1])
    text = report(tmp_path)
    assert (tmp_path / 'report.md').read_text() == text
    header = next(line for line in text.splitlines() if line.startswith('| terrain'))
    assert 'custom:flat,tiles F' in header and 'custom:tiles,flat FWT' in header
    assert f'{scenario_dir_name("custom:tiles,flat")}/aggregate_validation.csv' in text
    flat_row = next(line for line in text.splitlines() if line.startswith('| flat |'))
    run_dirs = [tmp_path / 'custom_flat-tiles' / f'seed_{seed}' for seed in (0, 1)]
    forgetting = [load_run_report(d).terrains[0].forgetting for d in run_dirs]
    assert flat_row.split(' | ')[1] == f'{math.fsum(forgetting) / 2:.3f}'


def test_report_without_runs(tmp_path):
    with pytest.raises(ReportError, match='no runs found'):
        report(tmp_path)
    (tmp_path / 'stray').mkdir()
    (tmp_path / 'stray' / 'notes').mkdir()
    with pytest.raises(ReportError, match='stray'):
        report(tmp_path)


def test_probe_checkpoint(tmp_path):
    cfg = small_config(tmp_path)
    artifacts = run(cfg)
    average, count = probe(artifacts.checkpoints[-1], 'tiles', env_cfg=cfg.env, agents=4, windows=3)
    assert count == 12
    assert average <= 0.0


@pytest.mark.slow
def test_desk_scale_surrogate_run(tmp_path):
    cfg = RunConfig(out_dir=str(tmp_path))
    cfg.env.backend = 'surrogate'
    cfg.policy.hidden_sizes = (64, 64)
    artifacts = run(cfg)
    assert artifacts.matrix.values.shape == (400, 8)
    assert artifacts.matrix.names[4] == 'flat#2'


@pytest.mark.slow
def test_desk_scale_walker_run_ignores_worker_count(tmp_path):
    runs = []
    for workers in (1, 4):
        artifacts = run(RunConfig(out_dir=str(tmp_path / f'workers_{workers}'), num_workers=workers))
        assert artifacts.matrix.values.shape == (400, 8)
        runs.append(artifacts)
    first, second = runs
    assert np.array_equal(first.matrix.values, second.matrix.values, equal_nan=True)
    assert np.array_equal(first.matrix.counts, second.matrix.counts)
    assert first.validation_csv.read_bytes() == second.validation_csv.read_bytes()
    assert first.checkpoints[-1].read_bytes() == second.checkpoints[-1].read_bytes()


@pytest.mark.slow
@pytest.mark.parametrize('seed', [1, 2, 3, 4, 5])
def test_single_terrain_learning(tmp_path, seed):
    cfg = small_config(tmp_path, scenario='custom:flat', phase_length=200, seed=seed)
    cfg.num_train_agents = 64
    cfg.agents_per_terrain_val = 16
    cfg.policy.hidden_sizes = (64, 64)
    cfg.ppo.learning_rate = 1e-3
    artifacts = run(cfg)
    assert artifacts.matrix.values[-1, 0] >= -0.5


@pytest.mark.slow
@pytest.mark.parametrize('seed', [1, 2, 3, 4, 5])
def test_second_terrain_causes_forgetting(tmp_path, seed):
    cfg = small_config(tmp_path, scenario='custom:flat,slope_up', phase_length=100, seed=seed)
    cfg.num_train_agents = 64
    cfg.agents_per_terrain_val = 16
    cfg.policy.hidden_sizes = (64, 64)
    cfg.ppo.learning_rate = 1e-3
    artifacts = run(cfg)
    column = artifacts.matrix.column('flat')
    peak = np.nanmax(column)
    assert artifacts.report.terrains[0].forgetting >= 0.5 * (peak - column[0])
