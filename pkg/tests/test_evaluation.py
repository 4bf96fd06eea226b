import math

import numpy as np
import pytest

from terraincl.curriculum import build_scenario, scenario_bank
from terraincl.errors import FaultError, ReportError
from terraincl.evaluation import (RING_CAPACITY, TerrainChannel, TransferReport, ValidationMatrix, ValidationPool,
                                  aggregate_reports, aggregate_traces, moving_average, transfer_metrics,
                                  write_aggregate_csv)
from terraincl.policy import ActorCritic, PolicyConfig
from terraincl.surrogate import optimum
from terraincl.terrain import TerrainKind, TerrainParams


def test_moving_average_examples():
    assert moving_average(range(1, 151)) == 100.5
    assert moving_average(range(1, 41)) == 20.5
    assert moving_average([]) is None


def test_ring_buffer_evicts_oldest():
    channel = TerrainChannel('flat')
    assert channel.moving_average is None
    channel.push(np.arange(1.0, 151.0))
    assert channel.capacity == RING_CAPACITY == 100
    assert channel.episodes_in_window == 100
    assert channel.values()[0] == 51.0
    assert channel.moving_average == 100.5
    assert channel.total_episodes == 150
    channel.clear()
    assert channel.moving_average is None


def test_ring_buffer_matches_prefix_scan():
    stream = np.random.default_rng(0).normal(-20.0, 50.0, 10_000)
    channel = TerrainChannel('tiles')
    for i, total in enumerate(stream):
        channel.push(total)
        window = stream[max(0, i + 1 - 100):i + 1]
        assert channel.moving_average == math.fsum(window) / len(window)


def scenario_matrix(columns, phase_length=5):
    scenario = build_scenario('custom:' + ','.join(columns), phase_length)
    matrix = ValidationMatrix.empty(scenario.total_iterations, scenario.column_names, scenario.change_points())
    return scenario, matrix


def test_constant_trace_has_no_forgetting():
    scenario, matrix = scenario_matrix(['flat', 'tiles'])
    matrix.values[:] = 3.0
    report = transfer_metrics(matrix, scenario)
    for terrain in report.terrains:
        assert terrain.forgetting == 0.0
        assert terrain.backward_transfer == 0.0
        assert terrain.forward_transfer == 0.0


def test_rise_then_decay():
    scenario, matrix = scenario_matrix(['flat', 'tiles'])
    matrix.values[:, 0] = [2.0, 4.0, 6.0, 8.0, 10.0, 9.0, 7.0, 6.0, 5.0, 4.0]
    matrix.values[:, 1] = [-5.0, -5.0, -4.0, -3.0, -1.0, 0.0, 1.0, 2.0, 2.0, 3.0]
    report = transfer_metrics(matrix, scenario)
    flat, tiles = report.terrains
    assert flat.forgetting == 6.0
    assert flat.backward_transfer == -6.0
    assert flat.forward_transfer == 0.0
    assert tiles.forgetting == 0.0
    assert tiles.backward_transfer == 0.0
    assert tiles.forward_transfer == 4.0
    assert flat.forgetting >= max(0.0, -flat.backward_transfer)


def test_repeated_terrain_uses_last_training_phase():
    scenario, matrix = scenario_matrix(['flat', 'tiles', 'flat'], phase_length=2)
    matrix.values[:, 0] = [0.0, 1.0, 3.0, 2.0, 4.0, 5.0]
    matrix.values[:, 1] = 0.0
    matrix.values[:, 2] = [1.0, 1.0, 2.0, 6.0, 7.0, 8.0]
    flat, _, flat2 = transfer_metrics(matrix, scenario).terrains
    # both flat columns count as trained in phases 0 and 2
    assert flat.backward_transfer == 0.0
    assert flat.forward_transfer == 0.0
    assert flat2.forgetting == 0.0
    assert flat2.forward_transfer == 0.0


def test_absent_entries_make_metrics_unavailable():
    scenario, matrix = scenario_matrix(['flat', 'tiles'])
    empty = transfer_metrics(ValidationMatrix.empty(10, matrix.names), scenario)
    assert all(math.isnan(value) for t in empty.terrains for value in t.as_dict().values())
    assert all(math.isnan(value) for value in empty.summary().values())
    matrix.values[:, 0] = np.arange(10.0)
    matrix.values[4, 1] = 1.0
    matrix.values[9, 1] = 2.0
    flat, tiles = transfer_metrics(matrix, scenario).terrains
    assert flat.backward_transfer == 5.0
    assert tiles.forgetting == 0.0
    assert tiles.backward_transfer == 0.0
    assert math.isnan(tiles.forward_transfer)
    matrix.values[9, 1] = np.nan
    tiles = transfer_metrics(matrix, scenario).terrains[1]
    assert math.isnan(tiles.forgetting) and math.isnan(tiles.backward_transfer)


def test_forward_transfer_needs_the_initial_row():
    scenario, matrix = scenario_matrix(['flat', 'tiles'], phase_length=2)
    matrix.values[1:] = [[1.0, 2.0], [3.0, 2.5], [2.0, 4.0]]
    flat, tiles = transfer_metrics(matrix, scenario).terrains
    # a later entry never stands in for the initial policy
    assert math.isnan(flat.forward_transfer)
    assert math.isnan(tiles.forward_transfer)
    assert tiles.forgetting == 0.0
    assert flat.backward_transfer == 1.0
    matrix.values[0] = [0.5, 1.5]
    flat, tiles = transfer_metrics(matrix, scenario).terrains
    assert flat.forward_transfer == 0.0
    assert tiles.forward_transfer == 0.5


def test_rows_past_the_scenario_are_ignored():
    scenario, matrix = scenario_matrix(['flat', 'tiles'])
    matrix.values[:] = np.random.default_rng(0).normal(size=matrix.values.shape)
    longer = ValidationMatrix.empty(15, matrix.names)
    longer.values[:10] = matrix.values
    assert transfer_metrics(longer, scenario).terrains == transfer_metrics(matrix, scenario).terrains


def test_column_count_must_match():
    scenario, _ = scenario_matrix(['flat', 'tiles'])
    with pytest.raises(FaultError):
        transfer_metrics(ValidationMatrix.empty(10, ['flat']), scenario)


def test_report_text_and_csv(tmp_path):
    scenario, matrix = scenario_matrix(['flat', 'tiles'])
    matrix.values[:] = 1.0
    matrix.values[9, 0] = np.nan
    report = transfer_metrics(matrix, scenario, {'seed': 4})
    text = report.to_text()
    assert 'scenario = custom:flat,tiles' in text
    assert 'seed = 4' in text
    assert 'flat.forgetting = \n' in text
    assert 'tiles.backward_transfer = 0.0' in text
    report.write_csv(tmp_path / 'transfer.csv')
    loaded = TransferReport.read_csv(tmp_path / 'transfer.csv', scenario.name)
    assert loaded.terrains[1] == report.terrains[1]
    assert math.isnan(loaded.terrains[0].forgetting)


def test_matrix_csv(tmp_path):
    _, matrix = scenario_matrix(['flat', 'flat'])
    matrix.record(0, [None, -1.25], [0, 3])
    matrix.record(1, [0.1 + 0.2, 2.0], [1, 4])
    path = tmp_path / 'validation.csv'
    matrix.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == 'iteration,terrain,reward_ma,episodes_in_window'
    assert lines[1] == '0,flat,,0'
    assert lines[2] == '0,flat#2,-1.25,3'
    loaded = ValidationMatrix.read_csv(path)
    assert loaded.names == ['flat', 'flat#2']
    assert loaded.values[1, 0] == 0.1 + 0.2
    assert math.isnan(loaded.values[2, 0])
    assert np.array_equal(loaded.counts, matrix.counts)


def test_aggregate_traces(tmp_path):
    runs = []
    for seed in range(5):
        m = ValidationMatrix.empty(4, ['flat', 'tiles'])
        m.values[:] = np.random.default_rng(seed).normal(size=(4, 2))
        runs.append(m)
    runs[0].values[0, 0] = np.nan
    names, mean, low, high, count = aggregate_traces(runs)
    assert names == ['flat', 'tiles']
    assert count[0, 0] == 4 and count[1, 1] == 5
    assert np.all(low <= mean) and np.all(mean <= high)
    single = aggregate_traces(runs[1:2])
    assert np.array_equal(single[1], single[2]) and np.array_equal(single[1], single[3])
    write_aggregate_csv(tmp_path / 'aggregate.csv', names, mean, low, high, count)
    assert (tmp_path / 'aggregate.csv').read_text().startswith('iteration,terrain,mean,min,max,runs')
    with pytest.raises(ReportError):
        aggregate_traces([])


def test_aggregate_reports():
    scenario, matrix = scenario_matrix(['flat', 'tiles'])
    reports = []
    for shift in (0.0, 2.0):
        matrix.values[:, 0] = np.array([2.0, 4.0, 6.0, 8.0, 10.0, 9.0, 7.0, 6.0, 5.0, 4.0]) - shift * np.arange(10)
        matrix.values[:, 1] = 0.0
        reports.append(transfer_metrics(matrix, scenario))
    aggregate = aggregate_reports(reports)
    mean, low, high, runs = aggregate['flat', 'forgetting']
    assert runs == 2 and low <= mean <= high


def tiles_optimum_policy(cfg):
    policy_cfg = PolicyConfig(hidden_sizes=(8,), dtype='float64')
    params = {name: np.zeros(shape) for name, shape in policy_cfg.parameter_shapes().items()}
    params['actor.b1'] = optimum(cfg, TerrainKind.TILES)
    return ActorCritic(policy_cfg, params=params)


def test_optimal_snapshot_scores_zero(surrogate_cfg, pool):
    scenario = build_scenario('custom:tiles,tiles+rough', 1)
    bank = scenario_bank(scenario, TerrainParams(), seed=0)
    validation = ValidationPool(surrogate_cfg, bank, 8, names=scenario.column_names, pool=pool)
    policy = tiles_optimum_policy(surrogate_cfg)
    before = policy.copy_params()
    validation.set_snapshot(policy.snapshot())
    averages = validation.run_validation(0)
    assert averages == [0.0, 0.0]
    assert validation.row()[1] == [8, 8]
    for name in before:
        assert np.array_equal(policy.params[name], before[name])


def test_validation_needs_frozen_snapshot(surrogate_cfg, make_bank, pool):
    validation = ValidationPool(surrogate_cfg, make_bank('flat'), 2, pool=pool)
    with pytest.raises(FaultError, match='no policy snapshot'):
        validation.run_validation(0)
    with pytest.raises(FaultError, match='frozen'):
        validation.set_snapshot(tiles_optimum_policy(surrogate_cfg))


def test_validation_in_thread(surrogate_cfg, make_bank, pool):
    validation = ValidationPool(surrogate_cfg, make_bank('flat', 'slope_down'), 4, pool=pool)
    assert validation.num_agents == 8
    validation.set_snapshot(tiles_optimum_policy(surrogate_cfg).snapshot())
    validation.start(0)
    validation.join()
    averages, counts = validation.row()
    assert counts == [4, 4]
    assert averages[0] < 0.0 and averages[1] < 0.0


def test_thread_error_surfaces_on_join(surrogate_cfg, make_bank, pool):
    validation = ValidationPool(surrogate_cfg, make_bank('flat'), 2, pool=pool)
    validation.start(0)
    with pytest.raises(FaultError):
        validation.join()
