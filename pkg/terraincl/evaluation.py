"""
Frozen-policy validation and continual-learning transfer metrics.

Validation agents stand on every patch of the scenario and act with the mean action of the policy
saved at the previous iteration; they never produce gradients. Each patch keeps the totals of its
last 100 finished episodes, and the moving average over them forms one cell of the validation
matrix. Forgetting, backward and forward transfer are read off the matrix columns.
"""
import csv
import logging
import math
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from terraincl.env import VecEnv
from terraincl.errors import FaultError, ReportError

log = logging.getLogger(__name__)

RING_CAPACITY = 100
METRICS = ('forgetting', 'backward_transfer', 'forward_transfer')
FORMULAS = (
    'forgetting(k) = max_t V[t][k] - V[T][k]',
    'backward_transfer(k) = V[T][k] - V[e_last(k)][k]',
    'forward_transfer(k) = V[e_first(k)-1][k] - V[0][k]  (0 if k is trained in the first phase and V[0][k] exists)',
    'V[0][k] = validation of the initial policy (unavailable if absent); e_p = last iteration of phase p; T = final iteration',
)


def moving_average(totals, capacity=RING_CAPACITY):
    """
    Mean of the last ``capacity`` episode totals.

    Args:
        totals (iterable): Episode totals, oldest first.
        capacity (int): Window size.

    Returns:
        float: The mean, or None if there is no episode yet.
    """
    window = list(totals)[-capacity:]
    if not window:
        return None
    return math.fsum(window) / len(window)


class TerrainChannel:
    """
    Ring buffer of the last finished episode totals on one patch.

    Attributes:
        name (str): The patch's column name.
        capacity (int): Ring size.
        total_episodes (int): Episodes pushed since creation (or the last :meth:`clear`).
        data_mutex (threading.Lock): Guards the ring.
    """

    def __init__(self, name, capacity=RING_CAPACITY):
        self.name = name
        self.capacity = capacity
        self.data_mutex = threading.Lock()
        self._ring = deque(maxlen=capacity)
        self.total_episodes = 0

    def push(self, totals):
        totals = [float(t) for t in np.atleast_1d(totals)]
        with self.data_mutex:
            self._ring.extend(totals)
            self.total_episodes += len(totals)

    def clear(self):
        with self.data_mutex:
            self._ring.clear()
            self.total_episodes = 0

    @property
    def episodes_in_window(self):
        with self.data_mutex:
            return len(self._ring)

    @property
    def moving_average(self):
        """
        Get the mean of the ring.

        Returns:
            float: The mean, or None while no episode has finished.
        """
        with self.data_mutex:
            return moving_average(self._ring, self.capacity)

    def values(self):
        with self.data_mutex:
            return list(self._ring)


class ValidationPool:
    """
    Validation agents on every patch, driven by a frozen policy snapshot.

    Attributes:
        env (VecEnv): The validation agents; agent ``i`` stands on patch ``i // agents_per_terrain``.
        channels (list): One :class:`TerrainChannel` per patch.
        snapshot (ActorCritic): The frozen policy, None until set.
    """

    def __init__(self, env_cfg, bank, agents_per_terrain, seed=0, names=None, steps_per_window=24, pool=None):
        """
        Class constructor.

        Args:
            env_cfg (EnvConfig): Environment of the validation agents.
            bank (TerrainBank): The patches.
            agents_per_terrain (int): Agents per patch.
            seed (int): Run seed; the pool draws from the ``"validation"`` streams only.
            names (list): Column names of the patches; terrain labels if omitted.
            steps_per_window (int): Steps per :meth:`run_validation`.
            pool (WorkerPool): Shared worker threads.
        """
        if agents_per_terrain < 1:
            raise FaultError('agents_per_terrain >= 1')
        self.agents_per_terrain = agents_per_terrain
        self.steps_per_window = steps_per_window
        terrain_ids = np.repeat(np.arange(len(bank)), agents_per_terrain)
        self.env = VecEnv(env_cfg, bank, len(terrain_ids), seed=seed, label='validation',
                          terrain_ids=terrain_ids, pool=pool)
        names = names or [f.spec.label if f.spec is not None else str(i) for i, f in enumerate(bank.fields)]
        self.channels = [TerrainChannel(name) for name in names]
        self.snapshot = None
        self._thread = None
        self._error = None

    @property
    def num_agents(self):
        return self.env.num_agents

    def set_snapshot(self, snapshot):
        """
        Swap in the policy the next window runs with.

        Args:
            snapshot (ActorCritic): A frozen copy (see :meth:`ActorCritic.snapshot`).
        """
        if not snapshot.frozen:
            raise FaultError('validation needs a frozen policy snapshot')
        self.snapshot = snapshot

    def run_validation(self, iteration=None):
        """
        Step every validation agent through one window with the snapshot's mean actions.

        Args:
            iteration (int): For logging.

        Returns:
            list: The moving average of every patch (None where no episode has finished).

        Raises:
            FaultError: If no snapshot has been set.
        """
        if self.snapshot is None:
            raise FaultError('validation has no policy snapshot')
        terrain_ids = self.env.state.terrain_id
        for _ in range(self.steps_per_window):
            actions = self.snapshot.act_deterministic(self.env.observations)
            result = self.env.step(actions)
            done = result.done
            if done.any():
                for k, channel in enumerate(self.channels):
                    mask = done & (terrain_ids == k)
                    if mask.any():
                        channel.push(result.episode_totals[mask])
        row = self.row()
        log.debug('validation at iteration %s: %s', iteration, row[0])
        return row[0]

    def row(self):
        """
        Returns:
            tuple: ``(moving averages, episodes in window)`` of every patch.
        """
        return ([c.moving_average for c in self.channels], [c.episodes_in_window for c in self.channels])

    def start(self, iteration=None):
        """
        Run :meth:`run_validation` in a background thread; finish it with :meth:`join`.
        """
        if self._thread is not None:
            raise FaultError('a validation window is already running')
        self._error = None

        def target():
            try:
                self.run_validation(iteration)
            except BaseException as e:
                self._error = e

        self._thread = threading.Thread(target=target, name='terraincl-validation', daemon=True)
        self._thread.start()

    def join(self):
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        if self._error is not None:
            error, self._error = self._error, None
            raise error

    def close(self):
        self.join()
        self.env.close()


@dataclass
class ValidationMatrix:
    """
    Moving-average validation reward of every patch over the iterations.

    Attributes:
        names (list): Column names (``flat``, ``slope_down``, ..., ``flat#2``, ...).
        values (numpy.ndarray): ``iterations x terrains``; NaN marks an absent entry.
        counts (numpy.ndarray): Episodes in the window behind every entry.
        change_points (list): First iteration of every phase but the first.
    """
    names: list
    values: np.ndarray
    counts: np.ndarray
    change_points: list = field(default_factory=list)

    @classmethod
    def empty(cls, num_iterations, names, change_points=()):
        return cls(list(names), np.full((num_iterations, len(names)), np.nan),
                   np.zeros((num_iterations, len(names)), dtype=np.int64), list(change_points))

    @property
    def num_iterations(self):
        return self.values.shape[0]

    def record(self, iteration, averages, counts):
        self.values[iteration] = [np.nan if v is None else v for v in averages]
        self.counts[iteration] = counts

    def column(self, name):
        return self.values[:, self.names.index(name)]

    def write_csv(self, path):
        """
        Write ``iteration, terrain, reward_ma, episodes_in_window`` rows; absent entries are empty.
        """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['iteration', 'terrain', 'reward_ma', 'episodes_in_window'])
            for t in range(self.num_iterations):
                for k, name in enumerate(self.names):
                    value = self.values[t, k]
                    writer.writerow([t, name, '' if np.isnan(value) else repr(float(value)), int(self.counts[t, k])])

    @classmethod
    def read_csv(cls, path, change_points=()):
        """
        Read a matrix written by :meth:`write_csv`.
        """
        rows = {}
        names = []
        with open(path, newline='') as f:
            for record in csv.DictReader(f):
                name = record['terrain']
                if name not in names:
                    names.append(name)
                value = float(record['reward_ma']) if record['reward_ma'] else np.nan
                rows[int(record['iteration']), name] = (value, int(record['episodes_in_window']))
        num_iterations = 1 + max((t for t, _ in rows), default=-1)
        matrix = cls.empty(num_iterations, names, change_points)
        for (t, name), (value, count) in rows.items():
            k = names.index(name)
            matrix.values[t, k] = value
            matrix.counts[t, k] = count
        return matrix


@dataclass
class TerrainTransfer:
    """
    Transfer metrics of one validation column; NaN marks an unavailable metric.
    """
    name: str
    forgetting: float = float('nan')
    backward_transfer: float = float('nan')
    forward_transfer: float = float('nan')

    def as_dict(self):
        return {metric: getattr(self, metric) for metric in METRICS}


@dataclass
class TransferReport:
    """
    Attributes:
        scenario (str): Scenario name.
        terrains (list): One :class:`TerrainTransfer` per column.
        metadata (dict): Run information (seed, iterations, ...).
    """
    scenario: str
    terrains: list
    metadata: dict = field(default_factory=dict)

    def summary(self):
        """
        Get the scenario-level means over the columns where a metric is available.

        Returns:
            dict: ``{metric: mean}`` (NaN if no column has the metric).
        """
        out = {}
        for metric in METRICS:
            values = [getattr(t, metric) for t in self.terrains if math.isfinite(getattr(t, metric))]
            out[metric] = math.fsum(values) / len(values) if values else float('nan')
        return out

    def write_csv(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['terrain', *METRICS])
            for t in self.terrains:
                writer.writerow([t.name, *(_format(getattr(t, m)) for m in METRICS)])

    def to_text(self):
        lines = [f'scenario = {self.scenario}']
        lines += [f'{key} = {value}' for key, value in self.metadata.items()]
        lines += [f'formula = {formula}' for formula in FORMULAS]
        for t in self.terrains:
            for metric in METRICS:
                lines.append(f'{t.name}.{metric} = {_format(getattr(t, metric))}')
        for metric, value in self.summary().items():
            lines.append(f'mean.{metric} = {_format(value)}')
        return '\n'.join(lines) + '\n'

    def write_text(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def read_csv(cls, path, scenario=''):
        terrains = []
        with open(path, newline='') as f:
            for record in csv.DictReader(f):
                terrains.append(TerrainTransfer(record['terrain'],
                                                *(float(record[m]) if record[m] else float('nan') for m in METRICS)))
        return cls(scenario, terrains)


def _format(value):
    return '' if value is None or not math.isfinite(value) else repr(float(value))


def transfer_metrics(matrix, scenario, metadata=None):
    """
    Compute forgetting, backward and forward transfer of every validation column.

    Column ``k`` belongs to phase ``k``; a column counts as trained in every phase whose terrain
    equals the column's terrain. With ``e_p`` the last iteration of phase ``p`` and ``T`` the last
    iteration of the scenario:

    * forgetting ``F(k) = max_t V[t][k] - V[T][k]``
    * backward transfer ``BWT(k) = V[T][k] - V[e_p*][k]``, ``p*`` the last phase trained on ``k``
    * forward transfer ``FWT(k) = V[e_(p-1)][k] - V[0][k]``, ``p`` the first phase trained on ``k``;
      zero when ``p`` is the first phase

    ``V[0][k]`` is the validation of the initial policy; it is never replaced by a later entry. A
    metric whose entries are absent is reported as NaN, so FWT is NaN when row 0 is absent.

    Args:
        matrix (ValidationMatrix): The validation matrix (rows past the scenario are ignored).
        scenario (Scenario): The scenario the matrix was recorded with.
        metadata (dict): Stored in the report.

    Returns:
        TransferReport: The metrics.
    """
    if len(matrix.names) != len(scenario):
        raise FaultError(f'matrix has {len(matrix.names)} columns, the scenario {len(scenario)} phases')
    last = min(matrix.num_iterations, scenario.total_iterations) - 1
    if last < 0:
        raise FaultError('the validation matrix is empty')
    values = matrix.values[:last + 1]
    terrains = []
    for k, name in enumerate(matrix.names):
        column = values[:, k]
        result = TerrainTransfer(name)
        final = column[last]
        baseline = column[0]
        trained = scenario.trained_phases(scenario.phases[k].spec)
        if not np.isnan(final):
            result.forgetting = float(np.nanmax(column) - final)
            if trained:
                at_end = column[scenario.phase_end(trained[-1])]
                if not np.isnan(at_end):
                    result.backward_transfer = float(final - at_end)
        if trained and not np.isnan(baseline):
            first = trained[0]
            if first == 0:
                result.forward_transfer = 0.0
            else:
                before = column[scenario.phase_end(first - 1)]
                if not np.isnan(before):
                    result.forward_transfer = float(before - baseline)
        terrains.append(result)
    return TransferReport(scenario.name, terrains, dict(metadata or {}))


def aggregate_traces(matrices):
    """
    Aggregate validation matrices of several runs of one scenario.

    Args:
        matrices (list): :class:`ValidationMatrix` objects with equal columns.

    Returns:
        tuple: ``(names, mean, minimum, maximum, runs)``; arrays are ``iterations x terrains``,
        NaN where no run has an entry, ``runs`` counts the runs behind every entry.
    """
    if not matrices:
        raise ReportError('no runs to aggregate')
    names = matrices[0].names
    num_iterations = min(m.num_iterations for m in matrices)
    stack = np.stack([m.values[:num_iterations] for m in matrices])
    runs = np.sum(~np.isnan(stack), axis=0)
    with np.errstate(invalid='ignore'):
        filled = np.where(np.isnan(stack), 0.0, stack)
        mean = np.where(runs > 0, filled.sum(axis=0) / np.maximum(runs, 1), np.nan)
        minimum = np.where(runs > 0, np.where(np.isnan(stack), np.inf, stack).min(axis=0), np.nan)
        maximum = np.where(runs > 0, np.where(np.isnan(stack), -np.inf, stack).max(axis=0), np.nan)
        # rounding of the sum must not push the mean out of the envelope
        mean = np.clip(mean, minimum, maximum)
    return names, mean, minimum, maximum, runs


def write_aggregate_csv(path, names, mean, minimum, maximum, runs):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['iteration', 'terrain', 'mean', 'min', 'max', 'runs'])
        for t in range(mean.shape[0]):
            for k, name in enumerate(names):
                writer.writerow([t, name, _format(mean[t, k]), _format(minimum[t, k]), _format(maximum[t, k]),
                                 int(runs[t, k])])


def aggregate_reports(reports):
    """
    Per-column min / mean / max of the transfer metrics of several runs.

    Returns:
        dict: ``{(name, metric): (mean, min, max, runs)}`` over the runs where the metric is available.
    """
    out = {}
    if not reports:
        return out
    for k, terrain in enumerate(reports[0].terrains):
        for metric in METRICS:
            values = [getattr(r.terrains[k], metric) for r in reports]
            values = [v for v in values if math.isfinite(v)]
            if values:
                out[terrain.name, metric] = (math.fsum(values) / len(values), min(values), max(values), len(values))
            else:
                out[terrain.name, metric] = (float('nan'),) * 3 + (0,)
    return out


def write_aggregate_transfer_csv(path, aggregate):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['terrain', 'metric', 'mean', 'min', 'max', 'runs'])
        for (name, metric), (mean, low, high, runs) in aggregate.items():
            writer.writerow([name, metric, _format(mean), _format(low), _format(high), runs])
