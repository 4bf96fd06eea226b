"""
Training runs, seed sweeps and reports.

A run trains one policy through the phases of a scenario. Every iteration collects a window on the
current phase's patch, updates the policy with PPO, lets the validation agents play one window
with the policy of the previous iteration and records their moving averages. A run directory
holds::

    config.txt            resolved configuration (written before training)
    manifest.json         seed, version, timing, status
    training_log.csv      one "train" row and one "validation" row per patch and iteration
    validation.csv        the validation matrix
    transfer.txt/.csv     forgetting and transfer metrics
    checkpoints/          phase_XX.clqw at every phase boundary, final.clqw at the end
"""
import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from terraincl.c_code import get_c_code
from terraincl.checkpoint import load_checkpoint, save_checkpoint
from terraincl.config import dump_config, load_config
from terraincl.curriculum import build_scenario, on_phase_change, scenario_bank
from terraincl.env import VecEnv
from terraincl.errors import ParameterError, ReportError
from terraincl.evaluation import (METRICS, TerrainChannel, TransferReport, ValidationMatrix, ValidationPool,
                                  aggregate_reports, aggregate_traces, transfer_metrics, write_aggregate_csv,
                                  write_aggregate_transfer_csv)
from terraincl.policy import ActorCritic, PolicyConfig
from terraincl.ppo import Adam, PpoConfig, RolloutBuffer, collect_rollout, compute_gae, update
from terraincl.seeding import stream
from terraincl.state import EnvConfig
from terraincl.terrain import TerrainBank, TerrainParams, TerrainSpec, generate
from terraincl.workers import WorkerPool

log = logging.getLogger(__name__)

TRAINING_LOG_COLUMNS = ('iteration', 'phase', 'terrain', 'split', 'reward_ma', 'episodes_terminated',
                        'loss_actor', 'loss_value', 'entropy', 'clip_fraction', 'approx_kl')
FULL_SCALE = {'num_train_agents': 4096, 'agents_per_terrain_val': 512, 'phase_length': 500}


def _version():
    try:
        from importlib.metadata import version
        return version('terraincl')
    except Exception:
        return 'unknown'


@dataclass
class RunConfig:
    """
    Everything a run depends on.

    The defaults are desk scale; :meth:`full_scale` gives 4096 training agents, 512 validation agents
    per terrain and 500-iteration phases (4000 iterations).

    Attributes:
        scenario (str): ``easy2hard``, ``hard2easy`` or ``custom:<terrains>``.
        seed (int): Run seed; every random stream derives from it.
        num_train_agents (int): Training agents.
        agents_per_terrain_val (int): Validation agents per patch.
        phase_length (int): Iterations per phase.
        out_dir (str): Root of the run directories.
        validation (bool): Run the validation pool.
        val_parallel (bool): Run validation in a thread alongside the PPO update.
        log_interval (int): Iterations between summary log lines.
        num_workers (int): Worker threads for env stepping; 0 picks ``TERRAINCL_THREADS`` or the CPU count.
    """
    scenario: str = 'easy2hard'
    seed: int = 0
    num_train_agents: int = 256
    agents_per_terrain_val: int = 64
    phase_length: int = 50
    out_dir: str = 'runs'
    validation: bool = True
    val_parallel: bool = False
    log_interval: int = 10
    num_workers: int = 0
    terrain: TerrainParams = field(default_factory=TerrainParams)
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    @classmethod
    def full_scale(cls, **kwargs):
        return cls(**{**FULL_SCALE, **kwargs})

    def validate(self):
        if self.num_train_agents < 1 or self.agents_per_terrain_val < 1:
            raise ParameterError('num_train_agents >= 1 and agents_per_terrain_val >= 1')
        if self.phase_length < 1:
            raise ParameterError('phase_length >= 1')
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError('seed is an unsigned 64-bit integer')
        if self.num_workers < 0 or self.log_interval < 1:
            raise ParameterError('num_workers >= 0 and log_interval >= 1')
        self.terrain.validate()
        self.env.validate()
        self.policy.validate()
        self.ppo.validate()
        build_scenario(self.scenario, self.phase_length)

    def build_scenario(self):
        return build_scenario(self.scenario, self.phase_length)

    @property
    def total_iterations(self):
        return self.build_scenario().total_iterations

    def run_dir(self):
        return Path(self.out_dir) / scenario_dir_name(self.scenario) / f'seed_{self.seed}'


def scenario_dir_name(name):
    return name.replace(':', '_').replace(',', '-').replace('+', '_')


@dataclass
class RunArtifacts:
    """
    Paths and in-memory results of a run.
    """
    run_dir: Path
    config_path: Path
    manifest_path: Path
    training_log: Path
    validation_csv: Path
    transfer_txt: Path = None
    transfer_csv: Path = None
    checkpoints: list = field(default_factory=list)
    matrix: ValidationMatrix = None
    report: TransferReport = None
    policy: ActorCritic = None
    update_faults: int = 0
    env_faults: int = 0


class Manifest:
    """
    ``manifest.json`` of a run, rewritten on every status change.
    """

    def __init__(self, path, cfg):
        self.path = Path(path)
        self.data = {
            'seed': cfg.seed,
            'scenario': cfg.scenario,
            'version': _version(),
            'c_kernels': get_c_code().c_code_loaded,
            'total_iterations': cfg.total_iterations,
            'status': 'running',
            'started': datetime.now(timezone.utc).isoformat(),
        }
        self.write()

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=2) + '\n')

    def finish(self, status, **info):
        self.data.update(status=status, finished=datetime.now(timezone.utc).isoformat(), **info)
        self.write()


def _fmt(value):
    if value is None:
        return ''
    value = float(value)
    return repr(value) if math.isfinite(value) else ''


def run(cfg):
    """
    Train through a scenario and write all artifacts.

    Args:
        cfg (RunConfig): The configuration.

    Returns:
        RunArtifacts: Paths and results.

    Raises:
        TerrainclError: If a module faults; the partial artifacts and a manifest marked ``failed``
            at the current iteration are left behind.
    """
    cfg.validate()
    scenario = cfg.build_scenario()
    total = scenario.total_iterations
    out = cfg.run_dir()
    (out / 'checkpoints').mkdir(parents=True, exist_ok=True)
    artifacts = RunArtifacts(out, out / 'config.txt', out / 'manifest.json', out / 'training_log.csv',
                             out / 'validation.csv')
    dump_config(cfg, artifacts.config_path)
    manifest = Manifest(artifacts.manifest_path, cfg)
    log.info('run %s seed %d: %d iterations, %d training agents, backend %s',
             scenario.name, cfg.seed, total, cfg.num_train_agents, cfg.env.backend)

    names = scenario.column_names
    matrix = ValidationMatrix.empty(total, names, scenario.change_points())
    artifacts.matrix = matrix
    pool = WorkerPool(cfg.num_workers or None)
    bank = scenario_bank(scenario, cfg.terrain, cfg.seed)
    train_env = VecEnv(cfg.env, bank, cfg.num_train_agents, seed=cfg.seed, label='train', terrain_ids=0, pool=pool)
    validation = None
    if cfg.validation:
        validation = ValidationPool(cfg.env, bank, cfg.agents_per_terrain_val, seed=cfg.seed, names=names,
                                    steps_per_window=cfg.ppo.steps_per_iteration, pool=pool)

    policy = ActorCritic(cfg.policy, rng=stream(cfg.seed, 'policy', 'init'))
    artifacts.policy = policy
    optimizer = Adam(policy.params, cfg.ppo.learning_rate, cfg.ppo.adam_beta1, cfg.ppo.adam_beta2, cfg.ppo.adam_eps)
    action_rng = stream(cfg.seed, 'ppo', 'actions')
    shuffle_rng = stream(cfg.seed, 'ppo', 'shuffle')
    buffer = RolloutBuffer(cfg.ppo.steps_per_iteration, cfg.num_train_agents, cfg.policy.obs_dim,
                           cfg.policy.action_dim)
    training = TerrainChannel('train')
    if validation is not None:
        validation.set_snapshot(policy.snapshot())

    iteration = 0
    phase = 0
    started = time.perf_counter()
    try:
        with open(artifacts.training_log, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(TRAINING_LOG_COLUMNS)
            for iteration in range(total):
                index, spec = scenario.phase_at(iteration)
                if index != phase:
                    path = out / 'checkpoints' / f'phase_{phase:02d}.clqw'
                    save_checkpoint(path, policy, {'iteration': iteration - 1, 'seed': cfg.seed,
                                                   'scenario': scenario.name, 'phase': phase})
                    artifacts.checkpoints.append(path)
                    phase = index
                    on_phase_change(train_env, index, scenario.phases[index])
                    training.clear()

                if validation is not None and cfg.val_parallel:
                    validation.start(iteration)
                try:
                    collect_rollout(policy, train_env, buffer, action_rng)
                    advantages = compute_gae(buffer, cfg.ppo)
                    stats = update(policy, buffer, advantages, cfg.ppo, optimizer, shuffle_rng)
                finally:
                    if validation is not None and cfg.val_parallel:
                        validation.join()
                if validation is not None and not cfg.val_parallel:
                    validation.run_validation(iteration)
                if stats.fault:
                    artifacts.update_faults += 1

                finished = buffer.finished_episode_totals()
                training.push(finished)
                writer.writerow([iteration, index, names[index], 'train', _fmt(training.moving_average),
                                 len(finished), _fmt(stats.loss_actor), _fmt(stats.loss_value),
                                 _fmt(stats.entropy), _fmt(stats.clip_fraction), _fmt(stats.approx_kl)])
                if validation is not None:
                    averages, counts = validation.row()
                    matrix.record(iteration, averages, counts)
                    for name, average, count in zip(names, averages, counts):
                        writer.writerow([iteration, index, name, 'validation', _fmt(average), count,
                                         '', '', '', '', ''])
                    validation.set_snapshot(policy.snapshot())

                if (iteration + 1) % cfg.log_interval == 0 or iteration + 1 == total:
                    log.info('iteration %d/%d phase %d (%s): train reward %s, actor loss %s, kl %s',
                             iteration + 1, total, index, spec.label, _fmt(training.moving_average) or '-',
                             _fmt(stats.loss_actor) or '-', _fmt(stats.approx_kl) or '-')
        artifacts.env_faults = train_env.fault_count

        path = out / 'checkpoints' / 'final.clqw'
        save_checkpoint(path, policy, {'iteration': total - 1, 'seed': cfg.seed, 'scenario': scenario.name,
                                       'phase': phase})
        artifacts.checkpoints.append(path)
        matrix.write_csv(artifacts.validation_csv)
        if validation is not None:
            report = transfer_metrics(matrix, scenario, {'seed': cfg.seed, 'iterations': total,
                                                         'backend': cfg.env.backend})
            artifacts.report = report
            artifacts.transfer_txt = out / 'transfer.txt'
            artifacts.transfer_csv = out / 'transfer.csv'
            report.write_text(artifacts.transfer_txt)
            report.write_csv(artifacts.transfer_csv)
    except Exception:
        log.error('run %s seed %d failed at iteration %d', scenario.name, cfg.seed, iteration)
        matrix.write_csv(artifacts.validation_csv)
        manifest.finish('failed', failed_iteration=iteration)
        raise
    finally:
        if validation is not None:
            validation.close()
        train_env.close()
        pool.close()

    elapsed = time.perf_counter() - started
    manifest.finish('completed', wall_clock_s=elapsed, seconds_per_iteration=elapsed / total,
                    update_faults=artifacts.update_faults, env_faults=artifacts.env_faults)
    log.info('run %s seed %d completed in %.1f s', scenario.name, cfg.seed, elapsed)
    return artifacts


def _run_seed(args):
    cfg, seed = args
    cfg = RunConfig(**{**cfg.__dict__, 'seed': seed})
    run(cfg)
    return seed


@dataclass
class SweepResult:
    """
    Attributes:
        scenario_dir (Path): Directory holding the ``seed_N`` runs and the aggregate files.
        completed (list): Seeds that finished.
        failed (dict): Error message by failed seed.
    """
    scenario_dir: Path
    completed: list
    failed: dict
    aggregate_validation: Path = None
    aggregate_transfer: Path = None


def sweep(cfg, seeds, jobs=1):
    """
    Run several seeds of one configuration and aggregate their validation traces.

    Args:
        cfg (RunConfig): The configuration (its seed is replaced).
        seeds (list): The seeds.
        jobs (int): Runs in parallel processes.

    Returns:
        SweepResult: Completed and failed seeds and the aggregate files.
    """
    seeds = list(seeds)
    if not seeds:
        raise ParameterError('a sweep needs at least one seed')
    cfg.validate()
    completed, failed = [], {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            futures = {seed: executor.submit(_run_seed, (cfg, seed)) for seed in seeds}
            for seed, future in futures.items():
                try:
                    future.result()
                    completed.append(seed)
                except Exception as e:
                    failed[seed] = str(e)
                    log.error('seed %d failed: %s', seed, e)
    else:
        for seed in seeds:
            try:
                _run_seed((cfg, seed))
                completed.append(seed)
            except Exception as e:
                failed[seed] = str(e)
                log.error('seed %d failed: %s', seed, e)

    scenario_dir = Path(cfg.out_dir) / scenario_dir_name(cfg.scenario)
    result = SweepResult(scenario_dir, completed, failed)
    if completed and cfg.validation:
        scenario = cfg.build_scenario()
        matrices = [ValidationMatrix.read_csv(scenario_dir / f'seed_{seed}' / 'validation.csv')
                    for seed in completed]
        result.aggregate_validation = scenario_dir / 'aggregate_validation.csv'
        write_aggregate_csv(result.aggregate_validation, *aggregate_traces(matrices))
        reports = [transfer_metrics(m, scenario) for m in matrices]
        result.aggregate_transfer = scenario_dir / 'aggregate_transfer.csv'
        write_aggregate_transfer_csv(result.aggregate_transfer, aggregate_reports(reports))
    log.info('sweep %s: %d completed, %d failed', cfg.scenario, len(completed), len(failed))
    return result


def find_runs(runs_dir):
    """
    Find completed runs below a directory.

    Returns:
        dict: ``{scenario name: [run directory, ...]}``.
    """
    runs = {}
    for validation_csv in sorted(Path(runs_dir).glob('*/seed_*/validation.csv')):
        run_dir = validation_csv.parent
        config_path = run_dir / 'config.txt'
        if not config_path.is_file():
            continue
        cfg = load_config(config_path)
        runs.setdefault(cfg.scenario, []).append(run_dir)
    return runs


def load_run_report(run_dir):
    """
    Recompute the transfer metrics of a run from its raw validation CSV.
    """
    cfg = load_config(Path(run_dir) / 'config.txt')
    scenario = cfg.build_scenario()
    matrix = ValidationMatrix.read_csv(Path(run_dir) / 'validation.csv', scenario.change_points())
    return transfer_metrics(matrix, scenario, {'seed': cfg.seed})


def report(runs_dir, write=True):
    """
    Summarize every scenario below ``runs_dir`` in a markdown table of forgetting and transfer.

    Each cell is the mean over the scenario's seeds. Scenarios sit side by side, rows are the
    validation columns (``flat``, ``flat#2``, ...).

    Args:
        runs_dir (str or Path): Directory given to ``train``/``sweep`` as output.
        write (bool): Also write ``report.md`` into ``runs_dir``.

    Returns:
        str: The markdown text.

    Raises:
        ReportError: If no runs are found.
    """
    runs_dir = Path(runs_dir)
    runs = find_runs(runs_dir) if runs_dir.is_dir() else {}
    if not runs:
        found = sorted(str(p.relative_to(runs_dir)) for p in runs_dir.glob('*/*')) if runs_dir.is_dir() else []
        raise ReportError(f'no runs found in {runs_dir}' + (f' (found: {", ".join(found)})' if found else ''))

    scenarios = list(runs)
    aggregates = {}
    rows = []
    for name in scenarios:
        reports = [load_run_report(run_dir) for run_dir in runs[name]]
        aggregates[name] = aggregate_reports(reports)
        for terrain in reports[0].terrains:
            if terrain.name not in rows:
                rows.append(terrain.name)

    short = {'forgetting': 'F', 'backward_transfer': 'BWT', 'forward_transfer': 'FWT'}
    header = ['terrain'] + [f'{name} {short[m]}' for name in scenarios for m in METRICS]
    lines = ['# Forgetting and transfer', '',
             'Mean over seeds of the per-terrain metrics (see `transfer.txt` of a run for the formulas).', '',
             '| ' + ' | '.join(header) + ' |', '|' + '---|' * len(header)]
    for row in rows:
        cells = [row]
        for name in scenarios:
            for metric in METRICS:
                mean = aggregates[name].get((row, metric), (float('nan'),))[0]
                cells.append(f'{mean:.3f}' if math.isfinite(mean) else '-')
        lines.append('| ' + ' | '.join(cells) + ' |')
    lines.append('')
    for name in scenarios:
        lines.append(f'- {name}: {len(runs[name])} run(s); plot-ready traces in '
                     f'`{scenario_dir_name(name)}/seed_*/validation.csv`'
                     + (f' and `{scenario_dir_name(name)}/aggregate_validation.csv`'
                        if (runs_dir / scenario_dir_name(name) / 'aggregate_validation.csv').is_file() else ''))
    text = '\n'.join(lines) + '\n'
    if write:
        (runs_dir / 'report.md').write_text(text)
    return text


def probe(checkpoint, terrain, env_cfg=None, terrain_params=None, agents=64, windows=50, seed=0, steps_per_window=24):
    """
    Measure a saved policy on one terrain with frozen-policy validation.

    Args:
        checkpoint (str or Path): The checkpoint.
        terrain (str): Terrain label, e.g. ``stairs_up``.
        env_cfg (EnvConfig): Environment; defaults apply if omitted.
        terrain_params (TerrainParams): Patch geometry.
        agents (int): Validation agents.
        windows (int): Windows to play.
        seed (int): Seed of the patch and the agents.

    Returns:
        tuple: ``(moving average or None, episodes in window)``.
    """
    policy, _ = load_checkpoint(checkpoint)
    spec = TerrainSpec.parse(terrain)
    bank = TerrainBank([generate(spec, terrain_params or TerrainParams(), seed=seed)])
    pool = ValidationPool(env_cfg or EnvConfig(), bank, agents, seed=seed, names=[spec.label],
                          steps_per_window=steps_per_window)
    try:
        pool.set_snapshot(policy.snapshot())
        for window in range(windows):
            pool.run_validation(window)
        averages, counts = pool.row()
    finally:
        pool.close()
    return averages[0], counts[0]
