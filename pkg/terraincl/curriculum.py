"""
Scenarios and phase scheduling.

A scenario is an ordered list of phases; during a phase every training agent walks on one terrain
patch. The global iteration selects the phase, and at every boundary the training agents are
relocated onto the next patch.
"""
import logging
from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate

from terraincl.errors import ConfigurationError, FaultError, ParameterError
from terraincl.terrain import TerrainBank, TerrainSpec, generate

log = logging.getLogger(__name__)

DEFAULT_PHASE_LENGTH = 500
EASY2HARD = ('flat', 'slope_down', 'stairs_down', 'tiles', 'flat', 'slope_up+rough', 'stairs_up', 'tiles')
SCENARIOS = ('easy2hard', 'hard2easy')
CUSTOM_PREFIX = 'custom:'


@dataclass(frozen=True)
class Phase:
    """
    Attributes:
        spec (TerrainSpec): The terrain of the phase.
        phase_length_iters (int): Number of training iterations.
    """
    spec: TerrainSpec
    phase_length_iters: int = DEFAULT_PHASE_LENGTH

    def __post_init__(self):
        if self.phase_length_iters <= 0:
            raise ParameterError('phase_length_iters > 0')


@dataclass(frozen=True)
class Scenario:
    """
    Attributes:
        name (str): ``easy2hard``, ``hard2easy`` or ``custom:<label>,<label>,...``.
        phases (tuple): The :class:`Phase` sequence.
    """
    name: str
    phases: tuple

    @classmethod
    def custom(cls, labels, phase_length=DEFAULT_PHASE_LENGTH):
        """
        Build a scenario from terrain labels, e.g. ``['flat', 'slope_up']``.
        """
        labels = [label.strip() for label in labels if label.strip()]
        if not labels:
            raise ConfigurationError('a custom scenario needs at least one terrain')
        phases = tuple(Phase(TerrainSpec.parse(label), phase_length) for label in labels)
        return cls(CUSTOM_PREFIX + ','.join(p.spec.label for p in phases), phases)

    def __len__(self):
        return len(self.phases)

    @property
    def labels(self):
        return [phase.spec.label for phase in self.phases]

    @property
    def column_names(self):
        """
        Get unique names of the phases' patches: the terrain label, with ``#2``, ``#3``, ... appended
        to repeated terrains (``['flat', ..., 'flat#2', ...]``).
        """
        seen = {}
        names = []
        for label in self.labels:
            seen[label] = seen.get(label, 0) + 1
            names.append(label if seen[label] == 1 else f'{label}#{seen[label]}')
        return names

    @property
    def total_iterations(self):
        return sum(phase.phase_length_iters for phase in self.phases)

    def phase_starts(self):
        return [0, *accumulate(phase.phase_length_iters for phase in self.phases)][:-1]

    def change_points(self):
        """
        Returns:
            list: The iterations at which a new phase begins (the first phase excluded).
        """
        return self.phase_starts()[1:]

    def phase_end(self, index):
        """
        Returns:
            int: The last iteration of phase ``index``.
        """
        return self.phase_starts()[index] + self.phases[index].phase_length_iters - 1

    def phase_at(self, iteration):
        """
        Get the phase of a global iteration.

        Args:
            iteration (int): ``0 <= iteration < total_iterations``.

        Returns:
            tuple: ``(phase index, TerrainSpec)``.

        Raises:
            FaultError: If the iteration lies outside the scenario.
        """
        if not 0 <= iteration < self.total_iterations:
            raise FaultError(f'iteration {iteration} outside the scenario (0..{self.total_iterations - 1})')
        index = bisect_right(self.phase_starts(), iteration) - 1
        return index, self.phases[index].spec

    def trained_phases(self, spec):
        """
        Returns:
            list: Indices of the phases that train on ``spec``.
        """
        return [i for i, phase in enumerate(self.phases) if phase.spec == spec]

    def reversed(self):
        """
        Get the scenario with the phase order reversed (``easy2hard`` <-> ``hard2easy``).
        """
        phases = tuple(reversed(self.phases))
        if self.name == 'easy2hard':
            name = 'hard2easy'
        elif self.name == 'hard2easy':
            name = 'easy2hard'
        else:
            name = CUSTOM_PREFIX + ','.join(p.spec.label for p in phases)
        return Scenario(name, phases)


def build_scenario(name, phase_length=DEFAULT_PHASE_LENGTH):
    """
    Build a named scenario.

    Args:
        name (str): ``easy2hard``, ``hard2easy`` or ``custom:flat,tiles,...``.
        phase_length (int): Iterations per phase.

    Returns:
        Scenario: The scenario.

    Raises:
        ConfigurationError: If the name is unknown.
    """
    if name == 'easy2hard':
        return Scenario(name, tuple(Phase(TerrainSpec.parse(label), phase_length) for label in EASY2HARD))
    if name == 'hard2easy':
        return build_scenario('easy2hard', phase_length).reversed()
    if name.startswith(CUSTOM_PREFIX):
        return Scenario.custom(name[len(CUSTOM_PREFIX):].split(','), phase_length)
    raise ConfigurationError(f"unknown scenario '{name}' (known: {', '.join(SCENARIOS)}, {CUSTOM_PREFIX}<terrains>)")


def phase_at(scenario, iteration):
    return scenario.phase_at(iteration)


def scenario_bank(scenario, params, seed):
    """
    Generate one patch per phase.

    Patch ``p`` is drawn from the stream of its terrain and phase index, so repeated terrains
    share their parameters but not their random content.

    Returns:
        TerrainBank: Patch ``p`` belongs to phase ``p``.
    """
    return TerrainBank([generate(phase.spec, params, seed=seed, patch_index=i)
                        for i, phase in enumerate(scenario.phases)])


def on_phase_change(env, terrain_id, phase=None):
    """
    Relocate every training agent onto the patch of a new phase.

    Episodes in progress end without reporting a total.

    Args:
        env (VecEnv): The training environment.
        terrain_id (int): Patch of the new phase.
        phase (Phase): The new phase, for logging.

    Returns:
        numpy.ndarray: The observations after relocation.
    """
    label = phase.spec.label if phase is not None else env.bank[terrain_id].spec
    log.info('phase change: relocating %d training agents to patch %d (%s)', env.num_agents, terrain_id, label)
    return env.relocate(terrain_id)
