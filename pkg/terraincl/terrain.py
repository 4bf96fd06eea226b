"""
Procedural terrain patches.

A patch is a :class:`HeightField`: a regular grid of heights (rows along x, columns along y)
queried by bilinear interpolation. The terrain families are flat ground, up/down slopes,
up/down stairs and tiles; any of them can carry a roughness modifier that adds per-cell noise.
"""
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from terraincl.errors import ConfigurationError, ParameterError
from terraincl.seeding import stream

log = logging.getLogger(__name__)

#: Shape of the height-sample grid under an agent: 17 points along the heading, 11 across.
GRID_SHAPE = (17, 11)
NUM_HEIGHT_SAMPLES = GRID_SHAPE[0] * GRID_SHAPE[1]

_SNAP_TOLERANCE = 1e-9


class TerrainKind(enum.Enum):
    FLAT = 'flat'
    SLOPE_UP = 'slope_up'
    SLOPE_DOWN = 'slope_down'
    STAIRS_UP = 'stairs_up'
    STAIRS_DOWN = 'stairs_down'
    TILES = 'tiles'


@dataclass(frozen=True)
class TerrainSpec:
    """
    A terrain family together with its roughness modifier.

    Attributes:
        kind (TerrainKind): The terrain family.
        rough (bool): Whether per-cell uniform noise is added on top of the family's shape.
    """
    kind: TerrainKind
    rough: bool = False

    @property
    def label(self):
        """
        Get the label used in CSV files, config values and CLI flags.

        Returns:
            str: E.g. ``'flat'`` or ``'slope_up+rough'``.
        """
        return self.kind.value + ('+rough' if self.rough else '')

    @classmethod
    def parse(cls, label):
        """
        Parse a label as produced by :attr:`label`.

        Args:
            label (str): The terrain label.

        Returns:
            TerrainSpec: The parsed terrain.

        Raises:
            ConfigurationError: If the label names no terrain family.
        """
        name, _, modifier = label.strip().lower().partition('+')
        if modifier not in ('', 'rough'):
            raise ConfigurationError(f"unknown terrain modifier '{modifier}' in '{label}'")
        try:
            kind = TerrainKind(name)
        except ValueError:
            known = ', '.join(k.value for k in TerrainKind)
            raise ConfigurationError(f"unknown terrain '{name}' (known: {known})") from None
        return cls(kind, modifier == 'rough')

    def __str__(self):
        return self.label


@dataclass
class TerrainParams:
    """
    Geometry and difficulty knobs shared by every patch of a run.

    Attributes:
        patch_length_m (float): Patch extent along x.
        patch_width_m (float): Patch extent along y.
        cell_size_m (float): Grid spacing.
        slope_grade (float): Rise over run of the slopes.
        step_run_m (float): Horizontal depth of one stair.
        step_height_m (float): Rise of one stair.
        tile_cell_m (float): Side of one tile.
        tile_height_max_m (float): Tile heights are drawn from [-max, +max].
        rough_amplitude_m (float): Roughness noise is drawn from [-amplitude, +amplitude].
        seed (int): Default seed of :func:`generate` when none is passed.
    """
    patch_length_m: float = 12.0
    patch_width_m: float = 6.0
    cell_size_m: float = 0.05
    slope_grade: float = 0.25
    step_run_m: float = 0.30
    step_height_m: float = 0.10
    tile_cell_m: float = 0.25
    tile_height_max_m: float = 0.08
    rough_amplitude_m: float = 0.05
    seed: int = 0

    def validate(self):
        """
        Check the parameter constraints.

        Raises:
            ParameterError: Naming the first violated constraint.
        """
        if not self.cell_size_m > 0:
            raise ParameterError('cell_size_m > 0')
        for name in ('patch_length_m', 'patch_width_m'):
            value = getattr(self, name)
            cells = round(value / self.cell_size_m)
            if cells < 1 or not math.isclose(cells * self.cell_size_m, value, rel_tol=1e-9, abs_tol=1e-12):
                raise ParameterError(f'{name} is a positive integer multiple of cell_size_m')
        if self.step_run_m < 2 * self.cell_size_m:
            raise ParameterError('step_run_m >= 2 * cell_size_m')
        for name in ('slope_grade', 'step_height_m', 'tile_cell_m', 'tile_height_max_m', 'rough_amplitude_m'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ParameterError(f'{name} >= 0')
        if self.tile_cell_m == 0:
            raise ParameterError('tile_cell_m > 0')
        if not 0 <= self.seed < 2 ** 64:
            raise ParameterError('seed is an unsigned 64-bit integer')

    @property
    def rows(self):
        return round(self.patch_length_m / self.cell_size_m) + 1

    @property
    def cols(self):
        return round(self.patch_width_m / self.cell_size_m) + 1

    def max_amplitude(self, spec):
        """
        Get the largest absolute height a patch of the given terrain can have.

        Args:
            spec (TerrainSpec): The terrain.

        Returns:
            float: The bound in meters.
        """
        length = (self.rows - 1) * self.cell_size_m
        match spec.kind:
            case TerrainKind.SLOPE_UP | TerrainKind.SLOPE_DOWN:
                bound = self.slope_grade * length
            case TerrainKind.STAIRS_UP | TerrainKind.STAIRS_DOWN:
                bound = self.step_height_m * math.floor(length / self.step_run_m + _SNAP_TOLERANCE)
            case TerrainKind.TILES:
                bound = self.tile_height_max_m
            case _:
                bound = 0.0
        return bound + (self.rough_amplitude_m if spec.rough else 0.0)


@dataclass(frozen=True, eq=False)
class HeightField:
    """
    An immutable grid of terrain heights.

    Attributes:
        heights (numpy.ndarray): ``rows x cols`` heights in meters; row ``i`` lies at
            ``x = origin[0] + i * cell_size_m``, column ``j`` at ``y = origin[1] + j * cell_size_m``.
        cell_size_m (float): The grid spacing.
        origin (tuple): World coordinates of node (0, 0).
        spec (TerrainSpec): The terrain the field was generated from, if any.
    """
    heights: np.ndarray
    cell_size_m: float
    origin: tuple = (0.0, 0.0)
    spec: TerrainSpec = field(default=None)

    def __post_init__(self):
        heights = np.array(self.heights, dtype=np.float64)
        if heights.ndim != 2 or min(heights.shape) < 2:
            raise ParameterError('heights is a 2-D grid with at least 2 x 2 nodes')
        if not np.all(np.isfinite(heights)):
            raise ParameterError('heights are finite')
        heights.flags.writeable = False
        object.__setattr__(self, 'heights', heights)

    @property
    def rows(self):
        return self.heights.shape[0]

    @property
    def cols(self):
        return self.heights.shape[1]

    @property
    def center(self):
        """
        Get the world coordinates of the patch centre.

        Returns:
            tuple: ``(x, y)`` in meters.
        """
        return (self.origin[0] + 0.5 * (self.rows - 1) * self.cell_size_m,
                self.origin[1] + 0.5 * (self.cols - 1) * self.cell_size_m)

    def node_x(self, i):
        return self.origin[0] + np.asarray(i) * self.cell_size_m

    def node_y(self, j):
        return self.origin[1] + np.asarray(j) * self.cell_size_m

    def height_at(self, x, y):
        """
        Bilinearly interpolated height; see :func:`height_at`.
        """
        return height_at(self, x, y)


def _snap(fraction):
    # grid coordinates within tolerance of a node are treated as that node
    rounded = np.rint(fraction)
    return np.where(np.abs(fraction - rounded) < _SNAP_TOLERANCE, rounded, fraction)


def _bilinear(stack, ids, x, y, origin, cell_size):
    rows, cols = stack.shape[1:]
    fx = _snap(np.clip((x - origin[0]) / cell_size, 0.0, rows - 1))
    fy = _snap(np.clip((y - origin[1]) / cell_size, 0.0, cols - 1))
    i0 = np.minimum(np.floor(fx).astype(np.intp), rows - 2)
    j0 = np.minimum(np.floor(fy).astype(np.intp), cols - 2)
    tx = fx - i0
    ty = fy - j0
    h00 = stack[ids, i0, j0]
    h10 = stack[ids, i0 + 1, j0]
    h01 = stack[ids, i0, j0 + 1]
    h11 = stack[ids, i0 + 1, j0 + 1]
    return h00 * (1 - tx) * (1 - ty) + h10 * tx * (1 - ty) + h01 * (1 - tx) * ty + h11 * tx * ty


def height_at(field, x, y):
    """
    Query the terrain height.

    The four surrounding nodes are interpolated bilinearly; coordinates outside the patch are
    clamped to the border, so the function is total.

    Args:
        field (HeightField): The patch.
        x (float or numpy.ndarray): World x coordinate(s) in meters.
        y (float or numpy.ndarray): World y coordinate(s) in meters.

    Returns:
        float or numpy.ndarray: The height(s) in meters.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    ids = np.zeros(x.shape, dtype=np.intp)
    result = _bilinear(field.heights[np.newaxis], ids, x, y, field.origin, field.cell_size_m)
    return float(result) if result.ndim == 0 else result


def grid_offsets(spacing_m=0.1):
    """
    Get the body-frame offsets of the height-sample grid.

    Args:
        spacing_m (float): Distance between neighbouring sample points.

    Returns:
        numpy.ndarray: ``187 x 2`` offsets, row-major with the 17 heading positions outermost.
    """
    along = (np.arange(GRID_SHAPE[0]) - GRID_SHAPE[0] // 2) * spacing_m
    across = (np.arange(GRID_SHAPE[1]) - GRID_SHAPE[1] // 2) * spacing_m
    gx, gy = np.meshgrid(along, across, indexing='ij')
    return np.stack((gx.ravel(), gy.ravel()), axis=-1)


def _sample_points(base_pos, yaw, spacing_m):
    offsets = grid_offsets(spacing_m)
    cos, sin = np.cos(yaw)[..., np.newaxis], np.sin(yaw)[..., np.newaxis]
    px = base_pos[..., 0:1] + cos * offsets[:, 0] - sin * offsets[:, 1]
    py = base_pos[..., 1:2] + sin * offsets[:, 0] + cos * offsets[:, 1]
    return px, py


def sample_height_grid(field, base_pos, yaw, spacing_m=0.1, clip_height_m=1.0):
    """
    Sample the terrain in a rectangle beneath the agent.

    Args:
        field (HeightField): The patch.
        base_pos (numpy.ndarray): Base position(s) ``(..., 3)``.
        yaw (float or numpy.ndarray): Base heading(s) in radians.
        spacing_m (float): Grid spacing.
        clip_height_m (float): Samples are clipped to ``[-clip, +clip]``.

    Returns:
        numpy.ndarray: ``(..., 187)`` values of terrain height minus base height.
    """
    base_pos = np.asarray(base_pos, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    px, py = _sample_points(base_pos, yaw, spacing_m)
    heights = height_at(field, px, py)
    return np.clip(heights - base_pos[..., 2:3], -clip_height_m, clip_height_m)


class TerrainBank:
    """
    Equally-shaped patches stacked for vectorized per-agent queries.

    Attributes:
        fields (list): The :class:`HeightField` of every patch, indexed by terrain id.
    """

    def __init__(self, fields):
        """
        Class constructor.

        Args:
            fields (list): Patches sharing shape, cell size and origin.
        """
        if not fields:
            raise ConfigurationError('a terrain bank needs at least one patch')
        first = fields[0]
        for other in fields[1:]:
            if other.heights.shape != first.heights.shape or other.cell_size_m != first.cell_size_m \
                    or tuple(other.origin) != tuple(first.origin):
                raise ConfigurationError('all patches of a terrain bank must share shape, cell size and origin')
        self.fields = list(fields)
        self._stack = np.stack([f.heights for f in fields])
        self._stack.flags.writeable = False
        self.cell_size_m = first.cell_size_m
        self.origin = tuple(first.origin)

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, terrain_id):
        return self.fields[terrain_id]

    def check_ids(self, terrain_ids):
        """
        Raises:
            ConfigurationError: If any id names no patch.
        """
        terrain_ids = np.asarray(terrain_ids)
        if terrain_ids.size and (terrain_ids.min() < 0 or terrain_ids.max() >= len(self)):
            raise ConfigurationError(f'unknown terrain id (bank holds {len(self)} patches)')

    def heights_at(self, terrain_ids, x, y):
        """
        Query heights on per-point patches.

        Args:
            terrain_ids (numpy.ndarray): Patch index per point (broadcast against x, y).
            x (numpy.ndarray): World x coordinates.
            y (numpy.ndarray): World y coordinates.

        Returns:
            numpy.ndarray: Heights in meters.
        """
        x, y, ids = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64),
                                        np.asarray(terrain_ids, dtype=np.intp))
        return _bilinear(self._stack, ids, x, y, self.origin, self.cell_size_m)

    def sample_height_grid(self, terrain_ids, base_pos, yaw, spacing_m=0.1, clip_height_m=1.0):
        """
        Vectorized :func:`sample_height_grid` for agents on different patches.

        Returns:
            numpy.ndarray: ``N x 187`` samples.
        """
        px, py = _sample_points(base_pos, yaw, spacing_m)
        heights = self.heights_at(np.asarray(terrain_ids)[:, np.newaxis], px, py)
        return np.clip(heights - base_pos[:, 2:3], -clip_height_m, clip_height_m)


def generate(kind, params, seed=None, patch_index=0):
    """
    Generate a terrain patch.

    Generation is a pure function of its arguments: the random source is the labeled stream
    ``(seed, "terrain", label, patch_index)``.

    Args:
        kind (TerrainSpec or TerrainKind): The terrain to generate.
        params (TerrainParams): Geometry and difficulty.
        seed (int): Seed of the patch; defaults to ``params.seed``.
        patch_index (int): Index of the patch within its run.

    Returns:
        HeightField: The patch, with node (0, 0) at the world origin.

    Raises:
        ParameterError: If the parameters are invalid.
    """
    spec = kind if isinstance(kind, TerrainSpec) else TerrainSpec(kind)
    params.validate()
    seed = params.seed if seed is None else seed
    rng = stream(seed, 'terrain', spec.label, patch_index)

    x = np.arange(params.rows) * params.cell_size_m
    y = np.arange(params.cols) * params.cell_size_m
    shape = (params.rows, params.cols)

    match spec.kind:
        case TerrainKind.FLAT:
            heights = np.zeros(shape)
        case TerrainKind.SLOPE_UP | TerrainKind.SLOPE_DOWN:
            sign = 1.0 if spec.kind is TerrainKind.SLOPE_UP else -1.0
            heights = np.repeat((sign * params.slope_grade * x)[:, np.newaxis], params.cols, axis=1)
        case TerrainKind.STAIRS_UP | TerrainKind.STAIRS_DOWN:
            sign = 1.0 if spec.kind is TerrainKind.STAIRS_UP else -1.0
            steps = np.floor(x / params.step_run_m)
            heights = np.repeat((sign * params.step_height_m * steps)[:, np.newaxis], params.cols, axis=1)
        case TerrainKind.TILES:
            ti = np.floor(_snap(x / params.tile_cell_m)).astype(np.intp)
            tj = np.floor(_snap(y / params.tile_cell_m)).astype(np.intp)
            table = rng.uniform(-params.tile_height_max_m, params.tile_height_max_m, (ti[-1] + 1, tj[-1] + 1))
            heights = table[ti[:, np.newaxis], tj[np.newaxis, :]]
        case _:
            raise ConfigurationError(f'unsupported terrain kind {spec.kind}')

    if spec.rough and params.rough_amplitude_m > 0:
        heights = heights + rng.uniform(-params.rough_amplitude_m, params.rough_amplitude_m, shape)

    log.debug('generated %s patch %d (%dx%d, seed %d)', spec.label, patch_index, *shape, seed)
    return HeightField(heights, params.cell_size_m, (0.0, 0.0), spec)


def write_csv(field, path):
    """
    Write a patch as CSV for inspection or plotting.

    The first line is a ``#`` header with cell size, origin and grid shape; every following line
    holds one row (constant x) of heights in meters.

    Args:
        field (HeightField): The patch.
        path (str or pathlib.Path): Output file.
    """
    header = (f'cell_size_m={field.cell_size_m!r},origin_x={field.origin[0]!r},origin_y={field.origin[1]!r},'
              f'rows={field.rows},cols={field.cols}')
    if field.spec is not None:
        header += f',terrain={field.spec.label}'
    np.savetxt(path, field.heights, fmt='%.6f', delimiter=',', header=header)
