"""Exceptions raised by terraincl."""


class TerrainclError(Exception):
    """Base class of all terraincl errors."""


class ParameterError(TerrainclError, ValueError):
    """A numeric parameter violates one of its constraints.

    The message names the violated constraint, e.g. ``"step_run_m >= 2 * cell_size_m"``.
    """


class ConfigurationError(TerrainclError):
    """Unknown names (scenario, terrain, backend, config key) or malformed config values."""


class FaultError(TerrainclError, RuntimeError):
    """A module detected a state it cannot continue from (non-finite parameters, shape mismatch,
    missing bootstrap values, missing snapshot, corrupt checkpoint, ...)."""


class ReportError(TerrainclError):
    """The report could not find usable runs."""
