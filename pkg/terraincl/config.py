"""
Flat ``key = value`` configuration files.

One assignment per line, ``#`` starts a comment. Section keys are prefixed with the config they
belong to (``terrain.``, ``env.``, ``policy.``, ``ppo.``); run keys have no prefix::

    scenario = hard2easy
    seed = 3
    env.backend = surrogate
    policy.hidden_sizes = 128, 64, 32
    ppo.learning_rate = 1e-3
"""
import dataclasses
import logging
from pathlib import Path

from terraincl.errors import ConfigurationError

log = logging.getLogger(__name__)

SECTIONS = ('terrain', 'env', 'policy', 'ppo')
_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


def coerce(text, default, key='value'):
    """
    Convert text to the type of a default value.

    Args:
        text (str): The raw value.
        default: The current value; its type selects the conversion.
        key (str): Key name for error messages.

    Returns:
        The converted value. Tuples are comma-separated lists whose element type follows the
        default's first element.

    Raises:
        ConfigurationError: If the text does not convert.
    """
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            try:
                return int(text, 0)
            except ValueError:
                # int(text, 0) refuses leading zeros
                return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            element = default[0] if default else 0.0
            return tuple(coerce(part, element, key) for part in text.split(',') if part.strip())
        return text
    except ValueError:
        raise ConfigurationError(f"invalid value '{text}' for {key} (expected {type(default).__name__})") from None


def parse_lines(lines, source='<config>'):
    """
    Parse ``key = value`` lines.

    Returns:
        dict: Raw string values by key, in file order.

    Raises:
        ConfigurationError: On a line without ``=`` or a repeated key.
    """
    values = {}
    for number, line in enumerate(lines, 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f'{source}:{number}: expected "key = value"')
        if key in values:
            raise ConfigurationError(f'{source}:{number}: key {key} given twice')
        values[key] = value.strip()
    return values


def _target(cfg, key):
    section, dot, name = key.partition('.')
    if dot and section in SECTIONS:
        obj = getattr(cfg, section)
    elif dot:
        raise ConfigurationError(f'unknown config section in {key} (known: {", ".join(SECTIONS)})')
    else:
        obj, name = cfg, key
    names = {f.name for f in dataclasses.fields(obj)}
    if name not in names or name in SECTIONS and obj is cfg:
        raise ConfigurationError(f'unknown config key {key}')
    return obj, name


def apply_overrides(cfg, values):
    """
    Set config keys from raw string values.

    Args:
        cfg (RunConfig): Modified in place.
        values (dict): Raw values by (possibly prefixed) key.

    Returns:
        RunConfig: ``cfg``.

    Raises:
        ConfigurationError: On unknown keys or unconvertible values.
    """
    for key, text in values.items():
        obj, name = _target(cfg, key)
        setattr(obj, name, coerce(text, getattr(obj, name), key))
    return cfg


def load_config(path, cfg=None):
    """
    Read a config file on top of ``cfg`` (or the defaults).

    Returns:
        RunConfig: The configuration.
    """
    from terraincl.experiment import RunConfig

    cfg = RunConfig() if cfg is None else cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f'config file {path} not found')
    values = parse_lines(path.read_text().splitlines(), str(path))
    log.debug('read %d keys from %s', len(values), path)
    return apply_overrides(cfg, values)


def _render(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ', '.join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_items(cfg):
    """
    Returns:
        list: ``(key, value)`` pairs of every setting, sorted by key.
    """
    items = []
    for f in dataclasses.fields(cfg):
        if f.name in SECTIONS:
            for g in dataclasses.fields(getattr(cfg, f.name)):
                items.append((f'{f.name}.{g.name}', getattr(getattr(cfg, f.name), g.name)))
        else:
            items.append((f.name, getattr(cfg, f.name)))
    return sorted(items)


def dump_config(cfg, path=None):
    """
    Render the fully resolved configuration in the file format.

    Args:
        cfg (RunConfig): The configuration.
        path (str or Path): Written if given.

    Returns:
        str: The text.
    """
    text = ''.join(f'{key} = {_render(value)}\n' for key, value in config_items(cfg))
    if path is not None:
        Path(path).write_text(text)
    return text
