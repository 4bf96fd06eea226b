"""
Binary policy checkpoints.

Layout::

    b"CLQW"                 magic
    u8                      format version
    u32 (little endian)     length of the text header in bytes
    header                  UTF-8 "key=value" lines (layer sizes, iteration, seed, scenario, ...)
    weights                 every parameter in declared order as little-endian float32

Weights are always stored as float32. A float64 policy is rounded on save and loads back as float32.
"""
import logging
import struct
from pathlib import Path

import numpy as np

from terraincl.errors import FaultError
from terraincl.policy import ActorCritic, PolicyConfig

log = logging.getLogger(__name__)

MAGIC = b'CLQW'
VERSION = 1
_LENGTH = struct.Struct('<I')


def _encode_header(cfg, metadata):
    fields = {
        'obs_dim': cfg.obs_dim,
        'action_dim': cfg.action_dim,
        'hidden_sizes': ','.join(str(int(h)) for h in cfg.hidden_sizes),
        'log_std_min': repr(float(cfg.log_std_min)),
        'log_std_max': repr(float(cfg.log_std_max)),
        'parameter_count': cfg.parameter_count(),
    }
    for key, value in (metadata or {}).items():
        if key in fields:
            raise FaultError(f'metadata key {key!r} is reserved')
        text = str(value)
        if '\n' in text or '=' in str(key):
            raise FaultError(f'metadata entry {key!r} cannot be stored in a header line')
        fields[key] = text
    return ''.join(f'{key}={value}\n' for key, value in fields.items()).encode('utf-8')


def save_checkpoint(path, policy, metadata=None):
    """
    Write a policy to disk. Parameters are rounded to float32.

    Args:
        path (str or Path): Output file.
        policy (ActorCritic): The policy.
        metadata (dict): Extra header entries, e.g. ``iteration``, ``seed`` and ``scenario``.

    Returns:
        Path: The written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _encode_header(policy.cfg, metadata)
    if policy.cfg.dtype != 'float32':
        log.warning('%s: %s parameters are stored as float32', path, policy.cfg.dtype)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(bytes([VERSION]))
        f.write(_LENGTH.pack(len(header)))
        f.write(header)
        for name in policy.cfg.parameter_names():
            f.write(np.ascontiguousarray(policy.params[name], dtype='<f4').tobytes())
    log.debug('saved checkpoint %s', path)
    return path


def load_checkpoint(path):
    """
    Read a policy from disk.

    Args:
        path (str or Path): The checkpoint.

    Returns:
        tuple: ``(policy, metadata)``: a float32 :class:`ActorCritic` and the header entries that
        are not network shapes (all values as strings).

    Raises:
        FaultError: If the file is not a checkpoint, has another version or is truncated.
    """
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FaultError(f'{path} is not a checkpoint')
    if len(data) < 5 + _LENGTH.size or data[4] != VERSION:
        raise FaultError(f'{path} has an unsupported checkpoint version')
    (length,) = _LENGTH.unpack_from(data, 5)
    start = 5 + _LENGTH.size
    try:
        lines = data[start:start + length].decode('utf-8').splitlines()
        header = dict(line.split('=', 1) for line in lines if line)
        cfg = PolicyConfig(hidden_sizes=tuple(int(h) for h in header.pop('hidden_sizes').split(',')),
                           obs_dim=int(header.pop('obs_dim')),
                           action_dim=int(header.pop('action_dim')),
                           log_std_min=float(header.pop('log_std_min')),
                           log_std_max=float(header.pop('log_std_max')),
                           dtype='float32')
        count = int(header.pop('parameter_count'))
    except (KeyError, ValueError, UnicodeDecodeError) as e:
        raise FaultError(f'{path} has a corrupt header: {e}') from e
    if count != cfg.parameter_count():
        raise FaultError(f'{path} declares {count} parameters, the layer sizes give {cfg.parameter_count()}')

    weights = np.frombuffer(data, dtype='<f4', offset=start + length)
    if weights.size != count:
        raise FaultError(f'{path} holds {weights.size} weights, expected {count}')
    params, offset = {}, 0
    for name, shape in cfg.parameter_shapes().items():
        size = int(np.prod(shape))
        params[name] = weights[offset:offset + size].reshape(shape).astype(np.float32)
        offset += size
    cfg.init_log_std = float(np.clip(cfg.init_log_std, cfg.log_std_min, cfg.log_std_max))
    return ActorCritic(cfg, params=params), header
