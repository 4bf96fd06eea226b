import logging
import os
import sys

import numpy as np
from cffi import FFI

log = logging.getLogger(__name__)

KERNELS_ENV_VAR = 'TERRAINCL_C_KERNELS'


def kernels_enabled():
    """
    Returns:
        bool: False if ``TERRAINCL_C_KERNELS`` is set to ``0`` (or ``false``/``no``/``off``).
    """
    return os.environ.get(KERNELS_ENV_VAR, '1').strip().lower() not in ('0', 'false', 'no', 'off')


class C_Code:
    """
    This class contains all wrapper functions to call C code.

    Attributes:
        c_code_loaded (bool): Indicates whether the C code could be imported. If not, callers fall
            back to their numpy implementations.
        ffibuilder (FFI): A FFI instance.
    """

    def __init__(self):
        """
        Standard constructor. Here the C code is compiled (on first use) and imported.
        """
        self.c_code_loaded = False
        self.ffibuilder = FFI()
        self._lib = None

        # Here the headers of all C-functions must be specified
        self.ffibuilder.cdef("void compute_gae(const double *rewards, const double *values, const double *next_values, "
                             "const double *resets, int num_steps, int num_agents, double gamma, double lam, "
                             "double *advantages);")

        if not kernels_enabled():
            log.info('compiled kernels disabled by %s', KERNELS_ENV_VAR)
            return

        c_code_path = os.path.abspath(os.path.dirname(__file__))
        if c_code_path not in sys.path:
            sys.path.insert(0, c_code_path)

        # if the C code is compiled, import it. Otherwise, compile and import it.
        try:
            from _terraincl_kernels import lib
        except ImportError:
            log.info('building C kernels')
            try:
                self.ffibuilder.set_source('_terraincl_kernels',
                                           '#include "kernels.h"',
                                           sources=[os.path.join(c_code_path, 'kernels.c')],
                                           include_dirs=[c_code_path])
                self.ffibuilder.compile(c_code_path, verbose=False)
                from _terraincl_kernels import lib
            except Exception as e:  # compiler missing, read-only install, ...
                log.warning('could not build C kernels, using numpy (%s)', e)
                return
        self._lib = lib
        self.c_code_loaded = True

    def _create_c_array(self, data_array):
        data_array = np.ascontiguousarray(data_array, dtype=np.float64)
        return data_array, self.ffibuilder.from_buffer('double *', data_array)

    def compute_gae(self, rewards, values, next_values, resets, gamma, lam):
        """
        Restart-aware advantage recursion.

        Args:
            rewards (numpy.ndarray): ``T x N`` rewards.
            values (numpy.ndarray): ``T x N`` values of the visited states.
            next_values (numpy.ndarray): ``T x N`` bootstrap values of every step.
            resets (numpy.ndarray): ``T x N``, 1 where the recursion is cut.
            gamma (float): Discount.
            lam (float): GAE lambda.

        Returns:
            numpy.ndarray: ``T x N`` float64 advantages.
        """
        if not self.c_code_loaded:
            raise ImportError('Could not load C code.')
        num_steps, num_agents = np.shape(rewards)
        keep = [self._create_c_array(a) for a in (rewards, values, next_values, resets)]
        advantages = np.zeros((num_steps, num_agents))
        out = self.ffibuilder.from_buffer('double *', advantages)
        self._lib.compute_gae(*(c for _, c in keep), num_steps, num_agents, float(gamma), float(lam), out)
        return advantages


_instance = None


def get_c_code():
    """
    Get the shared :class:`C_Code` instance, building the kernels on first call.
    """
    global _instance
    if _instance is None:
        _instance = C_Code()
    return _instance
