from .c_code import C_Code, get_c_code, kernels_enabled
