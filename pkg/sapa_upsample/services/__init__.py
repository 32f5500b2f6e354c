"""Services for sapa-upsample."""

from .complexity import closed_form, cost, cost_table, default_query
from .config import parse_overrides
from .gradients import sapa_b_backward, sapa_d_backward, sapa_i_backward
from .sampling import bilinear_upsample, nn_upsample, pixel_shuffle, pixel_unshuffle
from .sapa import compute_kernel_map, init_params, sapa_b_forward, sapa_d_forward, sapa_i_forward
from .tensor_io import read_params, read_tensor, write_params, write_tensor

__all__ = [
    "closed_form",
    "cost",
    "cost_table",
    "default_query",
    "parse_overrides",
    "sapa_i_backward",
    "sapa_b_backward",
    "sapa_d_backward",
    "nn_upsample",
    "bilinear_upsample",
    "pixel_shuffle",
    "pixel_unshuffle",
    "compute_kernel_map",
    "init_params",
    "sapa_i_forward",
    "sapa_b_forward",
    "sapa_d_forward",
    "read_tensor",
    "write_tensor",
    "read_params",
    "write_params",
]
