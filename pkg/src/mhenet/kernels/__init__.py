"""Hot-kernel backends: numba-jitted loops with a pure-numpy fallback."""

from . import numpy_impl

_KERNEL_NAMES = (
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_kernel",
    "avg_pool_forward",
    "avg_pool_backward",
    "bilinear_forward",
    "bilinear_backward",
    "resize_coeffs",
    "edt_copy_nearest",
)


def load_impl(name):
    """Return the kernel module for backend ``name`` ('numpy' or 'numba')."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from . import numba_impl
        return numba_impl
    raise ValueError(f"unknown kernel backend {name!r}")
