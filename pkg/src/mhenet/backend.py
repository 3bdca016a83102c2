"""Kernel backend selection.

The convolution, pooling, resize, and distance-transform inner loops exist
twice: numba-jitted (default when numba imports) and pure numpy.  The
``MHENET_BACKEND`` environment variable picks one at import time:

* ``auto`` (default): numba if available, else numpy
* ``numba``: require numba, fail loudly if missing
* ``numpy``: force the pure-numpy path

``set_backend`` switches at runtime; ``benchmarks/bench_backends.py`` compares
the two.
"""

import os

from . import kernels as _kernels_pkg

_active_name = None
_impl = None


def _resolve(requested):
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        _kernels_pkg.load_impl("numba")
        return "numba"
    if requested == "auto":
        try:
            _kernels_pkg.load_impl("numba")
            return "numba"
        except ImportError:
            return "numpy"
    raise ValueError(
        f"MHENET_BACKEND must be 'auto', 'numba', or 'numpy', got {requested!r}")


def set_backend(name):
    """Select the kernel backend ('auto', 'numba', or 'numpy')."""
    global _active_name, _impl
    _active_name = _resolve(name)
    _impl = _kernels_pkg.load_impl(_active_name)
    return _active_name


def backend_name():
    return _active_name


def set_num_threads(n):
    """Cap worker threads for the numba backend; numpy path is unaffected."""
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if _active_name == "numba":
        import numba
        numba.set_num_threads(n)


set_backend(os.environ.get("MHENET_BACKEND", "auto").lower())


def conv2d_forward(x, w, stride, padding, groups=1):
    return _impl.conv2d_forward(x, w, stride, padding, groups)


def conv2d_backward_input(gy, w, x_shape, stride, padding, groups=1):
    return _impl.conv2d_backward_input(gy, w, x_shape, stride, padding, groups)


def conv2d_backward_kernel(gy, x, w_shape, stride, padding, groups=1):
    return _impl.conv2d_backward_kernel(gy, x, w_shape, stride, padding, groups)


def avg_pool_forward(x, k, stride, padding):
    return _impl.avg_pool_forward(x, k, stride, padding)


def avg_pool_backward(gy, x_shape, k, stride, padding):
    return _impl.avg_pool_backward(gy, x_shape, k, stride, padding)


def bilinear_forward(x, out_h, out_w):
    return _impl.bilinear_forward(x, out_h, out_w)


def bilinear_backward(gy, in_h, in_w):
    return _impl.bilinear_backward(gy, in_h, in_w)


def edt_copy_nearest(fg, values):
    return _impl.edt_copy_nearest(fg, values)
