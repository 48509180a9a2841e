"""Adapter exposing the Cython kernels under the backend interface."""

from ._core import (  # noqa: F401
    make_plan,
    propagate_combine,
    propagate_layers,
    sgd_batch_step,
)

name = "compiled"
