"""Input checks in the spirit of ``sklearn.utils.check_array`` for stacked windows."""
from __future__ import annotations

import numpy as np
from sklearn.utils import check_array

from .exceptions import ShapeError
from .numerics import DTYPE


def check_windows(arr, name="X", ndim=3):
    """Return ``arr`` as a finite float32 array with ``ndim`` dimensions."""
    arr = check_array(arr, dtype=DTYPE, allow_nd=True, ensure_all_finite=True,
                      ensure_2d=False, input_name=name)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{names[0]} shape {np.shape(a)} != {names[1]} shape {np.shape(b)}")
