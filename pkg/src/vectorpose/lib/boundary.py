"""
3D Scharr edges and boundary targets.

G_a is the separable correlation of the crop with the derivative kernel
(-1, 0, 1) / 2 along axis a and the smoothing kernel (3, 10, 3) / 16 along
both other axes. Both kernels are normalized so that a unit ramp gives a unit
response. Borders replicate edge voxels.
"""

from dataclasses import dataclass
import logging

import numpy as np
from scipy.ndimage import correlate1d

from ..errors import InvalidArgumentError

__all__ = [
    "EdgeMap",
    "DERIVATIVE_KERNEL",
    "SMOOTHING_KERNEL",
    "scharr3d",
    "boundary_target",
]

logger = logging.getLogger(__name__)

DERIVATIVE_KERNEL = np.array([-1.0, 0.0, 1.0]) / 2
SMOOTHING_KERNEL = np.array([3.0, 10.0, 3.0]) / 16

# floor of the per-crop maximum
MAX_FLOOR = 1e-6


@dataclass
class EdgeMap:
    magnitude: np.ndarray
    normalized: bool = False


def scharr_gradients(data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3 or min(data.shape) < 3:
        raise InvalidArgumentError(
            f"Scharr filter needs a 3D crop with extents >= 3, "
            f"given shape: {data.shape}"
        )
    gradients = []
    for axis in range(3):
        g = correlate1d(data, DERIVATIVE_KERNEL, axis=axis, mode="nearest")
        for other in range(3):
            if other != axis:
                g = correlate1d(g, SMOOTHING_KERNEL, axis=other, mode="nearest")
        gradients.append(g)
    return gradients


def scharr3d(data):
    gx, gy, gz = scharr_gradients(data)
    return EdgeMap(np.sqrt(gx * gx + gy * gy + gz * gz), normalized=False)


def boundary_target(data):
    """Scharr magnitude divided by its per-crop maximum, in [0, 1]"""
    magnitude = scharr3d(data).magnitude
    peak = max(float(magnitude.max()), MAX_FLOOR)
    target = np.clip(magnitude / peak, 0.0, 1.0)
    return EdgeMap(target.astype(np.float32), normalized=True)
