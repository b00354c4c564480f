"""
Volumes: loading, saving, intensity normalization and crop sampling.

Arrays are indexed (x, y, z). Two file formats are supported:
    - NIfTI (.nii, .nii.gz) through nibabel, spacing from the header zooms
    - raw (.vpraw): little-endian, 32 byte header followed by float32 voxels
      in C order of the (x, y, z) array. Header: magic, version,
      3 x uint32 extents, 3 x float32 spacing.
"""

from dataclasses import dataclass, replace
from pathlib import Path
import logging
import struct
import zlib

import nibabel as nib
from nibabel.filebasedimages import ImageFileError
import numpy as np
from scipy.ndimage import map_coordinates

from ..errors import ConfigError, InvalidArgumentError, VolumeIOError

__all__ = [
    "Volume",
    "CropPlacement",
    "VolumeDataConfig",
    "RAW_SUFFIX",
    "normalize",
    "sample_crop",
    "crop_at",
    "load_volume",
    "save_volume",
    "informative_fraction",
]

logger = logging.getLogger(__name__)

RAW_MAGIC = b"VPRW"
RAW_VERSION = 1
RAW_HEADER = struct.Struct("<4sI3I3f")
RAW_SUFFIX = ".vpraw"
NIFTI_SUFFIXES = (".nii", ".nii.gz")


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple = None
    normalized: bool = False
    name: str = None

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidArgumentError(
                f"Volume should be 3D, given shape: {self.data.shape}"
            )
        if self.spacing is not None:
            self.spacing = tuple(float(s) for s in self.spacing)

    @property
    def shape(self):
        return tuple(self.data.shape)


@dataclass(frozen=True)
class CropPlacement:
    # volume coordinates of crop voxel (0, 0, 0)
    offset: tuple
    # extents of the region in the volume
    extents: tuple
    source_volume_id: str = None
    landmark: object = None
    # extents of the crop array, differs from extents for resampled crops
    sample_extents: tuple = None

    @property
    def grid_extents(self):
        if self.sample_extents is None:
            return tuple(self.extents)
        return tuple(self.sample_extents)

    def check_inside(self, volume_shape):
        for o, e, d in zip(self.offset, self.extents, volume_shape):
            if o < 0 or o + e > d:
                raise InvalidArgumentError(
                    f"Crop at {tuple(self.offset)} of extents "
                    f"{tuple(self.extents)} is outside of volume "
                    f"{tuple(volume_shape)}"
                )


@dataclass
class VolumeDataConfig:
    # "phantom" or a dataset directory
    source: str = "phantom"
    phantom_count: int = 12
    phantom_test_count: int = 4
    phantom_shape: tuple = (128, 128, 128)
    phantom_seed: int = 0
    clip_lo_pct: float = 0.5
    clip_hi_pct: float = 99.5
    background_threshold: float = 0.01
    min_informative_fraction: float = 0.1
    max_retries: int = 50
    # "center" or volume coordinates of the landmark before jitter
    landmark: object = "center"
    # crop extents are drawn from [e * (1 - s), e * (1 + s)] and resampled
    scale_jitter: float = 0.0
    num_workers: int = 2

    def __post_init__(self):
        def check(condition, key, reason):
            if not condition:
                raise ConfigError(key, reason)

        check(
            0 <= self.clip_lo_pct < self.clip_hi_pct <= 100,
            "clip_hi_pct" if self.clip_lo_pct >= 0 else "clip_lo_pct",
            "should be 0 <= clip_lo_pct < clip_hi_pct <= 100, given: "
            f"{self.clip_lo_pct!r}, {self.clip_hi_pct!r}",
        )
        check(
            0 <= self.min_informative_fraction <= 1,
            "min_informative_fraction",
            f"should be in [0, 1], given: {self.min_informative_fraction!r}",
        )
        check(
            self.max_retries >= 1,
            "max_retries",
            f"should be positive, given: {self.max_retries!r}",
        )
        check(
            0 <= self.scale_jitter < 1,
            "scale_jitter",
            f"should be in [0, 1), given: {self.scale_jitter!r}",
        )
        check(
            self.num_workers >= 0,
            "num_workers",
            f"should be non-negative, given: {self.num_workers!r}",
        )
        check(
            self.phantom_count >= 1 and self.phantom_test_count >= 0,
            "phantom_count",
            "should be positive",
        )
        check(
            len(self.phantom_shape) == 3 and min(self.phantom_shape) >= 8,
            "phantom_shape",
            f"should be 3 extents >= 8, given: {self.phantom_shape!r}",
        )
        check(
            self.landmark == "center"
            or (
                isinstance(self.landmark, (list, tuple))
                and len(self.landmark) == 3
            ),
            "landmark",
            f"should be 'center' or a 3D point, given: {self.landmark!r}",
        )

    @property
    def landmark_base(self):
        if self.landmark == "center":
            return None
        return tuple(float(x) for x in self.landmark)


def normalize(volume, clip_lo_pct=0.5, clip_hi_pct=99.5):
    """
    Clip to intensity percentiles, then map affinely onto [0, 1].

    Percentiles are taken at actual voxel values (lower for the low bound,
    higher for the high bound), which makes normalization idempotent.
    Constant volumes map to zeros.
    """
    if volume.data.size == 0:
        raise InvalidArgumentError("Can't normalize an empty volume")
    if not 0 <= clip_lo_pct < clip_hi_pct <= 100:
        raise InvalidArgumentError(
            "Invalid clipping percentiles: "
            f"{clip_lo_pct!r}, {clip_hi_pct!r}"
        )

    data = volume.data.astype(np.float64)
    lo = np.percentile(data, clip_lo_pct, method="lower")
    hi = np.percentile(data, clip_hi_pct, method="higher")
    if hi <= lo:
        out = np.zeros_like(data)
    else:
        out = (np.clip(data, lo, hi) - lo) / (hi - lo)
    return replace(volume, data=out.astype(np.float32), normalized=True)


def crop_at(volume, offset, extents):
    placement = CropPlacement(
        offset=tuple(int(o) for o in offset),
        extents=tuple(int(e) for e in extents),
        source_volume_id=volume.name,
    )
    placement.check_inside(volume.shape)
    window = tuple(slice(o, o + e) for o, e in zip(offset, extents))
    return np.ascontiguousarray(volume.data[window]), placement


def _resample(region, extents):
    """Trilinear resampling with corner voxels kept on corner voxels"""
    axes = [
        np.linspace(0.0, r - 1, e) if e > 1 else np.zeros(1)
        for r, e in zip(region.shape, extents)
    ]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    return map_coordinates(
        region, coords, order=1, mode="nearest"
    ).astype(region.dtype)


def _informative_fraction(crop, threshold):
    return float(np.count_nonzero(crop > threshold)) / crop.size


def sample_crop(
    volume,
    extents,
    min_informative_fraction=0.1,
    rng=None,
    *,
    background_threshold=0.01,
    max_retries=50,
    scale_jitter=0.0,
    landmark=None,
):
    """
    Uniformly placed crop containing at least min_informative_fraction of
    voxels brighter than background_threshold. After max_retries rejected
    candidates the most informative one seen is returned.
    """
    extents = tuple(int(e) for e in extents)
    if len(extents) != 3 or any(
        e < 1 or e > d for e, d in zip(extents, volume.shape)
    ):
        raise InvalidArgumentError(
            f"Crop extents {extents} don't fit volume {volume.shape}"
        )
    if rng is None:
        rng = np.random.default_rng()

    best = None
    for attempt in range(max_retries):
        true_extents = extents
        if scale_jitter > 0:
            factor = rng.uniform(1 - scale_jitter, 1 + scale_jitter)
            true_extents = tuple(
                int(np.clip(round(e * factor), min(2, e), d))
                for e, d in zip(extents, volume.shape)
            )
        offset = tuple(
            int(rng.integers(0, d - e + 1))
            for d, e in zip(volume.shape, true_extents)
        )
        window = tuple(slice(o, o + e) for o, e in zip(offset, true_extents))
        region = volume.data[window]
        fraction = _informative_fraction(region, background_threshold)
        if best is None or fraction > best[0]:
            best = (fraction, offset, true_extents)
        if fraction >= min_informative_fraction:
            break
    else:
        logger.debug(
            "No crop of %s reached informative fraction %s in %d attempts, "
            "best: %.3f",
            volume.name,
            min_informative_fraction,
            attempt + 1,
            best[0],
        )

    _, offset, true_extents = best
    window = tuple(slice(o, o + e) for o, e in zip(offset, true_extents))
    crop = np.ascontiguousarray(volume.data[window])
    sample_extents = None
    if true_extents != extents:
        crop = _resample(crop, extents)
        sample_extents = extents

    placement = CropPlacement(
        offset=offset,
        extents=true_extents,
        source_volume_id=volume.name,
        landmark=landmark,
        sample_extents=sample_extents,
    )
    return crop, placement


def _volume_name(path):
    name = path.name
    for suffix in NIFTI_SUFFIXES + (RAW_SUFFIX,):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def _load_raw(path):
    with path.open("rb") as f:
        header = f.read(RAW_HEADER.size)
        if len(header) != RAW_HEADER.size:
            raise VolumeIOError(path, "truncated raw header")
        magic, version, *fields = RAW_HEADER.unpack(header)
        if magic != RAW_MAGIC:
            raise VolumeIOError(path, f"bad magic {magic!r}")
        if version != RAW_VERSION:
            raise VolumeIOError(path, f"unsupported raw version {version}")
        shape, spacing = tuple(fields[:3]), tuple(fields[3:])
        data = np.frombuffer(f.read(), dtype="<f4")

    if data.size != int(np.prod(shape)):
        raise VolumeIOError(
            path, f"expected {int(np.prod(shape))} voxels, found {data.size}"
        )
    return data.reshape(shape).astype(np.float32), spacing


def _load_nifti(path):
    try:
        img = nib.load(str(path))
        data = np.asarray(img.get_fdata(dtype=np.float32))
    except (ImageFileError, EOFError, ValueError, zlib.error) as e:
        raise VolumeIOError(path, str(e)) from None

    # tolerate trailing singleton dimensions like (x, y, z, 1)
    while data.ndim > 3 and data.shape[-1] == 1:
        data = data[..., 0]
    if data.ndim != 3:
        raise VolumeIOError(path, f"expected a 3D image, shape: {data.shape}")
    return data, tuple(float(z) for z in img.header.get_zooms()[:3])


def load_volume(path):
    path = Path(path)
    logger.debug("Loading volume: %s", path)
    try:
        if path.name.endswith(NIFTI_SUFFIXES):
            data, spacing = _load_nifti(path)
        elif path.name.endswith(RAW_SUFFIX):
            data, spacing = _load_raw(path)
        else:
            raise VolumeIOError(path, "unsupported volume format")
    except OSError as e:
        if isinstance(e, VolumeIOError):
            raise
        raise VolumeIOError(path, e.strerror or str(e)) from None
    return Volume(data=data, spacing=spacing, name=_volume_name(path))


def save_volume(volume, path, dtype=np.float32):
    """
    Writes NIfTI or raw format depending on suffix. The raw format always
    stores float32 voxels.
    """
    path = Path(path)
    spacing = volume.spacing or (1.0, 1.0, 1.0)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.name.endswith(NIFTI_SUFFIXES):
            img = nib.Nifti1Image(
                np.asarray(volume.data, dtype=dtype),
                np.diag(list(spacing) + [1.0]),
            )
            img.header.set_zooms(spacing)
            nib.save(img, str(path))
        elif path.name.endswith(RAW_SUFFIX):
            with path.open("wb") as f:
                f.write(
                    RAW_HEADER.pack(
                        RAW_MAGIC, RAW_VERSION, *volume.shape, *spacing
                    )
                )
                data = np.ascontiguousarray(volume.data, dtype="<f4")
                f.write(data.tobytes())
        else:
            raise VolumeIOError(path, "unsupported volume format")
    except OSError as e:
        if isinstance(e, VolumeIOError):
            raise
        raise VolumeIOError(path, e.strerror or str(e)) from None
    logger.debug("Saved volume: %s", path)
    return path


def informative_fraction(volume_or_crop, threshold=0.01):
    data = getattr(volume_or_crop, "data", volume_or_crop)
    return _informative_fraction(np.asarray(data), threshold)
