"""Volume and mask ingestion: NIfTI-1 reading, a bit-exact raw container,
min-max normalization, axis-aligned resizing, and manifest-driven mask sets.

Internal axis order is (D, H, W), depth slowest; slices are the unit of
everything downstream. Spacing is (sz, sy, sx) in millimeters per voxel.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_bytes, bin_path_for, read_json, require_keys, write_json
from .errors import (
    DimsMismatch,
    EmptyTarget,
    MalformedHeader,
    MissingRegion,
    SchemaViolation,
    TruncatedData,
    UnsupportedDatatype,
)
from .regions import REGION_IDS

SUPPORTED_DTYPES = ("uint8", "int16", "float32")

# NIfTI-1 datatype codes we accept.
_NIFTI_DTYPES = {2: "uint8", 4: "int16", 16: "float32"}
_NIFTI_MAGICS = (b"n+1\x00", b"ni1\x00")


@dataclass
class VolumeTensor:
    """A 3D scalar grid with physical voxel spacing.

    data has shape (D, H, W); kind is "image" or "mask". Mask data is
    binary {0, 1}. Instances are treated as immutable after construction.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    kind: str = "image"

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def dtype(self) -> str:
        return str(self.data.dtype)

    def validate(self) -> "VolumeTensor":
        if self.data.ndim != 3:
            raise DimsMismatch(f"expected 3D data, got shape {self.data.shape}")
        if self.dtype not in SUPPORTED_DTYPES:
            raise UnsupportedDatatype(f"dtype {self.dtype} not in {SUPPORTED_DTYPES}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise DimsMismatch(f"spacing must be 3 positive values, got {self.spacing}")
        if self.kind not in ("image", "mask"):
            raise SchemaViolation(f"kind must be image|mask, got {self.kind!r}")
        if self.kind == "mask":
            bad = np.setdiff1d(np.unique(self.data), [0, 1])
            if bad.size:
                raise SchemaViolation(f"mask contains non-binary values {bad[:5]}")
        return self


@dataclass
class RegionMaskSet:
    """The six canonical region masks plus optional lesion and organ masks.

    All masks share dims and spacing with the study's CT volume.
    """

    regions: dict[int, VolumeTensor]
    lesions: dict[str, VolumeTensor] = field(default_factory=dict)
    organs: dict[str, VolumeTensor] = field(default_factory=dict)

    def validate(self) -> "RegionMaskSet":
        missing = [rid for rid in REGION_IDS if rid not in self.regions]
        if missing:
            raise MissingRegion(f"region masks missing for ids {missing}")
        if len(self.regions) != len(REGION_IDS):
            raise SchemaViolation(f"unexpected region ids {sorted(self.regions)}")
        ref = self.regions[REGION_IDS[0]]
        for name, mask in self.iter_named():
            if mask.dims != ref.dims:
                raise DimsMismatch(f"mask {name}: dims {mask.dims} != {ref.dims}")
            if not np.allclose(mask.spacing, ref.spacing, rtol=1e-5, atol=0.0):
                raise DimsMismatch(f"mask {name}: spacing {mask.spacing} != {ref.spacing}")
        return self

    def iter_named(self):
        for rid in REGION_IDS:
            if rid in self.regions:
                yield f"region:{rid}", self.regions[rid]
        for name in self.lesions:
            yield f"lesion:{name}", self.lesions[name]
        for name in self.organs:
            yield f"organ:{name}", self.organs[name]


def _open_maybe_gzip(path: Path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_nifti(path) -> VolumeTensor:
    """Load an uncompressed (or gzipped) NIfTI-1 volume.

    Only 3D volumes with datatype uint8/int16/float32 are supported. Values
    are rescaled by scl_slope/scl_inter when scl_slope is nonzero. The
    third spatial axis becomes the depth axis, so the returned data has
    shape (dim[3], dim[2], dim[1]).
    """
    path = Path(path)
    if not path.exists():
        raise TruncatedData(f"no such file: {path}")
    with _open_maybe_gzip(path) as fh:
        header = fh.read(348)
        if len(header) < 348:
            raise MalformedHeader(f"{path}: header shorter than 348 bytes")
        byteorder = None
        for candidate in ("<", ">"):
            if struct.unpack(candidate + "i", header[:4])[0] == 348:
                byteorder = candidate
                break
        if byteorder is None:
            raise MalformedHeader(f"{path}: sizeof_hdr != 348")
        magic = header[344:348]
        if magic not in _NIFTI_MAGICS:
            raise MalformedHeader(f"{path}: bad magic {magic!r}")

        dim = struct.unpack(byteorder + "8h", header[40:56])
        datatype = struct.unpack(byteorder + "h", header[70:72])[0]
        pixdim = struct.unpack(byteorder + "8f", header[76:108])
        vox_offset = struct.unpack(byteorder + "f", header[108:112])[0]
        scl_slope = struct.unpack(byteorder + "f", header[112:116])[0]
        scl_inter = struct.unpack(byteorder + "f", header[116:120])[0]

        if dim[0] != 3:
            raise MalformedHeader(f"{path}: dim[0] == {dim[0]}, expected 3")
        if datatype not in _NIFTI_DTYPES:
            raise UnsupportedDatatype(f"{path}: NIfTI datatype code {datatype}")
        dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(byteorder)

        nx, ny, nz = (int(dim[i]) for i in (1, 2, 3))
        if min(nx, ny, nz) < 1:
            raise MalformedHeader(f"{path}: nonpositive dims {(nx, ny, nz)}")
        nbytes = nx * ny * nz * dtype.itemsize

        if magic == b"n+1\x00":
            skip = max(int(vox_offset), 348) - 348
            fh.read(skip)
            payload = fh.read(nbytes)
        else:
            # .hdr/.img pair: payload lives in the sibling .img file.
            img_path = path.with_suffix(".img")
            if not img_path.exists():
                raise TruncatedData(f"missing image file for {path}")
            with open(img_path, "rb") as img:
                img.seek(max(int(vox_offset), 0))
                payload = img.read(nbytes)

    if len(payload) < nbytes:
        raise TruncatedData(f"{path}: payload {len(payload)} bytes, need {nbytes}")

    # On-disk order is x fastest, so a C-order reshape to (nz, ny, nx)
    # yields depth-slowest (D, H, W) directly.
    data = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    data = data.astype(data.dtype.newbyteorder("="))

    if scl_slope != 0.0 and (scl_slope, scl_inter) != (1.0, 0.0):
        data = (data.astype(np.float64) * scl_slope + scl_inter).astype(np.float32)

    # Nonpositive pixdims occur in the wild; treat them as unit spacing.
    spacing = tuple(float(p) if p > 0 else 1.0 for p in (pixdim[3], pixdim[2], pixdim[1]))
    return VolumeTensor(data=data, spacing=spacing).validate()


def save_raw_container(vol: VolumeTensor, header_path) -> None:
    """Write `<name>.json` + `<name>.bin`; round-trips byte-identically."""
    vol.validate()
    header = {
        "dims": list(vol.dims),
        "spacing": [float(s) for s in vol.spacing],
        "dtype": vol.dtype,
        "kind": vol.kind,
    }
    write_json(header_path, header)
    payload = np.ascontiguousarray(vol.data, dtype=np.dtype(vol.dtype).newbyteorder("<"))
    atomic_write_bytes(bin_path_for(header_path), payload.tobytes())


def load_raw_container(header_path) -> VolumeTensor:
    """Load the sidecar raw container written by save_raw_container."""
    header = read_json(header_path)
    require_keys(header, ("dims", "spacing", "dtype", "kind"), str(header_path))
    dims = header["dims"]
    if not (isinstance(dims, list) and len(dims) == 3 and all(isinstance(n, int) and n >= 1 for n in dims)):
        raise SchemaViolation(f"{header_path}: bad dims {dims!r}")
    if header["dtype"] not in SUPPORTED_DTYPES:
        raise UnsupportedDatatype(f"{header_path}: dtype {header['dtype']!r}")
    dtype = np.dtype(header["dtype"]).newbyteorder("<")
    bin_path = bin_path_for(header_path)
    if not bin_path.exists():
        raise TruncatedData(f"missing payload file: {bin_path}")
    payload = bin_path.read_bytes()
    need = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(payload) != need:
        raise TruncatedData(f"{bin_path}: payload {len(payload)} bytes, need {need}")
    data = np.frombuffer(payload, dtype=dtype).reshape(dims)
    data = data.astype(data.dtype.newbyteorder("="))
    vol = VolumeTensor(
        data=data,
        spacing=tuple(float(s) for s in header["spacing"]),
        kind=header["kind"],
    )
    return vol.validate()


def normalize_minmax(vol: VolumeTensor) -> VolumeTensor:
    """Map values affinely to [0, 1]; constant volumes map to all zeros."""
    data = vol.data.astype(np.float64)
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        out = np.zeros(vol.dims, dtype=np.float32)
    else:
        out = ((data - lo) / (hi - lo)).astype(np.float32)
    return VolumeTensor(data=out, spacing=vol.spacing, kind="image")


def _source_coords(n_in: int, n_out: int) -> np.ndarray:
    """Continuous source coordinate of each output voxel center."""
    return (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def _linear_axis(data: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    n_in = data.shape[axis]
    src = np.clip(_source_coords(n_in, n_out), 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    lo = np.take(data, i0, axis=axis)
    hi = np.take(data, i1, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return lo * (1.0 - frac) + hi * frac


def resize_volume(vol: VolumeTensor, target: tuple[int, int, int], kind: str | None = None) -> VolumeTensor:
    """Resize to target (D, H, W) dims.

    Image kind interpolates trilinearly; mask kind samples the nearest
    source voxel so output values stay within the input value set. Spacing
    is rescaled so the physical extent along each axis is preserved.
    """
    kind = kind or vol.kind
    if len(target) != 3 or any(int(n) < 1 for n in target):
        raise EmptyTarget(f"target dims must be >= 1, got {target}")
    target = tuple(int(n) for n in target)
    spacing = tuple(
        float(vol.spacing[i]) * vol.dims[i] / target[i] for i in range(3)
    )
    if kind == "mask":
        idx = [_nearest_indices(vol.dims[i], target[i]) for i in range(3)]
        data = vol.data[np.ix_(idx[0], idx[1], idx[2])]
        return VolumeTensor(data=data.copy(), spacing=spacing, kind="mask")

    out = vol.data.astype(np.float64)
    for axis in range(3):
        out = _linear_axis(out, target[axis], axis)
    if vol.data.dtype == np.float32:
        data = out.astype(np.float32)
    else:
        data = np.rint(out).astype(vol.data.dtype)
    return VolumeTensor(data=data, spacing=spacing, kind="image")


def _load_any(path: Path) -> VolumeTensor:
    if path.suffix == ".json":
        return load_raw_container(path)
    return load_nifti(path)


def _as_mask(vol: VolumeTensor) -> VolumeTensor:
    data = (vol.data != 0).astype(np.uint8)
    return VolumeTensor(data=data, spacing=vol.spacing, kind="mask")


def load_mask_set(manifest_path) -> RegionMaskSet:
    """Load the mask set declared by a study manifest.

    The manifest is JSON: {"ct": path, "regions": {"1": path, ..., "6": path},
    "lesions": {name: path}, "organs": {name: path}} with paths relative to
    the manifest's directory. All six region entries are required; every
    mask is validated against the declared CT's dims and spacing.
    """
    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    require_keys(manifest, ("ct", "regions"), str(manifest_path))
    base = manifest_path.parent

    ct = _load_any(base / manifest["ct"])
    declared = manifest.get("regions", {})
    missing = [rid for rid in REGION_IDS if str(rid) not in declared]
    if missing:
        raise MissingRegion(f"{manifest_path}: manifest lacks regions {missing}")

    def load_one(rel, name):
        mask = _as_mask(_load_any(base / rel))
        if mask.dims != ct.dims:
            raise DimsMismatch(f"{name}: dims {mask.dims} != CT dims {ct.dims}")
        if not np.allclose(mask.spacing, ct.spacing, rtol=1e-5, atol=0.0):
            raise DimsMismatch(f"{name}: spacing {mask.spacing} != CT spacing {ct.spacing}")
        return mask

    regions = {rid: load_one(declared[str(rid)], f"region {rid}") for rid in REGION_IDS}
    lesions = {name: load_one(rel, f"lesion {name}") for name, rel in manifest.get("lesions", {}).items()}
    organs = {name: load_one(rel, f"organ {name}") for name, rel in manifest.get("organs", {}).items()}
    return RegionMaskSet(regions=regions, lesions=lesions, organs=organs).validate()


def load_study(manifest_path) -> tuple[VolumeTensor, RegionMaskSet]:
    """Load the CT volume and its mask set from one manifest."""
    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    require_keys(manifest, ("ct", "regions"), str(manifest_path))
    ct = _load_any(manifest_path.parent / manifest["ct"])
    return ct, load_mask_set(manifest_path)


def resize_mask_set(masks: RegionMaskSet, target: tuple[int, int, int]) -> RegionMaskSet:
    """Nearest-neighbor resize of every mask in the set."""
    return RegionMaskSet(
        regions={rid: resize_volume(m, target, kind="mask") for rid, m in masks.regions.items()},
        lesions={k: resize_volume(m, target, kind="mask") for k, m in masks.lesions.items()},
        organs={k: resize_volume(m, target, kind="mask") for k, m in masks.organs.items()},
    )
