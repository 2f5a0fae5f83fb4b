"""Deterministic patient attributes from binary masks.

Organ volumes, lesion counts, bounding-box diameters, and lesion
locations, computed with no learned parts so the same masks always yield
the same numbers. Connected components use 26-connectivity by default,
labeled in first-encounter raster order (depth-slowest) for determinism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaViolation
from .regions import REGION_IDS, UNSPECIFIED_LOCATION, region_from_prefix, region_name
from .volume_io import RegionMaskSet, VolumeTensor


@dataclass
class LesionStats:
    count: int
    diameters: list[float]
    location: str


@dataclass
class PatientAttributes:
    """Morphometrics rendered into the prompt as text.

    Diameters are millimeters unless units == "voxel" (the raw bbox-extent
    mode, kept for parity with voxel-based tooling).
    """

    organ_volumes: dict[str, float]
    lesion_stats: dict[str, LesionStats]
    spacing_mm: tuple[float, float, float]
    units: str = "mm"

    def validate(self) -> "PatientAttributes":
        for name, stats in self.lesion_stats.items():
            if stats.count != len(stats.diameters):
                raise SchemaViolation(f"lesion {name}: count != len(diameters)")
            if any(d <= 0 for d in stats.diameters):
                raise SchemaViolation(f"lesion {name}: nonpositive diameter")
        if any(v < 0 for v in self.organ_volumes.values()):
            raise SchemaViolation("negative organ volume")
        return self

    def to_json_dict(self) -> dict:
        diam_key = "diameters_mm" if self.units == "mm" else "diameters_voxels"
        out = {
            "organ_volumes_ml": {k: float(v) for k, v in self.organ_volumes.items()},
            "lesions": {
                name: {
                    "count": stats.count,
                    diam_key: [float(d) for d in stats.diameters],
                    "location": stats.location,
                }
                for name, stats in self.lesion_stats.items()
            },
            "spacing_mm": [float(s) for s in self.spacing_mm],
        }
        if self.units != "mm":
            out["units"] = self.units
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "PatientAttributes":
        units = obj.get("units", "mm")
        diam_key = "diameters_mm" if units == "mm" else "diameters_voxels"
        try:
            lesions = {
                name: LesionStats(
                    count=int(entry["count"]),
                    diameters=[float(d) for d in entry[diam_key]],
                    location=str(entry["location"]),
                )
                for name, entry in obj["lesions"].items()
            }
            attrs = cls(
                organ_volumes={k: float(v) for k, v in obj["organ_volumes_ml"].items()},
                lesion_stats=lesions,
                spacing_mm=tuple(float(s) for s in obj["spacing_mm"]),
                units=units,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"bad attributes object: {exc}") from exc
        return attrs.validate()


_OFFSETS_26 = np.array(
    [(dz, dy, dx) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dz, dy, dx) != (0, 0, 0)],
    dtype=np.int64,
)
_OFFSETS_6 = np.array(
    [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)],
    dtype=np.int64,
)


def _as_data(mask) -> np.ndarray:
    return mask.data if isinstance(mask, VolumeTensor) else np.asarray(mask)


def label_components_3d(mask, connectivity: int = 26) -> tuple[np.ndarray, int]:
    """Label connected components 1..n in first-encounter raster order.

    Returns (labels, n) with labels an int32 array of the mask's shape.
    """
    if connectivity not in (6, 26):
        raise SchemaViolation(f"connectivity must be 6 or 26, got {connectivity}")
    offsets = _OFFSETS_26 if connectivity == 26 else _OFFSETS_6
    data = _as_data(mask) != 0
    D, H, W = data.shape
    labels = np.zeros(data.shape, dtype=np.int32)
    labels_flat = labels.reshape(-1)
    data_flat = data.reshape(-1)

    scan = np.flatnonzero(data_flat)  # raster order, depth slowest
    n = 0
    for start in scan:
        if labels_flat[start]:
            continue
        n += 1
        labels_flat[start] = n
        z, rem = divmod(int(start), H * W)
        y, x = divmod(rem, W)
        fz = np.array([z], dtype=np.int64)
        fy = np.array([y], dtype=np.int64)
        fx = np.array([x], dtype=np.int64)
        while fz.size:
            cz = (fz[:, None] + offsets[:, 0][None, :]).reshape(-1)
            cy = (fy[:, None] + offsets[:, 1][None, :]).reshape(-1)
            cx = (fx[:, None] + offsets[:, 2][None, :]).reshape(-1)
            ok = (cz >= 0) & (cz < D) & (cy >= 0) & (cy < H) & (cx >= 0) & (cx < W)
            cz, cy, cx = cz[ok], cy[ok], cx[ok]
            flat = (cz * H + cy) * W + cx
            flat = np.unique(flat)
            flat = flat[data_flat[flat] & (labels_flat[flat] == 0)]
            if not flat.size:
                break
            labels_flat[flat] = n
            fz, rem = np.divmod(flat, H * W)
            fy, fx = np.divmod(rem, W)
    return labels, n


def count_mask(mask, connectivity: int = 26) -> int:
    """Number of connected components in a binary mask."""
    return label_components_3d(mask, connectivity)[1]


def _component_bboxes(labels: np.ndarray, n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-label (min, max) voxel index along each axis, label order."""
    coords = np.nonzero(labels)
    labs = labels[coords]
    mins = np.full((3, n + 1), np.iinfo(np.int64).max, dtype=np.int64)
    maxs = np.full((3, n + 1), -1, dtype=np.int64)
    for axis in range(3):
        np.minimum.at(mins[axis], labs, coords[axis])
        np.maximum.at(maxs[axis], labs, coords[axis])
    return [(mins[:, lab], maxs[:, lab]) for lab in range(1, n + 1)]


def get_diameters(
    mask,
    spacing: tuple[float, float, float],
    connectivity: int = 26,
    voxel_units: bool = False,
) -> list[float]:
    """Largest bbox side per component, ordered by component label.

    Extents use the half-open convention (max index + 1 - min index), so a
    single voxel has extent 1. Millimeter mode scales each axis by its
    spacing before taking the max; voxel mode reports the raw extent.
    """
    labels, n = label_components_3d(mask, connectivity)
    diameters = []
    for lo, hi in _component_bboxes(labels, n):
        extents = hi + 1 - lo
        if voxel_units:
            diameters.append(float(extents.max()))
        else:
            diameters.append(float(max(extents[a] * spacing[a] for a in range(3))))
    return diameters


def organ_volume(mask, spacing: tuple[float, float, float]) -> float:
    """Positive-voxel volume in milliliters."""
    count = int(np.count_nonzero(_as_data(mask)))
    voxel_mm3 = float(spacing[0]) * float(spacing[1]) * float(spacing[2])
    return count * voxel_mm3 / 1000.0


def lesion_location(lesion_name: str, lesion_mask, regions: RegionMaskSet) -> str:
    """Region name for a lesion: name prefix, then mask overlap, then
    "unspecified". Overlap ties break to the lower canonical region id."""
    rid = region_from_prefix(lesion_name)
    if rid is not None:
        return region_name(rid)
    data = _as_data(lesion_mask) != 0
    best_rid = None
    best_overlap = 0
    for cand in REGION_IDS:
        overlap = int(np.count_nonzero(data & (regions.regions[cand].data != 0)))
        if overlap > best_overlap:
            best_rid = cand
            best_overlap = overlap
    if best_rid is not None:
        return region_name(best_rid)
    return UNSPECIFIED_LOCATION


def extract_attributes(
    masks: RegionMaskSet,
    spacing: tuple[float, float, float] | None = None,
    connectivity: int = 26,
    voxel_units: bool = False,
) -> PatientAttributes:
    """Organ volumes plus per-lesion count/diameters/location."""
    masks.validate()
    if spacing is None:
        spacing = masks.regions[REGION_IDS[0]].spacing
    organ_volumes = {name: organ_volume(m, spacing) for name, m in masks.organs.items()}
    lesion_stats = {}
    for name, mask in masks.lesions.items():
        diameters = get_diameters(mask, spacing, connectivity, voxel_units)
        lesion_stats[name] = LesionStats(
            count=len(diameters),
            diameters=diameters,
            location=lesion_location(name, mask, masks),
        )
    return PatientAttributes(
        organ_volumes=organ_volumes,
        lesion_stats=lesion_stats,
        spacing_mm=tuple(float(s) for s in spacing),
        units="voxel" if voxel_units else "mm",
    ).validate()
