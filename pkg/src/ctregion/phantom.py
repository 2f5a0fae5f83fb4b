"""Deterministic synthetic chest study for demos and tests.

The phantom is a small CT-like volume with six disjoint region masks,
a few organ masks, and two lesion masks, all generated from closed-form
geometry plus seeded noise. Identical (dims, spacing, seed) inputs
produce identical bytes on disk, which the end-to-end determinism checks
rely on.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .container import write_json
from .volume_io import RegionMaskSet, VolumeTensor, save_raw_container

DEFAULT_DIMS = (24, 36, 36)
DEFAULT_SPACING = (2.0, 1.0, 1.0)


def _coords(dims):
    # normalized voxel-center coordinates in [0, 1)
    z = (np.arange(dims[0], dtype=np.float64) + 0.5) / dims[0]
    y = (np.arange(dims[1], dtype=np.float64) + 0.5) / dims[1]
    x = (np.arange(dims[2], dtype=np.float64) + 0.5) / dims[2]
    return np.meshgrid(z, y, x, indexing="ij")


def _ellipsoid(zz, yy, xx, center, radii):
    cz, cy, cx = center
    rz, ry, rx = radii
    d = ((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    return d <= 1.0


def _box(zz, yy, xx, z_rng, y_rng, x_rng):
    return (
        (zz >= z_rng[0]) & (zz < z_rng[1])
        & (yy >= y_rng[0]) & (yy < y_rng[1])
        & (xx >= x_rng[0]) & (xx < x_rng[1])
    )


def build_phantom(
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    spacing: tuple[float, float, float] = DEFAULT_SPACING,
    seed: int = 0,
) -> tuple[VolumeTensor, RegionMaskSet]:
    """Construct the phantom CT and mask set in memory.

    Regions are made pairwise disjoint by carving in a fixed priority
    order; each region is guaranteed nonempty for dims of (12, 24, 24)
    and up.
    """
    dims = tuple(int(n) for n in dims)
    if min(dims) < 12 or dims[1] < 24 or dims[2] < 24:
        raise ValueError(f"phantom needs dims >= (12, 24, 24), got {dims}")
    zz, yy, xx = _coords(dims)

    body = ((yy - 0.5) / 0.46) ** 2 + ((xx - 0.5) / 0.48) ** 2 <= 1.0
    ellipse_r = ((yy - 0.5) / 0.46) ** 2 + ((xx - 0.5) / 0.48) ** 2

    lung_l = _ellipsoid(zz, yy, xx, (0.42, 0.46, 0.30), (0.30, 0.24, 0.15))
    lung_r = _ellipsoid(zz, yy, xx, (0.42, 0.46, 0.70), (0.30, 0.24, 0.15))
    lungs = lung_l | lung_r
    airways = (((yy - 0.44) / 0.05) ** 2 + ((xx - 0.5) / 0.05) ** 2 <= 1.0) & (zz >= 0.06) & (zz < 0.55)
    heart = _ellipsoid(zz, yy, xx, (0.46, 0.54, 0.52), (0.15, 0.15, 0.16))
    mediastinum = _box(zz, yy, xx, (0.08, 0.64), (0.28, 0.64), (0.40, 0.60))
    spine = _box(zz, yy, xx, (0.0, 1.0), (0.68, 0.84), (0.42, 0.58))
    ribs = body & (ellipse_r >= 0.80) & (np.floor(zz * dims[0]).astype(int) % 3 == 0)
    osseous = spine | ribs
    abdomen = body & (zz >= 0.74)

    # region priority: airways > heart > lungs > osseous > mediastinum > abdomen
    claimed = np.zeros(dims, dtype=bool)
    regions_bool: dict[int, np.ndarray] = {}
    for rid, field in ((2, airways), (4, heart), (1, lungs), (5, osseous), (3, mediastinum), (6, abdomen)):
        regions_bool[rid] = field & ~claimed
        claimed |= regions_bool[rid]
    for rid in sorted(regions_bool):
        if not regions_bool[rid].any():
            raise AssertionError(f"phantom geometry left region {rid} empty at dims {dims}")

    nodule_a = _ellipsoid(zz, yy, xx, (0.38, 0.42, 0.28), (0.06, 0.05, 0.05))
    nodule_b = _ellipsoid(zz, yy, xx, (0.52, 0.50, 0.72), (0.07, 0.06, 0.06))
    nodules = (nodule_a | nodule_b) & lungs
    liver = _ellipsoid(zz, yy, xx, (0.86, 0.48, 0.38), (0.11, 0.17, 0.19)) & body
    kidney = _ellipsoid(zz, yy, xx, (0.88, 0.62, 0.64), (0.08, 0.08, 0.08)) & body
    cyst = _ellipsoid(zz, yy, xx, (0.86, 0.48, 0.40), (0.05, 0.05, 0.05)) & liver

    rng = np.random.default_rng(seed)
    ct = np.full(dims, -1000.0)
    ct[body] = 40.0
    ct[regions_bool[1]] = -850.0
    ct[regions_bool[2]] = -950.0
    ct[regions_bool[3]] = 30.0
    ct[regions_bool[4]] = 55.0
    ct[regions_bool[5]] = 700.0
    ct[liver] = 80.0
    ct[kidney] = 45.0
    ct[nodules] += 130.0
    ct[cyst] = 15.0
    ct += zz * 20.0
    noise = rng.integers(-15, 16, size=dims).astype(np.float64)
    ct[body] += noise[body]
    ct_vol = VolumeTensor(data=np.rint(ct).astype(np.int16), spacing=spacing, kind="image")

    def as_mask(field: np.ndarray) -> VolumeTensor:
        return VolumeTensor(data=field.astype(np.uint8), spacing=spacing, kind="mask")

    masks = RegionMaskSet(
        regions={rid: as_mask(regions_bool[rid]) for rid in sorted(regions_bool)},
        lesions={"nodule": as_mask(nodules), "cyst": as_mask(cyst)},
        organs={"lung": as_mask(lungs), "heart": as_mask(heart), "liver": as_mask(liver), "kidney": as_mask(kidney)},
    )
    return ct_vol.validate(), masks.validate()


def write_phantom(
    out_dir,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    spacing: tuple[float, float, float] = DEFAULT_SPACING,
    seed: int = 0,
    study: str | None = None,
) -> Path:
    """Write the phantom study as raw containers plus a manifest.

    Returns the manifest path. File layout: ct.json/.bin, region_<i>.json,
    lesion_<name>.json, organ_<name>.json, manifest.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ct, masks = build_phantom(dims, spacing, seed)
    study = study or f"phantom-{seed:04d}"

    save_raw_container(ct, out_dir / "ct.json")
    manifest: dict = {"ct": "ct.json", "regions": {}, "lesions": {}, "organs": {}, "study": study}
    for rid, mask in masks.regions.items():
        name = f"region_{rid}.json"
        save_raw_container(mask, out_dir / name)
        manifest["regions"][str(rid)] = name
    for label, mask in masks.lesions.items():
        name = f"lesion_{label}.json"
        save_raw_container(mask, out_dir / name)
        manifest["lesions"][label] = name
    for label, mask in masks.organs.items():
        name = f"organ_{label}.json"
        save_raw_container(mask, out_dir / name)
        manifest["organs"][label] = name

    manifest_path = out_dir / "manifest.json"
    write_json(manifest_path, manifest)
    return manifest_path


def phantom_report(seed: int = 0) -> str:
    """A plausible narrative report matching the phantom's findings."""
    return (
        "Two solid pulmonary nodules are seen in the lungs. "
        "No pleural effusion or pneumothorax. "
        "The trachea and main bronchi are patent. "
        "No mediastinal lymphadenopathy. "
        "Heart size is normal and the thoracic aorta is unremarkable. "
        "Degenerative changes of the thoracic spine without fracture. "
        "A small hepatic cyst is noted in the visualized upper abdomen."
    )
