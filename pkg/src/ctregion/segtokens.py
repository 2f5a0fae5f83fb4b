"""Mask-driven segmentation tokens.

Each region mask yields exactly two tokens: a mask token (mask-fraction
weighted mean of the pooled visual tokens across feature levels, then a
linear projection) and a spatial token (the mask occupancy downsampled to
a fixed 3D grid, flattened, then a linear projection). Empty masks still
produce both tokens, so every study presents the same 12-token layout and
positivity is carried by the token contents plus an explicit flag.

The projections ship untrained: deterministic pseudo-random matrices from
a fixed seed. Consumers with trained weights can load their own file.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import atomic_write_bytes, bin_path_for, read_json, require_keys, write_json
from .encoder import SliceFeatureStack
from .errors import DimsMismatch, LevelMismatch, SchemaViolation, TruncatedData
from .gridding import output_grid_shape, window_bounds
from .pooling import global_tokens, region_tokens
from .regions import REGION_IDS
from .volume_io import RegionMaskSet, VolumeTensor

DEFAULT_SPATIAL_GRID = (8, 16, 16)  # (gd, gh, gw), G = 2048
DEFAULT_WEIGHTS_SEED = 20240611


@dataclass
class ProjectionWeights:
    mask_matrix: np.ndarray  # (C, L*C) float32
    mask_bias: np.ndarray  # (C,) float32
    spatial_matrix: np.ndarray  # (C, G) float32
    spatial_bias: np.ndarray  # (C,) float32
    level_ids: tuple[int, ...]
    spatial_grid: tuple[int, int, int]
    seed: int

    @property
    def C(self) -> int:
        return int(self.mask_matrix.shape[0])

    @property
    def L(self) -> int:
        return len(self.level_ids)

    @property
    def G(self) -> int:
        gd, gh, gw = self.spatial_grid
        return gd * gh * gw

    def validate(self) -> "ProjectionWeights":
        C, L, G = self.C, self.L, self.G
        if self.mask_matrix.shape != (C, L * C):
            raise SchemaViolation(f"mask_matrix shape {self.mask_matrix.shape} != {(C, L * C)}")
        if self.mask_bias.shape != (C,):
            raise SchemaViolation(f"mask_bias shape {self.mask_bias.shape} != {(C,)}")
        if self.spatial_matrix.shape != (C, G):
            raise SchemaViolation(f"spatial_matrix shape {self.spatial_matrix.shape} != {(C, G)}")
        if self.spatial_bias.shape != (C,):
            raise SchemaViolation(f"spatial_bias shape {self.spatial_bias.shape} != {(C,)}")
        return self


@dataclass
class SegTokenEntry:
    region_id: int
    mask_token: np.ndarray  # (C,) float32
    spatial_token: np.ndarray  # (C,) float32
    positive: bool


@dataclass
class SegmentationTokenSet:
    """Six entries in canonical region order, two tokens each."""

    entries: list[SegTokenEntry]
    study: str | None = None

    def validate(self) -> "SegmentationTokenSet":
        if [e.region_id for e in self.entries] != list(REGION_IDS):
            raise SchemaViolation("segmentation tokens must cover regions 1..6 in order")
        return self

    @property
    def token_count(self) -> int:
        return 2 * len(self.entries)


def make_projection_weights(
    C: int,
    level_ids: tuple[int, ...],
    spatial_grid: tuple[int, int, int] = DEFAULT_SPATIAL_GRID,
    seed: int = DEFAULT_WEIGHTS_SEED,
) -> ProjectionWeights:
    """Deterministic untrained projections from a fixed seed."""
    L = len(level_ids)
    gd, gh, gw = spatial_grid
    G = gd * gh * gw
    rng = np.random.default_rng(seed)
    mask_matrix = (rng.standard_normal((C, L * C)) / np.sqrt(L * C)).astype(np.float32)
    mask_bias = (rng.standard_normal(C) * 0.01).astype(np.float32)
    spatial_matrix = (rng.standard_normal((C, G)) / np.sqrt(G)).astype(np.float32)
    spatial_bias = (rng.standard_normal(C) * 0.01).astype(np.float32)
    return ProjectionWeights(
        mask_matrix=mask_matrix,
        mask_bias=mask_bias,
        spatial_matrix=spatial_matrix,
        spatial_bias=spatial_bias,
        level_ids=tuple(int(i) for i in level_ids),
        spatial_grid=(gd, gh, gw),
        seed=int(seed),
    ).validate()


def save_projection_weights(weights: ProjectionWeights, header_path) -> None:
    weights.validate()
    write_json(
        header_path,
        {
            "C": weights.C,
            "G": weights.G,
            "L": weights.L,
            "level_ids": list(weights.level_ids),
            "spatial_grid": list(weights.spatial_grid),
            "seed": weights.seed,
        },
    )
    blobs = [
        np.ascontiguousarray(arr, dtype="<f4").tobytes()
        for arr in (weights.mask_matrix, weights.mask_bias, weights.spatial_matrix, weights.spatial_bias)
    ]
    atomic_write_bytes(bin_path_for(header_path), b"".join(blobs))


def load_projection_weights(header_path) -> ProjectionWeights:
    header = read_json(header_path)
    require_keys(header, ("C", "G", "L", "level_ids", "spatial_grid", "seed"), str(header_path))
    C, G, L = header["C"], header["G"], header["L"]
    bin_path = bin_path_for(header_path)
    if not bin_path.exists():
        raise TruncatedData(f"missing payload file: {bin_path}")
    payload = bin_path.read_bytes()
    sizes = [C * L * C, C, C * G, C]
    if len(payload) != 4 * sum(sizes):
        raise TruncatedData(f"{bin_path}: payload {len(payload)} bytes, need {4 * sum(sizes)}")
    arrays = []
    offset = 0
    for size in sizes:
        arrays.append(np.frombuffer(payload, dtype="<f4", count=size, offset=offset).astype(np.float32))
        offset += 4 * size
    return ProjectionWeights(
        mask_matrix=arrays[0].reshape(C, L * C),
        mask_bias=arrays[1],
        spatial_matrix=arrays[2].reshape(C, G),
        spatial_bias=arrays[3],
        level_ids=tuple(int(i) for i in header["level_ids"]),
        spatial_grid=tuple(int(n) for n in header["spatial_grid"]),
        seed=int(header["seed"]),
    ).validate()


def pool_mask_fractions(
    mask: VolumeTensor,
    grids: list[tuple[int, int]],
    selection: list[tuple[int, int]],
    ct_dims: tuple[int, int, int] | None = None,
) -> list[np.ndarray]:
    """Per-level mask coverage of each pooled visual token's image area.

    For every level a (D+T)-vector in [0, 1]: global entry d is the
    positive fraction of slice d; region entries are the positive fraction
    of each pooled window's image rectangle on the selected slice, using
    the same adaptive windowing as the token pooling itself.
    """
    if ct_dims is not None and mask.dims != tuple(ct_dims):
        raise DimsMismatch(f"mask dims {mask.dims} != CT dims {tuple(ct_dims)}")
    D, H, W = mask.dims
    s = len(selection)
    data = mask.data.astype(np.float64)
    slice_fraction = data.reshape(D, -1).mean(axis=1)

    out = []
    for gh, gw in grids:
        fractions = np.empty(D + (gh * gw if s else 0), dtype=np.float64)
        fractions[:D] = slice_fraction
        if s:
            oh, ow = output_grid_shape((gh, gw), s)
            patch_rows = window_bounds(H, gh)
            patch_cols = window_bounds(W, gw)
            token_rows = window_bounds(gh, oh)
            token_cols = window_bounds(gw, ow)
            k = D
            for _, slice_idx in selection:
                plane = data[slice_idx]
                for tr0, tr1 in token_rows:
                    r0, r1 = patch_rows[tr0][0], patch_rows[tr1 - 1][1]
                    for tc0, tc1 in token_cols:
                        c0, c1 = patch_cols[tc0][0], patch_cols[tc1 - 1][1]
                        window = plane[r0:r1, c0:c1]
                        fractions[k] = window.sum() / window.size
                        k += 1
        out.append(fractions)
    return out


def weighted_token_mean(tokens: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    """Fraction-weighted mean of token rows; all-zero weights give zeros."""
    if tokens.shape[0] != fractions.shape[0]:
        raise LevelMismatch(f"{tokens.shape[0]} tokens vs {fractions.shape[0]} fractions")
    weights = fractions.astype(np.float64)
    denom = weights.sum()
    if denom == 0.0:
        return np.zeros(tokens.shape[1], dtype=np.float64)
    return (weights[:, np.newaxis] * tokens.astype(np.float64)).sum(axis=0) / denom


def level_token_sequence(
    features: SliceFeatureStack,
    selection: list[tuple[int, int]],
    level_id: int,
) -> np.ndarray:
    """The pooled D+T token sequence at one feature level."""
    glob = global_tokens(features, level_id)
    reg = region_tokens(features, selection, level_id)
    return np.concatenate([glob, reg], axis=0)


def mask_token(
    features: SliceFeatureStack,
    fractions: list[np.ndarray],
    weights: ProjectionWeights,
    selection: list[tuple[int, int]],
) -> np.ndarray:
    """Project the per-level mask-weighted token means to one C-vector."""
    if len(fractions) != weights.L:
        raise LevelMismatch(f"{len(fractions)} fraction levels vs L={weights.L}")
    pooled = []
    for level_id, frac in zip(weights.level_ids, fractions):
        tokens = level_token_sequence(features, selection, level_id)
        pooled.append(weighted_token_mean(tokens, frac))
    stacked = np.concatenate(pooled)
    out = weights.mask_matrix.astype(np.float64) @ stacked + weights.mask_bias.astype(np.float64)
    return out.astype(np.float32)


def downsample_mask_grid(mask: VolumeTensor, grid: tuple[int, int, int]) -> np.ndarray:
    """Occupancy of each adaptive 3D window, thresholded at one half."""
    gd, gh, gw = grid
    data = mask.data.astype(np.float64)
    out = np.empty((gd, gh, gw), dtype=np.float32)
    z_w = window_bounds(mask.dims[0], gd)
    r_w = window_bounds(mask.dims[1], gh)
    c_w = window_bounds(mask.dims[2], gw)
    for zi, (z0, z1) in enumerate(z_w):
        for ri, (r0, r1) in enumerate(r_w):
            for ci, (c0, c1) in enumerate(c_w):
                out[zi, ri, ci] = 1.0 if data[z0:z1, r0:r1, c0:c1].mean() >= 0.5 else 0.0
    return out


def spatial_token(mask: VolumeTensor, weights: ProjectionWeights) -> np.ndarray:
    """Project the flattened downsampled mask occupancy to one C-vector."""
    flat = downsample_mask_grid(mask, weights.spatial_grid).reshape(-1).astype(np.float64)
    out = weights.spatial_matrix.astype(np.float64) @ flat + weights.spatial_bias.astype(np.float64)
    return out.astype(np.float32)


def segmentation_tokens(
    masks: RegionMaskSet,
    features: SliceFeatureStack,
    selection: list[tuple[int, int]],
    weights: ProjectionWeights,
    study: str | None = None,
) -> SegmentationTokenSet:
    """Two tokens per canonical region; empty masks keep their slots."""
    masks.validate()
    grids = [features.level(lid).grid for lid in weights.level_ids]
    entries = []
    for rid in REGION_IDS:
        mask = masks.regions[rid]
        fractions = pool_mask_fractions(mask, grids, selection)
        entries.append(
            SegTokenEntry(
                region_id=rid,
                mask_token=mask_token(features, fractions, weights, selection),
                spatial_token=spatial_token(mask, weights),
                positive=bool(mask.data.any()),
            )
        )
    return SegmentationTokenSet(entries=entries, study=study).validate()


def save_segmentation_tokens(segtoks: SegmentationTokenSet, header_path) -> None:
    segtoks.validate()
    C = int(segtoks.entries[0].mask_token.shape[0])
    write_json(
        header_path,
        {
            "C": C,
            "study": segtoks.study,
            "entries": [
                {"region_id": e.region_id, "positive": e.positive} for e in segtoks.entries
            ],
        },
    )
    blobs = []
    for e in segtoks.entries:
        blobs.append(np.ascontiguousarray(e.mask_token, dtype="<f4").tobytes())
        blobs.append(np.ascontiguousarray(e.spatial_token, dtype="<f4").tobytes())
    atomic_write_bytes(bin_path_for(header_path), b"".join(blobs))


def load_segmentation_tokens(header_path) -> SegmentationTokenSet:
    header = read_json(header_path)
    require_keys(header, ("C", "entries"), str(header_path))
    C = int(header["C"])
    entries_meta = header["entries"]
    bin_path = bin_path_for(header_path)
    if not bin_path.exists():
        raise TruncatedData(f"missing payload file: {bin_path}")
    payload = bin_path.read_bytes()
    need = len(entries_meta) * 2 * C * 4
    if len(payload) != need:
        raise TruncatedData(f"{bin_path}: payload {len(payload)} bytes, need {need}")
    entries = []
    offset = 0
    for meta in entries_meta:
        mask_tok = np.frombuffer(payload, dtype="<f4", count=C, offset=offset).astype(np.float32)
        offset += 4 * C
        spatial_tok = np.frombuffer(payload, dtype="<f4", count=C, offset=offset).astype(np.float32)
        offset += 4 * C
        entries.append(
            SegTokenEntry(
                region_id=int(meta["region_id"]),
                mask_token=mask_tok,
                spatial_token=spatial_tok,
                positive=bool(meta["positive"]),
            )
        )
    return SegmentationTokenSet(entries=entries, study=header.get("study")).validate()
