"""Per-slice visual feature extraction.

The pipeline is encoder-agnostic: any source of per-slice, multi-level
token grids works, as long as all levels share the slice count D, tokens
per slice T, and channel width C. Two sources are provided here: a
deterministic stub encoder (patch statistics plus sinusoidal position
channels) and a loader for feature containers exported from a real 2D
encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import atomic_write_bytes, bin_path_for, read_json, require_keys, write_json
from .errors import GridTooFine, LevelShapeMismatch, SchemaViolation, TruncatedData
from .gridding import window_bounds
from .volume_io import VolumeTensor

DEFAULT_GRID = (18, 18)
DEFAULT_CHANNELS = 64
DEFAULT_LEVEL_IDS = (3, 6, 9, 12)


@dataclass
class FeatureLevel:
    level_id: int
    grid: tuple[int, int]
    tokens: np.ndarray  # (D, T, C) float32


@dataclass
class SliceFeatureStack:
    levels: list[FeatureLevel]

    @property
    def D(self) -> int:
        return int(self.levels[0].tokens.shape[0])

    @property
    def T(self) -> int:
        return int(self.levels[0].tokens.shape[1])

    @property
    def C(self) -> int:
        return int(self.levels[0].tokens.shape[2])

    @property
    def level_ids(self) -> list[int]:
        return [lv.level_id for lv in self.levels]

    def level(self, level_id: int) -> FeatureLevel:
        for lv in self.levels:
            if lv.level_id == level_id:
                return lv
        raise KeyError(level_id)

    def validate(self) -> "SliceFeatureStack":
        if not self.levels:
            raise SchemaViolation("feature stack has no levels")
        shape = self.levels[0].tokens.shape
        for lv in self.levels:
            if lv.tokens.ndim != 3 or lv.tokens.shape != shape:
                raise LevelShapeMismatch(
                    f"level {lv.level_id}: shape {lv.tokens.shape} != {shape}"
                )
            gh, gw = lv.grid
            if gh < 1 or gw < 1:
                raise LevelShapeMismatch(f"level {lv.level_id}: bad grid {lv.grid}")
            if gh * gw != lv.tokens.shape[1]:
                raise LevelShapeMismatch(
                    f"level {lv.level_id}: grid {lv.grid} != T={lv.tokens.shape[1]}"
                )
        return self


def _positional_channels(n_extra: int, d: int, level_id: int, grid: tuple[int, int]) -> np.ndarray:
    """Fixed sinusoidal encodings of (slice, row, col, level) per token.

    Channel k cycles through the four coordinates; its frequency band is
    k // 4, alternating sin (even band) and cos (odd band). Returns
    (T, n_extra) float64.
    """
    gh, gw = grid
    rows, cols = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    coords = (
        np.full(gh * gw, float(d)),
        rows.reshape(-1).astype(np.float64),
        cols.reshape(-1).astype(np.float64),
        np.full(gh * gw, float(level_id)),
    )
    n_bands = max(1, (n_extra + 3) // 4)
    out = np.empty((gh * gw, n_extra), dtype=np.float64)
    for k in range(n_extra):
        pos = coords[k % 4]
        band = k // 4
        angle = pos / (10000.0 ** (band / n_bands))
        out[:, k] = np.sin(angle) if band % 2 == 0 else np.cos(angle)
    return out


def stub_encode_volume(
    vol: VolumeTensor,
    grid: tuple[int, int] = DEFAULT_GRID,
    C: int = DEFAULT_CHANNELS,
    level_ids: tuple[int, ...] = DEFAULT_LEVEL_IDS,
) -> SliceFeatureStack:
    """Deterministic stand-in for a pretrained 2D encoder.

    Token (i, j) of a slice summarizes the adaptive patch window (i, j) of
    that slice: channel 0 is the patch mean, channel 1 the patch standard
    deviation, and channels >= 2 are sinusoidal encodings of
    (slice, row, col, level_id). Same input, same output, bit for bit.
    """
    gh, gw = grid
    D, H, W = vol.dims
    if gh > H or gw > W:
        raise GridTooFine(f"grid {grid} exceeds slice size {(H, W)}")
    if C < 2:
        raise SchemaViolation(f"stub encoder needs C >= 2, got {C}")
    if not level_ids:
        raise SchemaViolation("need at least one level id")

    data = vol.data.astype(np.float64)
    row_windows = window_bounds(H, gh)
    col_windows = window_bounds(W, gw)
    means = np.empty((D, gh * gw), dtype=np.float64)
    stds = np.empty((D, gh * gw), dtype=np.float64)
    t = 0
    for r0, r1 in row_windows:
        for c0, c1 in col_windows:
            patch = data[:, r0:r1, c0:c1]
            means[:, t] = patch.mean(axis=(1, 2))
            stds[:, t] = patch.std(axis=(1, 2))
            t += 1

    levels = []
    for level_id in level_ids:
        tokens = np.zeros((D, gh * gw, C), dtype=np.float64)
        tokens[:, :, 0] = means
        tokens[:, :, 1] = stds
        if C > 2:
            for d in range(D):
                tokens[d, :, 2:] = _positional_channels(C - 2, d, level_id, grid)
        levels.append(FeatureLevel(level_id=int(level_id), grid=(gh, gw), tokens=tokens.astype(np.float32)))
    return SliceFeatureStack(levels=levels).validate()


def save_feature_stack(stack: SliceFeatureStack, header_path, slice_hw: tuple[int, int] | None = None) -> None:
    """Write the feature container: JSON header + concatenated level blobs."""
    stack.validate()
    header = {
        "D": stack.D,
        "T": stack.T,
        "C": stack.C,
        "levels": [{"id": lv.level_id, "grid": list(lv.grid)} for lv in stack.levels],
    }
    if slice_hw is not None:
        header["slice_hw"] = [int(slice_hw[0]), int(slice_hw[1])]
    write_json(header_path, header)
    blobs = [np.ascontiguousarray(lv.tokens, dtype="<f4").tobytes() for lv in stack.levels]
    atomic_write_bytes(bin_path_for(header_path), b"".join(blobs))


def load_precomputed_features(header_path) -> SliceFeatureStack:
    """Load a feature container and validate its level invariants."""
    header = read_json(header_path)
    require_keys(header, ("D", "T", "C", "levels"), str(header_path))
    D, T, C = header["D"], header["T"], header["C"]
    if not all(isinstance(n, int) and n >= 1 for n in (D, T, C)):
        raise SchemaViolation(f"{header_path}: D/T/C must be positive integers")
    entries = header["levels"]
    if not isinstance(entries, list) or not entries:
        raise SchemaViolation(f"{header_path}: levels must be a non-empty list")

    bin_path = bin_path_for(header_path)
    if not bin_path.exists():
        raise TruncatedData(f"missing payload file: {bin_path}")
    payload = bin_path.read_bytes()
    per_level = D * T * C * 4
    if len(payload) != per_level * len(entries):
        raise TruncatedData(
            f"{bin_path}: payload {len(payload)} bytes, need {per_level * len(entries)}"
        )

    levels = []
    for idx, entry in enumerate(entries):
        require_keys(entry, ("id", "grid"), f"{header_path} levels[{idx}]")
        grid = entry["grid"]
        if not (isinstance(grid, list) and len(grid) == 2):
            raise SchemaViolation(f"{header_path}: bad grid {grid!r}")
        gh, gw = int(grid[0]), int(grid[1])
        if gh * gw != T:
            raise LevelShapeMismatch(f"{header_path}: grid {gh}x{gw} != T={T}")
        blob = payload[idx * per_level : (idx + 1) * per_level]
        tokens = np.frombuffer(blob, dtype="<f4").reshape(D, T, C).astype(np.float32)
        levels.append(FeatureLevel(level_id=int(entry["id"]), grid=(gh, gw), tokens=tokens))
    return SliceFeatureStack(levels=levels).validate()
