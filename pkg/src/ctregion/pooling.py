"""Global + region-representative token pooling.

A slice-wise encoder yields D*T tokens per volume. Pooling reduces that to
D+T: one mean token per slice (depth coverage) plus, for each of the six
regions, the most mask-populated slice downsampled by the region count
(spatial detail). Both blocks concatenate into a single token sequence
with per-token provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_json, require_keys, write_json
from .encoder import FeatureLevel, SliceFeatureStack, load_precomputed_features, save_feature_stack
from .errors import ChannelMismatch, NonDivisibleFactor, SchemaViolation, UnknownLevel
from .gridding import output_grid_shape, window_bounds
from .regions import REGION_IDS
from .volume_io import RegionMaskSet


@dataclass
class TokenSequence:
    """Assembled visual tokens: D global rows then T region rows.

    `layout` carries one provenance record per token:
    {"kind": "global"|"region", "slice": int, "region": int|None}.
    """

    global_block: np.ndarray  # (D, C) float32
    region_block: np.ndarray  # (T, C) float32
    selected_slices: list[tuple[int, int]]  # (region_id, slice_index)
    layout: list[dict] = field(default_factory=list)
    study: str | None = None

    @property
    def count(self) -> int:
        return int(self.global_block.shape[0] + self.region_block.shape[0])

    def tokens(self) -> np.ndarray:
        return np.concatenate([self.global_block, self.region_block], axis=0)


def global_tokens(features: SliceFeatureStack, level_id: int) -> np.ndarray:
    """One token per slice: the mean over that slice's T tokens."""
    try:
        level = features.level(level_id)
    except KeyError:
        raise UnknownLevel(f"no feature level {level_id}; have {features.level_ids}")
    return level.tokens.astype(np.float64).mean(axis=1).astype(np.float32)


def select_region_slices(masks: RegionMaskSet) -> list[tuple[int, int]]:
    """Pick the most informative slice per region, in canonical order.

    The slice with the highest positive-voxel count wins; ties break to
    the lowest index, and a fully empty mask falls back to the middle
    slice floor(D/2).
    """
    masks.validate()
    selection = []
    for rid in REGION_IDS:
        mask = masks.regions[rid]
        D = mask.dims[0]
        counts = mask.data.reshape(D, -1).sum(axis=1, dtype=np.int64)
        if counts.max() == 0:
            idx = D // 2
        else:
            idx = int(np.argmax(counts))  # argmax returns the first maximum
        selection.append((rid, idx))
    return selection


def adaptive_pool_slice(tokens: np.ndarray, grid: tuple[int, int], factor: int) -> np.ndarray:
    """Adaptive average pooling of one slice's (T, C) tokens by `factor`.

    The (gh, gw) token grid is pooled to the (oh, ow) output grid chosen
    by output_grid_shape; each output token is the mean of its adaptive
    window. factor == 1 is the identity.
    """
    gh, gw = grid
    T, C = tokens.shape
    if gh * gw != T:
        raise SchemaViolation(f"grid {grid} does not tile {T} tokens")
    if factor < 1 or T % factor != 0:
        raise NonDivisibleFactor(f"factor {factor} does not divide T={T}")
    oh, ow = output_grid_shape(grid, factor)
    cells = tokens.astype(np.float64).reshape(gh, gw, C)
    row_windows = window_bounds(gh, oh)
    col_windows = window_bounds(gw, ow)
    out = np.empty((oh * ow, C), dtype=np.float64)
    k = 0
    for r0, r1 in row_windows:
        for c0, c1 in col_windows:
            out[k] = cells[r0:r1, c0:c1].mean(axis=(0, 1))
            k += 1
    return out.astype(np.float32)


def region_tokens(
    features: SliceFeatureStack,
    selected: list[tuple[int, int]],
    level_id: int,
) -> np.ndarray:
    """Pool each selected slice by the selection count and concatenate.

    With s selected slices each contributes T/s tokens, so the result has
    exactly T rows, ordered by the (canonical) selection order.
    """
    try:
        level = features.level(level_id)
    except KeyError:
        raise UnknownLevel(f"no feature level {level_id}; have {features.level_ids}")
    s = len(selected)
    if s == 0:
        return np.zeros((0, features.C), dtype=np.float32)
    blocks = [
        adaptive_pool_slice(level.tokens[slice_idx], level.grid, s)
        for _, slice_idx in selected
    ]
    return np.concatenate(blocks, axis=0)


def assemble_visual_tokens(
    glob: np.ndarray,
    reg: np.ndarray,
    selection: list[tuple[int, int]],
    study: str | None = None,
) -> TokenSequence:
    """Concatenate the global block and region block into a TokenSequence."""
    if reg.size and glob.shape[1] != reg.shape[1]:
        raise ChannelMismatch(f"global C={glob.shape[1]} != region C={reg.shape[1]}")
    layout = [
        {"kind": "global", "slice": d, "region": None}
        for d in range(glob.shape[0])
    ]
    if selection:
        per_slice = reg.shape[0] // len(selection)
        for rid, slice_idx in selection:
            layout.extend(
                {"kind": "region", "slice": int(slice_idx), "region": int(rid)}
                for _ in range(per_slice)
            )
    return TokenSequence(
        global_block=np.asarray(glob, dtype=np.float32),
        region_block=np.asarray(reg, dtype=np.float32),
        selected_slices=[(int(r), int(i)) for r, i in selection],
        layout=layout,
        study=study,
    )


def build_token_sequence(
    features: SliceFeatureStack,
    masks: RegionMaskSet,
    level_id: int | None = None,
    study: str | None = None,
) -> TokenSequence:
    """Full pooling pass: slice selection, both blocks, assembly.

    Pooling reads the final feature level by default; earlier levels are
    reserved for the mask extractor.
    """
    if level_id is None:
        level_id = features.level_ids[-1]
    selection = select_region_slices(masks)
    glob = global_tokens(features, level_id)
    reg = region_tokens(features, selection, level_id)
    return assemble_visual_tokens(glob, reg, selection, study=study)


def save_token_sequence(seq: TokenSequence, header_path) -> None:
    """Serialize as a one-slice feature container plus a layout sidecar."""
    tokens = seq.tokens()[np.newaxis, :, :]  # (1, D+T, C)
    stack = SliceFeatureStack(
        levels=[FeatureLevel(level_id=-1, grid=(1, tokens.shape[1]), tokens=tokens.astype(np.float32))]
    )
    save_feature_stack(stack, header_path)
    layout_path = _layout_path(header_path)
    write_json(
        layout_path,
        {
            "global_count": int(seq.global_block.shape[0]),
            "region_count": int(seq.region_block.shape[0]),
            "selected_slices": [[int(r), int(i)] for r, i in seq.selected_slices],
            "layout": seq.layout,
            "study": seq.study,
        },
    )


def load_token_sequence(header_path) -> TokenSequence:
    stack = load_precomputed_features(header_path)
    sidecar = read_json(_layout_path(header_path))
    require_keys(sidecar, ("global_count", "region_count", "selected_slices", "layout"), str(header_path))
    tokens = stack.levels[0].tokens[0]
    n_glob = sidecar["global_count"]
    n_reg = sidecar["region_count"]
    if n_glob + n_reg != tokens.shape[0]:
        raise SchemaViolation(f"{header_path}: layout counts do not match token rows")
    return TokenSequence(
        global_block=tokens[:n_glob],
        region_block=tokens[n_glob:],
        selected_slices=[(int(r), int(i)) for r, i in sidecar["selected_slices"]],
        layout=sidecar["layout"],
        study=sidecar.get("study"),
    )


def _layout_path(header_path):
    from pathlib import Path

    p = Path(header_path)
    return p.with_name(p.stem + ".layout.json")
