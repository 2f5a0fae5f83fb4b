"""Shared builders for synthetic test inputs."""

from __future__ import annotations

import numpy as np

from ctregion.encoder import FeatureLevel, SliceFeatureStack
from ctregion.volume_io import RegionMaskSet, VolumeTensor


def make_mask(rng, dims, p=0.3, spacing=(1.0, 1.0, 1.0)) -> VolumeTensor:
    data = (rng.random(dims) < p).astype(np.uint8)
    return VolumeTensor(data=data, spacing=spacing, kind="mask")


def make_mask_set(rng, dims=(6, 8, 8), p=0.3, spacing=(1.0, 1.0, 1.0)) -> RegionMaskSet:
    regions = {rid: make_mask(rng, dims, p, spacing) for rid in range(1, 7)}
    return RegionMaskSet(regions=regions)


def make_stack(rng, D=4, grid=(3, 4), C=5, level_ids=(3, 6)) -> SliceFeatureStack:
    T = grid[0] * grid[1]
    levels = [
        FeatureLevel(
            level_id=lid,
            grid=grid,
            tokens=rng.standard_normal((D, T, C)).astype(np.float32),
        )
        for lid in level_ids
    ]
    return SliceFeatureStack(levels=levels).validate()


_WORDS = (
    "the a small large focal mild moderate nodule opacity effusion lung heart "
    "aorta spine liver airway normal unchanged scattered bilateral basilar "
    "apical calcified stable consolidation trace chronic patent intact clear"
).split()


# Sentence-final words must not look like initials or abbreviations, or
# the splitter will (correctly) refuse to break after them.
_FINAL_WORDS = tuple(w for w in _WORDS if len(w) > 1)


def random_sentence(rng, n_words=None) -> str:
    n = int(n_words if n_words is not None else rng.integers(3, 9))
    words = [str(_WORDS[int(rng.integers(0, len(_WORDS)))]) for _ in range(n - 1)]
    words.append(str(_FINAL_WORDS[int(rng.integers(0, len(_FINAL_WORDS)))]))
    return " ".join(words) + "."


def random_report(rng, n_sentences) -> tuple[str, list[int]]:
    sentences = [random_sentence(rng) for _ in range(n_sentences)]
    labels = [int(rng.integers(1, 7)) for _ in range(n_sentences)]
    return " ".join(sentences), labels
