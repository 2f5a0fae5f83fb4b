"""Adaptive-window arithmetic shared by the encoder, token pooling, and
mask-fraction computation.

Window i over an axis of length n_in split into n_out cells spans
[floor(i*n_in/n_out), ceil((i+1)*n_in/n_out)). Adjacent windows may overlap
by one element when n_out does not divide n_in; every element is covered.
"""

import math

from .errors import NonDivisibleFactor


def window_bounds(n_in: int, n_out: int) -> list[tuple[int, int]]:
    """Half-open [start, end) ranges of each adaptive window."""
    return [
        (math.floor(i * n_in / n_out), math.ceil((i + 1) * n_in / n_out))
        for i in range(n_out)
    ]


def output_grid_shape(grid: tuple[int, int], factor: int) -> tuple[int, int]:
    """Output grid (oh, ow) for pooling a (gh, gw) token grid by `factor`.

    oh*ow == gh*gw/factor, choosing the factor pair whose aspect ratio is
    closest to the input grid's; ties go to the smaller oh.
    """
    gh, gw = grid
    total = gh * gw
    if factor < 1 or total % factor != 0:
        raise NonDivisibleFactor(f"factor {factor} does not divide {gh}x{gw}={total} tokens")
    cells = total // factor
    target_ratio = gh / gw
    best = None
    for oh in range(1, cells + 1):
        if cells % oh:
            continue
        ow = cells // oh
        score = abs(oh / ow - target_ratio)
        if best is None or score < best[0] - 1e-12:
            best = (score, oh, ow)
    return best[1], best[2]
