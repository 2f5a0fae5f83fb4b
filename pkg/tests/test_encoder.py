import numpy as np
import pytest

from ctregion.container import bin_path_for
from ctregion.encoder import (
    FeatureLevel,
    SliceFeatureStack,
    load_precomputed_features,
    save_feature_stack,
    stub_encode_volume,
)
from ctregion.errors import (
    GridTooFine,
    LevelShapeMismatch,
    NonDivisibleFactor,
    TruncatedData,
)
from ctregion.gridding import output_grid_shape, window_bounds
from ctregion.volume_io import VolumeTensor

from helpers import make_stack
from oracles import oracle_output_grid, oracle_windows


class TestWindows:
    @pytest.mark.parametrize("n_in", range(1, 20))
    @pytest.mark.parametrize("n_out", range(1, 12))
    def test_matches_oracle(self, n_in, n_out):
        assert window_bounds(n_in, n_out) == oracle_windows(n_in, n_out)

    @pytest.mark.parametrize("n_in,n_out", [(7, 3), (10, 4), (5, 5), (3, 7)])
    def test_covers_axis(self, n_in, n_out):
        bounds = window_bounds(n_in, n_out)
        assert bounds[0][0] == 0
        assert bounds[-1][1] == n_in
        covered = set()
        for start, end in bounds:
            assert end > start  # windows are never empty
            covered.update(range(start, end))
        assert covered == set(range(n_in))


class TestOutputGrid:
    def test_square_grid_by_six(self):
        assert output_grid_shape((18, 18), 6) == (6, 9)

    def test_identity_factor(self):
        assert output_grid_shape((18, 18), 1) == (18, 18)

    def test_small_square(self):
        assert output_grid_shape((4, 4), 2) == (2, 4)

    def test_full_collapse(self):
        assert output_grid_shape((4, 4), 16) == (1, 1)

    def test_non_divisor_rejected(self):
        with pytest.raises(NonDivisibleFactor):
            output_grid_shape((3, 3), 2)

    def test_matches_oracle_randomly(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            gh = int(rng.integers(1, 13))
            gw = int(rng.integers(1, 13))
            total = gh * gw
            divisors = [f for f in range(1, total + 1) if total % f == 0]
            factor = int(divisors[int(rng.integers(0, len(divisors)))])
            assert output_grid_shape((gh, gw), factor) == oracle_output_grid(gh, gw, factor)


class TestStubEncoder:
    def _volume(self, rng, dims=(3, 10, 12)):
        data = rng.standard_normal(dims).astype(np.float32)
        return VolumeTensor(data=data, spacing=(1, 1, 1))

    def test_patch_statistics_channels(self):
        rng = np.random.default_rng(14)
        vol = self._volume(rng)
        grid = (4, 3)
        stack = stub_encode_volume(vol, grid=grid, C=4, level_ids=(3,))
        tokens = stack.level(3).tokens
        rows = oracle_windows(vol.dims[1], grid[0])
        cols = oracle_windows(vol.dims[2], grid[1])
        data = vol.data.astype(np.float64)
        for d in range(vol.dims[0]):
            t = 0
            for r0, r1 in rows:
                for c0, c1 in cols:
                    patch = data[d, r0:r1, c0:c1]
                    assert tokens[d, t, 0] == pytest.approx(patch.mean(), abs=1e-6)
                    assert tokens[d, t, 1] == pytest.approx(patch.std(), abs=1e-6)
                    t += 1

    def test_positional_channels_bounded_and_level_dependent(self):
        rng = np.random.default_rng(15)
        vol = self._volume(rng)
        stack = stub_encode_volume(vol, grid=(2, 2), C=8, level_ids=(3, 6))
        a = stack.level(3).tokens[:, :, 2:]
        b = stack.level(6).tokens[:, :, 2:]
        assert np.abs(a).max() <= 1.0 + 1e-6
        assert not np.array_equal(a, b)  # level id feeds the encoding

    def test_statistics_shared_across_levels(self):
        rng = np.random.default_rng(16)
        vol = self._volume(rng)
        stack = stub_encode_volume(vol, grid=(3, 3), C=4, level_ids=(3, 6, 9))
        base = stack.level(3).tokens[:, :, :2]
        for lid in (6, 9):
            np.testing.assert_array_equal(stack.level(lid).tokens[:, :, :2], base)

    def test_deterministic(self):
        rng = np.random.default_rng(17)
        vol = self._volume(rng)
        a = stub_encode_volume(vol, grid=(3, 4), C=6, level_ids=(3, 6))
        b = stub_encode_volume(vol, grid=(3, 4), C=6, level_ids=(3, 6))
        for la, lb in zip(a.levels, b.levels):
            np.testing.assert_array_equal(la.tokens, lb.tokens)

    def test_grid_too_fine(self):
        vol = VolumeTensor(data=np.zeros((2, 4, 4), dtype=np.float32), spacing=(1, 1, 1))
        with pytest.raises(GridTooFine):
            stub_encode_volume(vol, grid=(5, 4), C=4, level_ids=(3,))

    def test_default_grid_gives_324_tokens(self, phantom32):
        ct, _ = phantom32
        stack = stub_encode_volume(ct, C=4, level_ids=(12,))
        assert stack.T == 324
        assert stack.D == 32


class TestFeatureContainer:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(18)
        stack = make_stack(rng, D=3, grid=(2, 3), C=4, level_ids=(3, 6))
        path = tmp_path / "features.json"
        save_feature_stack(stack, path, slice_hw=(10, 12))
        loaded = load_precomputed_features(path)
        assert loaded.level_ids == [3, 6]
        for la, lb in zip(stack.levels, loaded.levels):
            assert la.grid == lb.grid
            np.testing.assert_array_equal(la.tokens, lb.tokens)

    def test_truncated_payload(self, tmp_path):
        rng = np.random.default_rng(19)
        stack = make_stack(rng)
        path = tmp_path / "features.json"
        save_feature_stack(stack, path)
        bin_path = bin_path_for(path)
        bin_path.write_bytes(bin_path.read_bytes()[:-4])
        with pytest.raises(TruncatedData):
            load_precomputed_features(path)

    def test_grid_product_must_match(self, tmp_path):
        rng = np.random.default_rng(20)
        stack = make_stack(rng, grid=(3, 4))
        path = tmp_path / "features.json"
        save_feature_stack(stack, path)
        import json

        header = json.loads(path.read_text())
        header["levels"][0]["grid"] = [2, 5]
        path.write_text(json.dumps(header))
        with pytest.raises(LevelShapeMismatch):
            load_precomputed_features(path)

    def test_validate_rejects_mixed_shapes(self):
        rng = np.random.default_rng(21)
        a = FeatureLevel(level_id=1, grid=(2, 2), tokens=rng.standard_normal((2, 4, 3)).astype(np.float32))
        b = FeatureLevel(level_id=2, grid=(2, 2), tokens=rng.standard_normal((3, 4, 3)).astype(np.float32))
        with pytest.raises(LevelShapeMismatch):
            SliceFeatureStack(levels=[a, b]).validate()
