import numpy as np
import pytest

from ctregion.phantom import build_phantom, phantom_report, write_phantom
from ctregion.volume_io import load_study


class TestBuildPhantom:
    def test_same_seed_reproduces(self):
        ct_a, masks_a = build_phantom(seed=5)
        ct_b, masks_b = build_phantom(seed=5)
        np.testing.assert_array_equal(ct_a.data, ct_b.data)
        for rid in range(1, 7):
            np.testing.assert_array_equal(masks_a.regions[rid].data, masks_b.regions[rid].data)

    def test_different_seed_changes_ct_not_masks(self):
        ct_a, masks_a = build_phantom(seed=5)
        ct_b, masks_b = build_phantom(seed=6)
        assert not np.array_equal(ct_a.data, ct_b.data)  # noise layer
        for rid in range(1, 7):
            np.testing.assert_array_equal(masks_a.regions[rid].data, masks_b.regions[rid].data)

    def test_regions_nonempty_and_disjoint(self):
        _, masks = build_phantom(seed=1)
        total = np.zeros(masks.regions[1].dims, dtype=np.int32)
        for rid in range(1, 7):
            data = masks.regions[rid].data
            assert data.any(), f"region {rid} is empty"
            total += data.astype(np.int32)
        assert total.max() == 1, "region masks overlap"

    def test_lesions_and_organs_present(self):
        _, masks = build_phantom(seed=1)
        assert set(masks.lesions) == {"nodule", "cyst"}
        assert set(masks.organs) == {"lung", "heart", "liver", "kidney"}
        for m in list(masks.lesions.values()) + list(masks.organs.values()):
            assert m.data.any()

    def test_ct_is_int16_with_anatomy_contrast(self):
        ct, masks = build_phantom(seed=1)
        assert ct.data.dtype == np.int16
        lung_mean = ct.data[masks.regions[1].data > 0].mean()
        bone_mean = ct.data[masks.regions[5].data > 0].mean()
        assert bone_mean > lung_mean + 500  # air vs bone

    def test_minimum_dims_enforced(self):
        with pytest.raises(ValueError):
            build_phantom(dims=(8, 16, 16))

    def test_custom_dims_and_spacing(self):
        ct, masks = build_phantom(dims=(16, 28, 30), spacing=(3.0, 0.5, 0.5), seed=2)
        assert ct.dims == (16, 28, 30)
        assert ct.spacing == (3.0, 0.5, 0.5)
        assert masks.regions[1].dims == (16, 28, 30)


class TestWritePhantom:
    def test_round_trips_through_manifest(self, tmp_path):
        import json

        manifest = write_phantom(tmp_path / "study", seed=4)
        ct, masks = load_study(manifest)
        want_ct, want_masks = build_phantom(seed=4)
        np.testing.assert_array_equal(ct.data, want_ct.data)
        for rid in range(1, 7):
            np.testing.assert_array_equal(
                masks.regions[rid].data, want_masks.regions[rid].data
            )
        assert json.loads(manifest.read_text())["study"] == "phantom-0004"

    def test_rewrite_is_byte_identical(self, tmp_path):
        write_phantom(tmp_path / "a", seed=4)
        write_phantom(tmp_path / "b", seed=4)
        files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
        files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
        assert files_a == files_b
        for name in files_a:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestPhantomReport:
    def test_deterministic(self):
        assert phantom_report(3) == phantom_report(3)

    def test_has_a_sentence_for_every_region(self):
        from ctregion.reports import split_report

        report = split_report(phantom_report(3))
        assert sorted(report.sections) == [1, 2, 3, 4, 5, 6]
