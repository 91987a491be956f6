import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from blindlf.lightfield import (
    LightField,
    augment,
    augment_field,
    center_view,
    crop_patch,
    extract_epi,
    get_view,
)
from blindlf.sceneio import load_scene, save_scene
from conftest import random_field


class TestLightField:
    def test_validation(self):
        with pytest.raises(ValueError):
            LightField(np.zeros((3, 3, 4, 4, 1)))
        with pytest.raises(ValueError):
            LightField(np.full((1, 1, 2, 2, 3), 1.5))
        with pytest.raises(ValueError):
            LightField(np.full((1, 1, 2, 2, 3), np.nan))

    def test_immutable(self, small_lf):
        with pytest.raises(ValueError):
            small_lf.data[0, 0, 0, 0, 0] = 0.5

    def test_clamped_constructor(self):
        lf = LightField.clamped(np.full((1, 1, 2, 2, 3), 1.5))
        assert lf.data.max() == 1.0


class TestGetView:
    def test_central_view(self):
        lf = random_field(1, u=3, v=3, h=8, w=8)
        assert np.array_equal(get_view(lf, (1, 1)), lf.data[1, 1])
        assert get_view(lf, (1, 1)).shape == (8, 8, 3)

    def test_constant_field(self):
        lf = LightField(np.full((3, 3, 8, 8, 3), 0.5))
        assert np.all(get_view(lf, (0, 0)) == 0.5)

    def test_out_of_range_names_axis(self):
        lf = random_field(2)
        with pytest.raises(IndexError, match="u index 3"):
            get_view(lf, (3, 0))
        with pytest.raises(IndexError, match="v index -1"):
            get_view(lf, (0, -1))

    def test_no_aliasing(self, small_lf):
        view = get_view(small_lf, (0, 0))
        view[0, 0, 0] = 0.123
        assert small_lf.data[0, 0, 0, 0, 0] != 0.123


class TestCenterView:
    def test_five_by_five(self):
        lf = random_field(3, u=5, v=5, h=4, w=4)
        assert np.array_equal(center_view(lf), lf.data[2, 2])

    def test_degenerate_single_view(self):
        lf = random_field(4, u=1, v=1)
        assert np.array_equal(center_view(lf), lf.data[0, 0])

    def test_even_angular_rejected(self):
        lf = random_field(5, u=4, v=4)
        with pytest.raises(ValueError, match="center undefined"):
            center_view(lf)


class TestEpi:
    def test_constant_field(self):
        lf = LightField(np.full((3, 3, 8, 8, 3), 0.25))
        epi = extract_epi(lf, "horizontal", 1, 4)
        assert np.all(epi.data == 0.25)

    def test_view_coded_rows(self):
        data = np.zeros((3, 3, 8, 8, 3))
        for v in range(3):
            data[:, v] = v / 10.0
        epi = extract_epi(LightField(data), "horizontal", 0, 3)
        assert np.allclose(epi.data[0], 0.0)
        assert np.allclose(epi.data[1], 0.1)
        assert np.allclose(epi.data[2], 0.2)

    def test_vertical_shape(self):
        lf = random_field(6, u=3, v=3, h=8, w=8)
        epi = extract_epi(lf, "vertical", 1, 5)
        assert epi.data.shape == (3, 8, 3)
        assert epi.orientation == "vertical"

    def test_scatter_back_reconstructs_line(self):
        lf = random_field(7)
        epi = extract_epi(lf, "horizontal", 2, 9)
        assert np.array_equal(lf.data[2, :, 9, :, :], epi.data)
        epi_v = extract_epi(lf, "vertical", 0, 4)
        assert np.array_equal(lf.data[:, 0, :, 4, :], epi_v.data)

    def test_invalid_index(self):
        lf = random_field(8)
        with pytest.raises(IndexError):
            extract_epi(lf, "horizontal", 5, 0)
        with pytest.raises(ValueError):
            extract_epi(lf, "diagonal", 0, 0)


class TestCropPatch:
    def test_protocol_sizes(self):
        lf = random_field(9, u=3, v=3, h=512, w=512)
        patch = crop_patch(lf, 0, 0, (152, 152))
        assert patch.spatial_shape == (152, 152)
        assert patch.angular_shape == (3, 3)
        central = crop_patch(patch, 12, 12, (128, 128))
        assert np.array_equal(central.data, patch.data[:, :, 12:140, 12:140])

    def test_full_extent_identity(self, small_lf):
        assert np.array_equal(crop_patch(small_lf, 0, 0, (16, 16)).data, small_lf.data)

    def test_out_of_bounds(self, small_lf):
        with pytest.raises(ValueError, match="outside spatial bounds"):
            crop_patch(small_lf, 8, 8, (16, 16))


class TestAugment:
    def test_hflip_involution(self, small_lf):
        once = augment((small_lf, small_lf), "hflip")
        twice = augment(once, "hflip")
        assert np.array_equal(twice[0].data, small_lf.data)
        assert np.array_equal(twice[1].data, small_lf.data)

    def test_vflip_involution(self, small_lf):
        twice = augment(augment((small_lf, small_lf), "vflip"), "vflip")
        assert np.array_equal(twice[0].data, small_lf.data)

    def test_channel_shuffle_means(self):
        data = np.zeros((2, 2, 4, 4, 3))
        data[..., 0], data[..., 1], data[..., 2] = 0.1, 0.2, 0.3
        lf = LightField(data)
        out, _ = augment((lf, lf), "channel_shuffle", perm=(2, 1, 0))
        means = out.data.mean(axis=(0, 1, 2, 3))
        assert np.allclose(means, [0.3, 0.2, 0.1])

    def test_malformed_permutation(self, small_lf):
        with pytest.raises(ValueError, match="permutation"):
            augment((small_lf, small_lf), "channel_shuffle", perm=(0, 0, 1))

    def test_rot90_angular_transposes(self):
        lf = random_field(10, u=3, v=5, h=6, w=4)
        out = augment_field(lf, "rot90")
        assert out.angular_shape == (5, 3)
        assert out.spatial_shape == (4, 6)

    def test_rot90_matches_index_remap_reference(self):
        lf = random_field(11, u=2, v=3, h=4, w=5)
        out = augment_field(lf, "rot90")
        assert np.array_equal(out.data, oracles.rot90_field(lf.data))

    def test_pixel_multiset_preserved(self, small_lf):
        for op in ("hflip", "vflip", "rot90"):
            out = augment_field(small_lf, op)
            assert np.array_equal(np.sort(out.data, axis=None), np.sort(small_lf.data, axis=None))

    def test_angular_shape_mismatch(self):
        a = random_field(12, u=3, v=3)
        b = random_field(13, u=5, v=5)
        with pytest.raises(ValueError, match="angular shape"):
            augment((a, b), "hflip")


@settings(max_examples=20, deadline=None)
@given(
    st.sampled_from(["hflip", "vflip", "rot90", "channel_shuffle"]),
    st.integers(0, 2**31 - 1),
)
def test_augment_preserves_range_property(op, seed):
    lf = random_field(seed, u=3, v=3, h=6, w=6)
    perm = (1, 2, 0) if op == "channel_shuffle" else None
    out = augment_field(lf, op, perm)
    assert np.all(np.isfinite(out.data))
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


class TestSceneIo:
    def test_round_trip(self, tmp_path):
        data = np.random.default_rng(0).integers(0, 256, (3, 3, 8, 8, 3)) / 255.0
        lf = LightField(data)
        save_scene(lf, tmp_path / "scene")
        back = load_scene(tmp_path / "scene")
        assert np.array_equal(back.data, lf.data)

    def test_missing_view_detected(self, tmp_path):
        lf = random_field(14, u=2, v=2, h=4, w=4)
        save_scene(lf, tmp_path / "scene")
        (tmp_path / "scene" / "view_01_01.png").unlink()
        with pytest.raises(FileNotFoundError, match="missing view"):
            load_scene(tmp_path / "scene")

    def test_missing_meta(self, tmp_path):
        (tmp_path / "s").mkdir()
        with pytest.raises(FileNotFoundError, match="meta.json"):
            load_scene(tmp_path / "s")
