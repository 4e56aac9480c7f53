import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from p3m import core
from p3m.errors import InvalidRatioError, NotFoundError, ShapeError


def _arrays(draw, h, w):
    return draw(
        st.lists(
            st.floats(min_value=0.0, max_value=1.0, width=32),
            min_size=h * w,
            max_size=h * w,
        )
    )


small_alpha = st.builds(
    lambda vals: np.array(vals, dtype=np.float32).reshape(4, 4),
    st.lists(st.floats(min_value=0.0, max_value=1.0, width=32), min_size=16, max_size=16),
)
small_mask = st.builds(
    lambda vals: np.array(vals, dtype=np.uint8).reshape(4, 4),
    st.lists(st.integers(min_value=0, max_value=1), min_size=16, max_size=16),
)


class TestLoadSave:
    def test_scale_endpoints(self, tmp_path):
        from PIL import Image

        arr = np.array([[0, 255], [128, 17]], dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "a.png")
        alpha = core.load_raster(tmp_path / "a.png", "alpha")
        assert alpha[0, 0] == 0.0
        assert alpha[0, 1] == 1.0
        # direct integer-division oracle
        assert alpha[1, 0] == np.float32(128 / 255)
        assert alpha[1, 1] == np.float32(17 / 255)

    def test_missing_file(self, tmp_path):
        with pytest.raises(NotFoundError):
            core.load_raster(tmp_path / "nope.png", "alpha")

    def test_undecodable(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"this is not a png")
        from p3m.errors import FormatError

        with pytest.raises(FormatError):
            core.load_raster(bad, "image")

    def test_mask_thresholding(self, tmp_path):
        from PIL import Image

        arr = np.array([[0, 100], [127, 128], [200, 255]], dtype=np.uint8).reshape(3, 2)
        Image.fromarray(arr, mode="L").save(tmp_path / "m.png")
        mask = core.load_raster(tmp_path / "m.png", "mask")
        assert mask.tolist() == [[0, 0], [0, 1], [1, 1]]

    def test_round_trip_bit_exact(self, tmp_path, rng):
        alpha8 = rng.integers(0, 256, size=(9, 7), dtype=np.uint8)
        from PIL import Image

        Image.fromarray(alpha8, mode="L").save(tmp_path / "orig.png")
        loaded = core.load_raster(tmp_path / "orig.png", "alpha")
        core.save_raster(tmp_path / "copy.png", loaded, "alpha")
        again = np.asarray(Image.open(tmp_path / "copy.png"))
        assert np.array_equal(alpha8, again)

    def test_round_trip_image(self, tmp_path, rng):
        img8 = rng.integers(0, 256, size=(5, 6, 3), dtype=np.uint8)
        from PIL import Image

        Image.fromarray(img8, mode="RGB").save(tmp_path / "orig.png")
        loaded = core.load_raster(tmp_path / "orig.png", "image")
        core.save_raster(tmp_path / "copy.png", loaded, "image")
        again = np.asarray(Image.open(tmp_path / "copy.png"))
        assert np.array_equal(img8, again)


class TestResample:
    @pytest.mark.parametrize("mode", ["bilinear", "nearest", "maxpool"])
    def test_constant_field(self, mode):
        arr = np.full((8, 8), 0.7, dtype=np.float32)
        out_h, out_w = (4, 4) if mode == "maxpool" else (5, 11)
        out = core.resample(arr, out_h, out_w, mode)
        assert out.shape == (out_h, out_w)
        assert np.allclose(out, 0.7, atol=1e-7)

    def test_window_max(self):
        arr = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32)
        out = core.resample(arr, 1, 1, "maxpool")
        assert out.shape == (1, 1)
        assert out[0, 0] == 1.0

    def test_maxpool_matches_oracle(self, rng):
        arr = rng.uniform(0, 1, size=(12, 8)).astype(np.float32)
        out = core.resample(arr, 4, 4, "maxpool")
        assert np.array_equal(out, oracles.window_max(arr, 3, 2))

    def test_maxpool_channel_shape(self, rng):
        arr = rng.uniform(0, 1, size=(64, 32, 32)).astype(np.float32)
        out = core.resample(arr, 8, 8, "maxpool")
        assert out.shape == (64, 8, 8)

    def test_maxpool_bad_ratio(self):
        with pytest.raises(InvalidRatioError):
            core.resample(np.zeros((6, 6), dtype=np.float32), 4, 4, "maxpool")

    @given(small_alpha)
    @settings(max_examples=30, deadline=None)
    def test_nearest_preserves_value_set(self, arr):
        out = core.resample(arr, 7, 3, "nearest")
        assert set(np.unique(out)) <= set(np.unique(arr))

    def test_bilinear_identity(self, rng):
        arr = rng.uniform(0, 1, size=(6, 5)).astype(np.float32)
        out = core.resample(arr, 6, 5, "bilinear")
        assert np.array_equal(out, arr)


class TestComposite:
    def test_alpha_one_is_fg(self, rng):
        fg = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
        bg = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
        out = core.composite(fg, bg, np.ones((4, 4), dtype=np.float32))
        assert np.array_equal(out, fg)

    def test_alpha_zero_is_bg(self, rng):
        fg = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
        bg = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
        out = core.composite(fg, bg, np.zeros((4, 4), dtype=np.float32))
        assert np.array_equal(out, bg)

    def test_scalar_midpoint(self):
        fg = np.full((1, 1, 3), 0.8, dtype=np.float32)
        bg = np.full((1, 1, 3), 0.2, dtype=np.float32)
        alpha = np.full((1, 1), 0.5, dtype=np.float32)
        assert np.allclose(core.composite(fg, bg, alpha), 0.5, atol=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            core.composite(
                np.zeros((2, 2, 3), dtype=np.float32),
                np.zeros((3, 2, 3), dtype=np.float32),
                np.zeros((2, 2), dtype=np.float32),
            )

    @given(small_alpha)
    @settings(max_examples=30, deadline=None)
    def test_affine_in_alpha(self, alpha):
        rng = np.random.default_rng(5)
        fg = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
        bg = rng.uniform(0, 1, size=(4, 4, 3)).astype(np.float32)
        out = core.composite(fg, bg, alpha)
        expect = bg + alpha[:, :, None] * (fg - bg)
        assert np.allclose(out, expect, atol=1e-6)


class TestMaskApply:
    def test_identity_mask(self, rng):
        data = rng.normal(size=(3, 4, 4)).astype(np.float32)
        out = core.mask_apply(data, np.ones((4, 4), dtype=np.uint8))
        assert np.array_equal(out, data)

    def test_null_mask(self, rng):
        data = rng.normal(size=(3, 4, 4)).astype(np.float32)
        out = core.mask_apply(data, np.zeros((4, 4), dtype=np.uint8))
        assert np.array_equal(out, np.zeros_like(data))

    def test_elementwise_product(self):
        data = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        mask = np.array([[1, 0], [0, 1]], dtype=np.uint8)
        assert core.mask_apply(data, mask).tolist() == [[1.0, 0.0], [0.0, 4.0]]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            core.mask_apply(np.zeros((2, 3)), np.zeros((3, 2), dtype=np.uint8))

    @given(small_mask)
    @settings(max_examples=30, deadline=None)
    def test_idempotent(self, mask):
        rng = np.random.default_rng(11)
        data = rng.normal(size=(2, 4, 4)).astype(np.float32)
        once = core.mask_apply(data, mask)
        twice = core.mask_apply(once, mask)
        assert np.array_equal(once, twice)
