import numpy as np
import pytest
from scipy import ndimage

from morphnas import checks
from morphnas import tensor as T
from morphnas.pseudo import VARIANTS, PseudoLayerConfig, PseudoMorphLayer, make_layer
from morphnas.tensor import ShapeError, Tensor


def collapsed(variant, r=3, s=1, seed=0):
    layer = PseudoMorphLayer(PseudoLayerConfig(variant, 1, r=r, s=s), rng=np.random.default_rng(seed))
    layer.set_one_hot_projection()
    return layer.eval()


def run(layer, img):
    with T.no_grad():
        return layer(Tensor(img[None, None])).data[0, 0]


class TestCollapseAgainstScipy:
    """With zero biases the 3x3 layers reduce to flat 3x3 operators with a zero border."""

    img = (np.random.default_rng(11).integers(0, 256, (8, 8)) / 256.0).astype(np.float32)

    def test_dilation(self):
        ref = ndimage.grey_dilation(self.img, size=(3, 3), mode="constant", cval=0.0)
        np.testing.assert_array_equal(run(collapsed("dilation"), self.img), ref)

    def test_erosion(self):
        ref = ndimage.grey_erosion(self.img, size=(3, 3), mode="constant", cval=0.0)
        np.testing.assert_array_equal(run(collapsed("erosion"), self.img), ref)

    def test_gradient(self):
        ref = ndimage.grey_dilation(self.img, size=(3, 3), mode="constant", cval=0.0) - self.img
        np.testing.assert_array_equal(run(collapsed("gradient"), self.img), ref)

    def test_pooling(self):
        d = ndimage.grey_dilation(self.img, size=(3, 3), mode="constant", cval=0.0)
        np.testing.assert_array_equal(run(collapsed("pooling"), self.img), d.reshape(4, 2, 4, 2).max(axis=(1, 3)))

    def test_upsampling(self):
        d = ndimage.grey_dilation(self.img, size=(3, 3), mode="constant", cval=0.0)
        out = run(collapsed("upsampling", s=2), self.img)
        np.testing.assert_array_equal(out, np.kron(d, np.ones((2, 2), np.float32)))


@pytest.mark.parametrize("variant", VARIANTS)
def test_oracle_collapse_with_biases(variant):
    res = checks.oracle_collapse(variant, n_images=100, seed=3)
    assert res.passed, res.detail


@pytest.mark.parametrize("variant", VARIANTS)
def test_gradients(variant):
    res = checks.layer_gradcheck(variant, points=5, seed=1)
    assert res.passed, res.detail


class TestShapes:
    @pytest.mark.parametrize("variant,expected", [
        ("dilation", (2, 3, 8, 8)), ("erosion", (2, 3, 8, 8)), ("gradient", (2, 3, 8, 8)),
        ("pooling", (2, 3, 4, 4)),
    ])
    def test_output_shape(self, variant, expected):
        layer = make_layer(variant, 3, r=3)
        assert layer(Tensor(np.zeros((2, 3, 8, 8), np.float32))).shape == expected

    def test_upsampling_shape(self):
        layer = make_layer("upsampling", 2, r=2, s=3)
        assert layer(Tensor(np.zeros((1, 2, 5, 5), np.float32))).shape == (1, 2, 15, 15)

    def test_projection_channels(self):
        assert PseudoLayerConfig("upsampling", 3, r=3, s=2).proj_channels == 3 * 36

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            make_layer("dilation", 3)(Tensor(np.zeros((1, 2, 8, 8), np.float32)))

    def test_pooling_needs_even_dims(self):
        with pytest.raises(ShapeError):
            make_layer("pooling", 1)(Tensor(np.zeros((1, 1, 7, 8), np.float32)))

    def test_gradient_needs_same_channels(self):
        with pytest.raises(ShapeError):
            PseudoLayerConfig("gradient", 3, c_out=4)

    def test_bad_scale(self):
        with pytest.raises(ValueError):
            PseudoLayerConfig("upsampling", 1, s=1)
        with pytest.raises(ValueError):
            PseudoLayerConfig("dilation", 1, s=2)

    def test_channel_change(self):
        layer = make_layer("dilation", 2, c_out=5)
        assert layer(Tensor(np.zeros((1, 2, 6, 6), np.float32))).shape == (1, 5, 6, 6)


class TestProperties:
    def test_dilation_dominates_input_with_zero_bias(self):
        # the one-hot projection includes the centre tap, so max >= f
        img = np.random.default_rng(0).random((8, 8)).astype(np.float32)
        assert np.all(run(collapsed("dilation"), img) >= img)
        assert np.all(run(collapsed("erosion"), img) <= img)

    def test_save_load_roundtrip(self, tmp_path):
        layer = make_layer("erosion", 2, rng=np.random.default_rng(4))
        x = Tensor(np.random.default_rng(5).standard_normal((1, 2, 6, 6)).astype(np.float32))
        layer.eval()
        layer.save(tmp_path / "ckpt")
        again = PseudoMorphLayer.load(tmp_path / "ckpt").eval()
        np.testing.assert_array_equal(layer(x).data, again(x).data)

    def test_layer_check_report(self):
        results = checks.layer_check("dilation", seed=2, points=3)
        assert [r.name for r in results] == [
            "shape-contract", "oracle-collapse", "pool-stage-bound", "gradient-check", "determinism"
        ]
        assert all(r.passed for r in results)

    def test_impossible_tolerance_fails_by_name(self):
        res = checks.layer_gradcheck("erosion", points=2, tol=0.0)
        assert not res.passed and res.line().startswith("FAIL  gradient-check")
