import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlattention.baselines import (
    FlowConfig,
    FlowField,
    IttiKochConfig,
    farneback_flow,
    flow_to_saliency,
    gaussian_pyramid,
    itti_koch,
    max_normalize,
    motion_saliency,
)
from rlattention.errors import ContractError, ParameterError
from rlattention.imaging import RawFrame


def square_frame(centers, size=(210, 160), side=8, value=255, rgb=True):
    img = np.zeros(size, np.uint8)
    for r, c in centers:
        img[r - side // 2:r + side // 2, c - side // 2:c + side // 2] = value
    return np.repeat(img[..., None], 3, axis=2) if rgb else img


def argmax_84(smap):
    return np.array(np.unravel_index(np.argmax(smap.values), smap.shape), dtype=float)


def to_84(r, c, size=(210, 160)):
    # pixel center (r, c) of the original frame in 84x84 pixel coordinates
    return np.array([(r + 0.5) * 84 / size[0] - 0.5, (c + 0.5) * 84 / size[1] - 0.5])


def texture(shape, seed):
    rng = np.random.default_rng(seed)
    small = rng.uniform(size=(shape[0] // 4 + 2, shape[1] // 4 + 2))
    return cv2.resize(small, (shape[1] + 8, shape[0] + 8), interpolation=cv2.INTER_CUBIC)[4:-4, 4:-4]


class TestIttiKochConfig:
    def test_defaults(self):
        cfg = IttiKochConfig()
        assert cfg.levels == 9 and cfg.centers == (2, 3, 4) and cfg.deltas == (3, 4)
        assert cfg.orientations == (0.0, 45.0, 90.0, 135.0)

    @pytest.mark.parametrize("kwargs", [{"weights": (0.5, 0.5, 0.5)}, {"weights": (-0.1, 0.6, 0.5)}, {"levels": 7}])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            IttiKochConfig(**kwargs)

    def test_too_small(self):
        with pytest.raises(ParameterError):
            itti_koch(np.zeros((100, 100, 3), np.uint8))


class TestIttiKoch:
    def test_uniform_degenerate(self):
        m = itti_koch(RawFrame(np.full((210, 160, 3), 128, np.uint8)))
        assert m.degenerate and m.normalized
        np.testing.assert_allclose(m.values, 1 / 84**2)

    @pytest.mark.parametrize("center", [(105, 80), (60, 40), (150, 120)])
    def test_square_argmax(self, center):
        m = itti_koch(RawFrame(square_frame([center])))
        assert np.linalg.norm(argmax_84(m) - to_84(*center)) <= 3.0

    def test_grayscale_input(self):
        m = itti_koch(RawFrame(square_frame([(105, 80)], rgb=False)))
        assert np.linalg.norm(argmax_84(m) - to_84(105, 80)) <= 3.0

    def test_two_squares_symmetric(self):
        m = itti_koch(RawFrame(square_frame([(105, 50), (105, 110)]))).values
        left, right = m[:, :42].max(), m[:, 42:].max()
        assert abs(left - right) / max(left, right) < 0.05
        # both are local maxima well above the background
        assert min(left, right) > 10 * np.median(m)

    def test_mirror_equivariant(self):
        rng = np.random.default_rng(0)
        img = (rng.uniform(size=(210, 160, 3)) * 255).astype(np.uint8)
        img[50:70, 30:45] = [255, 0, 0]
        a = itti_koch(RawFrame(img)).values
        b = itti_koch(RawFrame(img[:, ::-1].copy())).values
        np.testing.assert_allclose(a, b[:, ::-1], atol=1e-4 * a.max())

    @pytest.mark.parametrize("scale", [0.25, 0.5, 2.0])
    def test_intensity_scaling_argmax(self, scale):
        base = square_frame([(80, 100)]).astype(np.float64) / 255 * 0.4 + 0.1
        a = itti_koch(base)
        b = itti_koch(base * scale)
        assert np.array_equal(argmax_84(a), argmax_84(b))

    def test_pyramid_sizes(self):
        sizes = [p.shape for p in gaussian_pyramid(np.zeros((210, 160)), 9)]
        assert sizes[:3] == [(210, 160), (105, 80), (53, 40)] and sizes[-1] == (1, 1)

    def test_max_normalize_single_peak_promoted(self):
        one = np.zeros((20, 20))
        one[5, 5] = 1.0
        many = np.zeros((20, 20))
        many[::4, ::4] = 1.0
        assert max_normalize(one).max() > max_normalize(many).max()

    def test_max_normalize_zero_map(self):
        assert not max_normalize(np.zeros((5, 5))).any()


class TestFlow:
    def test_config(self):
        cfg = FlowConfig()
        assert (cfg.pyr_scale, cfg.levels, cfg.winsize, cfg.iterations, cfg.poly_n, cfg.poly_sigma) == (0.5, 3, 15, 3, 5, 1.1)
        with pytest.raises(ParameterError):
            FlowConfig(winsize=14)
        with pytest.raises(ParameterError):
            FlowConfig(pyr_scale=1.0)

    def test_identical_frames(self):
        a = texture((210, 160), 1)
        assert farneback_flow(a, a).magnitude.max() < 1e-3

    @settings(max_examples=5, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_identical_random(self, seed):
        a = np.random.default_rng(seed).uniform(size=(40, 48))
        assert farneback_flow(a, a).magnitude.max() < 1e-3

    @pytest.mark.parametrize("shift", [(2, 0), (0, 3), (-1, 2)])
    def test_integer_shift(self, shift):
        dx, dy = shift
        a = texture((120, 100), 2)
        b = np.roll(a, (dy, dx), axis=(0, 1))
        flow = farneback_flow(a, b)
        inner = (slice(20, -20), slice(20, -20))
        assert abs(np.median(flow.dx[inner]) - dx) < 0.5
        assert abs(np.median(flow.dy[inner]) - dy) < 0.5

    def test_agrees_with_opencv(self):
        a = texture((120, 100), 3)
        b = np.roll(a, (1, 2), axis=(0, 1))
        ours = farneback_flow(a, b)
        ref = cv2.calcOpticalFlowFarneback(
            (a * 255).astype(np.float32), (b * 255).astype(np.float32), None, 0.5, 3, 15, 3, 5, 1.1, 0
        )
        inner = (slice(20, -20), slice(20, -20))
        assert abs(np.median(ours.dx[inner]) - np.median(ref[..., 0][inner])) < 0.1
        assert abs(np.median(ours.dy[inner]) - np.median(ref[..., 1][inner])) < 0.1

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            farneback_flow(np.zeros((20, 20)), np.zeros((20, 21)))

    def test_raw_frames(self):
        a = (texture((210, 160), 4) * 255).astype(np.uint8)
        m = motion_saliency(RawFrame(a), RawFrame(np.roll(a, 2, axis=1)))
        assert m.shape == (84, 84) and m.normalized


class TestFlowSaliency:
    def test_zero_flow(self):
        m = flow_to_saliency(FlowField(np.zeros((10, 10)), np.zeros((10, 10))))
        assert m.degenerate
        np.testing.assert_allclose(m.values, 0.01)

    def test_single_block(self):
        dx = np.zeros((40, 40))
        dx[5:15, 20:30] = 1.5
        m = flow_to_saliency(FlowField(dx, np.zeros_like(dx)))
        assert abs(m.values[5:15, 20:30].sum() - 1.0) < 1e-12

    def test_two_to_one(self):
        dx = np.zeros((40, 40))
        dy = np.zeros((40, 40))
        dx[0:10, 0:10] = 2.0
        dy[20:30, 20:30] = -1.0
        m = flow_to_saliency(FlowField(dx, dy)).values
        assert abs(m[0:10, 0:10].sum() / m[20:30, 20:30].sum() - 2.0) < 1e-12

    def test_non_finite(self):
        from rlattention.errors import DataError

        with pytest.raises(DataError):
            FlowField(np.array([[np.nan]]), np.zeros((1, 1)))
