import numpy as np
import pytest
from scipy import ndimage

from conftest import shifted_pair, smooth_texture
from dzl.flow import (
    ClipFlowCache,
    FarnebackFlow,
    FlowParams,
    PolyExpansion,
    clip_flow_sequence,
    compute_flow,
    displacement_step,
    poly_expand,
    write_flow_debug,
)
from dzl.video_io import VideoClip, read_pgm


def quadratic_image(h, w, c, bx, by, axx, ayy, axy):
    """f(x, y) = c + bx x + by y + axx x^2 + ayy y^2 + 2 axy x y on the pixel grid."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    return c + bx * x + by * y + axx * x * x + ayy * y * y + 2 * axy * x * y


def expected_local(h, w, c, bx, by, axx, ayy, axy):
    """Coefficients of the same quadratic re-centred at every pixel (x0, y0)."""
    y0, x0 = np.mgrid[0:h, 0:w].astype(np.float64)
    return {
        "c": quadratic_image(h, w, c, bx, by, axx, ayy, axy),
        "bx": bx + 2 * axx * x0 + 2 * axy * y0,
        "by": by + 2 * ayy * y0 + 2 * axy * x0,
        "axx": np.full((h, w), axx),
        "ayy": np.full((h, w), ayy),
        "axy": np.full((h, w), axy),
    }


class TestPolyExpand:
    def test_constant(self):
        e = poly_expand(np.full((20, 20), 0.3))
        assert np.allclose(e.A, 0.0, atol=1e-14)
        assert np.allclose(e.b, 0.0, atol=1e-14)
        assert np.allclose(e.c, 0.3, atol=1e-14)

    def test_horizontal_ramp(self):
        img = quadratic_image(20, 30, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
        e = poly_expand(img)
        inner = (slice(3, -3), slice(3, -3))
        assert np.allclose(e.A[inner], 0.0, atol=1e-9)
        assert np.allclose(e.b[inner][..., 0], 1.0, atol=1e-9)
        assert np.allclose(e.b[inner][..., 1], 0.0, atol=1e-9)
        assert np.allclose(e.c[inner], img[inner], atol=1e-9)

    def test_x_squared(self):
        e = poly_expand(quadratic_image(16, 16, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0))
        assert np.allclose(e.A[3:-3, 3:-3, 0, 0], 1.0, atol=1e-6)

    @pytest.mark.parametrize("poly_n,sigma", [(5, 1.1), (7, 1.5), (9, 2.0)])
    def test_global_quadratic_exact(self, poly_n, sigma):
        coef = (0.2, 0.01, -0.02, 3e-4, -2e-4, 1.5e-4)
        e = poly_expand(quadratic_image(40, 48, *coef), poly_n, sigma)
        exp = expected_local(40, 48, *coef)
        r = poly_n // 2
        inner = (slice(r, -r), slice(r, -r))
        got = {"c": e.c, "bx": e.b[..., 0], "by": e.b[..., 1], "axx": e.A[..., 0, 0], "ayy": e.A[..., 1, 1], "axy": e.A[..., 0, 1]}
        for key in exp:
            assert np.max(np.abs(got[key][inner] - exp[key][inner])) <= 1e-9, key
        assert np.array_equal(e.A[..., 0, 1], e.A[..., 1, 0])

    def test_finite_at_border(self):
        e = poly_expand(smooth_texture(32, 0, margin=0))
        assert np.all(np.isfinite(e.coeffs))


def scalar_expansion(a, b, shape=(9, 9)):
    """Expansion whose x-direction coefficients are (a, b) at every pixel; y mirrors x."""
    coeffs = np.zeros(shape + (6,))
    coeffs[..., 1] = b
    coeffs[..., 2] = b
    coeffs[..., 3] = a
    coeffs[..., 4] = a
    return PolyExpansion(coeffs)


class TestDisplacementStep:
    def test_identical_expansions(self):
        e = poly_expand(smooth_texture(32, 1, margin=0))
        out = displacement_step(e, e, np.zeros((32, 32, 2)), 7)
        assert np.array_equal(out, np.zeros((32, 32, 2)))

    def test_scalar_constraint(self):
        # b1 = b2 - 2 a d with a=1, b1=0, b2=4 gives |d| = 2. Under the
        # forward-motion convention f2(x) = f1(x - d) the solved flow is -2:
        # x^2 + 4x = (x + 2)^2 - 4 is x^2 moved two pixels left.
        out = displacement_step(scalar_expansion(1.0, 0.0), scalar_expansion(1.0, 4.0), np.zeros((9, 9, 2)), 3)
        assert np.allclose(out[..., 0], -2.0, atol=1e-12)
        assert np.allclose(out[..., 1], -2.0, atol=1e-12)

    def test_singular_keeps_prior(self):
        flat = PolyExpansion(np.zeros((9, 9, 6)))
        prior = np.full((9, 9, 2), 0.7)
        assert np.array_equal(displacement_step(flat, flat, prior, 3), prior)

    def test_translation_oracle(self):
        a, b = shifted_pair(128, (3, 0), seed=2)
        flow = compute_flow(a, b)
        inner = flow[16:-16, 16:-16]
        assert np.allclose(inner.reshape(-1, 2).mean(axis=0), [3.0, 0.0], atol=0.1)
        assert np.hypot(inner[..., 0] - 3, inner[..., 1]).mean() < 0.3

    def test_dimension_mismatch(self):
        e1 = PolyExpansion(np.zeros((9, 9, 6)))
        e2 = PolyExpansion(np.zeros((9, 10, 6)))
        with pytest.raises(ValueError, match="dimension mismatch"):
            displacement_step(e1, e2, np.zeros((9, 9, 2)))


class TestComputeFlow:
    def test_zero_motion_identity(self):
        f = smooth_texture(64, 3, margin=0)
        assert np.array_equal(compute_flow(f, f), np.zeros((64, 64, 2)))

    def test_translation_2_3(self):
        a, b = shifted_pair(256, (2, 3), seed=4)
        flow = compute_flow(a, b, FlowParams())
        epe = np.hypot(flow[..., 0] - 2, flow[..., 1] - 3)
        assert epe.mean() < 0.5

    def test_rotation_direction(self):
        size = 256
        tex = smooth_texture(size, 5, margin=0)
        c = (size - 1) / 2
        theta = np.deg2rad(2.0)
        y, x = np.mgrid[0:size, 0:size].astype(np.float64)
        # next(p) = prev(R^-1 (p - c) + c): content rotates by +theta
        xs = np.cos(theta) * (x - c) + np.sin(theta) * (y - c) + c
        ys = -np.sin(theta) * (x - c) + np.cos(theta) * (y - c) + c
        rotated = np.clip(ndimage.map_coordinates(tex, [ys, xs], order=3, mode="reflect"), 0, 1)
        flow = compute_flow(tex, rotated)
        # analytic field: d(p) = R (p - c) + c - p
        tx = np.cos(theta) * (x - c) - np.sin(theta) * (y - c) + c - x
        ty = np.sin(theta) * (x - c) + np.cos(theta) * (y - c) + c - y
        r = np.hypot(x - c, y - c)
        mask = (r > 30) & (r < size / 2 - 16)
        ang = np.arctan2(flow[..., 1], flow[..., 0]) - np.arctan2(ty, tx)
        ang = np.abs((ang + np.pi) % (2 * np.pi) - np.pi)
        assert np.rad2deg(ang[mask]).mean() < 15.0

    @pytest.mark.parametrize("shift", [(1, 0), (0, -2), (2, 1)])
    def test_shift_equivariance(self, shift):
        a, b = shifted_pair(96, shift, seed=6)
        mean = compute_flow(a, b)[12:-12, 12:-12].reshape(-1, 2).mean(axis=0)
        assert np.hypot(*(mean - shift)) < 0.5

    def test_approximate_antisymmetry(self):
        a, b = shifted_pair(96, (1, 1), seed=7)
        fwd = compute_flow(a, b)[12:-12, 12:-12]
        bwd = compute_flow(b, a)[12:-12, 12:-12]
        assert np.hypot(*(fwd + bwd).reshape(-1, 2).mean(axis=0)) < 0.5

    def test_determinism(self):
        a, b = shifted_pair(64, (1, 2), seed=8)
        assert np.array_equal(compute_flow(a, b), compute_flow(a, b))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            compute_flow(np.zeros((16, 16)), np.zeros((16, 17)))

    def test_finite_and_bounded(self):
        rng = np.random.default_rng(9)
        a, b = rng.random((48, 48)), rng.random((48, 48))
        flow = compute_flow(a, b)
        assert np.all(np.isfinite(flow))
        assert np.all(np.hypot(flow[..., 0], flow[..., 1]) <= np.hypot(48, 48))


class TestClipFlowSequence:
    def clip(self, seed=10, T=5):
        tex = smooth_texture(48, seed, margin=0)
        frames = [np.roll(tex, t, axis=1) for t in range(T)]
        return VideoClip(np.stack(frames))

    def test_identical_frames(self):
        clip = VideoClip(np.repeat(smooth_texture(32, 11, margin=0)[None], 4, axis=0))
        flows = clip_flow_sequence(clip)
        assert flows.shape == (3, 32, 32, 2)
        assert not np.any(flows)

    def test_length_and_elements(self):
        clip = self.clip()
        flows = clip_flow_sequence(clip)
        assert len(flows) == 4
        for i in range(4):
            assert np.array_equal(flows[i], compute_flow(clip[i], clip[i + 1]))

    def test_shuffled_differs(self):
        clip = self.clip()
        order = [2, 1, 0, 3, 4]
        shuffled = clip_flow_sequence(clip.reordered(order))
        assert not np.allclose(shuffled, clip_flow_sequence(clip))
        cache = ClipFlowCache(clip)
        assert np.array_equal(cache.sequence(order), shuffled)

    def test_transformer(self):
        clip = self.clip()
        est = FarnebackFlow(iterations=2).fit()
        assert est.get_params()["iterations"] == 2
        assert np.array_equal(est.transform(clip), clip_flow_sequence(clip, FlowParams(iterations=2)))
        assert len(est.transform([clip, clip])) == 2


def test_flow_params_validation():
    with pytest.raises(ValueError):
        FlowParams(window_size=14)
    with pytest.raises(ValueError):
        FlowParams(poly_n=4)
    with pytest.raises(ValueError):
        FlowParams(pyramid_scale=1.0)


def test_flow_debug_dump(tmp_path):
    flow = np.zeros((16, 16, 2))
    flow[4, 5] = (3.0, 4.0)
    write_flow_debug(flow, tmp_path / "m.pgm", tmp_path / "v.csv", stride=4)
    mag = read_pgm(tmp_path / "m.pgm")
    assert mag[4, 5] == 1.0 and mag.sum() == 1.0
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "x,y,dx,dy"
    assert len(lines) == 1 + 16
