import numpy as np
import pytest

from st_ribsupp.imagery import Image, RibMask
from st_ribsupp.st_space import STField, sample_field
from st_ribsupp.suppression import (
    DEFAULT_PARAMS,
    SuppressionError,
    SuppressionParams,
    blend_border,
    centerline_smooth,
    clamp_nonneg,
    derivative_s,
    reintegrate,
    smooth_t,
    suppress_all,
    suppress_rib,
)
from st_ribsupp.phantom import PhantomSpec, generate_phantom


def full_field(values, ds=1.0, dt=1.0):
    """Field whose every cell is a whole level (depth covers the grid)."""
    values = np.asarray(values, dtype=float)
    t_count, s_count = values.shape
    depth = np.full(t_count, (s_count - 1) * ds)
    return STField(values=values, depth=depth, dt=dt, ds=ds)


def ragged_field(rng, t_count=32, s_count=12):
    """Random field with random per-column depth (caps included)."""
    depth = rng.uniform(0.0, (s_count - 2) + 0.7, size=t_count)
    f = STField(
        values=np.zeros((t_count, s_count)),
        depth=depth,
        dt=1.0,
        ds=1.0,
    )
    vals = np.full((t_count, s_count), np.nan)
    vals[f.valid_mask] = rng.uniform(-5.0, 5.0, size=int(f.valid_mask.sum()))
    return f.with_values(vals)


class TestDerivative:
    def test_constant_field(self):
        f = full_field(np.full((16, 6), 3.0))
        out = derivative_s(f)
        assert np.all(out.values[:, 0] == 0)
        assert np.all(out.values[:, 1:] == 0)

    def test_unit_ramp(self):
        vals = np.tile(np.arange(6.0), (16, 1))
        out = derivative_s(full_field(vals))
        assert np.all(out.values[:, 0] == 0)
        assert np.all(out.values[:, 1:] == 1)

    def test_invalid_cells_stay_sentinel(self):
        rng = np.random.default_rng(0)
        f = ragged_field(rng)
        out = derivative_s(f)
        assert np.all(np.isnan(out.values[~f.valid_mask]))
        assert np.all(np.isfinite(out.values[f.valid_mask]))


class TestReintegrate:
    def test_constant_increments(self):
        # g(0) = c given directly: out(s) = c * s
        c = 2.5
        out = reintegrate(full_field(np.full((8, 7), c)))
        expect = c * np.arange(7.0)
        assert np.allclose(out.values[0], expect, atol=1e-12)

    def test_all_zero(self):
        out = reintegrate(full_field(np.zeros((8, 7))))
        assert np.all(out.values == 0)

    def test_inverse_pair_100_random_fields(self):
        rng = np.random.default_rng(123)
        for _ in range(100):
            f = ragged_field(rng)
            rec = reintegrate(derivative_s(f))
            base = f.values[:, :1]
            m = f.valid_mask
            expect = f.values - base
            err = np.abs(rec.values[m] - expect[m])
            assert err.max() <= 1e-9


class TestSmooth:
    def test_dc_gain(self):
        rng = np.random.default_rng(1)
        f = ragged_field(rng)
        v = f.with_values(np.where(f.valid_mask, 4.25, np.nan))
        out = smooth_t(v, kappa_t=6.0)
        m = f.valid_mask
        assert np.max(np.abs(out.values[m] - 4.25)) <= 1e-6

    def test_impulse_matches_dense_convolution(self):
        t_count = 48
        vals = np.zeros((t_count, 3))
        vals[10, :] = 1.0
        f = full_field(vals)
        kappa = 3.0
        out = smooth_t(f, kappa)
        # dense direct cyclic convolution oracle
        radius = int(np.ceil(4 * kappa))
        taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / kappa) ** 2)
        taps /= taps.sum()
        expect = np.zeros(t_count)
        for m, w in zip(range(-radius, radius + 1), taps):
            expect[(10 + m) % t_count] += w
        for s in range(3):
            assert np.allclose(out.values[:, s], expect, atol=1e-12)
        assert out.values[:, 0].sum() == pytest.approx(1.0, abs=1e-9)
        assert np.argmax(out.values[:, 0]) == 10

    def test_impulse_wraps_across_zero(self):
        vals = np.zeros((32, 2))
        vals[0, :] = 1.0
        out = smooth_t(full_field(vals), kappa_t=4.0)
        assert out.values[1, 0] == pytest.approx(out.values[31, 0], abs=1e-12)

    def test_shift_equivariance_bitwise(self):
        rng = np.random.default_rng(2)
        vals = rng.uniform(0, 100, size=(40, 5))
        f = full_field(vals)
        out = smooth_t(f, kappa_t=5.0)
        for shift in (1, 7, 23):
            g = full_field(np.roll(vals, shift, axis=0))
            out_shifted = smooth_t(g, kappa_t=5.0)
            assert np.max(np.abs(out_shifted.values - np.roll(out.values, shift, axis=0))) <= 1e-12

    def test_kernel_larger_than_period(self):
        vals = np.zeros((8, 2))
        vals[3, :] = 1.0
        out = smooth_t(full_field(vals), kappa_t=50.0)
        # huge kernel: everything converges to the mean
        assert np.allclose(out.values, 1.0 / 8.0, atol=1e-6)

    def test_caps_pass_through(self):
        rng = np.random.default_rng(3)
        f = ragged_field(rng)
        out = smooth_t(f, kappa_t=4.0)
        caps = f.valid_mask & ~(
            np.arange(f.s_count)[None, :] < f.level_counts[:, None]
        )
        assert np.array_equal(out.values[caps], f.values[caps])


class TestCenterline:
    def test_monotone_column_unchanged(self):
        vals = np.tile(np.arange(1.0, 8.0), (6, 1))
        out = centerline_smooth(full_field(vals), tau=0.5, k_center=3)
        assert np.allclose(out.values, vals)

    def test_hand_example(self):
        # column [4, 4, 2], tau=0.5, k=2: ratio 2/4 = 0.5 is not > 0.5,
        # so the last cell becomes mean(4, 2) = 3
        vals = np.tile(np.array([4.0, 4.0, 2.0]), (4, 1))
        out = centerline_smooth(full_field(vals), tau=0.5, k_center=2)
        assert np.allclose(out.values, np.tile(np.array([4.0, 4.0, 3.0]), (4, 1)))

    def test_all_zero_column(self):
        out = centerline_smooth(full_field(np.zeros((4, 5))), tau=0.5, k_center=3)
        assert np.all(out.values == 0)

    def test_reads_original_values_only(self):
        # out-of-place: the second gated cell averages original values,
        # not the already-averaged neighbor
        vals = np.tile(np.array([8.0, 4.0, 2.0]), (3, 1))
        out = centerline_smooth(full_field(vals), tau=0.6, k_center=2)
        # ratios: 4/8=0.5 (avg -> mean(8,4)=6), 2/4=0.5 (avg -> mean(4,2)=3)
        assert np.allclose(out.values, np.tile(np.array([8.0, 6.0, 3.0]), (3, 1)))

    def test_window_clamped_at_low_s(self):
        vals = np.tile(np.array([4.0, 1.0, 1.0]), (2, 1))
        out = centerline_smooth(full_field(vals), tau=0.5, k_center=10)
        # cell 1 gated (1/4 = 0.25): window clamps to cells 0..1
        assert out.values[0, 1] == pytest.approx(2.5)

    def test_invert_gate_switch(self):
        vals = np.tile(np.array([1.0, 2.0, 4.0]), (2, 1))
        out = centerline_smooth(full_field(vals), tau=0.5, k_center=2,
                                invert_gate=True)
        # inverted: increasing ratios now take the averaging branch
        assert out.values[0, 1] == pytest.approx(1.5)
        assert out.values[0, 2] == pytest.approx(3.0)


class TestClamp:
    def test_basic(self):
        vals = np.tile(np.array([-1.0, 0.0, 2.0]), (2, 1))
        out = clamp_nonneg(full_field(vals))
        assert np.allclose(out.values, np.tile(np.array([0.0, 0.0, 2.0]), (2, 1)))

    def test_identity_on_nonnegative(self):
        rng = np.random.default_rng(4)
        vals = rng.uniform(0, 9, (5, 4))
        out = clamp_nonneg(full_field(vals))
        assert np.array_equal(out.values, vals)

    def test_min_zero_random(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            f = ragged_field(rng)
            out = clamp_nonneg(f)
            assert np.nanmin(out.values) >= 0


def _band_mask(h=64, w=64):
    bm = np.zeros((h, w), dtype=bool)
    bm[24:40, 8:56] = True
    return RibMask.from_bitmap(1, bm)


class TestSuppressRib:
    def test_constant_background_noop(self):
        img = Image(data=np.full((64, 64), 1000.0), max_value=65535.0)
        mask = _band_mask()
        soft, patch = suppress_rib(img, mask, DEFAULT_PARAMS)
        assert patch.values.size
        assert patch.values.max() <= 1e-6 * img.max_value
        assert np.max(np.abs(soft.data - img.data)) <= 1e-6 * img.max_value

    def test_phantom_recovery_single_rib(self):
        # band height matches the 20-rib layout so the arc curvature is
        # representative
        spec = PhantomSpec(width=512, height=80, n_ribs=1, seed=3,
                           rib_amplitude=5000.0, background_mean=20000.0)
        case = generate_phantom(spec)
        mask = case.masks[0]
        soft, patch = suppress_rib(case.raw, mask, DEFAULT_PARAMS)
        err = soft.data - case.gt_soft.data
        rms = np.sqrt(np.mean(err[mask.bitmap] ** 2))
        assert rms <= 0.01 * spec.rib_amplitude

    def test_linearity_in_amplitude(self):
        base = PhantomSpec(width=160, height=120, n_ribs=1, seed=4,
                           rib_amplitude=3000.0)
        double = PhantomSpec(width=160, height=120, n_ribs=1, seed=4,
                             rib_amplitude=6000.0)
        c1 = generate_phantom(base)
        c2 = generate_phantom(double)
        _, p1 = suppress_rib(c1.raw, c1.masks[0], DEFAULT_PARAMS)
        _, p2 = suppress_rib(c2.raw, c2.masks[0], DEFAULT_PARAMS)
        strong = p2.values > 0.2 * 6000.0
        ratio = p2.values[strong] / np.maximum(p1.values[strong], 1e-9)
        assert np.median(np.abs(ratio - 2.0)) <= 0.02

    def test_bone_nonnegative(self):
        rng = np.random.default_rng(6)
        img = Image(data=rng.uniform(0, 255, (64, 64)), max_value=255.0)
        _, patch = suppress_rib(img, _band_mask(), DEFAULT_PARAMS)
        assert patch.min_value >= 0

    def test_shape_mismatch(self):
        img = Image(data=np.zeros((32, 32)), max_value=255.0)
        with pytest.raises(ValueError, match="shape"):
            suppress_rib(img, _band_mask(), DEFAULT_PARAMS)


class TestBlendBorder:
    def test_sb_zero_unchanged(self):
        rng = np.random.default_rng(7)
        img = Image(data=rng.uniform(0, 255, (64, 64)), max_value=255.0)
        out = blend_border(img, _band_mask(), s_b=0.0, k_border=5)
        assert out is img

    def test_k1_unchanged(self):
        rng = np.random.default_rng(8)
        img = Image(data=rng.uniform(0, 255, (64, 64)), max_value=255.0)
        out = blend_border(img, _band_mask(), s_b=3.0, k_border=1)
        assert out is img

    def test_constant_image_unchanged(self):
        img = Image(data=np.full((64, 64), 9.0), max_value=255.0)
        out = blend_border(img, _band_mask(), s_b=4.0, k_border=7)
        assert np.array_equal(out.data, img.data)

    def test_band_is_geometric_and_bounded(self):
        rng = np.random.default_rng(9)
        img = Image(data=rng.uniform(0, 255, (64, 64)), max_value=255.0)
        mask = _band_mask()
        out = blend_border(img, mask, s_b=2.0, k_border=5)
        changed = out.data != img.data
        ys, xs = np.nonzero(changed)
        # every changed pixel is inside the mask within s_b of the contour
        assert changed.any()
        assert np.all(mask.bitmap[ys, xs])
        from st_ribsupp.phantom import distance_to_contour

        d = distance_to_contour(np.stack([xs + 0.5, ys + 0.5], 1), mask.contour)
        assert d.max() <= 2.0 + 1e-9

    def test_knn_mean_hand_check(self):
        vals = (np.arange(64.0 * 64).reshape(64, 64)) ** 2 / 4096.0
        img = Image(data=vals, max_value=1e6)
        mask = _band_mask()
        out = blend_border(img, mask, s_b=1.0, k_border=5)
        ys, xs = np.nonzero(out.data != img.data)
        j, i = ys[0], xs[0]
        expect = np.mean(
            [img.data[j, i], img.data[j - 1, i], img.data[j, i - 1],
             img.data[j, i + 1], img.data[j + 1, i]]
        )
        assert out.data[j, i] == pytest.approx(expect, abs=1e-9)


class TestSuppressAll:
    def test_empty_mask_set(self):
        from st_ribsupp.imagery import RibMaskSet

        img = Image(data=np.full((32, 32), 40.0), max_value=255.0)
        res = suppress_all(img, RibMaskSet([]), DEFAULT_PARAMS)
        assert np.array_equal(res.soft.data, img.data)
        assert res.bones == ()

    def test_single_rib_matches_composition(self):
        spec = PhantomSpec(width=160, height=120, n_ribs=1, seed=5,
                           rib_amplitude=4000.0)
        case = generate_phantom(spec)
        res = suppress_all(case.raw, case.masks, DEFAULT_PARAMS)
        soft, patch = suppress_rib(case.raw, case.masks[0], DEFAULT_PARAMS)
        blended = blend_border(soft, case.masks[0], DEFAULT_PARAMS.s_b,
                               DEFAULT_PARAMS.k_border)
        expect = np.clip(blended.data, 0, case.raw.max_value)
        assert np.array_equal(res.soft.data, expect)

    def test_conservation_and_nonnegativity(self):
        spec = PhantomSpec(width=256, height=256, n_ribs=6, seed=6)
        case = generate_phantom(spec)
        res = suppress_all(case.raw, case.masks, DEFAULT_PARAMS)
        bone_sum = res.bone_raster(case.raw.shape)
        residual = case.raw.data - res.soft_pre_blend.data - bone_sum
        assert np.max(np.abs(residual)) <= 1e-9
        for patch in res.bones:
            assert patch.min_value >= 0

    def test_final_clamped_to_range(self):
        rng = np.random.default_rng(10)
        img = Image(data=rng.uniform(0, 30, (64, 64)), max_value=255.0)
        res = suppress_all(img, _band_mask(), DEFAULT_PARAMS)
        assert res.soft.data.min() >= 0
        assert res.soft.data.max() <= 255.0

    def test_per_rib_failure_names_label(self):
        img = Image(data=np.zeros((64, 64)), max_value=255.0)
        bm = np.zeros((64, 64), dtype=bool)
        bm[30:40, 30:40] = True
        from st_ribsupp.imagery import RibMaskSet
        from st_ribsupp.st_space import Contour

        # contour deliberately out of image bounds
        bad = RibMask(
            label=7, bitmap=bm,
            contour=Contour([(0, 0), (200, 0), (200, 200), (0, 200)]),
        )
        with pytest.raises(SuppressionError, match="rib 7"):
            suppress_all(img, RibMaskSet([bad]), DEFAULT_PARAMS)

    def test_per_rib_params_dict(self):
        spec = PhantomSpec(width=160, height=120, n_ribs=2, seed=8,
                           rib_amplitude=3000.0)
        case = generate_phantom(spec)
        params = {m.label: DEFAULT_PARAMS for m in case.masks}
        res = suppress_all(case.raw, case.masks, params)
        assert len(res.bones) == 2

    def test_determinism(self):
        spec = PhantomSpec(width=160, height=120, n_ribs=2, seed=9)
        case = generate_phantom(spec)
        a = suppress_all(case.raw, case.masks, DEFAULT_PARAMS)
        b = suppress_all(case.raw, case.masks, DEFAULT_PARAMS)
        assert np.array_equal(a.soft.data, b.soft.data)

    def test_keep_fields(self):
        spec = PhantomSpec(width=160, height=120, n_ribs=1, seed=9)
        case = generate_phantom(spec)
        res = suppress_all(case.raw, case.masks, DEFAULT_PARAMS, keep_fields=True)
        assert set(res.per_rib_fields) == {1}
        sampled, bone = res.per_rib_fields[1]
        assert sampled.t_count == bone.t_count


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            SuppressionParams(kappa_t=0.0)
        with pytest.raises(ValueError):
            SuppressionParams(tau=-1.0)
        with pytest.raises(ValueError):
            SuppressionParams(k_center=0)
        with pytest.raises(ValueError):
            SuppressionParams(s_b=-0.5)
        with pytest.raises(ValueError):
            SuppressionParams(k_border=0)
