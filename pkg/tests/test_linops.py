import numpy as np
import pytest
from numpy.testing import assert_allclose

from voxprior import (
    FWHM_PER_SIGMA,
    GridMap,
    Mask,
    Rng,
    SliceProfile,
    downsample_dims,
    gaussian_kernel,
    make_volume,
    op_align,
    op_blur,
    op_downsample,
    op_project,
    op_select,
)


def dot_test(op, rng: Rng, rel_tol: float = 1e-8):
    """<A u, w> must equal <u, A^T w> up to roundoff."""
    u = rng.normal(op.in_shape)
    au = op.apply(u)
    w = rng.normal(au.shape)
    lhs = float(np.vdot(au, w))
    rhs = float(np.vdot(u, op.adjoint(w)))
    denom = max(abs(lhs), abs(rhs), 1e-30)
    assert abs(lhs - rhs) / denom < rel_tol, f"{op!r}: {lhs} vs {rhs}"


def linearity_test(op, rng: Rng):
    u = rng.normal(op.in_shape)
    v = rng.normal(op.in_shape)
    a, b = 1.7, -0.4
    left = op.apply(a * u + b * v)
    right = a * op.apply(u) + b * op.apply(v)
    assert_allclose(left, right, rtol=1e-10, atol=1e-12)


def _rigid_map(dims, angle, shift):
    c, s = np.cos(angle), np.sin(angle)
    affine = np.array([
        [c, -s, 0.0, shift[0]],
        [s, c, 0.0, shift[1]],
        [0.0, 0.0, 1.0, shift[2]],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return GridMap(np.eye(4), affine, dims)


class TestAlign:
    def test_identity_map_is_identity(self):
        v = make_volume((4, 5, 6)).with_data(np.arange(120.0).reshape(4, 5, 6))
        op = op_align(GridMap.identity(v)).bind(v.dims)
        assert np.array_equal(op.apply(v.data), v.data)
        assert np.array_equal(op.adjoint(v.data), v.data)

    def test_rigid_dot_tests(self):
        dims = (8, 8, 8)
        for seed in range(10):
            rng = Rng(seed)
            angle = float(rng.uniform(())) * 0.8
            shift = rng.uniform((3,)) * 2.0 - 1.0
            op = op_align(_rigid_map(dims, angle, shift)).bind(dims)
            dot_test(op, rng)

    def test_linearity(self):
        op = op_align(_rigid_map((6, 6, 6), 0.3, (0.5, -0.25, 1.0))).bind((6, 6, 6))
        linearity_test(op, Rng(3))

    def test_adjoint_needs_source_dims(self):
        op = op_align(_rigid_map((4, 4, 4), 0.1, (0, 0, 0)))
        with pytest.raises(ValueError):
            op.adjoint(np.zeros((4, 4, 4)))


class TestBlur:
    def test_zero_fwhm_is_identity(self):
        op = op_blur(SliceProfile((0.0, 0.0, 0.0)), (1.0, 1.0, 1.0))
        x = Rng(0).normal((5, 5, 5))
        assert np.array_equal(op.apply(x), x)
        assert np.array_equal(op.adjoint(x), x)

    def test_constant_preserved(self):
        op = op_blur(SliceProfile((2.0, 3.0, 5.0)), (1.0, 1.0, 1.0))
        x = np.full((9, 9, 9), 4.0)
        assert_allclose(op.apply(x), 4.0, rtol=1e-14, atol=0.0)

    def test_delta_axial_profile_matches_gaussian(self):
        # through-plane blur of 5 mm FWHM at 1 mm spacing
        op = op_blur(SliceProfile((0.0, 0.0, 5.0)), (1.0, 1.0, 1.0))
        x = np.zeros((17, 17, 17))
        x[8, 8, 8] = 1.0
        out = op.apply(x)
        sigma = 5.0 / FWHM_PER_SIGMA
        radius = int(np.ceil(4.0 * sigma))
        taps = np.exp(-0.5 * ((np.arange(-radius, radius + 1)) / sigma) ** 2)
        taps = taps / taps.sum()
        expected = taps[(np.arange(17) - 8) + radius]
        assert_allclose(out[8, 8, :], expected, rtol=1e-12, atol=0.0)
        # nothing bleeds off-axis
        assert np.all(out[7, 8, :] == 0.0)

    def test_kernel_matches_independent_formula(self):
        sigma = 1.7
        k = gaussian_kernel(sigma)
        radius = int(np.ceil(4.0 * sigma))
        ref = np.exp(-0.5 * ((np.arange(-radius, radius + 1)) / sigma) ** 2)
        ref /= ref.sum()
        assert_allclose(k, ref, rtol=1e-14, atol=0.0)
        assert gaussian_kernel(0.0).tolist() == [1.0]

    def test_dot_tests_anisotropic(self):
        for seed in range(10):
            rng = Rng(100 + seed)
            fwhm = tuple(float(f) for f in rng.uniform((3,)) * 6.0)
            spacing = tuple(1.0 + float(s) for s in rng.uniform((3,)))
            op = op_blur(SliceProfile(fwhm), spacing)
            # blur is shape-agnostic; exercise odd sizes incl. tiny axes
            dims = tuple(int(d) for d in rng.integers(1, 10, (3,)))
            u = rng.normal(dims)
            w = rng.normal(dims)
            lhs = float(np.vdot(op.apply(u), w))
            rhs = float(np.vdot(u, op.adjoint(w)))
            assert abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30) < 1e-8

    def test_negative_fwhm_rejected(self):
        with pytest.raises(ValueError):
            SliceProfile((-1.0, 0.0, 0.0))


class TestDownsample:
    def test_unit_factors_identity(self):
        op = op_downsample((1.0, 1.0, 1.0), (5, 4, 3))
        x = Rng(1).normal((5, 4, 3))
        assert np.array_equal(op.apply(x), x)

    def test_floor_rule_table_spacings(self):
        assert downsample_dims((32, 32, 32), (1.375, 1.375, 6.0)) == (23, 23, 5)
        assert downsample_dims((32, 32, 32), (1.6, 1.6, 5.0)) == (20, 20, 6)

    def test_output_dims(self):
        op = op_downsample((1.6, 1.6, 5.0), (32, 32, 32))
        assert op.in_shape == (32, 32, 32)
        assert op.out_shape == (20, 20, 6)

    def test_degenerate_output_rejected(self):
        with pytest.raises(ValueError):
            op_downsample((8.0, 1.0, 1.0), (4, 4, 4))

    def test_factor_below_one_rejected(self):
        with pytest.raises(ValueError):
            op_downsample((0.5, 1.0, 1.0), (4, 4, 4))

    def test_dot_tests(self):
        for seed in range(10):
            rng = Rng(200 + seed)
            factors = tuple(1.0 + 3.0 * float(f) for f in rng.uniform((3,)))
            op = op_downsample(factors, (16, 16, 16))
            dot_test(op, rng)

    def test_linearity(self):
        linearity_test(op_downsample((2.0, 1.3, 1.0), (12, 12, 12)), Rng(4))


class TestProject:
    @staticmethod
    def _compose(hr_dims, factors, fwhm, angle=0.0, shift=(0, 0, 0)):
        t = op_align(_rigid_map(hr_dims, angle, shift)).bind(hr_dims)
        s = op_blur(SliceProfile(fwhm), (1.0, 1.0, 1.0))
        r = op_downsample(factors, hr_dims)
        return op_project(t, s, r)

    def test_all_identity(self):
        op = self._compose((6, 6, 6), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0))
        x = Rng(2).normal((6, 6, 6))
        assert np.array_equal(op.apply(x), x)

    def test_composition_dot_tests(self):
        for seed in range(10):
            rng = Rng(300 + seed)
            factors = tuple(1.0 + 2.0 * float(f) for f in rng.uniform((3,)))
            fwhm = tuple(4.0 * float(f) for f in rng.uniform((3,)))
            angle = 0.5 * float(rng.uniform(()))
            op = self._compose((10, 10, 10), factors, fwhm, angle, (0.3, -0.2, 0.1))
            dot_test(op, rng)

    def test_geometry_mismatch_rejected(self):
        t = op_align(_rigid_map((8, 8, 8), 0.0, (0, 0, 0))).bind((8, 8, 8))
        s = op_blur(SliceProfile((0, 0, 0)), (1, 1, 1))
        r = op_downsample((2.0, 2.0, 2.0), (10, 10, 10))   # expects 10^3 input
        with pytest.raises(ValueError):
            op_project(t, s, r)

    def test_apply_shape_validation(self):
        op = self._compose((8, 8, 8), (2.0, 2.0, 2.0), (0, 0, 0))
        with pytest.raises(ValueError):
            op.apply(np.zeros((4, 4, 4)))


class TestSelect:
    def test_all_ones_is_flatten(self):
        mask = Mask(np.ones((3, 3, 3), dtype=bool))
        op = op_select(mask)
        x = np.arange(27.0).reshape(3, 3, 3)
        flat = op.apply(x)
        assert flat.shape == (27,)
        # canonical order is x fastest
        assert flat[1] == x[1, 0, 0]
        assert np.array_equal(op.adjoint(flat), x)

    def test_count_and_vector_length(self):
        sel = np.zeros((4, 4, 4), dtype=bool)
        sel[0, 1, 2] = sel[3, 3, 3] = sel[2, 0, 1] = True
        mask = Mask(sel)
        assert mask.count == 3
        op = op_select(mask)
        assert op.apply(np.ones((4, 4, 4))).shape == (3,)

    def test_projection_identity_on_selected(self):
        rng = Rng(8)
        sel = rng.uniform((5, 5, 5)) > 0.5
        sel[0, 0, 0] = True   # keep the mask nonempty
        op = op_select(Mask(sel))
        v = rng.normal((int(sel.sum()),))
        assert np.array_equal(op.apply(op.adjoint(v)), v)

    def test_projector_idempotent_and_self_adjoint(self):
        rng = Rng(9)
        sel = rng.uniform((4, 4, 4)) > 0.4
        sel[1, 1, 1] = True
        op = op_select(Mask(sel))
        x = rng.normal((4, 4, 4))
        p = lambda z: op.adjoint(op.apply(z))
        assert np.array_equal(p(p(x)), p(x))
        y = rng.normal((4, 4, 4))
        assert abs(float(np.vdot(p(x), y)) - float(np.vdot(x, p(y)))) < 1e-10

    def test_all_zero_mask_rejected(self):
        with pytest.raises(ValueError):
            Mask(np.zeros((2, 2, 2), dtype=bool))

    def test_dot_tests(self):
        for seed in range(10):
            rng = Rng(400 + seed)
            sel = rng.uniform((6, 6, 6)) > 0.3
            sel[0, 0, 0] = True
            dot_test(op_select(Mask(sel)), rng)
