import numpy as np
import pytest

from sgkin.basis import build_basis
from sgkin import phase
from sgkin.phase import (
    Field,
    FunctionalWeights,
    GpcField,
    PhaseGrid,
    energy_ek,
    equivalence_constants,
    field_to_csv,
    global_moments,
    hypo_functional,
    load_field,
    maxwellian,
    micro_part,
    norms,
    pi_g,
    pi_l,
    save_field,
    sup_norms,
    to_distribution,
    to_perturbation,
)


@pytest.fixture(scope="module")
def grid1d():
    return PhaseGrid(nx=16, nv=33, dv_dim=1, lv=8.0)


@pytest.fixture(scope="module")
def grid2d():
    return PhaseGrid(nx=8, nv=24, dv_dim=2, lv=8.0)


def random_field(grid, rng):
    return rng.standard_normal(grid.shape)


class TestGridInvariants:
    def test_rejects_non_power_of_two_nx(self):
        with pytest.raises(ValueError):
            PhaseGrid(nx=12, nv=33)

    def test_rejects_coarse_velocity_grid(self):
        with pytest.raises(ValueError):
            PhaseGrid(nx=16, nv=15, lv=8.0)  # dv > lv/8

    def test_rejects_mass_excess_grid(self):
        # trapezoid Poisson excess pushes the mass above one on this grid
        with pytest.raises(ValueError):
            PhaseGrid(nx=16, nv=17, lv=8.0)

    @pytest.mark.parametrize("kw", [dict(nv=33, dv_dim=1), dict(nv=24, dv_dim=2),
                                    dict(nv=19, dv_dim=2, lv=7.0)])
    def test_maxwellian_mass(self, kw):
        grid = PhaseGrid(nx=8, **kw)
        mass = np.sum(grid.wv * grid.maxwellian)
        assert 1 - 1e-10 <= mass <= 1.0


class TestMaxwellian:
    def test_value_at_origin_1d(self, grid1d):
        M, Ms = maxwellian(grid1d)
        i0 = grid1d.nv // 2
        assert grid1d.v_axis[i0] == 0.0
        assert abs(M[i0] - (2 * np.pi) ** -0.5) < 1e-15
        assert np.all(M > 0)
        assert np.max(np.abs(Ms**2 - M)) < 1e-16

    def test_first_moment_vanishes(self, grid1d):
        M = grid1d.maxwellian
        assert abs(np.sum(grid1d.wv * grid1d.v_coord(0) * M)) < 1e-12

    @pytest.mark.parametrize("dv_dim", [1, 2])
    def test_energy_moment(self, dv_dim):
        # trapezoidal quadrature vs the exact Gaussian moment int |v|^2 M = d
        grid = PhaseGrid(nx=8, nv=33 if dv_dim == 1 else 24, dv_dim=dv_dim)
        m2 = np.sum(grid.wv * grid.vsq * grid.maxwellian)
        assert abs(m2 - dv_dim) < 1e-8


class TestRepresentation:
    def test_round_trip(self, grid1d):
        rng = np.random.default_rng(0)
        h = random_field(grid1d, rng)
        f = to_distribution(grid1d, h, eps=0.1)
        back = to_perturbation(grid1d, f, eps=0.1)
        assert np.max(np.abs(back - h)) < 1e-14 * max(1.0, np.max(np.abs(h)))

    def test_field_container(self, grid1d):
        with pytest.raises(ValueError):
            Field(grid1d, np.zeros((3, 3)))
        with pytest.raises(ValueError):
            Field(grid1d, np.zeros(grid1d.shape), rep="q")


class TestProjections:
    def test_pi_l_fixes_null_elements(self, grid1d):
        M = np.broadcast_to(grid1d.msqrt, grid1d.shape)
        assert np.max(np.abs(pi_l(grid1d, M) - M)) < 1e-12

    def test_pi_l_of_v_cubed(self, grid1d):
        # Gaussian-moment oracle: int v^4 M = 3 so Pi_L(v^3 M) = 3 v M
        v = grid1d.v_coord(0)
        h = np.broadcast_to(v**3 * grid1d.msqrt, grid1d.shape)
        expect = 3 * v * grid1d.msqrt
        got = pi_l(grid1d, h)
        assert np.max(np.abs(got - expect)) < 1e-8

    def test_pi_l_annihilates_hermite_cubic(self, grid1d):
        v = grid1d.v_coord(0)
        h = np.broadcast_to((v**3 - 3 * v) * grid1d.msqrt, grid1d.shape)
        assert np.max(np.abs(pi_l(grid1d, h))) < 1e-8

    @pytest.mark.parametrize("dim", [1, 2])
    def test_idempotent_and_self_adjoint(self, dim, grid1d, grid2d):
        grid = grid1d if dim == 1 else grid2d
        rng = np.random.default_rng(3)
        h = random_field(grid, rng)
        g = random_field(grid, rng)
        ph = pi_l(grid, h)
        assert grid.l2(pi_l(grid, ph) - ph) < 1e-12 * grid.l2(h)
        assert abs(grid.inner_xv(ph, g) - grid.inner_xv(h, pi_l(grid, g))) \
            < 1e-12 * grid.l2(h) * grid.l2(g)

    def test_micro_part_orthogonal(self, grid2d):
        rng = np.random.default_rng(4)
        h = random_field(grid2d, rng)
        hp = micro_part(grid2d, h)
        assert grid2d.l2(pi_l(grid2d, hp)) < 1e-10 * grid2d.l2(h)
        assert abs(grid2d.inner_xv(pi_l(grid2d, h), hp)) < 1e-10 * grid2d.l2(h) ** 2

    def test_micro_part_fixed_points(self, grid1d):
        M = np.broadcast_to(grid1d.msqrt, grid1d.shape)
        assert np.max(np.abs(micro_part(grid1d, M))) < 1e-12
        v = grid1d.v_coord(0)
        hmicro = np.broadcast_to((v**3 - 3 * v) * grid1d.msqrt, grid1d.shape)
        assert np.max(np.abs(micro_part(grid1d, hmicro) - hmicro)) < 1e-8

    def test_pi_g_constant_in_x(self, grid1d):
        M = np.broadcast_to(grid1d.msqrt, grid1d.shape)
        assert np.max(np.abs(pi_g(grid1d, M) - M)) < 1e-12

    def test_pi_g_kills_zero_average(self, grid1d):
        h = np.cos(grid1d.x)[:, None] * grid1d.msqrt
        assert np.max(np.abs(pi_g(grid1d, h))) < 1e-12

    def test_pi_g_idempotent(self, grid1d):
        rng = np.random.default_rng(5)
        h = random_field(grid1d, rng)
        p = pi_g(grid1d, h)
        assert grid1d.l2(pi_g(grid1d, p) - p) < 1e-12 * max(grid1d.l2(h), 1)
        assert np.max(np.abs(global_moments(grid1d, h - p))) < 1e-10


class TestNorms:
    def test_zero_field(self, grid1d):
        n = norms(grid1d, np.zeros(grid1d.shape), s=2, gamma=1.0)
        assert all(v == 0.0 for v in n.values())

    def test_gamma_zero_lambda_equals_l2(self, grid1d):
        rng = np.random.default_rng(6)
        h = random_field(grid1d, rng)
        n = norms(grid1d, h, s=1, gamma=0.0)
        assert n["lam"] == n["l2"]

    def test_spectral_x_derivative(self, grid1d):
        # oracle: d/dx sin(x) g(v) = cos(x) g(v)
        g = np.exp(-grid1d.v_axis**2 / 3)
        h = np.sin(grid1d.x)[:, None] * g
        expect = np.cos(grid1d.x)[:, None] * g
        n = norms(grid1d, h, s=1)
        dxh = grid1d.grad_x(h)
        assert np.max(np.abs(dxh - expect)) < 1e-10
        assert abs(n["hs"] ** 2 - (grid1d.l2(h) ** 2 + grid1d.l2(expect) ** 2
                                   + grid1d.l2(grid1d.grad_v(h, 0)) ** 2)) < 1e-12

    def test_rejects_high_order(self, grid1d):
        with pytest.raises(ValueError):
            norms(grid1d, np.zeros(grid1d.shape), s=3)

    def test_v_derivative_fourth_order(self):
        coarse = PhaseGrid(nx=8, nv=33, dv_dim=1, lv=8.0)
        fine = PhaseGrid(nx=8, nv=65, dv_dim=1, lv=8.0)
        errs = []
        for grid in (coarse, fine):
            v = grid.v_coord(0)
            h = np.broadcast_to(np.exp(-(v**2) / 2), grid.shape)
            exact = -v * np.exp(-(v**2) / 2)
            errs.append(np.max(np.abs(grid.grad_v(h, 0) - exact)))
        assert errs[1] < errs[0] / 12  # ~2^4 with margin


class TestHypoFunctional:
    def test_zero_field(self, grid1d):
        w = FunctionalWeights()
        assert hypo_functional(grid1d, np.zeros(grid1d.shape), 0.1, w) == 0.0

    def test_rejects_indefinite_weights(self, grid1d):
        w = FunctionalWeights(a_w=3.0)
        with pytest.raises(ValueError):
            hypo_functional(grid1d, np.zeros(grid1d.shape), 1.0, w)

    def test_no_cross_term_decomposes(self, grid1d):
        rng = np.random.default_rng(7)
        h = random_field(grid1d, rng)
        w = FunctionalWeights(A=2.0, alpha_w=3.0, b_w=0.5, a_w=0.0)
        val = hypo_functional(grid1d, h, 0.1, w)
        hp = micro_part(grid1d, h)
        parts = (2.0 * grid1d.l2(h) ** 2
                 + 3.0 * grid1d.l2(grid1d.grad_x(h)) ** 2
                 + 0.5 * grid1d.l2(grid1d.grad_v(hp, 0)) ** 2)
        assert abs(val - parts) < 1e-12 * max(val, 1)

    def test_equivalence_on_random_fields(self, grid1d):
        rng = np.random.default_rng(8)
        w = FunctionalWeights()
        eps = 0.5
        k1, k2 = equivalence_constants(grid1d, w, eps)
        assert 0 < k1 < k2
        for _ in range(100):
            h = random_field(grid1d, rng)
            h1 = norms(grid1d, h, s=1)["hs"] ** 2
            eta = hypo_functional(grid1d, h, eps, w)
            assert k1 * h1 <= eta + 1e-12 <= k2 * h1 + 2e-12

    def test_mixing_term_linear_in_eps(self, grid1d):
        rng = np.random.default_rng(9)
        h = random_field(grid1d, rng)
        w = FunctionalWeights()
        w0 = FunctionalWeights(a_w=0.0)
        mixes = []
        for eps in (1.0, 0.1, 0.01):
            mixes.append(hypo_functional(grid1d, h, eps, w)
                         - hypo_functional(grid1d, h, eps, w0))
        assert abs(mixes[0] * 0.1 - mixes[1]) < 1e-10 * abs(mixes[0])
        assert abs(mixes[0] * 0.01 - mixes[2]) < 1e-10 * abs(mixes[0])


class TestGpcField:
    def make(self, grid, K=4, seed=1):
        rng = np.random.default_rng(seed)
        basis = build_basis("legendre", K)
        coeffs = rng.standard_normal((K,) + grid.shape)
        return GpcField(grid, basis, coeffs)

    def test_single_mode_reconstruction(self, grid1d):
        basis = build_basis("legendre", 1)
        coeffs = np.random.default_rng(2).standard_normal((1,) + grid1d.shape)
        f = GpcField(grid1d, basis, coeffs)
        for z in (-1.0, 0.3, 1.0):
            assert np.array_equal(f.reconstruct(z), coeffs[0])

    def test_reconstruct_rejects_outside_domain(self, grid1d):
        f = self.make(grid1d)
        with pytest.raises(ValueError):
            f.reconstruct(1.5)

    def test_parseval(self, grid1d):
        f = self.make(grid1d)
        res = sup_norms(f, s=1)
        assert abs(res["hs_l2z"] - res["hs_parseval"]) < 1e-10 * res["hs_l2z"]

    def test_collocation_match(self, grid1d):
        # project an analytic g(z)*phi(x,v), compare reconstruction at nodes
        basis = build_basis("legendre", 8)
        phi = np.sin(grid1d.x)[:, None] * np.exp(-grid1d.v_axis**2 / 2)
        gz = lambda z: np.exp(0.7 * z)
        vals = gz(basis.quad_nodes)
        coeffs = basis.project(gz)[:, None, None] * phi
        f = GpcField(grid1d, basis, coeffs)
        for j in (0, basis.quad_nodes.size // 2):
            z = basis.quad_nodes[j]
            err = grid1d.l2(f.reconstruct(z) - vals[j] * phi)
            assert err < 2e-6 * grid1d.l2(phi)  # projection error of e^{0.7 z}

    def test_energy_weights(self, grid1d):
        basis = build_basis("legendre", 4)
        coeffs = np.zeros((4,) + grid1d.shape)
        f = GpcField(grid1d, basis, coeffs)
        assert energy_ek(grid1d, f, q=3) == 0.0
        # unit-norm mode 2 alone with q=3 weights by 2^6 = 64
        h = np.cos(grid1d.x)[:, None] * grid1d.msqrt
        h /= norms(grid1d, h, s=1)["hs"]
        coeffs[1] = h
        f = GpcField(grid1d, basis, coeffs)
        assert abs(energy_ek(grid1d, f, q=3) - 64.0) < 1e-10

    def test_energy_warns_small_q(self, grid1d):
        f = self.make(grid1d)
        with pytest.warns(UserWarning):
            energy_ek(grid1d, f, q=2.0, basis_growth_p=0.5)


class TestSerialization:
    def test_binary_round_trip(self, grid1d, tmp_path):
        rng = np.random.default_rng(11)
        fld = Field(grid1d, random_field(grid1d, rng), rep="h")
        path = tmp_path / "snap.sgkf"
        save_field(path, fld)
        back = load_field(path, grid1d)
        assert back.rep == "h"
        assert np.array_equal(back.values, fld.values)

    def test_csv_export(self, grid1d, tmp_path):
        fld = Field(grid1d, np.zeros(grid1d.shape))
        path = tmp_path / "snap.csv"
        field_to_csv(path, fld)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,v1,value"
        assert len(lines) == 1 + grid1d.nx * grid1d.nv

    def test_csv_cap(self, grid2d, tmp_path):
        fld = Field(grid2d, np.zeros(grid2d.shape))
        with pytest.raises(ValueError):
            field_to_csv(tmp_path / "big.csv", fld, max_entries=10)
