import numpy as np
import pytest

from qtraj.algebra import rho_from_bloch
from qtraj.continuous import SdeConfig, integrate_lindblad, lindblad_rhs
from qtraj.discrete import before_after
from qtraj.model import (
    ModelParams,
    build_unitary_blocks,
    diagonal_observable,
    dipole_default,
    symmetric_observable,
)
from qtraj.verify import (
    TestFunction,
    bloch_grid,
    bloch_grid_25,
    collect_chain_paths,
    collect_jump_paths,
    discrete_generator,
    generator_residual_scan,
    limit_generator,
    martingale_residual,
)

F_NAMES = ("x", "z", "zz", "xz")


def random_state(rng):
    b = rng.uniform(-0.5, 0.5, size=3)
    return rho_from_bloch(b)


class TestTestFunction:
    def test_finite_difference_consistency(self):
        rng = np.random.default_rng(0)
        f = TestFunction(coeffs=rng.normal(size=10))
        for _ in range(10):
            b = rng.uniform(-0.4, 0.4, size=3)
            v = rng.normal(size=3)
            eps = 1e-4
            rho = rho_from_bloch(b)
            rho_p = rho_from_bloch(b + eps * v)
            rho_m = rho_from_bloch(b - eps * v)
            direction = (rho_p - rho_m) / (2 * eps)
            fd_grad = (f.value(rho_p) - f.value(rho_m)) / (2 * eps)
            assert abs(fd_grad - f.derivative(rho, direction)) < 1e-6
            fd_hess = (f.value(rho_p) - 2 * f.value(rho) + f.value(rho_m)) / eps**2
            assert abs(fd_hess - f.second_derivative(rho, direction, direction)) < 1e-6

    def test_monomials(self):
        rho = rho_from_bloch([0.2, 0.3, -0.4])
        assert TestFunction.monomial("z").value(rho) == pytest.approx(-0.4)
        assert TestFunction.monomial("zz").value(rho) == pytest.approx(0.16)
        assert TestFunction.monomial("xz").value(rho) == pytest.approx(-0.08)
        with pytest.raises(ValueError):
            TestFunction.monomial("w")


class TestDiscreteGenerator:
    def test_constant_function_is_zero(self):
        params = dipole_default(0.75, n=100)
        blocks = build_unitary_blocks(params)
        f = TestFunction(coeffs=np.r_[2.5, np.zeros(9)])
        rng = np.random.default_rng(1)
        setup = before_after(diagonal_observable())
        val = discrete_generator(f, random_state(rng), params.p, setup, blocks, params.n)
        assert val == 0.0

    def test_linear_equals_master_step_difference(self):
        params = dipole_default(0.6, n=200)
        blocks = build_unitary_blocks(params)
        rng = np.random.default_rng(2)
        from qtraj.discrete import deterministic_master_step

        f = TestFunction(coeffs=np.r_[0.0, 1.0, -0.5, 2.0, np.zeros(6)])
        for setup in (
            before_after(diagonal_observable()),
            before_after(symmetric_observable()),
        ):
            rho = random_state(rng)
            got = discrete_generator(f, rho, params.p, setup, blocks, params.n)
            expect = params.n * (
                f.value(deterministic_master_step(rho, blocks, params.p)) - f.value(rho)
            )
            assert abs(got - expect) < 1e-10


class TestLimitGenerator:
    def test_constant_is_zero(self):
        params = dipole_default(0.75)
        f = TestFunction(coeffs=np.r_[1.0, np.zeros(9)])
        rho = rho_from_bloch([0.1, 0.2, 0.3])
        assert limit_generator(f, rho, "jump", params) == 0.0
        assert limit_generator(f, rho, "diffusive", params) == 0.0

    def test_linear_diffusive_is_pure_drift(self):
        params = dipole_default(0.4)
        f = TestFunction.monomial("z")
        rng = np.random.default_rng(3)
        rho = random_state(rng)
        got = limit_generator(f, rho, "diffusive", params)
        assert abs(got - f.derivative(rho, lindblad_rhs(rho, params))) < 1e-14

    def test_jump_and_diffusive_share_drift_for_linear_f(self):
        params = dipole_default(0.75)
        rho = 0.5 * np.eye(2, dtype=complex)
        f = TestFunction.monomial("z")
        drift = f.derivative(rho, lindblad_rhs(rho, params))
        dj = limit_generator(f, rho, "jump", params)
        dd = limit_generator(f, rho, "diffusive", params)
        assert abs(dd - drift) < 1e-14
        # the jump generator of a linear f keeps only the drift too:
        # f(target) - f(rho) - Df(target - rho) = 0 exactly
        assert abs(dj - drift) < 1e-14

    def test_jump_continuity_at_degenerate_intensity(self):
        params = dipole_default(0.75)
        ground = np.diag([1.0, 0.0]).astype(complex)
        f = TestFunction.monomial("zz")
        # Tr[C rho C†] = 0 at the ground state: no type-1 contribution
        val = limit_generator(f, ground, "jump", params)
        cd = params.c.conj().T
        absorb = np.diag([0.0, 1.0]).astype(complex)
        t2 = np.trace(cd @ ground @ params.c).real
        expect = f.derivative(ground, lindblad_rhs(ground, params)) + (
            f.value(absorb)
            - f.value(ground)
            - f.derivative(ground, absorb - ground)
        ) * (1 - params.p) * t2
        assert abs(val - expect) < 1e-14

    def test_batched_matches_scalar(self):
        params = dipole_default(0.65)
        rng = np.random.default_rng(4)
        f = TestFunction(coeffs=rng.normal(size=10))
        batch = np.stack([random_state(rng) for _ in range(6)])
        for kind in ("jump", "diffusive"):
            got = limit_generator(f, batch, kind, params)
            for k in range(6):
                assert abs(got[k] - limit_generator(f, batch[k], kind, params)) < 1e-12

    def test_linearity_in_f(self):
        params = dipole_default(0.55, n=150)
        blocks = build_unitary_blocks(params)
        setup = before_after(diagonal_observable())
        rng = np.random.default_rng(5)
        rho = random_state(rng)
        ca, cb = rng.normal(size=10), rng.normal(size=10)
        fa, fb = TestFunction(coeffs=ca), TestFunction(coeffs=cb)
        combo = TestFunction(coeffs=ca + 2.0 * cb)
        got = discrete_generator(combo, rho, params.p, setup, blocks, params.n)
        parts = discrete_generator(
            fa, rho, params.p, setup, blocks, params.n
        ) + 2.0 * discrete_generator(fb, rho, params.p, setup, blocks, params.n)
        assert abs(got - parts) < 1e-9
        for kind in ("jump", "diffusive"):
            got = limit_generator(combo, rho, kind, params)
            parts = limit_generator(fa, rho, kind, params) + 2.0 * limit_generator(
                fb, rho, kind, params
            )
            assert abs(got - parts) < 1e-11


class TestGrids:
    def test_lattice_size_and_radius(self):
        grid = bloch_grid()
        assert grid.shape[0] >= 25
        assert np.max(np.linalg.norm(grid, axis=1)) <= 0.9 + 1e-12

    def test_fixed_grid(self):
        grid = bloch_grid_25()
        assert grid.shape == (25, 3)
        assert np.max(np.linalg.norm(grid, axis=1)) <= 0.9


@pytest.fixture(scope="module")
def functions():
    return [TestFunction.monomial(name) for name in F_NAMES]


class TestResidualScan:
    def test_jump_kind_converges(self, functions):
        params = dipole_default(0.75, n=100)
        scan = generator_residual_scan(
            functions, bloch_grid_25(), before_after(diagonal_observable()),
            params, [100, 400, 1600, 6400], "jump",
        )
        assert all(a > b for a, b in zip(scan.residuals, scan.residuals[1:]))
        assert scan.slope <= -0.4
        assert scan.residuals[-1] <= 0.05 * scan.residuals[0]

    def test_diffusive_kind_converges(self, functions):
        params = dipole_default(0.75, n=100)
        scan = generator_residual_scan(
            functions, bloch_grid_25(), before_after(symmetric_observable()),
            params, [100, 400, 1600, 6400], "diffusive",
        )
        assert all(a > b for a, b in zip(scan.residuals, scan.residuals[1:]))
        assert scan.slope <= -0.4
        assert scan.residuals[-1] <= 0.05 * scan.residuals[0]

    def test_free_model_immediately_flat(self, functions):
        params = ModelParams(
            h0=np.zeros((2, 2)), c=np.zeros((2, 2)), gamma0=0.0, gamma1=1.0,
            p=0.75, n=100,
        )
        scan = generator_residual_scan(
            functions, bloch_grid_25(), before_after(diagonal_observable()),
            params, [100], "jump",
        )
        assert scan.residuals[0] <= 1e-10

    def test_display_variant_variants_do_not_converge(self, functions):
        params = dipole_default(0.75, n=100)
        good = generator_residual_scan(
            functions, bloch_grid_25(), before_after(diagonal_observable()),
            params, [6400], "jump",
        )
        bad = generator_residual_scan(
            functions, bloch_grid_25(), before_after(diagonal_observable()),
            params, [6400], "jump", display_variant=True,
        )
        assert bad.residuals[0] > 10 * good.residuals[0]
        good_d = generator_residual_scan(
            functions, bloch_grid_25(), before_after(symmetric_observable()),
            params, [6400], "diffusive",
        )
        bad_d = generator_residual_scan(
            functions, bloch_grid_25(), before_after(symmetric_observable()),
            params, [6400], "diffusive", display_variant=True,
        )
        assert bad_d.residuals[0] > 10 * good_d.residuals[0]

    def test_csv_schema(self, tmp_path, functions):
        params = dipole_default(0.75, n=100)
        scan = generator_residual_scan(
            functions[:1], bloch_grid_25(), before_after(diagonal_observable()),
            params, [100, 400], "jump",
        )
        out = tmp_path / "resid.csv"
        scan.to_csv(out)
        lines = out.read_text().strip().split("\n")
        assert lines[0] == "n,sup_residual,slope_estimate"
        assert len(lines) == 3

    def test_needs_enough_grid_points(self, functions):
        params = dipole_default(0.75, n=100)
        with pytest.raises(ValueError):
            generator_residual_scan(
                functions, bloch_grid_25()[:10], before_after(diagonal_observable()),
                params, [100], "jump",
            )


class TestMartingaleResidual:
    def test_deterministic_path_bias_is_discretization_only(self):
        # an "ensemble" of identical Lindblad paths with a linear f:
        # both limit generators reduce to the drift, so the residual is
        # the Riemann bias, O(dt)
        params = dipole_default(0.75)
        rho0 = rho_from_bloch([0.4, 0.3, -0.2])
        dt = 1e-3
        _, states = integrate_lindblad(rho0, params, SdeConfig(dt=dt, T=1.0))
        ens = np.stack([states, states])
        f = TestFunction.monomial("z")
        res = martingale_residual(ens, dt, f, "diffusive", params, windows=4)
        assert np.max(np.abs(res.means)) < 10 * dt

    def test_jump_ensemble_windows(self):
        params = dipole_default(0.75)
        rho0 = rho_from_bloch([0.0, 0.0, -0.8])
        cfg = SdeConfig(dt=1e-3, T=1.0, seed=55)
        states = collect_jump_paths(rho0, params, cfg, 1000)
        for name in ("z", "zz"):
            res = martingale_residual(
                states, cfg.dt, TestFunction.monomial(name), "jump", params, windows=5
            )
            assert np.max(np.abs(res.z_scores)) < 4.0

    def test_chain_ensemble_with_bias_allowance(self):
        n = 1000
        params = dipole_default(0.75, n=n)
        rho0 = rho_from_bloch([0.0, 0.0, -0.8])
        setup = before_after(diagonal_observable())
        states = collect_chain_paths(rho0, params, setup, n, 1000, seed=66)
        f = TestFunction.monomial("z")
        res = martingale_residual(states, 1.0 / n, f, "jump", params, windows=5)
        scan = generator_residual_scan(
            [f], bloch_grid_25(), setup, params, [n], "jump"
        )
        window_len = 1.0 / 5
        allowance = scan.residuals[0] * window_len
        for mean, se in zip(res.means, res.stderrs):
            assert abs(mean) <= 4 * se + allowance
