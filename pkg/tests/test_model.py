import json

import numpy as np
import pytest

from qtraj.algebra import dagger, frobenius, herm_expm
from qtraj.model import (
    ModelParams,
    Observable,
    build_total_hamiltonian,
    build_unitary_blocks,
    diagonal_observable,
    dipole_default,
    gibbs_p,
    params_from_json,
    params_to_json,
    symmetric_observable,
)


def random_params(rng, n=50):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    h0 = 0.5 * (a + a.conj().T)
    c = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    return ModelParams(
        h0=h0, c=c, gamma0=rng.uniform(0, 1), gamma1=rng.uniform(1, 2),
        p=rng.uniform(0.1, 0.9), n=n,
    )


class TestGibbs:
    def test_degenerate_levels(self):
        assert gibbs_p(2.0, 1.3, 1.3) == pytest.approx(0.5, abs=1e-15)

    def test_zero_temperature_limit(self):
        assert gibbs_p(1e6, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_closed_form(self):
        assert gibbs_p(1.0, 0.0, np.log(3.0)) == pytest.approx(0.75, abs=1e-14)

    def test_rejects_nonpositive_beta(self):
        with pytest.raises(ValueError):
            gibbs_p(0.0, 0.0, 1.0)

    def test_monotone_in_temperature(self):
        # ground weight grows with beta (colder -> closer to ground),
        # i.e. strictly decreasing in the temperature 1/beta
        betas = np.linspace(0.1, 5.0, 20)
        ps = [gibbs_p(b, 0.0, 1.0) for b in betas]
        assert all(a < b for a, b in zip(ps, ps[1:]))
        assert all(0.5 < p < 1.0 for p in ps)

    def test_overflow_safe(self):
        assert 0.0 < gibbs_p(1e8, 500.0, 501.0) <= 1.0


class TestTotalHamiltonian:
    def test_free_evolution(self):
        params = ModelParams(
            h0=np.zeros((2, 2)), c=np.zeros((2, 2)), gamma0=0.3, gamma1=1.7,
            p=0.5, n=10,
        )
        h = build_total_hamiltonian(params)
        assert frobenius(h - np.diag([0.3, 0.3, 1.7, 1.7])) < 1e-14

    def test_dipole_hand_assembly(self):
        params = dipole_default(0.5, n=1)
        h = build_total_hamiltonian(params)
        # sqrt(1) C x |e1><e0| puts a 1 at (system 0, env 1) <- (system 1, env 0)
        expect = np.zeros((4, 4), dtype=complex)
        expect[2, 2] = expect[3, 3] = 1.0  # I x diag(0, 1)
        expect[2, 1] = expect[1, 2] = 1.0  # coupling block
        assert frobenius(h - expect) < 1e-14

    def test_hermitian(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            h = build_total_hamiltonian(random_params(rng))
            assert frobenius(h - dagger(h)) < 1e-13


class TestUnitaryBlocks:
    def test_no_coupling_blocks(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        h0 = 0.5 * (a + a.conj().T)
        params = ModelParams(
            h0=h0, c=np.zeros((2, 2)), gamma0=0.2, gamma1=1.1, p=0.5, n=7,
        )
        blocks = build_unitary_blocks(params)
        assert frobenius(blocks[0, 1]) < 1e-14
        assert frobenius(blocks[1, 0]) < 1e-14
        free = herm_expm(h0, 1.0 / 7)
        for b, gamma in ((0, 0.2), (1, 1.1)):
            expect = np.exp(-1j * gamma / 7) * free
            assert frobenius(blocks[b, b] - expect) < 1e-13

    def test_dipole_first_order(self):
        n = 10**4
        params = dipole_default(0.75, n=n)
        blocks = build_unitary_blocks(params)
        assert frobenius(np.sqrt(n) * blocks[1, 0] + 1j * params.c) <= 10.0 / n

    def test_unitarity_relations(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            blocks = build_unitary_blocks(random_params(rng, n=rng.integers(1, 200)))
            assert blocks.unitarity_defect() < 1e-12

    def test_block_scaling(self):
        # ||L10(n)|| decays like n^{-1/2} (the sqrt(n)-coupling order);
        # ||L00(n) - I|| decays like 1/n (leading correction is W/n)
        params0 = dipole_default(0.5, n=100)
        norms_corner = []
        norms_diag = []
        ns = [10**2, 10**3, 10**4, 10**5]
        for n in ns:
            params = ModelParams(
                h0=params0.h0, c=params0.c, gamma0=0.0, gamma1=1.0, p=0.5, n=n,
            )
            blocks = build_unitary_blocks(params)
            norms_corner.append(frobenius(blocks[1, 0]))
            norms_diag.append(frobenius(blocks[0, 0] - np.eye(2)))
        slope_corner = np.polyfit(np.log(ns), np.log(norms_corner), 1)[0]
        slope_diag = np.polyfit(np.log(ns), np.log(norms_diag), 1)[0]
        assert -0.6 < slope_corner < -0.4
        assert -1.1 < slope_diag < -0.9


class TestDipole:
    def test_lowering_action(self):
        c = dipole_default(0.5).c
        assert np.allclose(c @ np.array([0, 1]), np.array([1, 0]))
        assert np.allclose(c @ np.array([1, 0]), np.array([0, 0]))

    def test_jump_targets(self):
        rng = np.random.default_rng(3)
        c = dipole_default(0.5).c
        for _ in range(5):
            a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            rho = a @ a.conj().T
            rho /= np.trace(rho).real
            emit = c @ rho @ dagger(c)
            absorb = dagger(c) @ rho @ c
            assert frobenius(emit / np.trace(emit).real - np.diag([1.0, 0.0])) < 1e-14
            assert frobenius(absorb / np.trace(absorb).real - np.diag([0.0, 1.0])) < 1e-14


class TestObservable:
    def test_projector_validation(self):
        with pytest.raises(ValueError):
            Observable(0.0, 1.0, np.eye(2), np.eye(2))
        with pytest.raises(ValueError):
            Observable(1.0, 1.0, np.diag([1.0, 0]), np.diag([0, 1.0]))

    def test_factories(self):
        assert diagonal_observable().is_diagonal()
        assert not symmetric_observable().is_diagonal()
        q0, q1 = symmetric_observable().projectors
        assert frobenius(q0 @ q0 - q0) < 1e-14
        assert frobenius(q0 + q1 - np.eye(2)) < 1e-14


class TestSerialization:
    def test_roundtrip_with_p(self):
        rng = np.random.default_rng(4)
        params = random_params(rng)
        back = params_from_json(params_to_json(params))
        assert frobenius(back.h0 - params.h0) < 1e-15
        assert frobenius(back.c - params.c) < 1e-15
        assert back.p == pytest.approx(params.p, abs=1e-15)
        assert back.n == params.n

    def test_roundtrip_with_beta(self):
        params = ModelParams.from_beta(
            np.zeros((2, 2)), dipole_default(0.5).c, 0.0, 1.0, beta=1.3, n=9,
        )
        back = params_from_json(params_to_json(params))
        assert back.beta == pytest.approx(1.3)
        assert back.p == pytest.approx(params.p, abs=1e-15)

    def test_requires_exactly_one_weight_key(self):
        doc = json.loads(params_to_json(dipole_default(0.5)))
        doc["beta"] = 1.0
        with pytest.raises(ValueError):
            params_from_json(doc)
        del doc["beta"]
        del doc["p"]
        with pytest.raises(ValueError):
            params_from_json(doc)

    def test_validation(self):
        with pytest.raises(ValueError):
            ModelParams(
                h0=np.array([[0.0, 1.0], [0.0, 0.0]]), c=np.zeros((2, 2)),
                gamma0=0.0, gamma1=1.0, p=0.5, n=5,
            )
        with pytest.raises(ValueError):
            dipole_default(1.5)
