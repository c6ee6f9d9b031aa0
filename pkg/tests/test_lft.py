import numpy as np
import pytest
from scipy import linalg

from artifact.errors import DimensionError, IllPosedError, InputError
from artifact.lft import (
    AffineLpv,
    LftSystem,
    SltvBlock,
    StateSpacePartition,
    UncertaintyStructure,
    affine_to_lft,
    eval_at_delta,
    validate,
)

import oracles


def polynomial_system(a, b=(0.0, 0.0)):
    k = oracles.polynomial_lft_blocks(a, b)
    G = StateSpacePartition.from_blocks(k["A"], k["B1"], k["B2"], k["C1"], k["D11"], k["D12"],
                                        np.zeros((0, 2)), None, None)
    return LftSystem(G, UncertaintyStructure([SltvBlock(1.0, 2)]))


@pytest.fixture
def poly_sys():
    return polynomial_system((0, 0, 1, 1, 0, 0, 1))


class TestValidate:
    def test_polynomial_structure_passes(self, poly_sys):
        rep = validate(poly_sys)
        assert rep.ok, rep.failures
        # D_G11 is strictly lower triangular, so det(I - D_G11 delta) = 1 everywhere
        D11 = poly_sys.G.D_G11
        for d in np.linspace(-1, 1, 11):
            assert np.linalg.det(np.eye(2) - d * D11) == pytest.approx(1.0, abs=1e-15)
        assert rep.worst_ratio > 0.5

    def test_ill_posed(self):
        G = StateSpacePartition.from_blocks([[0.5]], [[1.0]], None, [[1.0]], [[2.0]], None, None, None, None)
        rep = validate(LftSystem(G, UncertaintyStructure([SltvBlock(1.0, 1)])))
        assert not rep.ok
        assert any("well-posedness" in f for f in rep.failures)
        with pytest.raises(IllPosedError):
            rep.raise_if_failed()

    def test_dimension_mismatch(self):
        G = StateSpacePartition(
            A_G=np.eye(2), B_G1=np.zeros((2, 2)), B_G2=np.zeros((2, 1)), C_G1=np.zeros((1, 2)),
            D_G11=np.zeros((1, 1)), D_G12=np.zeros((1, 1)), C_G2=np.zeros((1, 2)), D_G21=np.zeros((1, 1)),
            D_G22=np.zeros((1, 1)),
        )
        rep = validate(LftSystem(G, UncertaintyStructure([SltvBlock(1.0, 1)])))
        assert not rep.ok and not rep.checks["dimensions"]

    def test_nonzero_feedthrough_rejected(self):
        G = StateSpacePartition.from_blocks([[0.5]], None, [[1.0]], None, None, None, [[1.0]], None, None,
                                            [[1.0]], None, [[0.3]])
        rep = validate(LftSystem(G, UncertaintyStructure([])))
        assert not rep.ok and rep.checks["zero_feedthrough"] is False

    @pytest.mark.parametrize("alpha", [0.0, -1.0, np.inf])
    def test_bad_bound(self, alpha):
        with pytest.raises(InputError):
            SltvBlock(alpha, 1)


class TestEvalAtDelta:
    def test_zero_is_nominal_bit_identical(self, scalar_lft):
        ev = eval_at_delta(scalar_lft, [0.0])
        assert np.array_equal(ev.A, scalar_lft.G.A_G)
        assert np.array_equal(ev.B, scalar_lft.G.B_G2)
        assert np.array_equal(ev.C, scalar_lft.G.C_G2)
        assert np.array_equal(ev.D, scalar_lft.G.D_G22)

    def test_polynomial_polynomial(self, poly_sys):
        A = eval_at_delta(poly_sys, [0.5]).A
        assert np.max(np.abs(A - np.array([[0.0, 0.75], [0.0, 0.5]]))) <= 1e-14

    @pytest.mark.parametrize("delta", np.linspace(-1, 1, 9))
    def test_polynomial_general_coefficients(self, delta):
        a = (0.3, -0.2, 0.7, 0.4, 0.1, 0.6, -0.5)
        sysm = polynomial_system(a, (1.0, -1.0))
        ev = eval_at_delta(sysm, [delta])
        assert ev.A == pytest.approx(oracles.polynomial_A(a, delta), abs=1e-14)
        assert ev.B.reshape(-1) == pytest.approx([1.0, -1.0])

    def test_quadratic_term_only_through_feedback(self):
        a = (0, 0, 1, 1, 0, 0, 1)
        sysm = polynomial_system(a)
        G0 = StateSpacePartition(**{**sysm.G.__dict__, "D_G11": np.zeros((2, 2))})
        cut = LftSystem(G0, sysm.delta)
        for d in (-0.8, 0.3, 0.9):
            with_fb = eval_at_delta(sysm, [d]).A[0, 1]
            without = eval_at_delta(cut, [d]).A[0, 1]
            assert with_fb - without == pytest.approx(d * d, abs=1e-14)

    def test_out_of_bounds_rejected(self, scalar_lft):
        with pytest.raises(InputError):
            eval_at_delta(scalar_lft, [1.5])

    def test_wrong_length(self, scalar_lft):
        with pytest.raises(DimensionError):
            eval_at_delta(scalar_lft, [0.1, 0.2])

    def test_two_mass_stiffness(self, two_mass):
        sysm, _ = two_mass
        J1, J2, b, T = 1.0, 0.1, 0.004, 0.1

        def ct(k):
            return np.array([[0, 0, 1, 0], [0, 0, 0, 1], [-k / J1, k / J1, -b / J1, b / J1],
                             [k / J2, -k / J2, b / J2, -b / J2]])

        A1 = eval_at_delta(sysm, [1.0]).A
        # zero-order hold of theta is a first-order approximation of the exact discretization
        assert np.max(np.abs(A1 - linalg.expm(ct(0.1) * T))) < 2e-3
        assert np.max(np.abs(A1 - linalg.expm(ct(0.125) * T))) > 1e-2
        assert sysm.dims.n_G == 4 and sysm.dims.n_theta == 1


class TestAffineToLft:
    def test_no_parameter_dependence(self):
        s = affine_to_lft([np.eye(2), np.zeros((2, 2))], alphas=[1.0])
        assert s.dims.n_theta == 0
        assert validate(s).ok

    def test_scalar(self):
        s = affine_to_lft([[[0.5]], [[0.1]]], alphas=[1.0])
        assert np.all(s.G.D_G11 == 0)
        assert (s.G.B_G1 @ s.G.C_G1)[0, 0] == pytest.approx(0.1, abs=1e-16)
        assert eval_at_delta(s, [1.0]).A[0, 0] == pytest.approx(0.6, abs=1e-15)

    def test_spring_term(self):
        s = affine_to_lft([[[0.075]], [[0.025]]], alphas=[1.0])
        assert s.dims.n_theta == 1
        assert eval_at_delta(s, [-1.0]).A[0, 0] == pytest.approx(0.05, abs=1e-16)

    def test_minimal_copies(self, rng):
        u, v = rng.standard_normal((3, 1)), rng.standard_normal((1, 3))
        s = affine_to_lft([np.zeros((3, 3)), u @ v, np.eye(3)], alphas=[1.0, 1.0])
        assert [b.copies for b in s.delta.blocks] == [1, 3]

    def test_random_roundtrip(self, rng):
        worst = 0.0
        for _ in range(100):
            n, m, nd, ny = rng.integers(1, 7), rng.integers(1, 4), rng.integers(0, 3), rng.integers(0, 3)
            A = [rng.standard_normal((n, n)) for _ in range(m + 1)]
            B = [rng.standard_normal((n, nd)) for _ in range(m + 1)]
            C = [rng.standard_normal((ny, n)) for _ in range(m + 1)]
            D = [rng.standard_normal((ny, nd)) for _ in range(m + 1)]
            alphas = rng.uniform(0.5, 2.0, m)
            s = affine_to_lft(A, B, C, D, alphas)
            d = alphas * rng.uniform(-1, 1, m)
            ev = eval_at_delta(s, d)
            for got, Ms in zip(ev, (A, B, C, D)):
                if got.size:
                    worst = max(worst, np.max(np.abs(got - oracles.affine_eval(Ms, d))))
        assert worst <= 1e-10

    def test_inconsistent_dimensions(self):
        with pytest.raises(InputError):
            affine_to_lft([np.eye(2), np.eye(3)], alphas=[1.0])

    def test_affine_lpv_lifts(self, rng):
        K = AffineLpv([np.eye(2), rng.standard_normal((2, 2))], [np.ones((2, 1)), np.zeros((2, 1))],
                      [np.ones((1, 2)), np.ones((1, 2))], [np.zeros((1, 1))] * 2, [0.5])
        s = K.to_lft()
        for d in (-0.5, 0.2, 0.5):
            ev = eval_at_delta(s, [d])
            for got, want in zip(ev, K.evaluate([d])):
                assert got == pytest.approx(want, abs=1e-12)
