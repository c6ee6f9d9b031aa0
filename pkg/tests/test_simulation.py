import csv
import dataclasses
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from artifact.errors import InputError
from artifact.float_model import affine_update_error
from artifact.io import parse_definition
from artifact.lft import LftSystem, eval_at_delta
from artifact.simulation import (
    dd_dot,
    dump_csv,
    empirical_invariance,
    float_error_audit,
    iqc_residual_audit,
    lpv_overapprox_check,
    simulate_uncertain,
    two_prod,
    two_sum,
)
from artifact.synthesis import Polytope
from conftest import DATA
from test_lft import polynomial_system

import oracles

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-1e150, max_value=1e150)


@pytest.fixture(scope="module")
def affine_ctrl():
    return parse_definition(DATA / "affine_controller.json")


class TestSimulateUncertain:
    def test_zero_delta_is_nominal(self, scalar_lft):
        run = simulate_uncertain(scalar_lft, 50, seed=1, D=Polytope.box([1.0]), delta_policy="constant",
                                 delta_value=[0.0], x0=[0.3])
        x, want = 0.3, []
        for d in run["d"][:, 0]:
            want.append(x)
            x = 0.5 * x + 0.4 * d
        assert run["x"][:, 0].tolist() == want

    def test_zero_input_zero_state(self, scalar_lft):
        run = simulate_uncertain(scalar_lft, 20, seed=2, d_policy="zero")
        assert not np.any(run["x"]) and not np.any(run["y"])

    def test_polynomial_constant_delta(self):
        a = (0.1, 0.2, 0.3, -0.2, 0.4, 0.3, 0.1)
        sysm = polynomial_system(a, (1.0, 0.5))
        run = simulate_uncertain(sysm, 200, seed=5, D=Polytope.box([1.0]), delta_policy="constant",
                                 delta_value=[0.5], x0=[1.0, -1.0])
        ev = eval_at_delta(sysm, [0.5])
        assert ev.A == pytest.approx(oracles.polynomial_A(a, 0.5), abs=1e-15)
        x = np.array([1.0, -1.0])
        for k in range(run.horizon):
            assert run["x"][k] == pytest.approx(x, abs=1e-12)
            x = ev.A @ x + ev.B @ run["d"][k]

    def test_bad_policy(self, scalar_lft):
        with pytest.raises(InputError):
            simulate_uncertain(scalar_lft, 5, delta_policy="sometimes")

    def test_inadmissible_constant_rejected(self, scalar_lft):
        with pytest.raises(InputError):
            simulate_uncertain(scalar_lft, 5, delta_policy="constant", delta_value=[1.1], d_policy="zero")

    def test_seed_determinism(self, scalar_lft):
        D = Polytope.box([1.0])
        a = simulate_uncertain(scalar_lft, 100, seed=9, D=D, d_policy="random-in-polytope")
        b = simulate_uncertain(scalar_lft, 100, seed=9, D=D, d_policy="random-in-polytope")
        assert np.array_equal(a["x"], b["x"]) and np.array_equal(a["d"], b["d"])


class TestEmpiricalInvariance:
    def test_hand_certificate(self, scalar_H, hand_cert, unit_box):
        rep = empirical_invariance(scalar_H, hand_cert, unit_box, runs=50, horizon=200, seed=0)
        assert rep.ok and rep.max_level <= 1 + 1e-12
        assert rep.steps == 50 * 200

    def test_shrunk_ellipsoid_caught(self, scalar_H, hand_cert, unit_box):
        # run 1 starts with d = +1: 0.5 * 0.5 + 0.5 * 1 = 0.75 > 0.5
        rep = empirical_invariance(scalar_H, hand_cert, unit_box, runs=2, horizon=1, P=4 * np.eye(1),
                                   x0=[0.5])
        assert not rep.ok
        run, step, level = rep.violations[0]
        assert (run, step) == (1, 0) and level == pytest.approx(4 * 0.75 ** 2)

    def test_oracle_trajectory(self, scalar_H, hand_cert, unit_box):
        rep = empirical_invariance(scalar_H, hand_cert, unit_box, runs=1, horizon=10, x0=[1.0])
        lev = oracles.scalar_worst_level(0.5, 0.5, 1.0, 1.0, [-1.0, 1.0] * 5)
        assert rep.max_level == pytest.approx(max(lev), abs=1e-15)

    def test_lyapunov_decay(self, scalar_H):
        run = simulate_uncertain(scalar_H.source, 30, d_policy="zero", x0=[1.0])
        lev = run["x"][:, 0] ** 2
        assert np.all(np.diff(lev) < 0)

    def test_uncertain_certificate(self, scalar_result):
        model, res = scalar_result
        rep = empirical_invariance(model.H, res.cert, model.D, runs=20, horizon=300, seed=4,
                                   output_Q=res.output_cert.Q)
        assert rep.ok
        assert rep.max_output_level <= 1 + 1e-7
        assert rep.min_residual >= -1e-12


class TestResidualAudit:
    S = np.diag([1.0, -1.0])  # X = 1, Y = 0, alpha = 1

    def test_boundary(self, scalar_lft):
        run = simulate_uncertain(scalar_lft, 100, seed=1, D=Polytope.box([1.0]), delta_policy="constant",
                                 delta_value=[1.0], x0=[0.7])
        assert abs(iqc_residual_audit(run, self.S)) <= 1e-15

    def test_zero_delta(self, scalar_lft):
        run = simulate_uncertain(scalar_lft, 100, seed=1, D=Polytope.box([1.0]), delta_policy="constant",
                                 delta_value=[0.0], x0=[0.7])
        want = min(oracles.sltv_quadratic(1.0, 0.0, [[1.0]], [p]) for p in run["phi"][:, 0])
        assert iqc_residual_audit(run, self.S) == pytest.approx(want, abs=1e-15)
        assert want >= 0

    def test_inadmissible_delta_detected(self, scalar_lft):
        run = simulate_uncertain(scalar_lft, 100, seed=1, D=Polytope.box([1.0]), delta_policy="constant",
                                 delta_value=[1.1], allow_inadmissible=True, x0=[0.7])
        got = iqc_residual_audit(run, self.S)
        assert got < 0
        phi = run["phi"][:, 0]
        assert got == pytest.approx(min(oracles.sltv_quadratic(1.0, 1.1, [[1.0]], [p]) for p in phi))

    @pytest.mark.parametrize("policy", ["random-admissible", "vertex-switching"])
    def test_admissible_runs_nonnegative(self, scalar_lft, policy):
        run = simulate_uncertain(scalar_lft, 500, seed=3, D=Polytope.box([1.0]), delta_policy=policy)
        assert iqc_residual_audit(run, self.S) >= -1e-15


class TestLpvCheck:
    def test_lifted_affine_controller(self, affine_ctrl):
        rep = lpv_overapprox_check(affine_ctrl.to_lft(), affine_ctrl, samples=2000, seed=0)
        assert rep.ok
        assert rep.max_mismatch <= 1e-12
        assert rep.min_residual >= -1e-12

    def test_perturbed_lift_reported(self, affine_ctrl):
        lft = affine_ctrl.to_lft()
        G = lft.G
        D11 = G.D_G11.copy()
        D11[0, -1] += 0.1
        bad = LftSystem(dataclasses.replace(G, D_G11=D11), lft.delta)
        rep = lpv_overapprox_check(bad, affine_ctrl, samples=200, seed=0)
        assert not rep.ok
        assert rep.counterexample is not None and rep.counterexample["mismatch"] > 1e-9


class TestErrorFreeTransforms:
    @settings(max_examples=300, deadline=None)
    @given(finite, finite)
    def test_two_sum(self, a, b):
        s, e = two_sum(a, b)
        assert Fraction(s) + Fraction(e) == Fraction(a) + Fraction(b)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(min_value=-1e100, max_value=1e100, allow_nan=False),
           st.floats(min_value=-1e100, max_value=1e100, allow_nan=False))
    def test_two_prod(self, a, b):
        p, e = two_prod(a, b)
        if p != 0 and abs(p) > 1e-200:
            assert Fraction(p) + Fraction(e) == Fraction(a) * Fraction(b)

    def test_dd_dot_close_to_exact(self, rng):
        c = rng.standard_normal(8)
        X = rng.standard_normal((50, 8))
        hi, lo = dd_dot(c, X)
        for k in range(50):
            exact = oracles.exact_dot(c, X[k])
            assert abs(Fraction(hi[k]) + Fraction(lo[k]) - exact) <= Fraction(2.0 ** -100) * (1 + abs(exact))


class TestFloatAudit:
    def test_within_bound(self, rng):
        M = rng.standard_normal((3, 6))
        b = np.full(6, 2.0)
        V = rng.uniform(-2, 2, (2000, 6))
        rep = float_error_audit(M, V, b)
        assert rep.ok
        np.testing.assert_array_equal(rep.bound, affine_update_error(M, None, b, None).e)
        assert np.all(rep.max_error <= rep.bound)

    def test_errors_observed(self, rng):
        M = rng.standard_normal((2, 5))
        V = rng.uniform(-1, 1, (2000, 5))
        rep = float_error_audit(M, V, np.ones(5))
        assert np.all(rep.max_error > 0)

    def test_inputs_outside_box(self):
        with pytest.raises(InputError):
            float_error_audit(np.eye(2), [[3.0, 0.0]], [1.0, 1.0])


class TestCsv:
    def test_dump(self, scalar_lft, tmp_path):
        run = simulate_uncertain(scalar_lft, 25, seed=6, D=Polytope.box([1.0]))
        path = tmp_path / "run.csv"
        dump_csv(run, path)
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k", "x1", "delta1", "d1", "phi1", "theta1", "r1", "r2", "y1"]
        assert len(rows) == 26
        assert [float(v) for v in rows[7][1:]] == pytest.approx(
            [run[k][6][i] for k in ("x", "delta", "d", "phi", "theta") for i in range(1)]
            + list(run["r"][6]) + list(run["y"][6]), abs=0)
