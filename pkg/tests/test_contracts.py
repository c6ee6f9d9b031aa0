import re

import numpy as np
import pytest

from artifact.augmentation import LtiController, close_loop
from artifact.contracts import (
    ContractSpec,
    evaluate_predicate,
    fmt,
    gen_predicates,
    generate,
    parse_expression,
    structural_verify,
)
from artifact.errors import ContractError
from artifact.float_model import shrink_factor
from artifact.lft import LftSystem, StateSpacePartition, UncertaintyStructure
from artifact.pipeline import contract_spec
from artifact.synthesis import EllipsoidCertificate, OutputCertificate, Polytope
from conftest import augment
from oracles import shrink_alpha


def cert(P, S_x=None):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    S = np.zeros((0, 0)) if S_x is None else np.atleast_2d(np.asarray(S_x, dtype=float))
    return EllipsoidCertificate(P, S, [], 0.5)


def out_cert(Q, n_r=0):
    return OutputCertificate(np.atleast_2d(np.asarray(Q, dtype=float)), np.zeros((n_r, n_r)), [], 0.5)


def controlled_scalar(K=None):
    """``x+ = 0.5 x + 0.5 d + 0.2 u``, ``y = x`` closed with a one-state controller."""
    G = StateSpacePartition.from_blocks([[0.5]], None, [[0.5]], None, None, None, [[1.0]], None, None, [[0.2]])
    H = augment(LftSystem(G, UncertaintyStructure([]), name="scalar-controlled"))
    K = K or LtiController([[0.1]], [[0.2]], [[-0.3]], [[-0.4]])
    return close_loop(H, K)


@pytest.fixture
def local_spec(scalar_H):
    return ContractSpec("local", "real", scalar_H, cert(1.0), [1.0], out_cert(1.0))


@pytest.fixture
def ghost_spec():
    CL = controlled_scalar()
    return ContractSpec("ghost", "float", CL, cert([[1.0, 0.1], [0.1, 2.0]]), [1.0], alpha=0.999, e_u=1e-15)


class TestLiterals:
    @pytest.mark.parametrize("v", [1.0, 0.1, -0.3, 1 / 3, 1e-300, 5e-324, 2.0 ** 60, 0.1 + 0.2])
    def test_round_trip(self, v):
        assert float(fmt(v)) == v

    def test_negative_zero_prints_as_zero(self):
        assert fmt(-0.0) == "0.0"

    @pytest.mark.parametrize("v", [np.inf, np.nan])
    def test_non_finite_rejected(self, v):
        with pytest.raises(ContractError):
            fmt(v)


class TestPredicates:
    def test_scalar_state_ellip(self):
        (line, *_rest) = gen_predicates(cert(1.0))
        assert line == "//@ predicate state_ellip(real x1, real lambda) = 1.0 * x1 * x1 <= lambda;"

    def test_pwiqc_diag(self):
        lines = gen_predicates(cert(1.0, np.diag([1.0, -1.0])))
        assert "1.0 * r1 * r1 + -1.0 * r2 * r2 >= 0" in lines[1]

    def test_doubled_cross_term(self):
        line = gen_predicates(cert([[1.0, 0.5], [0.5, 2.0]]))[0]
        assert "1.0 * x1 * x2" in line
        assert line.count("x1 * x2") == 1

    def test_output_and_pwiqc_output(self):
        lines = gen_predicates(cert(1.0), out_cert(4.0))
        names = [re.search(r"predicate (\w+)", ln).group(1) for ln in lines]
        assert names == ["state_ellip", "output_ellip", "pwIQC_state", "pwIQC_output"]

    def test_name_collision(self):
        with pytest.raises(ContractError, match="collision"):
            gen_predicates(cert(1.0), names={"pwIQC_state": "state_ellip"})

    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_semantic_agreement(self, n, rng, local_spec):
        A = rng.standard_normal((n, n))
        P = A @ A.T + n * np.eye(n)
        text = "\n".join(gen_predicates(cert(P)))
        pts = rng.standard_normal((1000, n)) * 3
        got = np.array([evaluate_predicate(text, "state_ellip", x) for x in pts])
        want = np.einsum("ij,jk,ik->i", pts, P, pts)
        assert np.max(np.abs(got - want) / np.maximum(1.0, np.abs(want))) <= 1e-12


class TestParser:
    @pytest.mark.parametrize("expr,env,want", [
        ("1.0 * x1 + -2.5 * x2", {"x1": 2.0, "x2": 1.0}, -0.5),
        ("(x1 + 1.0) * (x1 - 1.0)", {"x1": 3.0}, 8.0),
        ("-x1 * -x1", {"x1": 2.0}, 4.0),
        ("0.0", {}, 0.0),
    ])
    def test_evaluate(self, expr, env, want):
        assert parse_expression(expr).evaluate(env) == want

    def test_garbage_raises(self):
        with pytest.raises(ContractError):
            parse_expression("1.0 * * x")


class TestLocal:
    def test_real_template(self, local_spec):
        text = generate(local_spec).text
        assert "ensures state_ellip(\\old(x->x1), 1) ==> state_ellip(x->x1, 1);" in text
        assert "behavior polytope_input_real_model:" in text
        assert "polytope_input_float_model" not in text
        assert "assumes -1.0 <= d1 <= 1.0;" in text
        assert "x->x1 = 0.5 * pre_x1 + 0.5 * d1;" in text

    def test_float_level_literal(self, scalar_H):
        a = shrink_factor(np.eye(1), 2, 1e-7)
        assert a == pytest.approx(shrink_alpha(1.0, 1.0, 2, 1e-7), abs=1e-15)
        assert abs(a - (1 - 4e-7)) < 1e-13
        spec = ContractSpec("local", "float", scalar_H, cert(1.0), [1.0], out_cert(1.0), alpha_x=a, alpha_y=a)
        text = generate(spec).text
        assert f"state_ellip(x->x1, {repr(a)});" in text
        assert f"output_ellip(y->y1, {repr(a)});" in text

    def test_two_disturbances(self):
        G = StateSpacePartition.from_blocks([[0.5]], None, [[0.25, 0.25]], None, None, None, None, None, None)
        H = augment(LftSystem(G, UncertaintyStructure([])))
        text = generate(ContractSpec("local", "real", H, cert(1.0), [1.0, 2.0])).text
        assume = re.findall(r"assumes (.*);", text)
        assert assume == ["-1.0 <= d1 <= 1.0", "-2.0 <= d2 <= 2.0"]

    def test_deterministic(self, local_spec):
        assert generate(local_spec).text.encode() == generate(local_spec).text.encode()

    def test_float_needs_shrink_factors(self, scalar_H):
        with pytest.raises(ContractError, match="alpha_x"):
            ContractSpec("local", "float", scalar_H, cert(1.0), [1.0], out_cert(1.0))

    def test_missing_output_cert(self, scalar_H):
        with pytest.raises(ContractError, match="output certificate"):
            ContractSpec("local", "real", scalar_H, cert(1.0), [1.0])

    def test_uncertain_system_verifies(self, scalar_result):
        model, res = scalar_result
        spec = ContractSpec("local", "real", model.H, res.cert, model.D.box_bounds(), res.output_cert)
        rep = structural_verify(generate(spec), spec)
        assert rep.ok, rep.failures
        assert set(rep.checks) == {"arity", "coefficients", "clauses", "ghost_hygiene"}


class TestGhost:
    def test_template(self, ghost_spec):
        text = generate(ghost_spec).text
        assert text.count("\\forall real l_1;") == 1
        assert f"u->u1 + l_1 * {fmt(1e-15)}" in text
        assert "/*@ ghost (double x1, double d1) */" in text
        assert "requires y1 == 1.0 * x1;" in text
        assert "logic real update_x1(real pre_x1, real d1, real u1) =" in text

    def test_verifies(self, ghost_spec):
        rep = structural_verify(generate(ghost_spec), ghost_spec)
        assert rep.ok, rep.failures

    def test_zero_controller(self):
        CL = controlled_scalar(LtiController([[0.0]], [[0.0]], [[0.0]], [[0.0]]))
        spec = ContractSpec("ghost", "real", CL, cert(np.eye(2)), [1.0])
        src = generate(spec)
        assert "u->u1 = 0.0;" in src.text and "xc->x1 = 0.0;" in src.text
        assert "requires state_ellip(x1, xc->x1, 1);" in src.text
        assert structural_verify(src, spec).ok

    def test_float_needs_e_u(self):
        with pytest.raises(ContractError, match="e_u"):
            ContractSpec("ghost", "float", controlled_scalar(), cert(np.eye(2)), [1.0], alpha=0.9)

    def test_local_system_rejected(self, scalar_H):
        with pytest.raises(ContractError, match="closed-loop"):
            ContractSpec("ghost", "real", scalar_H, cert(1.0), [1.0])

    def test_two_mass_shapes(self, two_mass_result):
        model, res = two_mass_result
        CL = model.CL
        spec = ContractSpec("ghost", "real", CL, res.cert, model.D.box_bounds())
        src = generate(spec)
        assert len(src.manifest["logic"]) == CL.plant.n_x == 4
        assert CL.controller.n_c == 4
        m = re.search(r"/\*@ ghost \((.*?)\) \*/", src.text)
        ghost = [a.split()[-1] for a in m.group(1).split(", ")]
        assert ghost == ["x1", "x2", "x3", "x4", "theta1", "d1"]
        assert structural_verify(src, spec).ok


class TestStructuralVerify:
    def test_tampered_coefficient(self, local_spec):
        src = generate(local_spec)
        src.text = src.text.replace("x->x1 = 0.5 * pre_x1", "x->x1 = 0.5000000000000001 * pre_x1")
        rep = structural_verify(src, local_spec)
        assert not rep.ok and not rep.checks["coefficients"]
        assert any("0.5000000000000001" in f for f in rep.failures)

    def test_tampered_predicate(self, local_spec):
        src = generate(local_spec)
        src.text = src.text.replace("= 1.0 * x1 * x1 <= lambda", "= 1.01 * x1 * x1 <= lambda")
        rep = structural_verify(src, local_spec)
        assert any("predicate state_ellip" in f and "1.01" in f for f in rep.failures)

    def test_missing_clause(self, local_spec):
        src = generate(local_spec)
        src.text = src.text.replace("assigns *x;\n", "")
        rep = structural_verify(src, local_spec)
        assert not rep.checks["clauses"]

    def test_ghost_injection(self, ghost_spec):
        src = generate(ghost_spec)
        src.text = src.text.replace("u->u1 = ", "u->u1 = x1 + ", 1)
        rep = structural_verify(src, ghost_spec)
        assert not rep.checks["ghost_hygiene"]
        assert any("'x1'" in f for f in rep.failures)


class TestPipelineSpec:
    def test_non_box_polytope(self, scalar_result):
        model, res = scalar_result
        m2 = type(model)(model.sys, Polytope(np.array([[-1.0], [0.0], [0.5]])), model.H)
        certfile = {"state": res.cert, "output": res.output_cert}
        with pytest.raises(ContractError, match="box"):
            contract_spec(m2, certfile, "real")

    def test_float_without_float_section(self, scalar_result):
        model, res = scalar_result
        with pytest.raises(ContractError, match="float"):
            contract_spec(model, {"state": res.cert, "output": res.output_cert}, "float")
