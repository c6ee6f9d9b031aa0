"""Regenerate the JSON fixtures in this directory: ``python3 tests/data/make_fixtures.py``."""

from pathlib import Path

import numpy as np
from scipy import linalg, signal

from artifact.augmentation import LtiController
from artifact.io import FORMAT_VERSION, controller_to_json, dump_json, system_to_json
from artifact.lft import AffineLpv, LftSystem, SltvBlock, StateSpacePartition, UncertaintyStructure

HERE = Path(__file__).parent

# two-mass-spring-damper constants
J1, J2, B_DAMP, K0, K1, TS = 1.0, 0.1, 0.004, 0.075, 0.025, 0.1
POLES_K, POLES_L = 0.8, 0.5


def scalar_system() -> LftSystem:
    """x+ = (0.5 + 0.1 delta) x + 0.4 d, y = x, |delta| <= 1."""
    G = StateSpacePartition.from_blocks([[0.5]], [[0.1]], [[0.4]], [[1.0]], None, None, [[1.0]], None, None)
    return LftSystem(G, UncertaintyStructure([SltvBlock(1.0, 1)]), name="scalar")


def two_mass_plant():
    """Zero-order-hold discretization of the two-mass plant with spring k_s = K0 + K1 delta.

    States (theta1, theta2, omega1, omega2); the uncertainty enters as
    theta_unc = delta * (theta1 - theta2); d and u act on mass 1.
    """
    A = np.array([[0, 0, 1, 0], [0, 0, 0, 1],
                  [-K0 / J1, K0 / J1, -B_DAMP / J1, B_DAMP / J1],
                  [K0 / J2, -K0 / J2, B_DAMP / J2, -B_DAMP / J2]])
    Bt = K1 * np.array([[0], [0], [-1 / J1], [1 / J2]])
    Bd = np.array([[0], [0], [1 / J1], [0]])
    M = np.zeros((7, 7))
    M[:4, :4] = A
    M[:4, 4:] = np.hstack([Bt, Bd, Bd])
    E = linalg.expm(M * TS)
    Ad, Bdisc = E[:4, :4], E[:4, 4:]
    Cphi = np.array([[1.0, -1.0, 0.0, 0.0]])
    Cy = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    return Ad, Bdisc[:, [0]], Bdisc[:, [1]], Bdisc[:, [2]], Cphi, Cy


def two_mass_system() -> LftSystem:
    Ad, B1, B2, B3, Cphi, Cy = two_mass_plant()
    G = StateSpacePartition.from_blocks(Ad, B1, B2, Cphi, None, None, Cy, None, None, B3)
    return LftSystem(G, UncertaintyStructure([SltvBlock(1.0, 1)]), name="two-mass")


def two_mass_controller() -> LtiController:
    """Observer-based state feedback by pole placement on the nominal plant."""
    Ad, _, _, B3, _, Cy = two_mass_plant()
    pk = [POLES_K - 0.02 * i for i in range(4)]
    pl = [POLES_L - 0.02 * i for i in range(4)]
    K = signal.place_poles(Ad, B3, pk).gain_matrix
    L = signal.place_poles(Ad.T, Cy.T, pl).gain_matrix.T
    return LtiController(Ad - B3 @ K - L @ Cy, L, -K, np.zeros((1, 2)))


def affine_controller() -> AffineLpv:
    """Two-parameter gain-scheduled variant of the two-mass controller."""
    K = two_mass_controller()
    g = np.random.default_rng(7)
    A = [K.A_c, 0.01 * g.standard_normal((4, 4)), 0.01 * g.standard_normal((4, 4))]
    B = [K.B_c, 0.02 * g.standard_normal((4, 2)), np.zeros((4, 2))]
    C = [K.C_c, 0.05 * g.standard_normal((1, 4)), 0.05 * g.standard_normal((1, 4))]
    D = [K.D_c, np.zeros((1, 2)), 0.1 * g.standard_normal((1, 2))]
    return AffineLpv(A, B, C, D, [1.0, 0.5])


def configs() -> dict:
    base = {"format_version": FORMAT_VERSION, "kind": "config", "grid": 21, "margin": 1e-9, "seed": 0,
            "simulation": {"runs": 100, "horizon": 1000}}
    return {
        "scalar_local.json": {**base, "system": "scalar_system.json", "polytope": {"box": [1.0]},
                              "mode": "real", "contract": "local"},
        "two_mass_ghost.json": {**base, "system": "two_mass_system.json", "controller": "two_mass_controller.json",
                                "polytope": {"box": [1.0]}, "mode": "real", "contract": "ghost"},
        "affine_lpv.json": {**base, "system": "scalar_system.json", "controller": "affine_controller.json",
                            "polytope": {"box": [1.0]}, "mode": "real", "contract": "local"},
    }


def main():
    dump_json(system_to_json(scalar_system()), HERE / "scalar_system.json")
    dump_json(system_to_json(two_mass_system()), HERE / "two_mass_system.json")
    dump_json(controller_to_json(two_mass_controller()), HERE / "two_mass_controller.json")
    dump_json(controller_to_json(affine_controller()), HERE / "affine_controller.json")
    for name, obj in configs().items():
        dump_json(obj, HERE / name)


if __name__ == "__main__":
    main()
