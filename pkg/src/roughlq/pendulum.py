"""Cart-mounted inverted pendulum benchmark model.

State vector ``[d, theta, d_dot, theta_dot]`` in deviation coordinates
about the upright equilibrium: ``d`` is cart displacement and ``theta``
the angular deviation.  Reports that quote an absolute angle add the
180-degree equilibrium offset at the reporting layer only; the dynamics
below always operate on deviations.

The physical parameters live in :data:`PENDULUM_PARAMETERS`; the derived
state-space matrices come from the standard linearisation of the
motor-driven cart-pole.  Rounded two-decimal reference matrices are kept
alongside for cross-checking the symbolic derivation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PENDULUM_PARAMETERS", "PendulumModel", "build_pendulum"]


#: Physical parameters (SI units) of the benchmark rig.
PENDULUM_PARAMETERS = {
    "pendulum_mass": 0.1,          # kg, rod mass
    "cart_mass": 0.135,            # kg, bare cart
    "length": 0.2,                 # m, pivot to centre of gravity
    "rotor_inertia": 3.26e-8,      # kg m^2, motor rotor
    "armature_resistance": 12.5,   # ohm
    "back_emf": 0.031,             # V s/rad
    "torque_constant": 0.031,      # N m/A
    "pinion_radius": 0.006,        # m
    "pivot_damping": 0.000078,     # N m s/rad
    "cart_friction": 0.63,         # N s/m
    "rod_inertia": 0.00072,        # kg m^2 about the centre of gravity
    "total_cart_mass": 0.136,      # kg, cart plus reflected rotor inertia
    "gravity": 9.81,               # m/s^2
}

#: Two-decimal reference matrices for the same rig, used to cross-check
#: the derivation below.  Values as published for this benchmark.
A_REFERENCE = np.array(
    [
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 5.51, -18.29, -0.002],
        [0.0, 64.9, -77.53, -0.026],
    ]
)

B_REFERENCE = np.array([[0.0], [0.0], [2.73], [11.59]])

#: Measurement matrix: unit diagonal with 0.1 cross-coupling.
C_MATRIX = 0.1 + 0.9 * np.eye(4)


@dataclass(frozen=True)
class PendulumModel:
    """Derived and reference matrices plus the generating parameters."""

    params: dict
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    A_reference: np.ndarray
    B_reference: np.ndarray


def build_pendulum(params: dict | None = None) -> PendulumModel:
    """Derive the linearised state-space matrices from the parameters.

    Uses the reflected motor inertia ``J_m / r^2`` in the effective cart
    mass (the tabulated total 0.136 kg is this quantity rounded).  The
    denominator is the usual cart-pole determinant
    ``(M + m)(I + m l^2) - (m l)^2``.
    """
    p = dict(PENDULUM_PARAMETERS if params is None else params)
    m = p["pendulum_mass"]
    length = p["length"]
    inertia = p["rod_inertia"]
    g = p["gravity"]
    b = p["pivot_damping"]
    c = p["cart_friction"]
    kt = p["torque_constant"]
    kb = p["back_emf"]
    rm = p["armature_resistance"]
    r = p["pinion_radius"]
    cart = p["cart_mass"] + p["rotor_inertia"] / r**2

    ml = m * length
    j_tot = inertia + m * length**2
    total = cart + m
    det = total * j_tot - ml**2
    drag = c + kt * kb / (rm * r**2)

    a = np.array(
        [
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, ml**2 * g / det, -j_tot * drag / det, -b * ml / det],
            [0.0, m * g * length * total / det, -ml * drag / det, -b * total / det],
        ]
    )
    bvec = np.array(
        [
            [0.0],
            [0.0],
            [j_tot * kt / (det * rm * r)],
            [ml * kt / (det * rm * r)],
        ]
    )
    return PendulumModel(
        params=p,
        A=a,
        B=bvec,
        C=C_MATRIX.copy(),
        A_reference=A_REFERENCE.copy(),
        B_reference=B_REFERENCE.copy(),
    )
