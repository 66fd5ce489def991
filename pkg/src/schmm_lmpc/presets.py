"""Published parameter sets and named dynamics templates."""

from __future__ import annotations

import numpy as np

from .schmm import DEFAULT_MASK, SchmmModel

# Offline-trained delay model for an ad-hoc MAS network (3 states, 3 Gaussians + dropout).
REFERENCE_PI = [0.4215, 0.4572, 0.1213]
REFERENCE_TRANS = [
    [0.6832, 0.2079, 0.1089],
    [0.2894, 0.5538, 0.1568],
    [0.1245, 0.3761, 0.4994],
]
REFERENCE_MIX = [
    [0.0221, 0.4528, 0.3647, 0.1604],
    [0.0213, 0.5327, 0.2934, 0.1526],
    [0.0198, 0.5021, 0.3504, 0.1277],
]
REFERENCE_MU = [46.00, 49.85, 58.17, DEFAULT_MASK]
REFERENCE_SIGMA = [0.4149, 1.0733, 2.9872, 0.0001]


def reference_model() -> SchmmModel:
    return SchmmModel(pi=REFERENCE_PI, trans=REFERENCE_TRANS, mix=REFERENCE_MIX,
                      mu=REFERENCE_MU, sigma=REFERENCE_SIGMA, mask=DEFAULT_MASK)


def tetrahedral_thrust() -> np.ndarray:
    """3x4 map from four unit thrusters (tetrahedron vertex directions) to acceleration."""
    d = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float).T
    return d / np.sqrt(3.0)


def double_integrator_3d(ts: float):
    """Zero-order-hold 3-D double integrator, state (p, v), four thrusters.

    Returns ``(A, B, translational)`` with n = 6, m = 4.
    """
    eye = np.eye(3)
    A = np.block([[eye, ts * eye], [np.zeros((3, 3)), eye]])
    D = tetrahedral_thrust()
    B = np.vstack([0.5 * ts * ts * D, ts * D])
    return A, B, (0, 1, 2)


DYNAMICS_TEMPLATES = {"double-integrator-3d": double_integrator_3d}
