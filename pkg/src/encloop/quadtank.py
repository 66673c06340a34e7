"""Quadruple-tank benchmark (Johansson 2000), discretized at 1 s.

Linearization around levels (12.4, 12.7, 1.8, 1.4) cm with pump voltages
at 3 V and valve splits 0.7/0.6; states are level deviations, inputs are
pump voltage deviations, outputs are the k_c = 0.5 V/cm level sensors on
tanks 1 and 2.  The decentralized PI controller below closes both loops.
"""

import numpy as np

from .histfb import Plant, StateSpaceController

SENSOR_GAIN = 0.5  # V per cm of level

A_P = np.array(
    [
        [0.9842, 0.0, 0.0407, 0.0],
        [0.0, 0.9890, 0.0, 0.0326],
        [0.0, 0.0, 0.9590, 0.0],
        [0.0, 0.0, 0.0, 0.9672],
    ]
)
B_P = np.array(
    [
        [0.0826, 0.0010],
        [0.0005, 0.0625],
        [0.0, 0.0469],
        [0.0307, 0.0],
    ]
)
C_P = np.array([[0.5, 0.0, 0.0, 0.0], [0.0, 0.5, 0.0, 0.0]])

PI_A = np.eye(2)
PI_B = -np.eye(2)
PI_C = np.array([[0.1, 0.0], [0.0, 0.0675]])
PI_D = np.array([[-3.0, 0.0], [0.0, -2.7]])
PI_E = np.eye(2)
PI_F = np.array([[3.0, 0.0], [0.0, 2.7]])

DATA_LENGTH = 2
DELTA_K = 2e-4
DELTA_D = 1e-3
NOISE_VARIANCE = 1e-3
INITIAL_STATE = np.ones(4)
TOTAL_STEPS = 1400

# piecewise-constant reference: zero for 600 s, then +/-[0.5 0.5] every 200 s
REFERENCE_SEGMENTS = [
    (0, [0.0, 0.0]),
    (600, [0.5, 0.5]),
    (800, [-0.5, -0.5]),
    (1000, [0.5, 0.5]),
    (1200, [-0.5, -0.5]),
]


# history-feedback gain of the PI design at L=2, rounded to 4 decimals
# (regression reference for the transform)
EXPECTED_GAIN = np.array(
    [
        [-1.45, 0, -1.4, 0, 3.0, 0, 1.45, 0, 1.4, 0, -3.0, 0, 0.5, 0, 0.5, 0],
        [0, -1.3163, 0, -1.2825, 0, 2.7, 0, 1.3163, 0, 1.2825, 0, -2.7, 0, 0.5, 0, 0.5],
    ]
)


def plant():
    return Plant(A=A_P, B=B_P, C=C_P)


def controller():
    return StateSpaceController(A=PI_A, B=PI_B, C=PI_C, D=PI_D, E=PI_E, F=PI_F)


def reference_schedule(steps=TOTAL_STEPS, segments=None):
    """Expand piecewise-constant segments [(t_start, r), ...] to a (T, q) array."""
    segments = REFERENCE_SEGMENTS if segments is None else segments
    segments = sorted((int(t), np.asarray(r, dtype=float)) for t, r in segments)
    q = len(segments[0][1])
    refs = np.zeros((steps, q))
    for start, r in segments:
        if start < steps:
            refs[start:] = r
    return refs


def reference_bound(refs):
    """sup_t ||r_t|| over a schedule."""
    return float(np.max(np.linalg.norm(np.atleast_2d(refs), axis=1)))
