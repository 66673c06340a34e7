"""Random controller/plant ensembles shared by the unit and acceptance suites."""

import numpy as np

from encloop.errors import ParameterError
from encloop.histfb import Plant, StateSpaceController


def random_controller(rng, p, q, l, m):
    """Observable random controller with tame gains."""
    while True:
        A = rng.normal(0, 1, (p, p))
        if p:
            radius = max(abs(np.linalg.eigvals(A)))
            if radius > 0:
                A *= 0.9 / radius
        B = rng.normal(0, 0.3, (p, l))
        C = rng.normal(0, 0.3, (m, p))
        D = rng.normal(0, 0.2, (m, l))
        E = rng.normal(0, 0.3, (p, q))
        F = rng.normal(0, 0.2, (m, q))
        try:
            return StateSpaceController(A=A, B=B, C=C, D=D, E=E, F=F)
        except ParameterError:
            continue


def random_stable_plant(rng, n, m, l):
    A = rng.normal(0, 1, (n, n))
    A *= 0.85 / max(abs(np.linalg.eigvals(A)))
    return Plant(A=A, B=rng.normal(0, 0.5, (n, m)), C=rng.normal(0, 0.5, (l, n)))


def closed_loop_radius(plant, ctrl):
    if ctrl.p:
        M = np.block(
            [
                [plant.A + plant.B @ ctrl.D @ plant.C, plant.B @ ctrl.C],
                [ctrl.B @ plant.C, ctrl.A],
            ]
        )
    else:
        M = plant.A + plant.B @ ctrl.D @ plant.C
    return max(abs(np.linalg.eigvals(M)))


def random_stable_loop(rng, p_max=5, dim_max=3, radius_cap=0.97):
    """(controller, plant) pair whose interconnection is comfortably stable."""
    while True:
        p = int(rng.integers(1, p_max + 1))
        q = int(rng.integers(1, dim_max + 1))
        l = int(rng.integers(1, dim_max + 1))
        m = int(rng.integers(1, dim_max + 1))
        n = int(rng.integers(1, dim_max + 1))
        ctrl = random_controller(rng, p, q, l, m)
        plant = random_stable_plant(rng, n, m, l)
        if closed_loop_radius(plant, ctrl) < radius_cap:
            return ctrl, plant
