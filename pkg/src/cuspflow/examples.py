"""Shipped example groups and branch systems."""
from __future__ import annotations

import math

import numpy as np

from .branches import Box, BranchSystem, alphabet_system, family_system, gauss_system, similarity_system
from .geometry import INF, Affine, Inversive, from_matrix, identity
from .group import CuspChart, GroupModel


def gamma2() -> GroupModel:
    """Principal congruence subgroup of level 2, generated by x+2 and x/(2x+1)."""
    a = from_matrix([[1, 2], [0, 1]])
    b = from_matrix([[1, 0], [2, 1]])
    chart = CuspChart(INF, identity(1), 1, ((1,),), [0.0])
    return GroupModel(1, [a, b], ["a", "b"], [chart], t0=1.0, free=True, name="gamma2")


def gamma2_measure_system(explicit: int = 200) -> BranchSystem:
    """Branches x -> 4/(x + 2n), n >= 1, on [0, 2].

    These are the cells of the Farey-type coding of Gamma(2) around the cusp
    at 0; Lebesgue measure is their 1-conformal measure.
    """
    base = Inversive([0.0], [0.0], 4.0, [[1.0]])
    return family_system(base, Affine.translation([2.0]), 1, explicit, Box([0.0], [2.0]),
                         name="gamma2-measure")


def schottky2d() -> GroupModel:
    """Two parabolic generators z+4i and z/(2z+1) acting on the plane (d = 2).

    The cusp at infinity has rank one; the fundamental box is [-1,1] x [-2,2).
    """
    a = from_matrix(np.array([[1, 4j], [0, 1]]))
    b = from_matrix([[1, 0], [2, 1]], dim=2)
    chart = CuspChart(INF, identity(2), 1, ((1,),), [-2.0], y_radius=1.0)
    return GroupModel(2, [a, b], ["a", "b"], [chart], t0=1.0, free=True, name="schottky2d")


def sierpinski_carpet_like() -> BranchSystem:
    """Four similarities of ratio 1/3 on the unit square; dimension log 4 / log 3."""
    s = 2.0 / 3.0
    return similarity_system(1.0 / 3.0, [[0, 0], [s, 0], [0, s], [s, s]], Box([0, 0], [1, 1]))


SIMILARITY_DIMENSION = math.log(4) / math.log(3)

GROUPS = {"gamma2": gamma2, "schottky2d": schottky2d}

SYSTEMS = {
    "gauss": lambda explicit=200: gauss_system(explicit),
    "alphabet12": lambda explicit=None: alphabet_system([1, 2]),
    "gamma2": lambda explicit=200: gamma2_measure_system(explicit),
    "similarity4": lambda explicit=None: sierpinski_carpet_like(),
}
