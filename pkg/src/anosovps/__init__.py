"""Numerics for higher-rank Patterson-Sullivan theory of Schottky subgroups
of SL(d,R): Lie-theoretic projections and cocycles, orbit tables, limit
cones, conformal measures, shadow estimates, and the essential-value search.
"""

from anosovps.liecore import (
    Flag,
    FlagPair,
    HopfPoint,
    LinearForm,
    attracting_flag,
    busemann,
    cartan_projection,
    chordal_distance,
    flag_action,
    fundamental_weight,
    gromov_product,
    iwasawa_sigma,
    jordan_projection,
    opposition_involution,
    simple_root,
    symmetric_distance,
    two_rho,
    visual_flags,
)

__all__ = [
    "Flag",
    "FlagPair",
    "HopfPoint",
    "LinearForm",
    "attracting_flag",
    "busemann",
    "cartan_projection",
    "chordal_distance",
    "flag_action",
    "fundamental_weight",
    "gromov_product",
    "iwasawa_sigma",
    "jordan_projection",
    "opposition_involution",
    "simple_root",
    "symmetric_distance",
    "two_rho",
    "visual_flags",
]

__version__ = "0.1.0"
