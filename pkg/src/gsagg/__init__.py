"""Secure aggregation with uncoded groupwise keys over a prime field."""

from __future__ import annotations

from .coeffs import (
    CoefficientFamily,
    UserMatrixSet,
    build_family,
    build_user_matrices,
    build_validated,
    load_fixture,
    pivot_expand,
    save_fixture,
    verify_alignment_rank,
    verify_decodability,
    verify_security_rank,
)
from .errors import GsaError
from .field import DEFAULT_PRIME, FieldMatrix, left_null_basis, mat_rank, solve_square
from .params import SchemeParams, capacity_rates, enough_space
from .scheme import KeyMaterial, Transcript, gen_keys, random_inputs, run_protocol
from .verify import brute_force_mi, build_view_system, exhaustive_dropout_sweep, leakage_rank, zero_padded_view
from .witness import deterministic_witness

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PRIME",
    "CoefficientFamily",
    "FieldMatrix",
    "GsaError",
    "KeyMaterial",
    "SchemeParams",
    "Transcript",
    "UserMatrixSet",
    "deterministic_witness",
    "brute_force_mi",
    "build_family",
    "build_user_matrices",
    "build_validated",
    "build_view_system",
    "capacity_rates",
    "enough_space",
    "exhaustive_dropout_sweep",
    "zero_padded_view",
    "gen_keys",
    "leakage_rank",
    "left_null_basis",
    "load_fixture",
    "mat_rank",
    "pivot_expand",
    "random_inputs",
    "run_protocol",
    "save_fixture",
    "solve_square",
    "verify_alignment_rank",
    "verify_decodability",
    "verify_security_rank",
]
