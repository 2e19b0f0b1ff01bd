"""Sandpile solitons and tropical-vertex patterns via integer husking."""

from .engine import (Domain, SandpileState, TopplingFunction, relax, send_wave,
                     verify_wave_translation, wave_least_action_check)
from .errors import (BudgetError, BudgetExhaustedError, NonContainmentError, ParseError,
                     RangeError, SandsolitonError, ValidationError, WavePreconditionError)
from .husking import HuskingResult, WindowPolicy, canonical_husking, husk_k
from .lattice import Box, FacetMin, IntField, LiftedTable, MinAffine, QuotientGraph, kernel_quotient
from .patterns import (PatternSpec, SolitonProfile, build_tilde_psi, lift_pattern_to_state,
                       soliton, validate_pattern, vertex_pattern)

__version__ = "0.1.0"
