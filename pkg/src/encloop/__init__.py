"""Encrypted linear control with leveled homomorphic encryption."""

__version__ = "0.1.0"

from .analysis import (
    ErrorBoundReport,
    StabilityCertificate,
    delta_k_bound,
    error_bound,
    memory_report,
    quantization_bounds,
    solve_dlyap,
)
from .bfv import BfvParams, Ciphertext, KeySet, keygen
from .encoding import Sensitivity, dec_delta, enc_delta
from .encsys import EncryptedLoop, run_closed_loop, setup
from .errors import (
    CapacityError,
    EncLoopError,
    EncodingRangeError,
    KeyMaterialError,
    NoiseBudgetError,
    ParameterError,
    StabilityError,
    StructuralError,
    TransformError,
)
from .histfb import (
    HistoryGain,
    LiftedPlant,
    Plant,
    StateSpaceController,
    lift_plant,
    simulate_plain,
    transform,
)
from .ring import Modulus, NttTables, RingElement, reduce_minimal

__all__ = [
    "BfvParams",
    "CapacityError",
    "Ciphertext",
    "EncLoopError",
    "EncodingRangeError",
    "EncryptedLoop",
    "ErrorBoundReport",
    "HistoryGain",
    "KeyMaterialError",
    "KeySet",
    "LiftedPlant",
    "Modulus",
    "NoiseBudgetError",
    "NttTables",
    "ParameterError",
    "Plant",
    "RingElement",
    "Sensitivity",
    "StabilityCertificate",
    "StabilityError",
    "StateSpaceController",
    "StructuralError",
    "TransformError",
    "dec_delta",
    "delta_k_bound",
    "enc_delta",
    "error_bound",
    "keygen",
    "lift_plant",
    "memory_report",
    "quantization_bounds",
    "reduce_minimal",
    "run_closed_loop",
    "setup",
    "simulate_plain",
    "solve_dlyap",
    "transform",
]
