"""Training files for the extractor: instruction sets and preference pairs."""

from .dpo import PreferenceRecord, dpo_build, prepare_dpo
from .instructions import (
    InfeasibleError,
    InstructionA,
    InstructionB,
    RawPair,
    Rejected,
    annotate,
    derive_instruction_b,
    enforce_none_ratio,
    filter_short,
    prepare_instructions,
    sample_raw,
)

__all__ = [
    "InfeasibleError",
    "InstructionA",
    "InstructionB",
    "PreferenceRecord",
    "RawPair",
    "Rejected",
    "annotate",
    "derive_instruction_b",
    "dpo_build",
    "enforce_none_ratio",
    "filter_short",
    "prepare_dpo",
    "prepare_instructions",
    "sample_raw",
]
