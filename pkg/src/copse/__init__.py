"""Packed decision-forest inference: staging compiler + simulated SIMD runtime."""

from .forest import Branch, Forest, ForestProps, Leaf, ParseError, compute_props, parse_forest, print_forest
from .kernels import mat_mul, mult_all, sec_comp
from .runtime import (
    MODE_ENCRYPTED,
    MODE_PLAINTEXT,
    ClassificationResult,
    FeatureQuery,
    PartyConfig,
    decode,
    encode_features,
    encode_query,
    infer,
    traverse_oracle,
)
from .staging import (
    BitPlanes,
    CompiledModel,
    DiagMatrix,
    QuantizationOverflow,
    compile_forest,
    quantize,
    read_manifest,
    write_manifest,
)
from .vm import CIPHERTEXT, PLAINTEXT, DepthBudgetExceeded, OpLedger, PackedVec, VecMachine

__version__ = "0.1.0"

__all__ = [
    "Branch", "Forest", "ForestProps", "Leaf", "ParseError",
    "compute_props", "parse_forest", "print_forest",
    "sec_comp", "mat_mul", "mult_all",
    "MODE_ENCRYPTED", "MODE_PLAINTEXT", "ClassificationResult", "FeatureQuery",
    "PartyConfig", "decode", "encode_features", "encode_query", "infer",
    "traverse_oracle",
    "BitPlanes", "CompiledModel", "DiagMatrix", "QuantizationOverflow",
    "compile_forest", "quantize", "read_manifest", "write_manifest",
    "CIPHERTEXT", "PLAINTEXT", "DepthBudgetExceeded", "OpLedger", "PackedVec",
    "VecMachine",
    "__version__",
]
