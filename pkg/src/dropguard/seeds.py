"""Deterministic per-stage seed derivation from one experiment seed."""

from __future__ import annotations

import numpy as np

_STAGES = ("graph", "attack", "unseen", "detector_model", "drop",
           "robust_model", "baseline_model", "theorems", "eval")
_STAGE_INDEX = {name: i for i, name in enumerate(_STAGES)}


def stage_seed(global_seed: int, stage: str) -> int:
    """Well-mixed 63-bit seed for a named pipeline stage."""
    if stage not in _STAGE_INDEX:
        raise KeyError(f"unknown stage {stage!r}; known: {_STAGES}")
    ss = np.random.SeedSequence((int(global_seed) & 0x7FFFFFFFFFFFFFFF,
                                 _STAGE_INDEX[stage]))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
