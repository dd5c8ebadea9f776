"""Closed token vocabulary shared by queries, prior rendering, and the model."""

from __future__ import annotations

import numpy as np

from .relations import RELATION_WORDS
from .scene import COLORS, SHAPES

PAD = "<pad>"
VOCAB: tuple[str, ...] = (PAD,) + COLORS + SHAPES + RELATION_WORDS
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}
PAD_ID = 0


def encode(tokens, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Token words to (ids, mask), padded to max_len.

    mask is True at real-token positions. Unknown words and over-length
    queries are rejected.
    """
    if len(tokens) > max_len:
        raise ValueError(f"query of {len(tokens)} tokens exceeds max length {max_len}")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(tokens):
        if tok not in WORD_TO_ID:
            raise ValueError(f"unknown token {tok!r}")
        ids[i] = WORD_TO_ID[tok]
    mask = np.zeros(max_len, dtype=bool)
    mask[: len(tokens)] = True
    return ids, mask
