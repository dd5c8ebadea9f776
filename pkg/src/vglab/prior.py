"""Query-conditioned prior images and target-token fusion.

The prior pathway turns a query into a canonical object-centric image: the
named shape, centered and large, in the named color when the query carries
one. Relation-only queries get a neutral fill, since without attribute words
there is nothing appearance-specific to depict. The prior image is encoded by
the shared visual encoder elsewhere; here live the deterministic renderer and
the additive fusion with the learnable target token.
"""

from __future__ import annotations

import numpy as np

from .geometry import Box
from .relations import RELATION_WORDS, QuerySample
from .scene import BACKGROUND, COLOR_RGB, DEFAULT_CANVAS, SHAPES, _shape_mask
from .vocab import PAD

# Fill used when the query names no color; deliberately outside the palette.
NEUTRAL_RGB = (230, 230, 230)
_PRIOR_BOX = Box(0.5, 0.5, 0.5, 0.5)  # centered, half the canvas width


def render_prior(sample: QuerySample, canvas: tuple[int, int] = DEFAULT_CANVAS) -> np.ndarray:
    """Deterministic (H, W, 3) uint8 prior image for a query.

    Rejects tokens outside the closed vocabulary, naming the offender.
    """
    color = None
    shape = None
    for tok in sample.tokens:
        if tok in COLOR_RGB:
            color = tok
        elif tok in SHAPES:
            shape = tok
        elif tok not in RELATION_WORDS and tok != PAD:
            raise ValueError(f"unknown token {tok!r}")
    if shape is None:
        raise ValueError(f"query {sample.tokens} names no shape category")

    h, w = canvas
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    rgb = COLOR_RGB[color] if color is not None else NEUTRAL_RGB
    img[_shape_mask(shape, _PRIOR_BOX, h, w)] = rgb
    return img


def fuse_token(prior_vec: np.ndarray, base_token: np.ndarray) -> np.ndarray:
    """Exact elementwise sum of the prior encoding and the learnable token.

    A zero prior vector recovers the base token bit-for-bit, which is what
    makes the prior pathway strictly additive over the baseline decoder.
    """
    prior_vec = np.asarray(prior_vec, dtype=np.float64)
    base_token = np.asarray(base_token, dtype=np.float64)
    if prior_vec.shape != base_token.shape:
        raise ValueError(f"dimension mismatch {prior_vec.shape} vs {base_token.shape}")
    return prior_vec + base_token
