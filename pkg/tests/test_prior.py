"""Prior rendering and token fusion tests."""

import numpy as np
import pytest

from vglab.geometry import Box
from vglab.prior import NEUTRAL_RGB, fuse_token, render_prior
from vglab.relations import QuerySample, RelationLabel
from vglab.scene import BACKGROUND, COLOR_RGB


def q(tokens, relation=None):
    return QuerySample(
        scene_id="s", tokens=tokens, target_box=Box(0.5, 0.5, 0.2, 0.2),
        source="real", distractor_count=0, relation=relation,
    )


class TestRenderPrior:
    def test_color_shape_query(self):
        img = render_prior(q(("red", "square")))
        assert img.shape == (64, 64, 3)
        assert tuple(img[32, 32]) == COLOR_RGB["red"]
        assert tuple(img[2, 2]) == BACKGROUND

    def test_relation_only_query_is_neutral(self):
        img = render_prior(q(("leftmost", "square"), RelationLabel.LEFTMOST))
        assert tuple(img[32, 32]) == NEUTRAL_RGB

    def test_bare_category_query_is_neutral(self):
        img = render_prior(q(("circle",)))
        assert tuple(img[32, 32]) == NEUTRAL_RGB

    def test_object_occupies_half_the_canvas_width(self):
        img = render_prior(q(("blue", "square")))
        cols = np.nonzero((img != np.array(BACKGROUND, np.uint8)).any(axis=2).any(axis=0))[0]
        width_frac = (cols.max() - cols.min() + 1) / 64.0
        assert 0.4 <= width_frac <= 0.6

    def test_deterministic(self):
        a = render_prior(q(("green", "triangle")))
        b = render_prior(q(("green", "triangle")))
        assert a.tobytes() == b.tobytes()

    def test_unknown_token_named(self):
        with pytest.raises(ValueError, match="orange"):
            render_prior(q(("orange", "square")))

    def test_shapeless_query_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            render_prior(q(("red",)))

    def test_distinct_queries_distinct_pixels(self):
        a = render_prior(q(("red", "square")))
        b = render_prior(q(("blue", "square")))
        c = render_prior(q(("red", "circle")))
        assert a.tobytes() != b.tobytes()
        assert a.tobytes() != c.tobytes()


class TestFuseToken:
    def test_zero_prior_recovers_base(self):
        base = np.random.default_rng(0).standard_normal((1, 64))
        fused = fuse_token(np.zeros((1, 64)), base)
        assert (fused == base).all()

    def test_zero_base(self):
        v = np.random.default_rng(1).standard_normal((1, 8))
        assert (fuse_token(v, np.zeros((1, 8))) == v).all()

    def test_linearity(self):
        rng = np.random.default_rng(2)
        v = rng.standard_normal((1, 16))
        p = rng.standard_normal((1, 16))
        alpha = 1.7
        np.testing.assert_allclose(
            fuse_token(alpha * v, p), alpha * v + p, atol=1e-12
        )

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            fuse_token(np.zeros((1, 8)), np.zeros((1, 16)))
