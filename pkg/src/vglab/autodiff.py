"""Reverse-mode automatic differentiation on 2-D float64 arrays.

A Tape records primitive forward ops and replays them backward exactly once.
The primitive set is just large enough for a small transformer (matmul,
residual adds, layer norm, masked row softmax, gelu/sigmoid, embedding
lookup, row/column concat and slice, row mean, transpose, scalar scale).
Everything is double precision with a fixed reduction order, so gradients
check against central finite differences to tight tolerances and forward
results are reproducible bit-for-bit on a fixed platform.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

Array = np.ndarray

_LN_EPS = 1e-9
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class TapeError(RuntimeError):
    """Tape misuse: backward on a consumed tape, bad seed, etc."""


class Var:
    """Handle to one recorded value on a tape."""

    __slots__ = ("value", "index")

    def __init__(self, value: Array, index: int):
        self.value = value
        self.index = index

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]


def _as_matrix(x, what: str) -> Array:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{what} contains non-finite entries")
    return a


class Tape:
    """Single-owner record of one forward pass.

    Parameters are registered by name with :meth:`param`; repeated
    registration of the same name returns the same node, so a parameter used
    on several paths (e.g. a shared encoder) accumulates gradient from all of
    them. backward() may be called once; the tape is consumed afterwards.
    """

    def __init__(self) -> None:
        self._inputs: list[tuple[int, ...]] = []
        self._vjps: list[Callable[[Array], tuple] | None] = []
        self._params: dict[str, Var] = {}
        self._consumed = False

    # -- leaves ------------------------------------------------------------

    def param(self, name: str, value) -> Var:
        """Register (or re-fetch) a named leaf parameter."""
        if name in self._params:
            return self._params[name]
        var = self._record(_as_matrix(value, f"param {name!r}"), (), None)
        self._params[name] = var
        return var

    def const(self, value) -> Var:
        """Leaf input that receives no gradient of its own."""
        return self._record(_as_matrix(value, "const"), (), None)

    # -- primitives ----------------------------------------------------------

    def matmul(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")
        out = av @ bv

        def vjp(g: Array):
            return g @ bv.T, av.T @ g

        return self._record(out, (a.index, b.index), vjp)

    def add(self, a: Var, b: Var) -> Var:
        """Elementwise sum; b may be a single row broadcast over a's rows."""
        av, bv = a.value, b.value
        if av.shape == bv.shape:
            def vjp(g: Array):
                return g, g
        elif bv.shape == (1, av.shape[1]):
            def vjp(g: Array):
                return g, g.sum(axis=0, keepdims=True)
        else:
            raise ShapeError(f"add: {av.shape} + {bv.shape}")
        return self._record(av + bv, (a.index, b.index), vjp)

    def scale(self, a: Var, s: float) -> Var:
        s = float(s)

        def vjp(g: Array):
            return (g * s,)

        return self._record(a.value * s, (a.index,), vjp)

    def transpose(self, a: Var) -> Var:
        def vjp(g: Array):
            return (g.T,)

        return self._record(a.value.T, (a.index,), vjp)

    def layer_norm(self, a: Var) -> Var:
        """Per-row normalization to mean 0, variance 1 (no affine)."""
        x = a.value
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        sigma = np.sqrt((xc * xc).mean(axis=1, keepdims=True) + _LN_EPS)
        y = xc / sigma

        def vjp(g: Array):
            gm = g.mean(axis=1, keepdims=True)
            gy = (g * y).mean(axis=1, keepdims=True)
            return ((g - gm - y * gy) / sigma,)

        return self._record(y, (a.index,), vjp)

    def softmax_rows(self, a: Var, mask: Array | None = None) -> Var:
        """Row softmax; mask is a boolean column filter (True = attend)."""
        x = a.value
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (x.shape[1],):
                raise ShapeError(f"softmax mask {mask.shape} vs columns {x.shape[1]}")
            if not mask.any():
                raise ValueError("softmax mask excludes every column")
            x = np.where(mask[None, :], x, -np.inf)
        e = np.exp(x - x.max(axis=1, keepdims=True))
        y = e / e.sum(axis=1, keepdims=True)

        def vjp(g: Array):
            dot = (g * y).sum(axis=1, keepdims=True)
            return (y * (g - dot),)

        return self._record(y, (a.index,), vjp)

    def gelu(self, a: Var) -> Var:
        x = a.value
        cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
        out = x * cdf

        def vjp(g: Array):
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
            return (g * (cdf + x * pdf),)

        return self._record(out, (a.index,), vjp)

    def sigmoid(self, a: Var) -> Var:
        y = expit(a.value)

        def vjp(g: Array):
            return (g * y * (1.0 - y),)

        return self._record(y, (a.index,), vjp)

    def embedding_lookup(self, table: Var, ids) -> Var:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 1:
            raise ShapeError(f"embedding ids must be 1-D, got {ids.shape}")
        rows = table.value.shape[0]
        if ids.size and (ids.min() < 0 or ids.max() >= rows):
            raise ValueError(f"embedding id out of range [0, {rows})")
        out = table.value[ids]

        def vjp(g: Array):
            dt = np.zeros_like(table.value)
            np.add.at(dt, ids, g)
            return (dt,)

        return self._record(out, (table.index,), vjp)

    def concat_rows(self, parts: Sequence[Var]) -> Var:
        cols = {p.value.shape[1] for p in parts}
        if len(cols) != 1:
            raise ShapeError(f"concat_rows: mixed column counts {sorted(cols)}")
        offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])

        def vjp(g: Array):
            return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

        return self._record(
            np.vstack([p.value for p in parts]), tuple(p.index for p in parts), vjp
        )

    def slice_rows(self, a: Var, start: int, stop: int) -> Var:
        rows = a.value.shape[0]
        if not (0 <= start < stop <= rows):
            raise ShapeError(f"slice_rows [{start}:{stop}] of {a.value.shape}")

        def vjp(g: Array):
            da = np.zeros_like(a.value)
            da[start:stop] = g
            return (da,)

        return self._record(a.value[start:stop], (a.index,), vjp)

    def concat_cols(self, parts: Sequence[Var]) -> Var:
        rows = {p.value.shape[0] for p in parts}
        if len(rows) != 1:
            raise ShapeError(f"concat_cols: mixed row counts {sorted(rows)}")
        offsets = np.cumsum([0] + [p.value.shape[1] for p in parts])

        def vjp(g: Array):
            return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

        return self._record(
            np.hstack([p.value for p in parts]), tuple(p.index for p in parts), vjp
        )

    def slice_cols(self, a: Var, start: int, stop: int) -> Var:
        cols = a.value.shape[1]
        if not (0 <= start < stop <= cols):
            raise ShapeError(f"slice_cols [{start}:{stop}] of {a.value.shape}")

        def vjp(g: Array):
            da = np.zeros_like(a.value)
            da[:, start:stop] = g
            return (da,)

        return self._record(a.value[:, start:stop], (a.index,), vjp)

    def mean_rows(self, a: Var) -> Var:
        """Average all rows into one (1, cols) row."""
        n = a.value.shape[0]

        def vjp(g: Array):
            return (np.broadcast_to(g / n, a.value.shape).copy(),)

        return self._record(a.value.mean(axis=0, keepdims=True), (a.index,), vjp)

    # -- backward ------------------------------------------------------------

    def backward(self, root: Var, seed) -> dict[str, Array]:
        """Propagate seed cotangent from root to every registered parameter.

        Returns a gradient array per parameter name, zero-filled for
        parameters the root does not depend on. Consumes the tape.
        """
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward()")
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != root.value.shape:
            raise ShapeError(f"seed {seed.shape} vs root {root.value.shape}")
        self._consumed = True

        adjoint: dict[int, Array] = {root.index: seed}
        for idx in range(root.index, -1, -1):
            g = adjoint.pop(idx, None)
            if g is None:
                continue
            vjp = self._vjps[idx]
            if vjp is None:
                adjoint[idx] = g  # leaf: keep for parameter collection
                continue
            for parent, pg in zip(self._inputs[idx], vjp(g)):
                held = adjoint.get(parent)
                adjoint[parent] = pg if held is None else held + pg

        return {
            name: adjoint.get(var.index, np.zeros_like(var.value))
            for name, var in self._params.items()
        }

    def _record(self, value: Array, inputs: tuple[int, ...], vjp) -> Var:
        self._inputs.append(inputs)
        self._vjps.append(vjp)
        return Var(value, len(self._inputs) - 1)


class NonFiniteProbeError(RuntimeError):
    """A finite-difference probe produced a non-finite function value."""


def finite_diff_check(
    f: Callable[[Array], float],
    point,
    analytic_grad,
    eps: float = 1e-5,
    sample: int | None = None,
    rng: np.random.Generator | None = None,
    min_grad: float = 0.0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    f maps a flat parameter vector to a scalar and must be deterministic.
    analytic_grad is the gradient at point, precomputed by the caller. When
    sample is given, only that many randomly chosen coordinates are probed
    (the full sweep is quadratic-cost in model size); rng defaults to a fixed
    seed so sampled checks are reproducible.

    min_grad, when positive, restricts probing to coordinates whose analytic
    gradient magnitude reaches it. Central differences on a float64 function
    carry ~|f|*1e-16/eps of cancellation noise, so coordinates whose true
    gradient sits below that floor measure the noise, not the correctness of
    the gradient; informative coordinates are the ones worth probing.

    Relative error per coordinate: |ga - gfd| / max(1e-8, |ga| + |gfd|).
    """
    point = np.asarray(point, dtype=np.float64).ravel()
    ga = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if point.shape != ga.shape:
        raise ShapeError(f"point {point.shape} vs gradient {ga.shape}")

    coords = np.arange(point.size)
    if min_grad > 0.0:
        informative = coords[np.abs(ga) >= min_grad]
        if informative.size == 0:
            raise ValueError(f"no coordinate has |gradient| >= {min_grad}")
        coords = informative
    if sample is not None and sample < coords.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(coords, size=sample, replace=False)

    worst = 0.0
    for i in coords:
        probe = point.copy()
        probe[i] = point[i] + eps
        fp = f(probe)
        probe[i] = point[i] - eps
        fm = f(probe)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteProbeError(
                f"non-finite value at probe coordinate {int(i)}: f+={fp}, f-={fm}"
            )
        gfd = (fp - fm) / (2.0 * eps)
        rel = abs(ga[i] - gfd) / max(1e-8, abs(ga[i]) + abs(gfd))
        worst = max(worst, rel)
    return worst
