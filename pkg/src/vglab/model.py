"""Grounding transformer: text/visual encoders, token-fusion decoder, box head.

The decoder takes the concatenation [target token; text tokens; visual
tokens] through full self-attention (pre-norm blocks, so a zeroed block is an
exact identity) and reads the box off the first output token via an MLP with
a logistic squash. The target token is either the bare learnable token or
that token plus the encoded prior image; nothing else changes between the
two modes, which is what makes the baseline/prior comparison exact.

Everything runs in float64 on an autodiff Tape; one forward returns the
predicted box, its loss, and the tape ready for backward.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import vocab
from .autodiff import Tape, Var
from .geometry import Box, LossValue, grounding_loss, grounding_loss_grad
from .prior import render_prior
from .relations import QuerySample
from .scene import COLOR_RGB, SceneSpec, rasterize


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    heads: int = 4
    text_layers: int = 1
    enc_layers: int = 2
    dec_layers: int = 2
    ff_mult: int = 2
    patch: int = 8
    canvas: tuple[int, int] = (64, 64)
    vocab_size: int = len(vocab.VOCAB)
    max_query: int = 6
    bootstrap_init: bool = True

    def __post_init__(self) -> None:
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.dim % 4:
            raise ValueError("dim must be a multiple of 4 for 2-D position tables")
        if self.canvas[0] % self.patch or self.canvas[1] % self.patch:
            raise ValueError(f"canvas {self.canvas} not divisible by patch {self.patch}")

    @property
    def grid(self) -> tuple[int, int]:
        return (self.canvas[0] // self.patch, self.canvas[1] // self.patch)

    @property
    def n_patches(self) -> int:
        gh, gw = self.grid
        return gh * gw

    def to_json_dict(self) -> dict:
        d = self.__dict__.copy()
        d["canvas"] = list(self.canvas)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["canvas"] = tuple(d["canvas"])
        return cls(**d)


def stable_json_hash(obj) -> str:
    """sha256 over canonical JSON; used to fingerprint configs in logs."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def sincos_position_table(gh: int, gw: int, dim: int) -> np.ndarray:
    """2-D sinusoidal table, row-major over the (gh, gw) patch grid."""
    quarter = dim // 4

    def axis(n: int) -> np.ndarray:
        pos = np.arange(n, dtype=np.float64)[:, None]
        freq = 1.0 / (10000.0 ** (np.arange(quarter, dtype=np.float64) / quarter))
        ang = pos * freq[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    rows, cols = axis(gh), axis(gw)
    return np.hstack([np.repeat(rows, gw, axis=0), np.tile(cols, (gh, 1))])


_BLOCK_MATS = ("wq", "wk", "wv", "wo")


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _dense(rng, rows: int, cols: int) -> np.ndarray:
    # 1/sqrt(fan_in) keeps activations and gradients O(1) through the stack.
    return rng.normal(0.0, 1.0 / math.sqrt(rows), (rows, cols))


def _init_block(rng, prefix: str, cfg: ModelConfig, out: dict) -> None:
    d, f = cfg.dim, cfg.dim * cfg.ff_mult
    for nm in _BLOCK_MATS:
        out[f"{prefix}.{nm}"] = _dense(rng, d, d)
    out[f"{prefix}.ff1_w"] = _dense(rng, d, f)
    out[f"{prefix}.ff1_b"] = np.zeros((1, f))
    out[f"{prefix}.ff2_w"] = _dense(rng, f, d)
    out[f"{prefix}.ff2_b"] = np.zeros((1, d))


# Reserved channel layout for the bootstrap wiring (all inside head 0).
# Signals that must survive layer norm are stored as +/- dim pairs, because
# the per-row mean subtraction leaks any single-dim flag into every other
# dimension; zero-sum pairs are orthogonal to that leak. Word hue and patch
# hue live in distinct channels so the match is strictly patch-query to
# word-key: patches must not match each other, or queries without color
# words would drain their attention mass into the background.
_HUE_TEXT = (0, 1, 2)  # zero-sum color coordinates of color words
_XP, _XN = 3, 4  # +x / -x center ramps
_YP, _YN = 5, 6  # +y / -y center ramps
_TP, _TN = 7, 8  # +/- is-text flag
_MP, _MN = 9, 10  # +/- query-match mass
_HUE_VIS = (11, 12, 13)  # zero-sum mean hue of each patch
_N_SPECIAL = 14


def _hue(color_name: str) -> np.ndarray:
    v = np.array(COLOR_RGB[color_name], dtype=float) / 255.0 - 0.5
    return v - v.mean()


def _wire_bootstrap(p: dict[str, np.ndarray], cfg: ModelConfig) -> None:
    """Seed a working query-color lookup circuit into the initial weights.

    Trained from a fully random init, the loss has a strong blind attractor:
    image-conditioned prediction jitter is uncorrelated with the targets at
    first, so gradient descent suppresses the image pathway before features
    can form, and the model settles on the best query-only box. The escape
    direction is a product of two alignments (query embedding vs. patch
    content, and attention mass vs. position readout), which random init
    leaves at ~1/sqrt(dim) overlap. This wiring starts that product at a
    macroscopic value: decoder layer 0 lets patches match color words and
    accumulate the attention they spend on text into a mass channel, and
    decoder layer 1 makes the target token read box-center ramps from the
    patches with the most mass. Everything remains an ordinary learnable
    parameter; training reshapes all of it.
    """
    d = cfg.dim
    lam_q, lam_k = 12.0, 5.0  # patch-side and word-side match gains
    kap, lam1, beta = 6.0, 4.0, 6.0  # mass readout gain and text-key crush
    nu, rho, delta = 2.0, 1.0, 1.5  # ramp write / pass-through / mass write
    rand_scale = 0.02

    def e(i: int) -> np.ndarray:
        v = np.zeros(d)
        v[i] = 1.0
        return v

    for w, i in vocab.WORD_TO_ID.items():
        p["tok_emb"][i, :_N_SPECIAL] = 0.0
        if w in COLOR_RGB:
            p["tok_emb"][i, list(_HUE_TEXT)] = _hue(w) * 2.0
    p["text_pos"][:, :_N_SPECIAL] = 0.0
    p["text_pos"][:, _TP] = 1.0
    p["text_pos"][:, _TN] = -1.0

    # Patch projection: the patch-hue channels become the zero-sum mean hue.
    pp = cfg.patch * cfg.patch
    W = p["patch_w"]
    W[:, :_N_SPECIAL] = 0.0
    for c, dst in enumerate(_HUE_VIS):
        col = np.full(pp * 3, -1.0 / (3.0 * pp))
        col[c::3] += 1.0 / pp
        W[:, dst] = col
    p["patch_b"][0, :_N_SPECIAL] = 0.0

    gh, gw = cfg.grid
    ys, xs = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    rx = (xs.ravel() + 0.5) / gw * 2.0 - 1.0
    ry = (ys.ravel() + 0.5) / gh * 2.0 - 1.0
    p["vis_pos"][:, :_N_SPECIAL] = 0.0
    p["vis_pos"][:, _XP] = rx
    p["vis_pos"][:, _XN] = -rx
    p["vis_pos"][:, _YP] = ry
    p["vis_pos"][:, _YN] = -ry

    p["target_token"][0, :_N_SPECIAL] = 0.0

    # Encoders start as near-identities (zero residual branches), so decoder
    # keys are exactly hue + ramps + flags at init; branches regrow freely.
    for k in list(p):
        if k.startswith(("vis", "text")) and k.endswith((".wo", ".ff2_w")):
            p[k] = np.zeros_like(p[k])
        if k.startswith("dec") and k.endswith((".wq", ".wk", ".wv", ".wo")):
            p[k] = p[k] * rand_scale
        if k.startswith("dec") and k.endswith(".ff2_w"):
            p[k] = np.zeros_like(p[k])

    # Decoder layer 0: patch queries (their own hue) match color-word keys
    # (the word's hue); attending text writes into the +/- mass pair. The
    # shared q/k dot space is the text-hue channel block.
    for vis_dim, txt_dim in zip(_HUE_VIS, _HUE_TEXT):
        p["dec0.wq"][vis_dim, txt_dim] += lam_q
        p["dec0.wk"][txt_dim, txt_dim] += lam_k
    p["dec0.wv"][:, _MP] += e(_TP) - e(_TN)
    p["dec0.wv"][:, _MN] -= e(_TP) - e(_TN)
    p["dec0.wo"][_MP, _MP] += delta
    p["dec0.wo"][_MN, _MN] += delta

    # Decoder layer 1 (the last layer): the target token queries the mass
    # channel (text keys suppressed) and pulls in the winners' ramps.
    last = f"dec{cfg.dec_layers - 1}"
    lnp = p["target_token"][0] - p["target_token"][0].mean()
    lnp = lnp / np.sqrt((lnp * lnp).mean() + 1e-9)
    a1 = lnp / float(lnp @ lnp)
    p[f"{last}.wq"] += np.outer(a1, kap * e(_MP))
    p[f"{last}.wk"][:, _MP] += lam1 * (e(_MP) - e(_MN)) - beta * (e(_TP) - e(_TN))
    for dim in (_XP, _XN, _YP, _YN):
        p[f"{last}.wv"][dim, dim] += nu * 0.5
        p[f"{last}.wo"][dim, dim] += rho

    # Head: route the +/- ramp pairs through to the center logits so the
    # circuit lowers the loss from the first step (otherwise the random head
    # renders its signal as noise and training prunes the whole pathway).
    # gelu(x) - gelu(-x) = x exactly, so paired channels pass each gelu
    # linearly when read as differences.
    head_gain = 1.2
    p["head_w1"][:, :_N_SPECIAL] *= 0.1
    p["head_w2"][:, :_N_SPECIAL] *= 0.1
    for dim in (_XP, _XN, _YP, _YN):
        p["head_w1"][dim, dim] += 1.0
    p["head_w2"][_XP, _XP] += 1.0
    p["head_w2"][_XN, _XP] -= 1.0
    p["head_w2"][_XN, _XN] += 1.0
    p["head_w2"][_XP, _XN] -= 1.0
    p["head_w2"][_YP, _YP] += 1.0
    p["head_w2"][_YN, _YP] -= 1.0
    p["head_w2"][_YN, _YN] += 1.0
    p["head_w2"][_YP, _YN] -= 1.0
    p["head_w3"][:, 0:2] *= 0.1
    p["head_w3"][_XP, 0] += head_gain
    p["head_w3"][_XN, 0] -= head_gain
    p["head_w3"][_YP, 1] += head_gain
    p["head_w3"][_YN, 1] -= head_gain


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Fresh parameter dict; insertion order is the checkpoint order."""
    rng = np.random.default_rng((0xE5, seed))
    d = cfg.dim
    emb_std = 1.0 / math.sqrt(d)
    p: dict[str, np.ndarray] = {}
    p["tok_emb"] = rng.normal(0.0, emb_std, (cfg.vocab_size, d))
    p["text_pos"] = rng.normal(0.0, emb_std, (cfg.max_query, d))
    for i in range(cfg.text_layers):
        _init_block(rng, f"text{i}", cfg, p)
    p["patch_w"] = _dense(rng, cfg.patch * cfg.patch * 3, d)
    p["patch_b"] = np.zeros((1, d))
    p["vis_pos"] = sincos_position_table(*cfg.grid, d)  # learnable after init
    for i in range(cfg.enc_layers):
        _init_block(rng, f"vis{i}", cfg, p)
    for i in range(cfg.dec_layers):
        _init_block(rng, f"dec{i}", cfg, p)
    p["head_w1"] = _dense(rng, d, d)
    p["head_b1"] = np.zeros((1, d))
    p["head_w2"] = _dense(rng, d, d)
    p["head_b2"] = np.zeros((1, d))
    p["head_w3"] = _dense(rng, d, 4)
    # Start predictions centered but at a typical object size rather than the
    # half-canvas box sigmoid(0) would give: a contained target puts the
    # overlap penalty on its flat plateau where center gradients vanish.
    p["head_b3"] = np.array([[0.0, 0.0, _logit(0.2), _logit(0.2)]])
    p["target_token"] = rng.normal(0.0, emb_std, (1, d))
    if cfg.bootstrap_init and cfg.dim // cfg.heads >= _N_SPECIAL and cfg.dec_layers >= 2:
        _wire_bootstrap(p, cfg)
    return p


# Parameter-name prefixes that belong to the encoders (reduced learning rate).
ENCODER_PREFIXES = ("tok_emb", "text_pos", "text", "patch_w", "patch_b", "vis")


def _block(tape: Tape, x: Var, params, prefix: str, cfg: ModelConfig, mask=None) -> Var:
    """Pre-norm self-attention + feed-forward block with residuals."""

    def P(nm: str) -> Var:
        return tape.param(f"{prefix}.{nm}", params[f"{prefix}.{nm}"])

    h = tape.layer_norm(x)
    q, k, v = (tape.matmul(h, P(nm)) for nm in ("wq", "wk", "wv"))
    dh = cfg.dim // cfg.heads
    scale = 1.0 / math.sqrt(dh)
    heads = []
    for hd in range(cfg.heads):
        lo, hi = hd * dh, (hd + 1) * dh
        qh = tape.slice_cols(q, lo, hi)
        kh = tape.slice_cols(k, lo, hi)
        vh = tape.slice_cols(v, lo, hi)
        scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), scale)
        heads.append(tape.matmul(tape.softmax_rows(scores, mask), vh))
    x = tape.add(x, tape.matmul(tape.concat_cols(heads), P("wo")))

    h2 = tape.layer_norm(x)
    f = tape.gelu(tape.add(tape.matmul(h2, P("ff1_w")), P("ff1_b")))
    f = tape.add(tape.matmul(f, P("ff2_w")), P("ff2_b"))
    return tape.add(x, f)


def encode_text(ids, mask, params, cfg: ModelConfig, tape: Tape) -> Var:
    """Token ids to (max_query, dim) features; padded keys never attended."""
    x = tape.embedding_lookup(tape.param("tok_emb", params["tok_emb"]), ids)
    x = tape.add(x, tape.param("text_pos", params["text_pos"]))
    for i in range(cfg.text_layers):
        x = _block(tape, x, params, f"text{i}", cfg, mask=mask)
    return x


def patchify(img: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(H, W, 3) uint8 image to (n_patches, patch*patch*3) float rows in [0, 1]."""
    h, w = cfg.canvas
    if img.shape != (h, w, 3):
        raise ValueError(f"image shape {img.shape} vs canvas {cfg.canvas}")
    gh, gw = cfg.grid
    a = img.astype(np.float64) / 255.0
    a = a.reshape(gh, cfg.patch, gw, cfg.patch, 3).transpose(0, 2, 1, 3, 4)
    return a.reshape(gh * gw, cfg.patch * cfg.patch * 3)


def _encode_patches(pvar: Var, params, cfg: ModelConfig, tape: Tape) -> Var:
    x = tape.add(
        tape.matmul(pvar, tape.param("patch_w", params["patch_w"])),
        tape.param("patch_b", params["patch_b"]),
    )
    x = tape.add(x, tape.param("vis_pos", params["vis_pos"]))
    for i in range(cfg.enc_layers):
        x = _block(tape, x, params, f"vis{i}", cfg)
    return x


def encode_image(img: np.ndarray, params, cfg: ModelConfig, tape: Tape) -> Var:
    """(H, W, 3) image to (n_patches, dim) visual tokens."""
    return _encode_patches(tape.const(patchify(img, cfg)), params, cfg, tape)


def encode_prior(img: np.ndarray, params, cfg: ModelConfig, tape: Tape) -> Var:
    """Prior image to one (1, dim) vector via the shared visual encoder."""
    return tape.mean_rows(encode_image(img, params, cfg, tape))


def decode(target_tok: Var, text_feats: Var, vis_feats: Var, text_mask, params,
           cfg: ModelConfig, tape: Tape) -> Var:
    """Full self-attention over [token; text; visual]; returns the first token."""
    x = tape.concat_rows([target_tok, text_feats, vis_feats])
    key_mask = np.concatenate(
        [[True], np.asarray(text_mask, dtype=bool), np.ones(cfg.n_patches, dtype=bool)]
    )
    for i in range(cfg.dec_layers):
        x = _block(tape, x, params, f"dec{i}", cfg, mask=key_mask)
    return tape.slice_rows(x, 0, 1)


def predict_box(tok: Var, params, tape: Tape) -> Var:
    """Normalize, then a three-layer MLP with a logistic squash onto (0, 1)^4.

    The squashed outputs are read as (cx, cy, w, h); zero head weights land
    exactly on the canvas-centered box (0.5, 0.5, 0.5, 0.5).
    """

    def P(nm: str) -> Var:
        return tape.param(nm, params[nm])

    x = tape.layer_norm(tok)
    x = tape.gelu(tape.add(tape.matmul(x, P("head_w1")), P("head_b1")))
    x = tape.gelu(tape.add(tape.matmul(x, P("head_w2")), P("head_b2")))
    return tape.sigmoid(tape.add(tape.matmul(x, P("head_w3")), P("head_b3")))


class FeatureCache:
    """Memoizes patch matrices for scenes and prior images.

    Scene pixels and prior pixels are pure functions of the spec/query, so
    they are rendered once per process and reused across epochs.
    """

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        self._scene: dict[str, np.ndarray] = {}
        self._prior: dict[tuple[str, ...], np.ndarray] = {}

    def scene_patches(self, spec: SceneSpec) -> np.ndarray:
        got = self._scene.get(spec.scene_id)
        if got is None:
            got = self._scene[spec.scene_id] = patchify(rasterize(spec), self.cfg)
        return got

    def prior_patches(self, sample: QuerySample) -> np.ndarray:
        got = self._prior.get(sample.tokens)
        if got is None:
            img = render_prior(sample, self.cfg.canvas)
            got = self._prior[sample.tokens] = patchify(img, self.cfg)
        return got


@dataclass
class ForwardResult:
    box: Box
    loss: LossValue
    tape: Tape
    box_var: Var


def forward(
    sample: QuerySample,
    scene: SceneSpec,
    params,
    cfg: ModelConfig,
    use_prior: bool = False,
    cache: FeatureCache | None = None,
    prior_override: np.ndarray | None = None,
) -> ForwardResult:
    """One full pass: rasterize/encode/decode/predict plus the loss.

    prior_override substitutes a fixed vector for the encoded prior image
    (used to verify that a zero prior reproduces the baseline exactly).
    """
    tape = Tape()
    ids, mask = vocab.encode(sample.tokens, cfg.max_query)
    text = encode_text(ids, mask, params, cfg, tape)

    sp = cache.scene_patches(scene) if cache else patchify(rasterize(scene), cfg)
    vis = _encode_patches(tape.const(sp), params, cfg, tape)

    base_tok = tape.param("target_token", params["target_token"])
    if use_prior:
        if prior_override is not None:
            pv = tape.const(np.asarray(prior_override, dtype=np.float64).reshape(1, cfg.dim))
        else:
            pp = (
                cache.prior_patches(sample)
                if cache
                else patchify(render_prior(sample, cfg.canvas), cfg)
            )
            pv = tape.mean_rows(_encode_patches(tape.const(pp), params, cfg, tape))
        tok = tape.add(pv, base_tok)
    else:
        tok = base_tok

    dec = decode(tok, text, vis, mask, params, cfg, tape)
    bvar = predict_box(dec, params, tape)
    vals = bvar.value[0]
    box = Box(float(vals[0]), float(vals[1]), float(vals[2]), float(vals[3]))
    return ForwardResult(
        box=box,
        loss=grounding_loss(box, sample.target_box),
        tape=tape,
        box_var=bvar,
    )


def loss_and_grads(
    sample: QuerySample,
    scene: SceneSpec,
    params,
    cfg: ModelConfig,
    use_prior: bool = False,
    cache: FeatureCache | None = None,
) -> tuple[ForwardResult, dict[str, np.ndarray]]:
    """Forward plus backward; the analytic loss gradient seeds the tape."""
    fr = forward(sample, scene, params, cfg, use_prior=use_prior, cache=cache)
    seed = grounding_loss_grad(fr.box, sample.target_box).reshape(1, 4)
    return fr, fr.tape.backward(fr.box_var, seed)


# -- parameter vector helpers (gradient checks, optimizer norms) -------------


def params_to_vector(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in params])


def vector_to_params(vec: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    ofs = 0
    for k, v in like.items():
        out[k] = vec[ofs : ofs + v.size].reshape(v.shape).copy()
        ofs += v.size
    if ofs != vec.size:
        raise ValueError(f"vector length {vec.size} vs parameters {ofs}")
    return out


# -- checkpoint IO ------------------------------------------------------------


def save_checkpoint(base_path, params, cfg: ModelConfig, extra: dict | None = None) -> tuple[Path, Path]:
    """Write {base}.json (manifest) and {base}.bin (little-endian float64 blob).

    Arrays are concatenated in manifest order, which is the parameter dict's
    insertion order; round-trips are bitwise lossless.
    """
    base = Path(base_path)
    manifest = {
        "config": cfg.to_json_dict(),
        "extra": extra or {},
        "arrays": [[k, list(v.shape)] for k, v in params.items()],
    }
    jpath = base.with_suffix(".json")
    bpath = base.with_suffix(".bin")
    jpath.write_text(json.dumps(manifest, indent=2) + "\n")
    with open(bpath, "wb") as fh:
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    return jpath, bpath


def load_checkpoint(base_path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    base = Path(base_path)
    manifest = json.loads(base.with_suffix(".json").read_text())
    cfg = ModelConfig.from_json_dict(manifest["config"])
    blob = base.with_suffix(".bin").read_bytes()
    expected = sum(int(np.prod(shape)) * 8 for _, shape in manifest["arrays"])
    if expected != len(blob):
        raise ValueError(f"checkpoint blob has {len(blob)} bytes, manifest expects {expected}")
    params: dict[str, np.ndarray] = {}
    ofs = 0
    for name, shape in manifest["arrays"]:
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(blob[ofs : ofs + size], dtype="<f8").reshape(shape)
        params[name] = arr.astype(np.float64).copy()
        ofs += size
    return params, cfg, manifest.get("extra", {})
