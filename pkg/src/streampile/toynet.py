"""Tiny temporal-attention denoiser with hand-written reverse-mode gradients.

One attention layer over the frames of a window (single head, scaled
dot product), with the hidden state of a reference frame concatenated
into keys and values so every frame can attend to it; an optional
causal mask restricts frame-to-frame attention to j <= i but never
masks the reference column.  Conditioning and timestep embeddings are
added to the encoded frames, plus fixed sinusoidal frame-position
encodings (so the model is deliberately not permutation-equivariant).
The network predicts v = sqrt(abar) eps - sqrt(1-abar) x0.

All math is float64; gradients are exact reverse-mode derivatives of
the fixed architecture, checked against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .diffusion import Prediction
from .errors import ConfigError

MASK_MODES = ("full", "causal")

WEIGHT_NAMES = (
    "W_in",
    "W_cond",
    "W_time",
    "W_Q",
    "W_K",
    "W_V",
    "W_O",
    "W_f1",
    "W_f2",
    "W_out",
)


@dataclass(frozen=True)
class ToyNetParams:
    """All learnable weights.  No biases: every path is a pure linear map
    plus the tanh feed-forward, which keeps the finite-difference
    gradient check clean."""

    W_in: np.ndarray   # d  -> h frame encoder (also encodes the reference)
    W_cond: np.ndarray  # c  -> h conditioning projection
    W_time: np.ndarray  # h  -> h projection of sinusoidal timestep features
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray
    W_f1: np.ndarray   # h -> 2h
    W_f2: np.ndarray   # 2h -> h
    W_out: np.ndarray  # h -> d

    @property
    def d(self) -> int:
        return self.W_in.shape[0]

    @property
    def c(self) -> int:
        return self.W_cond.shape[0]

    @property
    def h(self) -> int:
        return self.W_in.shape[1]

    def named(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def map(self, fn, *others: "ToyNetParams") -> "ToyNetParams":
        """Apply fn elementwise over matching weight arrays."""
        out = {}
        for f in fields(self):
            args = [getattr(self, f.name)] + [getattr(o, f.name) for o in others]
            out[f.name] = fn(*args)
        return ToyNetParams(**out)

    def check_finite(self):
        for name, w in self.named():
            if not np.all(np.isfinite(w)):
                raise ConfigError(f"non-finite values in parameter {name}")


def init_params(rng: np.random.Generator, d: int = 8, h: int = 32, c: int = 2, scale: float = 0.3) -> ToyNetParams:
    """Gaussian fan-in initialization."""
    def w(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) * scale / np.sqrt(n_in)

    return ToyNetParams(
        W_in=w(d, h),
        W_cond=w(c, h),
        W_time=w(h, h),
        W_Q=w(h, h),
        W_K=w(h, h),
        W_V=w(h, h),
        W_O=w(h, h),
        W_f1=w(h, 2 * h),
        W_f2=w(2 * h, h),
        W_out=w(h, d),
    )


def zeros_like_params(p: ToyNetParams) -> ToyNetParams:
    return p.map(np.zeros_like)


def sinusoid_features(values, dim: int, wavelength: float = 10000.0) -> np.ndarray:
    """Transformer-style sin/cos features of scalar inputs, output dim `dim`."""
    half = dim // 2
    freqs = np.exp(-np.log(wavelength) * np.arange(half) / half)
    ang = np.asarray(values, dtype=float)[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


def position_encoding(n_frames: int, dim: int) -> np.ndarray:
    return sinusoid_features(np.arange(n_frames), dim)


def _check_mask(mask: str):
    if mask not in MASK_MODES:
        raise ConfigError(f"mask must be one of {MASK_MODES}, got {mask!r}")


def _attention_pieces(params: ToyNetParams, E, Z, mask: str):
    """Shared attention computation on already-embedded hiddens.

    E: (B, K, h); Z: (B, 1, h) or None.  Returns the residual-added
    output plus everything backward needs.
    """
    h = params.h
    n = E.shape[1]
    ekv = E if Z is None else np.concatenate([E, Z], axis=1)
    q = E @ params.W_Q
    k = ekv @ params.W_K
    v = ekv @ params.W_V
    logits = q @ np.swapaxes(k, -1, -2) / np.sqrt(h)
    if mask == "causal":
        forbid = np.triu(np.ones((n, n), dtype=bool), 1)
        if Z is not None:
            # the reference column is never masked
            forbid = np.concatenate([forbid, np.zeros((n, 1), dtype=bool)], axis=1)
        logits = np.where(forbid, -np.inf, logits)
    logits_shift = logits - logits.max(axis=-1, keepdims=True)
    p = np.exp(logits_shift)
    p /= p.sum(axis=-1, keepdims=True)
    mixed = p @ v
    out = E + mixed @ params.W_O
    return out, (ekv, q, k, v, p, mixed)


def temporal_attention(X, Z, mask: str, params: ToyNetParams) -> np.ndarray:
    """Single-head attention over frame hiddens with reference key/value
    concatenation: Q from X, K and V from [X, Z]; W_O-projected and
    residual-added.  X: (K, h) or (B, K, h), Z: (h,), (1, h) or
    (B, 1, h)."""
    _check_mask(mask)
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 2
    if squeeze:
        X = X[None]
    if Z is not None:
        Z = np.asarray(Z, dtype=float)
        Z = Z.reshape(1, 1, -1) if Z.ndim == 1 else Z
        if Z.ndim == 2:
            Z = Z[None]
        if Z.shape[0] == 1 and X.shape[0] > 1:
            Z = np.broadcast_to(Z, (X.shape[0], 1, Z.shape[-1]))
    out, _ = _attention_pieces(params, X, Z, mask)
    return out[0] if squeeze else out


def _normalize_inputs(params, latents, t_vec, cond, reference):
    latents = np.asarray(latents, dtype=float)
    squeeze = latents.ndim == 2
    if squeeze:
        latents = latents[None]
    b, n, d = latents.shape
    if d != params.d:
        raise ConfigError(f"latent dim {d} does not match model d={params.d}")
    t_vec = np.asarray(t_vec, dtype=float)
    if t_vec.ndim == 1:
        t_vec = np.broadcast_to(t_vec, (b, n))
    if t_vec.shape != (b, n):
        raise ConfigError(f"t_vec shape {t_vec.shape} incompatible with window ({b}, {n})")
    if cond is None:
        cond = np.zeros((b, n, params.c))
    else:
        cond = np.asarray(cond, dtype=float)
        if cond.ndim == 2:
            cond = cond[None]
        if cond.shape != (b, n, params.c):
            raise ConfigError(f"cond shape {cond.shape}, expected ({b}, {n}, {params.c})")
    if reference is not None:
        reference = np.asarray(reference, dtype=float)
        if reference.ndim == 1:
            reference = reference[None]
        if reference.shape[0] == 1 and b > 1:
            reference = np.broadcast_to(reference, (b, params.d))
        if reference.shape != (b, params.d):
            raise ConfigError(f"reference shape {reference.shape}, expected ({b}, {params.d})")
    return latents, t_vec, cond, reference, squeeze


def forward_with_tape(params: ToyNetParams, latents, t_vec, cond=None, reference=None, mask: str = "full"):
    """Forward pass returning (v_prediction, tape) with the tape holding
    every intermediate needed for the exact backward pass."""
    _check_mask(mask)
    latents, t_vec, cond, reference, squeeze = _normalize_inputs(params, latents, t_vec, cond, reference)
    b, n, _ = latents.shape
    tfeat = sinusoid_features(t_vec, params.h)
    pos = position_encoding(n, params.h)
    E = latents @ params.W_in + cond @ params.W_cond + tfeat @ params.W_time + pos
    Z = None
    if reference is not None:
        Z = (reference @ params.W_in)[:, None, :]
    A, attn = _attention_pieces(params, E, Z, mask)
    pre = A @ params.W_f1
    Hf = np.tanh(pre)
    Ff = A + Hf @ params.W_f2
    out = Ff @ params.W_out
    tape = (latents, tfeat, cond, reference, E, Z, attn, A, Hf, Ff, mask, squeeze)
    return (out[0] if squeeze else out), tape


def forward(params: ToyNetParams, latents, t_vec, cond=None, reference=None, mask: str = "full") -> Prediction:
    """Denoiser forward pass; returns a v-kind Prediction."""
    out, _ = forward_with_tape(params, latents, t_vec, cond, reference, mask)
    return Prediction("v", out)


def backward(params: ToyNetParams, tape, d_out) -> ToyNetParams:
    """Exact gradients of sum(d_out * output) w.r.t. every parameter."""
    latents, tfeat, cond, reference, E, Z, attn, A, Hf, Ff, mask, squeeze = tape
    ekv, q, k, v, p, mixed = attn
    h = params.h
    n = E.shape[1]
    d_out = np.asarray(d_out, dtype=float)
    if squeeze and d_out.ndim == 2:
        d_out = d_out[None]

    g = {name: None for name in WEIGHT_NAMES}
    g["W_out"] = np.einsum("bkh,bkd->hd", Ff, d_out)
    dFf = d_out @ params.W_out.T
    dA = dFf.copy()
    dHf = dFf @ params.W_f2.T
    g["W_f2"] = np.einsum("bkf,bkh->fh", Hf, dFf)
    dpre = dHf * (1.0 - Hf**2)
    g["W_f1"] = np.einsum("bkh,bkf->hf", A, dpre)
    dA += dpre @ params.W_f1.T

    dE = dA.copy()
    g["W_O"] = np.einsum("bkh,bkg->hg", mixed, dA)
    dmixed = dA @ params.W_O.T
    dp = dmixed @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(p, -1, -2) @ dmixed
    dlogits = p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
    dq = dlogits @ k / np.sqrt(h)
    dk = np.swapaxes(dlogits, -1, -2) @ q / np.sqrt(h)
    g["W_Q"] = np.einsum("bkh,bkg->hg", E, dq)
    dE += dq @ params.W_Q.T
    g["W_K"] = np.einsum("bkh,bkg->hg", ekv, dk)
    g["W_V"] = np.einsum("bkh,bkg->hg", ekv, dv)
    dekv = dk @ params.W_K.T + dv @ params.W_V.T
    if Z is not None:
        dE += dekv[:, :n, :]
        dz = dekv[:, n:, :]
        g["W_in"] = np.einsum("bd,bh->dh", reference, dz[:, 0, :])
    else:
        dE += dekv
        g["W_in"] = np.zeros_like(params.W_in)

    g["W_in"] = g["W_in"] + np.einsum("bkd,bkh->dh", latents, dE)
    g["W_cond"] = np.einsum("bkc,bkh->ch", cond, dE)
    g["W_time"] = np.einsum("bkh,bkg->hg", tfeat, dE)
    return ToyNetParams(**g)


def grad(params: ToyNetParams, batch, mask: str = "full"):
    """Loss and exact gradient of the v-prediction MSE on a batch.

    batch is (noised_windows, t_vecs, cond, reference, v_targets); the
    loss is the mean squared error over every element.
    """
    xt, t_vec, cond, reference, target = batch
    out, tape = forward_with_tape(params, xt, t_vec, cond, reference, mask)
    target = np.asarray(target, dtype=float)
    resid = out - target
    loss = float(np.mean(resid**2))
    d_out = 2.0 * resid / resid.size
    return loss, backward(params, tape, d_out)


# ---------------------------------------------------------------------------
# checkpoint format: flat little-endian float32 + JSON sidecar manifest
# ---------------------------------------------------------------------------

def save_checkpoint(params: ToyNetParams, path, seed=None, steps=None, extra=None):
    """Write <path> (concatenated little-endian f32 weights) and
    <path>.json (shapes, order, metadata)."""
    path = str(path)
    order = [name for name, _ in params.named()]
    blobs = [np.ascontiguousarray(w, dtype="<f4") for _, w in params.named()]
    with open(path, "wb") as fh:
        for blob in blobs:
            fh.write(blob.tobytes())
    manifest = {
        "format": "streampile-toynet-v1",
        "dtype": "<f4",
        "order": order,
        "shapes": {name: list(w.shape) for name, w in params.named()},
        "seed": seed,
        "steps": steps,
    }
    if extra:
        manifest.update(extra)
    with open(path + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ToyNetParams:
    path = str(path)
    with open(path + ".json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "streampile-toynet-v1":
        raise ConfigError(f"unrecognized checkpoint manifest at {path}.json")
    raw = np.fromfile(path, dtype="<f4")
    expected = sum(int(np.prod(manifest["shapes"][name])) for name in manifest["order"])
    if raw.size != expected:
        raise ConfigError(f"checkpoint size mismatch: manifest wants {expected}, file has {raw.size}")
    out = {}
    offset = 0
    for name in manifest["order"]:
        shape = tuple(manifest["shapes"][name])
        size = int(np.prod(shape))
        out[name] = raw[offset : offset + size].astype(float).reshape(shape)
        offset += size
    params = ToyNetParams(**out)
    params.check_finite()
    return params
