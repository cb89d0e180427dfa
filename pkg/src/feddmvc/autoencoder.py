"""Fully-connected autoencoder with hand-written backpropagation.

Weights are stored as ``(fan_in, fan_out)`` arrays so a batch ``X`` of shape
``(n, fan_in)`` maps to ``X @ W + b``. The reconstruction loss is the summed
squared error over all samples.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError, DeserializationError, DivergenceError
from .numerics import RngStream, as_matrix

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "linear")


@dataclass(frozen=True)
class MlpParams:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ContractError("weights, biases and activations must have equal length")
        for i, (W, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ContractError(f"layer {i}: unknown activation {act!r}")
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ContractError(f"layer {i}: weight {W.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ContractError(f"layer {i}: input dim {W.shape[0]} does not chain")
        if self.activations and self.activations[-1] != "linear":
            raise ContractError("final layer must be linear")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass(frozen=True)
class AeConfig:
    input_dim: int
    embed_dim: int = 10
    hidden: Tuple[int, ...] = (256, 64)
    lr: float = 1e-3
    batch_size: int = 256
    pretrain_iters: int = 500
    momentum: float = 0.0
    # "mean" divides the summed-loss gradient by the batch size before stepping
    reduction: str = "mean"

    def step_size(self, batch_n: int) -> float:
        return self.lr / batch_n if self.reduction == "mean" else self.lr

    def __post_init__(self):
        if self.reduction not in ("mean", "sum"):
            raise ContractError("reduction must be 'mean' or 'sum'")
        if self.input_dim < 1 or self.embed_dim < 1 or any(h < 1 for h in self.hidden):
            raise ContractError("all layer sizes must be >= 1")
        if self.lr <= 0:
            raise ContractError("learning rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")


@dataclass(frozen=True)
class Autoencoder:
    encoder: MlpParams
    decoder: MlpParams


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _dact(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


def init_mlp(sizes: Sequence[int], activations: Sequence[str], rng: RngStream) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if len(sizes) - 1 != len(activations):
        raise ContractError("need one activation per layer")
    Ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        Ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return MlpParams(tuple(Ws), tuple(bs), tuple(activations))


def init_autoencoder(config: AeConfig, rng: RngStream) -> Autoencoder:
    enc_sizes = [config.input_dim, *config.hidden, config.embed_dim]
    dec_sizes = enc_sizes[::-1]
    acts = ["relu"] * len(config.hidden) + ["linear"]
    return Autoencoder(
        encoder=init_mlp(enc_sizes, acts, rng.child(0)),
        decoder=init_mlp(dec_sizes, acts, rng.child(1)),
    )


def forward(params: MlpParams, X) -> Tuple[np.ndarray, list]:
    """Forward pass returning the output and the per-layer cache for :func:`backward`."""
    X = as_matrix(X, "input")
    if X.shape[1] != params.in_dim:
        raise ContractError(f"input has {X.shape[1]} columns, network expects {params.in_dim}")
    cache = []
    a = X
    for W, b, act in zip(params.weights, params.biases, params.activations):
        z = a @ W + b
        out = _act(act, z)
        cache.append((a, z, out))
        a = out
    return a, cache


def backward(params: MlpParams, cache: list, grad_out: np.ndarray):
    """Backpropagate ``grad_out`` (dL/d output). Returns ``(dWs, dbs, d_input)``."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache[-1][2].shape:
        raise ContractError(f"gradient shape {g.shape} != output shape {cache[-1][2].shape}")
    n = len(params.weights)
    dWs, dbs = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        a_in, z, out = cache[i]
        g = _dact(params.activations[i], z, out, g)
        dWs[i] = a_in.T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return dWs, dbs, g


def encode(ae: Autoencoder, X) -> np.ndarray:
    return forward(ae.encoder, X)[0]


def decode(ae: Autoencoder, Z) -> np.ndarray:
    return forward(ae.decoder, Z)[0]


def recon_loss(X, Xhat) -> float:
    X = np.asarray(X, dtype=np.float64)
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if X.shape != Xhat.shape:
        raise ContractError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    return float(np.sum((X - Xhat) ** 2))


def recon_grad(X, Xhat) -> np.ndarray:
    return 2.0 * (np.asarray(Xhat) - np.asarray(X))


@dataclass
class Velocity:
    """Momentum buffers for one network."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "Velocity":
        return cls([np.zeros_like(W) for W in params.weights], [np.zeros_like(b) for b in params.biases])


def _check_finite(arrays, what, step):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite {what}", step=step)


def apply_grads(
    params: MlpParams,
    dWs,
    dbs,
    lr: float,
    velocity: Optional[Velocity] = None,
    momentum: float = 0.0,
    step: Optional[int] = None,
) -> MlpParams:
    """One (optionally heavy-ball) descent step; returns new params."""
    _check_finite(list(dWs) + list(dbs), "gradient", step)
    if velocity is None or momentum == 0.0:
        Ws = tuple(W - lr * dW for W, dW in zip(params.weights, dWs))
        bs = tuple(b - lr * db for b, db in zip(params.biases, dbs))
    else:
        for i in range(len(dWs)):
            velocity.weights[i] = momentum * velocity.weights[i] + dWs[i]
            velocity.biases[i] = momentum * velocity.biases[i] + dbs[i]
        Ws = tuple(W - lr * v for W, v in zip(params.weights, velocity.weights))
        bs = tuple(b - lr * v for b, v in zip(params.biases, velocity.biases))
    return replace(params, weights=Ws, biases=bs)


def grad_step(params: MlpParams, grad_out, X, lr: float) -> MlpParams:
    """Forward ``X``, backpropagate ``grad_out`` and take one descent step.

    ``grad_out`` may be any upstream gradient, e.g. a sum of reconstruction
    and clustering terms.
    """
    _, cache = forward(params, X)
    dWs, dbs, _ = backward(params, cache, grad_out)
    return apply_grads(params, dWs, dbs, lr)


def ae_backprop(ae: Autoencoder, X, grad_z_extra=None):
    """Gradients of ``recon_loss(X, decode(encode(X)))`` (+ an optional extra dL/dZ).

    Returns ``(loss, Z, (enc_dWs, enc_dbs), (dec_dWs, dec_dbs))``.
    """
    Z, enc_cache = forward(ae.encoder, X)
    Xhat, dec_cache = forward(ae.decoder, Z)
    loss = recon_loss(X, Xhat)
    dec_dW, dec_db, dZ = backward(ae.decoder, dec_cache, recon_grad(X, Xhat))
    if grad_z_extra is not None:
        dZ = dZ + grad_z_extra
    enc_dW, enc_db, _ = backward(ae.encoder, enc_cache, dZ)
    return loss, Z, (enc_dW, enc_db), (dec_dW, dec_db)


def minibatches(n: int, batch_size: int, rng: RngStream):
    """Endless stream of index batches, reshuffled every pass."""
    if batch_size >= n:
        idx = np.arange(n)
        while True:
            yield idx
    while True:
        perm = rng.permutation(n)
        for s in range(0, n - batch_size + 1, batch_size):
            yield perm[s : s + batch_size]


def pretrain(ae: Autoencoder, X, config: AeConfig, rng: RngStream):
    """Minimise the reconstruction loss for ``config.pretrain_iters`` minibatch steps.

    Returns ``(autoencoder, loss_trace)`` where the trace holds the per-step
    minibatch loss.
    """
    if config.pretrain_iters < 1:
        raise ContractError("pretrain_iters must be >= 1")
    X = as_matrix(X, "X")
    batches = minibatches(X.shape[0], config.batch_size, rng)
    venc = Velocity.zeros_like(ae.encoder)
    vdec = Velocity.zeros_like(ae.decoder)
    trace = []
    for step in range(config.pretrain_iters):
        xb = X[next(batches)]
        loss, _, (edW, edb), (ddW, ddb) = ae_backprop(ae, xb)
        if not np.isfinite(loss):
            raise DivergenceError("reconstruction loss diverged", step=step)
        trace.append(loss)
        lr = config.step_size(len(xb))
        ae = Autoencoder(
            encoder=apply_grads(ae.encoder, edW, edb, lr, venc, config.momentum, step),
            decoder=apply_grads(ae.decoder, ddW, ddb, lr, vdec, config.momentum, step),
        )
    log.debug("pretrain: loss %.4g -> %.4g over %d steps", trace[0], trace[-1], len(trace))
    return ae, np.asarray(trace)


# -- checkpoints -------------------------------------------------------------

MAGIC = b"FDMV"
CHECKPOINT_VERSION = 1
CHECKPOINT_TAG = 3
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_checkpoint(ae: Autoencoder) -> bytes:
    """Binary record: magic, version, tag, layer counts, per-layer dims, LE f64 payload."""
    nets = (ae.encoder, ae.decoder)
    parts = [MAGIC, struct.pack("<BBII", CHECKPOINT_VERSION, CHECKPOINT_TAG, len(nets[0].weights), len(nets[1].weights))]
    for net in nets:
        for W, act in zip(net.weights, net.activations):
            parts.append(struct.pack("<IIB", W.shape[0], W.shape[1], _ACT_CODES[act]))
    for net in nets:
        for W, b in zip(net.weights, net.biases):
            parts.append(W.astype("<f8").tobytes())
            parts.append(b.astype("<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(buf: bytes) -> Autoencoder:
    view = memoryview(buf)
    if bytes(view[:4]) != MAGIC:
        raise DeserializationError("bad magic", 0)
    off = 4
    if len(view) < off + 10:
        raise DeserializationError("truncated header", len(view))
    version, tag, n_enc, n_dec = struct.unpack_from("<BBII", view, off)
    if version != CHECKPOINT_VERSION:
        raise DeserializationError(f"unsupported version {version}", off)
    if tag != CHECKPOINT_TAG:
        raise DeserializationError(f"not a checkpoint (tag {tag})", off + 1)
    off += 10
    shapes = []
    for _ in range(n_enc + n_dec):
        if len(view) < off + 9:
            raise DeserializationError("truncated layer table", len(view))
        fi, fo, code = struct.unpack_from("<IIB", view, off)
        if code >= len(ACTIVATIONS):
            raise DeserializationError(f"unknown activation code {code}", off + 8)
        shapes.append((fi, fo, ACTIVATIONS[code]))
        off += 9
    layers = []
    for fi, fo, act in shapes:
        need = 8 * (fi * fo + fo)
        if len(view) < off + need:
            raise DeserializationError("truncated payload", len(view))
        W = np.frombuffer(view, "<f8", fi * fo, off).reshape(fi, fo).astype(np.float64)
        b = np.frombuffer(view, "<f8", fo, off + 8 * fi * fo).astype(np.float64)
        layers.append((W, b, act))
        off += need
    if off != len(view):
        raise DeserializationError("trailing bytes", off)

    def build(ls):
        return MlpParams(tuple(l[0] for l in ls), tuple(l[1] for l in ls), tuple(l[2] for l in ls))

    return Autoencoder(build(layers[:n_enc]), build(layers[n_enc:]))
