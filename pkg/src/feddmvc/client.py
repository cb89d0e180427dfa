"""A federated participant holding one view of the data.

Clients never expose their raw features: the only values that leave a client
are the embeddings ``Z`` and soft assignments ``Q`` in a :class:`ClientUpload`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autoencoder as ae_mod
from .autoencoder import AeConfig, Autoencoder, Velocity
from .clustering import kl_divergence, kmeans, student_t_assign, student_t_grads
from .errors import ContractError, DivergenceError, InsufficientPointsError, MissingSampleError
from .numerics import RngStream, as_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ViewDataset:
    X: np.ndarray
    ids: np.ndarray
    view: int

    def __post_init__(self):
        X = as_matrix(self.X, "X")
        ids = np.asarray(self.ids, dtype=np.int64)
        if X.shape[0] < 1:
            raise ContractError(f"view {self.view} holds no samples")
        if ids.shape != (X.shape[0],):
            raise ContractError("need exactly one id per row")
        if np.unique(ids).size != ids.size:
            raise ContractError(f"duplicate sample ids in view {self.view}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class ClientConfig:
    n_clusters: int
    ae: AeConfig
    gamma: float = 0.1
    local_iters: int = 100
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    kmeans_n_init: int = 10

    def __post_init__(self):
        if self.gamma < 0:
            raise ContractError("gamma must be >= 0")
        if self.local_iters < 0:
            raise ContractError("local_iters must be >= 0")
        if self.n_clusters < 1:
            raise ContractError("n_clusters must be >= 1")


@dataclass(frozen=True)
class LocalModel:
    ae: Autoencoder
    centroids: np.ndarray
    config: ClientConfig

    def __post_init__(self):
        if self.centroids.shape[1] != self.ae.encoder.out_dim:
            raise ContractError("centroid width must equal the embedding dimension")


@dataclass(frozen=True)
class ClientUpload:
    Z: np.ndarray
    Q: np.ndarray
    ids: np.ndarray
    view: int

    def __post_init__(self):
        if not (self.Z.shape[0] == self.Q.shape[0] == len(self.ids)):
            raise ContractError("upload row counts disagree")


def init_round_one(data: ViewDataset, config: ClientConfig, rng: RngStream) -> LocalModel:
    """Pretrain the autoencoder on reconstruction alone, then seed centroids by K-means."""
    if config.n_clusters > data.n:
        raise InsufficientPointsError(
            f"view {data.view}: {data.n} samples cannot form {config.n_clusters} clusters"
        )
    net = ae_mod.init_autoencoder(config.ae, rng.child(0))
    net, _ = ae_mod.pretrain(net, data.X, config.ae, rng.child(1))
    Z = ae_mod.encode(net, data.X)
    km = kmeans(
        Z, config.n_clusters, rng.child(2), config.kmeans_max_iter, config.kmeans_tol, config.kmeans_n_init
    )
    return LocalModel(net, km.centroids, config)


def view_slice(C, view_dims, view: int) -> np.ndarray:
    """Columns of the concatenated prototypes owned by ``view``."""
    start = int(sum(view_dims[:view]))
    return np.asarray(C)[:, start : start + view_dims[view]]


def set_prototypes(model: LocalModel, C_view) -> LocalModel:
    """Replace the local centroids with this view's slice of the global prototypes."""
    C_view = as_matrix(C_view, "prototype slice")
    d = model.ae.encoder.out_dim
    if C_view.shape != (model.config.n_clusters, d):
        raise ContractError(
            f"prototype slice has shape {C_view.shape}, expected ({model.config.n_clusters}, {d})"
        )
    return replace(model, centroids=C_view.copy())


def map_pseudo_labels(P, global_ids, ids) -> np.ndarray:
    """Rows of the global ``P`` for this client's ids, in the client's order."""
    index = {int(g): i for i, g in enumerate(np.asarray(global_ids))}
    try:
        rows = [index[int(i)] for i in ids]
    except KeyError as e:
        raise MissingSampleError(f"sample id {e.args[0]} not in the global index") from None
    return np.asarray(P, dtype=np.float64)[rows]


def clustering_loss(P_m, Q_m) -> float:
    return kl_divergence(P_m, Q_m)


def total_loss(model: LocalModel, X, P_m, gamma: Optional[float] = None) -> float:
    """Reconstruction loss plus ``gamma`` times the KL clustering loss on ``X``."""
    gamma = model.config.gamma if gamma is None else gamma
    Z = ae_mod.encode(model.ae, X)
    loss = ae_mod.recon_loss(X, ae_mod.decode(model.ae, Z))
    if P_m is not None and gamma:
        loss += gamma * clustering_loss(P_m, student_t_assign(Z, model.centroids))
    return loss


def loss_and_grads(model: LocalModel, X, P_m, gamma: float):
    """Composite loss and its gradients w.r.t. encoder, decoder and centroids."""
    Z, enc_cache = ae_mod.forward(model.ae.encoder, X)
    Xhat, dec_cache = ae_mod.forward(model.ae.decoder, Z)
    loss = ae_mod.recon_loss(X, Xhat)
    dec_dW, dec_db, dZ = ae_mod.backward(model.ae.decoder, dec_cache, ae_mod.recon_grad(X, Xhat))
    dU = np.zeros_like(model.centroids)
    if P_m is not None and gamma:
        Q, dZc, dU = student_t_grads(Z, model.centroids, P_m)
        loss += gamma * kl_divergence(P_m, Q)
        dZ = dZ + gamma * dZc
        dU = gamma * dU
    enc_dW, enc_db, _ = ae_mod.backward(model.ae.encoder, enc_cache, dZ)
    return loss, (enc_dW, enc_db), (dec_dW, dec_db), dU


def local_train(
    model: LocalModel,
    data: ViewDataset,
    P_m: Optional[np.ndarray],
    rng: RngStream,
    iters: Optional[int] = None,
):
    """Minibatch descent on the composite loss; ``P_m`` is held fixed.

    With ``P_m=None`` the clustering term is dropped (reconstruction only).
    Returns ``(model, loss_trace)``.
    """
    T1 = model.config.local_iters if iters is None else iters
    if T1 == 0:
        return model, np.empty(0)
    if P_m is not None:
        P_m = as_matrix(P_m, "P_m")
        if P_m.shape != (data.n, model.config.n_clusters):
            raise ContractError(f"pseudo-labels have shape {P_m.shape}, expected ({data.n}, {model.config.n_clusters})")
    gamma = model.config.gamma if P_m is not None else 0.0
    cfg = model.config.ae
    batches = ae_mod.minibatches(data.n, cfg.batch_size, rng)
    enc, dec, U = model.ae.encoder, model.ae.decoder, model.centroids
    venc, vdec = Velocity.zeros_like(enc), Velocity.zeros_like(dec)
    vU = np.zeros_like(U)
    trace = []
    for step in range(T1):
        idx = next(batches)
        cur = LocalModel(Autoencoder(enc, dec), U, model.config)
        loss, (edW, edb), (ddW, ddb), dU = loss_and_grads(cur, data.X[idx], None if P_m is None else P_m[idx], gamma)
        if not np.isfinite(loss):
            raise DivergenceError(f"view {data.view}: local loss diverged", step=step)
        trace.append(loss)
        lr = cfg.step_size(len(idx))
        enc = ae_mod.apply_grads(enc, edW, edb, lr, venc, cfg.momentum, step)
        dec = ae_mod.apply_grads(dec, ddW, ddb, lr, vdec, cfg.momentum, step)
        if gamma:
            vU = cfg.momentum * vU + dU
            U = U - lr * vU
    return LocalModel(Autoencoder(enc, dec), U, model.config), np.asarray(trace)


def make_upload(model: LocalModel, data: ViewDataset) -> ClientUpload:
    Z = ae_mod.encode(model.ae, data.X)
    Q = student_t_assign(Z, model.centroids)
    return ClientUpload(Z=Z, Q=Q, ids=data.ids.copy(), view=data.view)
