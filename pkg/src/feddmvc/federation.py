"""Synthetic data, view partitioning and the federated training loop."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import client as cl
from .autoencoder import AeConfig
from .client import ClientConfig, ClientUpload, ViewDataset
from .errors import ContractError, FedDMVCError, StageError
from .metrics import evaluate
from .numerics import RngStream
from .server import Broadcast, ServerConfig, server_epoch
from .wire import deserialize, serialize

log = logging.getLogger(__name__)

ABLATIONS = ("none", "no-pseudo", "no-proto", "no-extension", "no-patterns")


@dataclass(frozen=True)
class MultiViewData:
    """Every view of every sample; ``views[m]`` has one row per id."""

    views: Tuple[np.ndarray, ...]
    ids: np.ndarray
    labels: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.ids.size

    @property
    def n_views(self) -> int:
        return len(self.views)


@dataclass(frozen=True)
class SynthConfig:
    n: int = 500
    n_views: int = 3
    n_clusters: int = 4
    latent_dim: int = 5
    view_dims: Tuple[int, ...] = (12, 10, 8)
    noise: float = 1.0
    separation: float = 6.0
    nonlinear: bool = False

    def __post_init__(self):
        if min(self.n, self.n_views, self.n_clusters, self.latent_dim) < 1:
            raise ContractError("all sizes must be >= 1")
        if len(self.view_dims) != self.n_views or min(self.view_dims) < 1:
            raise ContractError("need one positive dimension per view")
        if self.noise < 0:
            raise ContractError("noise must be >= 0")


def _cluster_centers(K, L, separation, rng: RngStream) -> np.ndarray:
    # orthogonal directions of norm sep/sqrt(2) put every pair exactly `separation` apart
    if K <= L:
        Qm, _ = np.linalg.qr(rng.normal(size=(L, L)))
        return Qm[:, :K].T * (separation / np.sqrt(2.0))
    D = rng.normal(size=(K, L))
    return D / np.linalg.norm(D, axis=1, keepdims=True) * (separation / np.sqrt(2.0))


# Within-cluster latent spread and per-view observation noise, in units of
# the configured noise level. Most of the noise is view-specific, so combining
# views denoises while any single view stays clusterable.
LATENT_SPREAD = 0.5
VIEW_NOISE = 1.4


def synth(config: SynthConfig, rng: RngStream) -> MultiViewData:
    """Gaussian mixture in a latent space observed through per-view random affine maps.

    Cluster centres sit ``separation`` apart; latent points spread around them
    with std ``LATENT_SPREAD * noise``. View ``m`` observes
    ``f_m(z) + VIEW_NOISE * noise * eps`` with ``f_m`` a fixed random affine map
    (isometric on the latent space when ``D_m >= latent_dim``), optionally
    followed by ``tanh``.
    """
    c = config
    labels = np.arange(c.n) % c.n_clusters
    labels = labels[rng.permutation(c.n)]
    centers = _cluster_centers(c.n_clusters, c.latent_dim, c.separation, rng.child(0))
    z = centers[labels] + LATENT_SPREAD * c.noise * rng.normal(size=(c.n, c.latent_dim))
    views = []
    for m, D in enumerate(c.view_dims):
        vr = rng.child(10 + m)
        basis = np.linalg.qr(vr.normal(size=(max(D, c.latent_dim), c.latent_dim)))[0][:D]
        A = basis.T * np.sqrt(max(D, c.latent_dim) / D)
        b = vr.normal(size=D)
        X = z @ A + b
        if c.nonlinear:
            X = np.tanh(X / max(1.0, float(X.std())))
        views.append(X + VIEW_NOISE * c.noise * vr.normal(size=(c.n, D)))
    return MultiViewData(tuple(views), np.arange(c.n, dtype=np.int64), labels.astype(np.int64))


def partition(data: MultiViewData, overlap: float, rng: RngStream, alpha: Optional[float] = None):
    """Split full multi-view data into per-client datasets.

    ``floor(overlap * N)`` samples keep every view; each other sample keeps a
    random non-empty proper subset of views. Without ``alpha`` the subset is
    uniform; with ``alpha`` each view's share is drawn from a symmetric
    Dirichlet(alpha), so small ``alpha`` concentrates the partial samples on few
    clients. With a single view every sample is kept.

    Returns ``(client_datasets, H)``.
    """
    if not 0.0 <= overlap <= 1.0:
        raise ContractError(f"overlap rate must lie in [0, 1], got {overlap}")
    if alpha is not None and alpha <= 0:
        raise ContractError("Dirichlet alpha must be > 0")
    N, M = data.n, data.n_views
    H = np.zeros((N, M), dtype=bool)
    n_full = int(np.floor(overlap * N + 1e-9))
    order = rng.permutation(N)
    H[order[:n_full]] = True
    rest = order[n_full:]
    if M == 1:
        H[rest] = True
    elif alpha is None:
        # uniform over the 2^M - 2 non-empty proper subsets, encoded as bitmasks
        masks = rng.integers(1, (1 << M) - 1, size=rest.size)
        H[rest] = (masks[:, None] >> np.arange(M)) & 1 == 1
    else:
        share = rng.dirichlet(np.full(M, float(alpha)))
        share = np.maximum(share, 1e-12)
        share /= share.sum()
        sizes = rng.integers(1, M, size=rest.size)
        for i, s in zip(rest, sizes):
            H[i, rng.choice(M, size=int(s), replace=False, p=share)] = True
    clients = [
        ViewDataset(X=data.views[m][H[:, m]], ids=data.ids[H[:, m]], view=m) for m in range(M)
    ]
    return clients, H


@dataclass(frozen=True)
class RunConfig:
    n_clusters: int
    epochs: int = 10
    local_iters: int = 100
    extension_iters: int = 1
    gamma: float = 0.1
    ridge_eps: float = 1e-6
    overlap: float = 0.5
    dirichlet_alpha: Optional[float] = None
    seed: int = 0
    ablation: str = "none"
    embed_dim: int = 10
    hidden: Tuple[int, ...] = (256, 64)
    lr: float = 1e-2
    batch_size: int = 256
    pretrain_iters: int = 500
    momentum: float = 0.0
    pattern_solver: str = "ridge"
    anchor: int = 0
    concurrent: bool = False
    standardize: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if not 0.0 <= self.overlap <= 1.0:
            raise ContractError("overlap must lie in [0, 1]")
        if self.gamma < 0:
            raise ContractError("gamma must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ContractError(f"ablation must be one of {ABLATIONS}")

    def client_config(self, input_dim: int) -> ClientConfig:
        ae = AeConfig(
            input_dim=input_dim, embed_dim=self.embed_dim, hidden=tuple(self.hidden), lr=self.lr,
            batch_size=self.batch_size, pretrain_iters=self.pretrain_iters, momentum=self.momentum,
        )
        return ClientConfig(self.n_clusters, ae, gamma=self.gamma, local_iters=self.local_iters)

    def server_config(self) -> ServerConfig:
        ext = {"no-extension": "none", "no-patterns": "no-patterns"}.get(self.ablation, "full")
        return ServerConfig(
            self.n_clusters, ridge_eps=self.ridge_eps, extension_iters=self.extension_iters,
            extension=ext, pattern_solver=self.pattern_solver, anchor=self.anchor,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class EpochReport:
    epoch: int
    global_metrics: Optional[dict]
    local_metrics: List[Optional[dict]]
    diagnostics: dict

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    ids: np.ndarray
    labels: np.ndarray
    reports: List[EpochReport]
    epoch_seconds: List[float] = field(default_factory=list)


def standardize_view(data: ViewDataset) -> ViewDataset:
    """Z-score each feature with the client's own statistics; constant columns are centred only."""
    mu = data.X.mean(axis=0)
    sd = data.X.std(axis=0)
    sd[sd == 0] = 1.0
    return ViewDataset(X=(data.X - mu) / sd, ids=data.ids, view=data.view)


class ClientActor:
    """Owns one view's data and model; talks to the server only in wire bytes."""

    def __init__(
        self, data: ViewDataset, config: ClientConfig, rng: RngStream,
        ablation: str = "none", standardize: bool = True,
    ):
        if standardize:
            data = standardize_view(data)
        self.data = data
        self.config = config
        self.rng = rng
        self.ablation = ablation
        self.model: Optional[cl.LocalModel] = None
        self.last_upload: Optional[ClientUpload] = None

    def step(self, epoch: int, broadcast: Optional[bytes]) -> bytes:
        rng = self.rng.child(epoch)
        if epoch == 1:
            self.model = cl.init_round_one(self.data, self.config, rng)
        else:
            if broadcast is None or self.model is None:
                raise ContractError(f"view {self.data.view}: epoch {epoch} needs a broadcast")
            msg = deserialize(broadcast)
            if not isinstance(msg, Broadcast):
                raise ContractError("expected a broadcast message")
            model = self.model
            if self.ablation != "no-proto":
                model = cl.set_prototypes(model, cl.view_slice(msg.C, msg.view_dims, self.data.view))
            P_m = None
            if self.ablation != "no-pseudo":
                P_m = cl.map_pseudo_labels(msg.P, msg.ids, self.data.ids)
            self.model, _ = cl.local_train(model, self.data, P_m, rng)
        self.last_upload = cl.make_upload(self.model, self.data)
        return serialize(self.last_upload)


def _local_metrics(upload: ClientUpload, truth_by_id) -> Optional[dict]:
    if truth_by_id is None:
        return None
    return evaluate(np.argmax(upload.Q, axis=1), truth_by_id(upload.ids))


def run(
    clients: Sequence[ViewDataset],
    config: RunConfig,
    labels: Optional[np.ndarray] = None,
    label_ids: Optional[np.ndarray] = None,
    traffic: Optional[Callable[[str, bytes], None]] = None,
) -> RunResult:
    """Run the federated loop for ``config.epochs`` epochs.

    ``labels`` (indexed by ``label_ids``, default ``0..N-1``) are used only for
    reporting. ``traffic`` is called with every serialized message.
    """
    if not clients:
        raise ContractError("need at least one client")
    master = RngStream(config.seed)
    actors = [
        ClientActor(d, config.client_config(d.X.shape[1]), master.child(100 + d.view),
                    config.ablation, config.standardize)
        for d in sorted(clients, key=lambda d: d.view)
    ]
    server_cfg = config.server_config()
    server_rng = master.child(2)
    truth_by_id = None
    if labels is not None:
        labels = np.asarray(labels)
        lids = np.arange(labels.size) if label_ids is None else np.asarray(label_ids)
        lookup = dict(zip(lids.tolist(), labels.tolist()))
        truth_by_id = lambda ids: np.array([lookup[int(i)] for i in ids])  # noqa: E731

    pool = ThreadPoolExecutor(max_workers=len(actors)) if config.concurrent else None
    reports: List[EpochReport] = []
    times: List[float] = []
    wire: Optional[bytes] = None
    final = None
    try:
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            try:
                if pool is not None:
                    futures = [pool.submit(a.step, epoch, wire) for a in actors]
                    up_bytes = [f.result() for f in futures]
                else:
                    up_bytes = [a.step(epoch, wire) for a in actors]
            except FedDMVCError as e:
                raise StageError(epoch, "client", e) from e
            if traffic:
                for b in up_bytes:
                    traffic("upload", b)
            uploads = [deserialize(b) for b in up_bytes]
            try:
                bc, pred, diag = server_epoch(uploads, server_cfg, server_rng.child(epoch))
            except FedDMVCError as e:
                raise StageError(epoch, "server", e) from e
            wire = serialize(bc)
            if traffic:
                traffic("broadcast", wire)
            times.append(time.perf_counter() - t0)
            reports.append(
                EpochReport(
                    epoch=epoch,
                    global_metrics=evaluate(pred, truth_by_id(bc.ids)) if truth_by_id else None,
                    local_metrics=[_local_metrics(u, truth_by_id) for u in uploads],
                    diagnostics=diag,
                )
            )
            final = (bc.ids, pred)
            if reports[-1].global_metrics:
                log.info("epoch %d: global %s", epoch, reports[-1].global_metrics)
    finally:
        if pool is not None:
            pool.shutdown()
    return RunResult(ids=final[0], labels=final[1], reports=reports, epoch_seconds=times)


def run_synthetic(synth_config: SynthConfig, config: RunConfig, synth_seed: Optional[int] = None) -> RunResult:
    """Generate data, partition it by ``config.overlap``/``dirichlet_alpha`` and run."""
    seed = config.seed if synth_seed is None else synth_seed
    root = RngStream(seed, 7)
    data = synth(synth_config, root.child(0))
    clients, _ = partition(data, config.overlap, root.child(1), config.dirichlet_alpha)
    return run(clients, config, labels=data.labels, label_ids=data.ids)
