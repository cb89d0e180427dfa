import numpy as np
import pytest

from feddmvc import federation as fed
from feddmvc.clustering import kmeans
from feddmvc.errors import ContractError, StageError
from feddmvc.metrics import acc
from feddmvc.numerics import RngStream
from feddmvc.server import ServerConfig, server_epoch
from feddmvc.wire import deserialize


def tiny_run_config(**kw):
    base = dict(n_clusters=3, epochs=2, local_iters=5, hidden=(16,), embed_dim=4, pretrain_iters=30,
                batch_size=64, seed=0)
    base.update(kw)
    return fed.RunConfig(**base)


def tiny_data(seed=0, n=90):
    sc = fed.SynthConfig(n=n, n_views=2, n_clusters=3, latent_dim=3, view_dims=(5, 4))
    return fed.synth(sc, RngStream(seed))


def test_partition_full_overlap():
    _, H = fed.partition(tiny_data(), 1.0, RngStream(0))
    assert H.all()


def test_partition_counts():
    data = fed.synth(fed.SynthConfig(n=10, n_views=2, view_dims=(3, 3)), RngStream(0))
    _, H = fed.partition(data, 0.5, RngStream(1))
    assert (H.sum(axis=1) == 2).sum() == 5
    assert (H.sum(axis=1) == 1).sum() == 5


@pytest.mark.parametrize("overlap", [0.0, 0.2, 0.37, 0.5, 1.0])
@pytest.mark.parametrize("alpha", [None, 0.01, 1.0])
def test_partition_invariants(overlap, alpha):
    data = fed.synth(fed.SynthConfig(n=101, n_views=3), RngStream(4))
    clients, H = fed.partition(data, overlap, RngStream(5), alpha)
    assert H.sum(axis=1).min() >= 1
    assert H.all(axis=1).sum() == int(np.floor(overlap * 101))
    for m, c in enumerate(clients):
        assert np.array_equal(c.ids, data.ids[H[:, m]])
        assert np.array_equal(c.X, data.views[m][H[:, m]])


def test_partition_single_view_keeps_everything():
    data = fed.synth(fed.SynthConfig(n=20, n_views=1, view_dims=(4,)), RngStream(0))
    _, H = fed.partition(data, 0.3, RngStream(0))
    assert H.all()


def test_partition_rejects_bad_rates():
    with pytest.raises(ContractError):
        fed.partition(tiny_data(), 1.5, RngStream(0))
    with pytest.raises(ContractError):
        fed.partition(tiny_data(), 0.5, RngStream(0), alpha=0.0)


def test_dirichlet_alpha_controls_count_spread():
    data = fed.synth(fed.SynthConfig(n=300, n_views=3), RngStream(0))

    def spread(alpha):
        out = []
        for s in range(30):
            _, H = fed.partition(data, 0.1, RngStream(s), alpha)
            out.append(np.var(H.sum(axis=0)))
        return np.mean(out)

    assert spread(1e-2) > spread(1e0) > spread(1e2)


def test_synth_trivial_and_deterministic():
    sc = fed.SynthConfig(n=50, n_clusters=1, noise=0.0)
    d = fed.synth(sc, RngStream(0))
    for X in d.views:
        assert np.allclose(X, X[0])
    a, b = fed.synth(fed.SynthConfig(), RngStream(3)), fed.synth(fed.SynthConfig(), RngStream(3))
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.views, b.views))
    assert np.array_equal(a.labels, b.labels)


@pytest.mark.parametrize("seed", range(3))
def test_synth_single_view_sanity_floor(seed):
    d = fed.synth(fed.SynthConfig(), RngStream(seed))
    for X in d.views:
        km = kmeans(X, 4, RngStream(seed), n_init=10)
        assert acc(km.labels, d.labels) >= 0.9


def test_run_single_epoch_is_server_on_pretrained_uploads():
    data = tiny_data()
    clients, _ = fed.partition(data, 0.5, RngStream(1))
    cfg = tiny_run_config(epochs=1)
    seen = []
    res = fed.run(clients, cfg, traffic=lambda kind, b: seen.append((kind, b)))
    uploads = [deserialize(b) for k, b in seen if k == "upload"]
    _, labels, _ = server_epoch(uploads, cfg.server_config(), RngStream(cfg.seed).child(2).child(1))
    assert np.array_equal(res.labels, labels)
    assert [k for k, _ in seen] == ["upload", "upload", "broadcast"]


def test_run_deterministic_and_concurrency_safe():
    data = tiny_data(1)
    clients, _ = fed.partition(data, 0.5, RngStream(2))
    kw = dict(labels=data.labels, label_ids=data.ids)
    a = fed.run(clients, tiny_run_config(), **kw)
    b = fed.run(clients, tiny_run_config(), **kw)
    c = fed.run(clients, tiny_run_config(concurrent=True), **kw)
    for other in (b, c):
        assert [r.to_dict() for r in a.reports] == [r.to_dict() for r in other.reports]
        assert np.array_equal(a.labels, other.labels)


def test_raw_data_never_on_the_wire():
    data = tiny_data(2)
    sentinel = 123456.789012345
    views = [v.copy() for v in data.views]
    views[0][3, 1] = sentinel
    views[1][7, 2] = -sentinel
    data = fed.MultiViewData(tuple(views), data.ids, data.labels)
    clients, _ = fed.partition(data, 1.0, RngStream(0))
    traffic = []
    fed.run(clients, tiny_run_config(), traffic=lambda k, b: traffic.append(b))
    needles = [np.float64(s).tobytes() for s in (sentinel, -sentinel)]
    assert traffic and not any(n in b for b in traffic for n in needles)


def test_stage_errors_name_epoch_and_stage():
    data = tiny_data()
    clients, _ = fed.partition(data, 0.0, RngStream(0))
    # no complete sample anywhere: prototypes are undefined on the server
    with pytest.raises(StageError, match="epoch 1.*server"):
        fed.run(clients, tiny_run_config())


def test_run_config_validation():
    with pytest.raises(ContractError):
        tiny_run_config(ablation="nope")
    with pytest.raises(ContractError):
        tiny_run_config(epochs=0)
    assert tiny_run_config(ablation="no-extension").server_config().extension == "none"
    assert tiny_run_config(ablation="no-patterns").server_config().extension == "no-patterns"
    assert isinstance(tiny_run_config().server_config(), ServerConfig)
