"""On-disk dataset layout.

A dataset directory holds::

    meta.json        {"num_views": M, "view_dims": [...], "num_samples": N}
    view_<m>.csv     one file per view, m = 0..M-1; columns id, x0, x1, ...
    labels.csv       optional; columns id, label (evaluation only)

A view file lists only the samples that view observes, so availability is
implied by which ids appear where. Header rows are optional on read.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .client import ViewDataset
from .errors import DatasetError


@dataclass
class Dataset:
    clients: List[ViewDataset]
    ids: np.ndarray
    H: np.ndarray
    labels: Optional[np.ndarray] = None


def _is_header(row: Sequence[str]) -> bool:
    try:
        int(row[0])
        return False
    except ValueError:
        return True


def _read_rows(path: Path):
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and _is_header(row):
                continue
            yield lineno, row


def read_view(path: Path, view: int) -> ViewDataset:
    ids, rows = [], []
    width = None
    seen = set()
    for lineno, row in _read_rows(path):
        try:
            sid = int(row[0])
            feats = [float(x) for x in row[1:]]
        except ValueError as e:
            raise DatasetError(f"{path}:{lineno}: cannot parse row ({e})") from None
        if width is None:
            width = len(feats)
        elif len(feats) != width:
            raise DatasetError(f"{path}:{lineno}: expected {width} features, found {len(feats)}")
        if sid in seen:
            raise DatasetError(f"{path}:{lineno}: duplicate sample id {sid}")
        if not all(np.isfinite(feats)):
            raise DatasetError(f"{path}:{lineno}: non-finite feature value")
        seen.add(sid)
        ids.append(sid)
        rows.append(feats)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    if width == 0:
        raise DatasetError(f"{path}: rows carry no features")
    return ViewDataset(X=np.array(rows), ids=np.array(ids, dtype=np.int64), view=view)


def read_labels(path: Path) -> Dict[int, int]:
    out: Dict[int, int] = {}
    for lineno, row in _read_rows(path):
        if len(row) != 2:
            raise DatasetError(f"{path}:{lineno}: expected 2 columns, found {len(row)}")
        try:
            sid, lab = int(row[0]), int(row[1])
        except ValueError as e:
            raise DatasetError(f"{path}:{lineno}: cannot parse row ({e})") from None
        if sid in out:
            raise DatasetError(f"{path}:{lineno}: duplicate sample id {sid}")
        out[sid] = lab
    return out


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise DatasetError(f"dataset directory {d} does not exist")
    meta_path = d / "meta.json"
    try:
        meta = json.loads(meta_path.read_text())
        M = int(meta["num_views"])
        dims = [int(x) for x in meta["view_dims"]]
    except FileNotFoundError:
        raise DatasetError(f"{meta_path} is missing") from None
    except (ValueError, KeyError, TypeError) as e:
        raise DatasetError(f"{meta_path}: malformed metadata ({e})") from None
    if len(dims) != M:
        raise DatasetError(f"{meta_path}: view_dims lists {len(dims)} views, num_views is {M}")
    clients = []
    for m in range(M):
        path = d / f"view_{m}.csv"
        if not path.exists():
            raise DatasetError(f"{path} is missing")
        v = read_view(path, m)
        if v.X.shape[1] != dims[m]:
            raise DatasetError(f"{path}: {v.X.shape[1]} features, meta.json says {dims[m]}")
        clients.append(v)
    ids = np.unique(np.concatenate([c.ids for c in clients]))
    if "num_samples" in meta and int(meta["num_samples"]) != ids.size:
        raise DatasetError(f"{meta_path}: num_samples={meta['num_samples']} but views hold {ids.size} ids")
    H = np.zeros((ids.size, M), dtype=bool)
    for m, c in enumerate(clients):
        H[np.searchsorted(ids, c.ids), m] = True
    labels = None
    lpath = d / "labels.csv"
    if lpath.exists():
        table = read_labels(lpath)
        missing = [int(i) for i in ids if int(i) not in table]
        if missing:
            raise DatasetError(f"{lpath}: no label for sample id {missing[0]}")
        labels = np.array([table[int(i)] for i in ids], dtype=np.int64)
    return Dataset(clients=clients, ids=ids, H=H, labels=labels)


def write_dataset(directory, clients: Sequence[ViewDataset], labels=None, label_ids=None) -> None:
    """Write the layout read by :func:`load_dataset` (17 significant digits per value)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    clients = sorted(clients, key=lambda c: c.view)
    ids = np.unique(np.concatenate([c.ids for c in clients]))
    meta = {"num_views": len(clients), "view_dims": [int(c.X.shape[1]) for c in clients], "num_samples": int(ids.size)}
    (d / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    for c in clients:
        with open(d / f"view_{c.view}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id"] + [f"x{j}" for j in range(c.X.shape[1])])
            for sid, row in zip(c.ids, c.X):
                w.writerow([int(sid)] + [f"{v:.17g}" for v in row])
    if labels is not None:
        labels = np.asarray(labels)
        lids = np.arange(labels.size) if label_ids is None else np.asarray(label_ids)
        lookup = dict(zip(lids.tolist(), labels.tolist()))
        write_labels(d / "labels.csv", ids, [lookup[int(i)] for i in ids])


def write_labels(path, ids, labels, header=("id", "label")) -> None:
    order = np.argsort(np.asarray(ids), kind="stable")
    ids = np.asarray(ids)[order]
    labels = np.asarray(labels)[order]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for sid, lab in zip(ids, labels):
            w.writerow([int(sid), int(lab)])
