"""Interaction ingestion, k-core filtering, splitting and persistence."""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embeddings import EmbeddingSet
from .errors import (BadMagic, DimensionMismatch, EmptyInput, EmptyResult,
                     InputError, MalformedLine, Truncated, VersionMismatch)

MAGIC = b"GODE"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


@dataclass
class InteractionTable:
    users: list[str]
    items: list[str]
    timestamps: list[Optional[int]]

    def __len__(self) -> int:
        return len(self.users)

    def pairs(self) -> list[tuple[str, str]]:
        return list(zip(self.users, self.items))

    def subset(self, mask: np.ndarray) -> "InteractionTable":
        idx = np.flatnonzero(mask)
        return InteractionTable([self.users[i] for i in idx],
                                [self.items[i] for i in idx],
                                [self.timestamps[i] for i in idx])


@dataclass
class Dataset:
    n_users: int
    n_items: int
    train: np.ndarray  # (n, 2) int64 of (user_id, item_id)
    valid: np.ndarray
    test: np.ndarray
    user_tokens: list[str] = field(default_factory=list)
    item_tokens: list[str] = field(default_factory=list)

    @property
    def user_degree(self) -> np.ndarray:
        return np.bincount(self.train[:, 0], minlength=self.n_users)

    @property
    def item_degree(self) -> np.ndarray:
        return np.bincount(self.train[:, 1], minlength=self.n_items)

    @property
    def n_interactions(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    def stats(self) -> dict:
        n = self.n_interactions
        return {
            "users": self.n_users,
            "items": self.n_items,
            "interactions": n,
            "sparsity": 1.0 - n / (self.n_users * self.n_items),
        }


def load_interactions(path: str | os.PathLike, format: str = "tsv") -> InteractionTable:
    """Read a ``user<TAB>item[<TAB>timestamp]`` file.

    Duplicate (user, item) pairs are collapsed onto their first occurrence,
    keeping the earliest timestamp seen for the pair.
    """
    if format != "tsv":
        raise InputError(f"unsupported format {format!r}")
    first: dict[tuple[str, str], int] = {}
    users: list[str] = []
    items: list[str] = []
    stamps: list[Optional[int]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise MalformedLine(path, lineno, line)
            ts: Optional[int] = None
            if len(parts) >= 3 and parts[2] != "":
                try:
                    ts = int(float(parts[2]))
                except ValueError:
                    raise MalformedLine(path, lineno, line) from None
            key = (parts[0], parts[1])
            pos = first.get(key)
            if pos is None:
                first[key] = len(users)
                users.append(parts[0])
                items.append(parts[1])
                stamps.append(ts)
            elif ts is not None and (stamps[pos] is None or ts < stamps[pos]):
                stamps[pos] = ts
    if not users:
        raise EmptyInput(f"{path}: no interactions")
    return InteractionTable(users, items, stamps)


def _codes(tokens: Sequence[str]) -> np.ndarray:
    lookup: dict[str, int] = {}
    return np.fromiter((lookup.setdefault(t, len(lookup)) for t in tokens),
                       dtype=np.int64, count=len(tokens))


def k_core_filter(table: InteractionTable, k: int) -> InteractionTable:
    """Peel users and items with degree < k until none remain."""
    if k < 1:
        raise InputError("k must be >= 1")
    u = _codes(table.users)
    i = _codes(table.items)
    keep = np.ones(len(u), dtype=bool)
    while True:
        du = np.bincount(u[keep], minlength=u.max() + 1)
        di = np.bincount(i[keep], minlength=i.max() + 1)
        new = keep & (du[u] >= k) & (di[i] >= k)
        if new.sum() == keep.sum():
            break
        keep = new
    if not keep.any():
        raise EmptyResult(f"{k}-core of the interaction table is empty")
    return table.subset(keep)


def _split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    if n < 3:
        return n, 0, 0
    n_train = min(n, math.ceil(ratios[0] * n - 1e-9))
    n_valid = min(n - n_train, math.floor(ratios[1] * n + 1e-9))
    return n_train, n_valid, n - n_train - n_valid


def split(table: InteractionTable, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Dataset:
    """Per-user random train/valid/test split.

    Each user's interactions are permuted with one seeded generator (users
    visited in id order). Train takes ``ceil(ratios[0] * n)`` rows, valid
    ``floor(ratios[1] * n)`` of what is left and test the rest. Items left
    without any train interaction get all their rows moved to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-6 or min(ratios) < 0:
        raise InputError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    if len(table) == 0:
        raise EmptyInput("empty interaction table")
    user_tokens = list(dict.fromkeys(table.users))
    item_tokens = list(dict.fromkeys(table.items))
    u = _codes(table.users)
    i = _codes(table.items)

    order = np.argsort(u, kind="stable")
    bounds = np.searchsorted(u[order], np.arange(len(user_tokens) + 1))
    part = np.zeros(len(u), dtype=np.int8)  # 0 train, 1 valid, 2 test
    rng = np.random.default_rng(seed)
    for uid in range(len(user_tokens)):
        rows = order[bounds[uid]:bounds[uid + 1]]
        n_train, n_valid, _ = _split_sizes(len(rows), ratios)
        rows = rows[rng.permutation(len(rows))]
        part[rows[n_train:n_train + n_valid]] = 1
        part[rows[n_train + n_valid:]] = 2

    has_train = np.zeros(len(item_tokens), dtype=bool)
    has_train[i[part == 0]] = True
    part[~has_train[i]] = 0

    pairs = np.stack([u, i], axis=1)

    def _take(p):
        sel = pairs[part == p]
        return sel[np.lexsort((sel[:, 1], sel[:, 0]))]

    return Dataset(len(user_tokens), len(item_tokens), _take(0), _take(1), _take(2),
                   user_tokens, item_tokens)


def save_dataset(ds: Dataset, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        arr = getattr(ds, name)
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            fh.writelines(f"{a}\t{b}\n" for a, b in arr)
    with open(out / "id_map.jsonl", "w", encoding="utf-8") as fh:
        for kind, tokens in (("user", ds.user_tokens), ("item", ds.item_tokens)):
            for idx, tok in enumerate(tokens):
                fh.write(json.dumps({"kind": kind, "id": idx, "token": tok}) + "\n")


def load_dataset(path: str | os.PathLike) -> Dataset:
    root = Path(path)
    if not (root / "train.tsv").is_file():
        raise InputError(f"{root}: not a prepared dataset directory")
    users: list[str] = []
    items: list[str] = []
    with open(root / "id_map.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            (users if rec["kind"] == "user" else items).append(rec["token"])

    def _read(name):
        f = root / f"{name}.tsv"
        if f.stat().st_size == 0:
            return np.empty((0, 2), dtype=np.int64)
        return np.loadtxt(f, dtype=np.int64, delimiter="\t", ndmin=2).reshape(-1, 2)

    return Dataset(len(users), len(items), _read("train"), _read("valid"), _read("test"),
                   users, items)


def save_checkpoint(emb, path: str | os.PathLike) -> None:
    U = np.ascontiguousarray(emb.U, dtype="<f4")
    V = np.ascontiguousarray(emb.V, dtype="<f4")
    if U.shape[1] != V.shape[1]:
        raise DimensionMismatch("user and item embeddings differ in width")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, U.shape[0], V.shape[0], U.shape[1]))
        fh.write(U.tobytes())
        fh.write(V.tobytes())


def load_checkpoint(path: str | os.PathLike, expect: Optional[tuple[int, int]] = None,
                    expect_dim: Optional[int] = None):
    """Read an embedding checkpoint.

    ``expect`` is an optional ``(n_users, n_items)`` pair checked against the
    header. A ``<path>.json`` sidecar, when present, sets the flavor.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < _HEADER.size:
        raise Truncated(path, len(raw), _HEADER.size)
    _, version, n_users, n_items, d = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {VERSION}")
    expected = _HEADER.size + 4 * d * (n_users + n_items)
    if len(raw) < expected:
        raise Truncated(path, len(raw), expected)
    if expect is not None and tuple(expect) != (n_users, n_items):
        raise DimensionMismatch(f"{path}: holds {n_users}x{n_items} embeddings, dataset has {tuple(expect)}")
    if expect_dim is not None and expect_dim != d:
        raise DimensionMismatch(f"{path}: embedding width {d}, expected {expect_dim}")
    off = _HEADER.size
    U = np.frombuffer(raw, dtype="<f4", count=n_users * d, offset=off).reshape(n_users, d)
    V = np.frombuffer(raw, dtype="<f4", count=n_items * d,
                      offset=off + 4 * n_users * d).reshape(n_items, d)
    flavor = "initial"
    side = Path(str(path) + ".json")
    if side.is_file():
        flavor = json.loads(side.read_text()).get("flavor", flavor)
    return EmbeddingSet(U.astype(np.float32), V.astype(np.float32), flavor)
