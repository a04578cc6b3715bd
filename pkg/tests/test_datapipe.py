import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gode import datapipe
from gode.datapipe import InteractionTable, k_core_filter, load_interactions, split
from gode.embeddings import EmbeddingSet
from gode.errors import BadMagic, DimensionMismatch, EmptyInput, EmptyResult, MalformedLine, Truncated, VersionMismatch


def _write(tmp_path, text, name="raw.tsv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _table(pairs):
    return InteractionTable([u for u, _ in pairs], [i for _, i in pairs], [None] * len(pairs))


def test_duplicates_collapse(tmp_path):
    t = load_interactions(_write(tmp_path, "u1\ti1\nu1\ti1\nu2\ti1\n"))
    assert t.pairs() == [("u1", "i1"), ("u2", "i1")]


def test_duplicate_keeps_earliest_timestamp(tmp_path):
    t = load_interactions(_write(tmp_path, "u1\ti1\t50\n# comment\nu2\ti2\nu1\ti1\t20\nu1\ti1\t90\n"))
    assert t.pairs() == [("u1", "i1"), ("u2", "i2")]
    assert t.timestamps == [20, None]


def test_empty_file(tmp_path):
    with pytest.raises(EmptyInput):
        load_interactions(_write(tmp_path, "# only a comment\n\n"))


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(MalformedLine) as exc:
        load_interactions(_write(tmp_path, "u1\ti1\nbroken\n"))
    assert exc.value.lineno == 2


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_interactions(tmp_path / "nope.tsv")


def test_kcore_noop_when_dense():
    pairs = [(f"u{u}", f"i{i}") for u in range(3) for i in range(3)]
    assert k_core_filter(_table(pairs), 3).pairs() == pairs


def test_kcore_cascade_empties():
    # u2 goes (degree 1), which drops i1 to degree 1, which drops u1 to degree 4
    pairs = [("u1", f"i{j}") for j in range(1, 6)] + [("u2", "i1")]
    with pytest.raises(EmptyResult):
        k_core_filter(_table(pairs), 5)


def test_kcore_partial_peel():
    core = [(f"u{u}", f"i{i}") for u in range(2) for i in range(2)]
    t = k_core_filter(_table(core + [("u9", "i0"), ("u0", "i7")]), 2)
    assert t.pairs() == core


pair_lists = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=1, max_size=60)


@settings(max_examples=60, deadline=None)
@given(pair_lists, st.integers(1, 3), st.randoms(use_true_random=False))
def test_kcore_fixed_point_idempotent_order_free(raw, k, rnd):
    pairs = list(dict.fromkeys((f"u{u}", f"i{i}") for u, i in raw))
    try:
        out = k_core_filter(_table(pairs), k)
    except EmptyResult:
        shuffled = pairs[:]
        rnd.shuffle(shuffled)
        with pytest.raises(EmptyResult):
            k_core_filter(_table(shuffled), k)
        return
    res = out.pairs()
    users = {u for u, _ in res}
    items = {i for _, i in res}
    assert all(sum(1 for u, _ in res if u == x) >= k for x in users)
    assert all(sum(1 for _, i in res if i == x) >= k for x in items)
    assert k_core_filter(out, k).pairs() == res
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    assert set(k_core_filter(_table(shuffled), k).pairs()) == set(res)
    # maximality: the k-core contains every subgraph whose degrees are all >= k;
    # check against brute-force peeling on the raw pair set
    cur = set(pairs)
    while True:
        du, di = {}, {}
        for u, i in cur:
            du[u] = du.get(u, 0) + 1
            di[i] = di.get(i, 0) + 1
        nxt = {(u, i) for u, i in cur if du[u] >= k and di[i] >= k}
        if nxt == cur:
            break
        cur = nxt
    assert cur == set(res)


def _user_table(counts):
    pairs = []
    for u, n in enumerate(counts):
        pairs += [(f"u{u}", f"i{j}") for j in range(n)]
    return _table(pairs)


def test_split_ten_interactions():
    ds = split(_user_table([10, 10, 10]), seed=3)
    for u in range(3):
        assert (ds.train[:, 0] == u).sum() == 8
        assert (ds.valid[:, 0] == u).sum() == 1
        assert (ds.test[:, 0] == u).sum() == 1


def test_split_sizes_rule():
    assert datapipe._split_sizes(5, (0.8, 0.1, 0.1)) == (4, 0, 1)
    assert datapipe._split_sizes(10, (0.8, 0.1, 0.1)) == (8, 1, 1)
    assert datapipe._split_sizes(2, (0.8, 0.1, 0.1)) == (2, 0, 0)
    assert datapipe._split_sizes(15, (0.8, 0.1, 0.1)) == (12, 1, 2)


def test_split_five_interactions():
    # items shared across users so none is cold
    pairs = [(f"u{u}", f"i{j}") for u in range(4) for j in range(5)]
    ds = split(_table(pairs), seed=0)
    for u in range(4):
        n_tr = (ds.train[:, 0] == u).sum()
        n_va = (ds.valid[:, 0] == u).sum()
        n_te = (ds.test[:, 0] == u).sum()
        assert n_tr + n_va + n_te == 5
        assert n_va <= 1 and n_te <= 1 and n_tr >= 4


def test_split_short_users_all_train():
    ds = split(_user_table([2, 1]), seed=0)
    assert len(ds.train) == 3 and len(ds.valid) == 0 and len(ds.test) == 0


def _random_table(rng, n_users=30, n_items=20, per_user=(3, 12)):
    pairs = []
    for u in range(n_users):
        n = int(rng.integers(*per_user))
        for i in rng.choice(n_items, size=n, replace=False):
            pairs.append((f"u{u}", f"i{int(i)}"))
    rng.shuffle(pairs)
    return _table(pairs)


def test_split_partition_and_warm_items(rng):
    t = _random_table(rng)
    ds = split(t, seed=11)
    parts = [ds.train, ds.valid, ds.test]
    as_sets = [set(map(tuple, p.tolist())) for p in parts]
    assert sum(len(s) for s in as_sets) == len(t)
    assert not (as_sets[0] & as_sets[1]) and not (as_sets[0] & as_sets[2]) and not (as_sets[1] & as_sets[2])
    decoded = {(ds.user_tokens[u], ds.item_tokens[i]) for s in as_sets for u, i in s}
    assert decoded == set(t.pairs())
    train_users, train_items = set(ds.train[:, 0]), set(ds.train[:, 1])
    for p in parts[1:]:
        assert set(p[:, 0]) <= train_users
        assert set(p[:, 1]) <= train_items
    assert (ds.user_degree == np.bincount(ds.train[:, 0], minlength=ds.n_users)).all()
    assert ds.user_tokens == list(dict.fromkeys(t.users))


def test_split_deterministic(tmp_path, rng):
    t = _random_table(rng)
    a, b = split(t, seed=5), split(t, seed=5)
    datapipe.save_dataset(a, tmp_path / "a")
    datapipe.save_dataset(b, tmp_path / "b")
    for name in ("train.tsv", "valid.tsv", "test.tsv", "id_map.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = split(t, seed=6)
    assert not np.array_equal(a.test, c.test)


def test_dataset_roundtrip(tmp_path, rng):
    ds = split(_random_table(rng), seed=1)
    datapipe.save_dataset(ds, tmp_path / "d")
    back = datapipe.load_dataset(tmp_path / "d")
    assert (back.n_users, back.n_items) == (ds.n_users, ds.n_items)
    for name in ("train", "valid", "test"):
        assert np.array_equal(getattr(back, name), getattr(ds, name))
    assert back.item_tokens == ds.item_tokens


def _emb(rng, nu=7, ni=5, d=3):
    return EmbeddingSet(rng.standard_normal((nu, d)).astype(np.float32),
                        rng.standard_normal((ni, d)).astype(np.float32))


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    E = _emb(rng)
    E.U[0, 0] = np.float32(np.nextafter(np.float32(1), np.float32(2)))
    p = tmp_path / "e.ckpt"
    datapipe.save_checkpoint(E, p)
    back = datapipe.load_checkpoint(p)
    assert back.U.tobytes() == E.U.tobytes() and back.V.tobytes() == E.V.tobytes()
    assert p.stat().st_size == 32 + 4 * 3 * 12


def test_checkpoint_bad_magic(tmp_path, rng):
    p = tmp_path / "e.ckpt"
    datapipe.save_checkpoint(_emb(rng), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        datapipe.load_checkpoint(p)


def test_checkpoint_truncated_reports_offset(tmp_path, rng):
    p = tmp_path / "e.ckpt"
    datapipe.save_checkpoint(_emb(rng), p)
    raw = p.read_bytes()
    cut = 32 + 4 * 10
    p.write_bytes(raw[:cut])
    with pytest.raises(Truncated) as exc:
        datapipe.load_checkpoint(p)
    assert exc.value.offset == cut and exc.value.expected == len(raw)


def test_checkpoint_version_and_dims(tmp_path, rng):
    p = tmp_path / "e.ckpt"
    datapipe.save_checkpoint(_emb(rng), p)
    with pytest.raises(DimensionMismatch):
        datapipe.load_checkpoint(p, expect=(8, 5))
    raw = bytearray(p.read_bytes())
    raw[4] = 2
    p.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        datapipe.load_checkpoint(p)
