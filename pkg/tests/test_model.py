import numpy as np
import pytest

from mhs.catalog import load_builtin_catalog
from mhs.embedding import EmbeddedSequence
from mhs.errors import BadMagic, CatalogMismatch, CorruptRecord, ShapeError, VersionMismatch
from mhs.gradcheck import random_params, toy_catalog
from mhs.model import (
    KERNEL_SIZES,
    ModelConfig,
    build_variant,
    channel_features,
    cosine,
    count_params,
    encode_symptoms,
    forward,
    forward_many,
    head_distance,
    init_params,
    load_model,
    logits,
    pair_distance,
    save_model,
    softmax,
    variant_catalog,
)


def naive_channel_features(w1, b1, w2, b2, E):
    """Brute-force conv -> relu -> pool2 -> conv -> relu -> global max."""
    d, k, c1 = w1.shape
    _, _, c2 = w2.shape
    L = E.shape[0]
    L1 = L - k + 1
    z1 = np.zeros((L1, c1))
    for t in range(L1):
        for c in range(c1):
            acc = b1[c]
            for ki in range(k):
                for di in range(d):
                    acc += E[t + ki, di] * w1[di, ki, c]
            z1[t, c] = acc
    a1 = np.maximum(z1, 0.0)
    lp = L1 // 2
    pooled = np.zeros((lp, c1))
    for t in range(lp):
        for c in range(c1):
            pooled[t, c] = max(a1[2 * t, c], a1[2 * t + 1, c])
    L2 = lp - k + 1
    z2 = np.zeros((L2, c2))
    for t in range(L2):
        for c in range(c2):
            acc = b2[c]
            for ki in range(k):
                for ci in range(c1):
                    acc += pooled[t + ki, ci] * w2[ci, ki, c]
            z2[t, c] = acc
    a2 = np.maximum(z2, 0.0)
    return a2.max(axis=0)


def test_channel_features_match_naive_oracle():
    rng = np.random.Generator(np.random.PCG64(0))
    for trial in range(30):
        d = int(rng.integers(2, 9))
        c1 = int(rng.integers(2, 5))
        c2 = int(rng.integers(2, 5))
        L = int(rng.integers(16, 33))
        config = ModelConfig(dim=d, c1=c1, c2=c2, n_heads=1)
        params = random_params(config, seed=trial)
        E = rng.standard_normal((L, d))
        seq = EmbeddedSequence(values=E)
        for ch in params.channels:
            fast = channel_features(ch, seq)
            slow = naive_channel_features(ch.w1, ch.b1, ch.w2, ch.b2, E)
            assert np.allclose(fast, slow, atol=1e-6)


def test_channel_length_arithmetic():
    # L=16, k=2: conv1 -> 15, pool -> 7, conv2 -> 6, global pool -> c2
    config = ModelConfig(dim=4, c1=3, c2=5, n_heads=1)
    params = random_params(config, seed=1)
    seq = EmbeddedSequence(values=np.random.default_rng(0).standard_normal((16, 4)))
    ch = params.channels[0]
    assert ch.kernel_size == 2
    from mhs.model import _channel_forward

    trace = _channel_forward(ch, np.asarray(seq.values, dtype=np.float64))
    assert trace.z1.shape[0] == 15
    assert trace.pooled.shape[0] == 7
    assert trace.z2.shape[0] == 6
    assert trace.features.shape == (5,)


def test_zero_input_zero_biases_gives_zero_features():
    config = ModelConfig(dim=4, c1=3, c2=3, n_heads=2)
    params = init_params(config, seed=0)  # biases start at zero
    seq = EmbeddedSequence(values=np.zeros((16, 4), dtype=np.float32))
    for ch in params.channels:
        assert np.all(channel_features(ch, seq) == 0.0)


def test_too_short_input_raises():
    config = ModelConfig(dim=4, c1=3, c2=3, n_heads=1)
    params = init_params(config, seed=0)
    seq = EmbeddedSequence(values=np.ones((10, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        channel_features(params.channels[2], seq)  # kernel 5 needs >= 14 rows


def test_width_mismatch_raises():
    config = ModelConfig(dim=4, c1=3, c2=3, n_heads=1)
    params = init_params(config, seed=0)
    with pytest.raises(ShapeError):
        forward(params, EmbeddedSequence(values=np.ones((16, 5), dtype=np.float32)), None)


# --- equation structure -----------------------------------------------------


def test_pair_distance_is_mean_of_channel_cosines():
    xs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    ys = [np.array([1.0, 0.0]), np.array([1.0, 0.0]), np.array([1.0, 0.0])]
    expected = np.mean([cosine(x, y) for x, y in zip(xs, ys)])
    assert abs(pair_distance(xs, ys) - expected) < 1e-12


def test_pair_distance_hand_values():
    # cosines 0.2, 0.4, 0.6 average to 0.4; realize them with planar vectors
    def vec_at(c):
        return np.array([c, np.sqrt(1 - c * c)])

    base = np.array([1.0, 0.0])
    xs = [base, base, base]
    ys = [vec_at(0.2), vec_at(0.4), vec_at(0.6)]
    assert abs(pair_distance(xs, ys) - 0.4) < 1e-12


def test_head_distance_is_mean_over_sentences():
    assert abs(head_distance([0.2, 0.6]) - 0.4) < 1e-12
    assert abs(head_distance([0.5]) - 0.5) < 1e-12


def test_logits_equation():
    W = np.array([[1.0, 0.0], [0.0, 1.0]])
    D = np.array([0.2, 0.6])
    o = logits(W, np.zeros(2), D)
    assert np.array_equal(o, np.array([0.2, 0.6]))
    p = softmax(o)
    expected = np.exp([0.2, 0.6]) / np.exp([0.2, 0.6]).sum()
    assert np.allclose(p, expected, atol=1e-12)


def test_cosine_scale_invariance():
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal(8), rng.standard_normal(8)
    for c in (1e-3, 2.0, 1e4):
        assert abs(cosine(x, c * y) - cosine(x, y)) < 1e-9


def test_identical_target_and_sentence_gives_distance_one():
    rng = np.random.default_rng(4)
    config = ModelConfig(dim=6, c1=4, c2=4, n_heads=2)
    params = random_params(config, seed=5)
    shared = EmbeddedSequence(values=rng.standard_normal((18, 6)))
    other = EmbeddedSequence(values=rng.standard_normal((20, 6)))
    trace = forward(params, shared, [[shared], [other]])
    assert abs(trace.D[0] - 1.0) < 1e-6
    assert trace.D[1] < 1.0


def test_distances_bounded():
    rng = np.random.default_rng(6)
    config = ModelConfig(dim=5, c1=3, c2=3, n_heads=3)
    for seed in range(5):
        params = random_params(config, seed=seed, scale=2.0)
        target = EmbeddedSequence(values=rng.standard_normal((17, 5)) * 10)
        symptoms = [
            [EmbeddedSequence(values=rng.standard_normal((16, 5))) for _ in range(2)]
            for _ in range(3)
        ]
        trace = forward(params, target, symptoms)
        assert np.all(trace.D >= -1.0) and np.all(trace.D <= 1.0)
        assert np.all(trace.pair_flat >= -1.0) and np.all(trace.pair_flat <= 1.0)
        assert abs(trace.p.sum() - 1.0) < 1e-6


def test_sentence_permutation_leaves_head_distance_unchanged():
    rng = np.random.default_rng(7)
    config = ModelConfig(dim=5, c1=3, c2=3, n_heads=1)
    params = random_params(config, seed=8)
    target = EmbeddedSequence(values=rng.standard_normal((20, 5)))
    sentences = [EmbeddedSequence(values=rng.standard_normal((16, 5))) for _ in range(3)]
    d1 = forward(params, target, [sentences]).D[0]
    d2 = forward(params, target, [sentences[::-1]]).D[0]
    assert abs(d1 - d2) < 1e-12


def test_head_permutation_with_matching_rows_leaves_logits_unchanged():
    rng = np.random.default_rng(8)
    config = ModelConfig(dim=5, c1=3, c2=3, n_heads=3)
    params = random_params(config, seed=9)
    target = EmbeddedSequence(values=rng.standard_normal((20, 5)))
    heads = [[EmbeddedSequence(values=rng.standard_normal((16, 5)))] for _ in range(3)]
    o1 = forward(params, target, heads).o
    perm = [2, 0, 1]
    params.W = params.W[perm]
    o2 = forward(params, target, [heads[i] for i in perm]).o
    assert np.allclose(o1, o2, atol=1e-12)


def test_zero_padding_robustness_at_init():
    # zero biases at init: appended zero rows cannot beat a positive max
    rng = np.random.default_rng(9)
    config = ModelConfig(dim=6, c1=4, c2=4, n_heads=1)
    params = init_params(config, seed=3)
    E = rng.standard_normal((20, 6)).astype(np.float32)
    padded = np.concatenate([E, np.zeros((7, 6), dtype=np.float32)])
    for ch in params.channels:
        f1 = channel_features(ch, EmbeddedSequence(values=E))
        f2 = channel_features(ch, EmbeddedSequence(values=padded))
        if np.all(f1 > 0):
            assert np.allclose(f1, f2, atol=1e-12)


def test_forward_many_matches_forward():
    rng = np.random.default_rng(10)
    config = ModelConfig(dim=5, c1=3, c2=3, n_heads=2)
    params = random_params(config, seed=11)
    targets = [
        EmbeddedSequence(values=rng.standard_normal((L, 5))) for L in (16, 20, 16, 24)
    ]
    symptoms = encode_symptoms(
        params,
        [[EmbeddedSequence(values=rng.standard_normal((16, 5)))] for _ in range(2)],
    )
    traces, groups = forward_many(params, targets, symptoms)
    assert sorted(i for members, _ in groups for i in members) == [0, 1, 2, 3]
    for seq, trace in zip(targets, traces):
        single = forward(params, seq, symptoms)
        assert np.allclose(trace.o, single.o, atol=1e-12)
        assert np.allclose(trace.D, single.D, atol=1e-12)


# --- variants and parameter count ----------------------------------------------


def test_variant_shapes():
    catalog = load_builtin_catalog("mdd")
    full = build_variant("full", catalog, dim=16, c1=4, c2=4, seed=0)
    assert full.W.shape == (9, 2)
    single = build_variant("single_head", catalog, dim=16, c1=4, c2=4, seed=0)
    assert single.W.shape == (1, 2)
    one = build_variant("one_description", catalog, dim=16, c1=4, c2=4, seed=0)
    assert one.W.shape == (9, 2)
    cnn = build_variant("cnn_only", catalog, dim=16, c1=4, c2=4, seed=0)
    assert cnn.W.shape == (12, 2)


def test_variant_catalogs():
    catalog = load_builtin_catalog("gad")
    assert variant_catalog("full", catalog) is catalog
    assert variant_catalog("single_head", catalog).n_heads == 1
    one = variant_catalog("one_description", catalog)
    assert one.n_heads == 7
    assert all(len(h.sentences()) == 1 for h in one.heads)
    assert variant_catalog("cnn_only", catalog) is None


def test_cnn_only_forward_ignores_symptoms():
    rng = np.random.default_rng(12)
    catalog = toy_catalog(2, 2)
    params = build_variant("cnn_only", catalog, dim=6, c1=3, c2=3, seed=1)
    params.W = rng.standard_normal((9, 2))
    target = EmbeddedSequence(values=rng.standard_normal((18, 6)))
    trace = forward(params, target, None)
    assert trace.D.shape == (9,)  # 3 channels x c2
    expected = logits(params.W, params.b, trace.D)
    assert np.allclose(trace.o, expected, atol=1e-12)


def test_count_params_closed_form():
    config = ModelConfig(dim=512, c1=100, c2=100, n_heads=9)
    assert count_params(config) == 612_620


def test_count_params_head_scaling():
    c9 = count_params(ModelConfig(dim=512, c1=100, c2=100, n_heads=9))
    c17 = count_params(ModelConfig(dim=512, c1=100, c2=100, n_heads=17))
    assert c17 - c9 == 16


def test_count_params_cnn_only():
    config = ModelConfig(dim=512, c1=100, c2=100, n_heads=9)
    assert count_params(config, variant="cnn_only") == 612_600 + 3 * 100 * 2 + 2


def test_count_params_matches_actual_tensor_sizes():
    config = ModelConfig(dim=24, c1=7, c2=5, n_heads=4)
    params = init_params(config, seed=0)
    total = sum(t.size for _, t in params.tensors())
    assert total == count_params(config)


# --- init ----------------------------------------------------------------------


def test_init_deterministic():
    config = ModelConfig(dim=8, c1=4, c2=4, n_heads=3)
    a = init_params(config, seed=42)
    b = init_params(config, seed=42)
    for (na, ta), (nb, tb) in zip(a.tensors(), b.tensors()):
        assert na == nb
        assert np.array_equal(ta, tb)


def test_init_bounds_and_zero_tail():
    config = ModelConfig(dim=8, c1=4, c2=4, n_heads=3)
    params = init_params(config, seed=1)
    for ch in params.channels:
        bound1 = np.sqrt(6.0 / (8 * ch.kernel_size + 4))
        assert np.all(np.abs(ch.w1) <= bound1)
        assert np.all(ch.b1 == 0.0) and np.all(ch.b2 == 0.0)
    assert np.all(params.W == 0.0) and np.all(params.b == 0.0)


# --- serialization ---------------------------------------------------------------


def test_model_round_trip_bitwise(tmp_path):
    catalog = load_builtin_catalog("bpd")
    params = build_variant("full", catalog, dim=12, c1=4, c2=4, seed=7)
    path = tmp_path / "m.mhsm"
    save_model(params, str(path))
    loaded = load_model(str(path))
    for (na, ta), (nb, tb) in zip(params.tensors(), loaded.tensors()):
        assert na == nb
        assert np.array_equal(ta, tb)
    assert loaded.config == params.config
    assert loaded.catalog == catalog


def test_model_save_deterministic(tmp_path):
    catalog = load_builtin_catalog("gad")
    params = build_variant("full", catalog, dim=8, c1=3, c2=3, seed=1)
    p1, p2 = tmp_path / "a.mhsm", tmp_path / "b.mhsm"
    save_model(params, str(p1))
    save_model(params, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_model_bad_magic(tmp_path):
    path = tmp_path / "x.mhsm"
    path.write_bytes(b"WRONG" + b"{}\n")
    with pytest.raises(BadMagic):
        load_model(str(path))


def test_model_truncated(tmp_path):
    catalog = load_builtin_catalog("gad")
    params = build_variant("full", catalog, dim=8, c1=3, c2=3, seed=1)
    path = tmp_path / "x.mhsm"
    save_model(params, str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(CorruptRecord):
        load_model(str(path))


def test_model_version_check(tmp_path):
    catalog = load_builtin_catalog("gad")
    params = build_variant("full", catalog, dim=8, c1=3, c2=3, seed=1)
    path = tmp_path / "x.mhsm"
    save_model(params, str(path))
    blob = path.read_bytes()
    head_end = blob.index(b"\n")
    header = blob[5:head_end].decode().replace('"version": 1', '"version": 9')
    path.write_bytes(b"MHSM1" + header.encode() + blob[head_end:])
    with pytest.raises(VersionMismatch):
        load_model(str(path))


def test_model_catalog_fingerprint_enforced(tmp_path):
    catalog = load_builtin_catalog("gad")
    other = load_builtin_catalog("mdd")
    params = build_variant("full", catalog, dim=8, c1=3, c2=3, seed=1)
    path = tmp_path / "x.mhsm"
    save_model(params, str(path))
    assert load_model(str(path), catalog=catalog) is not None
    with pytest.raises(CatalogMismatch):
        load_model(str(path), catalog=other)
