import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhs.catalog import load_builtin_catalog
from mhs.corpus import (
    Corpus,
    Post,
    Rejected,
    RejectReason,
    TokenizedText,
    default_tokenizer,
    generate_synthetic,
    load_corpus,
    preprocess,
    save_corpus,
    stratified_folds,
)
from mhs.errors import InsufficientData, ValidationError


def make_post(body, title="a title here", label=0, pid="p0"):
    return Post(id=pid, title=title, body=body, label=label)


def test_tokenizer_lowercases_and_strips_punctuation():
    assert default_tokenizer("Feeling down, depressed, or hopeless.") == [
        "feeling", "down", "depressed", "or", "hopeless",
    ]


def test_tokenizer_keeps_inner_apostrophes():
    assert default_tokenizer("I can't stop.") == ["i", "can't", "stop"]


def test_url_rejudged_before_anything_else():
    post = make_post("short http://x.co")
    result = preprocess(post)
    assert isinstance(result, Rejected)
    assert result.reason == RejectReason.CONTAINS_URL


def test_www_counts_as_url():
    post = make_post("please visit www.example.com for my whole life story ok")
    assert preprocess(post).reason == RejectReason.CONTAINS_URL


def test_email_is_pii():
    post = make_post("write me at someone@example.com about all of these things")
    assert preprocess(post).reason == RejectReason.CONTAINS_PII


def test_user_mention_is_pii():
    post = make_post("thanks to u/someuser for all the help with everything here")
    assert preprocess(post).reason == RejectReason.CONTAINS_PII


def test_nine_tokens_too_short():
    post = Post(id="p", title="", body="one two three four five six seven eight nine", label=0)
    assert preprocess(post).reason == RejectReason.TOO_SHORT


def test_ten_tokens_pass():
    post = Post(id="p", title="", body="one two three four five six seven eight nine ten", label=0)
    result = preprocess(post)
    assert isinstance(result, TokenizedText)
    assert len(result.tokens) == 10
    assert not result.truncated


def test_non_english_rejected():
    body = " ".join(["слово"] * 12)
    assert preprocess(make_post(body, title="")).reason == RejectReason.NOT_ENGLISH


def test_mostly_english_passes():
    body = "this is mostly english text with one слово in the middle of it"
    assert isinstance(preprocess(make_post(body, title="")), TokenizedText)


def test_truncation_at_512():
    body = " ".join(f"tok{i}" for i in range(600))
    result = preprocess(make_post(body, title=""))
    assert isinstance(result, TokenizedText)
    assert len(result.tokens) == 512
    assert result.truncated


def test_title_and_body_concatenated():
    post = Post(id="p", title="one two three four five", body="six seven eight nine ten", label=1)
    result = preprocess(post)
    assert result.tokens == ("one", "two", "three", "four", "five",
                             "six", "seven", "eight", "nine", "ten")


def test_label_validation():
    with pytest.raises(ValidationError):
        Post(id="p", title="", body="x", label=2)


def test_duplicate_post_ids_rejected():
    with pytest.raises(ValidationError):
        Corpus(posts=(make_post("a", pid="p0"), make_post("b", pid="p0")))


def test_corpus_jsonl_round_trip(tmp_path):
    corpus = Corpus(
        posts=(
            Post(id="a", title="t1", body="b1", label=1, source="s"),
            Post(id="b", title="t2", body="b2", label=0, source="s"),
        ),
        task_name="x",
    )
    path = tmp_path / "c.jsonl"
    save_corpus(corpus, str(path))
    loaded = load_corpus(str(path), task_name="x")
    assert loaded.posts == corpus.posts


def test_corpus_save_deterministic(tmp_path):
    catalog = load_builtin_catalog("mdd")
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_corpus(generate_synthetic(catalog, 5, 5, 0.5, seed=9), str(p1))
    save_corpus(generate_synthetic(catalog, 5, 5, 0.5, seed=9), str(p2))
    assert p1.read_bytes() == p2.read_bytes()


# --- folds ---------------------------------------------------------------


def test_folds_exact_positive_balance():
    labels = [1] * 20 + [0] * 80
    corpus = Corpus(posts=tuple(make_post("x " * 12, pid=f"p{i}", label=l)
                                for i, l in enumerate(labels)))
    folds = stratified_folds(corpus, 5, seed=7)
    assert len(folds) == 5
    for _, test_idx in folds:
        assert sum(labels[i] for i in test_idx) == 4


def test_folds_deterministic():
    labels = [1] * 10 + [0] * 30
    corpus = Corpus(posts=tuple(make_post("x " * 12, pid=f"p{i}", label=l)
                                for i, l in enumerate(labels)))
    a = stratified_folds(corpus, 4, seed=3)
    b = stratified_folds(corpus, 4, seed=3)
    for (ta, sa), (tb, sb) in zip(a, b):
        assert np.array_equal(ta, tb) and np.array_equal(sa, sb)


def test_folds_insufficient_data():
    corpus = Corpus(posts=tuple(make_post("x " * 12, pid=f"p{i}", label=i % 2)
                                for i in range(3)))
    with pytest.raises(InsufficientData):
        stratified_folds(corpus, 5, seed=0)


@settings(max_examples=25, deadline=None)
@given(
    n_pos=st.integers(5, 25),
    n_neg=st.integers(5, 60),
    k=st.integers(2, 5),
    seed=st.integers(0, 1000),
)
def test_folds_partition_property(n_pos, n_neg, k, seed):
    labels = np.array([1] * n_pos + [0] * n_neg)
    from mhs.corpus import stratified_folds_from_labels

    folds = stratified_folds_from_labels(labels, k, seed)
    all_test = np.concatenate([test for _, test in folds])
    assert sorted(all_test.tolist()) == list(range(len(labels)))  # disjoint cover
    for train, test in folds:
        assert set(train) | set(test) == set(range(len(labels)))
        assert not set(train) & set(test)
        # stratification within one post of the ideal rate
        ideal = n_pos / k
        assert abs(labels[test].sum() - ideal) < 1


# --- synthetic generator --------------------------------------------------


def test_synthetic_shape_and_rate():
    catalog = load_builtin_catalog("mdd")
    corpus = generate_synthetic(catalog, 200, 800, 0.5, seed=1)
    assert len(corpus) == 1000
    labels = corpus.labels()
    assert labels.sum() == 200


def test_synthetic_every_post_passes_preprocess():
    catalog = load_builtin_catalog("gad")
    corpus = generate_synthetic(catalog, 30, 30, 0.7, seed=2)
    for post in corpus.posts:
        assert isinstance(preprocess(post), TokenizedText)


def test_synthetic_deterministic():
    catalog = load_builtin_catalog("mdd")
    a = generate_synthetic(catalog, 20, 20, 0.6, seed=5)
    b = generate_synthetic(catalog, 20, 20, 0.6, seed=5)
    assert a.posts == b.posts


def test_synthetic_positive_overlap_exceeds_negative():
    catalog = load_builtin_catalog("mdd")
    corpus = generate_synthetic(catalog, 50, 50, 0.5, seed=3)
    catalog_tokens = {
        t for head in catalog.heads for s in head.sentences() for t in default_tokenizer(s)
    }

    def overlap(post):
        tokens = default_tokenizer(post.text())
        return sum(t in catalog_tokens for t in tokens) / len(tokens)

    pos = np.mean([overlap(p) for p in corpus.posts if p.label == 1])
    neg = np.mean([overlap(p) for p in corpus.posts if p.label == 0])
    assert pos > neg


def test_synthetic_zero_overlap_is_null_signal():
    catalog = load_builtin_catalog("mdd")
    corpus = generate_synthetic(catalog, 50, 50, 0.0, seed=4)
    catalog_tokens = {
        t for head in catalog.heads for s in head.sentences() for t in default_tokenizer(s)
    }

    def overlap(post):
        tokens = default_tokenizer(post.text())
        return sum(t in catalog_tokens for t in tokens) / len(tokens)

    pos = np.mean([overlap(p) for p in corpus.posts if p.label == 1])
    neg = np.mean([overlap(p) for p in corpus.posts if p.label == 0])
    assert abs(pos - neg) < 0.1


def test_synthetic_validates_args():
    catalog = load_builtin_catalog("mdd")
    with pytest.raises(ValidationError):
        generate_synthetic(catalog, 0, 5, 0.5, seed=0)
    with pytest.raises(ValidationError):
        generate_synthetic(catalog, 5, 5, 1.5, seed=0)
