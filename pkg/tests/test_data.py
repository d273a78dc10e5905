from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedrare.data import (
    TriggerSpec,
    Vocabulary,
    class_bands,
    dirichlet_partition,
    insert_triggers,
    load_corpus,
    make_backdoor_testset,
    select_rare_tokens,
    synth_corpus,
)
from fedrare.errors import (
    ConfigError,
    EmptyCorpusError,
    EmptyEvaluationError,
    InfeasiblePartitionError,
)
from fedrare.model import Example


def label_tv(examples, reference, C):
    h = np.bincount([e.label for e in examples], minlength=C) / len(examples)
    return 0.5 * np.abs(h - reference).sum()


def test_synth_corpus_deterministic():
    a = synth_corpus(100, 2, 50, 8, 0.5, seed=3)
    b = synth_corpus(100, 2, 50, 8, 0.5, seed=3)
    assert a[1] == b[1] and np.array_equal(a[0].counts, b[0].counts)


def test_synth_corpus_rejects_empty():
    with pytest.raises(EmptyCorpusError):
        synth_corpus(100, 2, 0, 8, 0.5, seed=0)


def test_full_skew_majority_band_is_perfect():
    _, examples = synth_corpus(100, 2, 200, 9, 1.0, seed=1)
    bands = class_bands(100, 2)
    for e in examples:
        votes = [sum(t in band for t in e.tokens) for band in bands]
        assert int(np.argmax(votes)) == e.label


def test_logistic_count_baseline_separates_classes():
    from sklearn.linear_model import LogisticRegression

    v, C = 200, 4
    _, examples = synth_corpus(v, C, 2000, 16, 0.2, seed=11)
    X = np.zeros((len(examples), v))
    for i, e in enumerate(examples):
        np.add.at(X[i], list(e.tokens), 1)
    y = np.array([e.label for e in examples])
    clf = LogisticRegression(max_iter=2000).fit(X[:1500], y[:1500])
    assert clf.score(X[1500:], y[1500:]) >= 0.90


def test_select_rare_tie_break():
    vocab = Vocabulary(4, np.array([5, 0, 3, 0]))
    assert select_rare_tokens(vocab, 2) == [1, 3]
    assert select_rare_tokens(vocab, 4) == [1, 3, 2, 0]


def test_rare_tokens_absent_from_corpus():
    vocab, examples = synth_corpus(500, 4, 4000, 16, 0.2, seed=0)
    for tok in select_rare_tokens(vocab, 3):
        present = sum(tok in e.tokens for e in examples)
        assert present <= 0.01 * len(examples)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=20), st.data())
def test_select_rare_is_lowest_counts_with_id_ties(counts, data):
    k = data.draw(st.integers(1, len(counts)))
    picked = select_rare_tokens(Vocabulary(len(counts), np.array(counts)), k)
    rest = [i for i in range(len(counts)) if i not in picked]
    assert len(set(picked)) == k
    assert all((counts[p], p) < (counts[r], r) for p in picked for r in rest)
    assert picked == sorted(picked, key=lambda i: (counts[i], i))


def test_partition_conservation_and_nonempty():
    _, examples = synth_corpus(100, 4, 400, 6, 0.5, seed=2)
    clients = dirichlet_partition(examples, 30, 0.05, seed=2)
    assert all(len(c) > 0 for c in clients)
    got = Counter(e for c in clients for e in c.examples)
    assert got == Counter(examples)
    assert sum(len(c) for c in clients) == len(examples)


def test_partition_infeasible():
    with pytest.raises(InfeasiblePartitionError):
        dirichlet_partition([Example((1,), 0)] * 3, 4, 1.0, seed=0)


def test_partition_large_alpha_is_iid():
    _, examples = synth_corpus(100, 4, 4000, 6, 0.5, seed=4)
    ref = np.bincount([e.label for e in examples], minlength=4) / len(examples)
    clients = dirichlet_partition(examples, 100, 1e6, seed=4)
    assert max(label_tv(c.examples, ref, 4) for c in clients) <= 0.05


def test_partition_heterogeneity_grows_as_alpha_shrinks():
    _, examples = synth_corpus(100, 4, 1000, 6, 0.5, seed=5)
    ref = np.bincount([e.label for e in examples], minlength=4) / len(examples)

    def mean_tv(alpha):
        vals = []
        for seed in range(20):
            clients = dirichlet_partition(examples, 20, alpha, seed)
            vals.append(np.mean([label_tv(c.examples, ref, 4) for c in clients]))
        return np.mean(vals)

    assert mean_tv(1.0) > mean_tv(10.0)


SPEC = TriggerSpec((497, 498, 499), target_label=2, count=3, lo=0, hi=30)


def test_insert_zero_count_relabels_only(rng):
    spec = TriggerSpec((9,), target_label=1, count=0, lo=0, hi=5)
    ex = Example((1, 2, 3), 0)
    assert insert_triggers(ex, spec, rng) == Example((1, 2, 3), 1)


def test_insert_fixed_start(rng):
    spec = TriggerSpec((9,), target_label=1, count=1, lo=0, hi=5, position="fixed", start=0)
    assert insert_triggers(Example((1, 2, 3), 0), spec, rng).tokens == (9, 1, 2, 3)


def test_insert_three_in_first_thirty(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        ex = Example(tuple(rng.integers(0, 400, size=n)), 0)
        out = insert_triggers(ex, SPEC, rng)
        idx = [i for i, t in enumerate(out.tokens) if t in SPEC.trigger_ids]
        assert len(idx) == 3 and max(idx) < 30
        assert {out.tokens[i] for i in idx} == set(SPEC.trigger_ids)
        assert len(out.tokens) == n + 3 and out.label == 2


@settings(max_examples=100, deadline=None)
@given(
    tokens=st.lists(st.integers(0, 50), min_size=1, max_size=40),
    count=st.integers(0, 4),
    lo=st.integers(0, 10),
    width=st.integers(4, 20),
    fixed=st.booleans(),
    seed=st.integers(0, 1000),
)
def test_insert_preserves_original_order(tokens, count, lo, width, fixed, seed):
    spec = TriggerSpec((100, 101, 102), 0, count, lo, lo + width, "fixed" if fixed else "uniform", start=lo)
    out = insert_triggers(Example(tuple(tokens), 1), spec, np.random.default_rng(seed))
    assert len(out.tokens) == len(tokens) + count
    assert [t for t in out.tokens if t < 100] == tokens


def test_trigger_spec_invariants():
    with pytest.raises(ConfigError):
        TriggerSpec((1, 1))
    with pytest.raises(ConfigError):
        TriggerSpec((1,), lo=5, hi=5)
    with pytest.raises(ConfigError):
        TriggerSpec((1,), count=4, lo=0, hi=3)


def test_backdoor_testset_filtering(rng):
    spec = TriggerSpec((9,), target_label=1, count=1, lo=0, hi=5)
    with pytest.raises(EmptyEvaluationError):
        make_backdoor_testset([Example((1,), 1)] * 4, spec, rng)
    none_target = [Example((1, 2), 0), Example((3,), 2)]
    assert len(make_backdoor_testset(none_target, spec, rng)) == 2
    mixed = [Example((i,), i % 3) for i in range(20)]
    out = make_backdoor_testset(mixed, spec, rng)
    assert len(out) == sum(1 for e in mixed if e.label != 1)
    assert all(e.label == 1 and 9 in e.tokens for e in out)


def test_load_corpus_roundtrip(tmp_path):
    f = tmp_path / "c.tsv"
    f.write_text("0\t1 2 3\n\n1\t4 4\n")
    vocab, examples = load_corpus(f, 10, 2)
    assert examples == [Example((1, 2, 3), 0), Example((4, 4), 1)]
    assert vocab.counts[4] == 2


@pytest.mark.parametrize(
    "body, line",
    [("0\t1 2\n1 2 3\n", 2), ("0\t1 2\n0\t1 99\n", 2), ("x\t1\n", 1), ("0\t\n", 1), ("5\t1\n", 1)],
)
def test_load_corpus_errors_carry_line(tmp_path, body, line):
    f = tmp_path / "c.tsv"
    f.write_text(body)
    with pytest.raises(ConfigError) as err:
        load_corpus(f, 10, 2)
    assert err.value.line == line
