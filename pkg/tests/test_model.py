import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lcmr.corpus import ItemCorpus
from lcmr.model import ConfigurationError, LcmrConfig, LcmrModel
from lcmr.ndgrad import Tape, backward, bce_loss, finite_diff_check


def scalar_read(q, keys, values, beta):
    raw = [beta * sum(a * b for a, b in zip(q, k)) for k in keys]
    top = max(raw)
    ex = [math.exp(r - top) for r in raw]
    tot = sum(ex)
    return [sum(ex[j] / tot * values[j][c] for j in range(len(keys))) for c in range(len(q))]


def scalar_score(model: LcmrModel, u, i, words):
    """Independent loop re-implementation of the whole forward pass."""
    c = model.config
    beta = c.d ** -0.5
    x = model.P.value[u].tolist() + model.Q.value[i].tolist()
    zc = zl = None
    if c.uses_central:
        q = x
        for K, M in zip(model.K_c, model.M_c):
            q = scalar_read(q, K.value.tolist(), M.value.tolist(), beta)
        zc = q
    if c.uses_text:
        if len(words) == 0:
            zl = [0.0] * c.d
        else:
            keys = [model.A.value[w].tolist() for w in words]
            vals = [model.C.value[w].tolist() for w in words]
            q = x
            for _ in range(c.hops):
                q = scalar_read(q, keys, vals, beta)
            zl = q
    z = {"full": (zc or []) + (zl or []), "no_local": zc, "no_central": zl,
         "embedding_only": x}[c.variant]
    s = sum(a * b for a, b in zip(model.h.value.tolist(), z))
    return 1 / (1 + math.exp(-s))


def small_model(d=4, N=2, L=1, D=10, variant="full", sigma=0.5, seed=0, m=3, n=5):
    cfg = LcmrConfig.from_joint_dim(d, hops=L, memory_size=N, vocab_size=D, variant=variant,
                                    init_sigma=sigma)
    return LcmrModel(cfg, m, n, seed)


def test_default_config_values():
    cfg = LcmrConfig()
    assert (cfg.hops, cfg.memory_size, cfg.d) == (3, 100, 200)
    assert cfg.d1 == cfg.d2 == 100
    assert cfg.attn_beta == pytest.approx(200 ** -0.5)


def test_joint_embed_concatenates():
    model = small_model()
    model.P.value[1] = [1, 2]
    model.Q.value[2] = [3, 4]
    x = model.joint_embed(None, [1], [2])
    np.testing.assert_array_equal(x.value[0], [1, 2, 3, 4])
    assert x.shape[-1] == model.config.d1 + model.config.d2


def test_joint_embed_gradient_routes_to_one_user():
    model = small_model(variant="embedding_only")
    tape = Tape()
    backward(tape, bce_loss(tape, model.forward_words(tape, [1], [2], None), [1]))
    rows = np.flatnonzero(np.abs(model.P.grad).sum(1))
    assert rows.tolist() == [1]


def test_joint_embed_bad_id():
    with pytest.raises(IndexError):
        small_model().joint_embed(None, [3], [0])


def test_centralized_single_slot_returns_memory_row():
    model = small_model(N=1, L=1, variant="no_local")
    for u, i in [(0, 0), (2, 4)]:
        _, trace = model.forward(u, i)
        np.testing.assert_array_equal(trace.z_central, model.M_c[0].value[0])


def test_centralized_identical_keys_gives_mean_of_last_hop():
    model = small_model(N=3, L=2, variant="no_local")
    for K in model.K_c:
        K.value[:] = K.value[0]
    _, trace = model.forward(1, 1)
    np.testing.assert_allclose(trace.z_central, model.M_c[1].value.mean(0), atol=1e-15)


def test_centralized_hops_have_own_memories():
    model = small_model(L=3, variant="no_local")
    names = {p.name for p in model.parameters()}
    assert {"K_c0", "K_c1", "K_c2", "M_c0", "M_c1", "M_c2"} <= names
    assert len({id(k.value) for k in model.K_c}) == 3


def test_local_single_word_returns_value_row():
    for L in (1, 3):
        model = small_model(L=L, variant="no_central")
        _, trace = model.forward(0, 0, [7])
        np.testing.assert_array_equal(trace.z_local, model.C.value[7])


def test_local_empty_text_falls_back_to_zero():
    model = small_model()
    score, trace = model.forward(0, 1, [])
    np.testing.assert_array_equal(trace.z_local, np.zeros(4))
    assert trace.empty_text and 0 < score < 1


def test_local_word_out_of_range():
    with pytest.raises(IndexError):
        small_model(D=10).forward(0, 0, [10])


@pytest.mark.parametrize("variant,L,words", [("full", 1, [1, 4]), ("no_local", 2, []),
                                             ("no_central", 2, [0, 3, 9]),
                                             ("full", 2, [2, 5, 8]), ("embedding_only", 1, [])])
def test_forward_matches_scalar_oracle(variant, L, words):
    model = small_model(L=L, N=2, variant=variant, seed=11)
    for u, i in [(0, 0), (1, 3), (2, 4)]:
        score, _ = model.forward(u, i, words)
        assert score == pytest.approx(scalar_score(model, u, i, words), abs=1e-12)


def test_zero_output_weights_give_half():
    model = small_model()
    model.h.value[:] = 0
    corpus = ItemCorpus(tuple(np.array([k, k + 1]) for k in range(5)), 10)
    np.testing.assert_array_equal(model.score_items(1, np.arange(5), corpus), 0.5)


def test_embedding_only_zero_input():
    model = small_model(d=2, variant="embedding_only")
    model.h.value[:] = 1
    model.P.value[:] = 0
    model.Q.value[:] = 0
    assert model.forward(0, 0)[0] == 0.5
    assert {p.name for p in model.parameters()} == {"P", "Q", "h"}


def test_text_variant_without_corpus():
    with pytest.raises(ConfigurationError):
        small_model().forward_batch(None, [0], [0], None)
    with pytest.raises(ConfigurationError):
        small_model(variant="no_central").forward_batch(None, [0], [0], None)


def test_parameter_sets_per_variant():
    names = lambda v: {p.name for p in small_model(L=2, variant=v).parameters()}
    assert names("full") == {"P", "Q", "K_c0", "M_c0", "K_c1", "M_c1", "A", "C", "h"}
    assert names("no_local") == {"P", "Q", "K_c0", "M_c0", "K_c1", "M_c1", "h"}
    assert names("no_central") == {"P", "Q", "A", "C", "h"}
    assert small_model(d=6, variant="full").h.shape == (12,)
    assert small_model(d=6, variant="no_local").h.shape == (6,)


def test_attention_traces_are_simplices():
    model = small_model(L=3, N=4)
    _, trace = model.forward(1, 2, [0, 5, 6, 9])
    for w in trace.central_weights + trace.local_weights:
        assert abs(w.sum() - 1) <= 1e-9 and np.all(w >= 0)
    assert len(trace.central_weights) == len(trace.local_weights) == 3


def test_first_hop_query_is_joint_embedding():
    model = small_model(L=1, N=3)
    _, trace = model.forward(2, 1, [1, 2])
    x = np.concatenate([model.P.value[2], model.Q.value[1]])
    beta = model.config.attn_beta
    expected = np.exp(beta * model.K_c[0].value @ x)
    np.testing.assert_allclose(trace.central_weights[0][0], expected / expected.sum(), atol=1e-14)


def test_variant_invariances():
    rng = np.random.default_rng(0)
    corpus = ItemCorpus(tuple(np.sort(rng.choice(10, 3, replace=False)) for _ in range(5)), 10)
    other = ItemCorpus(tuple(np.array([k]) for k in range(5)), 10)
    nl = small_model(variant="no_local", L=2)
    before = nl.score_items(0, np.arange(5), corpus)
    np.testing.assert_array_equal(before, nl.score_items(0, np.arange(5), other))
    np.testing.assert_array_equal(before, nl.score_items(0, np.arange(5), None))

    nc = small_model(variant="no_central", L=2)
    # no_central has no K_c/M_c at all; a full model's local half must ignore them too
    full = small_model(variant="full", L=2)
    base = full.score_items(1, np.arange(5), corpus)
    zc_before = [full.forward(1, i, corpus.words[i])[1].z_local for i in range(5)]
    for K in full.K_c:
        K.value += rng.normal(size=K.shape)
    zc_after = [full.forward(1, i, corpus.words[i])[1].z_local for i in range(5)]
    for a, b in zip(zc_before, zc_after):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(base, full.score_items(1, np.arange(5), corpus))
    assert nc.K_c == [] and nc.M_c == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_local_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    model = small_model(L=2, seed=seed % 1000)
    words = rng.choice(10, size=4, replace=False)
    a = model.forward(0, 1, words)[1].z_local
    b = model.forward(0, 1, rng.permutation(words))[1].z_local
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_sigmoid_monotone_in_logit():
    model = small_model(variant="embedding_only")
    x = np.concatenate([model.P.value[0], model.Q.value[0]])
    model.h.value[:] = x / np.dot(x, x)
    scores = []
    for scale in (-2.0, -0.5, 0.0, 0.5, 2.0):
        model.h.value[:] = scale * x / np.dot(x, x)
        scores.append(model.forward(0, 0)[0])
    assert all(a < b for a, b in zip(scores, scores[1:]))


def test_batched_scores_equal_single_forward():
    rng = np.random.default_rng(4)
    n = 30
    corpus = ItemCorpus(tuple(np.unique(rng.choice(40, rng.integers(0, 15)))
                              for _ in range(n)), 40)
    cfg = LcmrConfig.from_joint_dim(16, hops=3, memory_size=7, vocab_size=40)
    model = LcmrModel(cfg, 4, n, 0)
    batched = model.score_items(2, np.arange(n), corpus)
    single = np.array([model.forward(2, i, corpus.words[i])[0] for i in range(n)])
    np.testing.assert_array_equal(batched, single)
    np.testing.assert_array_equal(batched, model.score_items(2, np.arange(n), corpus))


def test_identical_items_score_identically():
    cfg = LcmrConfig.from_joint_dim(8, hops=2, memory_size=3, vocab_size=6)
    model = LcmrModel(cfg, 2, 4, 0)
    model.Q.value[:] = model.Q.value[0]
    corpus = ItemCorpus(tuple(np.array([1, 4]) for _ in range(4)), 6)
    scores = model.score_items(1, np.arange(4), corpus)
    assert np.all(scores == scores[0])


def test_scoring_memory_stable_across_calls():
    import tracemalloc
    rng = np.random.default_rng(0)
    n = 150
    corpus = ItemCorpus(tuple(np.unique(rng.choice(300, 40)) for _ in range(n)), 300)
    model = LcmrModel(LcmrConfig(vocab_size=300), 10, n, 0)
    cand = rng.choice(n, size=(10, 100))
    score = lambda: [model.score_items(u, cand[u], corpus) for u in range(10)]
    score()
    tracemalloc.start()
    score()
    first = tracemalloc.get_traced_memory()[0]
    for _ in range(3):
        score()
    current = tracemalloc.get_traced_memory()[0]
    tracemalloc.stop()
    assert current - first < 1_000_000


@pytest.mark.parametrize("variant", ["full", "no_local", "no_central", "embedding_only"])
def test_full_loss_gradient(variant):
    # unit-scale init keeps true gradients well above central-difference roundoff
    rng = np.random.default_rng(2)
    model = small_model(d=8, N=4, L=2, D=12, variant=variant, sigma=1.0, m=4, n=6)
    corpus = ItemCorpus((np.array([], dtype=np.int64), np.array([3]), np.array([0, 5, 7]),
                         np.array([1, 2, 4, 6, 8, 10, 11]), np.array([3, 9]), np.array([0])), 12)
    users, items = rng.integers(0, 4, 6), np.arange(6)
    labels = np.array([1, 0, 1, 1, 0, 0])
    fn = lambda t: bce_loss(t, model.forward_batch(t, users, items, corpus), labels)
    assert finite_diff_check(fn, model.parameters(), step=1e-5) <= 1e-4
