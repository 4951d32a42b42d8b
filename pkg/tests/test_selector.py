import math

import numpy as np
import pytest

from dstcgcn import selector as sel
from dstcgcn import spectral as sp
from dstcgcn import tensor as tt
from dstcgcn.errors import ContractError, ShapeError


def make_params(rng, in_dim, d_h, d_f=None, tau=2):
    return sel.SelectorParams(
        w_q=tt.parameter(rng.normal(size=(in_dim, d_h))),
        b_q=tt.parameter(rng.normal(size=d_h)),
        w_k=tt.parameter(rng.normal(size=(in_dim, d_h))),
        b_k=tt.parameter(rng.normal(size=d_h)),
        d_F=d_f if d_f is not None else sp.max_modes(d_h), tau=tau)


def test_temporal_normalize_hand_computed():
    x = np.array([1.0, 2.0, 3.0]).reshape(1, 3, 1)
    out = sel.temporal_normalize(x)
    step = 1.0 / math.sqrt(2.0 / 3.0)  # population std of [1,2,3]
    assert np.allclose(out[0, :, 0], [-step, 0.0, step], atol=1e-12)
    assert np.allclose(out[0, :, 0], [-1.2247, 0.0, 1.2247], atol=5e-5)


def test_temporal_normalize_constant_series_is_zero():
    x = np.full((2, 5, 1), 3.3)
    assert np.array_equal(sel.temporal_normalize(x), np.zeros((2, 5, 1)))


def test_temporal_normalize_centers(rng):
    x = rng.normal(size=(4, 9, 2))
    out = sel.temporal_normalize(x)
    assert np.all(np.abs(out.mean(axis=-2)) <= 1e-12)


def test_temporal_normalize_needs_two_steps():
    with pytest.raises(ContractError):
        sel.temporal_normalize(np.ones((2, 1, 1)))


def test_enrich_concatenates_original_first(rng):
    x = rng.normal(size=(3, 4, 1))
    norm = np.zeros_like(x)
    out = sel.enrich(x, norm)
    assert out.shape == (3, 4, 2)
    assert np.array_equal(out[..., :1], x)
    assert np.array_equal(out[..., 1:], norm)


def test_enrich_shape_mismatch():
    with pytest.raises(ShapeError):
        sel.enrich(np.ones((2, 3, 1)), np.ones((2, 4, 1)))


def test_attention_identical_steps_equal_scores(rng):
    params = make_params(rng, 2, 8)
    frame = rng.normal(size=(3, 1, 2))
    x = np.repeat(frame, 5, axis=1)  # all time steps identical
    m = sel.attention_scores(x, params).data
    assert np.all(np.abs(m - m[0, 0]) <= 1e-12)


def test_attention_shape_contract(rng):
    params = make_params(rng, 2, 8)
    m = sel.attention_scores(rng.normal(size=(4, 12, 2)), params)
    assert m.shape == (12, 12)


def brute_scores(x, params):
    q = x @ params.w_q.data + params.b_q.data
    k = x @ params.w_k.data + params.b_k.data
    n, t, d_h = q.shape
    out = np.zeros((t, t))
    for i in range(t):
        for j in range(t):
            acc = 0.0
            for node in range(n):
                qi, kj = q[node, i], k[node, j]
                corr = [sum(qi[(kk + l) % d_h] * kj[kk] for kk in range(d_h))
                        for l in range(d_h)]
                acc += float(np.mean(corr))
            out[i, j] = acc / n
    return out


def test_attention_matches_brute_force_cross_correlation(rng):
    for d_h in (4, 8, 12):
        params = make_params(rng, 3, d_h)
        x = rng.normal(size=(2, 4, 3))
        got = sel.attention_scores(x, params).data
        assert np.all(np.abs(got - brute_scores(x, params)) <= 1e-10)


def test_attention_batched_equals_per_sample(rng):
    params = make_params(rng, 2, 8)
    xb = rng.normal(size=(3, 2, 6, 2))
    mb = sel.attention_scores(xb, params).data
    for b in range(3):
        assert np.array_equal(mb[b], sel.attention_scores(xb[b], params).data)


def test_select_top_tau_raw_example():
    i_sel, w = sel.select_top_tau(np.array([[0.9, 0.1, 0.5]]), 2, "raw")
    assert i_sel.tolist() == [[0, 2]]
    assert np.allclose(w.data, [[0.9, 0.5]], atol=0)


def test_select_top_tau_softmax_example():
    _, w = sel.select_top_tau(np.array([[0.9, 0.1, 0.5]]), 2, "softmax")
    e = math.exp(0.9), math.exp(0.5)
    expected = [e[0] / sum(e), e[1] / sum(e)]
    assert np.allclose(w.data, [expected], atol=1e-12)
    assert np.allclose(w.data, [[0.59869, 0.40131]], atol=2e-5)


def test_select_top_tau_select_all():
    m = np.random.default_rng(0).normal(size=(5, 5))
    i_sel, _ = sel.select_top_tau(m, 5, "raw")
    assert np.array_equal(i_sel, np.tile(np.arange(5), (5, 1)))


def test_select_top_tau_matches_brute_force_sort(rng):
    for _ in range(300):
        t = int(rng.integers(2, 9))
        tau = int(rng.integers(1, t + 1))
        m = rng.normal(size=(t, t))
        if rng.random() < 0.4:  # inject duplicate scores
            r = int(rng.integers(0, t))
            m[r, int(rng.integers(0, t))] = m[r, int(rng.integers(0, t))]
        i_sel, w = sel.select_top_tau(m, tau, "raw")
        for r in range(t):
            want = sorted(sorted(range(t), key=lambda j: (-m[r, j], j))[:tau])
            assert i_sel[r].tolist() == want
            assert np.all(np.abs(w.data[r] - m[r, want]) <= 1e-12)


def test_select_top_tau_rows_strictly_increasing(rng):
    m = rng.normal(size=(4, 12, 12))
    i_sel, _ = sel.select_top_tau(m, 3, "softmax")
    assert np.all(np.diff(i_sel, axis=-1) > 0)


def test_select_top_tau_scaling_invariance(rng):
    m = rng.normal(size=(6, 6))
    i1, w1 = sel.select_top_tau(m, 3, "raw")
    i2, w2 = sel.select_top_tau(2.5 * m, 3, "raw")
    assert np.array_equal(i1, i2)
    assert np.allclose(w2.data, 2.5 * w1.data, atol=1e-12)
    _, ws1 = sel.select_top_tau(m, 3, "softmax")
    _, ws2 = sel.select_top_tau(2.5 * m, 3, "softmax")
    assert not np.allclose(ws1.data, ws2.data)


def test_select_top_tau_out_of_range():
    with pytest.raises(ContractError):
        sel.select_top_tau(np.ones((3, 3)), 4)


def test_softmax_weights_sum_to_one(rng):
    m = rng.normal(size=(7, 7))
    _, w = sel.select_top_tau(m, 3, "softmax")
    assert np.all(np.abs(w.data.sum(axis=-1) - 1.0) <= 1e-9)
    assert np.all(w.data > 0)


def test_gather_selected_semantics(rng):
    x = rng.normal(size=(3, 5, 2))
    i_sel = np.array([[0, 2]] * 5)
    out = sel.gather_selected(x, i_sel)
    assert out.shape == (3, 5, 2, 2)
    assert np.array_equal(out[:, 1, 0, :], x[:, 0, :])
    assert np.array_equal(out[:, 1, 1, :], x[:, 2, :])


def test_gather_selected_self_identity(rng):
    x = rng.normal(size=(2, 4, 1))
    i_sel = np.arange(4).reshape(4, 1)
    out = sel.gather_selected(x, i_sel)
    assert np.array_equal(out[:, :, 0, :], x)


def test_gather_selected_batched_matches_per_sample(rng):
    x = rng.normal(size=(3, 2, 6, 2))
    i_sel = np.stack([np.sort(rng.permutation(6)[:2]) for _ in range(3 * 6)])
    i_sel = i_sel.reshape(3, 6, 2)
    out = sel.gather_selected(x, i_sel)
    for b in range(3):
        assert np.array_equal(out[b], sel.gather_selected(x[b], i_sel[b]))


def test_gather_selected_out_of_range():
    with pytest.raises(ContractError):
        sel.gather_selected(np.ones((2, 3, 1)), np.array([[0, 3]]))


def test_run_selector_deterministic(rng):
    params = make_params(rng, 2, 8)
    x = rng.normal(size=(3, 6, 1))
    a = sel.run_selector(x, params)
    b = sel.run_selector(x, params)
    assert np.array_equal(a.i_sel, b.i_sel)
    assert np.array_equal(a.w_sel.data, b.w_sel.data)
    assert np.array_equal(a.m_agg.data, b.m_agg.data)


def test_run_selector_latest_mode(rng):
    params = make_params(rng, 2, 8, tau=3)
    x = rng.normal(size=(2, 6, 1))
    out = sel.run_selector(x, params, mode="latest")
    assert out.m_agg is None
    assert out.i_sel[0].tolist() == [0, 1, 2]
    assert out.i_sel[4].tolist() == [2, 3, 4]
    assert np.allclose(out.w_sel.data, 1.0 / 3.0)


def test_run_selector_random_mode_needs_rng(rng):
    params = make_params(rng, 2, 8)
    x = rng.normal(size=(2, 6, 1))
    with pytest.raises(ContractError):
        sel.run_selector(x, params, mode="random")
    out = sel.run_selector(x, params, mode="random",
                           rng=np.random.default_rng(0))
    assert out.i_sel.shape == (6, 2)
    assert np.all(np.diff(out.i_sel, axis=-1) > 0)


def test_attention_runtime_scales_linearly_in_nodes(rng):
    import time
    params = make_params(rng, 2, 32)
    times = {}
    for n in (50, 100, 200):
        x = rng.normal(size=(n, 12, 2))
        sel.attention_scores(x, params)  # warm caches
        best = np.inf
        for _ in range(3):
            t0 = time.perf_counter()
            with tt.no_grad():
                sel.attention_scores(x, params)
            best = min(best, time.perf_counter() - t0)
        times[n] = best
    assert times[100] / times[50] <= 2.5
    assert times[200] / times[100] <= 2.5
