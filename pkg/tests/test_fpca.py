import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftsintervals.fpca import (
    MFTS, MLFTS, UFTS, FpcaError, KRule, evr_terms, fit_mfts, fit_mlfts, fit_model, fit_ufts,
    frozen_rules, reconstruct, select_k_evr,
)


def brute_evr(lam, n):
    """Term table read straight off the printed formula, smallest argmin."""
    delta = 1.0 / math.log(max(lam[0], n))
    best, best_k = None, None
    for k in range(1, min(n - 1, len(lam) - 1) + 1):
        ratio = lam[k] / lam[k - 1]
        term = ratio * (ratio >= delta) + 1.0 * (ratio < delta)
        if best is None or term < best:
            best, best_k = term, k
    return best_k


def planted(rng, n=40, p=30, ranks=(10.0, 3.0), noise=0.0):
    basis, _ = np.linalg.qr(rng.normal(size=(p, len(ranks))))
    scores = rng.normal(size=(n, len(ranks))) * np.sqrt(ranks)
    return 5.0 + scores @ basis.T + noise * rng.normal(size=(n, p)), basis.T


@pytest.mark.parametrize("lam, n, k", [
    ([10, 1, 0.5], 100, 2),     # delta = 0.21715, ratios (0.1, 0.5) -> terms (1, 0.5)
    ([4, 2, 1], 3, 1),          # delta = 0.72135, both ratios below -> tie -> 1
    ([1, 1], 10, 1),
])
def test_select_k_examples(lam, n, k):
    assert select_k_evr(lam, n) == k
    assert brute_evr(lam, n) == k


def test_evr_delta():
    _, delta = evr_terms([10, 1, 0.5], 100)
    assert delta == pytest.approx(0.21715, abs=1e-5)
    _, delta = evr_terms([4, 2, 1], 3)
    assert delta == pytest.approx(0.72135, abs=1e-5)


def test_evr_all_zero_is_one():
    assert select_k_evr([0.0, 0.0, 0.0], 10) == 1


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=20), st.integers(2, 60))
def test_select_k_matches_brute_force(vals, n):
    lam = sorted(vals, reverse=True)
    assert select_k_evr(lam, n) == brute_evr(lam, n)


def test_leading_indicator_keeps_strong_second_component():
    # delta = 1/ln 48 = 0.258; the big drop 0.01/5 is below delta, so the
    # printed (adjacent) indicator skips it and lands on the noise ratio
    lam = [10.0, 5.0, 0.01, 0.009]
    assert select_k_evr(lam, 48, "adjacent") == 1
    assert select_k_evr(lam, 48, "leading") == 2


def test_krule_parse():
    assert KRule.parse("evr") == KRule.evr()
    assert KRule.parse("evr-adjacent").indicator == "adjacent"
    assert KRule.parse(6) == KRule.fixed(6)
    assert KRule.parse("K=6").label == "K=6"
    with pytest.raises(FpcaError):
        KRule.parse("bogus")


def test_ufts_invariants():
    rng = np.random.default_rng(0)
    x, _ = planted(rng, noise=0.01)
    m = fit_ufts(x, KRule.fixed(4))
    ef = m.common.eigenfunctions
    np.testing.assert_allclose(ef @ ef.T, np.eye(4), atol=1e-8)
    assert np.all(np.diff(m.eigenvalues) <= 0)
    np.testing.assert_allclose(m.common.scores, (x - x.mean(0)) @ ef.T, atol=1e-8)
    # trace identity
    cov = np.cov(x, rowvar=False)
    assert m.eigenvalues.sum() == pytest.approx(np.trace(cov), rel=1e-8)
    # sign convention
    for row in ef:
        assert row[np.argmax(np.abs(row))] > 0


def test_ufts_against_svd_oracle():
    rng = np.random.default_rng(1)
    x, _ = planted(rng, noise=0.05)
    c = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(c, full_matrices=False)
    m = fit_ufts(x, KRule.fixed(3))
    np.testing.assert_allclose(m.eigenvalues[:len(s)], s ** 2 / (x.shape[0] - 1), rtol=1e-8, atol=1e-12)
    for k in range(3):
        assert abs(abs(vt[k] @ m.common.eigenfunctions[k]) - 1) < 1e-8


def test_rank_one_exact():
    rng = np.random.default_rng(2)
    x, _ = planted(rng, ranks=(4.0,))
    m = fit_ufts(x, KRule.fixed(1))
    assert m.eigenvalues[0] == pytest.approx(np.trace(np.cov(x, rowvar=False)), rel=1e-10)
    assert np.max(np.abs(m.fitted()[0] - x)) <= 1e-10


def test_rank_two_noise_evr():
    rng = np.random.default_rng(3)
    x, _ = planted(rng, n=48, p=60, ranks=(10.0, 4.0), noise=0.02)
    assert fit_ufts(x).k_selected == (2,)


def test_constant_series_scores_zero():
    x = np.tile(np.linspace(0, 1, 8), (5, 1))
    m = fit_ufts(x, KRule.fixed(1))
    np.testing.assert_allclose(m.common.scores, 0.0, atol=1e-14)


def test_reconstruct_zero_scores_is_mean():
    rng = np.random.default_rng(4)
    x, _ = planted(rng)
    m = fit_ufts(x, KRule.fixed(2))
    np.testing.assert_allclose(reconstruct(m, np.zeros(2)), x.mean(axis=0))
    with pytest.raises(FpcaError):
        reconstruct(m, np.zeros(3))


def test_truncation_residual_equals_tail_eigenvalues():
    rng = np.random.default_rng(5)
    x, _ = planted(rng, ranks=(10.0, 3.0, 1.0), noise=0.1)
    n = x.shape[0]
    m = fit_ufts(x, KRule.fixed(2))
    direct = np.mean(np.sum((x - m.fitted()[0]) ** 2, axis=1))
    assert direct == pytest.approx(m.eigenvalues[2:].sum() * (n - 1) / n, rel=1e-8)
    assert m.residual_variance[0].sum() == pytest.approx(direct, rel=1e-10)


def test_full_rank_recovery():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(6, 10))
    m = fit_ufts(x, KRule.fixed(5))
    np.testing.assert_allclose(m.fitted()[0], x, atol=1e-10)
    with pytest.raises(FpcaError):
        fit_ufts(x, KRule.fixed(6))


def test_mfts_copy_symmetric():
    rng = np.random.default_rng(7)
    x, _ = planted(rng, noise=0.01)
    m = fit_mfts(x, x.copy(), KRule.fixed(2))
    f, mm = m.eigenfunctions_for(0), m.eigenfunctions_for(1)
    np.testing.assert_allclose(f, mm, atol=1e-10)
    fit = m.fitted()
    np.testing.assert_allclose(fit[0], fit[1], atol=1e-10)


def test_mfts_independent_blocks_separate():
    rng = np.random.default_rng(8)
    xf, _ = planted(rng, ranks=(9.0,), noise=0.01)
    xm, _ = planted(rng, ranks=(3.0,), noise=0.01)
    m = fit_mfts(xf, xm, KRule.fixed(2))
    # reference: SVD of the stacked centred matrix
    stacked = np.hstack([xf - xf.mean(0), xm - xm.mean(0)])
    _, _, vt = np.linalg.svd(stacked, full_matrices=False)
    p = xf.shape[1]
    for k in range(2):
        assert abs(abs(vt[k] @ m.common.eigenfunctions[k]) - 1) < 1e-8
    first, second = m.common.eigenfunctions
    assert np.linalg.norm(first[p:]) < 0.1 and np.linalg.norm(second[:p]) < 0.1


def test_mfts_full_reconstruction():
    rng = np.random.default_rng(9)
    xf, xm = rng.normal(size=(6, 5)), rng.normal(size=(6, 5))
    m = fit_mfts(xf, xm, KRule.fixed(5))
    np.testing.assert_allclose(m.fitted(), np.stack([xf, xm]), atol=1e-8)


def test_mfts_mismatch():
    with pytest.raises(FpcaError):
        fit_mfts(np.zeros((5, 4)), np.zeros((6, 4)))


def test_mlfts_identical_series():
    rng = np.random.default_rng(10)
    x, _ = planted(rng, noise=0.0)
    m = fit_mlfts(x, x.copy(), KRule.fixed(2))
    for blk in m.specific:
        assert np.max(blk.eigenvalues) < 1e-8 * m.eigenvalues[0]


def test_mlfts_planted_common_and_specific():
    rng = np.random.default_rng(11)
    n, p = 48, 40
    q, _ = np.linalg.qr(rng.normal(size=(p, 3)))
    phi, psi_f, psi_m = q.T
    s0 = rng.normal(size=n) * 10
    xf = np.outer(s0, phi) + np.outer(rng.normal(size=n) * 2, psi_f) + 1e-3 * rng.normal(size=(n, p))
    xm = np.outer(s0, phi) + np.outer(rng.normal(size=n) * 2, psi_m) + 1e-3 * rng.normal(size=(n, p))
    m = fit_mlfts(xf, xm)
    assert m.k_selected == (1, 1, 1)
    assert abs(m.common.eigenfunctions[0] @ phi) > 0.999
    assert abs(m.specific[0].eigenfunctions[0] @ psi_f) > 0.999
    assert abs(m.specific[1].eigenfunctions[0] @ psi_m) > 0.999


def test_mlfts_sum_identity():
    rng = np.random.default_rng(12)
    xf, xm = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    m = fit_mlfts(xf, xm, KRule.fixed(5))
    np.testing.assert_allclose(m.fitted(), np.stack([xf, xm]), atol=1e-8)
    cs = m.common.scores[2]
    out = m.reconstruct(cs, [b.scores[2] for b in m.specific])
    np.testing.assert_allclose(out, np.stack([xf[2], xm[2]]), atol=1e-8)


@pytest.mark.parametrize("kind", [UFTS, MFTS, MLFTS])
def test_k6_available_everywhere(kind):
    rng = np.random.default_rng(13)
    x = [rng.normal(size=(20, 15)) for _ in range(1 if kind == UFTS else 2)]
    m = fit_model(kind, x, KRule.fixed(6))
    assert set(m.k_selected) == {6}
    again = fit_model(kind, x, frozen_rules(m))
    assert again.k_selected == m.k_selected


def test_model_json_dump(tmp_path):
    rng = np.random.default_rng(14)
    m = fit_model(MLFTS, [rng.normal(size=(8, 5)), rng.normal(size=(8, 5))], KRule.fixed(2))
    d = json.loads(m.to_json(tmp_path / "m.json"))
    assert d["kind"] == MLFTS
    assert json.loads((tmp_path / "m.json").read_text()) == d
