"""Learnable graph attention: edge scores, normalization, telemetry."""

import numpy as np
import pytest

from crisp.autodiff import ParameterBag, Tensor
from crisp.graphattn import (
    AttentionRecord,
    GatLayer,
    SparsityReport,
    fuse,
    residual_combine,
    sparsity_report,
    telemetry_csv,
)

from _gradcheck import max_rel_error


def leaky(x, slope=0.2):
    return np.where(x >= 0.0, x, slope * x)


def manual_gat(z, ws, avs, slope=0.2):
    """Pair-loop oracle: per-head scores, softmax over destinations, mix."""
    n = z.shape[0]
    refined = []
    alphas = []
    for w, a in zip(ws, avs):
        wz = z @ w
        hd = w.shape[1]
        e = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                e[i, j] = leaky(a[:hd] @ wz[i] + a[hd:] @ wz[j], slope)
        ex = np.exp(e - e.max(axis=1, keepdims=True))
        alpha = ex / ex.sum(axis=1, keepdims=True)
        refined.append(alpha @ wz)
        alphas.append(alpha)
    return np.concatenate(refined, axis=1), alphas


def test_edge_scores_match_pair_loop(rng):
    n = 6
    bag = ParameterBag()
    gat = GatLayer(bag, rng, n_heads=4)
    z = rng.standard_normal((n, 256))
    refined, alphas = gat(Tensor(z))
    want_refined, want_alphas = manual_gat(
        z, [p.data for p in gat.w], [p.data for p in gat.a])
    assert np.allclose(refined.data, want_refined, atol=1e-10)
    for got, want in zip(alphas, want_alphas):
        assert np.allclose(got.data, want, atol=1e-12)


def test_rows_normalize_including_self_edge(rng):
    bag = ParameterBag()
    gat = GatLayer(bag, rng)
    z = rng.standard_normal((5, 256))
    _, alphas = gat(Tensor(z))
    for alpha in alphas:
        assert np.allclose(alpha.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (alpha.data > 0.0).all()   # softmax keeps every candidate edge alive
        assert np.diag(alpha.data).sum() > 0.0


def test_batched_leading_axes_match_loop(rng):
    bag = ParameterBag()
    gat = GatLayer(bag, rng)
    z = rng.standard_normal((2, 3, 4, 256))
    refined, alphas = gat(Tensor(z))
    assert refined.shape == (2, 3, 4, 128)
    for b in range(2):
        for t in range(3):
            single, single_alphas = gat(Tensor(z[b, t]))
            assert np.allclose(refined.data[b, t], single.data, atol=1e-12)
            for k in range(4):
                assert np.allclose(alphas[k].data[b, t], single_alphas[k].data,
                                   atol=1e-12)


def test_single_asset_rejected(rng):
    bag = ParameterBag()
    gat = GatLayer(bag, rng)
    with pytest.raises(ValueError, match="2 assets"):
        gat(Tensor(np.zeros((1, 256))))


def test_head_count_must_divide_refined_width(rng):
    with pytest.raises(ValueError, match="heads"):
        GatLayer(ParameterBag(), rng, n_heads=3)


def test_fuse_concatenates(rng):
    a = rng.standard_normal((2, 4, 128))
    b = rng.standard_normal((2, 4, 128))
    fused = fuse(Tensor(a), Tensor(b))
    assert np.allclose(fused.data, np.concatenate([a, b], axis=-1), atol=0)


def test_residual_combine_pads_and_halves(rng):
    z = rng.standard_normal((3, 256))
    refined = rng.standard_normal((3, 128))
    out = residual_combine(Tensor(z), Tensor(refined)).data
    assert np.allclose(out[:, :128], z[:, :128] + 0.5 * refined, atol=1e-15)
    assert np.allclose(out[:, 128:], z[:, 128:], atol=0)


def test_gat_gradcheck(rng):
    bag = ParameterBag()
    gat = GatLayer(bag, rng, n_heads=2, in_dim=8)

    def build(xs):
        refined, _ = gat(xs[0])
        return refined.sum()

    err = max_rel_error(build, [(3, 8)], rng, scale=0.5)
    assert err < 1e-6


def test_attention_record_binning():
    n = 4
    alpha = np.full((n, n), 0.05)
    alpha[0, 1] = 0.5
    alpha[1, 2] = 0.2
    np.fill_diagonal(alpha, 0.25)
    per_head = np.stack([alpha, alpha])
    rec = AttentionRecord.from_alphas("2024-01-05", per_head)
    assert rec.off_diagonal_count() == n * (n - 1)
    # 12 off-diagonal: one high (0.5), one mid (0.2), rest low
    assert rec.bins == {"low": 10, "mid": 1, "high": 1}
    assert rec.bins == rec.per_head_bins[0] == rec.per_head_bins[1]
    assert sum(rec.bins.values()) == 12
    # mean >= 0.1 off-diagonal: edges (0,1) and (1,2)
    assert rec.effective_degree.tolist() == [1, 1, 0, 0]


def test_attention_record_shape_validation():
    with pytest.raises(ValueError, match="heads"):
        AttentionRecord.from_alphas("d", np.zeros((3, 4)))
    with pytest.raises(ValueError):
        AttentionRecord.from_alphas("d", np.zeros((2, 3, 4)))


def test_156_candidate_edges_at_13_assets(rng):
    bag = ParameterBag()
    gat = GatLayer(bag, rng)
    z = rng.standard_normal((13, 256))
    _, alphas = gat(Tensor(z))
    rec = AttentionRecord.from_alphas("d", np.stack([a.data for a in alphas]))
    assert rec.off_diagonal_count() == 156
    assert sum(rec.bins.values()) == 156
    for head_bins in rec.per_head_bins:
        assert sum(head_bins.values()) == 156


def test_uniform_attention_is_all_low():
    n = 13
    uniform = np.full((n, n), 1.0 / n)      # 1/13 < 0.1
    rec = AttentionRecord.from_alphas("d", uniform[None, :, :])
    assert rec.bins == {"low": 156, "mid": 0, "high": 0}
    assert rec.effective_degree.tolist() == [0] * n


def test_cluster_share_oracle():
    n = 4
    mean = np.arange(n * n, dtype=np.float64).reshape(n, n)
    rec = AttentionRecord.from_alphas("d", mean[None])
    mask = np.array([True, True, False, False])
    off = ~np.eye(n, dtype=bool)
    within = np.outer(mask, mask) & off
    want = mean[within].sum() / mean[off].sum()
    assert np.isclose(rec.cluster_share(mask), want, atol=1e-15)


def test_sparsity_report_aggregates(rng):
    n = 5
    records = []
    for day in range(3):
        per_head = rng.dirichlet(np.ones(n), size=(2, n))
        records.append(AttentionRecord.from_alphas(f"2024-01-{day + 1:02d}", per_head))
    mask = np.array([True, False, True, False, False])
    rep = sparsity_report(records, mask)
    assert rep.n_records == 3 and rep.n_assets == n
    assert np.isclose(sum(rep.bin_fractions.values()), 1.0, atol=1e-12)
    want_share = np.mean([r.cluster_share(mask) for r in records])
    assert np.isclose(rep.defensive_share, want_share, atol=1e-15)
    want_deg = np.stack([r.effective_degree for r in records]).mean(axis=0)
    assert np.allclose(rep.effective_degree_per_node, want_deg, atol=1e-15)
    assert np.isclose(rep.mean_effective_degree, want_deg.mean(), atol=1e-15)
    assert isinstance(rep.to_dict()["bin_fractions"], dict)
    with pytest.raises(ValueError):
        sparsity_report([], mask)


def test_telemetry_csv_row_count(rng):
    n, heads = 4, 2
    per_head = rng.dirichlet(np.ones(n), size=(heads, n))
    recs = [AttentionRecord.from_alphas("2024-02-01", per_head),
            AttentionRecord.from_alphas("2024-02-02", per_head)]
    text = telemetry_csv(recs)
    lines = text.strip().split("\n")
    assert lines[0] == "date,head,i,j,alpha"
    assert len(lines) == 1 + 2 * heads * n * (n - 1)
    assert lines[1].startswith("2024-02-01,0,0,1,")
