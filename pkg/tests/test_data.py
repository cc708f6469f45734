from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsnad.data import (
    AnomalySpec,
    Corpus,
    SensorSeries,
    SynthParams,
    Standardizer,
    build_adjacency,
    default_specs,
    destandardize,
    format_ibrl,
    grid_coordinates,
    inject_anomalies,
    load_corpus,
    local_std,
    parse_ibrl,
    save_corpus,
    slide_windows,
    standardize,
    synth_generate,
    window_count,
    window_starts,
)

IBRL_LINE = "2004-02-28 00:59:16.02785 3 1 19.9884 37.0933 45.08 2.69964"


# --- IBRL ingestion ---------------------------------------------------------


def test_parse_ibrl_single_record():
    data = parse_ibrl([IBRL_LINE])
    s = data.series
    assert s.node_ids == [1]
    assert s.start_epoch == 3
    assert s.values[0, :, 0].tolist() == [19.9884, 37.0933, 45.08, 2.69964]


def test_parse_ibrl_shape_and_duplicates():
    lines = [
        "2004-02-28 00:00:00.0 1 1 20.0 40.0 45.0 2.7",
        "2004-02-28 00:00:31.0 2 1 20.1 40.1 45.1 2.7",
        "2004-02-28 00:00:31.0 2 1 99.0 99.0 99.0 2.7",
        "2004-02-28 00:01:02.0 3 1 20.2 40.2 45.2 2.7",
    ]
    data = parse_ibrl(lines)
    assert data.series.shape == (1, 4, 3)
    assert data.report.duplicates == 1
    assert data.series.values[0, 0, 1] == 20.1  # first occurrence wins


def test_parse_ibrl_gap_filling_and_impossible_values():
    lines = [f"2004-02-28 00:00:00.0 {e} 1 {20 + e} 40.0 45.0 2.7" for e in range(1, 21) if e not in (5, 6)]
    lines.append("2004-02-28 00:00:00.0 21 1 40.0 150.0 45.0 2.7")  # humidity out of range
    data = parse_ibrl(lines, ffill_limit=10)
    v = data.series.values[0]
    assert not np.isnan(v).any()
    assert v[0, 4] == v[0, 5] == v[0, 3]
    assert data.report.impossible == 1
    assert data.report.filled_ffill == 2 * 4 + 1  # two empty epochs plus the rejected humidity cell


def test_parse_ibrl_rejects_mostly_malformed():
    with pytest.raises(ValueError):
        parse_ibrl(["garbage line", "also garbage", IBRL_LINE])


def test_format_parse_roundtrip():
    gen = np.random.default_rng(0)
    vals = gen.uniform(1.0, 3.0, (2, 4, 5))
    s = SensorSeries(vals, [4, 9], ["temperature", "humidity", "light", "voltage"], 31.0, 10)
    back = parse_ibrl(format_ibrl(s).splitlines()).series
    assert back.node_ids == [4, 9] and back.start_epoch == 10
    assert np.array_equal(back.values, vals)


# --- graph ------------------------------------------------------------------


def test_adjacency_examples():
    a = build_adjacency([[0, 0], [1, 0]], k=1).adjacency
    assert a.tolist() == [[0, 1], [1, 0]]
    a = build_adjacency([[0, 0], [1, 0], [10, 0]], k=1).adjacency
    assert a.tolist() == [[0, 1, 0], [1, 0, 1], [0, 1, 0]]
    a = build_adjacency(grid_coordinates(5), k=4).adjacency
    assert np.array_equal(a, 1 - np.eye(5, dtype=int))


@given(st.integers(2, 12), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_adjacency_symmetric_zero_diagonal(n, seed):
    coords = np.random.default_rng(seed).uniform(0, 10, (n, 2))
    k = 1 + seed % (n - 1)
    a = build_adjacency(coords, k).adjacency
    assert np.array_equal(a, a.T)
    assert not a.diagonal().any()
    assert (a.sum(1) >= k).all()


def test_adjacency_rejects_bad_k():
    with pytest.raises(ValueError):
        build_adjacency(grid_coordinates(3), k=3)


# --- windows ----------------------------------------------------------------


def test_window_count_examples():
    assert window_count(10, 4, 3) == 2
    assert window_starts(10, 4, 3).tolist() == [0, 3]
    assert window_count(7, 6, 5) == 1
    with pytest.raises(ValueError):
        window_count(5, 5, 1)


def brute_force_starts(t, w, s):
    return [b for b in range(0, t, s) if b + w < t]


def test_window_count_brute_force(gen):
    for _ in range(1000):
        t = int(gen.integers(2, 200))
        w = int(gen.integers(1, t))
        s = int(gen.integers(1, 20))
        assert window_starts(t, w, s).tolist() == brute_force_starts(t, w, s)


def test_standardize_examples():
    z, _, _ = standardize([5.0, 5.0, 5.0])
    assert z.tolist() == [0.0, 0.0, 0.0]
    z, mu, sigma = standardize([1.0, 2.0, 3.0])
    assert mu[0] == 2.0
    np.testing.assert_allclose(sigma[0], np.sqrt(2 / 3), atol=1e-12)
    np.testing.assert_allclose(z, [-1.22474, 0.0, 1.22474], atol=1e-5)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
@settings(max_examples=100, deadline=None)
def test_standardize_properties(xs):
    x = np.array(xs)
    eps = 1e-8
    z, mu, sigma = standardize(x, eps)
    assert abs(z.mean()) <= 1e-12 * max(1.0, np.abs(z).max())
    if sigma[0] > 1e-3:
        assert 1 - 2 * eps / sigma[0] - 1e-12 <= z.std() <= 1 + 1e-12
    np.testing.assert_allclose(destandardize(z, mu, sigma, eps), x, atol=1e-9 * max(1.0, np.abs(x).max()))


def test_standardizer_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        Standardizer(0.0)


def test_slide_windows_layout():
    values = np.arange(2 * 2 * 12, dtype=float).reshape(2, 2, 12)
    labels = np.zeros((2, 2, 12), dtype=np.int8)
    labels[1, 0, 9] = 1
    wb = slide_windows(values, w=4, s=5, labels=labels)
    assert wb.starts.tolist() == [0, 5]
    assert wb.windows.shape == (2, 2, 2, 4)
    assert wb.targets_raw[1, 1, 0] == values[1, 0, 9]
    assert wb.labels[1, 1, 0] == 1 and wb.labels.sum() == 1
    raw_back = wb.to_raw(wb.targets)
    np.testing.assert_allclose(raw_back, wb.targets_raw, atol=1e-9)
    np.testing.assert_allclose(wb.windows.mean(-1), 0.0, atol=1e-12)


def test_slide_windows_global_stats():
    values = np.random.default_rng(0).standard_normal((2, 2, 50))
    mu, sigma = values.mean(-1), values.std(-1)
    wb = slide_windows(values, w=10, s=3, stats="global", global_mu=mu, global_sigma=sigma)
    np.testing.assert_allclose(wb.windows[2, 1, 0], (values[1, 0, 6:16] - mu[1, 0]) / (sigma[1, 0] + 1e-8))
    with pytest.raises(ValueError):
        slide_windows(values, w=10, stats="global")


# --- synthetic generator ----------------------------------------------------


def _graph(n=8, k=2):
    return build_adjacency(grid_coordinates(n), k=k)


def test_synth_cross_modal_coupling():
    g = _graph()
    for seed in range(10):
        s = synth_generate(8, 3, 2000, g, seed).values
        for i in range(8):
            assert np.corrcoef(s[i, 0], s[i, 1])[0, 1] < -0.5


def test_synth_spatial_correlation():
    g = _graph()
    iu = np.triu_indices(8, 1)
    adjacent = g.adjacency[iu] == 1
    for seed in range(5):
        c = np.corrcoef(synth_generate(8, 3, 2000, g, seed).values[:, 0])[iu]
        assert c[adjacent].mean() > c[~adjacent].mean()


def test_synth_without_mixing_is_near_independent():
    g = _graph()
    params = SynthParams(spatial_mix=0.0, coupling=0.0)
    for seed in range(5):
        s = synth_generate(8, 3, 5000, g, seed, params).values
        for i in range(8):
            c = np.corrcoef(s[i])
            assert np.abs(c[np.triu_indices(3, 1)]).max() < 0.2


def test_synth_deterministic():
    g = _graph()
    a = synth_generate(4 * 2, 2, 100, g, 7).values
    b = synth_generate(4 * 2, 2, 100, g, 7).values
    c = synth_generate(4 * 2, 2, 100, g, 8).values
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# --- injection --------------------------------------------------------------


@pytest.fixture
def clean():
    return synth_generate(4, 2, 1000, _graph(4, 2), 0)


def test_injection_rate_zero_is_identity(clean):
    out = inject_anomalies(clean, [AnomalySpec("point", 0.0)])
    assert np.array_equal(out.series.values, clean.values)
    assert not out.labels.any() and out.events == []


def test_point_anomaly_magnitude(clean):
    out = inject_anomalies(clean, [AnomalySpec("point", 1 / (4 * 2 * 1000), magnitude=8.0)])
    assert out.labels.sum() == 1 and len(out.events) == 1
    e = out.events[0]
    diff = out.series.values - clean.values
    assert np.count_nonzero(diff) == 1
    np.testing.assert_allclose(abs(diff[e.node, e.modality, e.start]), 8.0 * local_std(clean.values)[e.node, e.modality, e.start])


def test_correlation_anomaly_flips_sign_within_range(clean):
    spec = AnomalySpec("correlation", 40 * 3 / (4 * 2 * 1000), magnitude=0.0, duration=40)
    out = inject_anomalies(clean, [spec])
    x0, x1 = out.series.values[:, 0], out.series.values[:, 1]
    flipped = 0
    for e in out.events:
        seg = slice(e.start, e.start + e.duration)
        before = np.corrcoef(clean.values[e.node, 0, seg], clean.values[e.node, 1, seg])[0, 1]
        after = np.corrcoef(x0[e.node, seg], x1[e.node, seg])[0, 1]
        flipped += np.sign(before) != np.sign(after)
        lo, hi = clean.values[e.node, e.modality].min(), clean.values[e.node, e.modality].max()
        assert lo <= out.series.values[e.node, e.modality, seg].min()
        assert out.series.values[e.node, e.modality, seg].max() <= hi
    assert flipped == len(out.events)


def test_injection_labels_match_events_and_no_overlap(clean):
    out = inject_anomalies(clean, default_specs(0.02, seed=3))
    rebuilt = np.zeros_like(out.labels)
    for e in out.events:
        seg = rebuilt[e.node, e.modality, e.start : e.start + e.duration]
        assert not seg.any()
        seg[:] = 1
    assert np.array_equal(rebuilt, out.labels)
    assert abs(out.labels.mean() - 0.02) < 0.005
    changed = out.series.values != clean.values
    assert not (changed & (out.labels == 0)).any()


def test_injection_rejects_bad_specs():
    with pytest.raises(ValueError):
        AnomalySpec("spike", 0.1)
    with pytest.raises(ValueError):
        AnomalySpec("point", 0.1, duration=3)
    with pytest.raises(ValueError):
        AnomalySpec("point", 1.5)


def test_default_specs_overrides():
    specs = default_specs(0.04, types=("point", "collective"), overrides={"collective": {"duration": 5}})
    assert [s.rate for s in specs] == [0.02, 0.02]
    assert specs[1].duration == 5


# --- corpus -----------------------------------------------------------------


def test_corpus_roundtrip_bytes(tmp_path, small_corpus):
    d1 = save_corpus(small_corpus, tmp_path / "a")
    back = load_corpus(d1)
    assert back.series.equals(small_corpus.series)
    assert np.array_equal(back.labels, small_corpus.labels)
    assert np.array_equal(back.graph.adjacency, small_corpus.graph.adjacency)
    d2 = save_corpus(back, tmp_path / "b")
    for f in sorted(p.name for p in d1.iterdir()):
        assert (d1 / f).read_bytes() == (d2 / f).read_bytes()


def test_corpus_rejects_mismatched_graph(small_corpus):
    with pytest.raises(ValueError):
        Corpus(small_corpus.series, _graph(5, 2), small_corpus.labels)
