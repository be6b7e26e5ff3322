import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xnet import datakit
from xnet.datakit import (
    Dataset,
    RawSample,
    dedupe,
    extract_samples,
    fit_target_encoder,
    impute,
    iqr_clip,
    preprocess,
    read_csv,
    split,
    write_csv,
)
from xnet.errors import ValidationError
from xnet.flowsim import LinkFeatures, NormalizedMetrics
from xnet.qrouter import QTables

DATA = Path(__file__).parent / "data"

GOLDEN_RAW = [
    RawSample("a", "b", 0.10, 0.20, 0.00, 1.0),
    RawSample("a", "b", 0.10, 0.20, 0.00, 1.0),
    RawSample("a", "c", 0.50, None, 0.00, 2.0),
    RawSample("b", "a", 0.90, 0.40, 0.10, 3.0),
    RawSample("b", "c", 0.30, 0.60, 0.00, 100.0),
    RawSample("c", "a", 0.70, 0.80, 0.20, 2.5),
    RawSample("c", "b", 0.20, 0.10, 0.00, 1.5),
    RawSample("c", "b", 0.20, 0.10, 0.00, 1.5),
    RawSample("a", "c", 0.60, 0.30, 0.00, 2.2),
    RawSample("b", "a", 0.40, 0.50, 0.05, 1.8),
]


# ---------------------------------------------------------------------------
# extract_samples
# ---------------------------------------------------------------------------

def test_extract_single_entry():
    qt = QTables(tables={"t": {("s", ("s", "t")): 0.42}})
    nm = NormalizedMetrics(feats={("s", "t"): LinkFeatures(0.1, 0.2, 0.3)})
    samples = extract_samples(qt, nm)
    assert samples == [RawSample("s", "t", 0.1, 0.2, 0.3, 0.42)]


def test_extract_triangle_counts(triangle):
    from xnet.qrouter import Hyperparams, RewardWeights, train
    from conftest import static_costs
    nm, _ = static_costs(triangle, seed=0)
    qt = train(triangle, nm, RewardWeights.equal(),
               Hyperparams(episodes_per_pair=5, seed=0))
    # 3 destinations x 2 non-terminal states x 2 actions
    assert len(extract_samples(qt, nm)) == 12


def test_extract_missing_metric_errors():
    qt = QTables(tables={"t": {("s", ("s", "t")): 1.0}})
    nm = NormalizedMetrics(feats={})
    with pytest.raises(ValidationError, match="missing arc"):
        extract_samples(qt, nm)


# ---------------------------------------------------------------------------
# dedupe / impute
# ---------------------------------------------------------------------------

def test_dedupe_keeps_first_of_identical():
    r = RawSample("a", "b", 0.1, 0.1, 0.1, 1.0)
    assert dedupe([r, r]) == [r]


def test_dedupe_distinct_unchanged():
    rows = [RawSample("a", "b", 0.1, 0.1, 0.1, float(i)) for i in range(4)]
    assert dedupe(rows) == rows


def test_dedupe_hand_count():
    a = RawSample("a", "b", 0.1, 0.1, 0.1, 1.0)
    b = RawSample("a", "b", 0.2, 0.1, 0.1, 1.0)
    c = RawSample("b", "a", 0.1, 0.1, 0.1, 2.0)
    assert dedupe([a, a, b, c, c]) == [a, b, c]


def test_impute_identity_without_missing():
    rows = [RawSample("a", "b", 0.1, 0.2, 0.3, 1.0)]
    assert impute(rows) == rows


def test_impute_median():
    rows = [
        RawSample("a", "b", 1.0, 0.1, 0.0, 1.0),
        RawSample("a", "c", None, 0.2, 0.0, 2.0),
        RawSample("b", "c", 3.0, 0.3, 0.0, 3.0),
    ]
    out = impute(rows)
    assert out[1].bwd_hat == pytest.approx(2.0)  # median of {1, 3}
    assert out[0] == rows[0]


def test_impute_all_missing_column_fails():
    rows = [RawSample("a", "b", None, 0.1, 0.0, 1.0),
            RawSample("b", "a", None, 0.2, 0.0, 2.0)]
    with pytest.raises(ValidationError, match="entirely missing"):
        impute(rows)


# ---------------------------------------------------------------------------
# IQR winsorization
# ---------------------------------------------------------------------------

def test_iqr_no_outliers_unchanged():
    vals = list(range(1, 10))
    clipped, band = iqr_clip(vals)
    assert list(clipped) == vals


def test_iqr_hand_example():
    clipped, (lo, hi) = iqr_clip([1.0, 2.0, 3.0, 4.0, 100.0])
    # quartiles by linear interpolation: Q1=2, Q3=4, IQR=2
    assert lo == pytest.approx(-1.0)
    assert hi == pytest.approx(7.0)
    assert list(clipped) == pytest.approx([1, 2, 3, 4, 7])


def test_iqr_constant_column():
    clipped, (lo, hi) = iqr_clip([5.0] * 6)
    assert list(clipped) == [5.0] * 6
    assert lo == hi == 5.0


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       st.floats(0.0, 5.0))
@settings(max_examples=100, deadline=None)
def test_iqr_never_widens_range(vals, k):
    clipped, (lo, hi) = iqr_clip(vals, k)
    assert clipped.min() >= max(min(vals), lo) - 1e-12
    assert clipped.max() <= min(max(vals), hi) + 1e-12


# ---------------------------------------------------------------------------
# target encoding
# ---------------------------------------------------------------------------

def test_encoder_single_category_formula():
    enc = fit_target_encoder(["x"] * 4, [1.0, 2.0, 3.0, 4.0], k=10)
    m = 2.5
    assert enc.encode("x") == pytest.approx((4 * m + 10 * m) / 14)
    assert enc.encode("x") == pytest.approx(m)  # single category: prior = mean


def test_encoder_unseen_category_gets_prior():
    enc = fit_target_encoder(["x", "y"], [0.0, 10.0], k=10)
    assert enc.encode("zzz") == pytest.approx(5.0)


def test_encoder_k_zero_gives_raw_means():
    enc = fit_target_encoder(["x", "x", "y"], [1.0, 3.0, 10.0], k=0)
    assert enc.encode("x") == pytest.approx(2.0)
    assert enc.encode("y") == pytest.approx(10.0)


def test_encoder_two_categories_formula():
    enc = fit_target_encoder(["x", "x", "x", "y"], [1.0, 2.0, 3.0, 8.0], k=10)
    prior = 3.5
    assert enc.encode("x") == pytest.approx((3 * 2.0 + 10 * prior) / 13)
    assert enc.encode("y") == pytest.approx((1 * 8.0 + 10 * prior) / 11)


@given(st.permutations(list(range(8))))
@settings(max_examples=50, deadline=None)
def test_encoder_invariant_to_row_order(perm):
    cats = ["a", "a", "b", "b", "b", "c", "a", "c"]
    targets = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
    base = fit_target_encoder(cats, targets)
    shuf = fit_target_encoder([cats[i] for i in perm], [targets[i] for i in perm])
    assert shuf.table == pytest.approx(base.table)
    assert shuf.prior == pytest.approx(base.prior)


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------

def test_preprocess_empty_errors():
    with pytest.raises(ValidationError, match="empty"):
        preprocess([])


def test_preprocess_counts_and_metadata():
    ds = preprocess(GOLDEN_RAW)
    assert len(ds) == 8  # two duplicate pairs removed
    assert ds.meta["iqr"]["n_clipped"] == 1
    assert ds.meta["iqr"]["lower"] == pytest.approx(0.375)
    assert ds.meta["iqr"]["upper"] == pytest.approx(3.975)
    # hand-verified encoder values for the fixture
    assert ds.meta["src_encoder"]["table"]["a"] == pytest.approx(2.1283653846153846)
    assert ds.meta["dst_encoder"]["table"]["b"] == pytest.approx(2.0807291666666665)
    assert ds.meta["src_encoder"]["prior"] == pytest.approx(2.246875)


def test_preprocess_imputes_via_median():
    ds = preprocess(GOLDEN_RAW)
    # row (a, c) had a missing delay; column median of the others is 0.4
    i = next(i for i in range(len(ds)) if ds.src[i] == "a" and ds.dst[i] == "c"
             and ds.X[i, 2] == 0.5)
    assert ds.X[i, 3] == pytest.approx(0.4)


def test_preprocess_golden_file_bytes(tmp_path):
    ds = preprocess(GOLDEN_RAW)
    write_csv(ds, tmp_path / "out.csv")
    assert (tmp_path / "out.csv").read_bytes() == (DATA / "golden_dataset.csv").read_bytes()
    got = json.loads((tmp_path / "out.meta.json").read_text())
    want = json.loads((DATA / "golden_dataset.meta.json").read_text())
    assert got == want


def test_preprocess_idempotent_on_pipeline_output():
    ds = preprocess(GOLDEN_RAW)
    again = preprocess(ds.raw_samples())
    assert again.src == ds.src and again.dst == ds.dst
    np.testing.assert_allclose(again.X, ds.X, atol=1e-12)
    np.testing.assert_allclose(again.y, ds.y, atol=1e-12)


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------

def make_dataset(n: int) -> Dataset:
    rng = np.random.default_rng(0)
    return Dataset(
        src=tuple(f"s{i}" for i in range(n)), dst=tuple(f"d{i}" for i in range(n)),
        X=rng.random((n, 5)), y=rng.random(n), meta={},
    )


def test_split_sizes():
    train, test = split(make_dataset(10), 0.2, seed=1)
    assert len(train) == 8 and len(test) == 2


def test_split_deterministic():
    d = make_dataset(20)
    a = split(d, 0.25, seed=5)
    b = split(d, 0.25, seed=5)
    assert a[1].src == b[1].src
    c = split(d, 0.25, seed=6)
    assert a[1].src != c[1].src


def test_split_zero_frac_all_train():
    train, test = split(make_dataset(7), 0.0, seed=0)
    assert len(train) == 7 and len(test) == 0


def test_split_disjoint_exhaustive():
    d = make_dataset(23)
    train, test = split(d, 0.3, seed=2)
    assert set(train.src) | set(test.src) == set(d.src)
    assert not (set(train.src) & set(test.src))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_roundtrip_identity(tmp_path):
    ds = preprocess(GOLDEN_RAW)
    write_csv(ds, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    assert back.src == ds.src and back.dst == ds.dst
    np.testing.assert_array_equal(back.X, ds.X)
    np.testing.assert_array_equal(back.y, ds.y)
    assert back.meta == json.loads(json.dumps(ds.meta))


def test_read_truncated_fails(tmp_path):
    ds = preprocess(GOLDEN_RAW)
    write_csv(ds, tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text().splitlines()
    (tmp_path / "d.csv").write_text("\n".join(text[:3])[:-7] + "\n")
    with pytest.raises(ValidationError):
        read_csv(tmp_path / "d.csv")


def test_read_missing_sidecar_fails(tmp_path):
    ds = preprocess(GOLDEN_RAW)
    write_csv(ds, tmp_path / "d.csv")
    (tmp_path / "d.meta.json").unlink()
    with pytest.raises(ValidationError, match="sidecar"):
        read_csv(tmp_path / "d.csv")
