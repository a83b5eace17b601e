import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mmcl.data import (
    FeatureSpec,
    SyntheticConfig,
    TabularMatrix,
    TabularSchema,
    append_label_feature,
    decode_one_hot,
    generate_synthetic,
    impute,
    impute_with_trace,
    load_dataset,
    load_tabular,
    normalize,
    one_hot,
    one_hot_rows,
    prepare,
    save_dataset,
    subsample_balanced,
)
from mmcl.data.dataset import LABEL_FEATURE, PairedDataset
from mmcl.data.io import MAGIC, read_image_container, write_image_container
from mmcl.data.synthetic import AREA_SCALE, MORPHOMETRIC, FOREGROUND_THRESHOLD
from mmcl.errors import (
    DegenerateFeatureError,
    DomainError,
    ImputationError,
    IntegrityError,
    ParseError,
    PreconditionError,
    SchemaError,
)


def cont(name, morph=False):
    return FeatureSpec(name, "continuous", morphometric=morph)


def cat(name, k=3):
    return FeatureSpec(name, "categorical", tuple(range(k)))


SCHEMA = TabularSchema((cont("a"), cont("b"), cat("c")))


# --- schema ----------------------------------------------------------------

def test_schema_rejects_duplicates_and_bad_categories():
    with pytest.raises(SchemaError):
        TabularSchema((cont("a"), cont("a")))
    with pytest.raises(SchemaError):
        FeatureSpec("c", "categorical", (2, 1))
    with pytest.raises(SchemaError):
        FeatureSpec("c", "categorical", ())


def test_schema_yaml_roundtrip(tmp_path):
    SCHEMA.save(tmp_path / "s.yaml")
    assert TabularSchema.load(tmp_path / "s.yaml") == SCHEMA
    assert SCHEMA.encoded_width == 5


# --- load_tabular --------------------------------------------------------

def write(tmp_path, text):
    p = tmp_path / "t.csv"
    p.write_text(text)
    return p


def test_load_fully_observed(tmp_path):
    m = load_tabular(write(tmp_path, "a,b,c\n1,2,0\n3,4,1\n5,6,2\n"), SCHEMA)
    assert m.shape == (3, 3)
    assert not m.missing_mask.any()
    np.testing.assert_array_equal(m.values[:, 2], [0, 1, 2])


def test_load_blank_cell_is_missing(tmp_path):
    m = load_tabular(write(tmp_path, "a,b,c\n1,2,0\n3,4,\n5,6,2\n"), SCHEMA)
    expected = np.zeros((3, 3), dtype=bool)
    expected[1, 2] = True
    np.testing.assert_array_equal(m.missing_mask, expected)


def test_load_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_tabular(write(tmp_path, "a,c,b\n1,0,2\n"), SCHEMA)
    with pytest.raises(ParseError) as e:
        load_tabular(write(tmp_path, "a,b,c\n1,x,0\n"), SCHEMA)
    assert e.value.row == 0 and e.value.column == "b"
    with pytest.raises(DomainError) as e:
        load_tabular(write(tmp_path, "a,b,c\n1,2,0\n1,2,7\n"), SCHEMA)
    assert e.value.row == 1 and e.value.column == "c"
    assert "row 1" in str(e.value) and "'c'" in str(e.value)


# --- normalize -----------------------------------------------------------

def test_normalize_hand_computed():
    schema = TabularSchema((cont("x"), cat("c")))
    m = TabularMatrix(np.array([[2.0, 0], [4, 1], [6, 1]]), np.zeros((3, 2), bool))
    out = normalize(m, schema)
    sigma = math.sqrt(8 / 3)
    np.testing.assert_allclose(out.values[:, 0], [-2 / sigma, 0, 2 / sigma], atol=1e-12)
    np.testing.assert_allclose(out.values[:, 0], [-1.2247, 0, 1.2247], atol=1e-4)
    np.testing.assert_array_equal(out.values[:, 1], [0, 1, 1])
    assert out.norm_stats["x"] == (4.0, sigma)


def test_normalize_constant_column():
    schema = TabularSchema((cont("flat"),))
    with pytest.raises(DegenerateFeatureError, match="flat"):
        normalize(TabularMatrix(np.array([[5.0], [5], [5]]), np.zeros((3, 1), bool)), schema)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_normalize_zero_mean_unit_std_and_mask_isolation(seed):
    rng = np.random.default_rng(seed)
    schema = TabularSchema((cont("x"), cont("y")))
    vals = rng.normal(3, 2, (40, 2))
    m = TabularMatrix(vals, np.zeros((40, 2), bool))
    out = normalize(m, schema)
    assert abs(out.values[:, 0].mean()) < 1e-6 and abs(out.values[:, 0].std() - 1) < 1e-6
    # hiding entries of y leaves x's statistics untouched
    mask = np.zeros((40, 2), bool)
    mask[rng.random(40) < 0.3, 1] = True
    mask[0, 1] = False
    mask[1, 1] = False
    vals2 = vals.copy()
    vals2[mask] = 1e6
    out2 = normalize(TabularMatrix(vals2, mask), schema)
    assert out2.norm_stats["x"] == out.norm_stats["x"]
    obs = vals[~mask[:, 1], 1]
    assert out2.norm_stats["y"] == pytest.approx((obs.mean(), obs.std()))


def test_normalize_twice_refused():
    m = normalize(TabularMatrix(np.array([[1.0], [2]]), np.zeros((2, 1), bool)), TabularSchema((cont("x"),)))
    with pytest.raises(PreconditionError):
        normalize(m, TabularSchema((cont("x"),)))


# --- impute ---------------------------------------------------------------

def test_impute_no_missing_is_identity():
    m = TabularMatrix(np.arange(6.0).reshape(3, 2), np.zeros((3, 2), bool))
    out, trace = impute_with_trace(m, TabularSchema((cont("a"), cont("b"))))
    assert trace == []
    assert out.values.tobytes() == m.values.tobytes()


def test_impute_linear_relation():
    schema = TabularSchema((cont("x"), cont("y")))
    vals = np.array([[1.0, 2], [2, 4], [3, 0], [4, 8]])
    mask = np.zeros((4, 2), bool)
    mask[2, 1] = True
    out, trace = impute_with_trace(TabularMatrix(vals, mask), schema)
    obs = ~mask[:, 1]
    oracle = oracles.ols_oracle(vals[obs, :1], vals[obs, 1], vals[2, :1])
    assert oracle == pytest.approx(6.0, abs=1e-12)
    assert abs(out.values[2, 1] - oracle) < 1e-6
    assert all(a >= b for a, b in zip(trace, trace[1:]))
    assert trace[-1] < 1e-3 and len(trace) <= 10
    np.testing.assert_array_equal(out.missing_mask, mask)


def test_impute_categorical_rounding_and_clamping():
    # c = round(x / 10) but the fitted value for the missing row is 1.4
    schema = TabularSchema((cont("x"), cat("c")))
    vals = np.array([[0.0, 0], [10, 1], [20, 2], [14, 0]])
    mask = np.zeros((4, 2), bool)
    mask[3, 1] = True
    out = impute(TabularMatrix(vals, mask), schema)
    assert out.values[3, 1] == 1
    # extrapolation beyond the code range is clamped
    vals[3, 0] = 90
    out = impute(TabularMatrix(vals, mask), schema)
    assert out.values[3, 1] == 2


def test_impute_errors():
    schema = TabularSchema((cont("x"), cont("y")))
    mask = np.array([[False, False], [True, True], [False, False]])
    with pytest.raises(ImputationError, match="row 1"):
        impute(TabularMatrix(np.ones((3, 2)), mask), schema)
    mask = np.array([[False, True], [False, True], [True, True]])
    with pytest.raises(ImputationError):
        impute(TabularMatrix(np.ones((3, 2)), mask), schema)


def test_impute_every_column_partially_missing():
    schema = TabularSchema((cont("x"), cont("y")))
    vals = np.array([[1.0, 2], [2, 0], [0, 6], [4, 8], [5, 10]])
    mask = np.zeros((5, 2), bool)
    mask[1, 1] = mask[2, 0] = True
    out, trace = impute_with_trace(TabularMatrix(vals, mask), schema)
    assert trace[-1] < 1e-3
    assert out.values[1, 1] == pytest.approx(4, abs=1e-2) and out.values[2, 0] == pytest.approx(3, abs=1e-2)


def test_impute_all_zero_matrix_counts_as_converged():
    schema = TabularSchema((cont("x"), cont("y")))
    mask = np.array([[False, True], [False, False], [False, False]])
    out, trace = impute_with_trace(TabularMatrix(np.zeros((3, 2)), mask), schema)
    assert trace == [0.0]
    assert out.values[0, 1] == 0


# --- one-hot ----------------------------------------------------------------

def test_one_hot_indicator_and_width():
    enc = one_hot_rows(np.array([0.5, -1.0, 1.0]), SCHEMA)
    np.testing.assert_array_equal(enc, [0.5, -1.0, 0, 1, 0])
    assert SCHEMA.encoded_width == 5


def test_one_hot_requires_imputed():
    mask = np.zeros((1, 3), bool)
    mask[0, 0] = True
    with pytest.raises(PreconditionError):
        one_hot(TabularMatrix(np.zeros((1, 3)), mask), SCHEMA)


@given(st.lists(st.integers(0, 2), min_size=1, max_size=30))
def test_one_hot_argmax_roundtrip(codes):
    vals = np.column_stack([np.zeros(len(codes)), np.ones(len(codes)), codes]).astype(float)
    enc = one_hot(TabularMatrix(vals, np.zeros_like(vals, bool)), SCHEMA)
    np.testing.assert_array_equal(decode_one_hot(enc, SCHEMA), vals)


# --- synthetic generator -------------------------------------------------------

def test_synthetic_is_deterministic():
    cfg = SyntheticConfig(n_samples=60, n_classes=3, seed=7)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.tabular.values.tobytes() == b.tabular.values.tobytes()
    assert (a.labels == b.labels).all() and (a.splits == b.splits).all()


def test_morphometric_features_recomputable_from_pixels(small_dataset):
    ds = small_dataset
    for i in range(len(ds)):
        img = ds.images[i]
        mask = img.max(axis=0) > FOREGROUND_THRESHOLD
        ys, xs = np.nonzero(mask)
        assert ds.tabular.values[i, 0] == mask.sum() * AREA_SCALE
        w, h = xs.max() - xs.min() + 1, ys.max() - ys.min() + 1
        assert ds.tabular.values[i, 1] == w
        assert ds.tabular.values[i, 2] == h
        assert ds.tabular.values[i, 3] == w / h
        # perimeter: foreground pixels with a 4-neighbour outside the shape
        edge = 0
        for y, x in zip(ys, xs):
            nbrs = [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)]
            if any(not (0 <= a < mask.shape[0] and 0 <= b < mask.shape[1]) or not mask[a, b] for a, b in nbrs):
                edge += 1
        assert ds.tabular.values[i, 4] == edge
    assert [f.name for f in ds.schema if f.morphometric] == list(MORPHOMETRIC)


def test_synthetic_class_separability():
    ds = generate_synthetic(SyntheticConfig(n_samples=1000, n_classes=4, label_noise_rate=0.0, seed=3))
    area = ds.tabular.values[:, 0]
    a, b = area[ds.labels == 0], area[ds.labels == 2]
    t = (a.mean() - b.mean()) / math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    assert abs(t) > 5


def test_synthetic_splits_and_ranges(small_dataset):
    ds = small_dataset
    assert ds.images.min() >= 0 and ds.images.max() <= 1
    counts = {s: int((ds.splits == s).sum()) for s in ("train", "val", "test")}
    assert sum(counts.values()) == len(ds)
    assert counts["train"] == 140 and counts["val"] == 30


def test_label_noise_flips_roughly_at_rate():
    clean = generate_synthetic(SyntheticConfig(n_samples=2000, n_classes=4, seed=5))
    noisy = generate_synthetic(SyntheticConfig(n_samples=2000, n_classes=4, seed=5, label_noise_rate=0.3))
    # same stream up to the flip draw: the site column is identical
    np.testing.assert_array_equal(clean.tabular.values[:, 5], noisy.tabular.values[:, 5])
    frac = (clean.labels != noisy.labels).mean()
    assert 0.25 < frac < 0.35


def test_synthetic_config_validation():
    from mmcl.errors import ConfigError

    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticConfig(n_classes=1))
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticConfig(image_size=16))


# --- LaaF -----------------------------------------------------------------------

def test_append_label_feature(small_dataset):
    ds = prepare(small_dataset)
    out = append_label_feature(ds)
    assert len(out.schema) == len(ds.schema) + 1
    spec = out.schema.features[-1]
    assert spec.name == LABEL_FEATURE and spec.kind == "categorical" and not spec.morphometric
    train = out.splits == "train"
    np.testing.assert_array_equal(out.tabular.values[train, -1], out.labels[train])
    assert out.tabular.missing_mask[~train, -1].all()
    assert LABEL_FEATURE not in out.eval_view().schema.names
    with pytest.raises(SchemaError):
        append_label_feature(out)


def test_laaf_one_hot_width_grows_by_class_count():
    n, k = 600, 286
    schema = TabularSchema((cont("x"),))
    labels = np.arange(n) % k
    ds = PairedDataset(np.zeros((n, 1, 2, 2), np.float32),
                       TabularMatrix(np.random.default_rng(0).normal(size=(n, 1)), np.zeros((n, 1), bool)),
                       labels, np.array(["train"] * n), schema)
    assert append_label_feature(ds).schema.encoded_width == schema.encoded_width + 286


# --- low-data subsampling ------------------------------------------------------------

def binary_dataset(n=1000, pos_rate=0.03, seed=0):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < pos_rate).astype(int)
    labels[:5] = 1
    splits = np.where(np.arange(n) < 800, "train", np.where(np.arange(n) < 900, "val", "test"))
    schema = TabularSchema((cont("x"),))
    tab = TabularMatrix(rng.normal(size=(n, 1)), np.zeros((n, 1), bool))
    return PairedDataset(np.zeros((n, 1, 2, 2), np.float32), tab, labels, splits, schema)


def test_balanced_full_fraction():
    ds = binary_dataset()
    n_pos = int((ds.labels[ds.splits == "train"] == 1).sum())
    sub = subsample_balanced(ds, 1.0, seed=0)
    tr = sub.splits == "train"
    assert tr.sum() == 2 * n_pos
    assert (sub.labels[tr] == 1).sum() == n_pos


def test_nested_subsets_and_untouched_eval_splits():
    from mmcl.data import SyntheticConfig

    ds = generate_synthetic(SyntheticConfig(n_samples=3000, n_classes=3, seed=2))
    subsets = {f: subsample_balanced(ds, f, seed=9) for f in (0.01, 0.1, 1.0)}
    ids = {f: set(s.index[s.splits == "train"]) for f, s in subsets.items()}
    assert ids[0.01] < ids[0.1] < ids[1.0]
    for s in subsets.values():
        for split in ("val", "test"):
            np.testing.assert_array_equal(s.index[s.splits == split], ds.split_rows(split))


def test_subsample_too_small():
    ds = binary_dataset(n=200, pos_rate=0.01)
    with pytest.raises(PreconditionError):
        subsample_balanced(ds, 0.01)


# --- on-disk layout ----------------------------------------------------------------

def test_dataset_roundtrip(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.images.tobytes() == small_dataset.images.tobytes()
    np.testing.assert_array_equal(back.tabular.values, small_dataset.tabular.values)
    np.testing.assert_array_equal(back.labels, small_dataset.labels)
    np.testing.assert_array_equal(back.splits, small_dataset.splits)
    assert back.schema == small_dataset.schema
    assert (tmp_path / "d" / "images.bmcl").read_bytes()[:5] == MAGIC


def test_image_container_header_and_truncation(tmp_path):
    imgs = np.random.default_rng(0).random((2, 3, 4, 5)).astype(np.float32)
    p = tmp_path / "x.bmcl"
    write_image_container(p, imgs)
    raw = p.read_bytes()
    assert raw[:5] == b"BMCL1"
    assert np.frombuffer(raw[5:21], "<u4").tolist() == [2, 3, 4, 5]
    np.testing.assert_array_equal(read_image_container(p), imgs)
    p.write_bytes(raw[:-4])
    with pytest.raises(IntegrityError):
        read_image_container(p)


def test_png_manifest_loading(tmp_path, small_dataset):
    from PIL import Image

    ds = small_dataset.take(np.arange(4))
    save_dataset(ds, tmp_path / "d")
    root = tmp_path / "d"
    lines = ["image_path,row_index"]
    for i, img in enumerate(ds.images):
        arr = (img.transpose(1, 2, 0) * 255).round().astype(np.uint8)
        Image.fromarray(arr).save(root / f"img_{i}.png")
        lines.append(f"img_{i}.png,{i}")
    (root / "images.csv").write_text("\n".join(lines) + "\n")
    import json

    man = json.loads((root / "manifest.json").read_text())
    man["image_manifest"] = "images.csv"
    (root / "manifest.json").write_text(json.dumps(man))
    back = load_dataset(root)
    np.testing.assert_allclose(back.images, ds.images, atol=1 / 255)
