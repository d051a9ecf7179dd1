import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from oracles import flood_fill_components

from pisss.dataset import (ClassDef, ClassTaxonomy, Sample, dataset_statistics,
                           decode_color_mask, encode_color_mask,
                           fixture_taxonomy, load_dataset, load_manifest,
                           make_synthetic_fixture, split_samples)
from pisss.errors import ConfigError, DataError, UnknownColor


def test_taxonomy_invariants_enforced():
    with pytest.raises(ConfigError):
        ClassTaxonomy((ClassDef(1, "a", (0, 0, 0), "background"),))
    with pytest.raises(ConfigError):
        ClassTaxonomy((ClassDef(0, "a", (0, 0, 0), "background"),
                       ClassDef(1, "b", (0, 0, 0), "surface")))
    with pytest.raises(ConfigError):
        ClassTaxonomy((ClassDef(0, "a", (0, 0, 0), "surface"),
                       ClassDef(1, "b", (1, 1, 1), "surface")))


def test_palette_file_roundtrip(tmp_path, taxonomy3):
    path = tmp_path / "palette.tsv"
    taxonomy3.to_file(path)
    loaded = ClassTaxonomy.from_file(path)
    assert loaded == taxonomy3


def test_decode_uniform_background(taxonomy3):
    mask = np.zeros((5, 7, 3), dtype=np.uint8)
    out = decode_color_mask(mask, taxonomy3)
    assert (out == 0).all()


def test_decode_two_colors_positioned(taxonomy3):
    mask = np.zeros((2, 2, 3), dtype=np.uint8)
    mask[0, 0] = (128, 64, 128)
    mask[1, 1] = (255, 255, 0)
    out = decode_color_mask(mask, taxonomy3)
    assert out.tolist() == [[1, 0], [0, 2]]


def test_decode_off_palette_raises(taxonomy3):
    mask = np.zeros((3, 3, 3), dtype=np.uint8)
    mask[1, 2] = (9, 9, 9)
    with pytest.raises(UnknownColor) as exc:
        decode_color_mask(mask, taxonomy3)
    assert exc.value.color == (9, 9, 9)
    assert exc.value.position == (1, 2)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_decode_encode_identity(seed):
    taxonomy = fixture_taxonomy(5)
    rng = np.random.default_rng(seed)
    label = rng.integers(0, 5, size=(6, 9)).astype(np.int64)
    assert (decode_color_mask(encode_color_mask(label, taxonomy),
                              taxonomy) == label).all()


def _write_dataset(tmp_path, taxonomy, entries):
    lines = []
    for split, name, label in entries:
        img = np.random.default_rng(len(lines)).integers(
            0, 255, size=label.shape + (3,)).astype(np.uint8)
        Image.fromarray(img).save(tmp_path / f"{name}.png")
        Image.fromarray(encode_color_mask(label, taxonomy)).save(
            tmp_path / f"{name}_mask.png")
        lines.append(f"{split}\t{name}.png\t{name}_mask.png")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def test_load_dataset_counts(tmp_path, taxonomy3):
    label = np.zeros((8, 8), dtype=np.int64)
    entries = [("train", f"t{i}", label) for i in range(3)]
    entries.append(("val", "v0", label))
    manifest = _write_dataset(tmp_path, taxonomy3, entries)
    splits = load_dataset(None, manifest, taxonomy3)
    assert len(splits["train"]) == 3
    assert len(splits["val"]) == 1
    assert len(splits["test"]) == 0
    ids = [s.id for v in splits.values() for s in v]
    assert len(set(ids)) == len(ids)


def test_load_dataset_missing_mask(tmp_path, taxonomy3):
    label = np.zeros((8, 8), dtype=np.int64)
    manifest = _write_dataset(tmp_path, taxonomy3, [("train", "a", label)])
    (tmp_path / "a_mask.png").unlink()
    with pytest.raises(DataError, match="not found"):
        load_dataset(None, manifest, taxonomy3)


def test_load_dataset_dim_mismatch(tmp_path, taxonomy3):
    label = np.zeros((8, 8), dtype=np.int64)
    manifest = _write_dataset(tmp_path, taxonomy3, [("train", "a", label)])
    Image.fromarray(np.zeros((4, 8, 3), dtype=np.uint8)).save(tmp_path / "a.png")
    with pytest.raises(DataError, match="dimensions differ"):
        load_dataset(None, manifest, taxonomy3)


def test_manifest_rejects_unknown_split(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("dev\ta.png\tb.png\n")
    with pytest.raises(DataError, match="unknown split"):
        load_manifest(path)


def test_duplicate_id_across_splits(tmp_path, taxonomy3):
    label = np.zeros((8, 8), dtype=np.int64)
    manifest = _write_dataset(tmp_path, taxonomy3,
                              [("train", "a", label)])
    text = manifest.read_text() + "val\ta.png\ta_mask.png\n"
    manifest.write_text(text)
    with pytest.raises(DataError, match="appears in both"):
        load_dataset(None, manifest, taxonomy3)


def test_statistics_single_rectangle(taxonomy3):
    label = np.zeros((16, 16), dtype=np.int64)
    label[4:7, 2:7] = 1  # 3x5 rectangle
    s = Sample(np.zeros((16, 16, 3), dtype=np.uint8), label, "a")
    stats = dataset_statistics([s], taxonomy3)
    assert stats.blob_min_edge_distribution[1] == [3]
    assert stats.pixel_count_per_class[1] == 15


def test_statistics_two_unit_blobs(taxonomy3):
    label = np.zeros((16, 16), dtype=np.int64)
    label[2, 2] = 1
    label[10, 10] = 1
    s = Sample(np.zeros((16, 16, 3), dtype=np.uint8), label, "a")
    stats = dataset_statistics([s], taxonomy3)
    assert stats.blob_min_edge_distribution[1] == [1, 1]


def test_statistics_pixel_counts_exact(fixture_samples):
    taxonomy = fixture_taxonomy(3)
    stats = dataset_statistics(fixture_samples, taxonomy)
    brute = np.zeros(3, dtype=np.int64)
    for s in fixture_samples:
        for c in range(3):
            brute[c] += int((s.label == c).sum())
    assert (stats.pixel_count_per_class == brute).all()
    assert stats.pixel_count_per_class.sum() == sum(
        s.label.size for s in fixture_samples)
    top = stats.pixel_count_per_class.argmax()
    assert stats.inverse_frequency[top] == 1.0


def test_blob_stats_match_flood_fill_oracle():
    rng = np.random.default_rng(5)
    taxonomy = fixture_taxonomy(4)
    for _ in range(10):
        label = rng.integers(0, 4, size=(24, 32)).astype(np.int64)
        s = Sample(np.zeros((24, 32, 3), dtype=np.uint8), label, "x")
        stats = dataset_statistics([s], taxonomy)
        for c in range(4):
            comps = flood_fill_components(label == c)
            expected = sorted(min(h, w) for _, h, w in comps)
            assert sorted(stats.blob_min_edge_distribution[c]) == expected


def test_fixture_determinism():
    a = make_synthetic_fixture(1, 4, (64, 64), 3)
    b = make_synthetic_fixture(1, 4, (64, 64), 3)
    assert len(a) == len(b) == 4
    for x, y in zip(a, b):
        assert (x.image == y.image).all()
        assert (x.label == y.label).all()
        assert x.id == y.id


def test_fixture_empty_and_seed_sensitivity():
    assert make_synthetic_fixture(1, 0, (64, 64), 3) == []
    a = make_synthetic_fixture(1, 4, (64, 64), 3)
    b = make_synthetic_fixture(2, 4, (64, 64), 3)
    assert any((x.label != y.label).any() for x, y in zip(a, b))


def test_fixture_covers_all_classes():
    samples = make_synthetic_fixture(3, 5, (64, 64), 12)
    seen = set()
    for s in samples:
        seen.update(np.unique(s.label).tolist())
    assert seen == set(range(12))


def test_fixture_validates_preconditions():
    with pytest.raises(ConfigError):
        make_synthetic_fixture(0, 2, (16, 64), 3)
    with pytest.raises(ConfigError):
        make_synthetic_fixture(0, 2, (64, 64), 1)


def test_split_samples_deterministic(fixture_samples):
    a = split_samples(fixture_samples, seed=9)
    b = split_samples(fixture_samples, seed=9)
    assert [s.id for s in a["train"]] == [s.id for s in b["train"]]
    all_ids = sorted(s.id for v in a.values() for s in v)
    assert all_ids == sorted(s.id for s in fixture_samples)


def test_stats_csv_shape(tmp_path, fixture_samples):
    import io
    taxonomy = fixture_taxonomy(3)
    stats = dataset_statistics(fixture_samples, taxonomy)
    buf = io.StringIO()
    stats.write_csv(buf, taxonomy)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0].split(",") == ["class_id", "name", "pixel_count",
                                   "inverse_frequency", "blob_count",
                                   "median_min_edge"]
    assert len(lines) == 4
