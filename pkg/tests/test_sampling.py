import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from app.errors import DatasetError
from app.graphs.raster import FdlImage, write_pgm
from app.sampling.manifest import (class_names_from_manifest, load_dataset, read_manifest,
                                   write_class_distribution, write_manifest)
from app.sampling.sampling import (ImageDataset, SamplerConfig, class_distribution, minmax_normalize,
                                   smote_balance, stratified_kfold, stratified_split, stratified_split_indices)


def _dataset(counts, side=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
    images = rng.uniform(size=(len(labels), side, side))
    return ImageDataset(images, labels, [f"c{i}" for i in range(len(counts))])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_minmax_range(values):
    scaled = minmax_normalize(values)
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0
    if max(values) > min(values):
        assert scaled.max() == 1.0 and scaled.min() == 0.0


def test_minmax_constant_series_is_zero():
    np.testing.assert_array_equal(minmax_normalize([4.0, 4.0, 4.0]), [0.0, 0.0, 0.0])


def test_smote_fills_minorities_up_to_majority():
    balanced = smote_balance(_dataset([10, 4]), SamplerConfig(k_neighbors=5, seed=1))
    assert class_distribution(balanced.labels, balanced.class_names) == [("c0", 10), ("c1", 10)]
    assert balanced.synthetic.sum() == 6
    assert (balanced.labels[balanced.synthetic] == 1).all()
    # originals come first and are untouched
    np.testing.assert_array_equal(balanced.images[:14], _dataset([10, 4]).images)


def test_synthetics_lie_on_the_segment_between_parents():
    dataset = _dataset([30, 5], side=3, seed=2)
    balanced = smote_balance(dataset, SamplerConfig(k_neighbors=3, seed=2))
    for image, (a, b) in zip(balanced.images[balanced.synthetic], balanced.parents[balanced.synthetic]):
        x, y = dataset.images[a].ravel(), dataset.images[b].ravel()
        assert dataset.labels[a] == dataset.labels[b] == 1
        direction = y - x
        u = np.dot(image.ravel() - x, direction) / np.dot(direction, direction)
        assert -1e-12 <= u <= 1 + 1e-12
        np.testing.assert_allclose(image.ravel(), x + u * direction, atol=1e-12)


def test_interpolation_weights_are_uniform():
    # two points per class: every synthetic lies between exactly those two
    images = np.array([[[0.0]], [[1.0]], [[0.0]], [[0.0]]])
    images = np.concatenate([images, np.zeros((3000, 1, 1))])
    labels = np.array([1, 1] + [0] * 3002)
    balanced = smote_balance(ImageDataset(images, labels, ["a", "b"]), SamplerConfig(seed=5))
    u = balanced.images[balanced.synthetic].ravel()
    assert len(u) == 3000
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_smote_is_deterministic_per_seed():
    config = SamplerConfig(seed=11)
    first = smote_balance(_dataset([12, 3, 5]), config)
    second = smote_balance(_dataset([12, 3, 5]), config)
    np.testing.assert_array_equal(first.images, second.images)
    other = smote_balance(_dataset([12, 3, 5]), SamplerConfig(seed=12))
    assert not np.array_equal(first.images, other.images)


def test_k_is_clamped_for_small_classes(caplog):
    balanced = smote_balance(_dataset([8, 3]), SamplerConfig(k_neighbors=5))
    assert balanced.synthetic.sum() == 5
    assert "event=smote_k_reduced" in caplog.text


def test_single_sample_minority_cannot_be_balanced():
    with pytest.raises(DatasetError):
        smote_balance(_dataset([5, 1]))


def test_balanced_input_is_returned_unchanged():
    dataset = _dataset([4, 4])
    balanced = smote_balance(dataset)
    np.testing.assert_array_equal(balanced.images, dataset.images)
    assert not balanced.synthetic.any()


@given(st.lists(st.integers(1, 30), min_size=1, max_size=5), st.floats(0.1, 0.9), st.integers(0, 100))
def test_stratified_split_partitions_indices(counts, ratio, seed):
    labels = np.concatenate([np.full(c, i) for i, c in enumerate(counts)])
    train, test = stratified_split_indices(labels, ratio, seed)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(len(labels)))
    assert len(train) == round(len(labels) * ratio)
    for c, size in enumerate(counts):
        assert abs(np.sum(labels[train] == c) - size * ratio) < 1 + 1e-9


def test_stratified_split_datasets():
    train, test = stratified_split(_dataset([10, 10]), 0.8, seed=3)
    assert len(train) == 16 and len(test) == 4
    assert np.bincount(test.labels).tolist() == [2, 2]


def test_kfold_validation_folds_cover_everything():
    labels = np.repeat([0, 1, 2], 10)
    folds = stratified_kfold(labels, 5, seed=0)
    validation = np.concatenate([val for _, val in folds])
    assert sorted(validation.tolist()) == list(range(30))
    for train, val in folds:
        assert not set(train) & set(val)
        assert np.bincount(labels[val]).tolist() == [2, 2, 2]
    with pytest.raises(DatasetError):
        stratified_kfold(np.array([0, 0, 1]), 2, seed=0)


def test_dataset_rejects_bad_labels():
    with pytest.raises(DatasetError):
        ImageDataset(np.zeros((2, 3, 3)), [0, 3], ["a", "b"])
    with pytest.raises(DatasetError):
        ImageDataset(np.zeros((2, 3, 3)), [0], ["a"])


def test_manifest_round_trip(tmp_path):
    rows = []
    for i, label in enumerate([0, 1, 1]):
        name = f"img{i}.pgm"
        write_pgm(FdlImage(np.full((4, 4), i / 2)), tmp_path / name)
        rows.append(dict(path=name, label=label, class_name=["W", "N1"][label], source_id="rec"))
    manifest = write_manifest(rows, tmp_path / "manifest.csv")
    dataset = load_dataset(manifest)
    assert dataset.class_names == ["W", "N1"]
    assert dataset.labels.tolist() == [0, 1, 1]
    np.testing.assert_allclose(dataset.images[2], 1.0)
    assert not dataset.synthetic.any()

    frame = read_manifest(manifest)
    assert class_names_from_manifest(frame, ["x", "y"]) == ["x", "y"]
    distribution = pd.read_csv(write_class_distribution(dataset.labels, dataset.class_names, tmp_path / "d.csv"))
    assert distribution.to_dict("list") == {"class_name": ["W", "N1"], "count": [1, 2]}


def test_manifest_errors(tmp_path):
    with pytest.raises(DatasetError):
        read_manifest(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("path,label\na.pgm,0\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        read_manifest(bad)
    clash = tmp_path / "clash.csv"
    clash.write_text("path,label,class_name,source_id\na.pgm,0,W,r\nb.pgm,0,N1,r\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        read_manifest(clash)


def test_empty_class_is_named_when_balancing():
    with pytest.raises(DatasetError, match="'c1'"):
        smote_balance(_dataset([5, 0, 4]))


def _gapped_manifest(tmp_path, names):
    rows = []
    for i, label in enumerate([0, 0, 2, 2, 3, 3]):
        write_pgm(FdlImage(np.full((4, 4), i / 6)), tmp_path / f"img{i}.pgm")
        rows.append(dict(path=f"img{i}.pgm", label=label, class_name=names[label], source_id="rec"))
    return write_manifest(rows, tmp_path / "manifest.csv")


def test_stored_class_list_keeps_classes_without_images(tmp_path):
    names = ["W", "R", "1", "2", "3", "4", "?"]
    manifest = _gapped_manifest(tmp_path, names)
    with pytest.raises(DatasetError, match=r"\[1\]"):
        load_dataset(manifest)

    write_class_distribution([0, 0, 2, 2, 3, 3], names, tmp_path / "class_distribution.csv")
    dataset = load_dataset(manifest)
    assert dataset.class_names == names
    assert dataset.n_classes == 7
    with pytest.raises(DatasetError, match="'R'"):
        smote_balance(dataset)


def test_stored_class_list_must_agree_with_the_rows(tmp_path):
    manifest = _gapped_manifest(tmp_path, ["W", "R", "1", "2"])
    write_class_distribution([], ["W", "N1", "N2", "N3"], tmp_path / "class_distribution.csv")
    with pytest.raises(DatasetError, match="disagree"):
        load_dataset(manifest)


def test_missing_synthetic_flags_default_to_false(tmp_path, recwarn):
    rows = [dict(path="a.pgm", label=0, class_name="W", source_id="r"),
            dict(path="b.pgm", label=0, class_name="W", source_id="r", synthetic=True)]
    frame = read_manifest(write_manifest(rows, tmp_path / "manifest.csv"))
    assert frame["synthetic"].tolist() == [False, True]
    assert not [w for w in recwarn if issubclass(w.category, FutureWarning)]
