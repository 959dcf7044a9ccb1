import numpy as np
import pytest

from dualmetric.synthgen import Dataset, DatasetParseError, DatasetSpec, cluster_means, dumps, \
    export_dataset, generate, import_dataset, loads


def test_deterministic():
    spec = DatasetSpec(seed=11)
    assert generate(spec) == generate(spec)
    assert dumps(generate(spec)) == dumps(generate(spec))
    assert not generate(DatasetSpec(seed=12)) == generate(spec)


def test_degenerate_spread_hits_means():
    spec = DatasetSpec(sigma_cluster=1e-300, n_distractors=0, seed=2)
    ds = generate(spec)
    mu = cluster_means(spec)
    np.testing.assert_array_equal(ds.test_X, mu[ds.test_y])
    np.testing.assert_array_equal(ds.labeled_X, mu[ds.labeled_y])


@pytest.mark.parametrize("fraction", [0.25, 0.5, 0.75, 1.0])
def test_labeled_fraction_is_exact_and_balanced(fraction):
    spec = DatasetSpec(n_labeled=400, labeled_fraction=fraction)
    ds = generate(spec)
    assert len(ds.labeled_y) == int(400 * fraction)
    assert np.bincount(ds.labeled_y, minlength=4).tolist() == [int(100 * fraction)] * 4


def test_fractions_nest_and_other_splits_unchanged():
    a = generate(DatasetSpec(labeled_fraction=0.25, seed=5))
    b = generate(DatasetSpec(labeled_fraction=0.75, seed=5))
    for c in range(4):
        small, big = a.labeled_X[a.labeled_y == c], b.labeled_X[b.labeled_y == c]
        np.testing.assert_array_equal(small, big[:len(small)])
    np.testing.assert_array_equal(a.unlabeled_features(), b.unlabeled_features())
    np.testing.assert_array_equal(a.test_X, b.test_X)


def test_distractors_only_in_unlabeled():
    ds = generate(DatasetSpec(n_distractors=40))
    hidden = ds.hidden_unlabeled_labels()
    assert (hidden == -1).sum() == 40
    assert (ds.labeled_y >= 0).all() and (ds.test_y >= 0).all()
    assert np.bincount(hidden[hidden >= 0]).tolist() == [100] * 4


def test_invalid_specs():
    for bad in (dict(sigma_cluster=0.0), dict(labeled_fraction=0.0), dict(n_test=-4),
                dict(n_labeled=402), dict(labeled_fraction=0.333), dict(C=1)):
        with pytest.raises(ValueError):
            generate(DatasetSpec(**bad))


def test_class_means_converge():
    spec = DatasetSpec(n_test=40_000, n_labeled=4, n_unlabeled=0, n_distractors=0,
                       labeled_fraction=1.0, seed=21)
    ds = generate(spec)
    mu = cluster_means(spec)
    n = 10_000
    for c in range(4):
        emp = ds.test_X[ds.test_y == c].mean(axis=0)
        assert np.all(np.abs(emp - mu[c]) <= 4 * spec.sigma_cluster / np.sqrt(n))


def test_unlabeled_interface_hides_labels():
    ds = generate(DatasetSpec(n_labeled=8, n_unlabeled=8, n_test=8, n_distractors=2,
                              labeled_fraction=0.5))
    feats = ds.unlabeled_features()
    assert isinstance(feats, np.ndarray) and feats.shape == (10, 32)
    for item in ds.iter_unlabeled():
        assert isinstance(item, np.ndarray) and item.shape == (32,)
    np.testing.assert_array_equal(np.stack(list(ds.iter_unlabeled())), feats)


def test_roundtrip(tmp_path):
    ds = generate(DatasetSpec(seed=4))
    path = tmp_path / "d.csv"
    export_dataset(ds, path)
    back = import_dataset(path)
    assert back == ds
    assert back.test_X.tobytes() == ds.test_X.tobytes()


def test_empty_dataset_header_only(tmp_path):
    ds = Dataset(3, 5, np.zeros((0, 5)), [], np.zeros((0, 5)), [], np.zeros((0, 5)), [])
    text = dumps(ds)
    assert text == "3 5\n"
    assert loads(text) == ds


def test_truncated_file_rejected():
    text = dumps(generate(DatasetSpec(n_labeled=8, n_unlabeled=8, n_test=8, n_distractors=0,
                                      labeled_fraction=0.5)))
    cut = text[: len(text) // 2]
    with pytest.raises(DatasetParseError) as exc:
        loads(cut)
    assert exc.value.lineno == cut.count("\n") + 1


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("4\n", 1),
    ("2 2\nlabeled,0,1.0\n", 2),
    ("2 2\nlabeled,0,1.0,2.0\nbogus,0,1.0,2.0\n", 3),
    ("2 2\ntest,5,1.0,2.0\n", 2),
    ("2 2\ntest,-1,1.0,2.0\n", 2),
    ("2 2\nlabeled,0,1.0,abc\n", 2),
    ("2 2\nlabeled,0,1.0,nan\n", 2),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(DatasetParseError) as exc:
        loads(text)
    assert exc.value.lineno == line
    assert f"line {line}" in str(exc.value)
