import hashlib

import numpy as np
import pytest

from msdistill.data import (
    VIEWS,
    DataGenConfig,
    DatasetParseError,
    ModalityView,
    MultimodalDataset,
    apply_view,
    generate_dataset,
    load_dataset,
    mask_inputs,
    save_dataset,
    view_inputs,
)
from msdistill.exceptions import ConfigError


def test_noise_free_text_dominant_samples_equal_prototypes():
    cfg = DataGenConfig(num_classes=3, text_dim=5, image_dim=4, n_train=30, n_meta=5, n_test=5,
                        noise_sigma=0.0, confounder_prob=0.0, fixed_dominance=1.0, seed=11)
    ds = generate_dataset(cfg)
    rng = np.random.default_rng(11)
    proto_text = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(ds.text, proto_text[ds.labels])
    np.testing.assert_array_equal(ds.image, 0.0)


def test_same_seed_gives_identical_files(tmp_path):
    cfg = DataGenConfig(n_train=50, n_meta=10, n_test=10)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(generate_dataset(cfg), a)
    save_dataset(generate_dataset(cfg), b)
    assert hashlib.sha256(a.read_bytes()).digest() == hashlib.sha256(b.read_bytes()).digest()


def test_different_seed_changes_data():
    assert generate_dataset(DataGenConfig(seed=1, n_train=20)) != generate_dataset(DataGenConfig(seed=2, n_train=20))


def test_default_class_balance_per_split():
    ds = generate_dataset(DataGenConfig())
    for split in ("train", "meta", "test"):
        sub = ds.subset(split)
        counts = np.bincount(sub.labels, minlength=3)
        expected = len(sub) / 3
        assert np.all(np.abs(counts - expected) <= 0.2 * expected), (split, counts)


def test_splits_assigned_in_id_order():
    ds = generate_dataset(DataGenConfig(n_train=7, n_meta=3, n_test=4))
    assert list(ds.splits) == ["train"] * 7 + ["meta"] * 3 + ["test"] * 4
    np.testing.assert_array_equal(ds.ids, np.arange(14))
    assert np.all((ds.dominance >= 0) & (ds.dominance <= 1))


def test_confounders_present_at_expected_rate():
    cfg = DataGenConfig(num_classes=3, noise_sigma=0.0, fixed_dominance=0.5, confounder_prob=0.3,
                        n_train=3000, n_meta=1, n_test=1, seed=4)
    ds = generate_dataset(cfg)
    rng = np.random.default_rng(4)
    pt = rng.standard_normal((3, 16))
    pv = rng.standard_normal((3, 16))
    text_ok = np.all(np.isclose(ds.text, 0.5 * pt[ds.labels]), axis=1)
    image_ok = np.all(np.isclose(ds.image, 0.5 * pv[ds.labels]), axis=1)
    assert not np.any(~text_ok & ~image_ok)  # never both confounded
    rate = np.mean(~text_ok | ~image_ok)
    assert abs(rate - 0.3) < 0.03


@pytest.mark.parametrize("bad", [
    {"num_classes": 1}, {"n_train": 0}, {"confounder_prob": 1.5}, {"noise_sigma": -0.1},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        DataGenConfig(**bad)


def test_config_from_dict_rejects_unknown_key():
    with pytest.raises(ConfigError, match="data.colour"):
        DataGenConfig.from_dict({"colour": 3})


# ----------------------------------------------------------------- views


def test_views():
    text, image = np.array([[1.0, 2.0]]), np.array([[3.0, 4.0, 5.0]])
    np.testing.assert_array_equal(view_inputs(text, image, "multi"), [[1, 2, 3, 4, 5, 1, 1]])
    np.testing.assert_array_equal(view_inputs(text, image, "text"), [[1, 2, 0, 0, 0, 1, 0]])
    np.testing.assert_array_equal(view_inputs(text, image, "image"), [[0, 0, 3, 4, 5, 0, 1]])


def test_presence_bits_disambiguate_zero_features():
    text, image = np.array([[1.0, 2.0]]), np.zeros((1, 3))
    only_image = view_inputs(text, image, ModalityView.IMAGE_ONLY)[0]
    multi = view_inputs(np.zeros((1, 2)), image, ModalityView.MULTI)[0]
    np.testing.assert_array_equal(only_image[:5], multi[:5])
    assert tuple(only_image[5:]) == (0, 1) and tuple(multi[5:]) == (1, 1)


def test_views_differ_only_in_masked_blocks():
    ds = generate_dataset(DataGenConfig(n_train=20, n_meta=2, n_test=2))
    s = ds[3]
    multi = apply_view(s, "multi")
    np.testing.assert_array_equal(multi[:32], np.concatenate([s.text, s.image]))
    for view in VIEWS[1:]:
        v = apply_view(s, view)
        changed = v != multi
        if view is ModalityView.IMAGE_ONLY:
            assert not changed[16:32].any() and v[32] == 0
        else:
            assert not changed[:16].any() and v[33] == 0


def test_mask_inputs_matches_view_inputs(rng):
    text, image = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
    X = view_inputs(text, image, "multi")
    for view in VIEWS:
        np.testing.assert_array_equal(mask_inputs(X, view, 3), view_inputs(text, image, view))


# ---------------------------------------------------------------- JSONL


@pytest.mark.parametrize("name", ["d.jsonl", "d.jsonl.gz"])
def test_round_trip(tmp_path, name):
    ds = generate_dataset(DataGenConfig(n_train=40, n_meta=10, n_test=10))
    save_dataset(ds, tmp_path / name)
    assert load_dataset(tmp_path / name, 3) == ds


def test_default_dataset_round_trip(tmp_path):
    ds = generate_dataset(DataGenConfig())
    save_dataset(ds, tmp_path / "d.jsonl")
    assert load_dataset(tmp_path / "d.jsonl", 3) == ds


def test_empty_dataset(tmp_path):
    empty = MultimodalDataset([], np.zeros((0, 2)), np.zeros((0, 2)), [], [], [], 2)
    save_dataset(empty, tmp_path / "e.jsonl")
    assert (tmp_path / "e.jsonl").read_text() == ""
    assert len(load_dataset(tmp_path / "e.jsonl")) == 0


def test_truncated_line_names_line_number(tmp_path):
    ds = generate_dataset(DataGenConfig(n_train=5, n_meta=1, n_test=1))
    path = tmp_path / "d.jsonl"
    save_dataset(ds, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2][: len(lines[2]) // 2]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetParseError, match=":3:") as info:
        load_dataset(path)
    assert info.value.lineno == 3
