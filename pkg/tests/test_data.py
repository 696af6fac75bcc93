import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lapda.data import (
    BatchSampler,
    DomainDataset,
    FormatError,
    ScenarioSpec,
    build_scenario,
    gen_blobs,
    gen_two_moons,
    idx_image_bytes,
    idx_label_bytes,
    load_idx,
    read_idx_images,
    sample_batch,
    save_idx,
    upscale,
)

HAND_IMAGE = bytes.fromhex("00000803 00000001 00000002 00000002 004080FF".replace(" ", ""))
HAND_LABEL = bytes.fromhex("00000801 00000001 07".replace(" ", ""))


# synthetic scenarios

def test_two_moons_zero_angle_is_identity():
    s, t = gen_two_moons(100, 0.0, 0.1, seed=3)
    np.testing.assert_array_equal(s.X, t.X)


def test_two_moons_rotation_keeps_centroid():
    s, t = gen_two_moons(1000, 30.0, 0.1, seed=3)
    np.testing.assert_allclose(s.X.mean(axis=0), t.X.mean(axis=0), atol=1e-9)
    assert not np.allclose(s.X, t.X)


@pytest.mark.parametrize("n", [2, 10, 1000])
def test_two_moons_class_counts(n):
    s, t = gen_two_moons(n, 30.0, 0.1, seed=0)
    assert np.sum(s.y == 0) == n // 2 and np.sum(s.y == 1) == n // 2
    np.testing.assert_array_equal(s.y, t.y)


def test_two_moons_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_two_moons(1, 0.0, 0.1, 0)
    with pytest.raises(ValueError):
        gen_two_moons(10, 0.0, -0.1, 0)


def test_blobs_zero_shift_identical():
    s, t = gen_blobs(60, 3, (0.0, 0.0), 0.5, seed=1)
    np.testing.assert_array_equal(s.X, t.X)


def test_blobs_shift_bound():
    n, C, noise, shift = 600, 4, 0.5, np.array([2.0, -1.0])
    s, t = gen_blobs(n, C, shift, noise, seed=2)
    bound = 3 * noise / np.sqrt(n / C)
    for c in range(C):
        diff = t.X[t.y == c].mean(axis=0) - s.X[s.y == c].mean(axis=0)
        assert np.all(np.abs(diff - shift) <= bound)


def test_blobs_labels_uniform():
    s, _ = gen_blobs(100, 5, (1.0, 0.0), 0.3, seed=4)
    np.testing.assert_array_equal(np.bincount(s.y), [20] * 5)


def test_blobs_needs_two_classes():
    with pytest.raises(ValueError):
        gen_blobs(10, 1, (0, 0), 0.1, 0)


def test_generators_deterministic():
    a = build_scenario(ScenarioSpec(seed=5))
    b = build_scenario(ScenarioSpec(seed=5))
    for name in ("source", "target", "val", "test"):
        np.testing.assert_array_equal(getattr(a, name).X, getattr(b, name).X)


def test_scenario_split_sizes_and_label_quarantine():
    sp = build_scenario(ScenarioSpec(n_source=50, n_target=40, n_val=10, n_test=20, seed=1))
    assert (len(sp.source), len(sp.target), len(sp.val), len(sp.test)) == (50, 40, 10, 20)
    assert sp.source.labeled and sp.val.labeled and sp.test.labeled
    assert sp.target.y is None and not sp.target.labeled


def test_scenario_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(angle=180)
    with pytest.raises(ValueError):
        ScenarioSpec(n_source=0)
    with pytest.raises(ValueError):
        ScenarioSpec(kind="svhn")


# IDX

def test_handcrafted_idx_decode(tmp_path):
    (tmp_path / "img").write_bytes(HAND_IMAGE)
    (tmp_path / "lbl").write_bytes(HAND_LABEL)
    ds = load_idx(tmp_path / "img", tmp_path / "lbl")
    assert ds.X.shape == (1, 4) and ds.image_shape == (2, 2)
    np.testing.assert_array_equal(ds.X[0], np.array([0, 0x40, 0x80, 0xFF]) / 255.0)
    np.testing.assert_allclose(ds.X[0], [0, 0.2510, 0.5020, 1.0], atol=1e-4)
    assert ds.y.tolist() == [7]


def test_idx_byte_round_trip(tmp_path):
    (tmp_path / "img").write_bytes(HAND_IMAGE)
    (tmp_path / "lbl").write_bytes(HAND_LABEL)
    ds = load_idx(tmp_path / "img", tmp_path / "lbl")
    save_idx(ds, tmp_path / "img2", tmp_path / "lbl2")
    assert (tmp_path / "img2").read_bytes() == HAND_IMAGE
    assert (tmp_path / "lbl2").read_bytes() == HAND_LABEL


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), h=st.integers(1, 6), w=st.integers(1, 6))
def test_idx_random_round_trip(tmp_path_factory, seed, n, h, w):
    d = tmp_path_factory.mktemp("idx")
    r = np.random.default_rng(seed)
    img = idx_image_bytes(r.integers(0, 256, (n, h, w)))
    lbl = idx_label_bytes(r.integers(0, 10, n))
    (d / "i").write_bytes(img)
    (d / "l").write_bytes(lbl)
    ds = load_idx(d / "i", d / "l")
    assert ds.X.shape == (n, h * w)
    assert np.all((ds.X >= 0) & (ds.X <= 1))
    save_idx(ds, d / "i2", d / "l2")
    assert (d / "i2").read_bytes() == img and (d / "l2").read_bytes() == lbl


def test_idx_gzip(tmp_path):
    (tmp_path / "img.gz").write_bytes(gzip.compress(HAND_IMAGE))
    (tmp_path / "lbl").write_bytes(HAND_LABEL)
    np.testing.assert_array_equal(load_idx(tmp_path / "img.gz", tmp_path / "lbl").X[0],
                                  np.array([0, 64, 128, 255]) / 255.0)


def test_idx_wrong_magic(tmp_path):
    (tmp_path / "img").write_bytes(b"\x00\x00\x08\x02" + HAND_IMAGE[4:])
    with pytest.raises(FormatError, match="0x00000803.*0x00000802"):
        read_idx_images(tmp_path / "img")


def test_idx_count_mismatch(tmp_path):
    (tmp_path / "img").write_bytes(HAND_IMAGE)
    (tmp_path / "lbl").write_bytes(idx_label_bytes(np.array([1, 2])))
    with pytest.raises(FormatError):
        load_idx(tmp_path / "img", tmp_path / "lbl")


def test_idx_truncated_body(tmp_path):
    (tmp_path / "img").write_bytes(HAND_IMAGE[:-1])
    with pytest.raises(FormatError):
        read_idx_images(tmp_path / "img")


# upscale

def test_upscale_constant():
    out = upscale(np.full((2, 16, 16), 0.3))
    assert out.shape == (2, 28, 28)
    np.testing.assert_allclose(out, 0.3, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_upscale_bounded(seed):
    img = np.random.default_rng(seed).random((1, 16, 16))
    out = upscale(img)
    assert out.min() >= img.min() - 1e-15 and out.max() <= img.max() + 1e-15


def test_upscale_checkerboard_corners():
    img = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    out = upscale(img, 4)[0]
    assert (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]) == (0.0, 1.0, 1.0, 0.0)
    # interior point one third of the way along each axis
    assert out[1, 1] == pytest.approx(4 / 9, abs=1e-12)


def test_upscale_rejects_non_square():
    with pytest.raises(ValueError):
        upscale(np.zeros((1, 2, 3)))


# batches

def _labeled(n, C, rng):
    return DomainDataset(rng.normal(size=(n, 2)), np.arange(n) % C, "source", C)


def test_full_batch_is_permutation(rng):
    ds = _labeled(37, 3, rng)
    for balanced in (False, True):
        idx = BatchSampler(ds, 37, balanced, np.random.default_rng(0)).next()
        assert sorted(idx.tolist()) == list(range(37))


def test_balanced_batch_counts(rng):
    ds = _labeled(1000, 10, rng)
    s = BatchSampler(ds, 130, True, np.random.default_rng(0))
    for _ in range(20):
        np.testing.assert_array_equal(np.bincount(ds.y[s.next()], minlength=10), 13)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.integers(1, 60), C=st.integers(2, 7))
def test_balanced_counts_differ_by_at_most_one(seed, size, C):
    r = np.random.default_rng(seed)
    ds = DomainDataset(r.normal(size=(140, 2)), r.permutation(np.arange(140) % C), "source", C)
    s = BatchSampler(ds, size, True, r)
    for _ in range(5):
        idx = s.next()
        assert len(set(idx.tolist())) == size
        counts = np.bincount(ds.y[idx], minlength=C)
        assert counts.max() - counts.min() <= 1


def test_epoch_covers_dataset_without_replacement(rng):
    ds = DomainDataset(rng.normal(size=(40, 2)), None, "target", 2)
    s = BatchSampler(ds, 10, False, np.random.default_rng(1))
    seen = np.concatenate([s.next() for _ in range(4)])
    assert sorted(seen.tolist()) == list(range(40))


def test_sampler_deterministic(rng):
    ds = _labeled(100, 4, rng)
    a = BatchSampler(ds, 16, True, np.random.default_rng(9))
    b = BatchSampler(ds, 16, True, np.random.default_rng(9))
    for _ in range(10):
        np.testing.assert_array_equal(a.next(), b.next())


def test_sampler_rejects_oversized_batch(rng):
    with pytest.raises(ValueError):
        sample_batch(_labeled(5, 2, rng), 6, False, rng)


def test_unlabeled_dataset_falls_back_to_uniform(rng):
    ds = DomainDataset(rng.normal(size=(20, 2)), None, "target", 2)
    assert sample_batch(ds, 5, True, rng).y is None


def test_dataset_validation():
    with pytest.raises(ValueError):
        DomainDataset(np.array([[np.inf]]), None, "target", 2)
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((2, 1)), np.zeros(3), "source", 2)
    with pytest.raises(ValueError):
        DomainDataset(np.zeros((2, 1)), None, "other", 2)
