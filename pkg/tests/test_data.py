import gzip
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hypergen.data import (
    Dataset,
    GaussianMixture,
    IdxError,
    default_toy_mixture,
    encode_idx,
    load_idx,
    load_mnist,
    minibatch,
    mixture_density,
    parse_idx,
    read_idx,
)

MNIST5K = Path(__file__).resolve().parents[1] / "data" / "mnist5k"


def test_bundled_images_header():
    raw = gzip.decompress((MNIST5K / "train-images-idx3-ubyte.gz").read_bytes())
    assert raw[:4] == bytes([0, 0, 0x08, 3])
    code, arr = parse_idx(raw)
    assert code == 0x08
    assert arr.shape == (5000, 28, 28)


def test_bundled_labels():
    code, labels = read_idx(MNIST5K / "train-labels-idx1-ubyte.gz")
    assert labels.shape == (5000,)
    assert set(np.unique(labels)) == set(range(10))


def test_load_idx_normalizes_u8(tmp_path):
    p = tmp_path / "x.idx"
    p.write_bytes(encode_idx(np.array([[0, 255], [51, 102]], dtype=np.uint8), 0x08))
    np.testing.assert_array_equal(load_idx(p), [[0.0, 1.0], [0.2, 0.4]])


def test_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"\xff\xff\xff\xff" + bytes(16))
    with pytest.raises(IdxError, match="bad magic"):
        load_idx(p)


def test_truncated_and_unsupported():
    good = encode_idx(np.zeros((3, 4), dtype=np.uint8), 0x08)
    with pytest.raises(IdxError, match="truncated"):
        parse_idx(good[:-1])
    with pytest.raises(IdxError, match="truncated"):
        parse_idx(good[:6])
    with pytest.raises(IdxError, match="unsupported"):
        parse_idx(bytes([0, 0, 0x07, 1, 0, 0, 0, 0]))


@pytest.mark.parametrize("code,dtype", [(0x08, np.uint8), (0x09, np.int8), (0x0B, np.int16), (0x0C, np.int32), (0x0D, np.float32), (0x0E, np.float64)])
def test_round_trip_every_type(code, dtype):
    arr = (np.arange(24) - 5).reshape(2, 3, 4).astype(dtype) if code != 0x08 else np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    raw = encode_idx(arr, code)
    got_code, got = parse_idx(raw)
    assert got_code == code
    np.testing.assert_array_equal(got, arr)
    assert encode_idx(got, code) == raw


def test_bundled_file_round_trips_bit_exact():
    raw = gzip.decompress((MNIST5K / "train-labels-idx1-ubyte.gz").read_bytes())
    code, arr = parse_idx(raw)
    assert encode_idx(arr, code) == raw


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(0, 5), st.integers(1, 5))))
def test_u8_round_trip_property(arr):
    assert encode_idx(parse_idx(encode_idx(arr, 0x08))[1], 0x08) == encode_idx(arr, 0x08)


def test_load_mnist_split():
    train, val = load_mnist(MNIST5K, 1000)
    assert len(train) == 4000 and len(val) == 1000
    assert train.inputs.shape[1:] == (28, 28, 1)
    assert 0.0 <= train.inputs.min() and train.inputs.max() <= 1.0
    with pytest.raises(ValueError):
        load_mnist(MNIST5K, 5000)


def test_dataset_invariants():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2, 2, 1)), np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2, 2, 1)), np.array([0, 10]))
    with pytest.raises(ValueError):
        Dataset(np.full((1, 2, 2, 1), 2.0), np.array([0]))


def test_density_at_mean_of_unit_gaussian():
    gm = GaussianMixture([[0.3, -1.0]], [np.eye(2)], [1.0])
    assert mixture_density([0.3, -1.0], gm) == pytest.approx(1 / (2 * np.pi), abs=1e-15)
    assert float(mixture_density([0.3, -1.0], gm)) == pytest.approx(0.159155, abs=1e-6)


def test_density_symmetric_for_isotropic():
    gm = GaussianMixture.isotropic([[1.0, 2.0]], 0.7)
    v = np.array([0.4, -0.9])
    assert mixture_density(gm.means[0] + v, gm) == pytest.approx(mixture_density(gm.means[0] - v, gm), rel=1e-14)


def _naive_density(p, means, covs, weights):
    total = 0.0
    for m, c, w in zip(means, covs, weights):
        d = p - m
        total += w * np.exp(-0.5 * d @ np.linalg.solve(c, d)) / (2 * np.pi * np.sqrt(np.linalg.det(c)))
    return total


def test_three_component_mixture_matches_summation():
    means = [[0, 0], [1, 2], [-2, 1]]
    covs = [[[1, 0.3], [0.3, 0.5]], [[0.2, 0], [0, 0.4]], [[2, -0.5], [-0.5, 1]]]
    weights = [0.5, 0.2, 0.3]
    gm = GaussianMixture(means, covs, weights)
    rng = np.random.default_rng(0)
    for p in rng.standard_normal((20, 2)) * 2:
        want = _naive_density(p, np.array(means, float), np.array(covs, float), weights)
        assert abs(float(mixture_density(p, gm)) - want) < 1e-12


def test_density_integrates_to_one():
    gm = default_toy_mixture()
    g = np.linspace(-5, 5, 801)
    xx, yy = np.meshgrid(g, g)
    dens = mixture_density(np.stack([xx.ravel(), yy.ravel()], 1), gm)
    assert abs(dens.sum() * (g[1] - g[0]) ** 2 - 1.0) < 0.01


def test_mixture_validation():
    with pytest.raises(ValueError, match="positive definite"):
        GaussianMixture([[0, 0]], [[[1, 2], [2, 1]]], [1.0])
    with pytest.raises(ValueError, match="symmetric"):
        GaussianMixture([[0, 0]], [[[1, 0.1], [0, 1]]], [1.0])
    with pytest.raises(ValueError, match="sum to 1"):
        GaussianMixture([[0, 0]], [np.eye(2)], [0.9])


def _small_ds(n):
    return Dataset(np.zeros((n, 1, 1, 1)), np.arange(n) % 10)


def test_minibatch_full_draw_is_permutation():
    ds = Dataset(np.linspace(0, 1, 50).reshape(50, 1, 1, 1), np.arange(50) % 10)
    x, _ = minibatch(ds, 50, np.random.default_rng(1))
    assert sorted(x.ravel().tolist()) == sorted(ds.inputs.ravel().tolist())


def test_minibatch_deterministic_and_bounded():
    ds = _small_ds(100)
    a = minibatch(ds, 10, np.random.default_rng(5))
    b = minibatch(ds, 10, np.random.default_rng(5))
    np.testing.assert_array_equal(a[1], b[1])
    with pytest.raises(ValueError):
        minibatch(ds, 101, np.random.default_rng(0))


def test_minibatch_inclusion_frequency():
    n, size, draws = 1000, 32, 10_000
    ds = Dataset(np.arange(n).reshape(n, 1, 1, 1) / n, np.zeros(n, dtype=int))
    rng = np.random.default_rng(7)
    counts = np.zeros(n)
    for _ in range(draws):
        x, _ = minibatch(ds, size, rng)
        idx = np.rint(x.ravel() * n).astype(int)
        assert len(set(idx)) == size
        counts[idx] += 1
    p = size / n
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) < 5 * sigma)
    assert np.mean(np.abs(counts - draws * p) < 3 * sigma) > 0.99
