import numpy as np
import pytest

from spikeq.tensor import (
    DimensionError,
    Rng,
    conv2d,
    conv_output_size,
    extract_patches,
    matmul,
    scatter_patches,
)


def conv2d_reference(x, kernels, stride):
    """Naive quadruple-loop convolution in float64; the independent oracle."""
    c_out, c_in, k, _ = kernels.shape
    c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((c_out, ho, wo), dtype=np.float64)
    for o in range(c_out):
        for i in range(ho):
            for j in range(wo):
                patch = x[:, i * stride : i * stride + k, j * stride : j * stride + k]
                out[o, i, j] = np.sum(patch.astype(np.float64) * kernels[o].astype(np.float64))
    return out


class TestConv2d:
    def test_table_geometry(self):
        # 4x84x84 with 32 8x8 kernels stride 4 -> 32x20x20
        x = np.zeros((4, 84, 84), dtype=np.float32)
        kern = np.zeros((32, 4, 8, 8), dtype=np.float32)
        assert conv2d(x, kern, 4).shape == (32, 20, 20)
        assert conv_output_size(84, 8, 4) == 20

    def test_zero_input_gives_zero_output(self):
        rng = np.random.default_rng(0)
        kern = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        out = conv2d(np.zeros((3, 10, 10), dtype=np.float32), kern, 1)
        assert not out.any()

    def test_ones_sliding_sum(self):
        x = np.ones((1, 3, 3), dtype=np.float32)
        kern = np.ones((1, 1, 2, 2), dtype=np.float32)
        np.testing.assert_array_equal(conv2d(x, kern, 1), np.full((1, 2, 2), 4.0))

    def test_matches_naive_reference(self):
        rng = np.random.default_rng(42)
        for _ in range(8):
            c = int(rng.integers(1, 9))
            h = int(rng.integers(6, 33))
            w = int(rng.integers(6, 33))
            k = int(rng.integers(1, min(6, h, w) + 1))
            stride = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 7))
            x = rng.standard_normal((c, h, w)).astype(np.float32)
            kern = rng.standard_normal((c_out, c, k, k)).astype(np.float32)
            got = conv2d(x, kern, stride)
            ref = conv2d_reference(x, kern, stride)
            scale = max(1.0, np.max(np.abs(ref)))
            assert np.max(np.abs(got - ref)) / scale < 1e-5

    def test_batched_input_matches_per_item(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 2, 9, 9)).astype(np.float32)
        kern = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
        batched = conv2d(x, kern, 2)
        for i in range(3):
            np.testing.assert_array_equal(batched[i], conv2d(x[i], kern, 2))

    def test_channel_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as err:
            conv2d(np.zeros((3, 8, 8), dtype=np.float32), np.zeros((2, 4, 3, 3), dtype=np.float32))
        assert "(3, 8, 8)" in str(err.value) and "(2, 4, 3, 3)" in str(err.value)

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError):
            conv2d(np.zeros((1, 2, 2), dtype=np.float32), np.zeros((1, 1, 3, 3), dtype=np.float32))


def test_scatter_is_adjoint_of_extract():
    # <extract(x), g> == <x, scatter(g)> for all g: the pair is consistent
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 11, 9)).astype(np.float32)
    for k, stride in ((2, 1), (3, 2), (4, 3)):
        patches = extract_patches(x, k, stride)
        g = rng.standard_normal(patches.shape).astype(np.float32)
        back = scatter_patches(g, x.shape, k, stride)
        lhs = float(np.sum(patches.astype(np.float64) * g))
        rhs = float(np.sum(x.astype(np.float64) * back))
        assert abs(lhs - rhs) < 1e-3 * max(1.0, abs(lhs))


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((3, 5)).astype(np.float32)
        np.testing.assert_array_equal(matmul(np.eye(3, dtype=np.float32), b), b)

    def test_hand_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
        b = np.array([[1.0], [1.0]], dtype=np.float32)
        np.testing.assert_array_equal(matmul(a, b), [[3.0], [7.0]])

    def test_zeros_annihilate(self):
        b = np.random.default_rng(0).standard_normal((4, 2)).astype(np.float32)
        assert not matmul(np.zeros((3, 4), dtype=np.float32), b).any()

    def test_mismatch_raises(self):
        with pytest.raises(DimensionError):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))


class TestRng:
    def test_equal_seeds_equal_streams(self):
        a = Rng(1234).gen.random(10_000)
        b = Rng(1234).gen.random(10_000)
        np.testing.assert_array_equal(a, b)

    def test_labelled_streams_are_independent_of_consumption(self):
        # draining one stream must not perturb a sibling
        root1, root2 = Rng(9), Rng(9)
        root1.stream("env").gen.random(1000)
        np.testing.assert_array_equal(
            root1.stream("exploration").gen.random(50),
            root2.stream("exploration").gen.random(50),
        )

    def test_different_labels_differ(self):
        root = Rng(5)
        a = root.stream("env").gen.random(100)
        b = root.stream("encoder").gen.random(100)
        assert not np.array_equal(a, b)

    def test_nested_streams(self):
        root = Rng(5)
        a = root.stream("a").stream("b").gen.random(8)
        b = Rng(5).stream("a").stream("b").gen.random(8)
        np.testing.assert_array_equal(a, b)
