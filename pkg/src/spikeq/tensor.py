"""Dense float tensors and the low-level numeric kernels everything else uses.

numpy ndarrays are used directly as the tensor type: C-order (row-major)
storage with an explicit shape is exactly the representation the rest of the
package assumes.  This module adds the contract layer on top: strict shape
checking with both shapes named in errors, valid-mode (no padding) 2-D
convolution with stride, the patch extraction / scatter pair the convolution
backward pass is built from, and a root-seeded random facility whose
subsystem streams are derived from fixed labels so one consumer's draw count
can never perturb another's.
"""

from __future__ import annotations

import zlib

import numpy as np

# The tensor type. Network parameters and activations are float32; analysis
# code uses float64 where statistical tolerances demand it.
Tensor = np.ndarray

FLOAT = np.float32


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


def require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    """Raise DimensionError naming both shapes unless they agree exactly.

    Scalar-tensor mixing is the only sanctioned broadcast; callers pass
    python floats for that case, so two ndarrays must match element for
    element.
    """
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a[m,k] @ b[k,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    return a @ b


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    """Output length of a valid (pad-free) convolution along one axis."""
    return (size - kernel) // stride + 1


def extract_patches(x: Tensor, kernel: int, stride: int) -> Tensor:
    """im2col in column layout: [..., C, H, W] -> [..., C*k*k, P], P = H'*W'.

    Row j of a patch matrix indexes (channel, kernel row, kernel col) in the
    order matching ``kernels.reshape(C_out, -1)``, so kernels multiply the
    result from the left; column p walks output positions row-major. Built
    from k*k plain strided copies, which keeps it memory-bound with no
    transpose pass.
    """
    *lead, c, h, w = x.shape
    if h < kernel or w < kernel:
        raise DimensionError(
            f"extract_patches: kernel {kernel} exceeds input {(c, h, w)}"
        )
    if stride < 1:
        raise DimensionError(f"extract_patches: stride must be >= 1, got {stride}")
    ho = conv_output_size(h, kernel, stride)
    wo = conv_output_size(w, kernel, stride)
    out = np.empty((*lead, c, kernel, kernel, ho, wo), dtype=x.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            out[..., ki, kj, :, :] = x[
                ...,
                ki : ki + ho * stride : stride,
                kj : kj + wo * stride : stride,
            ]
    return out.reshape(*lead, c * kernel * kernel, ho * wo)


def scatter_patches(
    dpatches: Tensor, x_shape: tuple[int, ...], kernel: int, stride: int
) -> Tensor:
    """col2im: adjoint of extract_patches, accumulating overlaps."""
    *lead, c, h, w = x_shape
    ho = conv_output_size(h, kernel, stride)
    wo = conv_output_size(w, kernel, stride)
    dp = dpatches.reshape(*lead, c, kernel, kernel, ho, wo)
    dx = np.zeros(x_shape, dtype=dpatches.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            dx[
                ...,
                ki : ki + ho * stride : stride,
                kj : kj + wo * stride : stride,
            ] += dp[..., ki, kj, :, :]
    return dx


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid 2-D convolution (sliding dot product, no padding, no bias).

    x may be [C,H,W] or carry leading batch axes [..., C,H,W];
    kernels are [C_out, C_in, k, k]. Output is [..., C_out, H', W'] with
    H' = (H-k)//stride + 1 and likewise W'.
    """
    if kernels.ndim != 4 or kernels.shape[2] != kernels.shape[3]:
        raise DimensionError(f"conv2d: kernels must be [C_out,C_in,k,k], got {kernels.shape}")
    if x.ndim < 3:
        raise DimensionError(f"conv2d: input must be [...,C,H,W], got {x.shape}")
    c_out, c_in, k, _ = kernels.shape
    *lead, c, h, w = x.shape
    if c != c_in:
        raise DimensionError(
            f"conv2d: input {x.shape} has {c} channels but kernels {kernels.shape} expect {c_in}"
        )
    patches = extract_patches(x, k, stride)  # [..., C*k*k, P]
    out = kernels.reshape(c_out, -1) @ patches  # [..., C_out, P]
    ho = conv_output_size(h, k, stride)
    wo = conv_output_size(w, k, stride)
    return out.reshape(*lead, c_out, ho, wo)


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


class Rng:
    """Reproducible random source with label-derived subsystem streams.

    One root seed per run; each subsystem obtains its own stream via
    ``stream(label)`` with a fixed label, so how many draws one subsystem
    makes has no effect on any other.  Identical seed and identical call
    sequence produce identical output on every platform (PCG64 guarantee).
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._path = _path
        self.gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *_path]))
        )

    def stream(self, label: str) -> "Rng":
        """Derive an independent child stream from a fixed label."""
        return Rng(self.seed, (*self._path, _label_key(label)))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Rng(seed={self.seed}, path={self._path})"
