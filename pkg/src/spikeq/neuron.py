"""LIF neuron dynamics for binary, symmetric-ternary, and asymmetric-ternary
spiking models, plus the surrogate kernels used during backpropagation.

Forward dynamics are the discrete LIF recurrence: the membrane charges by
direct accumulation (m = v + x), fires on threshold crossing with inclusive
boundaries (m >= v_th_p for +1; m <= -v_th_n for -1), and resets through the
spike gate

    v = beta * m * (1 - |s|) + v_reset * |s|.

The |s| gate means a spike of either sign resets the membrane. Applied
literally with s = -1, the binary-era reset rule would instead *amplify* the
membrane (v = 2*beta*m - v_reset), which would let |m| escape the band the
ternary Jacobian analysis relies on, so the absolute value is used.

Sign conventions for the threshold gradients, derived once here and used by
the backward pass. Writing the ternary spike as

    s = H(m - v_th_p) - H(-(m + v_th_n)),          H = unit step,

and K for the selected surrogate kernel evaluated at the centered argument:

    ds/dm      =  K(m - v_th_p) + K(m + v_th_n)    two bumps, one per branch
    ds/dv_th_p = -K(m - v_th_p)                    raising v_th_p suppresses
                                                   +1 spikes, lowering s
    ds/dv_th_n = +K(m + v_th_n)                    raising v_th_n suppresses
                                                   -1 spikes; that branch
                                                   contributes -1, so fewer
                                                   of them *raises* s

A symmetric ternary layer with one shared trainable threshold v therefore
has ds/dv = -K(m - v) + K(m + v), whose two terms cancel in expectation for
a membrane distribution symmetric about zero.

Kernels are centered at the firing boundaries (u = m - v_th_p and
u = m + v_th_n) rather than evaluated at raw m: the gradient has to peak
where the spiking decision actually flips, otherwise all gradient mass sits
at m = 0 where nothing fires.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, require_same_shape

BINARY = "binary"
TERNARY_SYMMETRIC = "ternary_symmetric"
TERNARY_ASYMMETRIC = "ternary_asymmetric"
MODEL_FAMILIES = (BINARY, TERNARY_SYMMETRIC, TERNARY_ASYMMETRIC)

ATAN = "atan"
STE = "ste"
SIGMOID = "sigmoid"
SURROGATE_KINDS = (ATAN, STE, SIGMOID)

# Trainable thresholds are clamped to this floor after every optimizer step
# so they can neither flip sign nor collapse the no-spike band to zero width.
THRESHOLD_FLOOR = 1e-3


@dataclass(frozen=True)
class NeuronModelKind:
    """Spike alphabet family plus which thresholds (if any) are trainable."""

    family: str
    threshold_trainable_pos: bool = False
    threshold_trainable_neg: bool = False

    def __post_init__(self):
        if self.family not in MODEL_FAMILIES:
            raise ValueError(f"unknown neuron family {self.family!r}, expected one of {MODEL_FAMILIES}")
        if self.family == BINARY and self.threshold_trainable_neg:
            # binary neurons ignore all negative-threshold parameters
            object.__setattr__(self, "threshold_trainable_neg", False)
        if self.family == TERNARY_SYMMETRIC:
            # one shared threshold: the two flags cannot diverge
            tied = self.threshold_trainable_pos or self.threshold_trainable_neg
            object.__setattr__(self, "threshold_trainable_pos", tied)
            object.__setattr__(self, "threshold_trainable_neg", tied)

    @property
    def is_ternary(self) -> bool:
        return self.family != BINARY

    @property
    def is_symmetric(self) -> bool:
        return self.family == TERNARY_SYMMETRIC


def binary() -> NeuronModelKind:
    return NeuronModelKind(BINARY)


def ternary_symmetric(trainable_threshold: bool = False) -> NeuronModelKind:
    # one shared threshold; both branches train together or not at all
    return NeuronModelKind(TERNARY_SYMMETRIC, trainable_threshold, trainable_threshold)


def ternary_asymmetric(
    trainable_pos: bool = False, trainable_neg: bool = True
) -> NeuronModelKind:
    return NeuronModelKind(TERNARY_ASYMMETRIC, trainable_pos, trainable_neg)


@dataclass
class NeuronParams:
    """Membrane constants: decay, reset level, and firing thresholds.

    v_th_n is the magnitude of the negative threshold (spike at m <= -v_th_n)
    and must stay positive, as must v_th_p.
    """

    beta: float = 0.9
    v_reset: float = 0.0
    v_th_p: float = 1.0
    v_th_n: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")
        if self.v_th_p <= 0.0 or self.v_th_n <= 0.0:
            raise ValueError(
                f"thresholds must be positive, got v_th_p={self.v_th_p}, v_th_n={self.v_th_n}"
            )


@dataclass(frozen=True)
class SurrogateSpec:
    """Which surrogate kernel backpropagation uses, with its shape parameter."""

    kind: str = ATAN
    alpha: float = 2.0  # atan width
    k: float = 25.0  # sigmoid steepness

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate {self.kind!r}, expected one of {SURROGATE_KINDS}")
        if self.alpha <= 0 or self.k <= 0:
            raise ValueError("surrogate shape parameters must be positive")


def _neg_threshold(params: NeuronParams, kind: NeuronModelKind) -> float:
    # symmetric models mirror the positive threshold regardless of v_th_n
    return params.v_th_p if kind.is_symmetric else params.v_th_n


def charge(v_prev: Tensor, input_current: Tensor) -> Tensor:
    """Membrane update before a possible spike: m = v + x."""
    require_same_shape(v_prev, input_current, "charge")
    return v_prev + input_current


def fire(m: Tensor, params: NeuronParams, kind: NeuronModelKind) -> Tensor:
    """Spike decision. Binary emits {0,1}; ternary emits {-1,0,1}.

    Both boundaries are inclusive: m >= v_th_p fires +1 and (ternary only)
    m <= -v_th_n fires -1.
    """
    pos = (m >= params.v_th_p).astype(m.dtype)
    if kind.family == BINARY:
        return pos
    return pos - (m <= -_neg_threshold(params, kind)).astype(m.dtype)


def reset(m: Tensor, s: Tensor, params: NeuronParams) -> Tensor:
    """Post-spike membrane: v = beta*m*(1-|s|) + v_reset*|s|."""
    require_same_shape(m, s, "reset")
    gate = np.abs(s)
    return params.beta * m * (1.0 - gate) + params.v_reset * gate


def kernel(u: Tensor, spec: SurrogateSpec) -> Tensor:
    """Smooth surrogate kernel at centered argument u (atan or sigmoid)."""
    if spec.kind == ATAN:
        z = np.asarray((np.pi * spec.alpha / 2.0) * u)
        np.multiply(z, z, out=z)
        z += 1.0
        return np.divide(1.0 / np.pi, z, out=z)
    if spec.kind == SIGMOID:
        sig = 1.0 / (1.0 + np.exp(-spec.k * u))
        return spec.k * sig * (1.0 - sig)
    raise ValueError(f"{spec.kind} has no smooth kernel")


def kernel_antiderivative(u: Tensor, spec: SurrogateSpec) -> Tensor:
    """Exact antiderivative of kernel(); the smooth-mode forward activation.

    By construction d/du of this function is kernel(u), so a network run with
    this as its activation is exactly differentiable with the same kernels
    the spiking backward pass uses - which is what makes finite-difference
    gradient checks of the BPTT machinery meaningful.
    """
    if spec.kind == ATAN:
        z = (np.pi * spec.alpha / 2.0) * u
        return (2.0 / (np.pi * np.pi * spec.alpha)) * np.arctan(z)
    if spec.kind == SIGMOID:
        return 1.0 / (1.0 + np.exp(-spec.k * u))
    raise ValueError(f"{spec.kind} has no smooth antiderivative")


def _ste_window(m: Tensor, params: NeuronParams, kind: NeuronModelKind) -> Tensor:
    if kind.family == BINARY:
        # pass-through inside a clip window around the threshold
        return ((m >= -params.v_th_p) & (m <= 2.0 * params.v_th_p)).astype(m.dtype)
    vn = _neg_threshold(params, kind)
    # boxcar on the open no-spike band; equals 1-|s| given inclusive firing
    return ((m > -vn) & (m < params.v_th_p)).astype(m.dtype)


def surrogate_grad_m(
    m: Tensor, params: NeuronParams, kind: NeuronModelKind, spec: SurrogateSpec
) -> Tensor:
    """Estimate of ds/dm used in place of the true (measure-zero) derivative."""
    if spec.kind == STE:
        return _ste_window(m, params, kind)
    g = kernel(m - params.v_th_p, spec)
    if kind.is_ternary:
        g = g + kernel(m + _neg_threshold(params, kind), spec)
    return g


def surrogate_grad_threshold(
    m: Tensor, params: NeuronParams, kind: NeuronModelKind, spec: SurrogateSpec
) -> tuple[Tensor, Tensor]:
    """(ds/dv_th_p, ds/dv_th_n) per the sign rules in the module docstring.

    A threshold whose trainable flag is off contributes a zero tensor.
    """
    if spec.kind == STE:
        k_pos = k_neg = _ste_window(m, params, kind)
    else:
        k_pos = kernel(m - params.v_th_p, spec)
        k_neg = kernel(m + _neg_threshold(params, kind), spec)
    zeros = np.zeros_like(m)
    dpos = -k_pos if kind.threshold_trainable_pos else zeros
    dneg = (
        +k_neg
        if (kind.is_ternary and kind.threshold_trainable_neg)
        else zeros
    )
    return dpos, dneg


def smooth_activation(
    m: Tensor, params: NeuronParams, kind: NeuronModelKind, spec: SurrogateSpec
) -> Tensor:
    """Differentiable stand-in for fire(): antiderivative of the kernel,
    centered at the same boundaries. Gradient-check regime only."""
    a = kernel_antiderivative(m - params.v_th_p, spec)
    if kind.is_ternary:
        a = a + kernel_antiderivative(m + _neg_threshold(params, kind), spec)
    return a
