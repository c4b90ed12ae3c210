import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikeq import neuron
from spikeq.neuron import (
    NeuronModelKind,
    NeuronParams,
    SurrogateSpec,
    binary,
    charge,
    fire,
    kernel,
    kernel_antiderivative,
    reset,
    smooth_activation,
    surrogate_grad_m,
    surrogate_grad_threshold,
    ternary_asymmetric,
    ternary_symmetric,
)
from spikeq.tensor import DimensionError

A = lambda *xs: np.asarray(xs, dtype=np.float32)


class TestCharge:
    def test_direct_sum(self):
        np.testing.assert_allclose(charge(A(0.0), A(0.5)), A(0.5))
        np.testing.assert_allclose(charge(A(0.3), A(-0.8)), A(-0.5))
        np.testing.assert_allclose(charge(A(0.0), A(0.0)), A(0.0))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            charge(np.zeros(3), np.zeros(4))


class TestFire:
    def test_binary_boundary_inclusive(self):
        p = NeuronParams(v_th_p=1.0)
        np.testing.assert_array_equal(fire(A(1.0, 0.999, -5.0), p, binary()), A(1, 0, 0))

    def test_asymmetric_gap(self):
        # -2 < -1.5 < 1: no spike in either direction
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        np.testing.assert_array_equal(
            fire(A(-1.5, -2.0, 1.0), p, ternary_asymmetric()), A(0, -1, 1)
        )

    def test_symmetric_negative_boundary(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=5.0)  # v_th_n ignored when symmetric
        np.testing.assert_array_equal(fire(A(-1.0), p, ternary_symmetric()), A(-1))

    @given(st.floats(-10, 10))
    def test_alphabets(self, m):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        assert float(fire(A(m), p, binary())[0]) in (0.0, 1.0)
        for kind in (ternary_symmetric(), ternary_asymmetric()):
            assert float(fire(A(m), p, kind)[0]) in (-1.0, 0.0, 1.0)


class TestReset:
    def test_positive_spike_resets(self):
        p = NeuronParams(beta=0.9, v_reset=0.0)
        np.testing.assert_allclose(reset(A(1.4), A(1.0), p), A(0.0))

    def test_decay_branch(self):
        p = NeuronParams(beta=0.9)
        np.testing.assert_allclose(reset(A(0.5), A(0.0), p), A(0.45))

    def test_negative_spike_resets_via_gate(self):
        p = NeuronParams(beta=0.9, v_reset=0.0)
        np.testing.assert_allclose(reset(A(-2.2), A(-1.0), p), A(0.0))

    @given(st.floats(-4, 4), st.floats(0.1, 1.0))
    @settings(max_examples=50)
    def test_membrane_never_grows_without_input(self, m, beta):
        p = NeuronParams(beta=beta, v_reset=0.0, v_th_p=1.0, v_th_n=2.0)
        s = fire(A(m), p, ternary_asymmetric())
        v = reset(A(m), s, p)
        if float(np.abs(s)[0]):  # spiked: reset to v_reset
            assert abs(float(v[0])) <= max(beta * 2.0, 0.0) + 1e-6
        assert abs(float(v[0])) <= max(abs(m) * beta, 0.0) + 1e-6


class TestSurrogateGradM:
    def test_ste_ternary_boxcar(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        spec = SurrogateSpec("ste")
        g = surrogate_grad_m(A(0.5, 1.5, -1.9, -2.0), p, ternary_asymmetric(), spec)
        np.testing.assert_array_equal(g, A(1, 0, 1, 0))

    def test_ste_binary_clip_window(self):
        p = NeuronParams(v_th_p=1.0)
        spec = SurrogateSpec("ste")
        g = surrogate_grad_m(A(-1.0, 0.0, 2.0, 2.1, -1.1), p, binary(), spec)
        np.testing.assert_array_equal(g, A(1, 1, 1, 0, 0))

    def test_atan_peak_at_threshold(self):
        p = NeuronParams(v_th_p=1.0)
        g = surrogate_grad_m(A(1.0), p, binary(), SurrogateSpec("atan", alpha=2.0))
        np.testing.assert_allclose(g, A(1 / np.pi), rtol=1e-6)

    def test_sigmoid_peak_value(self):
        p = NeuronParams(v_th_p=1.0)
        g = surrogate_grad_m(A(1.0), p, binary(), SurrogateSpec("sigmoid", k=25.0))
        np.testing.assert_allclose(g, A(25.0 / 4.0), rtol=1e-6)

    @given(st.floats(-5, 5))
    @settings(max_examples=100)
    def test_symmetric_kernel_is_even(self, m):
        # symmetric ternary: g(m) == g(-m) for smooth kernels
        p = NeuronParams(v_th_p=1.0)
        for spec in (SurrogateSpec("atan"), SurrogateSpec("sigmoid")):
            a = surrogate_grad_m(np.asarray([m]), p, ternary_symmetric(), spec)
            b = surrogate_grad_m(np.asarray([-m]), p, ternary_symmetric(), spec)
            np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)

    def test_asymmetry_breaks_evenness(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        spec = SurrogateSpec("atan")
        a = surrogate_grad_m(A(1.0), p, ternary_asymmetric(), spec)
        b = surrogate_grad_m(A(-1.0), p, ternary_asymmetric(), spec)
        assert not np.allclose(a, b)


class TestSurrogateGradThreshold:
    def test_far_from_thresholds_decays(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        kind = ternary_asymmetric(trainable_pos=True, trainable_neg=True)
        dpos, dneg = surrogate_grad_threshold(A(30.0), p, kind, SurrogateSpec("atan"))
        assert abs(float(dpos[0])) < 1e-3 and abs(float(dneg[0])) < 1e-3

    def test_atan_sign_rule_at_positive_threshold(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        kind = ternary_asymmetric(trainable_pos=True, trainable_neg=True)
        dpos, dneg = surrogate_grad_threshold(A(1.0), p, kind, SurrogateSpec("atan", alpha=2.0))
        np.testing.assert_allclose(dpos, A(-1 / np.pi), rtol=1e-6)
        assert float(dneg[0]) > 0.0  # raising v_th_n suppresses -1 spikes, raising s

    def test_ste_magnitudes_inside_window(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        kind = ternary_asymmetric(trainable_pos=True, trainable_neg=True)
        dpos, dneg = surrogate_grad_threshold(A(0.0), p, kind, SurrogateSpec("ste"))
        np.testing.assert_array_equal(dpos, A(-1.0))
        np.testing.assert_array_equal(dneg, A(1.0))

    def test_untrainable_flags_give_zeros(self):
        p = NeuronParams(v_th_p=1.0, v_th_n=2.0)
        kind = ternary_asymmetric(trainable_pos=False, trainable_neg=False)
        dpos, dneg = surrogate_grad_threshold(A(1.0), p, kind, SurrogateSpec("atan"))
        assert not dpos.any() and not dneg.any()


class TestModelKinds:
    def test_binary_ignores_negative_threshold_flag(self):
        kind = NeuronModelKind(neuron.BINARY, threshold_trainable_neg=True)
        assert not kind.threshold_trainable_neg

    def test_symmetric_flags_are_tied(self):
        kind = NeuronModelKind(neuron.TERNARY_SYMMETRIC, threshold_trainable_pos=True)
        assert kind.threshold_trainable_neg

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            NeuronModelKind("quaternary")

    def test_params_validation(self):
        with pytest.raises(ValueError):
            NeuronParams(beta=0.0)
        with pytest.raises(ValueError):
            NeuronParams(v_th_p=-1.0)


def test_degenerate_asymmetric_equals_symmetric():
    rng = np.random.default_rng(0)
    m = rng.standard_normal(1000).astype(np.float32) * 2.0
    p = NeuronParams(v_th_p=1.0, v_th_n=1.0)
    np.testing.assert_array_equal(
        fire(m, p, ternary_asymmetric()), fire(m, p, ternary_symmetric())
    )


def test_antiderivative_matches_kernel_by_finite_differences():
    h = 1e-5
    u = np.linspace(-3, 3, 41)
    for spec in (SurrogateSpec("atan", alpha=2.0), SurrogateSpec("sigmoid", k=4.0)):
        fd = (kernel_antiderivative(u + h, spec) - kernel_antiderivative(u - h, spec)) / (2 * h)
        np.testing.assert_allclose(fd, kernel(u.copy(), spec), rtol=1e-6, atol=1e-8)


def test_smooth_activation_gradients_match_kernels():
    # d/dm, d/dv_th_p, d/dv_th_n of the smooth activation equal the
    # (+K, -K_p, +K_n) triple the backward pass uses
    spec = SurrogateSpec("sigmoid", k=3.0)
    kind = ternary_asymmetric(trainable_pos=True, trainable_neg=True)
    m = np.linspace(-3, 3, 13)
    h = 1e-6
    base = NeuronParams(v_th_p=1.0, v_th_n=2.0)
    fd_m = (
        smooth_activation(m + h, base, kind, spec) - smooth_activation(m - h, base, kind, spec)
    ) / (2 * h)
    np.testing.assert_allclose(fd_m, surrogate_grad_m(m, base, kind, spec), rtol=1e-5, atol=1e-9)
    up = NeuronParams(v_th_p=1.0 + h, v_th_n=2.0)
    dn = NeuronParams(v_th_p=1.0 - h, v_th_n=2.0)
    fd_p = (smooth_activation(m, up, kind, spec) - smooth_activation(m, dn, kind, spec)) / (2 * h)
    dpos, dneg = surrogate_grad_threshold(m, base, kind, spec)
    np.testing.assert_allclose(fd_p, dpos, rtol=1e-5, atol=1e-9)
    up = NeuronParams(v_th_p=1.0, v_th_n=2.0 + h)
    dn = NeuronParams(v_th_p=1.0, v_th_n=2.0 - h)
    fd_n = (smooth_activation(m, up, kind, spec) - smooth_activation(m, dn, kind, spec)) / (2 * h)
    np.testing.assert_allclose(fd_n, dneg, rtol=1e-5, atol=1e-9)
