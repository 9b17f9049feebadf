import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from msi_forge.diffusion import (
    build_noise_schedule,
    decode_latent,
    denoising_loss,
    diffuse,
    encode_latent,
    forward_diffuse,
    invert_forward,
    pairwise_sum,
    read_latent,
    schedule_csv,
    undiffuse,
    write_latent,
)
from msi_forge.errors import DataError, InvalidRange, ShapeMismatch, StepOutOfRange


def alpha_bar_loop(T, b0, b1):
    """Plain-Python cumulative product, independent of numpy's linspace/cumprod."""
    out, prod = [], 1.0
    for s in range(T):
        beta = b0 if T == 1 else b0 + (b1 - b0) * s / (T - 1)
        prod *= 1.0 - beta
        out.append(prod)
    return out


class TestSchedule:
    def test_single_step(self):
        s = build_noise_schedule(1, 0.5, 0.5)
        assert s.alpha_bar.tolist() == [0.5]

    def test_two_steps(self):
        s = build_noise_schedule(2, 0.1, 0.1)
        assert s.alpha_bar == pytest.approx([0.9, 0.81], abs=1e-15)

    def test_default(self):
        s = build_noise_schedule()
        assert s.total_steps == 1000
        assert np.all(np.diff(s.alpha_bar) < 0)
        assert 0 < s.alpha_bar[-1] < 0.01 and s.alpha_bar[0] < 1
        assert s.alpha_bar == pytest.approx(alpha_bar_loop(1000, 1e-4, 0.02), rel=1e-12)

    @pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(InvalidRange):
            build_noise_schedule(*args)

    def test_step_range(self):
        s = build_noise_schedule(10)
        with pytest.raises(StepOutOfRange):
            s.alpha_bar_at(0)
        with pytest.raises(StepOutOfRange):
            s.alpha_bar_at(11)

    def test_csv(self):
        lines = schedule_csv(build_noise_schedule(2, 0.1, 0.1)).splitlines()
        assert lines[0] == "t,beta,alpha_bar"
        t, beta, ab = lines[2].split(",")
        assert (t, float(beta)) == ("2", 0.1) and float(ab) == pytest.approx(0.81)


class TestForward:
    def test_identity_limit(self):
        z0 = np.array([1.0, -2.0, 3.5])
        assert np.array_equal(diffuse(z0, np.ones(3), 1.0), z0)

    def test_zero_signal(self):
        eps = np.array([0.3, -1.2])
        s = build_noise_schedule(2, 0.1, 0.1)
        assert forward_diffuse(np.zeros(2), 2, eps, s) == pytest.approx(math.sqrt(0.19) * eps)

    def test_hand_example(self):
        s = build_noise_schedule(2, 0.1, 0.1)  # alpha_bar_2 = 0.81
        zt = forward_diffuse(np.array([1.0, 2.0]), 2, np.array([0.5, -0.5]), s)
        assert zt == pytest.approx([1.117945, 1.582055], abs=1e-6)
        assert invert_forward(zt, np.array([0.5, -0.5]), 2, s) == pytest.approx([1.0, 2.0], abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            diffuse(np.zeros(3), np.zeros(4), 0.5)

    def test_non_finite(self):
        with pytest.raises(DataError):
            diffuse(np.array([np.nan]), np.zeros(1), 0.5)

    def test_inverse_floor(self):
        with pytest.raises(StepOutOfRange):
            undiffuse(np.ones(2), np.ones(2), 1e-13)

    @given(
        arrays(np.float64, st.integers(1, 50), elements=st.floats(-100, 100)),
        st.integers(1, 1000),
        st.integers(0, 2**32),
    )
    def test_round_trip(self, z0, t, seed):
        s = build_noise_schedule()
        eps = np.random.default_rng(seed).standard_normal(z0.shape)
        back = invert_forward(forward_diffuse(z0, t, eps, s), eps, t, s)
        scale = np.maximum(np.abs(z0), 1.0)
        assert np.all(np.abs(back - z0) / scale < 1e-9)

    @given(st.integers(1, 1000), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**32))
    def test_linearity(self, t, a, b, seed):
        s = build_noise_schedule()
        rng = np.random.default_rng(seed)
        z1, z2, e1, e2 = rng.standard_normal((4, 16))
        lhs = forward_diffuse(a * z1 + b * z2, t, a * e1 + b * e2, s)
        rhs = a * forward_diffuse(z1, t, e1, s) + b * forward_diffuse(z2, t, e2, s)
        assert np.allclose(lhs, rhs, atol=1e-12)

    @pytest.mark.parametrize("t", [1, 250, 500, 1000])
    def test_mean_preservation(self, t):
        s = build_noise_schedule()
        rng = np.random.default_rng(t)
        z0 = rng.normal(0.7, 1.0, 200_000)
        eps = rng.standard_normal(200_000)
        zt = forward_diffuse(z0, t, eps, s)
        # standard error of the mean is ~1/sqrt(n) = 0.0022; allow 5 sigma
        assert abs(zt.mean() - math.sqrt(s.alpha_bar_at(t)) * z0.mean()) < 5 / math.sqrt(200_000)


grid = st.integers(-10**6, 10**6).map(lambda v: v / 1024)


class TestLoss:
    def test_identical(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        assert denoising_loss(x, x) == 0.0

    def test_unit(self):
        assert denoising_loss([1.0, 0.0], [0.0, 0.0]) == 1.0

    def test_hand(self):
        assert denoising_loss([1.0, 2.0, 3.0], [0.0, 2.0, 5.0]) == 5.0
        assert denoising_loss([1.0, 2.0, 3.0], [0.0, 2.0, 5.0], reduction="mean") == pytest.approx(5 / 3)

    def test_shape(self):
        with pytest.raises(ShapeMismatch):
            denoising_loss(np.zeros(2), np.zeros((2, 1)))

    # dyadic grid: any nonzero difference squares to a normal float, so loss==0 iff equal
    @given(st.integers(1, 40).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=grid), arrays(np.float64, n, elements=grid))))
    def test_properties(self, pair):
        a, b = pair
        la, lb = denoising_loss(a, b), denoising_loss(b, a)
        assert la == lb
        assert la >= 0
        assert (la == 0) == bool(np.array_equal(a, b))

    @given(arrays(np.float64, st.integers(0, 300), elements=st.floats(-1e6, 1e6)))
    def test_pairwise_sum_accuracy(self, x):
        assert pairwise_sum(x) == pytest.approx(math.fsum(x.tolist()), rel=1e-9, abs=1e-6)


class TestLatentFormat:
    def test_hand_frame(self):
        data = struct.pack("<QQQ", 2, 2, 3) + struct.pack("<6d", 0, 1, 2, 3, 4, 5)
        arr = decode_latent(data)
        assert arr.shape == (2, 3) and arr[1, 0] == 3.0
        assert encode_latent(arr) == data

    def test_file_round_trip(self, tmp_path):
        x = np.random.default_rng(1).standard_normal((4, 8, 8))
        write_latent(tmp_path / "z.bin", x)
        assert np.array_equal(read_latent(tmp_path / "z.bin"), x)

    def test_truncated(self):
        data = struct.pack("<QQ", 1, 4) + struct.pack("<3d", 0, 1, 2)
        with pytest.raises(DataError):
            decode_latent(data)
