import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim.channel import (CV2X, LatencyBreakdown, LinkConfig, SlotSchedule, UnreachableLinkError,
                            UnstableQueueError, capacity_bps, delivery_time, discretize_latency,
                            expected_latency, inject_loss_and_jitter, mm1_mean_wait, mm1_sample_sojourn,
                            mm1_simulate, path_loss, propagation_latency, sample_overall_latency)
from v2xsim.grids import Grid, Mask
from v2xsim.pragcomm import Message


def test_path_loss_reference_value():
    # 28 + 22*2 + 20*log10(5.9)
    assert path_loss(100, 5.9) == pytest.approx(28 + 44 + 20 * math.log10(5.9), abs=1e-12)
    assert path_loss(100, 5.9) == pytest.approx(87.417, abs=1e-3)


def test_path_loss_rejects_non_positive_distance():
    with pytest.raises(ValueError):
        path_loss(0.0, 5.9)


@given(st.floats(1, 1000), st.floats(1, 1000))
def test_path_loss_monotone_in_distance(a, b):
    lo, hi = sorted((a, b))
    assert path_loss(lo, 5.9) <= path_loss(hi, 5.9)


def test_propagation_latency_oracle():
    link = LinkConfig(bandwidth_hz=10e6, tx_power_dbm=23.0, noise_power_dbm=(-95.0, -95.0))
    snr = 23.0 - path_loss(100, 5.9) + 95.0
    cap = 10e6 * math.log2(1 + 10 ** (snr / 10))
    bits = 1e6
    assert propagation_latency(bits, link, 100) == pytest.approx(1000 * bits / cap, rel=1e-12)
    assert propagation_latency(bits, link, 100) == pytest.approx(9.84, rel=0.01)
    assert propagation_latency(0, link, 100) == 0.0


def test_unreachable_link():
    link = LinkConfig(tx_power_dbm=-1e308, noise_power_dbm=(0.0, 0.0))
    with pytest.raises(UnreachableLinkError):
        propagation_latency(100, link, 10)


@given(st.floats(1, 500), st.floats(1, 500))
def test_capacity_decreases_with_distance(a, b):
    link = LinkConfig()
    lo, hi = sorted((a, b))
    assert capacity_bps(link, lo) >= capacity_bps(link, hi)


def test_discretize_examples():
    assert discretize_latency(0, 100) == 0
    assert discretize_latency(99.999, 100) == 0
    assert discretize_latency(100, 100) == 1
    assert discretize_latency(250, 100) == 2
    with pytest.raises(ValueError):
        discretize_latency(-1, 100)
    with pytest.raises(ValueError):
        discretize_latency(1, 0)


@given(st.floats(0, 1e5), st.floats(1e-3, 1e3))
def test_discretize_bracket(tau, dt):
    n = discretize_latency(tau, dt)
    assert n >= 0 and n * dt <= tau < (n + 1) * dt


def test_slot_start_and_delivery():
    sch = SlotSchedule()
    assert sch.feature_slot_start(0) == 50
    assert sch.feature_slot_start(50) == 50
    assert sch.feature_slot_start(51) == 150
    b = LatencyBreakdown(ext=10, asyn=-80, tx_pr=5, dm=5)
    # slot 150 + total(-60) = 90 but never before 51 + 20
    assert delivery_time(51, sch, b) == 90
    b2 = LatencyBreakdown(ext=10, asyn=-200, tx_pr=5, dm=5)
    assert delivery_time(51, sch, b2) == 71


@given(st.floats(0, 1e4), st.floats(-100, 100), st.floats(0, 500))
def test_delivery_never_before_send_plus_non_jitter(t, asyn, rest):
    b = LatencyBreakdown(ext=rest, asyn=asyn)
    assert delivery_time(t, SlotSchedule(), b) >= t + b.non_asyn


@given(st.integers(0, 2**32 - 1))
def test_sample_latency_within_ranges_and_deterministic(seed):
    link = LinkConfig()
    a = sample_overall_latency(link, 1e5, 50.0, seed)
    assert a == sample_overall_latency(link, 1e5, 50.0, seed)
    assert 40 <= a.ext <= 50 and -100 <= a.asyn <= 100 and 20 <= a.dm <= 30 and 0 <= a.queue <= 50
    assert a.tx_net == 0 and a.tx_pr > 0


def test_cv2x_mode_uses_network_tx():
    link = LinkConfig(mode=CV2X, cv2x_tx_ms=(200, 200))
    b = sample_overall_latency(link, 1e9, 50.0, 0)
    assert b.tx_pr == 0 and b.tx_net == 200
    assert expected_latency(link, 1e9, 50).tx == 200


def test_expected_latency_midpoints():
    e = expected_latency(LinkConfig(), 0, 10)
    assert (e.ext, e.asyn, e.dm, e.queue, e.tx) == (45, 0, 25, 25, 0)


def _msg(h=4, w=5, d=3):
    m = np.zeros((h, w), dtype=bool)
    m[1:3, 2:4] = True
    payload = Grid(np.where(m[:, :, None], 1.0, 0.0) * np.ones((h, w, d)))
    return Message(1, 0, payload, Mask(m), Grid.zeros(h, w), 0.0, t_r=100.0)


def test_loss_fills_mask_only():
    msg = _msg()
    out = inject_loss_and_jitter(msg, 1.0, 0.0, 3)
    assert out.lost and out.t_r == 100.0
    outside = ~msg.mask.values
    assert not out.payload.values[outside].any()
    assert np.count_nonzero(out.payload.values[msg.mask.values]) == 4 * 3
    kept = inject_loss_and_jitter(msg, 0.0, 0.0, 3)
    assert not kept.lost and kept.payload is msg.payload


def test_loss_rate_and_jitter_bounds():
    msg = _msg()
    outs = [inject_loss_and_jitter(msg, 0.3, 20.0, s) for s in range(2000)]
    rate = np.mean([o.lost for o in outs])
    assert abs(rate - 0.3) < 0.04
    assert all(80.0 <= o.t_r <= 120.0 for o in outs)


def test_loss_prob_validated():
    with pytest.raises(ValueError):
        inject_loss_and_jitter(_msg(), 1.5, 0, 0)


def test_mm1_mean_and_errors():
    assert mm1_mean_wait(10, 40) == pytest.approx(1000 / 30)
    with pytest.raises(UnstableQueueError):
        mm1_mean_wait(5, 5)
    with pytest.raises(ValueError):
        mm1_mean_wait(0, 5)
    s = mm1_sample_sojourn(10, 40, 0, size=50000)
    assert s.mean() == pytest.approx(1000 / 30, rel=0.03)


def test_mm1_simulation_matches_theory():
    sim = mm1_simulate(20, 30, 50000, 1)
    assert sim.mean() == pytest.approx(100.0, rel=0.1)
    assert (sim > 0).all()


def test_link_config_validation():
    with pytest.raises(ValueError):
        LinkConfig(bandwidth_hz=0)
    with pytest.raises(ValueError):
        LinkConfig(mode="wifi")
    with pytest.raises(ValueError):
        LinkConfig(ext_ms=(-1, 2))
    assert LinkConfig(ext_ms=5).ext_ms == (5.0, 5.0)
    assert LinkConfig(asyn_ms=(10, -10)).asyn_ms == (-10.0, 10.0)
