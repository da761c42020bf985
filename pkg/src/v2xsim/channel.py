"""Latency and delivery model for feature messages.

Overall latency = extraction + asynchrony/jitter + transmission + decision
making + queueing. Transmission is bandwidth-limited Shannon capacity for
DSRC and a bounded uniform draw for C-V2X. Feature messages ride the
service half of each synchronisation interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .pragcomm import Message

DSRC = "dsrc"
CV2X = "cv2x"


class UnreachableLinkError(RuntimeError):
    """Channel capacity is zero (or numerically indistinguishable from it)."""


class UnstableQueueError(ValueError):
    """Service rate does not exceed arrival rate."""


def _as_range(v):
    if isinstance(v, (int, float)):
        return (float(v), float(v))
    lo, hi = v
    return (float(min(lo, hi)), float(max(lo, hi)))


@dataclass(frozen=True)
class LinkConfig:
    bandwidth_hz: float = 10e6
    tx_power_dbm: float = 23.0
    noise_power_dbm: tuple = (-110.0, -95.0)
    carrier_freq_ghz: float = 5.9
    mode: str = DSRC
    cv2x_tx_ms: tuple = (0.0, 600.0)
    ext_ms: tuple = (40.0, 50.0)
    asyn_ms: tuple = (-100.0, 100.0)
    dm_ms: tuple = (20.0, 30.0)
    queue_ms: tuple = (0.0, 50.0)
    # "uniform" draws queue_ms; "mm1" draws the stationary M/M/1 sojourn time
    queue_model: str = "uniform"
    mm1_rates: tuple = (10.0, 40.0)

    def __post_init__(self):
        if not self.bandwidth_hz > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth_hz}")
        if not self.carrier_freq_ghz > 0:
            raise ValueError(f"carrier frequency must be positive, got {self.carrier_freq_ghz}")
        if self.mode not in (DSRC, CV2X):
            raise ValueError(f"mode must be {DSRC!r} or {CV2X!r}, got {self.mode!r}")
        if self.queue_model not in ("uniform", "mm1"):
            raise ValueError(f"queue_model must be 'uniform' or 'mm1', got {self.queue_model!r}")
        for name in ("noise_power_dbm", "cv2x_tx_ms", "ext_ms", "asyn_ms", "dm_ms", "queue_ms"):
            object.__setattr__(self, name, _as_range(getattr(self, name)))
        if not math.isfinite(self.tx_power_dbm) or not all(map(math.isfinite, self.noise_power_dbm)):
            raise ValueError("dBm values must be finite")
        for name in ("cv2x_tx_ms", "ext_ms", "dm_ms", "queue_ms"):
            if getattr(self, name)[0] < 0:
                raise ValueError(f"{name} must be non-negative")

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class LatencyBreakdown:
    ext: float = 0.0
    asyn: float = 0.0
    tx_pr: float = 0.0
    tx_net: float = 0.0
    dm: float = 0.0
    queue: float = 0.0

    @property
    def tx(self):
        return self.tx_pr + self.tx_net

    @property
    def non_asyn(self):
        return self.ext + self.tx_pr + self.tx_net + self.dm + self.queue

    @property
    def total(self):
        return self.non_asyn + self.asyn


@dataclass(frozen=True)
class SlotSchedule:
    """Synchronisation interval of two equal halves: BSMs first, features second."""

    half_interval_ms: float = 50.0

    def __post_init__(self):
        if not self.half_interval_ms > 0:
            raise ValueError("half interval must be positive")

    @property
    def sync_interval_ms(self):
        return 2.0 * self.half_interval_ms

    def feature_slot_start(self, t_ms):
        """First feature-half start time at or after ``t_ms``."""
        si, half = self.sync_interval_ms, self.half_interval_ms
        k = math.ceil((t_ms - half) / si)
        return k * si + half


def path_loss(distance_m, f_c_ghz):
    """Path loss in dB: 28 + 22 log10(d) + 20 log10(f_c)."""
    if not distance_m > 0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    return 28.0 + 22.0 * math.log10(distance_m) + 20.0 * math.log10(f_c_ghz)


def snr_db(link: LinkConfig, distance_m, noise_dbm=None):
    if noise_dbm is None:
        noise_dbm = 0.5 * sum(link.noise_power_dbm)
    return link.tx_power_dbm - path_loss(distance_m, link.carrier_freq_ghz) - noise_dbm


def capacity_bps(link: LinkConfig, distance_m, noise_dbm=None):
    snr = snr_db(link, distance_m, noise_dbm)
    if not math.isfinite(snr):
        raise UnreachableLinkError(f"non-finite SNR {snr}")
    return link.bandwidth_hz * math.log2(1.0 + 10.0 ** (0.1 * snr))


def propagation_latency(size_bits, link: LinkConfig, distance_m, noise_dbm=None):
    """Transmission time in ms of ``size_bits`` over the Shannon capacity of the link.

    ``noise_dbm`` defaults to the midpoint of the link's noise range.
    """
    if size_bits < 0:
        raise ValueError(f"size must be non-negative, got {size_bits}")
    cap = capacity_bps(link, distance_m, noise_dbm)
    if not cap > 0:
        raise UnreachableLinkError(f"capacity {cap} bps at {distance_m} m")
    if size_bits == 0:
        return 0.0
    return 1000.0 * size_bits / cap


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_overall_latency(link: LinkConfig, size_bits, distance_m, rng_seed) -> LatencyBreakdown:
    """Draw one latency breakdown. Draw order is fixed so a seed pins the result."""
    rng = _rng(rng_seed)
    ext = rng.uniform(*link.ext_ms)
    asyn = rng.uniform(*link.asyn_ms)
    dm = rng.uniform(*link.dm_ms)
    if link.queue_model == "mm1":
        lam, mu = link.mm1_rates
        queue = mm1_sample_sojourn(lam, mu, rng)
    else:
        queue = rng.uniform(*link.queue_ms)
    noise = rng.uniform(*link.noise_power_dbm)
    cv2x_tx = rng.uniform(*link.cv2x_tx_ms)
    if link.mode == DSRC:
        tx_pr = propagation_latency(size_bits, link, distance_m, noise)
        tx_net = 0.0
    else:
        tx_pr, tx_net = 0.0, cv2x_tx
    return LatencyBreakdown(ext=ext, asyn=asyn, tx_pr=tx_pr, tx_net=tx_net, dm=dm, queue=queue)


def expected_latency(link: LinkConfig, size_bits, distance_m) -> LatencyBreakdown:
    """Deterministic estimate: range midpoints plus noise-midpoint transmission time."""
    mid = lambda r: 0.5 * (r[0] + r[1])  # noqa: E731
    if link.queue_model == "mm1":
        queue = mm1_mean_wait(*link.mm1_rates)
    else:
        queue = mid(link.queue_ms)
    if link.mode == DSRC:
        tx_pr, tx_net = propagation_latency(size_bits, link, distance_m), 0.0
    else:
        tx_pr, tx_net = 0.0, mid(link.cv2x_tx_ms)
    return LatencyBreakdown(ext=mid(link.ext_ms), asyn=mid(link.asyn_ms), tx_pr=tx_pr,
                            tx_net=tx_net, dm=mid(link.dm_ms), queue=queue)


def discretize_latency(tau_est_ms, delta_t_ms):
    """Number of whole decision intervals in ``tau_est_ms``."""
    if tau_est_ms < 0:
        raise ValueError(f"estimated latency must be non-negative, got {tau_est_ms}")
    if not delta_t_ms > 0:
        raise ValueError(f"interval must be positive, got {delta_t_ms}")
    n = math.floor(tau_est_ms / delta_t_ms)
    # keep n*dt <= tau < (n+1)*dt exact in floating point
    if n * delta_t_ms > tau_est_ms:
        n -= 1
    elif (n + 1) * delta_t_ms <= tau_est_ms:
        n += 1
    return int(n)


def delivery_time(send_request_t, schedule: SlotSchedule, breakdown: LatencyBreakdown):
    """Receive time of a feature message requested at ``send_request_t``.

    The message waits for the next feature half-interval, then accrues the
    breakdown total. Negative jitter can pull the timestamp earlier but never
    ahead of the request time plus the non-jitter components.
    """
    start = schedule.feature_slot_start(send_request_t)
    return max(start + breakdown.total, send_request_t + breakdown.non_asyn)


def inject_loss_and_jitter(msg: Message, loss_prob, jitter_range_ms, rng_seed) -> Message:
    """Drop-and-replace the payload with N(0, 1) noise and jitter ``t_r``.

    Noise fills the masked cells only, so the payload stays zero outside the
    mask; mask, confidence and header fields are kept.
    """
    if not 0.0 <= loss_prob <= 1.0:
        raise ValueError(f"loss probability must be in [0, 1], got {loss_prob}")
    rng = _rng(rng_seed)
    lost = rng.random() < loss_prob
    jitter = rng.uniform(-abs(jitter_range_ms), abs(jitter_range_ms))
    payload = msg.payload
    if lost:
        noise = rng.standard_normal(payload.shape)
        payload = payload.with_values(noise * msg.mask.values[:, :, None])
    t_r = msg.t_r
    if t_r is not None and jitter_range_ms:
        t_r = t_r + jitter
    return replace(msg, payload=payload, t_r=t_r, lost=msg.lost or lost)


def mm1_mean_wait(arrival_rate, service_rate):
    """Mean sojourn time 1/(mu - lambda) of an M/M/1 queue, in ms."""
    if not arrival_rate > 0:
        raise ValueError(f"arrival rate must be positive, got {arrival_rate}")
    if service_rate <= arrival_rate:
        raise UnstableQueueError(f"unstable queue: mu={service_rate} <= lambda={arrival_rate}")
    return 1000.0 / (service_rate - arrival_rate)


def mm1_sample_sojourn(arrival_rate, service_rate, rng_seed, size=None):
    """Draw from the stationary sojourn-time distribution (ms)."""
    mm1_mean_wait(arrival_rate, service_rate)
    rng = _rng(rng_seed)
    return rng.exponential(1000.0 / (service_rate - arrival_rate), size=size)


def mm1_simulate(arrival_rate, service_rate, n_customers, rng_seed, warmup=1000):
    """Sojourn times (ms) of a FCFS single-server queue via the Lindley recursion."""
    mm1_mean_wait(arrival_rate, service_rate)
    rng = _rng(rng_seed)
    total = n_customers + warmup
    inter = rng.exponential(1.0 / arrival_rate, size=total)
    service = rng.exponential(1.0 / service_rate, size=total)
    sojourn = np.empty(total)
    wait = 0.0
    for k in range(total):
        if k:
            wait = max(0.0, wait + service[k - 1] - inter[k])
        sojourn[k] = wait + service[k]
    return 1000.0 * sojourn[warmup:]


@dataclass
class LatencyTrace:
    """Per-message latency rows for CSV export."""

    rows: list = field(default_factory=list)

    FIELDS = ("link", "t_send", "t_r", "ext", "asyn", "tx_pr", "tx_net", "dm", "queue")

    def add(self, link_name, t_send, t_r, b: LatencyBreakdown):
        self.rows.append({
            "link": link_name, "t_send": t_send, "t_r": t_r, "ext": b.ext, "asyn": b.asyn,
            "tx_pr": b.tx_pr, "tx_net": b.tx_net, "dm": b.dm, "queue": b.queue,
        })
