"""FSO / RF link budgets, fading samplers, Shannon rates, and the
decode-and-forward rate split between the optical feeder and the RF clusters.

dB convention: the link-budget formulas carry a 1/2 factor that turns a
power-dB sum into an amplitude-dB value, so linear amplitude = 10**(dB/10)
and the SNR expressions square the amplitude.
"""

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FsoLinkParams:
    g_tx_db: float = 120.0       # transmit antenna gain
    g_rx_db: float = 120.0       # receive antenna gain
    free_space_loss_db: float = 210.0
    atmospheric_loss_db: float = 5.0
    lens_loss_db: float = 5.0
    system_margin_db: float = 3.0
    power_w: float = 1.0
    oe_efficiency: float = 0.5   # optical-to-electrical conversion, (0, 1]
    n_apertures: int = 4
    noise_w: float = 1e-7
    bandwidth_hz: float = 1e9
    gg_alpha: float = 4.2        # Gamma-Gamma shape (large-scale)
    gg_beta: float = 1.4         # Gamma-Gamma shape (small-scale)

    def __post_init__(self):
        if self.power_w <= 0 or self.bandwidth_hz <= 0 or self.noise_w <= 0:
            raise ValueError("FSO power, bandwidth and noise must be positive")
        if not 0.0 < self.oe_efficiency <= 1.0:
            raise ValueError("oe_efficiency must lie in (0, 1]")
        if self.n_apertures < 1:
            raise ValueError("need at least one receive aperture")
        if self.gg_alpha <= 0 or self.gg_beta <= 0:
            raise ValueError("Gamma-Gamma shapes must be positive")


@dataclass(frozen=True)
class RfLinkParams:
    g_tx_db: float = 10.0        # HAP transmit antenna gain
    g_rx_db: float = 5.0         # ground receive antenna gain
    path_loss_exp: float = 2.0
    lambda_m: float = 0.1        # carrier wavelength used in the path-loss term
    bandwidth_hz: float = 2e7
    power_w: float = 1.0
    n_subcarriers: int = 64
    noise_psd: float = 1e-15     # W/Hz
    nakagami_m: float = 3.0
    nakagami_omega: float = 1.0

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.power_w <= 0 or self.noise_psd <= 0:
            raise ValueError("RF bandwidth, power and noise PSD must be positive")
        if self.n_subcarriers < 1:
            raise ValueError("need at least one subcarrier")
        if self.nakagami_m < 0.5:
            raise ValueError(f"Nakagami m must be >= 0.5, got {self.nakagami_m}")
        if self.nakagami_omega <= 0:
            raise ValueError("Nakagami omega must be positive")


@dataclass(frozen=True)
class RateSplit:
    r_total: float                 # bit/s
    per_cluster: np.ndarray        # bit/s, length N_C
    fso_bottleneck: bool


def db_to_amplitude(db: float) -> float:
    return 10.0 ** (db / 10.0)


def sample_gamma_gamma(alpha: float, beta: float, rng, size=None):
    """Unit-mean Gamma-Gamma scintillation sample(s): product of two
    independent unit-mean Gamma variables."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("Gamma-Gamma shapes must be positive")
    x = rng.gamma(shape=alpha, scale=1.0 / alpha, size=size)
    y = rng.gamma(shape=beta, scale=1.0 / beta, size=size)
    return x * y


def sample_nakagami(m: float, omega: float, rng, size=None):
    """Nakagami-m amplitude sample(s) with E[amplitude^2] = omega."""
    if m < 0.5:
        raise ValueError(f"Nakagami m must be >= 0.5, got {m}")
    if omega <= 0:
        raise ValueError("omega must be positive")
    g = rng.gamma(shape=m, scale=omega / m, size=size)
    return np.sqrt(g)


def fso_link_gain_db(p: FsoLinkParams) -> float:
    return 0.5 * (p.g_tx_db + p.g_rx_db - p.free_space_loss_db
                  - p.atmospheric_loss_db - p.lens_loss_db - p.system_margin_db)


def fso_snr(p: FsoLinkParams, fades) -> float:
    """Equal-gain-combined SNR at the HAP for one slot's aperture fades."""
    fades = np.asarray(fades, dtype=float)
    if np.any(fades < 0):
        raise ValueError("fades must be nonnegative")
    h_egc = float(np.sum(db_to_amplitude(fso_link_gain_db(p)) * fades))
    mean_snr = p.power_w * p.oe_efficiency ** 2 / (p.n_apertures * p.noise_w)
    return mean_snr * h_egc ** 2


def fso_rate(bandwidth_hz: float, snr: float) -> float:
    if snr < 0:
        raise ValueError("SNR must be nonnegative")
    return bandwidth_hz * math.log2(1.0 + snr)


def rf_gain_db(p: RfLinkParams, d: float) -> float:
    """Amplitude-dB path gain of the HAP-to-user link at distance d."""
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    return p.g_tx_db + p.g_rx_db + 0.5 * (
        20.0 * math.log10(p.lambda_m)
        - 10.0 * p.path_loss_exp * math.log10(d)
        - 20.0 * math.log10(4.0 * math.pi))


def rf_rate(n_i: int, p: RfLinkParams, h: float) -> float:
    """Rate of one cluster given its subcarrier count and linear channel
    amplitude; linear in n_i."""
    if not 0 <= n_i <= p.n_subcarriers:
        raise ValueError(f"subcarrier count {n_i} outside [0, {p.n_subcarriers}]")
    sub_bw = p.bandwidth_hz / p.n_subcarriers
    snr = p.power_w * h * h / (sub_bw * p.noise_psd)
    return n_i * sub_bw * math.log2(1.0 + snr)


def effective_rates(r_fso: float, raw) -> RateSplit:
    """Decode-and-forward split: raw cluster rates pass through unchanged
    unless their sum exceeds the feeder rate, in which case the feeder
    capacity is shared proportionally."""
    raw = np.asarray(raw, dtype=float)
    if r_fso < 0 or np.any(raw < 0):
        raise ValueError("rates must be nonnegative")
    total = float(raw.sum())
    if total == 0.0:
        return RateSplit(r_total=0.0, per_cluster=np.zeros_like(raw),
                         fso_bottleneck=False)
    if total <= r_fso:
        return RateSplit(r_total=total, per_cluster=raw.copy(),
                         fso_bottleneck=False)
    return RateSplit(r_total=r_fso, per_cluster=raw / total * r_fso,
                     fso_bottleneck=True)
