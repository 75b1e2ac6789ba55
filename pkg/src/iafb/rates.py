"""Rates, interference decomposition and degrees-of-freedom estimation.

Beamformers are designed against the reconstructed channel but evaluated
here against the TRUE tone-domain channel; the gap between the two is
exactly what limited feedback costs. Per stream m of user i:

* signal  = P/(K d_i) |hbar_ii^H b_ii^{m,m}|^2
* I1      = same-transmitter interference from the user's other streams
* I2      = interference from all other transmitters
* rate    = (1/N) sum_m log2(1 + signal / (I1 + I2 + noise))

with every transmitter spending P/(K d_k) per stream. Degrees of freedom
are estimated as the least-squares slope of a quantity against log2(P)
over a finite power grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import BeamformerSet
from .channel import ToneChannel

__all__ = [
    "RateReport",
    "DofEstimate",
    "BoundednessReport",
    "coupling_matrices",
    "interference_terms",
    "achievable_rates",
    "dof_fit",
    "interference_boundedness",
    "rate_csv_rows",
]

CSV_COLUMNS = (
    "seed", "K", "R", "L", "n", "P_log2", "alpha", "user", "rate", "I1", "I2", "signal",
)

# Interference below this absolute level is numerical residue of the
# alignment solver, not a physical quantity; slope fits clamp up to it.
NUMERICAL_FLOOR = 1e-20


@dataclass(frozen=True)
class RateReport:
    """Per-stream SINR decomposition and per-user rates at one power level."""

    P: float
    noise_power: float
    N: int
    signal: tuple
    interference_own: tuple
    interference_cross: tuple
    rates: np.ndarray
    rate_sum: float

    def max_interference(self, i: int) -> float:
        """Worst-stream total interference power at receiver i."""
        return float(np.max(self.interference_own[i] + self.interference_cross[i]))


@dataclass(frozen=True)
class DofEstimate:
    """Slope of a rate-like quantity against log2(P) plus fit diagnostics."""

    slope: float
    intercept: float
    fit_quality: float
    points: tuple


@dataclass(frozen=True)
class BoundednessReport:
    """Log-log slope of an interference sweep and the bounded-or-not verdict."""

    slope: float
    slope_max: float
    passed: bool
    points: tuple


def coupling_matrices(tone: ToneChannel, bf: BeamformerSet):
    """Filtered true-channel gains G[i][k] = U_i^H Hbar_ik V_k.

    These are power-independent; rate evaluation across a power sweep can
    reuse one set of couplings per (channel, beamformer) pair.
    """
    K, R, N = tone.K, tone.R, tone.N
    p = bf.params
    if (p.K, p.R, p.N) != (K, R, N):
        raise ValueError(
            f"beamformers sized (K={p.K}, R={p.R}, N={p.N}) do not match the "
            f"channel (K={K}, R={R}, N={N})"
        )
    scale = 1.0 / math.sqrt(N)
    G = []
    for i in range(K):
        row = []
        for k in range(K):
            tones_conj = np.conj(tone.tones[i, k]) * scale
            img = np.einsum("nr,nd->nrd", tones_conj, bf.v[k]).reshape(R * N, -1)
            row.append(bf.u[i].conj().T @ img)
        G.append(row)
    return G


def _terms_from_couplings(G, d, K: int, P: float):
    signal, own, cross = [], [], []
    for i in range(K):
        gain_ii = np.abs(G[i][i]) ** 2
        scale_i = P / (K * d[i])
        sig = scale_i * np.diag(gain_ii)
        i1 = scale_i * (gain_ii.sum(axis=1) - np.diag(gain_ii))
        i2 = np.zeros(d[i])
        for k in range(K):
            if k == i:
                continue
            i2 += (P / (K * d[k])) * (np.abs(G[i][k]) ** 2).sum(axis=1)
        signal.append(sig)
        own.append(i1)
        cross.append(i2)
    return signal, own, cross


def interference_terms(tone: ToneChannel, bf: BeamformerSet, P: float):
    """Per-stream (signal, I1, I2) triples against the true channel.

    Returns three lists indexed by user, each holding a length-d_i array.
    """
    if P <= 0:
        raise ValueError("power must be positive")
    G = coupling_matrices(tone, bf)
    return _terms_from_couplings(G, bf.params.d, tone.K, P)


def achievable_rates(
    tone: ToneChannel, bf: BeamformerSet, P: float, noise_power: float | None = None
) -> RateReport:
    """Treat all interference as noise and evaluate the per-user rates."""
    noise = tone.noise_power if noise_power is None else noise_power
    if noise <= 0:
        raise ValueError("noise power must be positive")
    signal, own, cross = interference_terms(tone, bf, P)
    N = bf.params.N
    rates = np.array(
        [
            float(np.sum(np.log2(1.0 + s / (i1 + i2 + noise)))) / N
            for s, i1, i2 in zip(signal, own, cross)
        ]
    )
    return RateReport(
        P=P,
        noise_power=noise,
        N=N,
        signal=tuple(signal),
        interference_own=tuple(own),
        interference_cross=tuple(cross),
        rates=rates,
        rate_sum=float(rates.sum()),
    )


def dof_fit(points) -> DofEstimate:
    """Least-squares slope of value against log2(P)."""
    pts = [(float(p), float(v)) for p, v in points]
    if len({p for p, _ in pts}) < 3:
        raise ValueError("need at least three distinct power levels for a slope fit")
    x = np.log2([p for p, _ in pts])
    y = np.asarray([v for _, v in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    if ss_tot <= 1e-30:
        quality = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        quality = max(0.0, 1.0 - ss_res / ss_tot)
    return DofEstimate(
        slope=float(slope),
        intercept=float(intercept),
        fit_quality=float(min(quality, 1.0)),
        points=tuple(zip(x.tolist(), y.tolist())),
    )


def interference_boundedness(sweep, slope_max: float = 0.1, floor: float = NUMERICAL_FLOOR) -> BoundednessReport:
    """Fit the log-log slope of interference against power.

    Bounded interference shows slope ~= 0; values below `floor` are
    clamped up so that solver residue (which scales like P times a tiny
    squared alignment error) cannot masquerade as growth.
    """
    pts = [(float(p), max(float(v), floor)) for p, v in sweep]
    if len({p for p, _ in pts}) < 3:
        raise ValueError("need at least three distinct power levels")
    x = np.log2([p for p, _ in pts])
    y = np.log2([v for _, v in pts])
    slope = float(np.polyfit(x, y, 1)[0])
    return BoundednessReport(
        slope=slope,
        slope_max=slope_max,
        passed=bool(slope <= slope_max),
        points=tuple(zip(x.tolist(), y.tolist())),
    )


def rate_csv_rows(
    report: RateReport, *, seed, K, R, L, n, alpha
) -> list[dict]:
    """Flatten a RateReport into per-user CSV rows.

    Power columns aggregate over streams: I1/I2 report the worst stream,
    signal the weakest stream (the quantities the slope experiments gate on).
    """
    rows = []
    for i in range(K):
        rows.append(
            {
                "seed": seed,
                "K": K,
                "R": R,
                "L": L,
                "n": n,
                "P_log2": math.log2(report.P),
                "alpha": alpha,
                "user": i,
                "rate": float(report.rates[i]),
                "I1": float(np.max(report.interference_own[i])),
                "I2": float(np.max(report.interference_cross[i])),
                "signal": float(np.min(report.signal[i])),
            }
        )
    return rows
