"""Channel estimators and their exact first/second-order statistics.

Pilot sequences are never materialized: despreading is modeled directly on
the sufficient statistic y, whose noise term is CN(0, noise*tau_p*I).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Sequence

import numpy as np
import scipy.linalg

from .channel import ChannelStats
from .config import ExperimentConfig, IllPosedModelError

if TYPE_CHECKING:
    from .geometry import NetworkRealization

logger = logging.getLogger(__name__)

CONDITION_WARN_THRESHOLD = 1e12


class EstimatorKind(str, Enum):
    MMSE = "mmse"
    EWMMSE = "ew-mmse"
    LS = "ls"
    MO = "mo"

    @classmethod
    def parse(cls, name: str) -> "EstimatorKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown estimator {name!r}; expected one of "
                f"{[k.value for k in cls]}"
            ) from None


@dataclass(frozen=True)
class PilotObservation:
    """Despread pilot signal at one BS for one pilot sequence."""

    y_p: np.ndarray    # (M,) complex
    y_bar: np.ndarray  # (M,) deterministic mean of y_p


def pilot_mean(sharers: Sequence[tuple[float, ChannelStats]], tau_p: int) -> np.ndarray:
    """Deterministic mean of the despread pilot signal, sum over sharers."""
    if not sharers:
        raise ValueError("need at least one pilot sharer to size the mean")
    acc = np.zeros_like(sharers[0][1].mean)
    for power, stats in sharers:
        acc = acc + np.sqrt(power) * tau_p * stats.mean
    return acc


def pilot_sum_covariance(
    sharers: Sequence[tuple[float, ChannelStats]], tau_p: int, noise: float, m: int
) -> np.ndarray:
    """S = sum_p p*tau_p*R + noise*I; equals Cov{y}/tau_p and inv(Psi)."""
    s = noise * np.eye(m, dtype=complex)
    for power, stats in sharers:
        s = s + power * tau_p * stats.cov
    return 0.5 * (s + s.conj().T)


def psi_matrix(
    sharers: Sequence[tuple[float, ChannelStats]],
    tau_p: int,
    noise: float,
    m: int | None = None,
) -> np.ndarray:
    """Inverse of the (tau_p-scaled) despread pilot covariance.

    `m` is only needed when `sharers` is empty (pure-noise observation).
    """
    if m is None:
        if not sharers:
            raise ValueError("dimension m required when there are no sharers")
        m = sharers[0][1].cov.shape[0]
    s = pilot_sum_covariance(sharers, tau_p, noise, m)
    return invert_pilot_covariance(s)


def invert_pilot_covariance(s: np.ndarray) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(s, lower=True)
    except np.linalg.LinAlgError:
        raise IllPosedModelError(
            "pilot covariance is singular; add noise or positive-definite "
            "covariance contributions"
        ) from None
    # cheap two-sided condition estimate from the Cholesky diagonal
    ldiag = np.abs(np.diag(factor[0]))
    cond = (ldiag.max() / ldiag.min()) ** 2
    if cond > CONDITION_WARN_THRESHOLD:
        logger.warning("pilot covariance condition number >= %.3e", cond)
    identity = np.eye(s.shape[0], dtype=complex)
    psi = scipy.linalg.cho_solve(factor, identity)
    return 0.5 * (psi + psi.conj().T)


@dataclass
class EstimatorStats:
    """Exact moments of a channel estimate and its error for one pair.

    `gain` is the linear map applied to the centered observation
    (full matrix for MMSE, diagonal vector for EW-MMSE, scalar for LS).
    """

    kind: EstimatorKind
    est_mean: np.ndarray
    est_cov: np.ndarray
    err_mean: np.ndarray
    err_cov: np.ndarray
    cross_cov: np.ndarray        # E{(est - E est)(err - E err)^H}
    psi: np.ndarray | None = None
    gain: np.ndarray | float | None = field(default=None, repr=False)
    # EW-MMSE extras (diagonals stored as vectors)
    ew_diag: np.ndarray | None = None
    ew_lambda: np.ndarray | None = None

    @property
    def mse(self) -> float:
        return float(np.trace(self.err_cov).real + np.vdot(self.err_mean, self.err_mean).real)

    @property
    def expected_norm_sq(self) -> float:
        """E{||estimate||^2} = tr(est_cov) + ||est_mean||^2."""
        return float(np.trace(self.est_cov).real + np.vdot(self.est_mean, self.est_mean).real)


def mmse_stats(
    power: float,
    stats: ChannelStats,
    sharers: Sequence[tuple[float, ChannelStats]],
    tau_p: int,
    noise: float,
) -> EstimatorStats:
    """Bayesian MMSE estimator moments; estimate and error are independent."""
    m = stats.cov.shape[0]
    psi = psi_matrix(sharers, tau_p, noise, m)
    r = stats.cov
    c = r - power * tau_p * (r @ psi @ r)
    c = 0.5 * (c + c.conj().T)
    return EstimatorStats(
        kind=EstimatorKind.MMSE,
        est_mean=stats.mean.copy(),
        est_cov=0.5 * ((r - c) + (r - c).conj().T),
        err_mean=np.zeros(m, dtype=complex),
        err_cov=c,
        cross_cov=np.zeros((m, m), dtype=complex),
        psi=psi,
        gain=np.sqrt(power) * (r @ psi),
    )


def ewmmse_stats(
    power: float,
    stats: ChannelStats,
    sharers: Sequence[tuple[float, ChannelStats]],
    tau_p: int,
    noise: float,
) -> EstimatorStats:
    """Element-wise MMSE: uses only covariance diagonals; estimate and error
    are correlated unless every sharer covariance is diagonal."""
    m = stats.cov.shape[0]
    s = pilot_sum_covariance(sharers, tau_p, noise, m)
    psi = invert_pilot_covariance(s)
    d = np.diag(stats.cov).real.astype(float)
    lam = 1.0 / np.diag(s).real.astype(float)
    dl = d * lam
    r = stats.cov
    sigma = power * tau_p * (dl[:, None] * s * dl[None, :])
    sigma = 0.5 * (sigma + sigma.conj().T)
    r_ld = power * tau_p * (r * dl[None, :])          # p tau_p R Lambda D
    sigma_err = r - r_ld - r_ld.conj().T + sigma
    return EstimatorStats(
        kind=EstimatorKind.EWMMSE,
        est_mean=stats.mean.copy(),
        est_cov=sigma,
        err_mean=np.zeros(m, dtype=complex),
        err_cov=0.5 * (sigma_err + sigma_err.conj().T),
        cross_cov=power * tau_p * (dl[:, None] * r) - sigma,
        psi=psi,
        gain=np.sqrt(power) * dl,
        ew_diag=d,
        ew_lambda=lam,
    )


def ls_stats(
    power: float,
    stats: ChannelStats,
    sharers: Sequence[tuple[float, ChannelStats]],
    tau_p: int,
    noise: float,
) -> EstimatorStats:
    """Least-squares estimator moments; the error has a non-zero mean that
    carries the pilot contamination bias."""
    if power <= 0 or tau_p <= 0:
        raise ValueError("LS estimation requires positive pilot power and length")
    m = stats.cov.shape[0]
    s = pilot_sum_covariance(sharers, tau_p, noise, m)
    psi = invert_pilot_covariance(s)
    y_bar = pilot_mean(sharers, tau_p)
    scale = 1.0 / (np.sqrt(power) * tau_p)
    est_cov = s / (power * tau_p)
    return EstimatorStats(
        kind=EstimatorKind.LS,
        est_mean=scale * y_bar,
        est_cov=est_cov,
        err_mean=stats.mean - scale * y_bar,
        err_cov=0.5 * ((est_cov - stats.cov) + (est_cov - stats.cov).conj().T),
        cross_cov=stats.cov - est_cov,
        psi=psi,
        gain=scale,
    )


def mo_stats(stats: ChannelStats) -> EstimatorStats:
    """Mean-only 'estimator': the deterministic LoS mean, no pilots needed."""
    m = stats.cov.shape[0]
    zeros = np.zeros((m, m), dtype=complex)
    return EstimatorStats(
        kind=EstimatorKind.MO,
        est_mean=stats.mean.copy(),
        est_cov=zeros,
        err_mean=np.zeros(m, dtype=complex),
        err_cov=stats.cov.copy(),
        cross_cov=zeros.copy(),
        gain=0.0,
    )


def estimator_stats(
    kind: EstimatorKind,
    power: float,
    stats: ChannelStats,
    sharers: Sequence[tuple[float, ChannelStats]],
    tau_p: int,
    noise: float,
) -> EstimatorStats:
    kind = EstimatorKind(kind)
    if kind is EstimatorKind.MMSE:
        return mmse_stats(power, stats, sharers, tau_p, noise)
    if kind is EstimatorKind.EWMMSE:
        return ewmmse_stats(power, stats, sharers, tau_p, noise)
    if kind is EstimatorKind.LS:
        return ls_stats(power, stats, sharers, tau_p, noise)
    return mo_stats(stats)


def mmse_estimate(obs: PilotObservation, est: EstimatorStats) -> np.ndarray:
    return est.est_mean + est.gain @ (obs.y_p - obs.y_bar)


def ewmmse_estimate(obs: PilotObservation, est: EstimatorStats) -> np.ndarray:
    return est.est_mean + est.gain * (obs.y_p - obs.y_bar)


def ls_estimate(obs: PilotObservation, tau_p: int, power: float) -> np.ndarray:
    return obs.y_p / (np.sqrt(power) * tau_p)


def mo_estimate(stats: ChannelStats) -> np.ndarray:
    return stats.mean.copy()


@dataclass
class PilotContext:
    """Per (BS, pilot) quantities shared by every sharer of that pilot.

    The inverse `psi` is materialized lazily: the LS and EW-MMSE paths only
    consume `sum_cov` and its diagonal.
    """

    sum_cov: np.ndarray       # S = sum p tau_p R + noise I  (= inv(Psi))
    y_bar: np.ndarray
    lam: np.ndarray           # elementwise inverse of diag(S)
    members: np.ndarray       # UE indices using this pilot
    _psi: np.ndarray | None = field(default=None, repr=False)

    @property
    def psi(self) -> np.ndarray:
        if self._psi is None:
            self._psi = invert_pilot_covariance(self.sum_cov)
        return self._psi


def build_pilot_contexts(
    network: "NetworkRealization",
    config: ExperimentConfig,
    bs_indices: Sequence[int] | None = None,
) -> dict[tuple[int, int], PilotContext]:
    """Pilot-processing operators for each (BS, pilot) combination.

    Restricting `bs_indices` skips BSs whose operators are not needed
    (e.g. BSs serving no UE).
    """
    stats = network.channel_stats
    if stats is None:
        raise ValueError("network has no channel statistics attached")
    noise = config.noise_ul_watts
    tau_p = config.tau_p
    groups = network.pilot_groups
    if bs_indices is None:
        bs_indices = range(network.num_bs)
    contexts: dict[tuple[int, int], PilotContext] = {}
    for j in bs_indices:
        for t, members in enumerate(groups):
            s = noise * np.eye(stats.num_antennas, dtype=complex)
            y_bar = np.zeros(stats.num_antennas, dtype=complex)
            for u in members:
                s = s + network.ul_powers[u] * tau_p * stats.cov[j, u]
                y_bar = y_bar + np.sqrt(network.ul_powers[u]) * tau_p * stats.mean[j, u]
            s = 0.5 * (s + s.conj().T)
            contexts[(j, t)] = PilotContext(
                sum_cov=s,
                y_bar=y_bar,
                lam=1.0 / np.diag(s).real,
                members=np.asarray(members, dtype=int),
            )
    return contexts
