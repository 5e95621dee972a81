"""Monte Carlo engine: samples channels and pilot observations, estimates the
use-and-then-forget SINR moments by averaging, and provides analytic
fourth-moment identities used as test oracles.

This module deliberately shares no formula code with the closed-form engine;
agreement between the two is the package's master validation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelStats, hermitian_sqrt
from .config import ExperimentConfig
from .estimators import EstimatorKind, PilotObservation, estimator_stats
from .geometry import NetworkRealization

MIN_TRIALS = 1000
DEFAULT_TRIALS = 50_000
_BLOCK = 2000


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    trials: int


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def sample_channel(stats: ChannelStats, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw channel realizations h = mean + cov^{1/2} w."""
    root = hermitian_sqrt(stats.cov)
    if size is None:
        return stats.mean + root @ complex_normal(rng, stats.mean.shape[0])
    w = complex_normal(rng, (size, stats.mean.shape[0]))
    return stats.mean[None, :] + w @ root.T


def synthesize_pilot_observation(
    sharers: Sequence[tuple[float, np.ndarray]],
    tau_p: int,
    noise: float,
    rng: np.random.Generator,
    means: Sequence[np.ndarray] | None = None,
) -> PilotObservation:
    """Despread pilot signal for one (BS, pilot) pair.

    `sharers` holds (power, channel realization) for every UE on the pilot;
    `means` (same order) supplies the deterministic channel means so the
    observation can carry its expected value.
    """
    if not sharers:
        raise ValueError("need at least one sharer")
    m = sharers[0][1].shape[-1]
    y = np.sqrt(noise * tau_p) * complex_normal(rng, m)
    for power, h in sharers:
        y = y + np.sqrt(power) * tau_p * h
    y_bar = np.zeros(m, dtype=complex)
    if means is not None:
        for (power, _), mean in zip(sharers, means):
            y_bar = y_bar + np.sqrt(power) * tau_p * mean
    return PilotObservation(y_p=y, y_bar=y_bar)


def quad_moment_independent(x_mean, x_cov, y_mean, y_cov, b) -> float:
    """E{|x^H B y|^2} for independent complex Gaussian vectors x, y."""
    bry = b @ y_cov @ b.conj().T
    brx = b.conj().T @ x_cov @ b
    t1 = np.trace(bry @ x_cov)
    t2 = x_mean.conj() @ bry @ x_mean
    t3 = y_mean.conj() @ brx @ y_mean
    t4 = np.abs(x_mean.conj() @ b @ y_mean) ** 2
    return float((t1 + t2 + t3 + t4).real)


def quad_moment_correlated(x_mean, x_factor, y_mean, y_factor, b) -> float:
    """E{|x^H B y|^2} for x = x_factor w + x_mean, y = y_factor w + y_mean
    sharing the same standard complex Gaussian w."""
    x_cov = x_factor @ x_factor.conj().T
    y_cov = y_factor @ y_factor.conj().T
    t = np.trace(x_factor.conj().T @ b @ y_factor)
    total = np.abs(t) ** 2
    total += np.trace(b @ y_cov @ b.conj().T @ x_cov).real
    total += np.abs(x_mean.conj() @ b @ y_mean) ** 2
    total += 2.0 * (t * (y_mean.conj() @ b.conj().T @ x_mean)).real
    total += (x_mean.conj() @ b @ y_cov @ b.conj().T @ x_mean).real
    total += (y_mean.conj() @ b.conj().T @ x_cov @ b @ y_mean).real
    return float(np.real(total))


class _UeAccumulator:
    """Running sums for the delta-method standard error of one UE's SINR."""

    def __init__(self, dim: int):
        self.n = 0
        self.s1 = np.zeros(dim)
        self.s2 = np.zeros((dim, dim))

    def add(self, samples: np.ndarray):
        self.n += samples.shape[0]
        self.s1 += samples.sum(axis=0)
        self.s2 += samples.T @ samples

    def mean_and_cov(self):
        mean = self.s1 / self.n
        cov = (self.s2 - self.n * np.outer(mean, mean)) / (self.n - 1)
        return mean, cov


def _delta_sinr(mean, cov, n, own_power, powers, noise, with_norm_term):
    """SINR point estimate and delta-method standard error from moment means.

    Moment layout: [Re m1, Im m1, m2_0..m2_{U-1}, (m3)] where m3 is the
    combiner energy (uplink only; downlink precoders are unit-energy).
    """
    x, y = mean[0], mean[1]
    m2 = mean[2 : 2 + len(powers)]
    num = own_power * (x**2 + y**2)
    denom = float(np.dot(powers, m2)) - num
    if with_norm_term:
        denom += noise * mean[-1]
    else:
        denom += noise
    if denom <= 0 or num < 0:
        return 0.0, 0.0
    sinr = num / denom
    grad = np.zeros_like(mean)
    grad[0] = 2.0 * own_power * x * (denom + num) / denom**2
    grad[1] = 2.0 * own_power * y * (denom + num) / denom**2
    grad[2 : 2 + len(powers)] = -num * powers / denom**2
    if with_norm_term:
        grad[-1] = -num * noise / denom**2
    var = float(grad @ cov @ grad) / n
    return float(sinr), float(np.sqrt(max(var, 0.0)))


def mc_sinr(
    kind,
    direction: str,
    network: NetworkRealization,
    config: ExperimentConfig,
    trials: int = DEFAULT_TRIALS,
    rng: np.random.Generator | None = None,
) -> list[McEstimate]:
    """Sample-average estimate of every UE's effective SINR.

    Per trial: draw all channels, synthesize pilot observations, form the MR
    combining/precoding vectors from the requested estimator, and accumulate
    the UatF moments. Deterministic for a given generator state.
    """
    kind = EstimatorKind(kind)
    if direction not in ("ul", "dl"):
        raise ValueError(f"unknown direction {direction!r}")
    if trials < MIN_TRIALS:
        raise ValueError(f"need at least {MIN_TRIALS} trials, got {trials}")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    stats = network.channel_stats
    num_ues = network.num_ues
    if num_ues == 0:
        return []
    tau_p = config.tau_p
    noise_ul = config.noise_ul_watts
    serving_bs = sorted(set(network.serving_bs.tolist()))
    groups = network.pilot_groups

    # square-root factors for channel sampling, per (serving BS, UE)
    roots = {
        (j, u): hermitian_sqrt(stats.cov[j, u])
        for j in serving_bs
        for u in range(num_ues)
    }

    # estimator statistics per UE at its serving BS (gains + precoder norms)
    est = {}
    valid = np.ones(num_ues, dtype=bool)
    for u in range(num_ues):
        j = int(network.serving_bs[u])
        p_u = float(network.ul_powers[u])
        sharers = [
            (float(network.ul_powers[b]), stats.pair(j, b))
            for b in network.pilot_sharers(u)
        ]
        if kind is EstimatorKind.MO:
            est[u] = estimator_stats(kind, p_u, stats.pair(j, u), sharers, tau_p, noise_ul)
            if est[u].expected_norm_sq <= 0.0:
                valid[u] = False
        elif kind is EstimatorKind.LS and p_u <= 0.0:
            valid[u] = False
            est[u] = None
        else:
            est[u] = estimator_stats(kind, p_u, stats.pair(j, u), sharers, tau_p, noise_ul)

    y_bar = {}
    for j in serving_bs:
        for t, members in enumerate(groups):
            acc = np.zeros(config.M, dtype=complex)
            for u in members:
                acc += np.sqrt(network.ul_powers[u]) * tau_p * stats.mean[j, u]
            y_bar[(j, t)] = acc

    if direction == "ul":
        dim = 2 + num_ues + 1
        powers = network.ul_powers
        noise = noise_ul
    else:
        dim = 2 + num_ues
        powers = network.dl_powers
        noise = config.noise_dl_watts
        norm_consts = np.array(
            [est[u].expected_norm_sq if valid[u] else np.inf for u in range(num_ues)]
        )

    acc = [_UeAccumulator(dim) for _ in range(num_ues)]

    done = 0
    while done < trials:
        block = min(_BLOCK, trials - done)
        # channels, fixed draw order: serving BS ascending, UE ascending
        h = {}
        for j in serving_bs:
            for u in range(num_ues):
                w = complex_normal(rng, (block, config.M))
                h[(j, u)] = stats.mean[j, u][None, :] + w @ roots[(j, u)].T
        # despread observations per (BS, pilot)
        y = {}
        for j in serving_bs:
            for t, members in enumerate(groups):
                sig = np.sqrt(noise_ul * tau_p) * complex_normal(rng, (block, config.M))
                for u in members:
                    sig = sig + np.sqrt(network.ul_powers[u]) * tau_p * h[(j, u)]
                y[(j, t)] = sig
        # combining vectors (unnormalized estimates) per UE at its serving BS
        v = {}
        for u in range(num_ues):
            if not valid[u]:
                continue
            j = int(network.serving_bs[u])
            t = int(network.pilot_index[u])
            centered = y[(j, t)] - y_bar[(j, t)][None, :]
            if kind is EstimatorKind.MMSE:
                v[u] = stats.mean[j, u][None, :] + centered @ est[u].gain.T
            elif kind is EstimatorKind.EWMMSE:
                v[u] = stats.mean[j, u][None, :] + centered * est[u].gain[None, :]
            elif kind is EstimatorKind.LS:
                v[u] = y[(j, t)] * est[u].gain
            else:
                v[u] = np.broadcast_to(stats.mean[j, u], (block, config.M))

        for u in range(num_ues):
            if not valid[u]:
                continue
            j = int(network.serving_bs[u])
            samples = np.zeros((block, dim))
            if direction == "ul":
                z1 = np.einsum("bm,bm->b", v[u].conj(), h[(j, u)])
                samples[:, 0] = z1.real
                samples[:, 1] = z1.imag
                for b in range(num_ues):
                    zb = np.einsum("bm,bm->b", v[u].conj(), h[(j, b)])
                    samples[:, 2 + b] = np.abs(zb) ** 2
                samples[:, -1] = np.einsum("bm,bm->b", v[u].conj(), v[u]).real
            else:
                w_u = v[u] / np.sqrt(norm_consts[u])
                z1 = np.einsum("bm,bm->b", w_u.conj(), h[(j, u)])
                samples[:, 0] = z1.real
                samples[:, 1] = z1.imag
                for b in range(num_ues):
                    if not valid[b]:
                        continue
                    jb = int(network.serving_bs[b])
                    w_b = v[b] / np.sqrt(norm_consts[b])
                    zb = np.einsum("bm,bm->b", w_b.conj(), h[(jb, u)])
                    samples[:, 2 + b] = np.abs(zb) ** 2
            acc[u].add(samples)
        done += block

    results = []
    for u in range(num_ues):
        if not valid[u] or powers[u] <= 0.0:
            results.append(McEstimate(0.0, 0.0, trials))
            continue
        mean, cov = acc[u].mean_and_cov()
        value, stderr = _delta_sinr(
            mean, cov, trials, float(powers[u]), np.asarray(powers, dtype=float),
            noise, with_norm_term=(direction == "ul"),
        )
        results.append(McEstimate(value, stderr, trials))
    return results
