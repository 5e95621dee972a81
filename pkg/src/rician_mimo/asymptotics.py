"""Large-antenna behavior: spatial orthogonality diagnostics and the
asymptotic SINR expressions each estimator converges to.

The limit expressions are themselves M-dependent ratios; their difference
from the finite-M SINR vanishes as M grows, so the verdict reports both the
expression value at the supplied M and the signed gap (no bound is claimed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .estimators import EstimatorKind
from .geometry import NetworkRealization
from .spectral_efficiency import DropEvaluator

DEFAULT_ORTHOGONALITY_THRESHOLD = 1e-2


def g1(phi1: float, phi2: float, m: int, antenna_spacing: float) -> float:
    """Normalized ULA inner-product kernel between two angles of arrival.

    Equals m when the angle sines coincide; |g1| <= m always.
    """
    delta = math.sin(phi1) - math.sin(phi2)
    if abs(delta) < 1e-14:
        return float(m)
    x = math.pi * antenna_spacing * delta
    return math.sin(m * x) / math.sin(x)


def orthogonality_metric(ra: np.ndarray, rb: np.ndarray) -> float:
    """(1/M) tr(Ra Rb); tends to zero for asymptotically orthogonal supports."""
    if ra.shape != rb.shape:
        raise ValueError(f"dimension mismatch: {ra.shape} vs {rb.shape}")
    return float(np.trace(ra @ rb).real) / ra.shape[0]


def normalized_orthogonality(ra: np.ndarray, rb: np.ndarray) -> float:
    """Scale-free variant M tr(Ra Rb) / (tr Ra tr Rb); equals 1 for
    identical scaled-identity covariances."""
    m = ra.shape[0]
    denom = float(np.trace(ra).real * np.trace(rb).real)
    if denom == 0.0:
        return 0.0
    return m * float(np.trace(ra @ rb).real) / denom


def is_asymptotically_orthogonal(
    metric_at_m: float, metric_at_larger_m: float, ratio_threshold: float = 0.5
) -> bool:
    """Two-point slope test: orthogonal if the metric decays fast enough
    between two antenna counts (intended spacing: 4x)."""
    if metric_at_m <= 0.0:
        return True
    return metric_at_larger_m / metric_at_m < ratio_threshold


@dataclass
class AsymptoticVerdict:
    ue: int
    kind: EstimatorKind
    direction: str
    unbounded: bool
    limit: float | None                  # None when unbounded
    orthogonality_metrics: dict[int, float]
    finite_m_sinr: float
    gap: float | None


def assumption_diagnostics(network: NetworkRealization) -> dict:
    """Report the quantities whose boundedness the asymptotic analysis
    assumes: spectral norms, per-antenna LoS energies, and cross inner
    products of LoS means seen by each serving BS."""
    stats = network.channel_stats
    m = stats.num_antennas
    max_norm = 0.0
    max_mean = 0.0
    max_cross = 0.0
    for j in sorted(set(network.serving_bs.tolist())):
        for u in range(network.num_ues):
            eigs = np.linalg.eigvalsh(stats.cov[j, u])
            max_norm = max(max_norm, float(eigs[-1]))
            max_mean = max(max_mean, float(np.vdot(stats.mean[j, u], stats.mean[j, u]).real) / m)
        means = stats.mean[j]
        gram = np.abs(means.conj() @ means.T) / m
        np.fill_diagonal(gram, 0.0)
        if gram.size:
            max_cross = max(max_cross, float(gram.max()))
    return {
        "max_spectral_norm": max_norm,
        "max_mean_energy_per_antenna": max_mean,
        "max_cross_inner_per_antenna": max_cross,
    }


def asymptotic_sinr(
    kind,
    direction: str,
    network: NetworkRealization,
    config: ExperimentConfig,
    ue: int,
    orthogonality_threshold: float = DEFAULT_ORTHOGONALITY_THRESHOLD,
) -> AsymptoticVerdict:
    """Evaluate the large-M behavior for one UE.

    MMSE/EW-MMSE are flagged unbounded when every contaminating pair is
    spatially orthogonal (scale-free metric below the threshold); LS is never
    unbounded under contamination (with no sharers its limit expression
    degenerates to +inf); MO is unbounded exactly when the served UE has an
    LoS path. `orthogonality_metrics` reports the raw (1/M) tr(Ra Rb) values.
    """
    kind = EstimatorKind(kind)
    if direction not in ("ul", "dl"):
        raise ValueError(f"unknown direction {direction!r}")
    evaluator = DropEvaluator(network, config)
    stats = network.channel_stats
    tau_p = config.tau_p
    p = network.ul_powers
    rho = network.dl_powers
    j = int(network.serving_bs[ue])
    sharers = [int(b) for b in network.pilot_sharers(ue) if b != ue]
    breakdown = (evaluator.ul_sinr(kind) if direction == "ul" else evaluator.dl_sinr(kind))[ue]
    finite_sinr = breakdown.sinr

    diag = kind is EstimatorKind.EWMMSE
    metrics = {}
    normalized = {}
    for b in sharers:
        ra, rb = stats.cov[j, ue], stats.cov[j, b]
        if diag:
            da = np.diag(ra).real
            db = np.diag(rb).real
            metrics[b] = float(np.dot(da, db)) / config.M
            denom = float(da.sum() * db.sum())
            normalized[b] = config.M * float(np.dot(da, db)) / denom if denom else 0.0
        else:
            metrics[b] = orthogonality_metric(ra, rb)
            normalized[b] = normalized_orthogonality(ra, rb)

    def verdict(unbounded, limit, gap):
        return AsymptoticVerdict(
            ue=ue, kind=kind, direction=direction, unbounded=unbounded,
            limit=limit, orthogonality_metrics=metrics,
            finite_m_sinr=finite_sinr, gap=gap,
        )

    if kind is EstimatorKind.MO:
        has_los = bool(stats.has_los[j, ue]) and float(np.vdot(stats.mean[j, ue], stats.mean[j, ue]).real) > 0
        if has_los:
            return verdict(True, None, None)
        return verdict(False, 0.0, abs(finite_sinr))

    if kind in (EstimatorKind.MMSE, EstimatorKind.EWMMSE):
        orthogonal = all(normalized[b] < orthogonality_threshold for b in sharers)
        if orthogonal:
            return verdict(True, None, None)

    # helper quantities at one BS for one target UE
    def mmse_parts(bs, target):
        ctx = evaluator._context(bs, int(network.pilot_index[target]))
        r = stats.cov[bs, target]
        v = ctx.psi @ r
        tr_rr = float(np.sum(v * r.T).real)
        hh = float(np.vdot(stats.mean[bs, target], stats.mean[bs, target]).real)
        return ctx, v, tr_rr, hh

    def ew_parts(bs, target):
        ctx = evaluator._context(bs, int(network.pilot_index[target]))
        d = np.diag(stats.cov[bs, target]).real
        dl = d * ctx.lam
        tr_dld = float(np.sum(d * dl))
        sigma_tr = float(
            p[target] * tau_p * np.sum(dl**2 * np.diag(ctx.sum_cov).real)
        )
        hh = float(np.vdot(stats.mean[bs, target], stats.mean[bs, target]).real)
        return ctx, d, dl, tr_dld, sigma_tr, hh

    if kind is EstimatorKind.MMSE:
        if direction == "ul":
            ctx, v_a, tr_a, hh_a = mmse_parts(j, ue)
            scale = p[ue] * tau_p * tr_a + hh_a
            num = p[ue] * scale
            den = 0.0
            for b in sharers:
                tv = complex(np.sum(v_a * stats.cov[j, b].T))
                den += p[b] ** 2 * (p[ue] * tau_p**2 * abs(tv) ** 2) / scale
        else:
            ctx, v_a, tr_a, hh_a = mmse_parts(j, ue)
            num = rho[ue] * (p[ue] * tau_p * tr_a + hh_a)
            den = 0.0
            for b in sharers:
                jb = int(network.serving_bs[b])
                ctx_b, v_b, tr_b, hh_b = mmse_parts(jb, b)
                tv = complex(np.sum(v_b * stats.cov[jb, ue].T))  # tr(R_a Psi_b R_b) at BS s(b)
                den += rho[b] * (p[ue] * p[b] * tau_p**2 * abs(tv) ** 2) / (
                    p[b] * tau_p * tr_b + hh_b
                )
        limit = num / den if den > 0 else math.inf
        gap = abs(finite_sinr - limit) if math.isfinite(limit) else None
        return verdict(False, limit, gap)

    if kind is EstimatorKind.EWMMSE:
        ctx, d_a, dl_a, tr_a, sig_a, hh_a = ew_parts(j, ue)
        if direction == "ul":
            scale = p[ue] * tau_p * tr_a + hh_a
            num = p[ue] * scale
            den = 0.0
            for b in sharers:
                trd = float(np.diag(stats.cov[j, b]).real @ dl_a)
                den += p[b] * (p[ue] * p[b] * tau_p**2 * trd**2) / scale
        else:
            num = rho[ue] * (p[ue] * tau_p * tr_a + hh_a) ** 2 / (sig_a + hh_a)
            den = 0.0
            for b in sharers:
                jb = int(network.serving_bs[b])
                ctx_b, d_b, dl_b, tr_b, sig_b, hh_b = ew_parts(jb, b)
                trd = float(np.diag(stats.cov[jb, ue]).real @ dl_b)
                den += rho[b] * (p[ue] * p[b] * tau_p**2 * trd**2) / (sig_b + hh_b)
        limit = num / den if den > 0 else math.inf
        gap = abs(finite_sinr - limit) if math.isfinite(limit) else None
        return verdict(False, limit, gap)

    # LS
    def ls_scale(bs, target):
        ctx = evaluator._context(bs, int(network.pilot_index[target]))
        tr_r = float(np.trace(stats.cov[bs, target]).real)
        hh = float(np.vdot(stats.mean[bs, target], stats.mean[bs, target]).real)
        return ctx, tr_r, hh

    if direction == "ul":
        ctx, tr_a, hh_a = ls_scale(j, ue)
        num = p[ue] ** 2 * tau_p**2 * (tr_a + hh_a)
        inner_sum = tr_a
        for c in network.pilot_sharers(ue):
            cross = abs(complex(stats.mean[j, c].conj() @ stats.mean[j, ue]))
            inner_sum += math.sqrt(p[ue] / p[c]) * cross if p[c] > 0 else 0.0
        den = 0.0
        for b in sharers:
            tr_b = float(np.trace(stats.cov[j, b]).real)
            hh_b = float(np.vdot(stats.mean[j, b], stats.mean[j, b]).real)
            den += (p[b] ** 2 * tau_p**2 * (tr_b + hh_b) ** 2) / inner_sum
    else:
        ctx, tr_a, hh_a = ls_scale(j, ue)
        y_bar = ctx.y_bar
        own = tau_p * float(np.trace(ctx.sum_cov).real) + float(np.vdot(y_bar, y_bar).real)
        num = rho[ue] * p[ue] * tau_p**2 * (tr_a + hh_a) ** 2 / own
        den = 0.0
        for b in sharers:
            jb = int(network.serving_bs[b])
            ctx_b = evaluator._context(jb, int(network.pilot_index[b]))
            tr_ab = float(np.trace(stats.cov[jb, ue]).real)
            hh_ab = float(np.vdot(stats.mean[jb, ue], stats.mean[jb, ue]).real)
            den_b = tau_p * float(np.trace(ctx_b.sum_cov).real) + float(
                np.vdot(ctx_b.y_bar, ctx_b.y_bar).real
            )
            den += rho[b] * p[ue] * tau_p**2 * (tr_ab + hh_ab) ** 2 / den_b
    limit = num / den if den > 0 else math.inf
    gap = abs(finite_sinr - limit) if math.isfinite(limit) else None
    return verdict(False, limit, gap)
