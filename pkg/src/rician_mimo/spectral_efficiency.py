"""Closed-form effective SINRs and spectral efficiencies for MR processing.

The engine computes, per estimator kind, a full table of the three moments
that the use-and-then-forget bound needs: E{v_a^H h_a}, E{||v_a||^2} and
E{|v_a^H h_b|^2} for every ordered UE pair (a, b), where v_a is the
(unnormalized) estimate of UE a's channel at a's serving BS. The UL SINR of
UE u reads row u of the table; the DL SINR of UE u reads column u with each
row normalized by that transmitter's expected estimate energy. Second
moments are split into a non-coherent part (valid for any interferer) and a
coherent excess that only pilot sharers contribute.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .estimators import EstimatorKind, PilotContext, build_pilot_contexts
from .geometry import NetworkRealization

REAL_RESIDUE_RTOL = 1e-9

UPLINK = "ul"
DOWNLINK = "dl"


def se_from_sinr(sinr: float, prelog: float) -> float:
    """Spectral efficiency in bit/s/Hz from an effective SINR and prelog."""
    return prelog * math.log2(1.0 + sinr)


@dataclass
class SinrBreakdown:
    """Effective SINR of one UE with its interference decomposition.

    All terms live on the scale of the classic normalized form: the
    denominator is sum_b power_b*noncoherent_b + sum_{sharers} power_b*
    coherent_b - power_u*self_term + noise. Entries are power-free; the
    composition multiplies in the transmit powers.
    """

    ue: int
    kind: EstimatorKind
    direction: str
    signal: float
    noncoherent: np.ndarray          # (U,) xi terms, includes the UE itself
    coherent: dict[int, float]       # Gamma per pilot sharer (self excluded)
    self_term: float                 # nu
    noise: float
    sinr: float
    mean_gain: float                 # |E{v^H h}|^2 / E{||v||^2}
    flags: tuple[str, ...] = ()

    def recompose(self, powers: np.ndarray) -> float:
        """Re-assemble the SINR from the stored terms (identity check)."""
        denom = float(np.dot(powers, self.noncoherent))
        denom += sum(powers[b] * g for b, g in self.coherent.items())
        denom -= powers[self.ue] * self.self_term
        denom += self.noise
        return self.signal / denom if denom > 0 else 0.0


@dataclass
class SeReport:
    """Per-UE spectral efficiencies for one estimator kind."""

    kind: EstimatorKind
    prelog_ul: float
    prelog_dl: float
    ul_sinr: np.ndarray | None = None
    dl_sinr: np.ndarray | None = None
    ul_se: np.ndarray | None = None
    dl_se: np.ndarray | None = None

    def sum_se(self, direction: str) -> float:
        se = self.ul_se if direction == UPLINK else self.dl_se
        return float(np.sum(se)) if se is not None else 0.0


@dataclass
class MomentTable:
    """UatF moments for every ordered (estimating UE, channel UE) pair."""

    kind: EstimatorKind
    mean: np.ndarray          # (U,) complex E{v_a^H h_a}
    norm_sq: np.ndarray       # (U,) float  E{||v_a||^2}
    noncoherent: np.ndarray   # (U, U) float, rows are estimating UEs
    coherent: np.ndarray      # (U, U) float, zero unless same pilot
    valid: np.ndarray         # (U,) bool, False when v_a is undefined
    flags: dict[int, str] = field(default_factory=dict)


def _real(values, what: str):
    values = np.asarray(values)
    if np.iscomplexobj(values):
        scale = np.abs(values)
        bad = np.abs(values.imag) > REAL_RESIDUE_RTOL * np.maximum(scale, 1e-300)
        if np.any(bad & (scale > 0)):
            worst = np.max(np.abs(values.imag) / np.maximum(scale, 1e-300))
            raise FloatingPointError(
                f"{what}: imaginary residue {worst:.2e} exceeds tolerance"
            )
        return values.real
    return values


class DropEvaluator:
    """Closed-form SINR evaluation for one network drop.

    Precomputes pilot operators once and caches one moment table per
    estimator kind; UL and DL readings share the table.
    """

    def __init__(self, network: NetworkRealization, config: ExperimentConfig):
        if network.channel_stats is None:
            raise ValueError("network realization has no channel statistics")
        if network.channel_stats.num_antennas != config.M:
            raise ValueError(
                f"channel statistics built for M={network.channel_stats.num_antennas} "
                f"but config.M={config.M}"
            )
        self.network = network
        self.config = config
        self.stats = network.channel_stats
        self.U = network.num_ues
        self.M = config.M
        self.tau_p = config.tau_p
        serving = sorted(set(network.serving_bs.tolist())) if self.U else []
        self.contexts = build_pilot_contexts(network, config, bs_indices=serving)
        self._tables: dict[EstimatorKind, MomentTable] = {}
        self._bs_cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    # ------------------------------------------------------------------
    # cached per-BS arrays

    def _bs_arrays(self, j: int):
        """Contiguous (U,M,M) covariances, (U,M) means and (U,M) diagonals."""
        if j not in self._bs_cache:
            cov = np.ascontiguousarray(self.stats.cov[j])
            mean = np.ascontiguousarray(self.stats.mean[j])
            diag = np.ascontiguousarray(np.diagonal(cov, axis1=1, axis2=2).real)
            self._bs_cache[j] = (cov, mean, diag)
        return self._bs_cache[j]

    def _context(self, j: int, t: int) -> PilotContext:
        try:
            return self.contexts[(j, t)]
        except KeyError:
            raise ValueError(f"no pilot context for BS {j}, pilot {t}") from None

    # ------------------------------------------------------------------
    # moment tables

    def moments(self, kind: EstimatorKind) -> MomentTable:
        kind = EstimatorKind(kind)
        if kind not in self._tables:
            builder = {
                EstimatorKind.MMSE: self._moments_mmse,
                EstimatorKind.EWMMSE: self._moments_ewmmse,
                EstimatorKind.LS: self._moments_ls,
                EstimatorKind.MO: self._moments_mo,
            }[kind]
            self._tables[kind] = builder()
        return self._tables[kind]

    def _empty_table(self, kind) -> MomentTable:
        u = self.U
        return MomentTable(
            kind=kind,
            mean=np.zeros(u, dtype=complex),
            norm_sq=np.zeros(u),
            noncoherent=np.zeros((u, u)),
            coherent=np.zeros((u, u)),
            valid=np.ones(u, dtype=bool),
        )

    def _moments_mmse(self) -> MomentTable:
        net, tau_p = self.network, self.tau_p
        table = self._empty_table(EstimatorKind.MMSE)
        for a in range(self.U):
            j = int(net.serving_bs[a])
            ctx = self._context(j, int(net.pilot_index[a]))
            cov, mean, _ = self._bs_arrays(j)
            p_a = float(net.ul_powers[a])
            r_a = cov[a]
            h_a = mean[a]
            v_a = ctx.psi @ r_a                       # Psi R_a
            t_a = r_a @ v_a                           # R_a Psi R_a
            tr_rr = float(_real(np.sum(v_a * r_a.T), "tr(R Psi R)"))
            norm_a = p_a * tau_p * tr_rr + float(np.vdot(h_a, h_a).real)
            table.mean[a] = norm_a
            table.norm_sq[a] = norm_a

            flat = cov.reshape(self.U, -1)
            tr_bt = _real(flat @ t_a.T.reshape(-1), "tr(R_b T_a)")
            qf_t = _real(
                np.einsum("bm,bm->b", mean.conj() @ t_a, mean), "hbar_b^H T_a hbar_b"
            )
            qf_r = _real(
                np.einsum("bmn,n->bm", cov, h_a) @ h_a.conj(), "hbar_a^H R_b hbar_a"
            )
            inner = mean @ h_a.conj()                 # h_a^H h_b for every b
            table.noncoherent[a] = (
                p_a * tau_p * tr_bt + p_a * tau_p * qf_t + qf_r + np.abs(inner) ** 2
            )
            sharers = ctx.members
            tv = flat[sharers] @ v_a.T.reshape(-1)    # tr(R_b Psi R_a) per sharer
            p_b = net.ul_powers[sharers]
            cross = 2.0 * np.sqrt(p_a * p_b) * tau_p * (tv * inner[sharers].conj()).real
            table.coherent[a, sharers] = p_a * p_b * tau_p**2 * np.abs(tv) ** 2 + cross
        return table

    def _moments_ewmmse(self) -> MomentTable:
        net, tau_p = self.network, self.tau_p
        table = self._empty_table(EstimatorKind.EWMMSE)
        for a in range(self.U):
            j = int(net.serving_bs[a])
            ctx = self._context(j, int(net.pilot_index[a]))
            cov, mean, diag = self._bs_arrays(j)
            p_a = float(net.ul_powers[a])
            h_a = mean[a]
            dl_a = diag[a] * ctx.lam                  # D_a Lambda_a diagonal
            sigma_a = p_a * tau_p * (dl_a[:, None] * ctx.sum_cov * dl_a[None, :])
            tr_dld = float(np.sum(diag[a] * dl_a))    # tr(D_a Lambda_a D_a)
            hh = float(np.vdot(h_a, h_a).real)
            table.mean[a] = p_a * tau_p * tr_dld + hh
            table.norm_sq[a] = float(np.trace(sigma_a).real) + hh

            flat = cov.reshape(self.U, -1)
            tr_bs = _real(flat @ sigma_a.T.reshape(-1), "tr(R_b Sigma_a)")
            qf_r = _real(
                np.einsum("bmn,n->bm", cov, h_a) @ h_a.conj(), "hbar_a^H R_b hbar_a"
            )
            qf_s = _real(
                np.einsum("bm,bm->b", mean.conj() @ sigma_a, mean),
                "hbar_b^H Sigma_a hbar_b",
            )
            inner = mean @ h_a.conj()
            table.noncoherent[a] = tr_bs + qf_r + qf_s + np.abs(inner) ** 2
            sharers = ctx.members
            trd = diag[sharers] @ (ctx.lam * diag[a])  # tr(D_b Lambda_a D_a), real
            p_b = net.ul_powers[sharers]
            table.coherent[a, sharers] = (
                p_a * p_b * tau_p**2 * trd**2
                + 2.0 * np.sqrt(p_a * p_b) * tau_p * trd * inner[sharers].real
            )
        return table

    def _moments_ls(self) -> MomentTable:
        net, tau_p = self.network, self.tau_p
        table = self._empty_table(EstimatorKind.LS)
        for a in range(self.U):
            p_a = float(net.ul_powers[a])
            if p_a <= 0.0:
                table.valid[a] = False
                table.flags[a] = "zero-power"
                continue
            j = int(net.serving_bs[a])
            ctx = self._context(j, int(net.pilot_index[a]))
            cov, mean, _ = self._bs_arrays(j)
            h_a = mean[a]
            s, y_bar = ctx.sum_cov, ctx.y_bar
            sharers = ctx.members
            p_sh = net.ul_powers[sharers]

            inner_sh = mean[sharers].conj() @ h_a     # h_b^H h_a over sharers
            table.mean[a] = float(np.trace(cov[a]).real) + np.sum(
                np.sqrt(p_sh / p_a) * inner_sh
            )
            table.norm_sq[a] = (
                tau_p * float(np.trace(s).real) + float(np.vdot(y_bar, y_bar).real)
            ) / (p_a * tau_p**2)

            scale = 1.0 / (p_a * tau_p**2)
            flat = cov.reshape(self.U, -1)
            tr_bs = _real(flat @ s.T.reshape(-1), "tr(R_b S)")
            qf_y = _real(
                np.einsum("bmn,n->bm", cov, y_bar) @ y_bar.conj(), "ybar^H R_b ybar"
            )
            qf_s = _real(
                np.einsum("bm,bm->b", mean.conj() @ s, mean), "hbar_b^H S hbar_b"
            )
            y_h = mean @ y_bar.conj()                 # ybar^H h_b for every b
            table.noncoherent[a] = scale * (
                tau_p * tr_bs + qf_y + tau_p * qf_s + np.abs(y_h) ** 2
            )

            # coherent excess for sharers: exact shared-pilot moment minus the
            # independent-interferer value just stored
            for b, p_b in zip(sharers, p_sh):
                r_b, h_b = cov[b], mean[b]
                tr_rb = float(np.trace(r_b).real)
                hh_b = float(np.vdot(h_b, h_b).real)
                qf_rb = float(_real(np.vdot(h_b, r_b @ h_b), "hbar^H R hbar"))
                tr_rb2 = float(np.sum(np.abs(r_b) ** 2))   # tr(R_b^2), Hermitian
                root = np.sqrt(p_b) * tau_p
                y_r_h = complex(y_bar.conj() @ r_b @ h_b)  # ybar^H R_b hbar_b
                x_h = complex(y_h[b]) - root * hh_b        # xbar^H hbar_b
                qf_x = (
                    float(qf_y[b])
                    - 2.0 * root * y_r_h.real
                    + root**2 * qf_rb
                )
                tr_b_omega = tau_p * (float(tr_bs[b]) - root * np.sqrt(p_b) * tr_rb2)
                qf_s_omega = tau_p * (float(qf_s[b]) - root * np.sqrt(p_b) * qf_rb)
                fourth = p_b * tau_p**2 * (
                    tr_rb**2 + tr_rb2 + 2.0 * hh_b * tr_rb + 2.0 * qf_rb + hh_b**2
                )
                cross = 2.0 * root * (
                    x_h * tr_rb + (y_r_h - root * qf_rb) + x_h * hh_b
                ).real
                shared = scale * (
                    tr_b_omega + qf_x + qf_s_omega + abs(x_h) ** 2 + fourth + cross
                )
                table.coherent[a, b] = shared - table.noncoherent[a, b]
        return table

    def _moments_mo(self) -> MomentTable:
        net = self.network
        table = self._empty_table(EstimatorKind.MO)
        for a in range(self.U):
            j = int(net.serving_bs[a])
            cov, mean, _ = self._bs_arrays(j)
            h_a = mean[a]
            hh = float(np.vdot(h_a, h_a).real)
            if hh == 0.0:
                table.valid[a] = False
                table.flags[a] = "no-los-mean"
                continue
            table.mean[a] = hh
            table.norm_sq[a] = hh
            qf_r = _real(
                np.einsum("bmn,n->bm", cov, h_a) @ h_a.conj(), "hbar_a^H R_b hbar_a"
            )
            inner = mean @ h_a.conj()
            table.noncoherent[a] = qf_r + np.abs(inner) ** 2
        return table

    # ------------------------------------------------------------------
    # SINR composition

    def _compose(self, kind: EstimatorKind, direction: str) -> list[SinrBreakdown]:
        table = self.moments(kind)
        net = self.network
        if direction == UPLINK:
            powers = net.ul_powers
            noise = self.config.noise_ul_watts
        elif direction == DOWNLINK:
            powers = net.dl_powers
            noise = self.config.noise_dl_watts
        else:
            raise ValueError(f"unknown direction {direction!r}")

        out = []
        norm = table.norm_sq
        for u in range(self.U):
            flags = []
            if u in table.flags:
                flags.append(table.flags[u])
            if not table.valid[u] or powers[u] <= 0.0 or norm[u] <= 0.0:
                if powers[u] <= 0.0:
                    flags.append("zero-power")
                out.append(
                    SinrBreakdown(
                        ue=u, kind=kind, direction=direction, signal=0.0,
                        noncoherent=np.zeros(self.U), coherent={},
                        self_term=0.0, noise=noise, sinr=0.0, mean_gain=0.0,
                        flags=tuple(dict.fromkeys(flags)),
                    )
                )
                continue

            gain = abs(table.mean[u]) ** 2 / norm[u]
            if direction == UPLINK:
                xi = table.noncoherent[u] / norm[u]
                co = table.coherent[u] / norm[u]
                co_self = co[u]
            else:
                mask = table.valid & (norm > 0.0)
                safe_norm = np.where(mask, norm, 1.0)
                xi = np.where(mask, table.noncoherent[:, u] / safe_norm, 0.0)
                co = np.where(mask, table.coherent[:, u] / safe_norm, 0.0)
                co_self = co[u]
                if not np.all(mask):
                    flags.append("interferers-skipped")
            sharers = net.pilot_sharers(u)
            others = sharers[sharers != u]
            nu = gain - co_self
            denom = float(np.dot(powers, xi))
            denom += float(np.dot(powers[others], co[others]))
            denom -= powers[u] * nu
            denom += noise
            if denom <= 0.0:
                raise FloatingPointError(
                    f"non-positive SINR denominator for UE {u} ({kind.value}, {direction})"
                )
            signal = powers[u] * gain
            out.append(
                SinrBreakdown(
                    ue=u, kind=kind, direction=direction, signal=signal,
                    noncoherent=xi, coherent={int(b): float(co[b]) for b in others},
                    self_term=nu, noise=noise, sinr=signal / denom, mean_gain=gain,
                    flags=tuple(dict.fromkeys(flags)),
                )
            )
        return out

    def ul_sinr(self, kind) -> list[SinrBreakdown]:
        return self._compose(EstimatorKind(kind), UPLINK)

    def dl_sinr(self, kind) -> list[SinrBreakdown]:
        return self._compose(EstimatorKind(kind), DOWNLINK)

    def se_report(self, kind, direction: str = "both") -> SeReport:
        kind = EstimatorKind(kind)
        report = SeReport(
            kind=kind,
            prelog_ul=self.config.prelog_ul,
            prelog_dl=self.config.prelog_dl,
        )
        if direction in (UPLINK, "both"):
            sinrs = np.array([b.sinr for b in self.ul_sinr(kind)])
            report.ul_sinr = sinrs
            report.ul_se = np.array(
                [se_from_sinr(s, self.config.prelog_ul) for s in sinrs]
            )
        if direction in (DOWNLINK, "both"):
            sinrs = np.array([b.sinr for b in self.dl_sinr(kind)])
            report.dl_sinr = sinrs
            report.dl_se = np.array(
                [se_from_sinr(s, self.config.prelog_dl) for s in sinrs]
            )
        return report


def ul_sinr_closed_form(kind, network: NetworkRealization, config: ExperimentConfig) -> list[SinrBreakdown]:
    return DropEvaluator(network, config).ul_sinr(kind)


def dl_sinr_closed_form(kind, network: NetworkRealization, config: ExperimentConfig) -> list[SinrBreakdown]:
    return DropEvaluator(network, config).dl_sinr(kind)
