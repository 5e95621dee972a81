"""Wrap-around multi-cell layout, UE drops, pilot reuse and UL power control."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel
from .config import ConfigError, DegenerateGeometryError, ExperimentConfig

MAX_DROP_ATTEMPTS = 10**6


def wraparound_displacement(a, b, area_side: float) -> np.ndarray:
    """Minimum-norm displacement from a to b on the torus.

    Broadcasts over leading dimensions; the last axis holds (x, y).
    Equivalent to picking the closest of the nine shifted images of b.
    """
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return d - area_side * np.round(d / area_side)


def wraparound_distance(a, b, area_side: float) -> float | np.ndarray:
    return np.linalg.norm(wraparound_displacement(a, b, area_side), axis=-1)


def bs_grid_positions(config: ExperimentConfig) -> np.ndarray:
    """BS positions at the centers of the n x n cell grid, cell-index order."""
    n = config.num_cells_per_side
    side = config.cell_side
    rows, cols = np.divmod(np.arange(n * n), n)
    return np.column_stack(((cols + 0.5) * side, (rows + 0.5) * side))


def reuse_group(config: ExperimentConfig, cell: int) -> int:
    """Pilot reuse group of a cell: f=1 single group, f=2 checkerboard,
    f=4 a 2x2 tiling, f=L one group per cell."""
    f = config.reuse_factor
    n = config.num_cells_per_side
    row, col = divmod(cell, n)
    if f == 1:
        return 0
    if f == n * n:
        return cell
    if f == 2:
        return (row + col) % 2
    if f == 4:
        return 2 * (row % 2) + (col % 2)
    raise ConfigError(f"unsupported reuse_factor {f}")


def assign_pilots(config: ExperimentConfig, ue_cell: np.ndarray, ue_rank: np.ndarray) -> np.ndarray:
    """Pilot index per UE: the k-th UE of a cell in reuse group g gets g*K + k."""
    groups = np.array([reuse_group(config, c) for c in np.asarray(ue_cell, dtype=int)], dtype=int)
    pilots = groups * config.K + np.asarray(ue_rank, dtype=int)
    if pilots.size and (pilots.min() < 0 or pilots.max() >= config.tau_p):
        raise ConfigError("pilot indices exceed tau_p; check reuse_factor and K")
    return pilots


def ul_power_control(betas: np.ndarray, p_max: float, delta: float) -> np.ndarray:
    """Heuristic per-cell power policy (linear inputs).

    The weakest UE transmits p_max; stronger UEs back off so their SNR
    advantage is capped at delta.
    """
    betas = np.asarray(betas, dtype=float)
    if betas.size == 0:
        return np.zeros(0)
    if np.any(betas <= 0):
        raise ValueError("power control needs strictly positive gains")
    beta_min = betas.min()
    return p_max * np.minimum(1.0, delta * beta_min / betas)


@dataclass
class NetworkRealization:
    """One random drop: positions, serving/pilot maps and transmit powers.

    UEs are flat-indexed as u = cell*K + k; `ue_cell` and `ue_rank` recover
    the (cell, k) identity. `channel_stats` is attached by drop_network.
    """

    bs_positions: np.ndarray          # (L, 2)
    ue_positions: np.ndarray          # (U, 2)
    ue_cell: np.ndarray               # (U,)
    ue_rank: np.ndarray               # (U,) index within drop cell
    area_side: float
    bs_ue_distance: np.ndarray        # (L, U)
    bs_ue_angle: np.ndarray           # (L, U) AoA at the BS, radians
    serving_bs: np.ndarray = field(default=None)   # (U,)
    pilot_index: np.ndarray = field(default=None)  # (U,)
    ul_powers: np.ndarray = field(default=None)    # (U,) watts
    dl_powers: np.ndarray = field(default=None)    # (U,) watts
    channel_stats: "channel.DropChannelStats" = field(default=None, repr=False)

    @property
    def num_bs(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def num_ues(self) -> int:
        return self.ue_positions.shape[0]

    def pilot_sharers(self, ue: int) -> np.ndarray:
        """All UEs using the same pilot as `ue`, including `ue` itself."""
        return np.flatnonzero(self.pilot_index == self.pilot_index[ue])

    @property
    def pilot_groups(self) -> list[np.ndarray]:
        """UE sets per pilot index (may be empty for unused pilots)."""
        if self.pilot_index is None:
            raise ValueError("pilots not assigned yet")
        tau_p = int(self.pilot_index.max()) + 1 if self.pilot_index.size else 0
        return [np.flatnonzero(self.pilot_index == t) for t in range(tau_p)]


def drop_ue_positions(config: ExperimentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uniform drop of K UEs per cell, rejecting points closer than
    min_bs_distance to the cell's own BS."""
    bs_pos = bs_grid_positions(config)
    side = config.cell_side
    n = config.num_cells_per_side
    positions = np.zeros((config.num_ues, 2))
    ue_cell = np.repeat(np.arange(config.num_cells), config.K)
    ue_rank = np.tile(np.arange(config.K), config.num_cells)
    for u in range(config.num_ues):
        cell = ue_cell[u]
        row, col = divmod(cell, n)
        origin = np.array([col * side, row * side])
        for attempt in range(MAX_DROP_ATTEMPTS):
            candidate = origin + rng.uniform(0.0, side, size=2)
            if np.linalg.norm(candidate - bs_pos[cell]) >= config.min_bs_distance:
                positions[u] = candidate
                break
        else:
            raise DegenerateGeometryError(
                f"could not place UE {u} at >= {config.min_bs_distance} m "
                f"from its BS within {MAX_DROP_ATTEMPTS} attempts"
            )
    return positions, ue_cell, ue_rank


def finalize_network(
    network: NetworkRealization,
    stats: "channel.DropChannelStats",
    config: ExperimentConfig,
) -> NetworkRealization:
    """Fill in serving assignment, pilots and powers from channel gains.

    Serving BS maximizes the average gain (ties to the lowest BS index);
    power control groups UEs by serving BS; DL powers mirror UL powers.
    """
    num_ues = network.num_ues
    if num_ues:
        serving = np.argmax(stats.beta, axis=0).astype(int)
    else:
        serving = np.zeros(0, dtype=int)
    pilots = assign_pilots(config, network.ue_cell, network.ue_rank)
    powers = np.zeros(num_ues)
    for j in range(network.num_bs):
        members = np.flatnonzero(serving == j)
        if members.size:
            powers[members] = ul_power_control(
                stats.beta[j, members], config.p_max_watts, config.delta_linear
            )
    network.serving_bs = serving
    network.pilot_index = pilots
    network.ul_powers = powers
    network.dl_powers = powers.copy()
    network.channel_stats = stats
    return network


def rebuild_with_stats(
    network: NetworkRealization,
    stats: "channel.DropChannelStats",
    config: ExperimentConfig,
) -> NetworkRealization:
    """Same layout, different channel statistics (e.g. a Rayleigh variant of
    the same drop); serving and powers are re-derived from the new gains."""
    fresh = NetworkRealization(
        bs_positions=network.bs_positions,
        ue_positions=network.ue_positions,
        ue_cell=network.ue_cell,
        ue_rank=network.ue_rank,
        area_side=network.area_side,
        bs_ue_distance=network.bs_ue_distance,
        bs_ue_angle=network.bs_ue_angle,
    )
    return finalize_network(fresh, stats, config)


def drop_network(config: ExperimentConfig, rng: np.random.Generator | None = None) -> NetworkRealization:
    """Generate one complete network realization.

    Deterministic given the rng state: positions first, then the channel
    statistic draws, then serving/pilot/power assignment.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    ue_positions, ue_cell, ue_rank = drop_ue_positions(config, rng)
    bs_pos = bs_grid_positions(config)
    # displacement from each BS to each UE gives distance and nominal AoA
    disp = wraparound_displacement(
        bs_pos[:, None, :], ue_positions[None, :, :], config.area_side
    )
    network = NetworkRealization(
        bs_positions=bs_pos,
        ue_positions=ue_positions,
        ue_cell=ue_cell,
        ue_rank=ue_rank,
        area_side=config.area_side,
        bs_ue_distance=np.linalg.norm(disp, axis=-1),
        bs_ue_angle=np.arctan2(disp[..., 1], disp[..., 0]),
    )
    stats = channel.build_channel_stats(network, config, rng)
    return finalize_network(network, stats, config)
