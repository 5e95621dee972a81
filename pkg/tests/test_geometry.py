import itertools

import numpy as np
import pytest

from rician_mimo import (
    ConfigError,
    DegenerateGeometryError,
    ExperimentConfig,
    assign_pilots,
    drop_network,
    ul_power_control,
    wraparound_displacement,
    wraparound_distance,
)
from rician_mimo.geometry import bs_grid_positions, drop_ue_positions, reuse_group


def nine_image_distance(a, b, side):
    """Brute-force oracle: minimum distance over the nine toroidal images."""
    best = np.inf
    for dx, dy in itertools.product((-side, 0.0, side), repeat=2):
        image = np.asarray(b, dtype=float) + np.array([dx, dy])
        best = min(best, float(np.linalg.norm(image - np.asarray(a, dtype=float))))
    return best


SMALL = dict(num_cells_per_side=2, K=2, M=4, tau_p=2, tau_u=99, tau_d=99, seed=3)


class TestWraparound:
    def test_identity(self):
        assert np.allclose(wraparound_displacement((0, 0), (0, 0), 1000.0), [0, 0])
        assert wraparound_distance((0, 0), (0, 0), 1000.0) == 0.0

    def test_wrap_image_is_shorter(self):
        d = wraparound_displacement((10, 10), (990, 10), 1000.0)
        assert np.allclose(d, [-20.0, 0.0])
        assert wraparound_distance((10, 10), (990, 10), 1000.0) == pytest.approx(20.0)

    def test_diagonal_against_hand_value(self):
        dist = wraparound_distance((0, 0), (500, 500), 1000.0)
        assert dist == pytest.approx(500.0 * np.sqrt(2.0))
        assert dist == pytest.approx(nine_image_distance((0, 0), (500, 500), 1000.0))

    def test_matches_nine_image_oracle(self):
        rng = np.random.default_rng(0)
        side = 770.0
        for _ in range(200):
            a = rng.uniform(0, side, 2)
            b = rng.uniform(0, side, 2)
            assert wraparound_distance(a, b, side) == pytest.approx(
                nine_image_distance(a, b, side), rel=1e-12
            )

    def test_symmetry_triangle_and_bound(self):
        rng = np.random.default_rng(1)
        side = 1000.0
        pts = rng.uniform(0, side, (30, 2))
        for a, b, c in itertools.combinations(range(30), 3):
            dab = wraparound_distance(pts[a], pts[b], side)
            dba = wraparound_distance(pts[b], pts[a], side)
            assert dab == pytest.approx(dba, rel=1e-12)
            assert dab <= side / np.sqrt(2.0) + 1e-9
            dac = wraparound_distance(pts[a], pts[c], side)
            dcb = wraparound_distance(pts[c], pts[b], side)
            assert dab <= dac + dcb + 1e-9


class TestDrop:
    def test_full_grid_drop(self):
        cfg = ExperimentConfig()  # 16 cells of 250 m, K=10
        net = drop_network(cfg)
        assert net.num_ues == 160
        side = cfg.cell_side
        for u in range(net.num_ues):
            cell = net.ue_cell[u]
            row, col = divmod(cell, cfg.num_cells_per_side)
            x, y = net.ue_positions[u]
            assert col * side <= x <= (col + 1) * side
            assert row * side <= y <= (row + 1) * side
            home_bs = net.bs_positions[cell]
            assert np.linalg.norm(net.ue_positions[u] - home_bs) >= cfg.min_bs_distance

    def test_empty_network(self):
        cfg = ExperimentConfig(**{**SMALL, "K": 0, "tau_p": 0, "tau_u": 100, "tau_d": 100})
        net = drop_network(cfg)
        assert net.num_ues == 0
        assert net.serving_bs.shape == (0,)

    def test_determinism(self):
        cfg = ExperimentConfig(**SMALL)
        a = drop_network(cfg)
        b = drop_network(cfg)
        assert np.array_equal(a.ue_positions, b.ue_positions)
        assert np.array_equal(a.serving_bs, b.serving_bs)
        assert np.array_equal(a.pilot_index, b.pilot_index)
        assert np.array_equal(a.ul_powers, b.ul_powers)
        assert np.array_equal(a.channel_stats.mean, b.channel_stats.mean)

    def test_serving_maximizes_gain(self):
        net = drop_network(ExperimentConfig(**SMALL))
        beta = net.channel_stats.beta
        assert np.array_equal(net.serving_bs, np.argmax(beta, axis=0))

    def test_degenerate_min_distance(self):
        cfg = ExperimentConfig(**{**SMALL, "cell_side": 10.0, "min_bs_distance": 35.0})
        with pytest.raises(DegenerateGeometryError):
            drop_ue_positions(cfg, np.random.default_rng(0))

    def test_bs_grid(self):
        cfg = ExperimentConfig(**SMALL)
        pos = bs_grid_positions(cfg)
        assert pos.shape == (4, 2)
        assert np.allclose(pos[0], [125.0, 125.0])
        assert np.allclose(pos[3], [375.0, 375.0])


class TestPilots:
    def test_reuse_one_shares_across_all_cells(self):
        cfg = ExperimentConfig()  # f=1, K=10, 16 cells
        net = drop_network(cfg)
        for u in range(cfg.K):
            sharers = net.pilot_sharers(u)
            assert len(sharers) == 16
            assert u in sharers

    def test_full_orthogonality(self):
        cfg = ExperimentConfig(
            num_cells_per_side=4, K=1, tau_p=16, reuse_factor=16,
            tau_u=92, tau_d=92, M=4,
        )
        net = drop_network(cfg)
        for u in range(net.num_ues):
            assert len(net.pilot_sharers(u)) == 1

    def test_checkerboard(self):
        cfg = ExperimentConfig(
            num_cells_per_side=4, K=10, tau_p=20, reuse_factor=2,
            tau_u=90, tau_d=90, M=4,
        )
        net = drop_network(cfg)
        # 8 cells share each pilot on the 4x4 grid
        for u in range(net.num_ues):
            assert len(net.pilot_sharers(u)) == 8
        # no two adjacent cells (torus, 4-neighborhood) share a reuse group
        n = cfg.num_cells_per_side
        for cell in range(cfg.num_cells):
            row, col = divmod(cell, n)
            for dr, dc in ((0, 1), (1, 0)):
                neighbor = ((row + dr) % n) * n + (col + dc) % n
                assert reuse_group(cfg, cell) != reuse_group(cfg, neighbor)

    def test_partition_is_symmetric(self):
        cfg = ExperimentConfig(
            num_cells_per_side=4, K=2, tau_p=8, reuse_factor=4,
            tau_u=96, tau_d=96, M=4,
        )
        net = drop_network(cfg)
        for u in range(net.num_ues):
            for b in net.pilot_sharers(u):
                assert u in net.pilot_sharers(b)

    def test_unsupported_reuse_factor(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(
                num_cells_per_side=4, K=2, tau_p=6, reuse_factor=3,
                tau_u=97, tau_d=97,
            )
        with pytest.raises(ConfigError):
            # checkerboard needs an even grid side
            ExperimentConfig(
                num_cells_per_side=3, K=2, tau_p=4, reuse_factor=2,
                tau_u=98, tau_d=98,
            )

    def test_assign_pilots_direct(self):
        cfg = ExperimentConfig(**SMALL)
        pilots = assign_pilots(cfg, np.array([0, 0, 1, 1, 2, 2, 3, 3]),
                               np.array([0, 1, 0, 1, 0, 1, 0, 1]))
        assert np.array_equal(pilots, [0, 1, 0, 1, 0, 1, 0, 1])


class TestPowerControl:
    def test_equal_gains_all_full_power(self):
        p = ul_power_control(np.array([2e-9, 2e-9, 2e-9]), 0.01, 10.0)
        assert np.allclose(p, 0.01)

    def test_backoff_branch(self):
        # gain ratio 100 with delta 10 gives a 10x backoff
        p = ul_power_control(np.array([1e-9, 1e-7]), 0.01, 10.0)
        assert p[0] == pytest.approx(0.01)
        assert p[1] == pytest.approx(0.001)

    def test_single_ue_cell(self):
        assert ul_power_control(np.array([5e-11]), 0.01, 10.0)[0] == pytest.approx(0.01)

    def test_empty_cell(self):
        assert ul_power_control(np.zeros(0), 0.01, 10.0).size == 0

    def test_output_range_and_full_power_set(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            betas = 10 ** rng.uniform(-12, -7, size=9)
            p = ul_power_control(betas, 0.01, 10.0)
            assert np.all(p > 0) and np.all(p <= 0.01 + 1e-18)
            at_max = np.isclose(p, 0.01)
            expected = betas <= 10.0 * betas.min() * (1 + 1e-12)
            assert np.array_equal(at_max, expected)

    def test_network_powers_grouped_by_serving_bs(self):
        cfg = ExperimentConfig(**SMALL)
        net = drop_network(cfg)
        beta = net.channel_stats.beta
        for j in range(net.num_bs):
            members = np.flatnonzero(net.serving_bs == j)
            if members.size == 0:
                continue
            expected = ul_power_control(beta[j, members], cfg.p_max_watts, cfg.delta_linear)
            assert np.allclose(net.ul_powers[members], expected)
        assert np.array_equal(net.dl_powers, net.ul_powers)
