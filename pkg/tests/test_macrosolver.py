import numpy as np
import pytest

from trafficrecon import ConfigError, DomainError, greenshields
from trafficrecon.macrosolver import godunov_flux, godunov_solve, max_wave_speed

V = greenshields()


class TestGodunovFlux:
    def test_constant_state(self):
        assert godunov_flux(0.4, 0.4, V) == pytest.approx(0.24)

    def test_vacuum_jam_riemann_problem(self):
        assert godunov_flux(0.0, 1.0, V) == 0.0

    def test_rarefaction_through_sonic_point(self):
        assert godunov_flux(1.0, 0.0, V) == pytest.approx(0.25)

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            godunov_flux(-0.1, 0.5, V)
        with pytest.raises(DomainError):
            godunov_flux(0.5, 1.1, V)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(5)
        rl = rng.random(50)
        rr = rng.random(50)
        batch = godunov_flux(rl, rr, V)
        assert np.allclose(batch, [godunov_flux(a, b, V) for a, b in zip(rl, rr)])

    def test_wave_speed_bound_greenshields(self):
        assert max_wave_speed(V) == pytest.approx(1.0)


class TestGodunovSolve:
    def test_constant_profile_is_exact(self):
        grid = godunov_solve(np.full(50, 0.6), 0.0, 1.0, 0.3, V)
        assert np.allclose(grid.cell_averages, 0.6, atol=1e-14)

    def test_mass_balance_residual(self):
        edges = np.linspace(0.0, 1.0, 201)
        c = 0.5 * (edges[:-1] + edges[1:])
        init = 0.5 + 0.3 * np.sin(2 * np.pi * c)
        grid = godunov_solve(init, 0.0, 1.0, 0.2, V)
        assert grid.mass_residual < 1e-12

    def test_discrete_maximum_principle(self):
        edges = np.linspace(0.0, 1.0, 301)
        c = 0.5 * (edges[:-1] + edges[1:])
        init = 0.6 + 0.3 * np.sin(6 * np.pi * c)
        grid = godunov_solve(init, 0.0, 1.0, 0.3, V)
        assert grid.cell_averages.min() >= init.min() - 1e-12
        assert grid.cell_averages.max() <= init.max() + 1e-12

    def test_shock_speed_matches_rankine_hugoniot(self):
        # 0.4 / 0.9 jump: s = (f(0.9) - f(0.4)) / 0.5 = -0.3
        m = 800
        edges = np.linspace(-0.5, 0.5, m + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        grid = godunov_solve(np.where(centers < 0.0, 0.4, 0.9), -0.5, 0.5, 0.2, V)
        locs = []
        for row in grid.cell_averages:
            j = int(np.argmax(row >= 0.65))
            x = centers[j - 1] + (0.65 - row[j - 1]) / (row[j] - row[j - 1]) \
                * (centers[j] - centers[j - 1])
            locs.append(x)
        speed = np.polyfit(grid.times, np.array(locs), 1)[0]
        assert abs(speed - (-0.3)) / 0.3 < 0.02

    def test_first_order_convergence(self):
        def solve(m, mref=2048):
            e = np.linspace(0.0, 1.0, m + 1)
            c = 0.5 * (e[:-1] + e[1:])
            return godunov_solve(0.5 + 0.3 * np.sin(2 * np.pi * c), 0.0, 1.0, 0.15, V)

        ref = solve(2048).cell_averages[-1]

        def l1_error(m):
            coarse = solve(m).cell_averages[-1]
            ref_down = ref.reshape(m, 2048 // m).mean(axis=1)
            return np.sum(np.abs(coarse - ref_down)) / m

        ratio = l1_error(128) / l1_error(256)
        assert 1.6 <= ratio <= 2.4

    def test_cfl_validation(self):
        with pytest.raises(ConfigError):
            godunov_solve(np.full(10, 0.5), 0.0, 1.0, 0.1, V, cfl=1.5)
        with pytest.raises(ConfigError):
            godunov_solve(np.full(10, 0.5), 1.0, 0.0, 0.1, V)
        with pytest.raises(DomainError):
            godunov_solve(np.full(10, 1.5), 0.0, 1.0, 0.1, V)

    def test_exports(self, tmp_path):
        grid = godunov_solve(np.full(10, 0.5), 0.0, 1.0, 0.05, V)
        grid.write_csv(tmp_path / "g.csv", time_stride=2)
        grid.write_grid_json(tmp_path / "g.json")
        header = (tmp_path / "g.csv").read_text().splitlines()[0]
        assert header == "t,x,rho"
