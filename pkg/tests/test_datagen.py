import numpy as np
import pytest

from trafficrecon import ConfigError, FleetConfig
from trafficrecon.datagen import (DensityProfile, discretize_positions,
                                  generate_dataset, load_dataset, save_dataset,
                                  scenario_from_spec, shock_scenario,
                                  sinusoidal_scenario, validate_alpha_assumption)


class TestDiscretizePositions:
    def test_constant_profile_gives_uniform_spacing(self):
        profile = DensityProfile.from_callable(lambda x: np.ones_like(x), 0.0, 1.0)
        cfg = FleetConfig(N=100, L=profile.mass, T=0.1, n=100)
        pos = discretize_positions(profile, cfg)
        assert np.allclose(pos, np.arange(101) / 100.0, atol=1e-9)

    def test_shock_profile_has_piecewise_uniform_spacing(self):
        sc = shock_scenario(N=100, T=0.1)
        pos = discretize_positions(sc.profile, sc.fleet)
        gaps = np.diff(pos)
        l_car = sc.fleet.car_length
        # strictly left of the jump the spacing is L/(0.4 N), right of it L/(0.9 N)
        left = gaps[pos[1:] <= 0.5 - 1e-9]
        right = gaps[pos[:-1] >= 0.5 + 1e-9]
        assert np.allclose(left, l_car / 0.4, atol=1e-9)
        assert np.allclose(right, l_car / 0.9, atol=1e-9)

    def test_sinusoidal_matches_dense_table_oracle(self):
        sc = sinusoidal_scenario(N=200, T=0.1)
        pos = discretize_positions(sc.profile, sc.fleet)
        # oracle: dense cumulative table with 1e6 points, linear-interp inverse
        xs = np.linspace(0.0, 1.0, 1_000_001)
        ys = 0.6 + 0.3 * np.sin(2 * np.pi * 3 * xs)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs))))
        targets = sc.fleet.L / sc.fleet.N * np.arange(sc.fleet.N + 1)
        oracle = np.interp(targets, cum, xs)
        assert np.max(np.abs(pos - oracle)) < 1e-8

    def test_insufficient_mass_rejected(self):
        profile = DensityProfile.from_callable(lambda x: np.full_like(x, 0.5), 0.0, 1.0)
        cfg = FleetConfig(N=10, L=0.6, T=0.1, n=10)  # profile mass is only 0.5
        with pytest.raises(ConfigError):
            discretize_positions(profile, cfg)


class TestGenerateDataset:
    def test_paper_scale_counts(self):
        ds = generate_dataset(sinusoidal_scenario(N=2000, T=0.1), train_stride=10)
        assert ds.n_train_probes == 201
        assert ds.fleet.n == 200
        assert ds.n_test == 50

    def test_ground_truth_alpha_partitions_fleet(self):
        ds = generate_dataset(sinusoidal_scenario(N=437, T=0.1), train_stride=10)
        assert ds.ground_truth_alpha.sum() == ds.fleet.N
        assert np.all(ds.ground_truth_alpha >= 1)

    def test_observations_subsample_full_trajectory(self):
        ds = generate_dataset(sinusoidal_scenario(N=150, T=0.1), train_stride=10,
                              keep_full=True)
        final = ds.full_trajectories.final_positions()
        assert np.array_equal(ds.train_obs.x_final, final[ds.train_indices])
        assert np.array_equal(ds.test_final, final[ds.test_indices])

    def test_train_test_disjoint_and_interleaved(self):
        ds = generate_dataset(shock_scenario(N=300, T=0.1), train_stride=10)
        assert not set(ds.train_indices) & set(ds.test_indices)
        for t in ds.test_indices:
            left = ds.train_indices[ds.train_indices < t].max()
            right = ds.train_indices[ds.train_indices > t].min()
            assert left < t < right

    def test_segment_mass_matches_alpha_budget(self):
        sc = sinusoidal_scenario(N=400, T=0.1)
        ds = generate_dataset(sc, train_stride=10)
        unit = sc.fleet.L / sc.fleet.N
        seg_mass = np.diff(sc.profile.cumulative(ds.train_obs.x_init))
        assert np.all(np.abs(seg_mass - ds.ground_truth_alpha * unit) <= unit + 1e-9)

    def test_stride_must_be_at_least_two(self):
        with pytest.raises(ConfigError):
            generate_dataset(sinusoidal_scenario(N=100, T=0.1), train_stride=1)

    def test_wasserstein_discretization_refines_with_fleet_size(self):
        from trafficrecon.densityfield import PiecewiseDensity, wasserstein_L1
        for make in (sinusoidal_scenario, shock_scenario):
            dists = []
            for N in (200, 400, 800):
                sc = make(N=N, T=0.1)
                pos = discretize_positions(sc.profile, sc.fleet)
                idx = np.arange(0, N + 1, 10)
                alpha = np.diff(idx).astype(float)
                field = PiecewiseDensity(
                    edges=pos[idx],
                    values=alpha * sc.fleet.L / (N * np.diff(pos[idx])))
                dists.append(wasserstein_L1(field, sc.profile.to_piecewise(10_000)))
            assert dists[2] < dists[1] < dists[0]


class TestAlphaAssumption:
    def test_paper_scale_counts_pass(self):
        cfg = FleetConfig(N=2000, L=0.6, T=0.1, n=200)
        report = validate_alpha_assumption(np.full(200, 10.0), cfg)
        assert report.ratio == pytest.approx(10 * np.log(2000) / 2000, rel=1e-12)
        assert report.ratio == pytest.approx(0.038, abs=2e-3)
        assert report.passed

    def test_linear_growth_fails(self):
        cfg = FleetConfig(N=100, L=1.0, T=0.1, n=2)
        report = validate_alpha_assumption(np.array([50.0, 50.0]), cfg)
        assert report.ratio == pytest.approx(2.30, abs=0.01)
        assert not report.passed

    def test_minimal_counts_always_pass(self):
        for N in (2, 10, 1000):
            cfg = FleetConfig(N=N, L=1.0, T=0.1, n=N)
            assert validate_alpha_assumption(np.ones(N), cfg).passed


class TestSerialization:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(shock_scenario(N=200, T=0.1), train_stride=10)
        save_dataset(ds, tmp_path / "data")
        loaded = load_dataset(tmp_path / "data")
        assert np.array_equal(loaded.train_obs.x_init, ds.train_obs.x_init)
        assert np.array_equal(loaded.train_obs.x_final, ds.train_obs.x_final)
        assert np.array_equal(loaded.test_init, ds.test_init)
        assert np.array_equal(loaded.ground_truth_alpha, ds.ground_truth_alpha)
        assert loaded.fleet == ds.fleet
        assert loaded.scenario_spec == ds.scenario_spec

    def test_scenario_rebuild(self):
        sc = sinusoidal_scenario(N=300, T=0.2, mean=0.5, amplitude=0.2, waves=2)
        rebuilt = scenario_from_spec(sc.describe())
        assert rebuilt.fleet == sc.fleet
        xs = np.linspace(0.0, 1.0, 101)
        assert np.allclose(rebuilt.profile(xs), sc.profile(xs))


class TestScenarioValidation:
    def test_profile_must_stay_in_unit_interval(self):
        with pytest.raises(ConfigError):
            sinusoidal_scenario(N=100, T=0.1, mean=0.8, amplitude=0.3)
        with pytest.raises(ConfigError):
            sinusoidal_scenario(N=100, T=0.1, mean=0.3, amplitude=0.3)
        with pytest.raises(ConfigError):
            shock_scenario(N=100, T=0.1, jump=1.5)
