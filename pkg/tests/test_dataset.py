import numpy as np
import pytest
import scipy.signal

import oracles
from analogcast import (
    Climatology,
    Dataset,
    LoadError,
    ScalarObservable,
    detrend_monthly,
    fill_where,
    integrated_anomaly,
    integrated_extent,
    load_dataset,
    monthly_climatology,
    monthly_trend,
    save_dataset,
    synth_modulated_field,
    synth_regime_ar,
)


def make_obs(values, start=0):
    values = np.asarray(values, dtype=float)
    return ScalarObservable(values, start + np.arange(len(values), dtype=np.int64), 1)


class TestLoadSave:
    def test_csv_small(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("month,var_1,var_2\n0,1.0,2.0\n1,3.0,4.0\n2,5.0,6.0\n")
        ds = load_dataset(path, "csv")
        assert ds.values.shape == (3, 2)
        assert list(ds.timestamps) == [0, 1, 2]
        assert ds.dt == 1

    def test_csv_round_trip(self, tmp_path):
        ds = Dataset(np.random.default_rng(0).normal(size=(6, 3)), np.arange(6), 1, "x")
        save_dataset(ds, tmp_path / "x.csv", "csv")
        back = load_dataset(tmp_path / "x.csv", "csv")
        assert np.array_equal(back.values, ds.values)
        assert np.array_equal(back.timestamps, ds.timestamps)

    def test_nonuniform_months_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("month,var_1\n0,1.0\n1,2.0\n3,3.0\n")
        with pytest.raises(LoadError, match="non-uniform"):
            load_dataset(path, "csv")

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,var_1\n0,1.0\n")
        with pytest.raises(LoadError, match="header"):
            load_dataset(path, "csv")

    def test_nan_rejected_naming_position(self, tmp_path):
        ds = Dataset(np.ones((4, 2)), np.arange(4), 1, "x")
        save_dataset(ds, tmp_path / "x.acst")
        raw = bytearray((tmp_path / "x.acst").read_bytes())
        # corrupt the value at row 2, column 1
        offset = 4 + 2 + 16 + 8 + 8 + 1 + 8 * (2 * 2 + 1)
        raw[offset : offset + 8] = np.float64(np.nan).tobytes()
        (tmp_path / "x.acst").write_bytes(bytes(raw))
        with pytest.raises(LoadError, match="row 2, column 1"):
            load_dataset(tmp_path / "x.acst")

    def test_binary_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        ds = Dataset(
            rng.normal(size=(40, 5)),
            7 + np.arange(40, dtype=np.int64),
            1,
            "field",
            cell_areas=rng.uniform(0.5, 2.0, size=5),
        )
        save_dataset(ds, tmp_path / "field.acst")
        back = load_dataset(tmp_path / "field.acst")
        assert back.values.tobytes() == ds.values.tobytes()
        assert back.cell_areas.tobytes() == ds.cell_areas.tobytes()
        assert np.array_equal(back.timestamps, ds.timestamps)
        assert back.dt == ds.dt
        assert back.variable_name == "field"

    def test_binary_declared_shape_matches_gridded_record(self, tmp_path):
        # shape declared in the header drives the load: a full-size grid
        ds = Dataset(np.zeros((4777, 6648)), np.arange(4777), 1, "sst")
        save_dataset(ds, tmp_path / "sst.acst")
        back = load_dataset(tmp_path / "sst.acst")
        assert back.values.shape == (4777, 6648)


class TestDatasetInvariants:
    def test_strictly_increasing_required(self):
        with pytest.raises(ValueError, match="non-uniform"):
            Dataset(np.ones((3, 1)), np.array([0, 2, 4]), 1, "x")

    def test_positive_areas_required(self):
        with pytest.raises(ValueError, match="positive"):
            Dataset(np.ones((2, 2)), np.arange(2), 1, "x", cell_areas=np.array([1.0, 0.0]))

    def test_calendar_months_derived(self):
        ds = Dataset(np.ones((14, 1)), 10 + np.arange(14), 1, "x")
        assert ds.calendar_month[0] == 11
        assert ds.calendar_month[2] == 1  # month index 12 wraps to January

    def test_calendar_month_consistency_checked(self):
        with pytest.raises(ValueError, match="calendar_month"):
            Dataset(np.ones((2, 1)), np.arange(2), 1, "x", calendar_month=np.array([5, 6]))

    def test_arrays_immutable_after_construction(self):
        ds = Dataset(np.ones((3, 2)), np.arange(3), 1, "x")
        with pytest.raises(ValueError):
            ds.values[0, 0] = 2.0
        with pytest.raises(ValueError):
            ds.timestamps[0] = 5


class TestClimatology:
    def test_constant_series(self):
        clim = monthly_climatology(make_obs(np.full(24, 3.25)))
        assert np.allclose(clim.monthly_mean, 3.25)

    def test_calendar_month_identity(self):
        obs = make_obs(np.zeros(24))
        obs = ScalarObservable(obs.calendar_month.astype(float), obs.timestamps, 1)
        clim = monthly_climatology(obs)
        assert np.array_equal(clim.monthly_mean, np.arange(1, 13, dtype=float))

    def test_sinusoid_against_grouping_oracle(self):
        t = np.arange(24)
        obs = make_obs(np.sin(2 * np.pi * t / 12.0) + 0.3)
        clim = monthly_climatology(obs)
        months = obs.calendar_month
        reference = [np.mean([v for v, m in zip(obs.values, months) if m == k]) for k in range(1, 13)]
        oracles.record("climatology_grouping", reference, clim.monthly_mean, 1e-12)

    def test_missing_month_listed(self):
        with pytest.raises(ValueError, match=r"\[7, 8, 9, 10, 11, 12\]"):
            monthly_climatology(make_obs(np.ones(6)))


class TestIntegratedAnomaly:
    def area_dataset(self, values, areas):
        values = np.asarray(values, dtype=float)
        return Dataset(values, np.arange(len(values)), 1, "ice", cell_areas=np.asarray(areas, float))

    def test_self_climatology_zeroes(self):
        rng = np.random.default_rng(5)
        pattern = rng.uniform(size=(12, 3))
        ds = self.area_dataset(np.tile(pattern, (2, 1)), [1.0, 2.0, 0.5])
        clim = monthly_climatology(integrated_extent(ds))
        anom = integrated_anomaly(ds, clim)
        assert np.allclose(anom.values, 0.0, atol=1e-12)

    def test_unit_concentration_unit_areas(self):
        ds = self.area_dataset(np.ones((5, 3)), np.ones(3))
        clim = Climatology(np.zeros(12))
        anom = integrated_anomaly(ds, clim)
        assert np.allclose(anom.values, 3.0)

    def test_monthly_means_zero_on_training_data(self):
        rng = np.random.default_rng(6)
        ds = self.area_dataset(rng.normal(size=(48, 4)), rng.uniform(1, 2, 4))
        anom = integrated_anomaly(ds, monthly_climatology(integrated_extent(ds)))
        months = anom.calendar_month
        for m in range(1, 13):
            group = anom.values[months == m]
            assert abs(group.mean()) < 1e-12

    def test_missing_areas_rejected(self):
        ds = Dataset(np.ones((3, 2)), np.arange(3), 1, "x")
        with pytest.raises(ValueError, match="cell_areas"):
            integrated_extent(ds)

    def test_linearity_in_concentration(self):
        rng = np.random.default_rng(7)
        areas = rng.uniform(1, 2, 3)
        c1 = rng.normal(size=(24, 3))
        c2 = rng.normal(size=(24, 3))
        a, b = 2.0, -0.5
        mk = lambda c: self.area_dataset(c, areas)
        clim1 = monthly_climatology(integrated_extent(mk(c1)))
        clim2 = monthly_climatology(integrated_extent(mk(c2)))
        combo_clim = Climatology(a * clim1.monthly_mean + b * clim2.monthly_mean)
        combo = integrated_anomaly(mk(a * c1 + b * c2), combo_clim)
        parts = a * integrated_anomaly(mk(c1), clim1).values + b * integrated_anomaly(mk(c2), clim2).values
        assert np.allclose(combo.values, parts, atol=1e-10)


class TestDetrend:
    def test_pure_ramp_removed(self):
        t = np.arange(48, dtype=float)
        out = detrend_monthly(make_obs(0.3 * t + 2.0))
        assert np.max(np.abs(out.values)) < 1e-10

    def test_month_offsets_zeroed(self):
        obs = make_obs(np.tile(np.arange(12, dtype=float), 4))
        out = detrend_monthly(obs)
        months = obs.calendar_month
        for m in range(1, 13):
            assert abs(out.values[months == m].mean()) < 1e-12

    def test_residual_slope_vanishes(self):
        rng = np.random.default_rng(8)
        t = np.arange(120, dtype=float)
        obs = make_obs(0.05 * t + rng.normal(size=120))
        out = detrend_monthly(obs)
        months = obs.calendar_month
        years = out.timestamps / 12.0
        for m in range(1, 13):
            sel = months == m
            slope = np.polyfit(years[sel], out.values[sel], 1)[0]
            oracles.record("detrend_refit_slope", [0.0], [slope], 1e-10)

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        obs = make_obs(np.arange(96) * 0.1 + rng.normal(size=96))
        once = detrend_monthly(obs)
        twice = detrend_monthly(once)
        assert np.max(np.abs(twice.values - once.values)) < 1e-10

    def test_needs_two_samples_per_month(self):
        with pytest.raises(ValueError, match="fewer than 2"):
            detrend_monthly(make_obs(np.ones(13)))

    def test_training_trend_applied_to_test(self):
        t = np.arange(96, dtype=float)
        trend = monthly_trend(make_obs(0.2 * t))
        test_obs = make_obs(0.2 * (96 + np.arange(24, dtype=float)), start=96)
        out = detrend_monthly(test_obs, trend)
        assert np.max(np.abs(out.values)) < 1e-9


class TestFillWhere:
    def test_gridpoint_mask(self):
        ds = Dataset(np.ones((3, 3)), np.arange(3), 1, "sst")
        out = fill_where(ds, np.array([True, False, False]), -1.8)
        assert np.all(out.values[:, 0] == -1.8)
        assert np.all(out.values[:, 1:] == 1.0)


class TestSynthRegimeAR:
    def test_noise_free_recursion(self):
        obs, labels = synth_regime_ar([(0.0, 0.5, 0.0)], [[1.0]], 4, seed=0, x0=1.0)
        assert np.allclose(obs.values, [1.0, 0.5, 0.25, 0.125])
        assert np.all(labels == 1)

    def test_identity_transition_absorbs(self):
        obs, labels = synth_regime_ar(
            [(0.0, 0.5, 0.1), (1.0, 0.5, 0.1)], np.eye(2), 50, seed=1
        )
        assert np.all(labels == 1)

    def test_empirical_transitions_match(self):
        T_true = np.array([[0.95, 0.05], [0.05, 0.95]])
        _, labels = synth_regime_ar(
            [(0.1, 0.5, 0.1), (-0.1, 0.5, 0.1)], T_true, 50_000, seed=2
        )
        freq = oracles.oracle_transition_frequencies(labels, 2)
        oracles.record("regime_ar_transition_counts", T_true, freq, 0.01)

    def test_non_stochastic_matrix_rejected(self):
        with pytest.raises(ValueError, match="row-stochastic"):
            synth_regime_ar([(0, 0.5, 0), (0, 0.5, 0)], [[0.9, 0.0], [0.1, 0.9]], 10, 0)

    def test_pure_function_of_seed(self):
        a = synth_regime_ar([(0.0, 0.8, 0.2)], [[1.0]], 100, seed=11)
        b = synth_regime_ar([(0.0, 0.8, 0.2)], [[1.0]], 100, seed=11)
        assert np.array_equal(a[0].values, b[0].values)


class TestSynthModulatedField:
    def test_single_annual_cycle_periodic(self):
        data, _ = synth_modulated_field(6, 200, periods=(12,), seed=0, noise=0.0)
        assert np.allclose(data.values[:-12], data.values[12:], atol=1e-12)

    def test_identical_parameter_gridpoints(self):
        # spatial patterns have period d/2 in j, so columns 0 and 3 share
        # their loading (up to cos rounding) and carry no noise here
        data, _ = synth_modulated_field(6, 200, periods=(12,), seed=3, noise=0.0)
        assert np.allclose(data.values[:, 0], data.values[:, 3], atol=1e-12)

    def test_low_frequency_factor_spectrum(self):
        _, meta = synth_modulated_field(8, 700, periods=(12, 60), seed=4, noise=0.0)
        freqs, power = scipy.signal.periodogram(meta["low_frequency"], fs=1.0)
        peak = freqs[1:][np.argmax(power[1:])]
        assert peak < 1.0 / 24.0

    def test_deterministic(self):
        a, _ = synth_modulated_field(8, 700, periods=(12, 60), seed=5)
        b, _ = synth_modulated_field(8, 700, periods=(12, 60), seed=5)
        assert np.array_equal(a.values, b.values)

    def test_preconditions(self):
        with pytest.raises(ValueError, match="d >= 4"):
            synth_modulated_field(2, 700)
        with pytest.raises(ValueError, match="longest period"):
            synth_modulated_field(8, 100, periods=(12, 60))
