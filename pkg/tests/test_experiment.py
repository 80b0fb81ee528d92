import asyncio

import numpy as np
import pytest

from beamforming.mmf import FIXED_PHASES
from channel import ClusterParams
from experiment import (ExperimentSpec, ExperimentRunner, apply_sweep, value_label, run_experiment,
                        run_mmf_realization, summarize, format_summary, RESULT_HEADER)
from scenario import SystemConfig, SolverConfig, ScenarioError


@pytest.fixture
def spec_factory(tiny_system, fast_solver, cluster_params):
    def build(**changes):
        values = dict(system=tiny_system, solver=fast_solver, params=cluster_params,
                      algorithms=("sequential",), realizations=2, seed=42)
        values.update(changes)
        return ExperimentSpec(**values)
    return build


class TestApplySweep:
    def test_ris_elements_fill_columns(self, tiny_system):
        system = apply_sweep(tiny_system, "ris_elements", "8")
        assert (system.F1, system.F2, system.F) == (2, 4, 8)

    def test_ris_elements_must_fill_rows(self, tiny_system):
        with pytest.raises(ScenarioError):
            apply_sweep(tiny_system, "ris_elements", 7)

    def test_phase_bits(self, tiny_system):
        system = apply_sweep(tiny_system, "phase_bits", "2")
        assert (system.Q1, system.Q2) == (2, 2)
        assert apply_sweep(tiny_system, "phase_bits", "continuous").ris_phases.is_continuous

    def test_sinr_target(self, tiny_system):
        system = apply_sweep(tiny_system, "sinr_target", "5")
        assert system.gamma == pytest.approx((10 ** 0.5, 10 ** 0.5))

    def test_ris_distance(self, tiny_system):
        assert apply_sweep(tiny_system, "ris_distance", 30).ris_position == (30.0, 10.0)

    def test_bad_value(self, tiny_system):
        with pytest.raises(ScenarioError):
            apply_sweep(tiny_system, "sinr_target", "loud")

    def test_labels(self):
        assert value_label("phase_bits", "inf") == "continuous"
        assert value_label("none", None) == ""
        assert value_label("sinr_target", "5") == "5"


class TestExperimentSpec:
    def test_unknown_algorithm(self, spec_factory):
        with pytest.raises(ScenarioError):
            spec_factory(algorithms=("gradient-ascent",))

    def test_sweep_needs_values(self, spec_factory):
        with pytest.raises(ScenarioError):
            spec_factory(axis="sinr_target", values=())

    def test_realizations_positive(self, spec_factory):
        with pytest.raises(ScenarioError):
            spec_factory(realizations=0)

    def test_invalid_sweep_value_found_early(self, spec_factory):
        with pytest.raises(ScenarioError):
            spec_factory(axis="ris_elements", values=("8", "9"))


class TestExperimentRunner:
    def test_one_row_per_realization_value_and_algorithm(self, spec_factory):
        spec = spec_factory(axis="sinr_target", values=("0", "5", "10", "15"), realizations=10)
        rows, summary = run_experiment(spec)
        assert len(rows) == 40
        assert {row.sweep_value for row in rows} == {"0", "5", "10", "15"}
        assert len(summary) == 4

    def test_csv_is_byte_identical_across_runs(self, spec_factory, tmp_path):
        first, second = tmp_path / "first.csv", tmp_path / "second.csv"
        run_experiment(spec_factory(output=str(first)))
        run_experiment(spec_factory(output=str(second)))
        assert first.read_bytes() == second.read_bytes()
        assert first.read_text().splitlines()[0] == ",".join(RESULT_HEADER)

    def test_timing_column_is_optional(self, spec_factory, tmp_path):
        path = tmp_path / "timed.csv"
        run_experiment(spec_factory(output=str(path), record_timing=True, realizations=1))
        assert path.read_text().splitlines()[0].endswith(",wall_ms")

    def test_workers_do_not_change_results(self, spec_factory):
        serial, _ = run_experiment(spec_factory(workers=1))
        parallel, _ = run_experiment(spec_factory(workers=2))
        assert [r.cells() for r in serial] == [r.cells() for r in parallel]

    def test_algorithms_share_channel_realizations(self, spec_factory):
        rows, _ = run_experiment(spec_factory(algorithms=("sequential", "sdr-theta"), realizations=1))
        assert [(r.realization, r.algorithm) for r in rows] == [(0, "sequential"), (0, "sdr-theta")]

    def test_summary_matches_rows(self, spec_factory):
        rows, summary = run_experiment(spec_factory(realizations=3))
        powers = np.array([r.power_dbm for r in rows if r.feasible])
        assert summary[0].mean_dbm == pytest.approx(powers.mean())
        assert summary[0].std_dbm == pytest.approx(powers.std())
        assert summary[0].total == 3
        assert "sequential" in format_summary(summary)

    def test_summarize_without_feasible_rows(self, spec_factory):
        rows, _ = run_experiment(spec_factory(realizations=1))
        for row in rows:
            row.feasible = False
        summary = summarize(rows)
        assert summary[0].feasible == 0
        assert np.isnan(summary[0].mean_dbm)


class TestMMFExperiment:
    def test_generous_budget(self, spec_factory):
        row = run_mmf_realization(spec_factory(), 0, 250.0, FIXED_PHASES)
        assert row.feasible
        assert row.power_dbm <= 250.0 + 1e-9
        assert np.isfinite(row.min_ratio_db)

    def test_starved_budget_is_flagged(self, spec_factory):
        row = run_mmf_realization(spec_factory(), 0, -100.0, FIXED_PHASES)
        assert not row.feasible
        assert row.min_ratio_db == float("-inf")

    def test_runner_writes_rows(self, spec_factory, tmp_path):
        path = tmp_path / "mmf.csv"
        runner = ExperimentRunner(spec_factory(output=str(path), realizations=2))
        rows = asyncio.run(runner.run_mmf(250.0, FIXED_PHASES))
        assert len(rows) == 2
        assert path.read_text().splitlines()[0] == "realization,mode,budget_dbm,min_ratio_db,power_dbm,probes,feasible"

    def test_unknown_mode(self, spec_factory):
        runner = ExperimentRunner(spec_factory())
        with pytest.raises(ValueError):
            asyncio.run(runner.run_mmf(30.0, "greedy"))


PAIRED_REALIZATIONS = 20


def desk_spec(**changes) -> ExperimentSpec:
    values = dict(system=SystemConfig(M=16, N=4, K=2, bs_rows=4, bs_cols=4, F1=4, F2=4, sinr_target_db=(10.0,)),
                  solver=SolverConfig(rho0=1e-2, c=0.7, max_outer=120, max_inner=10, max_rcg_iters=50,
                                      randomizations=100, softmin_stages=3),
                  params=ClusterParams(), realizations=PAIRED_REALIZATIONS, seed=2024, workers=4)
    values.update(changes)
    return ExperimentSpec(**values)


def paired_powers(rows, keys):
    """power_dbm per key over the realizations where every key is feasible"""
    table = {}
    for row in rows:
        table.setdefault(row.realization, {})[(row.sweep_value, row.algorithm)] = row
    kept = [r for r in sorted(table) if all(key in table[r] and table[r][key].feasible for key in keys)]
    return {key: np.array([table[r][key].power_dbm for r in kept]) for key in keys}


@pytest.mark.slow
class TestDeskScaleTrends:
    @pytest.fixture(scope="class")
    def method_rows(self):
        algorithms = ("penalty-alt", "penalty-joint-rcg", "penalty-joint-sca", "sequential", "random-theta",
                      "fully-digital")
        rows, _ = run_experiment(desk_spec(algorithms=algorithms))
        keys = [("", algorithm) for algorithm in algorithms]
        powers = paired_powers(rows, keys)
        assert len(powers[keys[0]]) >= 15
        return {algorithm: powers[("", algorithm)] for algorithm in algorithms}

    def test_joint_rcg_beats_other_phase_updates(self, method_rows):
        joint = method_rows["penalty-joint-rcg"]
        assert joint.mean() <= method_rows["penalty-alt"].mean()
        assert joint.mean() <= method_rows["penalty-joint-sca"].mean()
        others = np.minimum(method_rows["penalty-alt"], method_rows["penalty-joint-sca"])
        assert np.mean(joint <= others + 1e-6) >= 0.6

    def test_optimized_ris_saves_power(self, method_rows):
        assert method_rows["random-theta"].mean() - method_rows["penalty-joint-rcg"].mean() >= 3.0

    def test_sequential_trails_joint_design(self, method_rows):
        gap = method_rows["sequential"].mean() - method_rows["penalty-joint-rcg"].mean()
        assert 0.0 <= gap <= 4.0
        assert method_rows["sequential"].mean() >= method_rows["fully-digital"].mean()

    def test_hybrid_costs_little_over_fully_digital(self, method_rows):
        gap = method_rows["penalty-joint-rcg"].mean() - method_rows["fully-digital"].mean()
        assert 0.0 < gap <= 6.0

    def test_more_ris_elements_need_less_power(self):
        values = ("8", "16", "32")
        rows, _ = run_experiment(desk_spec(axis="ris_elements", values=values))
        keys = [(value, "penalty-joint-rcg") for value in values]
        powers = paired_powers(rows, keys)
        means = [powers[key].mean() for key in keys]
        assert len(powers[keys[0]]) >= 15
        assert means[0] - means[-1] >= 4.0
        assert np.all(np.diff(means) <= 0.5)

    def test_quantization_gap_shrinks_with_bits(self):
        values = ("continuous", "3", "2", "1")
        rows, _ = run_experiment(desk_spec(axis="phase_bits", values=values))
        keys = [(value_label("phase_bits", value), "penalty-joint-rcg") for value in values]
        powers = paired_powers(rows, keys)
        assert len(powers[keys[0]]) >= 15
        continuous, three, two, one = (powers[key].mean() for key in keys)
        assert three - continuous <= 1.0
        assert one - continuous >= two - continuous - 0.1
        assert two - continuous >= three - continuous - 0.1
