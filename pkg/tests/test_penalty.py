import numpy as np
import pytest

from beamforming.manifold import finite_difference_gradient
from beamforming.penalty import (PenaltySolver, PhaseMethod, PhaseObjective, HybridBeamformer,
                                 digital_update, penalized_objective, sinr_cone_update, solve_fixed_phases,
                                 run_qos, write_trace, CONVERGED, MAX_ITERATIONS, INFEASIBLE,
                                 INFEASIBLE_AFTER_QUANTIZATION)
from beamforming.utils import effective_rows, compute_sinr
from channel import ChannelSet, sample_channels
from scenario import RngSeed, PhaseSet
from conftest import complex_normal


class TestDigitalUpdate:
    def test_scalar_example(self):
        W = digital_update(np.array([[1.0 + 0j]]), np.array([[1.0 + 0j]]), rho=2.0, D=1.0)
        assert W[0, 0] == pytest.approx(0.5)

    def test_large_penalty_matches_target(self):
        W = digital_update(np.array([[1.0 + 0j]]), np.array([[1.0 + 0j]]), rho=1e8, D=1.0)
        assert W[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_stationary_point(self):
        rng = np.random.default_rng(0)
        effective, t = complex_normal(rng, (3, 2)), complex_normal(rng, (3, 3))
        W = digital_update(effective, t, rho=5.0, D=4.0)
        grad = finite_difference_gradient(lambda V: penalized_objective(effective, V, t, 5.0, 4.0), W, h=1e-4)
        assert np.max(np.abs(grad)) < 1e-8


class TestPhaseObjective:
    def setup_objective(self, seed=0, F=4, M=4, K=2, N=2):
        rng = np.random.default_rng(seed)
        G, H = complex_normal(rng, (F, M)), complex_normal(rng, (K, F))
        W, t = complex_normal(rng, (N, K)), complex_normal(rng, (K, K))
        b = np.exp(1j * rng.uniform(0, 2 * np.pi, F))
        x = np.exp(1j * rng.uniform(0, 2 * np.pi, M))
        return G, H, W, t, b, x

    def test_matches_direct_sum(self):
        G, H, W, t, b, x = self.setup_objective()
        objective = PhaseObjective(G, H, W, t, 2)
        W_rep = np.repeat(W, 2, axis=0)
        expected = 0.0
        for k in range(2):
            for j in range(2):
                c_kj = np.diag(H[k].conj()) @ G @ np.diag(W_rep[:, j])
                expected += abs(b.conj() @ c_kj @ x - t[k, j]) ** 2
        assert objective.value(b, x) == pytest.approx(expected, rel=1e-12)

    def test_received_equals_effective_channel_product(self):
        G, H, W, t, b, x = self.setup_objective(1)
        objective = PhaseObjective(G, H, W, t, 2)
        assert np.allclose(objective.received(b, x), effective_rows(G, H, b, x, 2) @ W)

    def test_residual_free_point(self):
        G, H, W, _, b, x = self.setup_objective(2)
        t = effective_rows(G, H, b, x, 2) @ W
        objective = PhaseObjective(G, H, W, t, 2)
        assert objective.value(b, x) == pytest.approx(0.0, abs=1e-20)
        assert np.allclose(objective.grad_b(b, x), 0.0)
        assert np.allclose(objective.grad_x(b, x), 0.0)

    def test_unknown_block(self):
        G, H, W, t, b, x = self.setup_objective()
        with pytest.raises(ValueError):
            PhaseObjective(G, H, W, t, 2).problem("digital", b, x)


class TestSinrConeUpdate:
    def test_rows_land_in_their_cones(self):
        rng = np.random.default_rng(3)
        received = complex_normal(rng, (3, 3))
        gamma = np.array([10.0, 3.0, 1.0])
        t = sinr_cone_update(received, gamma, np.ones(3))
        for k in range(3):
            interference = np.sum(np.abs(np.delete(t[k], k)) ** 2)
            assert abs(t[k, k]) ** 2 >= gamma[k] * (interference + 1.0) * (1 - 1e-9)

    def test_feasible_rows_unchanged(self):
        received = np.array([[10.0, 0.1], [0.1, 10.0]], dtype=complex)
        t = sinr_cone_update(received, np.array([10.0, 10.0]), np.ones(2))
        assert np.array_equal(t, received)


class TestHybridBeamformer:
    def test_transmit_power(self):
        rng = np.random.default_rng(4)
        x = np.exp(1j * rng.uniform(0, 2 * np.pi, 8))
        W = complex_normal(rng, (2, 3))
        beamformer = HybridBeamformer.from_vector(x, W, 2)
        assert beamformer.D == 4
        radiated = np.linalg.norm(beamformer.full_V() @ W) ** 2
        assert radiated == pytest.approx(beamformer.transmit_power())
        assert np.array_equal(beamformer.x, x)


class TestPenaltySolver:
    def test_phase_update_keeps_residual_free_point(self, tiny_channels, tiny_system, fast_solver):
        for method in PhaseMethod:
            solver = PenaltySolver(tiny_channels, tiny_system, fast_solver, method)
            state = solver.initial_state(RngSeed(1))
            state.t = solver.effective(state) @ state.W
            b, x = solver.update_phases(state)
            assert np.allclose(b, state.b, atol=1e-12)
            assert np.allclose(x, state.x, atol=1e-12)

    def test_phase_update_stays_unit_modulus(self, tiny_channels, tiny_system, fast_solver):
        for method in PhaseMethod:
            solver = PenaltySolver(tiny_channels, tiny_system, fast_solver, method)
            state = solver.initial_state(RngSeed(2))
            b, x = solver.update_phases(state)
            assert np.allclose(np.abs(b), 1.0)
            assert np.allclose(np.abs(x), 1.0)

    @pytest.mark.parametrize("method", list(PhaseMethod))
    def test_inner_loop_is_monotone(self, tiny_system, fast_solver, cluster_params, method):
        for r in range(20):
            channels = sample_channels(tiny_system, cluster_params, RngSeed(30, r))
            solver = PenaltySolver(channels, tiny_system, fast_solver, method)
            state = solver.initial_state(RngSeed(30, r))
            solver.inner_loop(state, 1)
            steps = np.array([solver.objective(solver.initial_state(RngSeed(30, r)))] + state.steps)
            assert np.all(np.diff(steps) <= 1e-9 * np.abs(steps[:-1])), f"realization {r}"

    def test_initial_t_is_feasible(self, tiny_channels, tiny_system, fast_solver):
        solver = PenaltySolver(tiny_channels, tiny_system, fast_solver)
        for r in range(20):
            t = solver.initial_state(RngSeed(31, r)).t
            for k in range(tiny_system.K):
                interference = np.sum(np.abs(np.delete(t[k], k)) ** 2)
                assert abs(t[k, k]) ** 2 >= tiny_system.gamma[k] * (interference + 1.0) * (1 - 1e-9)

    def test_t_update_is_feasible(self, tiny_channels, tiny_system, fast_solver):
        solver = PenaltySolver(tiny_channels, tiny_system, fast_solver)
        state = solver.initial_state(RngSeed(4))
        state.t = solver.update_t(state)
        for k in range(tiny_system.K):
            interference = np.sum(np.abs(np.delete(state.t[k], k)) ** 2)
            assert abs(state.t[k, k]) ** 2 >= tiny_system.gamma[k] * (interference + 1.0) * (1 - 1e-9)

    def test_fully_digital_keeps_analog_fixed(self, tiny_channels, tiny_system, fast_solver):
        system = tiny_system.replace(N=tiny_system.M)
        solver = PenaltySolver(tiny_channels, system, fast_solver)
        state = solver.initial_state(RngSeed(5))
        assert np.array_equal(state.x, np.ones(system.M))
        _, x = solver.update_phases(state)
        assert np.array_equal(x, np.ones(system.M))

    def test_fixed_ris_is_not_moved(self, tiny_channels, tiny_system, fast_solver):
        b0 = np.exp(1j * np.linspace(0, 1, tiny_system.F))
        solver = PenaltySolver(tiny_channels, tiny_system, fast_solver, fixed_ris=b0)
        state = solver.initial_state(RngSeed(6))
        b, _ = solver.update_phases(state)
        assert np.array_equal(b, b0)

    def test_dimension_mismatch(self, tiny_system, fast_solver):
        channels = ChannelSet(G=np.ones((9, 4)), H=np.ones((2, 9)))
        with pytest.raises(ValueError):
            PenaltySolver(channels, tiny_system, fast_solver)


class TestRunQoS:
    def test_solution_meets_targets(self, tiny_channels, tiny_system, fast_solver):
        solution = run_qos(tiny_channels, tiny_system, fast_solver, PhaseMethod.JOINT_RCG, RngSeed(0))
        assert solution.status in (CONVERGED, MAX_ITERATIONS)
        assert solution.feasible
        assert np.all(solution.sinr >= tiny_system.gamma_array * (1 - 1e-6))
        if solution.converged:
            assert solution.xi < fast_solver.eps3
        rows = effective_rows(tiny_channels.G, tiny_channels.H, solution.ris.b, solution.beamformer.x, 2)
        assert np.allclose(compute_sinr(rows, solution.beamformer.W, tiny_system.sigma2_array), solution.sinr)
        assert solution.power_w == pytest.approx(solution.beamformer.transmit_power())

    def test_power_is_optimal_for_returned_phases(self, tiny_channels, tiny_system, fast_solver):
        solution = run_qos(tiny_channels, tiny_system, fast_solver, PhaseMethod.ALTERNATING_RCG, RngSeed(1))
        again = solve_fixed_phases(tiny_channels, tiny_system, solution.ris.b, solution.beamformer.x)
        assert solution.power_w == pytest.approx(again.power_w, rel=1e-6)

    def test_deterministic_for_seed(self, tiny_channels, tiny_system, fast_solver):
        first = run_qos(tiny_channels, tiny_system, fast_solver, PhaseMethod.JOINT_SCA, RngSeed(2))
        second = run_qos(tiny_channels, tiny_system, fast_solver, PhaseMethod.JOINT_SCA, RngSeed(2))
        assert first.power_w == second.power_w
        assert [r.objective for r in first.trace] == [r.objective for r in second.trace]

    def test_quantized_phases(self, tiny_channels, tiny_system, fast_solver):
        system = tiny_system.replace(Q1=1, Q2=2)
        solution = run_qos(tiny_channels, system, fast_solver, PhaseMethod.JOINT_RCG, RngSeed(3))
        if solution.status == INFEASIBLE_AFTER_QUANTIZATION:
            assert not solution.feasible
        else:
            assert PhaseSet(2).contains(solution.ris.b)
            assert PhaseSet(1).contains(solution.beamformer.x)

    def test_identical_users_are_infeasible(self, tiny_system, fast_solver):
        rng = np.random.default_rng(8)
        h = complex_normal(rng, 4)
        channels = ChannelSet(G=complex_normal(rng, (4, 4)), H=np.stack([h, h]))
        solution = run_qos(channels, tiny_system, fast_solver.replace(max_outer=3), PhaseMethod.JOINT_RCG)
        assert solution.status == INFEASIBLE
        assert not solution.feasible
        assert solution.power_w == float("inf")

    def test_trace_file(self, tiny_channels, tiny_system, fast_solver, tmp_path):
        path = tmp_path / "trace.csv"
        solution = run_qos(tiny_channels, tiny_system, fast_solver.replace(max_outer=3), trace_path=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "outer_iter,inner_iter,rho,objective,xi"
        assert len(lines) == len(solution.trace) + 1

    def test_trace_rho_grows_between_outer_iterations(self, tiny_channels, tiny_system, fast_solver):
        solution = run_qos(tiny_channels, tiny_system, fast_solver.replace(max_outer=4))
        rhos = {}
        for record in solution.trace:
            rhos[record.outer_iter] = record.rho
        values = [rhos[o] for o in sorted(rhos)]
        assert np.allclose(np.diff(np.log(values)), -np.log(fast_solver.c))

    def test_first_phase_solve_is_kept(self, tiny_channels, tiny_system, fast_solver):
        solution = run_qos(tiny_channels, tiny_system, fast_solver.replace(max_outer=2), PhaseMethod.JOINT_RCG)
        assert solution.phase_trace is not None
        assert len(solution.phase_trace.trace) == len(solution.phase_trace.grad_norms)
        assert np.all(np.diff(solution.phase_trace.trace) <= 1e-12)

    def test_write_trace(self, tmp_path):
        write_trace([], tmp_path / "empty.csv")
        assert (tmp_path / "empty.csv").read_text().strip() == "outer_iter,inner_iter,rho,objective,xi"


@pytest.mark.slow
class TestDeskScale:
    @pytest.mark.parametrize("method", list(PhaseMethod))
    def test_converges_and_meets_targets(self, desk_system, fast_solver, cluster_params, method):
        solver = fast_solver.replace(max_outer=120, max_rcg_iters=50)
        for r in range(20):
            channels = sample_channels(desk_system, cluster_params, RngSeed(11, r))
            solution = run_qos(channels, desk_system, solver, method, RngSeed(11, r))
            assert solution.feasible
            assert np.all(solution.sinr >= desk_system.gamma_array * (1 - 1e-6))
            if solution.converged:
                assert solution.xi < solver.eps3

    @pytest.mark.parametrize("method", list(PhaseMethod))
    def test_inner_loops_are_monotone(self, desk_system, fast_solver, cluster_params, method):
        for r in range(20):
            channels = sample_channels(desk_system, cluster_params, RngSeed(12, r))
            solver = PenaltySolver(channels, desk_system, fast_solver, method)
            state = solver.initial_state(RngSeed(12, r))
            for outer in range(1, 4):
                state.steps = []
                solver.inner_loop(state, outer)
                steps = np.array(state.steps)
                assert np.all(np.diff(steps) <= 1e-9 * np.abs(steps[:-1])), f"realization {r}, outer {outer}"
                state.rho /= fast_solver.c
