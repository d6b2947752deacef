from typing import List

import numpy as np
import pytest

from reloc_kit.core.errors import (
    AngleNearPi,
    DanglingEdge,
    IndexOutOfRange,
    InvalidProblem,
    SingularNormalEquations,
)
from reloc_kit.models.geometry import Pose, Twist
from reloc_kit.models.graph import QueryMatch
from reloc_kit.models.pose_graph import (
    EdgeKind,
    OptimizerConfig,
    PoseGraphEdge,
    PoseGraphProblem,
    Trajectory,
)
from reloc_kit.services.evaluation import evaluate_ate
from reloc_kit.services.geometry import compose, relative, rot_z, se3_exp
from reloc_kit.services.pose_opt import (
    build_problem_from_matches,
    edge_jacobians,
    edge_residual,
    loop_gap,
    odometry_edges,
    optimize,
    simulate_odometry,
    total_cost,
)
from tests.helpers import random_pose


def circle_trajectory(n: int = 20, radius: float = 2.0) -> List[Pose]:
    """Camera driving once round a circle, facing along the tangent."""
    poses = []
    for k in range(n):
        angle = 2.0 * np.pi * k / n
        position = np.array([radius * np.cos(angle), radius * np.sin(angle), 0.0])
        poses.append(Pose(rot_z(angle + np.pi / 2), position))
    return poses


def drift_problem(seed: int, info_scale: float = 1.0) -> tuple:
    truth = circle_trajectory()
    odometry, drifted = simulate_odometry(truth, seed=seed)
    loop = PoseGraphEdge(19, 0, relative(truth[19], truth[0]), info_scale, EdgeKind.LOOP)
    return truth, PoseGraphProblem(tuple(drifted), tuple(odometry) + (loop,), anchor=0), loop


@pytest.mark.unit
class TestResiduals:
    """Edge residuals and their Jacobians."""

    def test_zero_at_measurement(self, rng):
        """Estimates that satisfy the measurement have a zero residual."""
        a, b = random_pose(rng, 1.0, 0.5), random_pose(rng, 1.0, 0.5)
        np.testing.assert_allclose(edge_residual(a, b, relative(a, b)).vector, 0.0, atol=1e-12)

    def test_jacobian_predicts_residual_change(self, rng):
        """A small left twist on pose j changes r by J_j·δ to first order."""
        a, b = random_pose(rng), random_pose(rng)
        measured = random_pose(rng, 0.1, 0.05)
        r, _, jac_j = edge_jacobians(a, b, measured)
        delta = 1e-4 * rng.normal(size=6)
        moved = compose(se3_exp(Twist.from_vector(delta)), b)
        predicted = r + jac_j @ delta
        actual = edge_residual(a, moved, measured).vector
        assert np.max(np.abs(actual - predicted)) < 1e-7

    def test_zero_information_edges_cost_nothing(self, rng):
        """θ̂ = 0 removes an edge from the cost."""
        a, b = random_pose(rng), random_pose(rng)
        edge = PoseGraphEdge(0, 1, Pose.identity(), 0.0, EdgeKind.LOOP)
        assert total_cost([a, b], [edge]) == 0.0


@pytest.mark.unit
class TestOdometry:
    """Odometry chains and simulated drift."""

    def test_exact_odometry_has_zero_cost(self):
        """Edges measured from the poses themselves are satisfied."""
        poses = circle_trajectory(8)
        assert total_cost(poses, odometry_edges(poses)) < 1e-20

    def test_noise_free_simulation_is_exact(self):
        """Zero noise reproduces the true steps and the true trajectory."""
        truth = circle_trajectory(10)
        edges, estimate = simulate_odometry(truth, sigma_t=0.0, sigma_r=0.0)
        assert len(edges) == 9
        for edge in edges:
            assert edge.measured.allclose(relative(truth[edge.i], truth[edge.j]), atol=1e-15)
        for a, b in zip(estimate, truth):
            assert a.allclose(b, atol=1e-12)

    def test_simulation_is_seeded(self):
        """Same seed, same drift."""
        truth = circle_trajectory(10)
        _, first = simulate_odometry(truth, seed=4)
        _, second = simulate_odometry(truth, seed=4)
        for a, b in zip(first, second):
            assert a.allclose(b, atol=0.0)


@pytest.mark.unit
class TestOptimizer:
    """Levenberg-Marquardt over SE(3)."""

    def test_loop_closure_removes_drift(self):
        """On at least 9 of 10 seeds the loop gap halves and ATE drops."""
        improved = 0
        for seed in range(10):
            truth, problem, loop = drift_problem(seed)
            optimized, _ = optimize(problem)
            gap_ratio = loop_gap(optimized, loop) / loop_gap(problem.poses, loop)
            gt = Trajectory.from_poses(truth)
            before = evaluate_ate(Trajectory.from_poses(problem.poses), gt).rmse
            after = evaluate_ate(Trajectory.from_poses(optimized), gt).rmse
            if gap_ratio < 0.5 and after < before:
                improved += 1
        assert improved >= 9

    def test_anchor_is_bit_identical(self):
        """The anchor pose never moves."""
        _, problem, _ = drift_problem(1)
        optimized, _ = optimize(problem)
        np.testing.assert_array_equal(optimized[0].rotation, problem.poses[0].rotation)
        np.testing.assert_array_equal(optimized[0].translation, problem.poses[0].translation)

    def test_costs_never_increase(self):
        """Accepted steps only lower the cost; rejected ones keep it."""
        _, problem, _ = drift_problem(2)
        _, report = optimize(problem)
        assert np.all(np.diff(report.costs) <= 0)
        assert report.final_cost < report.initial_cost
        assert report.accepted_steps >= 1

    def test_uniform_information_scale_is_invariant(self):
        """Multiplying every θ̂ by 10 leaves the optimum unchanged."""
        _, problem, _ = drift_problem(3)
        scaled = PoseGraphProblem(
            problem.poses,
            tuple(
                PoseGraphEdge(e.i, e.j, e.measured, 10.0 * e.info_scale, e.kind)
                for e in problem.edges
            ),
            problem.anchor,
        )
        config = OptimizerConfig(tol=1e-15)
        first, _ = optimize(problem, config)
        second, _ = optimize(scaled, config)
        for a, b in zip(first, second):
            assert a.allclose(b, atol=1e-8)

    def test_zero_information_loop_is_ignored(self):
        """A θ̂ = 0 loop edge gives exactly the odometry-only result."""
        _, problem, loop = drift_problem(4)
        odometry_only = PoseGraphProblem(problem.poses, problem.edges[:-1], 0)
        muted = PoseGraphProblem(
            problem.poses,
            problem.edges[:-1] + (PoseGraphEdge(19, 0, loop.measured, 0.0, EdgeKind.LOOP),),
            0,
        )
        first, _ = optimize(odometry_only)
        second, _ = optimize(muted)
        for a, b in zip(first, second):
            assert a.allclose(b, atol=0.0)

    def test_threads_do_not_change_result(self):
        """Edges are accumulated in order whatever the worker count."""
        _, problem, _ = drift_problem(5)
        first, _ = optimize(problem, threads=1)
        second, _ = optimize(problem, threads=4)
        for a, b in zip(first, second):
            assert a.allclose(b, atol=0.0)

    def test_all_zero_information(self):
        """Nothing constrains the poses."""
        edge = PoseGraphEdge(0, 1, Pose.identity(), 0.0)
        with pytest.raises(SingularNormalEquations):
            optimize(PoseGraphProblem((Pose.identity(), Pose.identity()), (edge,)))

    def test_problem_validation(self):
        """Dangling edges, missing edges and bad anchors are rejected."""
        poses = (Pose.identity(), Pose.identity())
        with pytest.raises(DanglingEdge):
            optimize(PoseGraphProblem(poses, (PoseGraphEdge(0, 2, Pose.identity()),)))
        with pytest.raises(InvalidProblem):
            optimize(PoseGraphProblem(poses, ()))
        with pytest.raises(InvalidProblem):
            optimize(PoseGraphProblem(poses, (PoseGraphEdge(0, 1, Pose.identity()),), anchor=5))

    def test_converges_from_near_half_turn(self):
        """A pose rotated by almost π about its loop partner is pulled back."""
        poses = (Pose.identity(), Pose(rot_z(np.pi - 1e-3), np.zeros(3)))
        problem = PoseGraphProblem(poses, (PoseGraphEdge(0, 1, Pose.identity()),))
        optimized, report = optimize(problem)
        assert report.initial_cost > 9.0
        assert report.final_cost < 1e-8
        assert optimized[1].allclose(Pose.identity(), atol=1e-4)

    def test_trial_step_at_half_turn_is_rejected(self, mocker):
        """A trial point whose residual sits at π raises damping instead of aborting."""
        poses = (Pose.identity(), Pose(rot_z(np.pi - 1e-3), np.zeros(3)))
        problem = PoseGraphProblem(poses, (PoseGraphEdge(0, 1, Pose.identity()),))
        calls = []

        def half_turn_once(candidate, edges):
            calls.append(len(calls))
            if len(calls) == 2:
                raise AngleNearPi("rotation angle is within 1e-6 of pi")
            return total_cost(candidate, edges)

        mocker.patch("reloc_kit.services.pose_opt.total_cost", side_effect=half_turn_once)
        _, report = optimize(problem)
        assert report.costs[1] == report.initial_cost
        assert report.accepted_steps >= 1
        assert report.final_cost < 1e-8
        assert len(calls) > 2


@pytest.mark.unit
class TestProblemFromMatches:
    """Loop edges from query matches."""

    def test_loop_edges_from_reference_poses(self):
        """Each match adds one loop edge measured from the reference poses."""
        truth = circle_trajectory(10)
        odometry, drifted = simulate_odometry(truth, seed=0)
        matches = [QueryMatch(9, 0, 0.6), QueryMatch(8, 1, 0.3)]
        problem = build_problem_from_matches(drifted, odometry, matches, reference_poses=truth)
        loops = problem.loop_edges()
        assert len(problem.edges) == 11
        assert [(e.i, e.j, e.info_scale) for e in loops] == [(9, 0, 0.6), (8, 1, 0.3)]
        assert loops[0].measured.allclose(relative(truth[9], truth[0]), atol=0.0)

    def test_similarity_overrides_scores(self):
        """Explicit θ̂ values replace the raw match scores."""
        truth = circle_trajectory(4)
        problem = build_problem_from_matches(
            truth, odometry_edges(truth), [QueryMatch(3, 0, 50.0)], similarity=[0.8]
        )
        assert problem.loop_edges()[0].info_scale == 0.8

    def test_match_out_of_range(self):
        """Matches must reference existing keyframes."""
        truth = circle_trajectory(3)
        with pytest.raises(IndexOutOfRange):
            build_problem_from_matches(truth, odometry_edges(truth), [QueryMatch(0, 5, 1.0)])

    def test_raw_scores_are_clipped_to_unit_interval(self):
        """Inverse cross-entropy scores up to 1/η become θ̂ ≤ 1; negatives become 0."""
        truth = circle_trajectory(6)
        matches = [QueryMatch(5, 0, 1000.0), QueryMatch(4, 1, 0.25), QueryMatch(3, 2, -0.5)]
        problem = build_problem_from_matches(truth, odometry_edges(truth), matches)
        assert [e.info_scale for e in problem.loop_edges()] == [1.0, 0.25, 0.0]
