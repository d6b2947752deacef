"""Pose-graph optimisation over SE(3) with Levenberg-Marquardt.

Frame convention: a stored pose ``P_k`` is camera-to-world. An edge (i, j)
measures ``Z_ij = P_i⁻¹ ∘ P_j`` and its residual is

    r_ij = log(Z_ij ∘ P_j⁻¹ ∘ P_i)

which is the zero twist exactly when the estimates satisfy the measurement.
Updates are left-multiplicative, ``P ← exp(δ) ∘ P``; the anchor pose never moves.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from reloc_kit.core.errors import AngleNearPi, IndexOutOfRange, NonFiniteCost, SingularNormalEquations
from reloc_kit.core.logging import get_logger, log_numeric_event
from reloc_kit.models.geometry import Pose, Twist
from reloc_kit.models.graph import QueryMatch
from reloc_kit.models.pose_graph import (
    EdgeKind,
    OptimizerConfig,
    OptReport,
    PoseGraphEdge,
    PoseGraphProblem,
    TerminationReason,
)
from reloc_kit.services.geometry import compose, inverse, relative, se3_exp, se3_log

logger = get_logger(__name__)

CHOLESKY_JITTER = 1e-12


def edge_residual(pose_i: Pose, pose_j: Pose, measured: Pose) -> Twist:
    return se3_log(compose(compose(measured, inverse(pose_j)), pose_i))


def _perturb(pose: Pose, axis: int, step: float) -> Pose:
    delta = np.zeros(6)
    delta[axis] = step
    return compose(se3_exp(Twist.from_vector(delta)), pose)


def edge_jacobians(
    pose_i: Pose, pose_j: Pose, measured: Pose, eps: float = 1e-6
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Residual vector and central-difference 6×6 Jacobians w.r.t. left twists on i and j."""
    residual = edge_residual(pose_i, pose_j, measured).vector
    jac_i = np.empty((6, 6))
    jac_j = np.empty((6, 6))
    for axis in range(6):
        plus = edge_residual(_perturb(pose_i, axis, eps), pose_j, measured).vector
        minus = edge_residual(_perturb(pose_i, axis, -eps), pose_j, measured).vector
        jac_i[:, axis] = (plus - minus) / (2.0 * eps)
        plus = edge_residual(pose_i, _perturb(pose_j, axis, eps), measured).vector
        minus = edge_residual(pose_i, _perturb(pose_j, axis, -eps), measured).vector
        jac_j[:, axis] = (plus - minus) / (2.0 * eps)
    return residual, jac_i, jac_j


def total_cost(poses: Sequence[Pose], edges: Sequence[PoseGraphEdge]) -> float:
    """Σ θ̂ ‖r‖² over all edges."""
    cost = 0.0
    for edge in edges:
        if edge.info_scale == 0:
            continue
        r = edge_residual(poses[edge.i], poses[edge.j], edge.measured).vector
        cost += edge.info_scale * float(r @ r)
    return cost


def _variable_slots(n: int, anchor: int) -> List[Optional[int]]:
    slots: List[Optional[int]] = []
    next_slot = 0
    for index in range(n):
        if index == anchor:
            slots.append(None)
        else:
            slots.append(next_slot)
            next_slot += 1
    return slots


def _normal_equations(
    problem: PoseGraphProblem,
    poses: Sequence[Pose],
    slots: Sequence[Optional[int]],
    eps: float,
    threads: int,
) -> Tuple[np.ndarray, np.ndarray]:
    size = 6 * (len(poses) - 1)
    hessian = np.zeros((size, size))
    gradient = np.zeros(size)
    edges = [edge for edge in problem.edges if edge.info_scale > 0]

    def linearise(edge: PoseGraphEdge) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return edge_jacobians(poses[edge.i], poses[edge.j], edge.measured, eps)

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        linearised = list(pool.map(linearise, edges))

    # accumulated in edge order
    for edge, (r, jac_i, jac_j) in zip(edges, linearised):
        blocks = [(slots[edge.i], jac_i), (slots[edge.j], jac_j)]
        for slot_a, jac_a in blocks:
            if slot_a is None:
                continue
            rows = slice(6 * slot_a, 6 * slot_a + 6)
            gradient[rows] += edge.info_scale * jac_a.T @ r
            for slot_b, jac_b in blocks:
                if slot_b is None:
                    continue
                cols = slice(6 * slot_b, 6 * slot_b + 6)
                hessian[rows, cols] += edge.info_scale * jac_a.T @ jac_b
    return hessian, gradient


def _solve_damped(hessian: np.ndarray, gradient: np.ndarray, damping: float) -> np.ndarray:
    system = hessian + damping * np.eye(hessian.shape[0])
    try:
        factor = cho_factor(system)
    except LinAlgError:
        factor = cho_factor(system + CHOLESKY_JITTER * np.eye(system.shape[0]))
    return -cho_solve(factor, gradient)


def _apply_step(
    poses: Sequence[Pose], slots: Sequence[Optional[int]], step: np.ndarray
) -> List[Pose]:
    updated = []
    for pose, slot in zip(poses, slots):
        if slot is None:
            updated.append(pose)
        else:
            delta = Twist.from_vector(step[6 * slot : 6 * slot + 6])
            updated.append(compose(se3_exp(delta), pose))
    return updated


def optimize(
    problem: PoseGraphProblem,
    config: Optional[OptimizerConfig] = None,
    threads: int = 1,
) -> Tuple[List[Pose], OptReport]:
    """Minimise Σ θ̂ ‖r_ij‖² over every non-anchor pose."""
    config = config or OptimizerConfig()
    problem.validate()
    if all(edge.info_scale == 0 for edge in problem.edges):
        raise SingularNormalEquations("every edge has zero information")

    poses = list(problem.poses)
    slots = _variable_slots(len(poses), problem.anchor)
    cost = total_cost(poses, problem.edges)
    if not np.isfinite(cost):
        raise NonFiniteCost(f"initial cost is {cost!r}")

    initial_cost = cost
    costs = [cost]
    damping = config.damping
    accepted = 0
    iterations = 0
    termination = TerminationReason.MAX_ITERATIONS
    relinearise = True
    hessian = gradient = np.zeros(0)

    while iterations < config.max_iters:
        if relinearise:
            hessian, gradient = _normal_equations(
                problem, poses, slots, config.jacobian_eps, threads
            )
            relinearise = False
        if np.max(np.abs(gradient)) < config.tol:
            termination = TerminationReason.GRADIENT
            break

        iterations += 1
        step = _solve_damped(hessian, gradient, damping)
        candidate = _apply_step(poses, slots, step)
        try:
            new_cost = total_cost(candidate, problem.edges)
        except AngleNearPi:
            # residual log undefined at the trial point: reject and damp
            new_cost = np.inf
        else:
            if not np.isfinite(new_cost):
                raise NonFiniteCost(f"cost became {new_cost!r} at iteration {iterations}")

        if new_cost < cost:
            decrease = cost - new_cost
            poses, cost = candidate, new_cost
            damping /= config.damping_factor
            accepted += 1
            relinearise = True
            costs.append(cost)
            log_numeric_event("pose_opt", "Step accepted", iteration=iterations, cost=cost, damping=damping)
            if decrease < config.tol * costs[-2]:
                termination = TerminationReason.COST_CHANGE
                break
        else:
            damping *= config.damping_factor
            costs.append(cost)
            log_numeric_event("pose_opt", "Step rejected", iteration=iterations, damping=damping)
            if damping > config.max_damping:
                termination = TerminationReason.DAMPING_LIMIT
                break

    report = OptReport(
        iterations=iterations,
        accepted_steps=accepted,
        initial_cost=initial_cost,
        final_cost=cost,
        costs=costs,
        termination=termination,
        final_damping=damping,
    )
    logger.info(
        "Pose graph optimised",
        poses=len(poses),
        edges=len(problem.edges),
        iterations=iterations,
        initial_cost=initial_cost,
        final_cost=cost,
        termination=termination.value,
    )
    return poses, report


def odometry_edges(poses: Sequence[Pose]) -> List[PoseGraphEdge]:
    """Exact (k, k+1) edges measured from ``poses``."""
    return [
        PoseGraphEdge(k, k + 1, relative(poses[k], poses[k + 1]), 1.0, EdgeKind.ODOMETRY)
        for k in range(len(poses) - 1)
    ]


def simulate_odometry(
    trajectory: Sequence[Pose],
    sigma_t: float = 0.02,
    sigma_r: float = 0.01,
    seed: int = 0,
) -> Tuple[List[PoseGraphEdge], List[Pose]]:
    """Noisy odometry edges and the dead-reckoned trajectory they integrate to.

    Each true step is right-multiplied by exp of a twist with N(0, σ_t²)
    translation and N(0, σ_r²) rotation components. The first pose is kept.
    """
    rng = np.random.default_rng(seed)
    edges = []
    estimate = [trajectory[0]]
    for k in range(len(trajectory) - 1):
        noise = np.concatenate([rng.normal(0.0, sigma_t, 3), rng.normal(0.0, sigma_r, 3)])
        measured = compose(relative(trajectory[k], trajectory[k + 1]), se3_exp(Twist.from_vector(noise)))
        edges.append(PoseGraphEdge(k, k + 1, measured, 1.0, EdgeKind.ODOMETRY))
        estimate.append(compose(estimate[-1], measured))
    return edges, estimate


def build_problem_from_matches(
    initial_poses: Sequence[Pose],
    odometry: Sequence[PoseGraphEdge],
    matches: Sequence[QueryMatch],
    similarity: Optional[Sequence[float]] = None,
    reference_poses: Optional[Sequence[Pose]] = None,
    anchor: int = 0,
) -> PoseGraphProblem:
    """Odometry chain plus one loop edge per match.

    Loop edges measure ``relative(ref[query], ref[reference])`` from
    ``reference_poses`` (ground truth for synthetic data, otherwise an external
    estimate) and carry θ̂ from ``similarity``. Without it θ̂ is the match
    score clipped to [0, 1].
    """
    n = len(initial_poses)
    reference_poses = initial_poses if reference_poses is None else reference_poses
    if len(reference_poses) != n:
        raise IndexOutOfRange(f"{len(reference_poses)} reference poses for {n} keyframes")
    if similarity is not None and len(similarity) != len(matches):
        raise IndexOutOfRange(f"{len(similarity)} similarity values for {len(matches)} matches")

    edges = list(odometry)
    for index, match in enumerate(matches):
        i, j = int(match.query_index), int(match.reference_index)
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRange(f"match ({i}, {j}) outside [0, {n})")
        theta = float(np.clip(match.score, 0.0, 1.0) if similarity is None else similarity[index])
        edges.append(
            PoseGraphEdge(i, j, relative(reference_poses[i], reference_poses[j]), theta, EdgeKind.LOOP)
        )
    return PoseGraphProblem(tuple(initial_poses), tuple(edges), anchor)


def loop_gap(poses: Sequence[Pose], edge: PoseGraphEdge) -> float:
    """Translational disagreement (m) between an edge's measurement and the estimates."""
    error = compose(compose(edge.measured, inverse(poses[edge.j])), poses[edge.i])
    return float(np.linalg.norm(error.translation))
