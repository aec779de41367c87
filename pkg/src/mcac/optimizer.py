"""Projected-gradient minimisation of the contour energy under the matching constraint.

The pose is optimised in the chart ``(A^{-1}, b)``.  While the matching energy
sits comfortably below the constraint level ``tau`` the step follows the plain
contour-energy gradient; inside the band around ``tau`` each parameter block
is projected onto the orthogonal complement of the matching gradient so the
constraint is preserved to first order.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .active_contour import EdgeIndicatorField, gac_energy, grad_J_pose
from .affine_shape import PosedShape, rasterize
from .contour import extract_contour
from .core import DET_MIN, AffineMap
from .errors import EmptyContour, InfeasibleStart, SingularMap, StalledStep, VanishingGradient
from .matching import MatchProblem, grad_match, match_energy
from .shape_model import RbfShapeModel

log = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["iter", "E", "J", "a11", "a12", "a21", "a22", "b1", "b2", "step_accepted"]


def project_gradient(grad_j, grad_e, floor: float = 1e-12) -> np.ndarray:
    """Remove from ``grad_j`` its component along ``grad_e`` (Frobenius inner product)."""
    gj = np.asarray(grad_j, dtype=float)
    ge = np.asarray(grad_e, dtype=float)
    if gj.shape != ge.shape:
        raise ValueError(f"shape mismatch {gj.shape} vs {ge.shape}")
    norm = np.linalg.norm(ge)
    if norm < floor:
        return gj.copy()
    e_hat = ge / norm
    r = gj - np.sum(gj * e_hat) * e_hat
    # A second pass removes the rounding left along e_hat by the first.
    r = r - np.sum(r * e_hat) * e_hat
    # A residual at rounding level means grad_j was parallel to grad_e.
    if np.linalg.norm(r) <= 1e-12 * np.linalg.norm(gj):
        return np.zeros_like(gj)
    return r


@dataclass(frozen=True, eq=False)
class McacState:
    pose: AffineMap
    E: float
    J: float
    iteration: int = 0
    step_accepted: bool = True


@dataclass
class OptimizerConfig:
    tau: float = 0.0
    step_A: float = 0.02   # Frobenius length of the A^{-1} change at full step
    step_b: float = 1.0    # pixels of translation at full step
    max_iters: int = 200
    param_change_tol: float = 1e-4
    tau_band: float = 0.0
    max_halvings: int = 30
    det_min: float = DET_MIN

    def __post_init__(self):
        if self.tau > 0:
            raise ValueError("tau must be <= 0")
        if self.step_A <= 0 or self.step_b <= 0 or self.param_change_tol <= 0 or self.tau_band < 0:
            raise ValueError("step sizes and tolerances must be positive")


def default_tau(e_init: float, ratio: float = 0.9) -> tuple[float, float]:
    """(tau, tau_band) for a starting matching energy: tau = ratio * E_init, band = 1% of |tau|."""
    tau = ratio * e_init
    return tau, 0.01 * abs(tau)


@dataclass
class McacContext:
    """Everything a step needs besides the pose."""

    model: RbfShapeModel
    problem: MatchProblem
    edges: EdgeIndicatorField
    width: int
    height: int
    _cache: dict = field(default_factory=dict, repr=False)

    def contours(self, pose: AffineMap):
        key = pose.params().tobytes()
        hit = self._cache.get(key)
        if hit is None:
            s = PosedShape(self.model, pose)
            phi = rasterize(s, self.width, self.height)
            hit = (s, phi, extract_contour(phi))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = hit
        return hit

    def J(self, pose: AffineMap) -> float:
        return gac_energy(self.contours(pose)[2], self.edges)

    def E(self, pose: AffineMap) -> float:
        return match_energy(self.problem, pose)

    def state(self, pose: AffineMap, iteration: int = 0, accepted: bool = True) -> McacState:
        return McacState(pose, self.E(pose), self.J(pose), iteration, accepted)

    def grad_J(self, pose: AffineMap):
        s, phi, contours = self.contours(pose)
        return grad_J_pose(s, contours, phi, self.edges)

    def grad_E(self, pose: AffineMap):
        """Matching gradient moved to the (A^{-1}, b) chart."""
        ga, gb = grad_match(self.problem, pose)
        a = pose.a
        return -a.T @ ga @ a.T, gb


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def step_direction(state: McacState, ctx: McacContext, cfg: OptimizerConfig):
    """Descent direction over (A^{-1}, b) and whether projection was applied."""
    gj_a, gj_b = ctx.grad_J(state.pose)
    if state.E < cfg.tau - cfg.tau_band:
        return -gj_a, -gj_b, False
    ge_a, ge_b = ctx.grad_E(state.pose)
    return -project_gradient(gj_a, ge_a), -project_gradient(gj_b, ge_b), True


def mcac_step(state: McacState, ctx: McacContext, cfg: OptimizerConfig) -> McacState:
    """One backtracking step; J never increases and the pose stays invertible.

    Raises StalledStep when 30 halvings (``cfg.max_halvings``) find no acceptable step.
    """
    d_a, d_b, _ = step_direction(state, ctx, cfg)
    if not (np.any(d_a) or np.any(d_b)):
        return McacState(state.pose, state.E, state.J, state.iteration + 1, True)
    d_a = cfg.step_A * _unit(d_a)
    d_b = cfg.step_b * _unit(d_b)
    a_inv = np.linalg.inv(state.pose.a)
    t = 1.0
    for _ in range(cfg.max_halvings):
        cand_inv = a_inv + t * d_a
        if abs(np.linalg.det(cand_inv)) >= cfg.det_min:
            try:
                pose = AffineMap(np.linalg.inv(cand_inv), state.pose.b + t * d_b)
                if pose.is_valid(cfg.det_min):
                    J = ctx.J(pose)
                    E = ctx.E(pose)
                    if J <= state.J and E <= cfg.tau + cfg.tau_band:
                        return McacState(pose, E, J, state.iteration + 1, True)
            except (EmptyContour, SingularMap):
                pass
        t *= 0.5
    raise StalledStep(f"no acceptable step after {cfg.max_halvings} halvings")


def run_mcac(initial: McacState, ctx: McacContext, cfg: OptimizerConfig) -> list[McacState]:
    """Iterate :func:`mcac_step` until the pose stops moving.

    Convergence is a mean absolute change of the six pose parameters below
    ``cfg.param_change_tol``.  A stalled line search also ends the run: no
    admissible step decreases J any further.
    """
    if initial.E > cfg.tau:
        raise InfeasibleStart(
            f"initial matching energy {initial.E:.6g} exceeds tau {cfg.tau:.6g}; "
            "raise |tau| (e.g. a smaller tau ratio) or improve the initial matching")
    traj = [initial]
    state = initial
    for _ in range(cfg.max_iters):
        try:
            new = mcac_step(state, ctx, cfg)
        except (StalledStep, VanishingGradient) as exc:
            log.debug("stopping at iteration %d: %s", state.iteration, exc)
            traj.append(McacState(state.pose, state.E, state.J, state.iteration + 1, False))
            break
        change = float(np.mean(np.abs(new.pose.params() - state.pose.params())))
        traj.append(new)
        state = new
        if change < cfg.param_change_tol:
            break
    return traj


def write_trajectory_csv(path, traj) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRAJECTORY_HEADER)
        for s in traj:
            a, b = s.pose.a, s.pose.b
            wr.writerow([s.iteration, f"{s.E:.10g}", f"{s.J:.10g}",
                         *(f"{v:.10g}" for v in (*a.ravel(), *b)), int(s.step_accepted)])
