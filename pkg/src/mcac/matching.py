"""Soft point matching energy, its pose gradients, and least-squares alignment.

For template points ``p_i`` moved to ``q_i = A p_i + b`` and target points
``t_j``, the proximity kernel ``exp(-|q_i - t_j|^2 / eps^2)`` is normalised over
``j`` for each ``i`` and the energy is

    E = -sum_ij exp(-c_ij) * d_ij,        sum_j d_ij = 1.

Normalisation uses a max-shift so rows never divide by zero for reachable poses.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DET_MIN, AffineMap, as_points
from .errors import DegenerateRow, DimensionMismatch, RankDeficient, SingularMap

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MatchProblem:
    source: np.ndarray
    target: np.ndarray
    cost: np.ndarray
    epsilon: float

    def __post_init__(self):
        src = np.array(self.source, dtype=float).reshape(-1, 2)
        tgt = np.array(self.target, dtype=float).reshape(-1, 2)
        cost = np.array(self.cost, dtype=float)
        if cost.shape != (len(src), len(tgt)):
            raise DimensionMismatch(f"cost is {cost.shape}, expected {(len(src), len(tgt))}")
        if not np.all(np.isfinite(cost)) or np.any(cost < 0):
            raise ValueError("costs must be finite and non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        for arr in (src, tgt, cost):
            arr.flags.writeable = False
        object.__setattr__(self, "source", src)
        object.__setattr__(self, "target", tgt)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def affinity(self) -> np.ndarray:
        """exp(-c_ij)."""
        return np.exp(-self.cost)


def default_epsilon(target) -> float:
    """Twice the median nearest-neighbour spacing of the target points."""
    t = as_points(target).reshape(-1, 2)
    if len(t) < 2:
        return 1.0
    d = np.linalg.norm(t[:, None, :] - t[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return 2.0 * float(np.median(d.min(axis=1)))


def _soft_assignment(p: MatchProblem, pose: AffineMap):
    q = p.source @ pose.a.T + pose.b
    diff = q[:, None, :] - p.target[None, :, :]
    s = -np.einsum("ijk,ijk->ij", diff, diff) / p.epsilon ** 2
    row_max = s.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(row_max)):
        raise DegenerateRow("non-finite distances in proximity kernel")
    k = np.exp(s - row_max)
    z = k.sum(axis=1, keepdims=True)
    # Without the shift, exp(row_max) is the row normaliser; report rows that would vanish.
    if np.any(row_max[:, 0] < -745.0):
        log.debug("proximity rows rescued by max-shift: %s", np.nonzero(row_max[:, 0] < -745.0)[0])
    return q, diff, k / z


def match_energy(p: MatchProblem, pose: AffineMap) -> float:
    _, _, d = _soft_assignment(p, pose)
    return -float(np.sum(p.affinity * d))


def row_sums(p: MatchProblem, pose: AffineMap) -> np.ndarray:
    _, _, d = _soft_assignment(p, pose)
    return d.sum(axis=1)


def grad_match(p: MatchProblem, pose: AffineMap, printed: bool = False):
    """Gradient of :func:`match_energy` with respect to ``(A, b)``.

    The default includes the pose dependence of the row normalisation and is
    the exact derivative.  ``printed=True`` returns the widely quoted form

        grad_A = -sum_ij c^_ij g_ij (A p_i + b - t_j) p_i^T,  grad_b likewise,

    with ``g_ij = (2/eps^2) d_ij`` held constant, which ignores the normaliser.
    """
    _, diff, d = _soft_assignment(p, pose)
    c_hat = p.affinity
    k = 2.0 / p.epsilon ** 2
    if printed:
        coef = -c_hat * k * d
    else:
        c_bar = np.sum(c_hat * d, axis=1, keepdims=True)
        coef = k * d * (c_hat - c_bar)
    dq = np.einsum("ij,ijk->ik", coef, diff)
    return dq.T @ p.source, dq.sum(axis=0)


def initial_alignment(src, tgt, corr) -> AffineMap:
    """Least-squares (A, b) with A p_i + b ~ t_j over the matched pairs."""
    src = as_points(src).reshape(-1, 2)
    tgt = as_points(tgt).reshape(-1, 2)
    corr = np.asarray(corr, dtype=int).reshape(-1, 2)
    if np.any(corr < 0) or np.any(corr[:, 0] >= len(src)) or np.any(corr[:, 1] >= len(tgt)):
        raise ValueError("correspondence index out of range")
    if len(np.unique(corr[:, 0])) != len(corr):
        raise ValueError("each source index may appear at most once")
    if len(corr) < 3:
        raise RankDeficient(f"need at least 3 correspondences, got {len(corr)}")
    P = src[corr[:, 0]]
    Q = tgt[corr[:, 1]]
    X = np.hstack([P, np.ones((len(P), 1))])
    sol, _, rank, _ = np.linalg.lstsq(X, Q, rcond=None)
    if rank < 3:
        raise RankDeficient("source points are collinear")
    return AffineMap(sol[:2].T, sol[2])


@dataclass
class AlignConfig:
    step: float = 1e-2
    max_iters: int = 500
    param_change_tol: float = 1e-6
    grad_tol: float = 1e-10
    max_halvings: int = 40
    det_min: float = DET_MIN
    # "printed": fixed-weight direction of grad_match(printed=True), negated so it
    # pulls moved points toward their weighted targets; "exact": -grad of E.
    direction: str = "printed"


def refine_alignment(p: MatchProblem, pose0: AffineMap, cfg: AlignConfig | None = None) -> AffineMap:
    """Backtracking descent on E over the six pose parameters.

    With the default ``direction="printed"`` each step moves along the
    fixed-weight attraction of the moved points toward the targets, i.e. the
    update of ``grad_match(printed=True)`` read as the gradient of -E.  The
    exact gradient of the normalised energy also rewards pushing every moved
    point away from its non-matching targets, so unrestricted descent on it
    tends to inflate the pose; it stays available as ``direction="exact"``.
    Either way a step is accepted only if it strictly lowers E (with uniform
    costs E is constant and the pose is returned unchanged).  Stops when the
    mean absolute parameter change of an accepted step falls below
    ``cfg.param_change_tol``, when no decreasing step is found, or after
    ``cfg.max_iters`` iterations.
    """
    cfg = cfg or AlignConfig()
    if not pose0.is_valid(cfg.det_min):
        raise SingularMap("initial pose is not invertible")
    theta = pose0.params()
    energy = match_energy(p, pose0)
    step = cfg.step
    for _ in range(cfg.max_iters):
        pose = AffineMap.from_params(theta)
        if cfg.direction == "exact":
            ga, gb = grad_match(p, pose)
        else:
            ga, gb = grad_match(p, pose, printed=True)
            ga, gb = -ga, -gb
        g = np.concatenate([ga.ravel(), gb])
        gg = float(g @ g)
        if gg <= cfg.grad_tol ** 2:
            break
        for _ in range(cfg.max_halvings):
            cand = theta - step * g
            cpose = AffineMap.from_params(cand)
            if cpose.is_valid(cfg.det_min):
                ce = match_energy(p, cpose)
                if ce < energy:
                    break
            step *= 0.5
        else:
            break
        change = float(np.mean(np.abs(cand - theta)))
        theta, energy = cand, ce
        step *= 2.0
        if change < cfg.param_change_tol:
            break
    return AffineMap.from_params(theta)


def build_cost_matrix(src_desc, tgt_desc) -> np.ndarray:
    """Squared descriptor distances scaled so the median entry is 1."""
    a = np.atleast_2d(np.asarray(src_desc, dtype=float))
    b = np.atleast_2d(np.asarray(tgt_desc, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"descriptor lengths differ: {a.shape[1]} vs {b.shape[1]}")
    diff = a[:, None, :] - b[None, :, :]
    c = np.einsum("ijk,ijk->ij", diff, diff)
    med = float(np.median(c))
    return c / med if med > 0 else c


def greedy_correspondences(cost) -> np.ndarray:
    """Each source point paired with its cheapest target (row-wise argmin)."""
    cost = np.asarray(cost, dtype=float)
    return np.stack([np.arange(len(cost)), np.argmin(cost, axis=1)], axis=1)


# -- CSV interfaces --------------------------------------------------------

def _rows(path):
    """Numeric CSV rows; a header or blank line is skipped."""
    with open(Path(path), newline="") as fh:
        for row in csv.reader(fh):
            try:
                float(row[0])
            except (ValueError, IndexError):
                continue
            yield row


def read_points_csv(path) -> np.ndarray:
    return np.array([[float(r[0]), float(r[1])] for r in _rows(path)]).reshape(-1, 2)


def write_points_csv(path, pts) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "y"])
        for x, y in np.asarray(pts, dtype=float).tolist():
            wr.writerow([repr(x), repr(y)])


def read_correspondences_csv(path) -> np.ndarray:
    return np.array([[int(r[0]), int(r[1])] for r in _rows(path)], dtype=int).reshape(-1, 2)


def write_correspondences_csv(path, corr) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["i", "j"])
        for i, j in np.asarray(corr, dtype=int).tolist():
            wr.writerow([i, j])
