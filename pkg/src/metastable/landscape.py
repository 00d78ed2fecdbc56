"""Critical-point location and double-well validation.

Critical points are found by multi-start damped Newton iteration on
grad U = 0, classified by Hessian inertia, and assembled into a landscape
report holding the two minima, the connecting index-1 saddle, the barrier
heights and the saddle's unstable curvature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ClassificationError, InputError, StructuralError
from .potentials import PotentialModel, hamiltonian

NEWTON_TOL = 1.0e-10
DEDUP_TOL = 1.0e-6
DEGENERACY_TOL = 1.0e-8


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    kind: str  # minimum | index-1-saddle | other
    hessian_eigenvalues: np.ndarray
    hessian_eigenvectors: np.ndarray
    energy: float


@dataclass(frozen=True)
class LandscapeReport:
    minimum_m: CriticalPoint
    minimum_s: CriticalPoint
    saddle: CriticalPoint
    barrier_from_m: float
    barrier_from_s: float
    lambda_sigma: float
    is_valid_double_well: bool

    @property
    def minima(self):
        return (self.minimum_m, self.minimum_s)


def _newton_solve(model, seed_point, max_iter=200):
    """Damped Newton on grad U = 0; returns the converged point or None."""
    x = np.array(seed_point, dtype=float)
    for _ in range(max_iter):
        g = model.gradient(x)
        if np.linalg.norm(g) < NEWTON_TOL:
            return x
        H = model.hessian(x)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(delta)):
            return None
        # backtracking damping on |grad U|
        lam = 1.0
        g_norm = np.linalg.norm(g)
        for _ in range(40):
            x_try = x + lam * delta
            if np.linalg.norm(model.gradient(x_try)) < g_norm:
                break
            lam *= 0.5
        else:
            return None
        x = x + lam * delta
    g = model.gradient(x)
    return x if np.linalg.norm(g) < NEWTON_TOL else None


def _classify(model, x):
    H = model.hessian(x)
    H = 0.5 * (H + H.T)
    eigvals, eigvecs = np.linalg.eigh(H)
    n_neg = int(np.sum(eigvals < -DEGENERACY_TOL))
    n_pos = int(np.sum(eigvals > DEGENERACY_TOL))
    d = model.dimension
    if n_pos == d:
        kind = "minimum"
    elif n_neg == 1 and n_pos == d - 1:
        kind = "index-1-saddle"
    else:
        kind = "other"
    return CriticalPoint(
        location=x,
        kind=kind,
        hessian_eigenvalues=eigvals,
        hessian_eigenvectors=eigvecs,
        energy=float(model.energy(x)),
    )


def find_critical_points(
    model: PotentialModel,
    box: Sequence,
    grid_density: int = 8,
) -> list:
    """Multi-start Newton search over a regular seed grid in an axis box.

    ``box`` is a sequence of (low, high) pairs, one per position axis.
    Non-converging seeds are skipped silently; converged points are
    deduplicated (distance < DEDUP_TOL) and sorted lexicographically so the
    result is independent of seed order.
    """
    if grid_density < 2:
        raise InputError("grid_density must be at least 2 per axis")
    bounds = [(float(lo), float(hi)) for lo, hi in box]
    if len(bounds) != model.dimension or any(hi <= lo for lo, hi in bounds):
        raise InputError("box must give a nonempty (low, high) pair per axis")
    axes = [np.linspace(lo, hi, grid_density) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    seeds = np.stack([m.ravel() for m in mesh], axis=1)

    found = []
    for seed_point in seeds:
        x = _newton_solve(model, seed_point)
        if x is None:
            continue
        if not all(lo - 0.5 <= xi <= hi + 0.5 for xi, (lo, hi) in zip(x, bounds)):
            continue
        if any(np.linalg.norm(x - y) < DEDUP_TOL for y in found):
            continue
        found.append(x)
    found.sort(key=lambda v: tuple(v))
    return [_classify(model, x) for x in found]


def build_landscape(
    model: PotentialModel,
    critical_points: Sequence[CriticalPoint],
    start_well_hint: Optional[Sequence[float]] = None,
) -> LandscapeReport:
    """Select the two minima and the index-1 saddle; compute barriers.

    The starting well m is the minimum nearest ``start_well_hint`` when given.
    By default m is the minimum farther from the saddle, ties broken by
    lexicographically smaller position; either energy ordering U(m) vs U(s)
    is allowed.
    """
    minima = [c for c in critical_points if c.kind == "minimum"]
    saddles = [c for c in critical_points if c.kind == "index-1-saddle"]
    valid = len(minima) == 2 and len(saddles) == 1
    if not valid:
        if len(minima) < 2 or not saddles:
            raise StructuralError(
                f"not a double well: found {len(minima)} minima and {len(saddles)} index-1 saddles"
            )
        # structure exists but is ambiguous (e.g. triple well): report invalid
        minima = sorted(minima, key=lambda c: c.energy)[:2]
        saddles = sorted(saddles, key=lambda c: c.energy)[:1]
    saddle = saddles[0]
    if start_well_hint is not None:
        hint = np.asarray(start_well_hint, dtype=float)
        minima = sorted(minima, key=lambda c: np.linalg.norm(c.location - hint))
    else:
        minima = sorted(
            minima,
            key=lambda c: (-np.linalg.norm(c.location - saddle.location), tuple(c.location)),
        )
    m, s = minima[0], minima[1]
    lambda_sigma = -float(saddle.hessian_eigenvalues[0])
    report = LandscapeReport(
        minimum_m=m,
        minimum_s=s,
        saddle=saddle,
        barrier_from_m=float(saddle.energy - m.energy),
        barrier_from_s=float(saddle.energy - s.energy),
        lambda_sigma=lambda_sigma,
        is_valid_double_well=bool(
            valid and lambda_sigma > 0 and saddle.energy > max(m.energy, s.energy)
        ),
    )
    return report


def saddle_energy(report: LandscapeReport) -> float:
    """V at the phase-space saddle (sigma, 0)."""
    return float(report.saddle.energy)


def well_membership(
    model: PotentialModel,
    report: LandscapeReport,
    x,
    flow_ball: float = 1.0e-3,
    max_flow_time: float = 1.0e3,
) -> str:
    """Classify a phase point into W_m, W_s or outside.

    Points at or above the saddle energy are outside by definition; below it,
    the zero-noise flow is integrated until it settles into a ball around
    (m, 0) or (s, 0), which identifies the connected component.
    """
    from .dynamics import run_zero_noise_flow

    x = np.asarray(x, dtype=float)
    if hamiltonian(model, x) >= saddle_energy(report):
        return "outside"
    minima = np.array([report.minimum_m.location, report.minimum_s.location])
    result = run_zero_noise_flow(
        model, gamma=1.0, start=x, tol=flow_ball, max_time=max_flow_time, minima=minima
    )
    if not result.converged:
        raise ClassificationError(f"zero-noise flow failed to settle from {x}")
    d = model.dimension
    limit_q = result.limit_point[:d]
    if np.linalg.norm(limit_q - report.minimum_m.location) < np.linalg.norm(
        limit_q - report.minimum_s.location
    ):
        return "W_m"
    return "W_s"


def minimax_path_energy(
    model: PotentialModel,
    report: LandscapeReport,
    grid_density: int = 201,
    box_pad: float = 1.0,
) -> float:
    """Grid oracle for min over paths of max V between (m, 0) and (s, 0).

    Union-find sweep over grid cells sorted by V: the minimax level is the V
    value at which the two well cells first become connected.  For d = 1 the
    grid covers the (q, p) plane; for d = 2 it covers the position plane at
    p = 0 (V restricted there equals U).
    """
    d = model.dimension
    if d > 2:
        raise InputError("minimax grid oracle supports d <= 2 only")
    m_loc = report.minimum_m.location
    s_loc = report.minimum_s.location
    if np.allclose(m_loc, s_loc):
        return float(report.minimum_m.energy)

    pts = np.stack([m_loc, s_loc, report.saddle.location])
    lo = pts.min(axis=0) - box_pad
    hi = pts.max(axis=0) + box_pad
    if d == 1:
        ax0 = np.linspace(lo[0], hi[0], grid_density)
        ax1 = np.linspace(-box_pad, box_pad, grid_density)
        Q, P = np.meshgrid(ax0, ax1, indexing="ij")
        V = np.asarray(model.energy(Q.reshape(-1, 1))).reshape(Q.shape) + 0.5 * P**2
        start = (int(np.argmin(np.abs(ax0 - m_loc[0]))), int(np.argmin(np.abs(ax1))))
        goal = (int(np.argmin(np.abs(ax0 - s_loc[0]))), int(np.argmin(np.abs(ax1))))
        spacing = max(ax0[1] - ax0[0], ax1[1] - ax1[0])
    else:
        ax0 = np.linspace(lo[0], hi[0], grid_density)
        ax1 = np.linspace(lo[1], hi[1], grid_density)
        Q1, Q2 = np.meshgrid(ax0, ax1, indexing="ij")
        pts2 = np.stack([Q1.ravel(), Q2.ravel()], axis=1)
        V = np.asarray(model.energy(pts2)).reshape(Q1.shape)
        start = (
            int(np.argmin(np.abs(ax0 - m_loc[0]))),
            int(np.argmin(np.abs(ax1 - m_loc[1]))),
        )
        goal = (
            int(np.argmin(np.abs(ax0 - s_loc[0]))),
            int(np.argmin(np.abs(ax1 - s_loc[1]))),
        )
        spacing = max(ax0[1] - ax0[0], ax1[1] - ax1[0])

    level = _bottleneck_level(V, start, goal)
    if level is None:
        raise InputError(f"grid too coarse to connect the wells (spacing {spacing:.3g})")
    return float(level)


def _bottleneck_level(V, start, goal):
    """Union-find sweep: V-level at which start and goal become connected."""
    shape = V.shape
    order = np.argsort(V, axis=None)
    parent = np.full(V.size, -1, dtype=np.int64)  # -1 = not yet activated

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    start_i = np.ravel_multi_index(start, shape)
    goal_i = np.ravel_multi_index(goal, shape)
    ncol = shape[1]
    flat_V = V.ravel()
    for idx in order:
        parent[idx] = idx
        r, c = divmod(int(idx), ncol)
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < shape[0] and 0 <= cc < ncol:
                j = rr * ncol + cc
                if parent[j] != -1:
                    parent[find(j)] = find(idx)
        if parent[start_i] != -1 and parent[goal_i] != -1 and find(start_i) == find(goal_i):
            return flat_V[idx]
    return None
