"""Vector-measure ranges on [0,1] via the one-step control reduction.

A nonnegative vector density over an atomless base measure induces the set
W = {integral of the density over B : B Borel}.  Encoding set membership as a
two-action one-step decision problem (take the density's reward or zero,
then stop) makes W the performance set of an MDP whose policies are interval
partitions, so the range is convex and every point of it is attained by a
finite union of intervals, found constructively by the derandomizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CertifiedFailure, ModelFormatError
from .geometry import distance_to_hull
from .measure import PieceMeasure
from .model import AtomlessMDP, DeterministicPolicy, StationaryPolicy, weighted_transform
from .derandomize import derandomize, distance_to_performance_set
from .occupancy import performance
from .scalar_dp import SubmodelSpec, support

__all__ = [
    "VectorMeasure",
    "IntervalSet",
    "RangeHull",
    "as_onestep_mdp",
    "range_hull",
    "find_set",
    "brute_force_range",
]


class VectorMeasure:
    """Atomless vector measure: nonnegative cellwise densities over a base measure."""

    __slots__ = ("base", "densities")

    def __init__(self, base: PieceMeasure, densities):
        dens = np.asarray(densities, dtype=float)
        if dens.ndim != 2 or dens.shape[0] != base.partition.cell_count:
            raise ValueError("densities must be (cells, criteria)")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValueError("densities must be finite and nonnegative")
        if abs(base.total - 1.0) > 1e-12:
            raise ValueError("base measure must be a probability measure")
        dens = dens.copy()
        dens.setflags(write=False)
        self.base = base
        self.densities = dens

    @property
    def criteria(self) -> int:
        return self.densities.shape[1]

    def total(self) -> np.ndarray:
        return self.densities.T @ self.base.masses

    def integrate(self, sets: "IntervalSet") -> np.ndarray:
        """Exact integral of the densities over the interval union."""
        out = np.zeros(self.criteria)
        for lo, hi in sets.intervals:
            out += self.densities.T @ self._cell_masses(lo, hi)
        return out

    def _cell_masses(self, lo: float, hi: float) -> np.ndarray:
        # base mass of [lo, hi] within each cell: clip the cumulative masses
        part = self.base.partition
        cum_lo = np.interp(np.clip(lo, 0, 1), part.points, self.base._cum)
        cum_hi = np.interp(np.clip(hi, 0, 1), part.points, self.base._cum)
        cut = np.clip(self.base._cum, cum_lo, cum_hi)
        return np.diff(cut)


@dataclass(frozen=True)
class IntervalSet:
    """Finite union of disjoint, sorted subintervals of [0,1]."""

    intervals: tuple

    def __post_init__(self):
        prev = -1.0
        for lo, hi in self.intervals:
            if not (0.0 <= lo < hi <= 1.0):
                raise ValueError(f"bad interval ({lo}, {hi})")
            if lo < prev:
                raise ValueError("intervals must be sorted and disjoint")
            prev = hi

    @classmethod
    def from_policy(cls, policy: DeterministicPolicy, action: int = 1) -> "IntervalSet":
        phi = policy.canonical()
        pts = phi.partition.points
        rows = [
            (float(pts[k]), float(pts[k + 1]))
            for k in range(phi.partition.cell_count)
            if phi.actions[k] == action
        ]
        return cls(tuple(rows))

    def measure(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def complement(self) -> "IntervalSet":
        out, cursor = [], 0.0
        for lo, hi in self.intervals:
            if lo > cursor:
                out.append((cursor, lo))
            cursor = hi
        if cursor < 1.0:
            out.append((cursor, 1.0))
        return IntervalSet(tuple(out))


def as_onestep_mdp(vm: VectorMeasure) -> AtomlessMDP:
    """Two actions everywhere: collect the density vector and stop, or just stop.

    The performance set of the result is exactly the range of the vector
    measure.  Large densities are tamed by the weight 1 + sum of densities,
    which preserves performance vectors policy by policy.
    """
    grid = vm.base.partition
    m = grid.cell_count
    rewards = np.zeros((m, 2, vm.criteria))
    rewards[:, 1, :] = vm.densities
    model = AtomlessMDP(
        grid=grid,
        action_count=2,
        available=[(0, 1)] * m,
        kernel=np.zeros((m, 2, m)),
        absorb=np.ones((m, 2)),
        rewards=rewards,
        initial=vm.base,
        kind="absorbing",
    )
    if float(vm.densities.sum(axis=1).max(initial=0.0)) > 100.0:
        model = weighted_transform(model, 1.0 + vm.densities.sum(axis=1))
    return model


def _directions(count: int, dim: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        thetas = np.linspace(0.0, 2 * np.pi, max(count, 3), endpoint=False)
        return np.column_stack([np.cos(thetas), np.sin(thetas)])
    if dim == 3:
        i = np.arange(max(count, 4)) + 0.5
        phi = np.arccos(1 - 2 * i / max(count, 4))
        theta = np.pi * (1 + 5**0.5) * i
        return np.column_stack(
            [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
        )
    raise ValueError("direction generation supports up to three criteria")


@dataclass
class RangeHull:
    """Inner and outer approximations of a vector-measure range."""

    directions: np.ndarray          # (k, N) unit directions
    support_values: np.ndarray      # h(b) per direction
    direction_vertices: np.ndarray  # (k, N) attained vertex per direction
    vertices: np.ndarray            # deduplicated inner points (subset of the range)
    vertex_policies: list           # one-step policies attaining the inner points
    gap: float                      # certified Hausdorff gap outer vs inner

    def contains_in_outer(self, point, tol: float = 1e-9) -> bool:
        return bool(np.all(self.directions @ point <= self.support_values + tol))


def range_hull(vm: VectorMeasure, direction_count: int = 64) -> RangeHull:
    """Sandwich the range: hull of attained vertices inside, supporting
    half-spaces outside, plus the Hausdorff gap between the two."""
    model = as_onestep_mdp(vm)
    dirs = _directions(direction_count, vm.criteria)
    values, verts, policies = [], [], []
    for b in dirs:
        h, policy = support(model, b)
        values.append(h)
        verts.append(performance(model, policy, tol=1e-12))
        policies.append(policy)
    values = np.asarray(values)
    verts_arr = np.asarray(verts)
    _, idx = np.unique(np.round(verts_arr, 12), axis=0, return_index=True)
    keep = np.sort(idx)
    gap = _hausdorff_gap(dirs, values, verts_arr[keep], vm.criteria)
    return RangeHull(dirs, values, verts_arr, verts_arr[keep],
                     [policies[i] for i in keep], gap)


def _hausdorff_gap(dirs, values, verts, dim) -> float:
    """Largest distance from an outer-polytope vertex to the inner hull."""
    if dim == 1:
        hi_out, lo_out = values[0], -values[1]
        return float(max(hi_out - verts.max(), verts.min() - lo_out, 0.0))
    try:
        from scipy.optimize import linprog
        from scipy.spatial import HalfspaceIntersection

        # Chebyshev center of the outer polytope as a feasible interior point
        norms = np.linalg.norm(dirs, axis=1)
        res = linprog(
            c=np.concatenate([np.zeros(dim), [-1.0]]),
            A_ub=np.column_stack([dirs, norms]),
            b_ub=values,
            bounds=[(None, None)] * dim + [(0, None)],
            method="highs",
        )
        if not res.success or res.x[-1] <= 1e-12:
            raise ValueError("outer polytope has no interior")
        center = res.x[:dim]
        half = np.column_stack([dirs, -values])
        outer_pts = HalfspaceIntersection(half, center).intersections
    except Exception:
        # degenerate (flat) outer set: fall back to the directional mismatch
        return float(np.max(values - (verts @ dirs.T).max(axis=0)))
    gap = 0.0
    for p in outer_pts:
        d, _, _ = distance_to_hull(verts, p)
        gap = max(gap, d)
    return float(gap)


def find_set(vm: VectorMeasure, target, tol: float = 1e-8) -> IntervalSet:
    """Interval union whose vector integral hits the target within tol.

    A mixture of vertex indicator policies achieves the target exactly in one
    step; derandomizing that mixture produces a deterministic threshold policy
    whose action-one region is the set.  Every call self-checks the returned
    set by direct integration.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (vm.criteria,):
        raise ValueError("target dimension mismatch")
    model = as_onestep_mdp(vm)
    res = distance_to_performance_set(SubmodelSpec.full(model), target,
                                      tol=min(1e-9, 0.1 * tol))
    if res.g > 0.5 * tol:
        if res.lower > 0.5 * tol:
            raise ModelFormatError(
                "target",
                f"outside the attainable range by at least {res.lower:.3e}",
            )
        raise ModelFormatError(
            "target",
            f"undecidable at this resolution (distance within [{res.lower:.1e}, {res.g:.1e}])",
        )

    # stationary mixture of the witness vertex policies
    weights = [(w, p) for w, p in res.witness if w > 0]
    parts = [p.partition for _, p in weights]
    part = parts[0]
    for extra in parts[1:]:
        part = part.refine(extra)
    probs = np.zeros((part.cell_count, model.action_count))
    for w, p in weights:
        acts = p.refined_to(part).actions
        probs[np.arange(part.cell_count), acts] += w
    probs /= probs.sum(axis=1, keepdims=True)
    pi = StationaryPolicy(part, probs)

    try:
        phi, _ = derandomize(model, pi, tol=0.8 * tol)
    except CertifiedFailure:
        # a rough set suffices: the boundary polish below is exact for the
        # piecewise-constant densities
        phi, _ = derandomize(model, pi, tol=max(100.0 * tol, 1e-6))
    out = IntervalSet.from_policy(phi, action=1)
    achieved = vm.integrate(out)
    residual = float(np.linalg.norm(achieved - target))
    if residual > 0.25 * tol:
        out, residual = _newton_boundaries(vm, out, target)
    if residual > tol:
        raise CertifiedFailure("returned set misses the target", residual=residual)
    return out


def _newton_boundaries(vm: VectorMeasure, sets: IntervalSet, target, rounds: int = 10):
    """Slide interval boundaries to cancel the integration residual.

    The integral is piecewise linear in each boundary with slope equal to the
    density there (signed by which side the set lies on), so damped
    least-squares Newton steps converge in a couple of rounds.
    """
    part = vm.base.partition
    mu_density = vm.base.densities()
    target = np.asarray(target, dtype=float)

    best_sets, best_res = sets, np.inf
    bounds = np.array([x for pair in sets.intervals for x in pair])
    for _ in range(rounds):
        cur = IntervalSet(tuple((bounds[2 * i], bounds[2 * i + 1])
                                for i in range(bounds.size // 2)))
        res = target - vm.integrate(cur)
        r_norm = float(np.linalg.norm(res))
        if r_norm < best_res:
            best_sets, best_res = cur, r_norm
        if r_norm <= 1e-13 * (1.0 + float(np.abs(target).max())):
            break
        jac = np.zeros((vm.criteria, bounds.size))
        for j, t in enumerate(bounds):
            cell = part.cell_of(min(max(t, 0.0), 1.0 - 1e-15))
            sign = 1.0 if j % 2 else -1.0    # moving a right endpoint grows the set
            jac[:, j] = sign * vm.densities[cell] * mu_density[cell]
        step, *_ = np.linalg.lstsq(jac, res, rcond=None)
        # keep boundaries ordered and inside [0,1]
        lo_lim = np.concatenate(([0.0], bounds[:-1]))
        hi_lim = np.concatenate((bounds[1:], [1.0]))
        room = np.maximum(np.minimum(bounds - lo_lim, hi_lim - bounds), 0.0)
        step = np.clip(step, -0.49 * room, 0.49 * room)
        if not np.any(step):
            break
        bounds = np.clip(bounds + step, 0.0, 1.0)
    return best_sets, best_res


def brute_force_range(vm: VectorMeasure, max_cells: int = 12) -> np.ndarray:
    """All integrals over unions of whole base cells (2^M points).

    A test oracle: the returned points all lie in the range, and their hull
    is an inner polytope of it.
    """
    m = vm.base.partition.cell_count
    if m > max_cells:
        raise ValueError(f"brute force limited to {max_cells} cells, got {m}")
    contributions = vm.densities * vm.base.masses[:, None]   # (cells, N)
    subsets = ((np.arange(2**m)[:, None] >> np.arange(m)) & 1).astype(float)
    return subsets @ contributions
