"""Constructive derandomization of stationary policies.

The pipeline realizes any target performance vector of a two-policy submodel
by a deterministic threshold construction:

* the occupancy measure q of the half/half average of the two policies orders
  the state space, and quantile thresholds of q cut out policies phi_alpha
  that interpolate continuously (in occupancy total variation) between the
  endpoints;
* for one criterion a bisection over the threshold hits any intermediate
  value exactly (intermediate value theorem);
* for several criteria, the largest alpha whose frozen submodel still attains
  the target admits a supporting direction there; keeping only the actions
  that conserve the scalarized optimum pins one coordinate affinely to the
  others and drops the dimension by one.

A general stationary policy is first decomposed into a convex combination of
at most N+1 deterministic vertex policies (Caratheodory over the support
oracle) and then folded pairwise through the mixer.  Every stage verifies its
own output; failures carry the best achieved residual, never silence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CertifiedFailure
from .geometry import caratheodory_prune, distance_to_hull
from .measure import PieceMeasure, refine
from .model import (
    AtomlessMDP,
    DeterministicPolicy,
    StationaryPolicy,
    validate_policy,
)
from .occupancy import occupancy, performance
from .scalar_dp import SubmodelSpec, conserving_submodel, support, value_iteration

__all__ = [
    "TwoPolicyContext",
    "MixCertificate",
    "make_context",
    "path_policy",
    "tv_modulus",
    "distance_to_performance_set",
    "DistanceResult",
    "alpha_hat",
    "mix_pair",
    "caratheodory",
    "derandomize",
]

EVAL_TOL = 1e-12          # occupancy truncation for performance evaluations


def _perf(model: AtomlessMDP, policy) -> np.ndarray:
    """Cached tight-tolerance performance evaluation."""
    cache = getattr(model, "_perf_cache", None)
    if cache is None:
        cache = {}
        model._perf_cache = cache
    if isinstance(policy, DeterministicPolicy):
        key = (policy.partition.points.tobytes(), policy.actions.tobytes())
    else:
        key = (policy.partition.points.tobytes(), policy.probs.tobytes())
    hit = cache.get(key)
    if hit is None:
        hit = performance(model, policy, tol=EVAL_TOL)
        cache[key] = hit
    return hit


# ---------------------------------------------------------------------------
# two-policy context and the threshold path
# ---------------------------------------------------------------------------


@dataclass
class TwoPolicyContext:
    """Shared data for constructions over the submodel {phi0(x), phi1(x)}."""

    model: AtomlessMDP
    phi0: DeterministicPolicy
    phi1: DeterministicPolicy
    pi_star: StationaryPolicy      # the half/half average
    q: PieceMeasure                # state occupancy of pi_star

    @property
    def partition(self):
        return self.pi_star.partition

    def submodel(self) -> SubmodelSpec:
        return SubmodelSpec.from_pair(self.model, self.phi0, self.phi1)

    def threshold(self, alpha: float) -> float:
        return self.q.quantile(alpha)[0]

    def submodel_at(self, alpha: float) -> SubmodelSpec:
        """Action sets with phi1 forced below the alpha-threshold of q."""
        return self.submodel().frozen_below(self.threshold(alpha), self.phi1)


def make_context(model: AtomlessMDP, phi0: DeterministicPolicy,
                 phi1: DeterministicPolicy) -> TwoPolicyContext:
    validate_policy(model, phi0)
    validate_policy(model, phi1)
    part = refine(refine(phi0.partition, phi1.partition), model.grid)
    a0 = phi0.refined_to(part).actions
    a1 = phi1.refined_to(part).actions
    probs = np.zeros((part.cell_count, model.action_count))
    rows = np.arange(part.cell_count)
    probs[rows, a0] += 0.5
    probs[rows, a1] += 0.5
    pi_star = StationaryPolicy(part, probs)
    q = occupancy(model, pi_star, tol=EVAL_TOL).state_marginal().coarsened_to(model.grid)
    return TwoPolicyContext(model, phi0, phi1, pi_star, q)


def path_policy(ctx: TwoPolicyContext, alpha: float) -> DeterministicPolicy:
    """Threshold policy: phi1 strictly below the alpha-quantile of q, phi0 from it on."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0,1]")
    t = ctx.threshold(alpha)
    part = ctx.partition.with_point(t)
    a0 = ctx.phi0.refined_to(part).actions
    a1 = ctx.phi1.refined_to(part).actions
    mids = 0.5 * (part.points[:-1] + part.points[1:])
    actions = np.where(mids < t, a1, a0)
    return DeterministicPolicy(part, actions).canonical()


def tv_modulus(ctx: TwoPolicyContext, delta: float) -> float:
    """Certified bound on d_TV between occupancy measures of path policies
    whose alpha parameters differ by delta.

    The policies disagree on a set of q-mass q(X) * delta; cutting the series
    at any horizon l bounds the difference by twice the certified tail plus
    the doubling estimate 2^l times the disagreement mass, and the modulus
    minimizes over the cut.
    """
    delta = abs(float(delta))
    cert = ctx.model.certificate()
    q_total = ctx.q.total
    best = np.inf
    horizon = cert.survival.size + 64
    for level in range(horizon):
        grow = (2.0**level) * q_total * delta
        if grow >= best:
            break
        best = min(best, 2.0 * (cert.tail(level) + grow))
    return float(best)


# ---------------------------------------------------------------------------
# distance to a performance set via the support oracle
# ---------------------------------------------------------------------------


@dataclass
class DistanceResult:
    g: float                                   # certified upper bound on the distance
    lower: float                               # certified lower bound
    witness: list                              # [(weight, DeterministicPolicy)]
    direction: np.ndarray | None               # separating direction when outside
    projection: np.ndarray                     # nearest achieved point
    vertices: list = field(default_factory=list)   # [(policy, vector)] hull generators

    @property
    def decided_inside(self) -> bool:
        return self.direction is None


def _embed(b_active: np.ndarray, active, n: int) -> np.ndarray:
    full = np.zeros(n)
    full[list(active)] = b_active
    return full


def distance_to_performance_set(sub: SubmodelSpec, target, tol: float = 1e-8,
                                active=None, seeds=None, cap: int = 200) -> DistanceResult:
    """Euclidean distance from ``target`` to the submodel's performance set.

    Alternates exact projections onto the hull of collected vertex policies
    with support-oracle calls in the projection direction; each call either
    certifies the projection (no vertex lies beyond the supporting hyperplane)
    or strictly improves the hull.  Terminates once the upper and lower
    distance bounds agree within ``tol``.

    Vertices are deduplicated at a fraction of ``tol``: seed policies from
    nearby submodels differ by far less than the decision tolerance, and
    keeping such near-copies destroys the conditioning of the projection.
    """
    model = sub.model
    n = model.criteria
    active = tuple(range(n)) if active is None else tuple(active)
    t_active = np.asarray(target, dtype=float)[list(active)]
    dedupe = max(1e-12, 1e-3 * tol)

    verts: list = []     # (policy, active-coordinate vector)
    seen = set()

    def add_vertex(policy):
        v_full = _perf(model, policy)
        key = tuple(np.round(v_full[list(active)] / dedupe).astype(np.int64))
        if key in seen:
            return False
        seen.add(key)
        verts.append((policy, v_full[list(active)]))
        return True

    seeds = list(seeds or ())
    if len(seeds) > 32:
        # keep the seeds whose performance sits closest to the target
        ranked = sorted(
            seeds, key=lambda p: float(np.linalg.norm(_perf(model, p)[list(active)] - t_active))
        )
        seeds = ranked[:32]
    for policy in seeds:
        add_vertex(policy)
    if not verts:
        h, policy = support(sub, _embed(np.ones(len(active)) / np.sqrt(len(active)), active, n))
        add_vertex(policy)

    lower = 0.0
    for _ in range(cap):
        mat = np.array([v for _, v in verts])
        d, proj, lam = distance_to_hull(mat, t_active)
        if d <= max(tol, 1e-14):
            witness = [(float(l), p) for l, (p, _) in zip(lam, verts) if l > 1e-14]
            return DistanceResult(d, max(lower, 0.0), witness, None, proj, verts)
        b = (t_active - proj) / d
        h, policy = support(sub, _embed(b, active, n))
        lower = max(lower, float(b @ t_active) - h)
        if lower > d:
            lower = d          # rounding guard; bounds must nest
        if d - lower <= tol or not add_vertex(policy):
            witness = [(float(l), p) for l, (p, _) in zip(lam, verts) if l > 1e-14]
            return DistanceResult(d, lower, witness, b, proj, verts)
    raise CertifiedFailure("distance iteration exceeded its cap", residual=d)


# ---------------------------------------------------------------------------
# alpha_hat: largest freeze fraction keeping the target attainable
# ---------------------------------------------------------------------------


def _membership(sub, target, tol, active, pool, alpha):
    """Decide d(target, V(sub)) <= tol, seeding with pool vertices valid at alpha.

    Policies found feasible at a larger freeze fraction remain feasible at a
    smaller one (thresholds nest), so the pool carries hull generators across
    the bisection.
    """
    seeds = [p for a0, p in pool if a0 >= alpha - 1e-15]
    res = distance_to_performance_set(sub, target, tol=0.25 * tol, active=active, seeds=seeds)
    for p, _ in res.vertices:
        pool.append((alpha, p))
    if len(pool) > 120:
        del pool[: len(pool) - 120]
    return res.g <= tol, res


def alpha_hat(ctx: TwoPolicyContext, target, tol: float = 1e-7, active=None,
              resolution: float = 1e-10) -> float:
    """Largest alpha (up to the bisection resolution) with d(target, V(alpha)) <= tol.

    V(alpha) shrinks as alpha grows, so the membership indicator is monotone
    and bisection applies; policies found feasible at large alpha remain
    feasible at smaller alpha and seed later membership tests.
    """
    target = np.asarray(target, dtype=float)
    resolution = max(resolution, 8e-16)    # float spacing floor on [0,1]
    pool: list = []
    ok0, res0 = _membership(ctx.submodel_at(0.0), target, tol, active, pool, 0.0)
    if not ok0:
        raise CertifiedFailure(
            "target is not in the two-policy performance set", residual=res0.g
        )
    ok1, _ = _membership(ctx.submodel_at(1.0), target, tol, active, pool, 1.0)
    if ok1:
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        ok, _ = _membership(ctx.submodel_at(mid), target, tol, active, pool, mid)
        if ok:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# supporting directions
# ---------------------------------------------------------------------------


def _support_gap(sub: SubmodelSpec, b_active, active, target_active):
    n = sub.model.criteria
    h, policy = support(sub, _embed(np.asarray(b_active, dtype=float), active, n))
    return h - float(np.asarray(b_active) @ target_active), h, policy


def _fibonacci_sphere(k: int) -> np.ndarray:
    i = np.arange(k) + 0.5
    phi = np.arccos(1 - 2 * i / k)
    theta = np.pi * (1 + 5**0.5) * i
    return np.column_stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)]
    )


def _min_max_direction(w_rows: np.ndarray, dim: int) -> np.ndarray:
    """argmin over unit b of max_k <b, w_k> for an explicit point cloud."""
    if dim == 1:
        return np.array([1.0]) if w_rows.max(initial=0.0) < (-w_rows).max(initial=0.0) else np.array([-1.0])

    def g(bs):
        return (bs @ w_rows.T).max(axis=-1)

    if dim == 2:
        # candidate minimizers: per-point antipodes and pairwise crossings
        angles = [np.arctan2(-w[1], -w[0]) for w in w_rows]
        for i in range(len(w_rows)):
            for j in range(i + 1, len(w_rows)):
                d = w_rows[i] - w_rows[j]
                if np.linalg.norm(d) > 1e-15:
                    t = np.arctan2(d[0], -d[1])
                    angles.extend([t, t + np.pi])
        cand = np.array(angles)
        bs = np.column_stack([np.cos(cand), np.sin(cand)])
        return bs[int(np.argmin(g(bs)))]

    # dim == 3: dense sphere scan then Nelder-Mead restarts on angles
    from scipy.optimize import minimize

    grid = _fibonacci_sphere(2048)
    vals = g(grid)
    order = np.argsort(vals)[:6]

    def objective(angles):
        th, ph = angles
        return float(g(np.array([np.cos(ph) * np.sin(th), np.sin(ph) * np.sin(th), np.cos(th)])))

    best_b, best_v = grid[order[0]], float(vals[order[0]])
    for idx in order:
        b0 = grid[idx]
        th0 = float(np.arccos(np.clip(b0[2], -1, 1)))
        ph0 = float(np.arctan2(b0[1], b0[0]))
        res = minimize(objective, [th0, ph0], method="Nelder-Mead",
                       options={"maxiter": 400, "xatol": 1e-14, "fatol": 1e-16})
        th, ph = res.x
        b = np.array([np.cos(ph) * np.sin(th), np.sin(ph) * np.sin(th), np.cos(th)])
        v = float(g(b))
        if v < best_v:
            best_b, best_v = b, v
    return best_b


def _polish_direction(sub: SubmodelSpec, target_active, active, init=None,
                      rounds: int = 16):
    """Minimize the support gap h(b) - <b, target> over unit directions.

    The gap is the maximum of <b, u - target> over the finitely many vertex
    performances u, so a cutting-plane loop suffices: minimize the explicit
    max over the vertices collected so far (cheap, no oracle), then query the
    support oracle at the minimizer, which either certifies the model or
    contributes a new vertex.  The minimum over the sphere equals the signed
    distance from the target to the boundary, and the minimizer supports the
    set there.
    """
    model = sub.model
    dim = len(active)
    cloud: list = []
    best_b, best_f = None, np.inf

    def oracle(b):
        nonlocal best_b, best_f
        b = np.asarray(b, dtype=float)
        norm = float(np.linalg.norm(b))
        if norm < 1e-12:
            return np.inf
        b = b / norm
        f, _, policy = _support_gap(sub, b, active, target_active)
        cloud.append(_perf(model, policy)[list(active)] - target_active)
        if f < best_f:
            best_b, best_f = b, f
        return f

    if dim == 1:
        oracle(np.array([1.0]))
        oracle(np.array([-1.0]))
        return best_b, best_f

    if init is not None:
        oracle(init)
    for axis in range(dim):
        e = np.zeros(dim)
        e[axis] = 1.0
        oracle(e)
        oracle(-e)
    if dim == 3:
        for b in _fibonacci_sphere(32):
            oracle(b)

    scale = 1.0 + float(np.abs(np.array(cloud)).max(initial=0.0))
    for _ in range(rounds):
        w_rows = np.array(cloud)
        b = _min_max_direction(w_rows, dim)
        model_val = float((w_rows @ b).max())
        true_val = oracle(b)
        if true_val - model_val <= 1e-13 * scale:
            break
    return best_b, best_f


# ---------------------------------------------------------------------------
# the recursion
# ---------------------------------------------------------------------------


@dataclass
class MixCertificate:
    """Record of one mixing run: target, achieved vector and recursion trace."""

    requested_lambda: float | None
    target: np.ndarray
    achieved: np.ndarray
    error: float
    tol: float
    trace: list

    def summary(self) -> dict:
        return {
            "lambda": self.requested_lambda,
            "target": [float(x) for x in self.target],
            "achieved": [float(x) for x in self.achieved],
            "error": self.error,
            "tol": self.tol,
            "levels": len(self.trace),
        }


def _pair_from_submodel(sub: SubmodelSpec, phi0: DeterministicPolicy,
                        phi1: DeterministicPolicy):
    """Re-express a (possibly pruned) two-policy submodel as a policy pair."""
    part = sub.partition
    a0 = phi0.refined_to(part).actions.copy()
    a1 = phi1.refined_to(part).actions.copy()
    for s, acts in enumerate(sub.allowed):
        if a0[s] not in acts:
            a0[s] = acts[0] if len(acts) == 1 else acts[-1]
        if a1[s] not in acts:
            a1[s] = acts[-1] if len(acts) == 1 else acts[0]
    return DeterministicPolicy(part, a0), DeterministicPolicy(part, a1)


def _realize_scalar(model, phi0, phi1, target, coord, tol, trace, max_iters=220):
    """Intermediate-value bisection along the threshold path for one criterion."""
    sub = SubmodelSpec.from_pair(model, phi0, phi1)
    n = model.criteria
    e = _embed(np.array([1.0]), (coord,), n)
    _, phi_hi = support(sub, e)
    _, phi_lo = support(sub, -e)
    v_lo = float(_perf(model, phi_lo)[coord])
    v_hi = float(_perf(model, phi_hi)[coord])
    t = float(target[coord])
    slack = max(tol, 1e-11)
    if t < v_lo - slack or t > v_hi + slack:
        raise CertifiedFailure(
            f"scalar target {t} outside attainable range [{v_lo}, {v_hi}]",
            residual=max(v_lo - t, t - v_hi),
        )
    t = min(max(t, v_lo), v_hi)
    if abs(v_hi - t) <= tol:
        trace.append({"kind": "scalar", "coord": coord, "achieved": v_hi, "iters": 0})
        return phi_hi
    if abs(v_lo - t) <= tol:
        trace.append({"kind": "scalar", "coord": coord, "achieved": v_lo, "iters": 0})
        return phi_lo
    ctx = make_context(model, phi_lo, phi_hi)
    a_lo, a_hi = 0.0, 1.0
    best_phi, best_err = phi_lo, abs(v_lo - t)
    for it in range(max_iters):
        mid = 0.5 * (a_lo + a_hi)
        phi_mid = path_policy(ctx, mid)
        val = float(_perf(model, phi_mid)[coord])
        err = abs(val - t)
        if err < best_err:
            best_phi, best_err = phi_mid, err
        if err <= tol:
            trace.append({"kind": "scalar", "coord": coord, "achieved": val, "iters": it + 1})
            return phi_mid
        if val < t:
            a_lo = mid
        else:
            a_hi = mid
    raise CertifiedFailure("scalar path bisection missed its tolerance",
                           residual=best_err, trace=trace)


def _realize(model, phi0, phi1, target, active, tol, trace, depth=0,
             resolution=1e-13):
    """Find a deterministic policy of the two-policy submodel matching the
    target on the active coordinates within tol."""
    if len(active) == 1:
        return _realize_scalar(model, phi0, phi1, target, active[0], tol, trace)

    cert = model.certificate()
    member_tol = 0.25 * tol
    ctx = make_context(model, phi0, phi1)
    t_active = np.asarray(target, dtype=float)[list(active)]

    # the support gap left at alpha_hat scales like boundary drift times the
    # bisection resolution and propagates linearly into the dropped
    # coordinate, so the resolution is kept far below the tolerance
    a_hat = alpha_hat(ctx, target, tol=member_tol, active=active,
                      resolution=resolution)
    frozen = ctx.submodel_at(a_hat)
    phi0_f = path_policy(ctx, a_hat)       # phi0 spliced to phi1 below the threshold

    if a_hat >= 1.0:
        candidate = path_policy(ctx, 1.0)
        trace.append({"kind": "endpoint", "alpha_hat": 1.0})
        return candidate

    # supporting direction at the target: ladder probes just above alpha_hat
    # give projection directions that converge to the supporting normal
    init, init_gap = None, np.inf
    for step in (1e-4, 1e-6, 1e-8):
        a_probe = a_hat + step
        if a_probe >= 1.0:
            continue
        try:
            probe = distance_to_performance_set(ctx.submodel_at(a_probe), target,
                                                tol=min(member_tol, 1e-9),
                                                active=active)
        except CertifiedFailure:
            continue
        if probe.direction is None or probe.g < 1e-10:
            continue
        f_probe, _, _ = _support_gap(frozen, probe.direction, active, t_active)
        if f_probe < init_gap:
            init, init_gap = probe.direction, f_probe
    b_active, gap = _polish_direction(frozen, t_active, active, init=init)

    n_a = len(active)
    b_full = _embed(b_active, active, model.criteria)
    eta_budget = tol / (4.0 * cert.L * np.sqrt(n_a))
    eta = max(eta_budget, 4.0 * (abs(gap) + 1e-13))
    vf, _, h_val = value_iteration(frozen, b_full, tol=max(1e-10, member_tol))
    kept = conserving_submodel(frozen, b_full, vf, eta)
    phi0_c, phi1_c = _pair_from_submodel(kept, phi0_f, ctx.phi1)

    drop_pos = int(np.argmax(np.abs(b_active)))
    dropped = active[drop_pos]
    new_active = tuple(c for c in active if c != dropped)

    # repair: project the target onto the pruned submodel's reachable set
    repair = distance_to_performance_set(kept, target, tol=member_tol,
                                         active=new_active)
    new_target = np.asarray(target, dtype=float).copy()
    new_target[list(new_active)] = repair.projection

    trace.append({
        "kind": "reduce",
        "depth": depth,
        "active": list(active),
        "alpha_hat": a_hat,
        "threshold": ctx.threshold(a_hat),
        "direction": [float(x) for x in b_full],
        "support_value": h_val,
        "support_gap": float(gap),
        "eta": float(eta),
        "dropped": dropped,
        "membership_gap": repair.g,
    })
    return _realize(model, phi0_c, phi1_c, new_target, new_active,
                    tol, trace, depth + 1, resolution=resolution)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def mix_pair(model: AtomlessMDP, phi0: DeterministicPolicy, phi1: DeterministicPolicy,
             lam: float, tol: float = 1e-6):
    """Deterministic policy whose performance is lam * v(phi0) + (1-lam) * v(phi1)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0,1]")
    model.certificate()
    validate_policy(model, phi0)
    validate_policy(model, phi1)
    if lam == 1.0 or phi0 == phi1:
        v = _perf(model, phi0)
        return phi0.canonical(), MixCertificate(lam, v, v, 0.0, tol, [])
    if lam == 0.0:
        v = _perf(model, phi1)
        return phi1.canonical(), MixCertificate(lam, v, v, 0.0, tol, [])

    v0, v1 = _perf(model, phi0), _perf(model, phi1)
    target = lam * v0 + (1.0 - lam) * v1
    active = tuple(range(model.criteria))
    level_tol = tol / (2.0 * max(1, len(active)))

    best_phi, best_err, best_trace = None, np.inf, []
    resolution = 1e-13
    for attempt in range(3):
        trace: list = []
        try:
            phi = _realize(model, phi0, phi1, target, active, level_tol, trace,
                           resolution=resolution)
        except CertifiedFailure as exc:
            if attempt == 2:
                raise CertifiedFailure("pairwise mix failed", residual=exc.residual,
                                       trace=exc.trace or trace) from exc
            level_tol *= 0.1
            resolution *= 0.1
            continue
        achieved = _perf(model, phi)
        err = float(np.linalg.norm(achieved - target))
        if err < best_err:
            best_phi, best_err, best_trace = phi, err, trace

        # pre-compensation: the realization offset is locally systematic, so
        # aiming at the reflected target cancels it to second order
        aim = target.copy()
        for _ in range(2):
            if best_err <= tol:
                break
            aim = aim + (target - achieved)
            try:
                phi_c = _realize(model, phi0, phi1, aim, active, level_tol,
                                 trace, resolution=resolution)
            except CertifiedFailure:
                break
            achieved_c = _perf(model, phi_c)
            err_c = float(np.linalg.norm(achieved_c - target))
            if err_c < best_err:
                best_phi, best_err, best_trace = phi_c, err_c, trace
            achieved = achieved_c

        if best_err <= tol:
            final = _perf(model, best_phi)
            return best_phi.canonical(), MixCertificate(lam, target, final,
                                                        best_err, tol, best_trace)
        level_tol *= 0.1
        resolution *= 0.1
    raise CertifiedFailure("pairwise mix missed its tolerance",
                           residual=best_err, trace=best_trace)


def caratheodory(model: AtomlessMDP, pi: StationaryPolicy, tol: float = 1e-7):
    """Express v(pi) as a convex combination of at most N+1 deterministic policies."""
    model.certificate()
    if isinstance(pi, DeterministicPolicy):
        return [(1.0, pi.canonical())]
    validate_policy(model, pi)
    if pi.is_deterministic(1e-12):
        return [(1.0, pi.to_deterministic().canonical())]
    target = _perf(model, pi)
    res = distance_to_performance_set(SubmodelSpec.full(model), target, tol=0.5 * tol)
    if res.g > tol:
        raise CertifiedFailure("hull iteration missed the stationary target",
                               residual=res.g)
    policies = [p for p, _ in res.vertices]
    vectors = np.array([v for _, v in res.vertices])
    lam = np.zeros(len(policies))
    for weight, policy in res.witness:
        for i, p in enumerate(policies):
            if p is policy:
                lam[i] = weight
                break
    lam = lam / lam.sum()
    lam = caratheodory_prune(vectors, lam, model.criteria + 1)
    terms = [(float(l), policies[i].canonical()) for i, l in enumerate(lam) if l > 1e-13]
    total = sum(l for l, _ in terms)
    return [(l / total, p) for l, p in terms]


def derandomize(model: AtomlessMDP, pi: StationaryPolicy, tol: float = 1e-6):
    """Deterministic policy with the same performance vector as ``pi``.

    Decomposes v(pi) over vertex policies, then folds the terms through
    mix_pair left to right with the per-stage budget tol / (2 * #terms).
    """
    model.certificate()
    if isinstance(pi, DeterministicPolicy) or pi.is_deterministic(1e-12):
        phi = pi if isinstance(pi, DeterministicPolicy) else pi.to_deterministic()
        v = _perf(model, phi)
        return phi, MixCertificate(None, v, v, 0.0, tol, [{"kind": "already-deterministic"}])

    target = _perf(model, pi)
    terms = caratheodory(model, pi, tol=0.25 * tol)
    stage_floor = tol / (2.0 * max(1, len(terms)))
    trace: list = [{
        "kind": "caratheodory",
        "terms": len(terms),
        "weights": [float(l) for l, _ in terms],
    }]
    phi_acc = terms[0][1]
    weight = terms[0][0]
    consumed = 0.0
    remaining = len(terms) - 1
    for lam_k, phi_k in terms[1:]:
        # unused budget rolls forward; stage errors only shrink under later
        # reweighting, so the sum of stage errors bounds the fold error
        stage_tol = max(stage_floor, (0.7 * tol - consumed) / remaining)
        phi_acc, cert = mix_pair(model, phi_acc, phi_k, weight / (weight + lam_k),
                                 tol=stage_tol)
        consumed += cert.error
        remaining -= 1
        trace.extend(cert.trace)
        weight += lam_k
    achieved = _perf(model, phi_acc)
    err = float(np.linalg.norm(achieved - target))
    if err > tol:
        raise CertifiedFailure("derandomization missed its tolerance",
                               residual=err, trace=trace)
    return phi_acc, MixCertificate(None, target, achieved, err, tol, trace)
