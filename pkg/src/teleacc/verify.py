"""Randomized cross-check suites: the planner, the optimizer, and the
closed loop each get an independent reference implementation to agree
with.

Three suites, all seeded and reproducible case by case:

* ``qp``: random small velocity programs solved twice, once by the
  in-repo interior-point solver and once by a generic NLP method on the
  explicit-slack restatement of the same program.
* ``tree``: the fast sampled collision checker against a 1 cm dense
  sampling of the obstacle boundary, with the exact geometric margin
  deciding whether a disagreement is legitimate.
* ``closed-loop``: adversarial steering episodes over random convex
  obstacle fields, audited post hoc with exact rectangle geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt
from scipy.spatial import ConvexHull
from shapely.geometry import Point, Polygon

from .controller import OperatorCommand
from .scenario import Scenario
from .sim import min_obstacle_clearance, run_scenario
from .tree import ControllerConfig, Obstacle, check_state_collision, \
    ellipse_axes, obstacle_sample_points
from .vehicle import VehicleParams, VehicleState
from .velocity import VelocityLimits, VelocityProblem, VelocityWeights, solve

DEFAULT_SEED = 70301
DEFAULT_COUNTS = {"qp": 20, "tree": 50, "closed-loop": 100}

REL_OBJECTIVE_TOL = 1e-4
HARD_TOL = 1e-6


@dataclass(frozen=True)
class CaseResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SuiteReport:
    suite: str
    seed: int
    cases: list[CaseResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cases)

    @property
    def failures(self) -> list[CaseResult]:
        return [c for c in self.cases if not c.passed]


def case_rng(base_seed: int, index: int) -> np.random.Generator:
    """Deterministic per-case generator, independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence((base_seed, index)))


# --------------------------------------------------------------------------
# qp suite

def random_velocity_problem(rng: np.random.Generator) -> VelocityProblem:
    """Small random instance mixing slack-free and slack-forcing regimes."""
    N = int(rng.integers(2, 9))
    t_s = float(rng.uniform(0.03, 0.12))
    v_curr = float(rng.uniform(0.0, 8.0))
    regime = rng.integers(0, 3)
    if regime == 0:        # roomy: progress bound rarely active
        s_safe = float(rng.uniform(5.0, 30.0))
    elif regime == 1:      # tight: progress slack must engage
        s_safe = float(rng.uniform(0.0, 0.3 * v_curr * N * t_s + 0.01))
    else:
        s_safe = float(rng.uniform(0.0, 4.0))
    kappa = rng.uniform(-0.4, 0.4, size=N)
    kappa[rng.random(size=N) < 0.5] = 0.0
    return VelocityProblem(
        v_curr=v_curr,
        a_curr=float(rng.uniform(-4.0, 2.0)),
        v_des=float(rng.uniform(0.0, 5.0)),
        s_safe=s_safe,
        kappa_crit=tuple(float(k) for k in kappa),
        N=N,
        t_s=t_s,
        weights=VelocityWeights(),
        limits=VelocityLimits.from_params(VehicleParams()),
        v_cap=10.0,
    )


class _ReferenceQP:
    """Explicit-slack restatement of a velocity program.

    Variables y = [s(0..N), v(0..N), a(0..N), j(0..N), sp(1..N),
    sa(0..N), sj(0..N)]; built from the problem statement alone, no code
    shared with the production solver.
    """

    def __init__(self, p: VelocityProblem):
        from .velocity import lateral_velocity_bound

        N, ts = p.N, p.t_s
        w, lim = p.weights, p.limits
        m = N + 1
        self.sl_s, self.sl_v, self.sl_a, self.sl_j = 0, m, 2 * m, 3 * m
        self.sl_sp = 4 * m
        self.sl_sa = 4 * m + N
        self.sl_sj = 4 * m + N + m
        n = self.n = 4 * m + N + 2 * m

        H = np.zeros(n)
        c = np.zeros(n)
        H[self.sl_v + 1] += 2.0 * w.w_v_des
        H[self.sl_v + N] += 2.0 * w.w_v_term
        c[self.sl_v + 1] += -2.0 * w.w_v_des * p.v_des
        for s0, cnt, wq in ((self.sl_sp, N, w.w_slack_progress),
                            (self.sl_sa, m, w.w_slack_acc),
                            (self.sl_sj, m, w.w_slack_jerk)):
            H[s0:s0 + cnt] = 2.0 * wq
            c[s0:s0 + cnt] = 0.01 * wq
        self.H, self.c = H, c
        self.const = w.w_v_des * p.v_des ** 2

        rows, rhs = [], []

        def eq(b, *terms):
            row = np.zeros(n)
            for idx, coef in terms:
                row[idx] += coef
            rows.append(row)
            rhs.append(b)

        eq(0.0, (self.sl_s, 1.0))
        eq(p.v_curr, (self.sl_v, 1.0))
        for k in range(N):
            eq(0.0, (self.sl_s + k + 1, 1.0), (self.sl_s + k, -1.0),
               (self.sl_v + k, -ts))
            eq(0.0, (self.sl_v + k + 1, 1.0), (self.sl_v + k, -1.0),
               (self.sl_a + k, -ts))
        eq(p.a_curr, (self.sl_a, 1.0), (self.sl_j, -ts))
        for k in range(1, m):
            eq(0.0, (self.sl_a + k, 1.0), (self.sl_a + k - 1, -1.0),
               (self.sl_j + k, -ts))
        self.A_eq = np.array(rows)
        self.b_eq = np.array(rhs)

        rows, lbs, ubs = [], [], []

        def iq(lb, ub, *terms):
            row = np.zeros(n)
            for idx, coef in terms:
                row[idx] += coef
            rows.append(row)
            lbs.append(lb)
            ubs.append(ub)

        for k in range(1, m):   # s_k <= s_safe + sp_k
            iq(-np.inf, p.s_safe, (self.sl_s + k, 1.0), (self.sl_sp + k - 1, -1.0))
        for k in range(m):      # a_min - sa_k <= a_k <= a_max + sa_k
            iq(-np.inf, lim.a_max, (self.sl_a + k, 1.0), (self.sl_sa + k, -1.0))
            iq(lim.a_min, np.inf, (self.sl_a + k, 1.0), (self.sl_sa + k, 1.0))
            iq(-np.inf, lim.j_max, (self.sl_j + k, 1.0), (self.sl_sj + k, -1.0))
            iq(-lim.j_max, np.inf, (self.sl_j + k, 1.0), (self.sl_sj + k, 1.0))
        self.A_iq = np.array(rows)
        self.lb_iq = np.array(lbs)
        self.ub_iq = np.array(ubs)

        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for k in range(1, m):
            lo[self.sl_v + k] = 0.0
            hi[self.sl_v + k] = lateral_velocity_bound(
                p.kappa_crit[k - 1], lim.a_lat_max, p.v_cap)
        lo[self.sl_sp:] = 0.0
        self.lo, self.hi = lo, hi

        # feasible start: coast at the clamped current speed with exact
        # chains and slacks set to the violations they must absorb
        y0 = np.zeros(n)
        y0[self.sl_v] = p.v_curr
        y0[self.sl_v + 1:self.sl_v + m] = np.clip(
            p.v_curr, lo[self.sl_v + 1:self.sl_v + m],
            hi[self.sl_v + 1:self.sl_v + m])
        for k in range(N):
            y0[self.sl_s + k + 1] = y0[self.sl_s + k] + ts * y0[self.sl_v + k]
            y0[self.sl_a + k] = (y0[self.sl_v + k + 1] - y0[self.sl_v + k]) / ts
        y0[self.sl_j] = (y0[self.sl_a] - p.a_curr) / ts
        for k in range(1, m):
            y0[self.sl_j + k] = (y0[self.sl_a + k] - y0[self.sl_a + k - 1]) / ts
        s = y0[self.sl_s + 1:self.sl_s + m]
        a = y0[self.sl_a:self.sl_a + m]
        jj = y0[self.sl_j:self.sl_j + m]
        y0[self.sl_sp:self.sl_sp + N] = np.maximum(s - p.s_safe, 0.0)
        y0[self.sl_sa:self.sl_sa + m] = np.maximum(
            np.maximum(a - lim.a_max, lim.a_min - a), 0.0)
        y0[self.sl_sj:self.sl_sj + m] = np.maximum(np.abs(jj) - lim.j_max, 0.0)
        self.y0 = y0

    def objective(self, y: np.ndarray) -> float:
        return 0.5 * float(y @ (self.H * y)) + float(self.c @ y) + self.const

def reference_objective(p: VelocityProblem) -> float:
    """Optimal objective of the velocity program by an independent route.

    A generic trust-region interior-point method minimizes the
    explicit-slack restatement. The objective is rescaled so the penalty
    weights do not starve the gradient test, and the barrier is driven
    far below its default so the iterative tolerance floor sits well
    under the comparison threshold.
    """
    ref = _ReferenceQP(p)
    scale = p.weights.w_slack_progress
    H2, c2 = ref.H / scale, ref.c / scale
    hess_mat = np.diag(H2)

    res = sopt.minimize(
        lambda y: 0.5 * float(y @ (H2 * y)) + float(c2 @ y),
        ref.y0,
        jac=lambda y: H2 * y + c2,
        hess=lambda y: hess_mat,
        method="trust-constr",
        bounds=sopt.Bounds(ref.lo, ref.hi),
        constraints=[
            sopt.LinearConstraint(ref.A_eq, ref.b_eq, ref.b_eq),
            sopt.LinearConstraint(ref.A_iq, ref.lb_iq, ref.ub_iq),
        ],
        options={"gtol": 1e-12, "xtol": 1e-16, "barrier_tol": 1e-14,
                 "maxiter": 50000},
    )
    if not res.success and res.status != 2:   # 2 = xtol reached, fine
        raise RuntimeError(f"reference solve did not converge: {res.message}")
    return ref.objective(res.x)


def hard_violation(p: VelocityProblem, v: np.ndarray) -> float:
    """Worst violation of the hard velocity boxes on a solved profile."""
    from .velocity import lateral_velocity_bound
    worst = max(0.0, -float(v.min()))
    for k in range(1, p.N + 1):
        vb = lateral_velocity_bound(p.kappa_crit[k - 1], p.limits.a_lat_max,
                                    p.v_cap)
        worst = max(worst, float(v[k] - vb))
    worst = max(worst, abs(float(v[0]) - p.v_curr))
    return worst


def run_qp_suite(seed: int = DEFAULT_SEED, count: int = 20) -> SuiteReport:
    report = SuiteReport(suite="qp", seed=seed)
    for i in range(count):
        rng = case_rng(seed, i)
        prob = random_velocity_problem(rng)
        sol = solve(prob)
        name = f"qp[{i}] N={prob.N} s_safe={prob.s_safe:.2f}"
        if sol.status == "failed":
            report.cases.append(CaseResult(name, False, "solver failed"))
            continue
        ref = reference_objective(prob)
        rel = abs(sol.objective - ref) / max(1.0, abs(ref))
        hard = hard_violation(prob, sol.v)
        ok = rel <= REL_OBJECTIVE_TOL and hard <= HARD_TOL
        report.cases.append(CaseResult(
            name, ok,
            f"obj={sol.objective:.6g} ref={ref:.6g} rel={rel:.2e} "
            f"hard={hard:.2e} status={sol.status}"))
    return report


# --------------------------------------------------------------------------
# tree suite

def _ellipse_polygon(z: VehicleState, a: float, b: float,
                     segments: int = 2048) -> Polygon:
    t = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ex = a * np.cos(t)
    ey = b * np.sin(t)
    ct, st = math.cos(z.theta), math.sin(z.theta)
    return Polygon(np.column_stack((z.x + ct * ex - st * ey,
                                    z.y + st * ex + ct * ey)))


def dense_collision_oracle(z: VehicleState, obstacle: Obstacle,
                           params: VehicleParams,
                           spacing: float = 0.01) -> bool:
    """Reference collision verdict from first principles.

    Re-derives the point-in-ellipse test (rotate into the body frame,
    normalized quadratic form) over a dense boundary sampling, plus a
    polygon containment test for the swallowed-ellipse case.
    """
    a, b = ellipse_axes(params)
    pts = obstacle_sample_points(obstacle, spacing)
    dx = pts[:, 0] - z.x
    dy = pts[:, 1] - z.y
    ct, st = math.cos(z.theta), math.sin(z.theta)
    bx = ct * dx + st * dy
    by = -st * dx + ct * dy
    if np.any((bx / a) ** 2 + (by / b) ** 2 <= 1.0):
        return True
    return Polygon(obstacle.vertices).covers(Point(z.x, z.y))


def collision_margin(z: VehicleState, obstacle: Obstacle,
                     params: VehicleParams, colliding: bool) -> float:
    """Geometric size of the verdict: separation distance when clear,
    deepest boundary-sample penetration when colliding.

    Coarse edge sampling can only flip the verdict of cases smaller
    than its spacing, so agreement is asserted above that margin.
    """
    a, b = ellipse_axes(params)
    ellipse = _ellipse_polygon(z, a, b)
    boundary = ellipse.exterior
    pts = obstacle_sample_points(obstacle, 0.01)
    d = np.array([boundary.distance(Point(px, py)) for px, py in pts])
    dx = pts[:, 0] - z.x
    dy = pts[:, 1] - z.y
    ct, st = math.cos(z.theta), math.sin(z.theta)
    inside = (((ct * dx + st * dy) / a) ** 2
              + ((-st * dx + ct * dy) / b) ** 2) <= 1.0
    if not colliding:
        return float(d.min())
    depth = float(d[inside].max()) if inside.any() else 0.0
    if Polygon(obstacle.vertices).covers(Point(z.x, z.y)):
        depth = max(depth, Point(z.x, z.y).distance(
            Polygon(obstacle.vertices).exterior))
    return depth


def random_convex_obstacle(rng: np.random.Generator, center: tuple[float, float],
                           r_lo: float = 0.6, r_hi: float = 2.2) -> Obstacle:
    """Strictly convex polygon: hull of random points on a random blob."""
    while True:
        k = int(rng.integers(5, 12))
        ang = rng.uniform(0.0, 2.0 * math.pi, size=k)
        rad = rng.uniform(r_lo, r_hi, size=k)
        pts = np.column_stack((center[0] + rad * np.cos(ang),
                               center[1] + rad * np.sin(ang)))
        try:
            hull = ConvexHull(pts)
        except Exception:
            continue
        verts = pts[hull.vertices]    # counter-clockwise by construction
        if len(verts) < 3:
            continue
        try:
            return Obstacle(vertices=tuple(map(tuple, verts)))
        except ValueError:
            continue   # near-collinear hull edge; redraw


def run_tree_suite(seed: int = DEFAULT_SEED, count: int = 50) -> SuiteReport:
    params = VehicleParams()
    cfg = ControllerConfig()
    report = SuiteReport(suite="tree", seed=seed)
    for i in range(count):
        rng = case_rng(seed, 1000 + i)
        z = VehicleState(x=float(rng.uniform(-2, 2)),
                         y=float(rng.uniform(-2, 2)),
                         theta=float(rng.uniform(-math.pi, math.pi)),
                         delta=0.0, v=0.0)
        bearing = rng.uniform(0.0, 2.0 * math.pi)
        dist = rng.uniform(1.0, 7.0)
        center = (z.x + dist * math.cos(bearing), z.y + dist * math.sin(bearing))
        obstacle = random_convex_obstacle(rng, center)

        fast = check_state_collision(z, [obstacle], params, cfg)
        ref = dense_collision_oracle(z, obstacle, params)
        margin = collision_margin(z, obstacle, params, ref)
        name = f"tree[{i}] margin={margin:.3f}"
        if margin <= cfg.edge_sample_spacing:
            report.cases.append(CaseResult(
                name, True, f"borderline (<= {cfg.edge_sample_spacing}), exempt; "
                f"fast={fast} ref={ref}"))
            continue
        report.cases.append(CaseResult(
            name, fast == ref, f"fast={fast} ref={ref}"))
    return report


# --------------------------------------------------------------------------
# closed-loop suite

def random_obstacle_field(rng: np.random.Generator,
                          clear_radius: float = 8.0) -> tuple[Obstacle, ...]:
    """3 to 8 convex obstacles scattered ahead, none near the start pose."""
    out = []
    for _ in range(int(rng.integers(3, 9))):
        for _ in range(50):
            cx = float(rng.uniform(2.0, 70.0))
            cy = float(rng.uniform(-10.0, 10.0))
            if math.hypot(cx, cy) >= clear_radius + 2.2:
                out.append(random_convex_obstacle(rng, (cx, cy)))
                break
    return tuple(out)


def adversarial_commands(rng: np.random.Generator, params: VehicleParams,
                         duration: float, v_des: float = 5.0):
    """Piecewise-constant random steering demand within actuator limits."""
    times = []
    deltas = []
    t = 0.0
    while t < duration:
        times.append(t)
        deltas.append(float(rng.uniform(-params.delta_max, params.delta_max)))
        t += float(rng.uniform(0.5, 1.5))
    times_arr = np.array(times)

    def source(t: float, z: VehicleState) -> OperatorCommand:
        i = int(np.searchsorted(times_arr, t, side="right")) - 1
        return OperatorCommand(delta_des=deltas[max(i, 0)], v_des=v_des,
                               timestamp=t)

    return source


def adversarial_episode(seed: int, index: int,
                        duration: float = 15.0) -> tuple[Scenario, float, str]:
    """Run one episode; returns (scenario, min clearance, termination)."""
    rng = case_rng(seed, 2000 + index)
    params = VehicleParams()
    scn = Scenario(
        name=f"episode-{index}",
        obstacles=random_obstacle_field(rng),
        reference_path=((-5.0, 0.0), (100.0, 0.0)),
        v_ref=5.0,
        start_state=VehicleState(x=0.0, y=0.0, theta=0.0, delta=0.0, v=5.0),
        params=params,
        cfg=ControllerConfig(),
        weights=VelocityWeights(),
        duration=duration,
        seed=index,
    )
    source = adversarial_commands(rng, params, duration)
    log = run_scenario(scn, mode="external", command_source=source)
    return scn, min_obstacle_clearance(log, scn), log.terminated


def run_closed_loop_suite(seed: int = DEFAULT_SEED,
                          count: int = 100) -> SuiteReport:
    report = SuiteReport(suite="closed-loop", seed=seed)
    for i in range(count):
        scn, clearance, terminated = adversarial_episode(seed, i)
        report.cases.append(CaseResult(
            f"episode[{i}] obstacles={len(scn.obstacles)}",
            clearance > 0.0,
            f"min_clearance={clearance:.4f} terminated={terminated}"))
    return report


SUITES = {
    "qp": run_qp_suite,
    "tree": run_tree_suite,
    "closed-loop": run_closed_loop_suite,
}


def run_suite(name: str, seed: int | None = None,
              count: int | None = None) -> SuiteReport:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; pick one of {sorted(SUITES)}")
    return SUITES[name](seed if seed is not None else DEFAULT_SEED,
                        count if count is not None else DEFAULT_COUNTS[name])
