"""Velocity-profile optimization over a point-mass (s, v, a) system with
jerk input and soft comfort constraints.

The program minimizes

    w_v_des*(v_1 - v_des)^2 + w_v_term*v_N^2 + J_s

subject to the Forward Euler chain s_{n+1} = s_n + t_s*v_n,
v_{n+1} = v_n + t_s*a_n, a_{n+1} = a_n + t_s*j_n, the progress bound
s_{n+1} <= s_safe (softened by a heavily penalized slack), hard per-step
velocity boxes 0 <= v <= bound(kappa), and soft acceleration/jerk boxes.
J_s is quadratic plus a small linear term per slack so slacks are
exactly zero whenever the hard constraints are feasible.  The soft terms
are handed to the QP solver as penalty rows rather than explicit slack
variables; the reported slack vectors are the constraint violations of
the optimized profiles, which is the same thing at the optimum.

The initial acceleration a_0 is a decision variable tied to the measured
a_curr by a soft jerk-rate bound |a_0 - a_curr| <= t_s*j_max instead of
a hard pin.  With a hard a_0 = a_curr the first commanded velocity
v_1 = v_curr + t_s*a_curr would be a constant, the desired-velocity cost
could not act on it, and the profile would degenerate to always-brake.
The tie is written with a pre-horizon jerk variable
j_0 = (a_0 - a_curr)/t_s so every jerk bound row looks the same.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .qp import QPWorkspace
from .tree import ControllerConfig, TreeResult
from .vehicle import VehicleParams

_KAPPA_EPS = 1e-6
_SLACK_TOL = 1e-6
# Interior-point tolerance, one notch past the reporting threshold: the
# relative dual criterion makes 1e-8 reliably reachable, and the extra
# couple of iterations buy commands polished to ~1e-4 m/s.
_QP_TOL = 1e-8
_LINEAR_RATIO = 1e-2   # linear slack coefficient as a fraction of the quadratic


@dataclass(frozen=True)
class VelocityWeights:
    w_v_des: float = 1.0
    w_v_term: float = 100.0
    w_slack_acc: float = 1.0e4
    w_slack_jerk: float = 1.0e4
    w_slack_progress: float = 1.0e5

    def __post_init__(self) -> None:
        vals = (self.w_v_des, self.w_v_term, self.w_slack_acc,
                self.w_slack_jerk, self.w_slack_progress)
        if any(w <= 0 for w in vals):
            raise ValueError("all weights must be positive")
        if self.w_v_term <= self.w_v_des:
            raise ValueError("terminal weight must dominate the tracking weight")
        if min(self.w_slack_acc, self.w_slack_jerk,
               self.w_slack_progress) <= self.w_v_term:
            raise ValueError("slack weights must dominate the terminal weight")


@dataclass(frozen=True)
class VelocityLimits:
    a_min: float
    a_max: float
    a_lat_max: float
    j_max: float

    @classmethod
    def from_params(cls, params: VehicleParams) -> "VelocityLimits":
        return cls(a_min=params.a_min, a_max=params.a_max,
                   a_lat_max=params.a_lat_max, j_max=params.j_max)


@dataclass(frozen=True)
class VelocityProblem:
    v_curr: float
    a_curr: float
    v_des: float
    s_safe: float
    kappa_crit: tuple[float, ...]
    N: int
    t_s: float
    weights: VelocityWeights
    limits: VelocityLimits
    v_cap: float

    def __post_init__(self) -> None:
        if self.s_safe < 0 or self.v_des < 0:
            raise ValueError("s_safe and v_des must be non-negative")
        if len(self.kappa_crit) != self.N:
            raise ValueError(
                f"kappa_crit has {len(self.kappa_crit)} entries, expected N={self.N}")
        if self.N < 1 or self.t_s <= 0 or self.v_cap <= 0:
            raise ValueError("bad horizon or velocity cap")


@dataclass
class VelocitySolution:
    """Optimized profiles; slack vectors are indexed per accel/jerk knot
    (entry 0 covers the transition from the measured initial state)."""

    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    j: np.ndarray
    s_la: np.ndarray
    s_ua: np.ndarray
    s_lj: np.ndarray
    s_uj: np.ndarray
    s_prog: np.ndarray
    objective: float
    kkt_residual: float
    status: str                # "solved" | "solved-with-slack" | "failed"


def lateral_velocity_bound(kappa: float, a_lat_max: float, v_cap: float) -> float:
    """Largest speed with |kappa|*v^2 <= a_lat_max; v_cap on straights."""
    if a_lat_max <= 0:
        raise ValueError("a_lat_max must be positive")
    if abs(kappa) < _KAPPA_EPS:
        return v_cap
    return min(v_cap, math.sqrt(a_lat_max / abs(kappa)))


def build_problem(v_curr: float, a_curr: float, v_des: float, tree: TreeResult,
                  cfg: ControllerConfig, weights: VelocityWeights,
                  limits: VelocityLimits) -> VelocityProblem:
    if len(tree.kappa_crit) != cfg.N:
        raise ValueError(
            f"tree provides {len(tree.kappa_crit)} curvature steps, config wants {cfg.N}")
    return VelocityProblem(
        v_curr=v_curr, a_curr=a_curr, v_des=v_des, s_safe=tree.s_safe,
        kappa_crit=tuple(float(k) for k in tree.kappa_crit),
        N=cfg.N, t_s=cfg.t_s, weights=weights, limits=limits,
        v_cap=2.0 * cfg.v_des_max)


class _Layout:
    """Variable/row indexing for the assembled QP.

    Variables are the four Euler-chain profiles only.  The jerk vector
    has N+1 entries: j[0] is the pre-horizon transition
    (a_0 = a_curr + t_s*j[0]) and j[k] advances a[k-1] to a[k].
    """

    def __init__(self, N: int):
        self.N = N
        self.s = np.arange(0, N + 1)
        self.v = np.arange(N + 1, 2 * (N + 1))
        self.a = np.arange(2 * (N + 1), 3 * (N + 1))
        self.j = np.arange(3 * (N + 1), 4 * (N + 1))
        self.n_var = 4 * (N + 1)
        # row blocks; the a-chain includes the pre-horizon row, hence N+1
        self.r_eq = 2 + 2 * N + (N + 1)
        self.r_prog = slice(self.r_eq, self.r_eq + N)
        self.r_vb = slice(self.r_prog.stop, self.r_prog.stop + N)
        self.r_acc = slice(self.r_vb.stop, self.r_vb.stop + N + 1)
        self.r_jerk = slice(self.r_acc.stop, self.r_acc.stop + N + 1)
        self.n_row = self.r_jerk.stop


@functools.lru_cache(maxsize=32)
def _workspace(N: int, t_s: float, weights: VelocityWeights,
               limits: VelocityLimits) -> tuple[_Layout, QPWorkspace]:
    """Static problem structure; only q, l, u change between solves."""
    lay = _Layout(N)
    n = lay.n_var
    w = weights

    P = np.zeros(n)
    P[lay.v[1]] += 2.0 * w.w_v_des
    P[lay.v[N]] += 2.0 * w.w_v_term

    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    r = 0
    put(r, lay.s[0], 1.0); r += 1                     # s_0 = 0
    put(r, lay.v[0], 1.0); r += 1                     # v_0 = v_curr
    for k in range(N):                                # euler chains
        put(r, lay.s[k + 1], 1.0); put(r, lay.s[k], -1.0); put(r, lay.v[k], -t_s); r += 1
    for k in range(N):
        put(r, lay.v[k + 1], 1.0); put(r, lay.v[k], -1.0); put(r, lay.a[k], -t_s); r += 1
    put(r, lay.a[0], 1.0); put(r, lay.j[0], -t_s); r += 1   # a_0 = a_curr + t_s*j_0
    for k in range(1, N + 1):
        put(r, lay.a[k], 1.0); put(r, lay.a[k - 1], -1.0); put(r, lay.j[k], -t_s); r += 1
    for k in range(1, N + 1):                         # s_k <= s_safe, softly
        put(r, lay.s[k], 1.0); r += 1
    for k in range(1, N + 1):                         # 0 <= v_k <= bound_k
        put(r, lay.v[k], 1.0); r += 1
    for k in range(N + 1):                            # a_min <= a_k <= a_max, softly
        put(r, lay.a[k], 1.0); r += 1
    for k in range(N + 1):                            # |j_k| <= j_max, softly
        put(r, lay.j[k], 1.0); r += 1
    assert r == lay.n_row

    A = sp.csc_matrix((vals, (rows, cols)), shape=(lay.n_row, n))
    eq_mask = np.zeros(lay.n_row, dtype=bool)
    eq_mask[:lay.r_eq] = True
    soft_mask = np.zeros(lay.n_row, dtype=bool)
    wq = np.zeros(lay.n_row)
    cl = np.zeros(lay.n_row)
    for block, wgt in ((lay.r_prog, w.w_slack_progress),
                       (lay.r_acc, w.w_slack_acc),
                       (lay.r_jerk, w.w_slack_jerk)):
        soft_mask[block] = True
        wq[block] = wgt
        cl[block] = _LINEAR_RATIO * wgt
    ws = QPWorkspace(sp.diags(P).tocsc(), A, eq_mask, soft=(soft_mask, wq, cl))
    return lay, ws


def _bounds(problem: VelocityProblem, lay: _Layout) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    N = problem.N
    lim = problem.limits
    inf = np.inf

    q = np.zeros(lay.n_var)
    q[lay.v[1]] += -2.0 * problem.weights.w_v_des * problem.v_des

    l = np.full(lay.n_row, -inf)
    u = np.full(lay.n_row, inf)
    l[0] = u[0] = 0.0
    l[1] = u[1] = problem.v_curr
    l[2:lay.r_eq] = u[2:lay.r_eq] = 0.0
    r_apre = 2 + 2 * N  # a-chain row tying a_0 to the measured acceleration
    l[r_apre] = u[r_apre] = problem.a_curr
    u[lay.r_prog] = problem.s_safe
    vb = np.array([lateral_velocity_bound(k, lim.a_lat_max, problem.v_cap)
                   for k in problem.kappa_crit])
    l[lay.r_vb] = 0.0
    u[lay.r_vb] = vb
    l[lay.r_acc] = lim.a_min
    u[lay.r_acc] = lim.a_max
    l[lay.r_jerk] = -lim.j_max
    u[lay.r_jerk] = lim.j_max
    return q, l, u


def _objective(problem: VelocityProblem, v: np.ndarray, slacks: dict) -> float:
    w = problem.weights
    obj = (w.w_v_des * (v[1] - problem.v_des) ** 2
           + w.w_v_term * v[problem.N] ** 2)
    for key, wq in (("s_la", w.w_slack_acc), ("s_ua", w.w_slack_acc),
                    ("s_lj", w.w_slack_jerk), ("s_uj", w.w_slack_jerk),
                    ("s_prog", w.w_slack_progress)):
        sv = slacks[key]
        obj += wq * float(sv @ sv) + _LINEAR_RATIO * wq * float(sv.sum())
    return obj


def solve(problem: VelocityProblem) -> VelocitySolution:
    """Solve the velocity program; never raises on solver trouble."""
    lay, ws = _workspace(problem.N, problem.t_s, problem.weights, problem.limits)
    q, l, u = _bounds(problem, lay)
    res = ws.solve(q, l, u, tol=_QP_TOL)

    # Re-integrate the Euler chains from (a_0, j) so the discrete dynamics
    # hold exactly on the reported profiles, not just to solver tolerance.
    # v is clamped into its hard box (the bounds are hard even when the
    # chain carries solver roundoff), which perturbs the chain by at most
    # the optimizer tolerance at pinned steps.  The pre-horizon jerk j[0]
    # stays internal; callers see j_1..j_N.
    N = problem.N
    t_s = problem.t_s
    lim = problem.limits
    j_full = res.x[lay.j]
    j = j_full[1:].copy()
    a = np.empty(N + 1)
    a[0] = res.x[lay.a[0]]
    for k in range(N):
        a[k + 1] = a[k] + t_s * j[k]
    v = np.empty(N + 1)
    v[0] = problem.v_curr
    for k in range(N):
        vb_k = lateral_velocity_bound(problem.kappa_crit[k],
                                      lim.a_lat_max, problem.v_cap)
        v[k + 1] = min(max(0.0, v[k] + t_s * a[k]), vb_k)
    s = np.empty(N + 1)
    s[0] = 0.0
    for k in range(N):
        s[k + 1] = s[k] + t_s * v[k]

    slacks = {
        "s_la": np.maximum(lim.a_min - a, 0.0),
        "s_ua": np.maximum(a - lim.a_max, 0.0),
        "s_lj": np.maximum(-lim.j_max - j_full, 0.0),
        "s_uj": np.maximum(j_full - lim.j_max, 0.0),
        "s_prog": np.maximum(s[1:] - problem.s_safe, 0.0),
    }
    max_slack = max(float(sv.max()) if sv.size else 0.0 for sv in slacks.values())
    if res.status != "solved":
        status = "failed"
    elif max_slack < _SLACK_TOL and res.kkt_residual < _SLACK_TOL:
        status = "solved"
    else:
        status = "solved-with-slack"

    return VelocitySolution(
        s=s, v=v, a=a, j=j,
        s_la=slacks["s_la"], s_ua=slacks["s_ua"],
        s_lj=slacks["s_lj"], s_uj=slacks["s_uj"], s_prog=slacks["s_prog"],
        objective=_objective(problem, v, slacks),
        kkt_residual=res.kkt_residual,
        status=status,
    )


def extract_command(sol: VelocitySolution) -> float:
    """First profile entry as the velocity command, floored at 0."""
    if sol.status == "failed":
        raise ValueError("cannot extract a command from a failed solution")
    return max(0.0, float(sol.v[1]))
