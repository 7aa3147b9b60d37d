"""Sparse convex-QP solver for the velocity planner.

Solves

    minimize    0.5 x'Px + q'x  (+ soft-constraint penalties)
    subject to  l <= Ax <= u

where rows flagged in ``eq_mask`` are equalities and rows flagged soft
carry a one-sided penalty ``wq*viol^2 + cl*viol`` on bound violations
instead of being enforced.

Method: Mehrotra predictor-corrector interior point. Soft rows turn into
explicit slack variables with their penalty in the objective, so the
stiff weights sit on the diagonal where the KKT factorization handles
them exactly. Single-variable hard rows become variable bounds and are
condensed into the KKT diagonal; everything else stays as constraint
rows. The KKT matrix is permuted to banded form (reverse Cuthill-McKee)
once per workspace and factored each iteration with LAPACK's banded LU,
which is what makes a 200-plus-row problem solvable in fractions of a
millisecond per iteration.

Stopping rule: primal residual, dual residual, and relative
complementarity gap all below ``tol``, or ``max_iter`` iterations. The
primal residual is absolute, in the caller's units. The dual residual is
relative to the size of the stationarity terms themselves (gradient,
constraint duals, bound duals): with penalty weights around 1e5 an
absolute dual tolerance would demand cancellation past double precision,
so the solver would stall a hair above it on problems it has already
solved. Internally the cost is scaled by 1/sqrt(max curvature) to keep
the stiff-penalty duals inside a comfortable floating-point range.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.csgraph import reverse_cuthill_mckee

_DELTA = 1e-8          # static KKT regularization
_DIVERGE_RATIO = 1e6   # give up when the residual blows past the best seen

try:
    # scipy's "@" burns several microseconds per call on dispatch, which
    # adds up at a handful of products per interior-point iteration. The
    # raw kernel accumulates into out, hence the fill.
    from scipy.sparse import _sparsetools

    def _csr_mv(a, x, out):
        out.fill(0.0)
        _sparsetools.csr_matvec(a.shape[0], a.shape[1],
                                a.indptr, a.indices, a.data, x, out)
        return out
except ImportError:  # pragma: no cover - fallback for exotic scipy builds
    def _csr_mv(a, x, out):
        np.copyto(out, a @ x)
        return out


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray
    status: str                # "solved" | "failed"
    iterations: int
    primal_residual: float     # absolute, caller units
    dual_residual: float       # relative to the stationarity-term scale

    @property
    def kkt_residual(self) -> float:
        return max(self.primal_residual, self.dual_residual)


class _Structure:
    """Expansion plan from the user's row form to the interior-point form.

    Depends only on the sparsity of (P, A), the row classes, and the
    finiteness pattern of (l, u), so one analysis serves every solve of a
    problem family.
    """

    __slots__ = (
        "n", "n_exp", "me", "mg", "fl", "fu",
        "eq_rows", "P_exp", "E", "G", "EG", "EGT",
        "g_src", "g_sign", "g_sigma",
        "bl_var", "bl_src", "bl_coef", "bu_var", "bu_src", "bu_coef",
        "sig_cost_w", "sig_cost_l", "lo_unique", "hi_unique",
        "perm", "iperm", "kl", "band_static", "band_dyn_h", "band_dyn_g",
        "lo_const",
    )


class QPWorkspace:
    """Reusable solver state for a fixed (P, A, row classes) pattern.

    Structure analysis, the banded ordering, and the symbolic KKT layout
    are computed once; per-solve work is purely numeric.
    """

    def __init__(self, P: sp.spmatrix, A: sp.spmatrix, eq_mask: np.ndarray,
                 soft: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None):
        self.n = P.shape[0]
        self.m = A.shape[0]
        self.P = sp.csc_matrix(P)
        self.A = sp.csr_matrix(A)
        self.eq_mask = np.asarray(eq_mask, dtype=bool)
        if soft is None:
            self.soft_mask = np.zeros(self.m, dtype=bool)
            self.wq = np.zeros(self.m)
            self.cl = np.zeros(self.m)
        else:
            self.soft_mask = np.asarray(soft[0], dtype=bool)
            self.wq = np.where(self.soft_mask, np.asarray(soft[1], dtype=float), 0.0)
            self.cl = np.where(self.soft_mask, np.asarray(soft[2], dtype=float), 0.0)
            if np.any(self.wq[self.soft_mask] <= 0) or np.any(self.cl[self.soft_mask] < 0):
                raise ValueError("soft rows need w_quad > 0 and c_lin >= 0")
            if np.any(self.soft_mask & self.eq_mask):
                raise ValueError("a row cannot be both soft and an equality")
        pmax = float(np.abs(self.P.data).max()) if self.P.nnz else 0.0
        wmax = float(self.wq.max()) if self.m else 0.0
        self.gamma = 1.0 / max(1.0, np.sqrt(max(pmax, 2.0 * wmax)))
        self._struct: _Structure | None = None

    # ------------------------------------------------------------------
    # structure analysis

    def _analyze(self, fl: np.ndarray, fu: np.ndarray) -> _Structure:
        st = _Structure()
        st.fl, st.fu = fl.copy(), fu.copy()
        n = self.n
        A = self.A
        st.eq_rows = np.flatnonzero(self.eq_mask)

        nnz_per_row = np.diff(A.indptr)
        single = (nnz_per_row == 1) & ~self.eq_mask & ~self.soft_mask

        # variable bounds from single-variable hard rows; one slot per
        # row side so each dual maps back to its source row
        bl_var, bl_src, bl_coef = [], [], []
        bu_var, bu_src, bu_coef = [], [], []
        # general one-sided rows: records of (source row, sign); soft rows
        # also get a slack column
        g_rows, g_src, g_sign, g_sigma = [], [], [], []
        sig_w, sig_l = [], []
        n_exp = n

        for r in range(self.m):
            if self.eq_mask[r]:
                continue
            lo_ok, up_ok = fl[r], fu[r]
            if single[r]:
                j = A.indices[A.indptr[r]]
                a = A.data[A.indptr[r]]
                if a == 0.0:
                    continue
                # a*x <= u is an upper bound for a > 0, else a lower one
                if up_ok:
                    (bu_var if a > 0 else bl_var).append(j)
                    (bu_src if a > 0 else bl_src).append(r)
                    (bu_coef if a > 0 else bl_coef).append(a)
                if lo_ok:
                    (bl_var if a > 0 else bu_var).append(j)
                    (bl_src if a > 0 else bu_src).append(r)
                    (bl_coef if a > 0 else bu_coef).append(a)
                continue
            if self.soft_mask[r]:
                if up_ok:
                    k = n_exp; n_exp += 1
                    g_rows.append((r, +1.0, k))
                    g_src.append(r); g_sign.append(+1.0); g_sigma.append(k)
                    sig_w.append(self.wq[r]); sig_l.append(self.cl[r])
                if lo_ok:
                    k = n_exp; n_exp += 1
                    g_rows.append((r, -1.0, k))
                    g_src.append(r); g_sign.append(-1.0); g_sigma.append(k)
                    sig_w.append(self.wq[r]); sig_l.append(self.cl[r])
            else:
                if up_ok:
                    g_rows.append((r, +1.0, -1))
                    g_src.append(r); g_sign.append(+1.0); g_sigma.append(-1)
                if lo_ok:
                    g_rows.append((r, -1.0, -1))
                    g_src.append(r); g_sign.append(-1.0); g_sigma.append(-1)

        st.n, st.n_exp = n, n_exp
        st.g_src = np.array(g_src, dtype=np.int64)
        st.g_sign = np.array(g_sign)
        st.g_sigma = np.array(g_sigma, dtype=np.int64)
        st.bl_var = np.array(bl_var, dtype=np.int64)
        st.bl_src = np.array(bl_src, dtype=np.int64)
        st.bl_coef = np.array(bl_coef)
        st.bu_var = np.array(bu_var, dtype=np.int64)
        st.bu_src = np.array(bu_src, dtype=np.int64)
        st.bu_coef = np.array(bu_coef)
        st.sig_cost_w = np.array(sig_w)
        st.sig_cost_l = np.array(sig_l)
        st.mg = len(g_rows)

        # expanded matrices (values static; rhs varies per solve)
        E = A[st.eq_rows]
        st.me = E.shape[0]
        st.E = sp.csr_matrix((E.data, E.indices, E.indptr), shape=(st.me, n_exp))
        rows, cols, vals = [], [], []
        for i, (r, sgn, sig) in enumerate(g_rows):
            for idx in range(A.indptr[r], A.indptr[r + 1]):
                rows.append(i); cols.append(A.indices[idx]); vals.append(sgn * A.data[idx])
            if sig >= 0:
                rows.append(i); cols.append(sig); vals.append(-1.0)
        st.G = sp.csr_matrix((vals, (rows, cols)), shape=(st.mg, n_exp))
        # one stacked matrix keeps the per-iteration matvec count down
        st.EG = sp.vstack([st.E, st.G]).tocsr()
        st.EGT = st.EG.T.tocsr()

        Pq = self.P * self.gamma
        if st.sig_cost_w.size:
            sig_diag = sp.diags(np.concatenate([
                np.zeros(n), 2.0 * st.sig_cost_w * self.gamma]))
            st.P_exp = (sp.block_diag([Pq, sp.csc_matrix((n_exp - n, n_exp - n))])
                        + sig_diag).tocsr()
        else:
            st.P_exp = sp.block_diag(
                [Pq, sp.csc_matrix((n_exp - n, n_exp - n))]).tocsr()

        # sigma slacks are nonnegative: constant lower-bound slots
        st.lo_const = np.arange(n, n_exp, dtype=np.int64)
        lo_all = np.concatenate([st.bl_var, st.lo_const])
        st.lo_unique = np.unique(lo_all).size == lo_all.size
        st.hi_unique = np.unique(st.bu_var).size == st.bu_var.size

        self._build_band(st)
        return st

    def _build_band(self, st: _Structure) -> None:
        """Banded symbolic layout of the KKT matrix

            [[H, E', G'], [E, -dI, 0], [G, 0, -D]]

        H's diagonal and D change every iteration; everything else is
        static. Stores band-storage index arrays for the fast updates.
        """
        n_exp, me, mg = st.n_exp, st.me, st.mg
        dim = n_exp + me + mg
        Psym = st.P_exp.tocoo()
        pr, pc, pv = [Psym.row], [Psym.col], [Psym.data]
        diag = np.arange(n_exp)
        pr.append(diag); pc.append(diag); pv.append(np.zeros(n_exp))
        Ec = st.E.tocoo()
        pr += [Ec.row + n_exp, Ec.col]
        pc += [Ec.col, Ec.row + n_exp]
        pv += [Ec.data, Ec.data]
        er = np.arange(me) + n_exp
        pr.append(er); pc.append(er); pv.append(np.full(me, -_DELTA))
        Gc = st.G.tocoo()
        pr += [Gc.row + n_exp + me, Gc.col]
        pc += [Gc.col, Gc.row + n_exp + me]
        pv += [Gc.data, Gc.data]
        gr = np.arange(mg) + n_exp + me
        pr.append(gr); pc.append(gr); pv.append(np.zeros(mg))
        rows = np.concatenate(pr); cols = np.concatenate(pc)
        vals = np.concatenate(pv)

        pattern = sp.csr_matrix((np.ones_like(vals), (rows, cols)), shape=(dim, dim))
        perm = np.asarray(reverse_cuthill_mckee(pattern, symmetric_mode=True))
        iperm = np.empty(dim, dtype=np.int64)
        iperm[perm] = np.arange(dim)
        ri, ci = iperm[rows], iperm[cols]
        kl = int(np.abs(ri - ci).max()) if len(ri) else 0

        # LAPACK general-band storage with room for pivoting fill
        ldab = 2 * kl + kl + 1
        band = np.zeros((ldab, dim))
        flat = (2 * kl + ri - ci) * dim + ci
        # duplicate (i, j) entries must accumulate
        order = np.argsort(flat, kind="stable")
        flat_s, vals_s = flat[order], vals[order]
        uniq, start = np.unique(flat_s, return_index=True)
        acc = np.add.reduceat(vals_s, start)
        band.ravel()[uniq] = acc

        # dynamic slots: H diagonal (first n_exp unknowns) and D diagonal.
        # Fortran order is what dgbtrf factors in place, so the static copy
        # and the flat update indices both live in that layout.
        hd = iperm[np.arange(n_exp)]
        gd = iperm[np.arange(mg) + n_exp + me]
        st.band_static = np.asfortranarray(band)
        st.band_dyn_h = hd * ldab + 2 * kl   # diagonal sits on band row 2*kl
        st.band_dyn_g = gd * ldab + 2 * kl
        st.perm = perm
        st.iperm = iperm
        st.kl = kl

    # ------------------------------------------------------------------
    # solve

    def solve(self, q: np.ndarray, l: np.ndarray, u: np.ndarray,
              max_iter: int = 200, tol: float = 1e-6) -> QPResult:
        q = np.asarray(q, dtype=float)
        l = np.asarray(l, dtype=float)
        u = np.asarray(u, dtype=float)
        fl = np.isfinite(l) & ~self.eq_mask
        fu = np.isfinite(u) & ~self.eq_mask
        st = self._struct
        if st is None or not (np.array_equal(fl, st.fl) and np.array_equal(fu, st.fu)):
            st = self._analyze(fl, fu)
            self._struct = st

        gam = self.gamma
        n, n_exp, me, mg = st.n, st.n_exp, st.me, st.mg
        cq = np.zeros(n_exp)
        cq[:n] = q * gam
        if st.sig_cost_l.size:
            cq[n:] = st.sig_cost_l * gam
        be = ((l + u) * 0.5)[st.eq_rows] if me else np.zeros(0)
        h = np.where(st.g_sign > 0, u[st.g_src], -l[st.g_src]) if mg else np.zeros(0)

        # bound slot values; slot duals map straight back to source rows
        bl_val = l[st.bl_src] / st.bl_coef if st.bl_var.size else np.zeros(0)
        bl_val = np.where(st.bl_coef > 0, bl_val, u[st.bl_src] / st.bl_coef) \
            if st.bl_var.size else bl_val
        bu_val = u[st.bu_src] / st.bu_coef if st.bu_var.size else np.zeros(0)
        bu_val = np.where(st.bu_coef > 0, bu_val, l[st.bu_src] / st.bu_coef) \
            if st.bu_var.size else bu_val
        lo_var = np.concatenate([st.bl_var, st.lo_const])
        lo_val = np.concatenate([bl_val, np.zeros(st.lo_const.size)])
        hi_var = st.bu_var
        hi_val = bu_val

        # infeasible inputs drive slacks to zero; _ipm detects the
        # resulting non-finites itself, so the fp warnings are noise
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = _ipm(st, cq, be, h, lo_var, lo_val, hi_var, hi_val,
                       max_iter, tol, gam)
        x_exp, y_eq, z_g, z_lo, z_hi, pri, dua, its, ok = out

        y = np.zeros(self.m)
        if me:
            y[st.eq_rows] = y_eq / gam
        if mg:
            np.add.at(y, st.g_src, st.g_sign * z_g / gam)
        if st.bl_var.size:
            np.add.at(y, st.bl_src, -z_lo[:st.bl_var.size] / (st.bl_coef * gam))
        if st.bu_var.size:
            np.add.at(y, st.bu_src, z_hi / (st.bu_coef * gam))

        return QPResult(
            x=x_exp[:n],
            y=y,
            status="solved" if ok else "failed",
            iterations=its,
            primal_residual=pri,
            dual_residual=dua,
        )


def _ipm(st: _Structure, cq, be, h, lo_var, lo_val, hi_var, hi_val,
         max_iter, tol, gam):
    """Mehrotra predictor-corrector on the expanded problem."""
    n_exp, me, mg, kl = st.n_exp, st.me, st.mg, st.kl
    dim = n_exp + me + mg
    P, EG, EGT = st.P_exp, st.EG, st.EGT
    nl, nh = lo_var.size, hi_var.size
    nb = nl + nh
    lo_u, hi_u = st.lo_unique, st.hi_unique

    # interior start: midpoints where boxed, unit margin otherwise
    x = np.zeros(n_exp)
    vlo = np.full(n_exp, -np.inf); vhi = np.full(n_exp, np.inf)
    np.maximum.at(vlo, lo_var, lo_val)
    np.minimum.at(vhi, hi_var, hi_val)
    two = np.isfinite(vlo) & np.isfinite(vhi)
    x[two] = 0.5 * (vlo[two] + vhi[two])
    only_lo = np.isfinite(vlo) & ~two
    x[only_lo] = np.maximum(x[only_lo], vlo[only_lo] + 1.0)
    only_hi = np.isfinite(vhi) & ~two
    x[only_hi] = np.minimum(x[only_hi], vhi[only_hi] - 1.0)

    y = np.zeros(me)
    zg = np.ones(mg); sg = np.ones(mg)
    sl = np.maximum(x[lo_var] - lo_val, 0.1); zl = np.ones(nl)
    sh = np.maximum(hi_val - x[hi_var], 0.1); zh = np.ones(nh)

    # per-iteration scratch, allocated once
    Px = np.empty(n_exp)
    Ax = np.empty(me + mg)
    rd = np.empty(n_exp)
    yz = np.empty(me + mg)
    hd = np.empty(n_exp)
    rhs = np.empty(dim)
    r2 = np.empty(dim)
    tmp_n = np.empty(n_exp)
    band = np.empty_like(st.band_static)
    bandflat = band.ravel(order="K")
    ratio = (np.empty(mg), np.empty(nl), np.empty(nh))
    neg = (np.empty(mg, dtype=bool), np.empty(nl, dtype=bool),
           np.empty(nh, dtype=bool))

    def step_len(u1, du1, u2, du2, u3, du3):
        """Largest a in [0, inf) with u + a*du >= 0, fused over three blocks."""
        m = np.inf
        for u, du, buf, msk in ((u1, du1, ratio[0], neg[0]),
                                (u2, du2, ratio[1], neg[1]),
                                (u3, du3, ratio[2], neg[2])):
            if u.size:
                np.less(du, 0.0, out=msk)
                buf.fill(-np.inf)
                np.divide(u, du, out=buf, where=msk)
                m = min(m, -float(buf.max()))
        return m

    cq_max = float(np.abs(cq).max()) if n_exp else 0.0

    best = (np.inf, np.inf, np.inf, x, y, zg, zl, zh)
    it = 0
    for it in range(1, max_iter + 1):
        _csr_mv(P, x, Px)
        _csr_mv(EG, x, Ax)
        np.copyto(yz[:me], y)
        np.copyto(yz[me:], zg)
        _csr_mv(EGT, yz, rd)
        # scale of the stationarity terms, for the relative dual check
        d_scale = max(
            gam,
            float(np.abs(rd).max()) if n_exp else 0.0,
            float(np.abs(Px).max()) if n_exp else 0.0,
            cq_max,
            float(np.abs(zl).max()) if nl else 0.0,
            float(np.abs(zh).max()) if nh else 0.0,
        )
        rd += Px
        rd += cq
        if lo_u:
            rd[lo_var] -= zl
        else:
            np.subtract.at(rd, lo_var, zl)
        if hi_u:
            rd[hi_var] += zh
        else:
            np.add.at(rd, hi_var, zh)
        rp = Ax[:me] - be
        rg = Ax[me:] + sg - h
        rl = (lo_val - x[lo_var]) + sl
        rh = (x[hi_var] - hi_val) + sh
        dots = float(sg @ zg) + float(sl @ zl) + float(sh @ zh)
        mu = dots / max(1, mg + nb)
        obj_s = 0.5 * float(x @ Px) + float(cq @ x)
        pri = float(np.max((
            float(np.abs(rp).max()) if me else 0.0,
            float(np.abs(rg).max()) if mg else 0.0,
            float(np.abs(rl).max()) if nl else 0.0,
            float(np.abs(rh).max()) if nh else 0.0,
        )))
        dua = (float(np.abs(rd).max()) if n_exp else 0.0) / d_scale
        gap = dots / max(1.0, abs(obj_s))
        # np.max, not the builtin: NaN must poison res, or a breakdown
        # iterate would masquerade as converged
        res = float(np.max((pri, dua, gap)))
        if not np.isfinite(res):
            break  # slacks collapsed (infeasible or breakdown), keep best
        if res < best[0]:
            best = (res, pri, dua, x.copy(), y.copy(), zg.copy(), zl.copy(), zh.copy())
        if res < tol:
            return x, y, zg, zl, zh, pri, dua, it, True
        if res > _DIVERGE_RATIO * best[0] and best[0] < tol * 1e3:
            break
        refine = res < 1e-2  # accuracy only matters in the endgame

        # condensed KKT: bounds fold into the H diagonal
        hd.fill(_DELTA)
        if lo_u:
            hd[lo_var] += zl / sl
        else:
            np.add.at(hd, lo_var, zl / sl)
        if hi_u:
            hd[hi_var] += zh / sh
        else:
            np.add.at(hd, hi_var, zh / sh)
        dg = (sg / zg) + _DELTA if mg else np.zeros(0)
        np.copyto(band, st.band_static)
        bandflat[st.band_dyn_h] += hd
        if mg:
            bandflat[st.band_dyn_g] = -dg
        lu, piv, info = lapack.dgbtrf(band, kl, kl, overwrite_ab=1)
        if info != 0:
            break

        def solve_kkt():
            d, info2 = lapack.dgbtrs(lu, kl, kl, rhs[st.perm], piv, overwrite_b=1)
            if info2 != 0:
                return None
            d = d[st.iperm]
            if not refine:
                return d
            # one refinement pass against the condensed system
            dx, dyz = d[:n_exp], d[n_exp:]
            _csr_mv(P, dx, tmp_n)
            r2[:n_exp] = tmp_n + hd * dx - rhs[:n_exp]
            _csr_mv(EGT, dyz, tmp_n)
            r2[:n_exp] += tmp_n
            adx = _csr_mv(EG, dx, yz)
            r2[n_exp:n_exp + me] = (adx[:me] - _DELTA * dyz[:me]) - rhs[n_exp:n_exp + me]
            if mg:
                r2[n_exp + me:] = (adx[me:] - dg * dyz[me:]) - rhs[n_exp + me:]
            c, info2 = lapack.dgbtrs(lu, kl, kl, r2[st.perm], piv, overwrite_b=1)
            if info2 != 0:
                return d
            return d - c[st.iperm]

        def newton(rsg, rsl, rsh):
            rdm = rd.copy()
            if lo_u:
                rdm[lo_var] += (rsl - zl * rl) / sl
            else:
                np.add.at(rdm, lo_var, (rsl - zl * rl) / sl)
            if hi_u:
                rdm[hi_var] -= (rsh - zh * rh) / sh
            else:
                np.subtract.at(rdm, hi_var, (rsh - zh * rh) / sh)
            np.negative(rdm, out=rhs[:n_exp])
            np.negative(rp, out=rhs[n_exp:n_exp + me])
            if mg:
                rhs[n_exp + me:] = rsg / zg - rg
            d = solve_kkt()
            if d is None:
                return None
            dx = d[:n_exp]
            dy = d[n_exp:n_exp + me]
            dzg = d[n_exp + me:]
            dsg = -(rsg + sg * dzg) / zg if mg else dzg
            dsl = dx[lo_var] - rl
            dsh = -dx[hi_var] - rh
            dzl = -(rsl + zl * dsl) / sl
            dzh = -(rsh + zh * dsh) / sh
            return dx, dy, dzg, dsg, dzl, dsl, dzh, dsh

        step = newton(sg * zg, sl * zl, sh * zh)
        if step is None:
            break
        dx, dy, dzg, dsg, dzl, dsl, dzh, dsh = step

        if it == 1:
            # Mehrotra starting point: full affine step, then shift the
            # slack/dual pairs back into the positive orthant. Jumps the
            # duals straight to the scale the problem data implies, which
            # matters when stiff penalties want multipliers around 1e4.
            x = x + dx; y = y + dy
            sn = np.concatenate([sg + dsg, sl + dsl, sh + dsh])
            zn = np.concatenate([zg + dzg, zl + dzl, zh + dzh])
            ds = max(0.0, -1.5 * float(sn.min())) if sn.size else 0.0
            dz = max(0.0, -1.5 * float(zn.min())) if zn.size else 0.0
            num = float((sn + ds) @ (zn + dz))
            den_s = float((zn + dz).sum()); den_z = float((sn + ds).sum())
            ds += 0.5 * num / max(den_s, 1e-12)
            dz += 0.5 * num / max(den_z, 1e-12)
            sn += ds; zn += dz
            sg, sl, sh = sn[:mg], sn[mg:mg + nl], sn[mg + nl:]
            zg, zl, zh = zn[:mg], zn[mg:mg + nl], zn[mg + nl:]
            continue

        ap = min(step_len(sg, dsg, sl, dsl, sh, dsh), 1.0)
        ad = min(step_len(zg, dzg, zl, dzl, zh, dzh), 1.0)
        ap *= 0.99; ad *= 0.99
        mu_aff = (float((sg + ap * dsg) @ (zg + ad * dzg))
                  + float((sl + ap * dsl) @ (zl + ad * dzl))
                  + float((sh + ap * dsh) @ (zh + ad * dzh))) / max(1, mg + nb)
        sig = min(1.0, max(0.0, mu_aff / mu if mu > 0 else 0.0) ** 3)
        step = newton(sg * zg + dsg * dzg - sig * mu,
                      sl * zl + dsl * dzl - sig * mu,
                      sh * zh + dsh * dzh - sig * mu)
        if step is None:
            break
        dx, dy, dzg, dsg, dzl, dsl, dzh, dsh = step
        tau = min(0.9995, max(0.95, 1.0 - mu))
        ap = min(1.0, tau * step_len(sg, dsg, sl, dsl, sh, dsh))
        ad = min(1.0, tau * step_len(zg, dzg, zl, dzl, zh, dzh))
        x += ap * dx; sg += ap * dsg; sl += ap * dsl; sh += ap * dsh
        y += ad * dy; zg += ad * dzg; zl += ad * dzl; zh += ad * dzh

    # not converged: hand back the best iterate seen
    _, pri, dua, x, y, zg, zl, zh = best
    return x, y, zg, zl, zh, pri, dua, it, False


def solve_qp(P: sp.spmatrix, q: np.ndarray, A: sp.spmatrix, l: np.ndarray,
             u: np.ndarray, eq_mask: np.ndarray | None = None,
             max_iter: int = 200, tol: float = 1e-6,
             soft: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None) -> QPResult:
    """One-shot interface; builds a workspace and solves."""
    if eq_mask is None:
        eq_mask = np.asarray(l) == np.asarray(u)
    ws = QPWorkspace(P, A, eq_mask, soft=soft)
    return ws.solve(np.asarray(q, dtype=float), np.asarray(l, dtype=float),
                    np.asarray(u, dtype=float), max_iter=max_iter, tol=tol)
