"""Convex QP engine: operator splitting with an active-set polish step.

Solves  min 0.5 x'Px + q'x  s.t.  l <= Ax <= u  (equalities via l == u).

The splitting iteration factorizes one quasi-definite KKT matrix that stays
valid as long as P, A and the penalty vector are unchanged, so bound-only
variations (branch-and-bound node fixings) reuse it.  Accepted solutions are
polished on the detected active set and certified by unscaled KKT residuals;
primal infeasibility is detected through the divergence certificate of the
dual iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_QP_TOLERANCE = 1e-7


class QPError(ValueError):
    """Structurally unusable problem (indefinite cost, shape mismatch)."""


@dataclass(frozen=True)
class QPProblem:
    p_mat: sp.csc_matrix
    q: np.ndarray
    a_mat: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    @property
    def n(self) -> int:
        return self.p_mat.shape[0]

    @property
    def m(self) -> int:
        return self.a_mat.shape[0]


@dataclass
class QPResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    status: str  # "optimal" | "infeasible" | "iteration_limit"
    kkt_residual: float
    iterations: int


def _check_psd(p_mat: sp.csc_matrix) -> None:
    d = p_mat.diagonal()
    if np.any(d < -1e-12):
        raise QPError("cost matrix has a negative diagonal entry")
    asym = abs(p_mat - p_mat.T)
    if asym.nnz and asym.max() > 1e-9:
        raise QPError("cost matrix must be symmetric")
    if p_mat.shape[0] <= 400 and p_mat.nnz:
        w = np.linalg.eigvalsh(p_mat.toarray())
        if w.min() < -1e-9:
            raise QPError("cost matrix is indefinite")


def _ruiz_scale(p_mat, q, a_mat, l, u, n_iter=10):
    """Modified Ruiz equilibration with cost scaling; returns scaled data."""
    n, m = p_mat.shape[0], a_mat.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    c = 1.0
    ps, qs, as_ = p_mat.copy(), q.copy(), a_mat.copy()
    for _ in range(n_iter):
        col_p = np.abs(ps).max(axis=0).toarray().ravel() if ps.nnz else np.zeros(n)
        col_a = np.abs(as_).max(axis=0).toarray().ravel() if as_.nnz else np.zeros(n)
        delta_d = 1.0 / np.sqrt(np.clip(np.maximum(col_p, col_a), 1e-8, 1e8))
        row_a = np.abs(as_).max(axis=1).toarray().ravel() if as_.nnz else np.zeros(m)
        delta_e = 1.0 / np.sqrt(np.clip(row_a, 1e-8, 1e8))
        dd = sp.diags(delta_d)
        de = sp.diags(delta_e)
        ps = (dd @ ps @ dd).tocsc()
        qs = delta_d * qs
        as_ = (de @ as_ @ dd).tocsc()
        d *= delta_d
        e *= delta_e
    # one-shot cost scaling; identity for zero objectives
    p_col_mean = np.abs(ps).max(axis=0).toarray().ravel().mean() if ps.nnz else 0.0
    q_max = np.abs(qs).max(initial=0.0)
    denom = max(p_col_mean, q_max)
    if denom > 1e-12:
        c = min(max(1.0 / denom, 1e-6), 1e6)
        ps = ps * c
        qs = qs * c
    return ps.tocsc(), qs, as_.tocsc(), d, e, c


@dataclass
class _Work:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray


class QPSolver:
    """Reusable solver for one (P, A) structure with varying bounds."""

    def __init__(self, prob: QPProblem, tolerance: float = DEFAULT_QP_TOLERANCE,
                 sigma: float = 1e-6, alpha: float = 1.6, rho: float = 0.1,
                 eq_rho_scale: float = 1e3, max_iter: int = 100_000,
                 check_every: int = 25, adaptive_rho: bool = True,
                 scale_iters: int = 10):
        if prob.p_mat.shape != (prob.n, prob.n) or prob.a_mat.shape[1] != prob.n:
            raise QPError("inconsistent problem dimensions")
        if len(prob.l) != prob.m or len(prob.u) != prob.m:
            raise QPError("bound vectors must match the row count")
        _check_psd(prob.p_mat)
        self.prob = prob
        self.tolerance = tolerance
        self.sigma = sigma
        self.alpha = alpha
        self.max_iter = max_iter
        self.check_every = check_every
        self.adaptive_rho = adaptive_rho
        self._rho_updates_left = 8 if adaptive_rho else 0
        self.solves = 0

        (self._ps, self._qs, self._as, self._d, self._e, self._c) = _ruiz_scale(
            prob.p_mat, prob.q, prob.a_mat, prob.l, prob.u, scale_iters)
        eq_rows = np.isfinite(prob.l) & np.isfinite(prob.u) & (prob.l == prob.u)
        self._rho = np.full(prob.m, rho)
        self._rho[eq_rows] = rho * eq_rho_scale
        self._factorize()
        self._warm: Optional[_Work] = None

    # -- linear algebra ----------------------------------------------------
    def _factorize(self) -> None:
        n, m = self.prob.n, self.prob.m
        kkt = sp.bmat(
            [[self._ps + self.sigma * sp.identity(n), self._as.T],
             [self._as, -sp.diags(1.0 / self._rho)]],
            format="csc")
        self._lu = spla.splu(kkt)

    def _scaled_bounds(self, l, u):
        return self._e * l, self._e * u

    # -- residuals on original data ----------------------------------------
    def _residuals(self, x, z, y, l, u):
        prob = self.prob
        ax = prob.a_mat @ x
        viol = np.maximum(np.maximum(l - ax, ax - u), 0.0)
        r_prim = float(viol.max(initial=0.0))
        r_dual = float(np.abs(prob.p_mat @ x + prob.q + prob.a_mat.T @ y).max(initial=0.0))
        y_pos = np.maximum(y, 0.0)
        y_neg = np.maximum(-y, 0.0)
        # a multiplier pushing on an infinite bound counts as its own violation
        gap_u = np.abs(np.where(np.isfinite(u), u - ax, 1.0))
        gap_l = np.abs(np.where(np.isfinite(l), ax - l, 1.0))
        comp_u = y_pos * gap_u
        comp_l = y_neg * gap_l
        r_comp = float(max(comp_u.max(initial=0.0), comp_l.max(initial=0.0)))
        return r_prim, r_dual, r_comp

    def _objective(self, x) -> float:
        return float(0.5 * x @ (self.prob.p_mat @ x) + self.prob.q @ x)

    # -- infeasibility certificate ------------------------------------------
    def _primal_infeasible(self, dy, l, u, tol=1e-11) -> bool:
        norm = np.abs(dy).max(initial=0.0)
        if norm <= tol:
            return False
        dyn = dy / norm
        eps = 1e-5
        if np.abs(self.prob.a_mat.T @ dyn).max(initial=0.0) > eps:
            return False
        dy_pos = np.maximum(dyn, 0.0)
        dy_neg = np.minimum(dyn, 0.0)
        if np.any(dy_pos[~np.isfinite(u)] > eps) or np.any(-dy_neg[~np.isfinite(l)] > eps):
            return False
        support = float(np.sum(u[np.isfinite(u)] * dy_pos[np.isfinite(u)])
                        + np.sum(l[np.isfinite(l)] * dy_neg[np.isfinite(l)]))
        return support < -eps

    # -- polish --------------------------------------------------------------
    def _polish(self, x, z, y, l, u):
        prob = self.prob
        scale = max(1.0, np.abs(y).max(initial=0.0))
        for rel in (1e-6, 1e-9):
            thresh = rel * scale
            eq = np.isfinite(l) & np.isfinite(u) & (u - l <= 1e-12)
            act_low = (~eq) & (y < -thresh) & np.isfinite(l)
            act_up = (~eq) & (y > thresh) & np.isfinite(u)
            rows = np.nonzero(eq | act_low | act_up)[0]
            b_act = np.where(eq | act_up, u, l)[rows]
            g_mat = prob.a_mat[rows]
            n, k = prob.n, len(rows)
            delta = 1e-9
            if k:
                kkt = sp.bmat(
                    [[prob.p_mat + delta * sp.identity(n), g_mat.T],
                     [g_mat, -delta * sp.identity(k)]], format="csc")
            else:
                kkt = (prob.p_mat + delta * sp.identity(n)).tocsc()
            rhs = np.concatenate([-prob.q, b_act])
            try:
                lu = spla.splu(kkt)
            except RuntimeError:
                continue
            sol = lu.solve(rhs)
            # refinement against the unregularized system
            for _ in range(3):
                xx, nu = sol[:n], sol[n:]
                res = rhs - np.concatenate(
                    [prob.p_mat @ xx + (g_mat.T @ nu if k else np.zeros(n)),
                     g_mat @ xx if k else np.empty(0)])
                sol = sol + lu.solve(res)
            x_pol = sol[:n]
            y_pol = np.zeros(prob.m)
            y_pol[rows] = sol[n:]
            z_pol = prob.a_mat @ x_pol
            z_pol = np.clip(z_pol, l, u)
            r = self._residuals(x_pol, z_pol, y_pol, l, u)
            if max(r) <= self.tolerance:
                return x_pol, z_pol, y_pol, max(r)
        if prob.p_mat.nnz == 0 and np.abs(prob.q).max(initial=0.0) == 0.0:
            return self._polish_feasibility(x, l, u)
        return None

    def _polish_feasibility(self, x0, l, u):
        """Zero-objective case: project the iterate onto the touching rows."""
        prob = self.prob
        n = prob.n
        x = x0.copy()
        for _ in range(3):
            ax = prob.a_mat @ x
            margin = 1e-4
            near_l = np.isfinite(l) & (ax - l <= margin)
            near_u = np.isfinite(u) & (u - ax <= margin)
            rows = np.nonzero(near_l | near_u)[0]
            if len(rows) == 0:
                break
            b_act = np.where(near_u, u, l)[rows]
            g_mat = prob.a_mat[rows]
            k = len(rows)
            kkt = sp.bmat([[sp.identity(n), g_mat.T],
                           [g_mat, -1e-9 * sp.identity(k)]], format="csc")
            rhs = np.concatenate([x, b_act])
            try:
                sol = spla.splu(kkt).solve(rhs)
            except RuntimeError:
                return None
            x = sol[:n]
        y = np.zeros(prob.m)
        z = np.clip(prob.a_mat @ x, l, u)
        r = self._residuals(x, z, y, l, u)
        if max(r) <= self.tolerance:
            return x, z, y, max(r)
        return None

    # -- main solve -----------------------------------------------------------
    def solve(self, l: Optional[np.ndarray] = None, u: Optional[np.ndarray] = None,
              warm: Optional[tuple[np.ndarray, np.ndarray]] = None,
              max_iter: Optional[int] = None) -> QPResult:
        prob = self.prob
        l = prob.l if l is None else l
        u = prob.u if u is None else u
        if np.any(l > u + 1e-12):
            # crossed bounds: trivially infeasible (certificate on that row)
            y = np.zeros(prob.m)
            i = int(np.argmax(l - u))
            y[i] = 1.0
            return QPResult(x=np.zeros(prob.n), y=y, z=np.zeros(prob.m),
                            objective=np.inf, status="infeasible",
                            kkt_residual=float(l[i] - u[i]), iterations=0)
        ls, us = self._scaled_bounds(l, u)
        n, m = prob.n, prob.m
        if warm is not None:
            x = warm[0] / self._d
            y = warm[1] * self._c / self._e
            z = np.clip(self._as @ x, ls, us)
        elif self._warm is not None:
            x, z, y = self._warm.x.copy(), self._warm.z.copy(), self._warm.y.copy()
            z = np.clip(z, ls, us)
        else:
            x = np.zeros(n)
            z = np.clip(np.zeros(m), ls, us)
            y = np.zeros(m)

        limit = max_iter or self.max_iter
        eps_admm = max(self.tolerance * 1e2, 1e-6)
        rho = self._rho
        y_prev_check = y.copy()
        it = 0
        status = "iteration_limit"
        while it < limit:
            for _ in range(self.check_every):
                rhs = np.concatenate([self.sigma * x - self._qs, z - y / rho])
                sol = self._lu.solve(rhs)
                x_t = sol[:n]
                nu = sol[n:]
                z_t = z + (nu - y) / rho
                x = self.alpha * x_t + (1 - self.alpha) * x
                z_r = self.alpha * z_t + (1 - self.alpha) * z
                z_new = np.clip(z_r + y / rho, ls, us)
                y = y + rho * (z_r - z_new)
                z = z_new
                it += 1
            x_u = self._d * x
            z_u = z / self._e
            y_u = self._e * y / self._c
            r_prim, r_dual, _ = self._residuals(x_u, z_u, y_u, l, u)
            if r_prim <= eps_admm and r_dual <= eps_admm:
                polished = self._polish(x_u, z_u, y_u, l, u)
                if polished is not None:
                    x_p, z_p, y_p, res = polished
                    self._warm = _Work(x=x.copy(), z=z.copy(), y=y.copy())
                    self.solves += 1
                    return QPResult(x=x_p, y=y_p, z=z_p,
                                    objective=self._objective(x_p),
                                    status="optimal", kkt_residual=res,
                                    iterations=it)
                # polish failed: demand more accuracy before retrying
                if eps_admm <= self.tolerance:
                    r = self._residuals(x_u, z_u, y_u, l, u)
                    if max(r) <= self.tolerance:
                        self._warm = _Work(x=x.copy(), z=z.copy(), y=y.copy())
                        self.solves += 1
                        return QPResult(x=x_u, y=y_u, z=z_u,
                                        objective=self._objective(x_u),
                                        status="optimal", kkt_residual=max(r),
                                        iterations=it)
                eps_admm = max(eps_admm / 100.0, self.tolerance)
            dy = (y - y_prev_check) / self._c * self._e
            if self._primal_infeasible(dy, l, u):
                self.solves += 1
                return QPResult(x=self._d * x, y=dy, z=z / self._e,
                                objective=np.inf, status="infeasible",
                                kkt_residual=float(np.abs(dy).max()),
                                iterations=it)
            y_prev_check = y.copy()
            if self.adaptive_rho and self._rho_updates_left > 0 and it % 400 == 0:
                self._maybe_update_rho(x_u, z_u, y_u, l, u)
                rho = self._rho
        self.solves += 1
        x_u = self._d * x
        y_u = self._e * y / self._c
        z_u = z / self._e
        r = self._residuals(x_u, z_u, y_u, l, u)
        return QPResult(x=x_u, y=y_u, z=z_u, objective=self._objective(x_u),
                        status="iteration_limit", kkt_residual=max(r), iterations=it)

    def _maybe_update_rho(self, x, z, y, l, u) -> None:
        prob = self.prob
        ax = prob.a_mat @ x
        r_prim, r_dual, _ = self._residuals(x, z, y, l, u)
        p_scale = max(np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1e-10)
        d_scale = max(np.abs(prob.p_mat @ x).max(initial=0.0),
                      np.abs(prob.a_mat.T @ y).max(initial=0.0),
                      np.abs(prob.q).max(initial=0.0), 1e-10)
        ratio = np.sqrt((r_prim / p_scale) / max(r_dual / d_scale, 1e-16))
        if ratio > 5.0 or ratio < 0.2:
            self._rho = np.clip(self._rho * ratio, 1e-6, 1e6)
            self._factorize()
            self._rho_updates_left -= 1


def solve_qp(prob: QPProblem, tolerance: float = DEFAULT_QP_TOLERANCE,
             **kwargs) -> QPResult:
    """One-shot convenience wrapper around QPSolver."""
    return QPSolver(prob, tolerance=tolerance, **kwargs).solve()
