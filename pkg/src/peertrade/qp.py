"""Dense convex quadratic programming with full multiplier recovery.

Solves  minimize 0.5 x'Px + r'x  subject to  A_ineq x <= b_ineq,
A_eq x = b_eq  with a Mehrotra predictor-corrector primal-dual
interior-point method on dense factorizations.  Problem sizes here are a
few hundred variables at most, and the Lagrange multipliers are the point
of the exercise (they are the market prices), so the method keeps the
equality rows explicit and reports every multiplier.

The engine is written once, vectorized over a leading batch axis: a batch
of problems sharing P and all constraint matrices but differing in the
linear term r runs through the same arithmetic as a single solve.  That
is what makes million-point parameter sweeps tractable on one core, and
it keeps the two code paths trivially consistent.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_MAX_ITER = "max_iter"

_STATUS_CODES = {0: STATUS_OPTIMAL, 1: STATUS_INFEASIBLE,
                 2: STATUS_UNBOUNDED, 3: STATUS_MAX_ITER}


class QpError(ValueError):
    """Raised for malformed problems (dimensions, symmetry, PSD)."""


@dataclass(frozen=True)
class QpProblem:
    """Data of one convex QP in minimization form.

    ``P`` must be symmetric PSD; zero rows/columns (linear variables) are
    fine.  Empty constraint blocks are represented by (0, n) matrices.
    ``var_names`` is optional and only used in diagnostics.
    """

    P: np.ndarray
    r: np.ndarray
    A_ineq: np.ndarray
    b_ineq: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    var_names: Optional[tuple] = None

    def __post_init__(self):
        n = len(self.r)
        P = np.asarray(self.P, dtype=float)
        if P.shape != (n, n):
            raise QpError(f"P has shape {P.shape}, expected ({n}, {n})")
        scale = np.abs(P).max() if P.size else 0.0
        if scale > 0 and np.abs(P - P.T).max() > 1e-12 * scale:
            raise QpError("P is not symmetric within 1e-12 relative")
        for name, A, b in (("A_ineq", self.A_ineq, self.b_ineq),
                           ("A_eq", self.A_eq, self.b_eq)):
            A = np.asarray(A)
            if A.ndim != 2 or A.shape[1] != n:
                raise QpError(f"{name} has shape {A.shape}, expected (*, {n})")
            if A.shape[0] != len(b):
                raise QpError(f"{name} has {A.shape[0]} rows but its rhs has "
                              f"{len(b)} entries")
        if self.var_names is not None and len(self.var_names) != n:
            raise QpError(f"{len(self.var_names)} variable names for {n} variables")

    @property
    def n_var(self) -> int:
        return len(self.r)

    @property
    def n_ineq(self) -> int:
        return len(self.b_ineq)

    @property
    def n_eq(self) -> int:
        return len(self.b_eq)

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.r @ x)


def make_problem(P, r, A_ineq=None, b_ineq=None, A_eq=None, b_eq=None,
                 var_names=None) -> QpProblem:
    """Convenience constructor that fills in empty constraint blocks."""
    r = np.asarray(r, dtype=float).ravel()
    n = len(r)
    if A_ineq is None:
        A_ineq, b_ineq = np.zeros((0, n)), np.zeros(0)
    if A_eq is None:
        A_eq, b_eq = np.zeros((0, n)), np.zeros(0)
    return QpProblem(P=np.asarray(P, dtype=float),
                     r=r,
                     A_ineq=np.asarray(A_ineq, dtype=float).reshape(-1, n),
                     b_ineq=np.asarray(b_ineq, dtype=float).ravel(),
                     A_eq=np.asarray(A_eq, dtype=float).reshape(-1, n),
                     b_eq=np.asarray(b_eq, dtype=float).ravel(),
                     var_names=tuple(var_names) if var_names is not None else None)


@dataclass(frozen=True)
class QpSolution:
    """Result of one solve: primal point, multipliers, diagnostics.

    ``kkt_residuals`` holds max-norms for stationarity, primal
    feasibility, dual feasibility (multiplier negativity), and
    complementarity.  On anything other than ``optimal`` the attached
    iterate is the best one found; for ``infeasible`` the message carries
    a Farkas-style residual report.
    """

    x: np.ndarray
    mult_ineq: np.ndarray
    mult_eq: np.ndarray
    objective: float
    status: str
    kkt_residuals: dict
    iterations: int
    eps_reg: float = 0.0
    message: str = ""


@dataclass
class QpBatchSolution:
    """Stacked solutions of a batch sharing everything but the linear term."""

    x: np.ndarray           # (B, n)
    mult_ineq: np.ndarray   # (B, m)
    mult_eq: np.ndarray     # (B, p)
    objective: np.ndarray   # (B,)
    status_code: np.ndarray  # (B,) ints, see _STATUS_CODES
    residual: np.ndarray    # (B,) worst KKT residual
    iterations: np.ndarray  # (B,)

    def status(self, i: int) -> str:
        return _STATUS_CODES[int(self.status_code[i])]

    @property
    def all_optimal(self) -> bool:
        return bool(np.all(self.status_code == 0))


def _check_psd(P: np.ndarray) -> None:
    if P.size == 0 or not np.any(P):
        return
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    scale = max(abs(w[0]), abs(w[-1]))
    if w[0] < -1e-10 * scale:
        raise QpError(f"P is not positive semidefinite: min eigenvalue {w[0]:.3e} "
                      f"(floor {-1e-10 * scale:.3e})")


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100,
          eps_reg: float = 0.0, reg_mask: Optional[np.ndarray] = None,
          polish: bool = True) -> QpSolution:
    """Solve one QP to ``tol`` on all KKT residual norms.

    ``eps_reg`` adds a Tikhonov term eps_reg*||x_masked||^2 to the
    objective (all variables unless ``reg_mask`` selects a subset).  It is
    a tie-breaker for problems with degenerate optimal faces, picks the
    minimum-norm representative, and is reported back in the solution.
    """
    batch = solve_batch(problem, problem.r[None, :], tol=tol,
                        max_iter=max_iter, eps_reg=eps_reg, reg_mask=reg_mask,
                        polish=polish)
    status = batch.status(0)
    message = ""
    if status == STATUS_INFEASIBLE:
        x = batch.x[0]
        r_eq = problem.A_eq @ x - problem.b_eq
        r_in = problem.A_ineq @ x - problem.b_ineq
        z = batch.mult_ineq[0]
        y = batch.mult_eq[0]
        ray = np.abs(problem.A_ineq.T @ z + problem.A_eq.T @ y).max() if (z.size or y.size) else 0.0
        gain = float(problem.b_ineq @ z + problem.b_eq @ y) if (z.size or y.size) else 0.0
        bits = []
        if r_eq.size:
            bits.append(f"max |A_eq x - b_eq| = {np.abs(r_eq).max():.3e}")
        if r_in.size:
            bits.append(f"max (A_ineq x - b_ineq) = {r_in.max():.3e}")
        bits.append(f"Farkas certificate: |A'z + A_eq'y| <= {ray:.3e} "
                    f"with b'z + b_eq'y = {gain:.3e} for scaled multipliers")
        message = "no feasible point found; " + "; ".join(bits)
    elif status == STATUS_UNBOUNDED:
        message = "objective appears unbounded below along a feasible ray"
    elif status == STATUS_MAX_ITER:
        message = f"stopped after {max_iter} iterations; best iterate attached"

    x = batch.x[0]
    z = batch.mult_ineq[0]
    y = batch.mult_eq[0]
    stat = problem.P @ x + problem.r + problem.A_ineq.T @ z + problem.A_eq.T @ y
    if eps_reg:
        mask = np.ones(problem.n_var) if reg_mask is None else np.asarray(reg_mask, dtype=float)
        stat = stat + 2.0 * eps_reg * mask * x
    primal = 0.0
    comp = 0.0
    if problem.n_eq:
        primal = max(primal, float(np.abs(problem.A_eq @ x - problem.b_eq).max()))
    if problem.n_ineq:
        slack = problem.b_ineq - problem.A_ineq @ x
        primal = max(primal, float(max(-slack.min(), 0.0)))
        comp = float(np.abs(z * slack).max())
    residuals = {
        "stationarity": float(np.abs(stat).max()) if stat.size else 0.0,
        "primal": primal,
        "dual": float(max(-z.min(), 0.0)) if z.size else 0.0,
        "complementarity": comp,
    }
    return QpSolution(x=x, mult_ineq=z, mult_eq=y,
                      objective=problem.objective(x), status=status,
                      kkt_residuals=residuals,
                      iterations=int(batch.iterations[0]),
                      eps_reg=eps_reg, message=message)


def solve_batch(problem: QpProblem, R: np.ndarray, tol: float = 1e-8,
                max_iter: int = 100, eps_reg: float = 0.0,
                reg_mask: Optional[np.ndarray] = None,
                polish: bool = True) -> QpBatchSolution:
    """Solve many QPs sharing P and constraints, row i using linear term R[i].

    Runs the interior-point iterations vectorized over the batch; each
    problem stops updating once converged, so results are independent of
    what else sits in the batch.  ``polish`` re-solves each converged
    iterate's active face exactly, which matters at degenerate vertices
    (see :func:`_polish_batch`).
    """
    P = np.asarray(problem.P, dtype=float)
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = problem.n_var
    if R.shape[1] != n:
        raise QpError(f"linear terms have {R.shape[1]} columns, expected {n}")
    _check_psd(P)
    if eps_reg < 0:
        raise QpError("eps_reg must be nonnegative")
    if eps_reg:
        mask = np.ones(n) if reg_mask is None else np.asarray(reg_mask, dtype=float)
        P = P + 2.0 * eps_reg * np.diag(mask)
    B = R.shape[0]
    G, h = np.asarray(problem.A_ineq, float), np.asarray(problem.b_ineq, float)
    A, b = np.asarray(problem.A_eq, float), np.asarray(problem.b_eq, float)
    m, p = len(h), len(b)

    scale = 1.0 + max(np.abs(R).max() if R.size else 0.0,
                      np.abs(h).max() if m else 0.0,
                      np.abs(b).max() if p else 0.0,
                      np.abs(P).max() if P.size else 0.0)
    # Near-absolute convergence target; the mild scale term only matters
    # for badly scaled data and keeps the target attainable there.
    tol_conv = tol * (1.0 + 0.01 * scale)

    if m == 0:
        return _solve_equality_batch(P, R, A, b, tol_conv)

    # Infeasible-start point: least-squares on the equalities, slacks
    # clipped away from zero, unit multipliers.
    if p:
        x0 = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        x0 = np.zeros(n)
    s0 = np.maximum(h - G @ x0, 1.0)
    x = np.tile(x0, (B, 1))
    y = np.zeros((B, p))
    z = np.ones((B, m))
    s = np.tile(s0, (B, 1))

    status = np.full(B, 3, dtype=np.int8)   # max_iter until proven otherwise
    iters = np.zeros(B, dtype=np.int32)
    stall = np.zeros(B, dtype=np.int8)
    active = np.ones(B, dtype=bool)
    delta = 1e-12 * scale

    eye_p = np.eye(p)
    tol_abs = tol_conv

    for it in range(max_iter):
        if not active.any():
            break
        xa, ya, za, sa, Ra = x[active], y[active], z[active], s[active], R[active]

        r_dual = xa @ P + Ra + za @ G + (ya @ A if p else 0.0)
        r_eq = xa @ A.T - b if p else np.zeros((len(xa), 0))
        r_in = xa @ G.T + sa - h
        comp = za * sa
        mu = comp.mean(axis=1)

        worst = np.maximum(np.abs(r_dual).max(axis=1), np.abs(r_in).max(axis=1))
        if p:
            worst = np.maximum(worst, np.abs(r_eq).max(axis=1))
        worst = np.maximum(worst, comp.max(axis=1))
        done = worst <= tol_abs

        idx = np.flatnonzero(active)
        if done.any():
            status[idx[done]] = 0
            iters[idx[done]] = it
            keep = ~done
            active[idx[done]] = False
            if not keep.any():
                break
            xa, ya, za, sa, Ra = xa[keep], ya[keep], za[keep], sa[keep], Ra[keep]
            r_dual, r_in, comp, mu = r_dual[keep], r_in[keep], comp[keep], mu[keep]
            r_eq = r_eq[keep]
            idx = idx[keep]

        # Divergence checks: exploding iterates mean an unbounded
        # objective; exploding multipliers with a vanishing combined
        # gradient form a Farkas certificate of infeasibility.
        hugex = np.abs(xa).max(axis=1) > 1e10 * scale
        zn = np.abs(za).max(axis=1) + (np.abs(ya).max(axis=1) if p else 0.0)
        ray = np.abs(za @ G + (ya @ A if p else 0.0)).max(axis=1)
        gain = za @ h + (ya @ b if p else 0.0)
        hugez = (zn > 1e10) & (ray <= 1e-6 * zn) & (gain < 0)
        if hugex.any() or hugez.any():
            status[idx[hugez]] = 1
            status[idx[hugex & ~hugez]] = 2
            iters[idx[hugex | hugez]] = it
            keep = ~(hugex | hugez)
            active[idx[~keep]] = False
            if not keep.any():
                break
            xa, ya, za, sa, Ra = xa[keep], ya[keep], za[keep], sa[keep], Ra[keep]
            r_dual, r_in, comp, mu = r_dual[keep], r_in[keep], comp[keep], mu[keep]
            r_eq = r_eq[keep]
            idx = idx[keep]

        # Guard the endgame: slacks of strongly active constraints head to
        # zero, and a denormal slack would overflow these divisions.
        sa_div = np.maximum(sa, 1e-300)
        d = np.minimum(za / sa_div, 1e16)         # (Ba, m)
        M = P + np.einsum("bm,mi,mj->bij", d, G, G, optimize=True)
        Ba = len(xa)
        K = np.zeros((Ba, n + p, n + p))
        K[:, :n, :n] = M + delta * np.eye(n)
        if p:
            K[:, :n, n:] = A.T
            K[:, n:, :n] = A
            K[:, n:, n:] = -delta * eye_p

        def kkt_solve(rhs_x, rhs_y):
            rhs = np.concatenate([rhs_x, rhs_y], axis=1) if p else rhs_x
            try:
                sol = np.linalg.solve(K, rhs[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                # The batched solve raises if any one row went singular
                # (happens in the endgame with extreme active-set scaling);
                # redo row by row so only the bad rows degrade.
                sol = np.empty_like(rhs)
                for i in range(len(K)):
                    try:
                        sol[i] = np.linalg.solve(K[i], rhs[i])
                    except np.linalg.LinAlgError:
                        sol[i] = np.linalg.lstsq(K[i], rhs[i], rcond=None)[0]
            return sol[:, :n], sol[:, n:]

        # Predictor: plain Newton step toward the central path target 0.
        rc = comp.copy()
        rhs_x = -r_dual - (d * r_in - rc / sa_div) @ G
        dx, dy = kkt_solve(rhs_x, -r_eq if p else np.zeros((Ba, 0)))
        dz = d * (dx @ G.T + r_in) - rc / sa_div
        ds = -r_in - dx @ G.T

        alpha_z = _max_step(za, dz)
        alpha_s = _max_step(sa, ds)
        alpha_aff = np.minimum(1.0, np.minimum(alpha_z, alpha_s))
        mu_aff = ((za + alpha_aff[:, None] * dz) *
                  (sa + alpha_aff[:, None] * ds)).mean(axis=1)
        sigma = np.clip(mu_aff / np.maximum(mu, 1e-300), 0.0, 1.0) ** 3

        # Corrector: recenters and compensates the predictor's
        # linearization error dz*ds.
        rc = comp + dz * ds - (sigma * mu)[:, None]
        rhs_x = -r_dual - (d * r_in - rc / sa_div) @ G
        dx, dy = kkt_solve(rhs_x, -r_eq if p else np.zeros((Ba, 0)))
        dz = d * (dx @ G.T + r_in) - rc / sa_div
        ds = -r_in - dx @ G.T

        tau = np.clip(1.0 - 0.1 * np.minimum(mu / scale, 1.0), 0.995, 0.99995)
        alpha = np.minimum(1.0, tau * np.minimum(_max_step(za, dz),
                                                 _max_step(sa, ds)))

        # A non-finite step means the KKT solve broke down (the system
        # gets singular near degenerate faces); treat it like a stall so
        # the last finite iterate survives.
        broken = ~(np.isfinite(dx).all(axis=1) & np.isfinite(dz).all(axis=1)
                   & np.isfinite(ds).all(axis=1) & np.isfinite(alpha))
        if p:
            broken |= ~np.isfinite(dy).all(axis=1)
        if broken.any():
            alpha = np.where(broken, 0.0, alpha)
            dx[broken] = 0.0
            dz[broken] = 0.0
            ds[broken] = 0.0
            if p:
                dy[broken] = 0.0

        newstall = np.where(alpha < 1e-10, stall[idx] + 1, 0).astype(np.int8)
        stall[idx] = newstall
        give_up = newstall >= 5
        if give_up.any():
            bad_primal = np.maximum(np.abs(r_in).max(axis=1),
                                    np.abs(r_eq).max(axis=1) if p else 0.0)
            infeas = give_up & (bad_primal > tol_abs)
            status[idx[infeas]] = 1
            status[idx[give_up & ~infeas]] = 3
            iters[idx[give_up]] = it
            keep = ~give_up
            active[idx[give_up]] = False
            if not keep.any():
                break
            xa, ya, za, sa = xa[keep], ya[keep], za[keep], sa[keep]
            dx, dy, dz, ds, alpha = dx[keep], dy[keep], dz[keep], ds[keep], alpha[keep]
            idx = idx[keep]

        a = alpha[:, None]
        x[idx] = xa + a * dx
        if p:
            y[idx] = ya + a * dy
        z[idx] = za + a * dz
        s[idx] = sa + a * ds
        iters[idx] = it + 1

    if polish:
        _polish_batch(P, R, G, h, A, b, x, y, z, s, status, scale)

    # Final residuals for reporting.
    r_dual = x @ P + R + z @ G + (y @ A if p else 0.0)
    worst = np.abs(r_dual).max(axis=1)
    if p:
        worst = np.maximum(worst, np.abs(x @ A.T - b).max(axis=1))
    r_in = x @ G.T + s - h
    worst = np.maximum(worst, np.abs(r_in).max(axis=1))
    worst = np.maximum(worst, (z * s).max(axis=1))

    objective = 0.5 * np.einsum("bi,ij,bj->b", x, P, x) + (R * x).sum(axis=1)
    if eps_reg:
        # Strip the Tikhonov term so the reported value is the original objective.
        sq = x * x if reg_mask is None else (x * x) * np.asarray(reg_mask, float)
        objective = objective - eps_reg * sq.sum(axis=1)
    return QpBatchSolution(x=x, mult_ineq=z, mult_eq=y, objective=objective,
                           status_code=status.astype(np.int8), residual=worst,
                           iterations=iters)


def _polish_batch(P, R, G, h, A, b, x, y, z, s, status, scale) -> None:
    """Snap converged iterates onto their active face by one exact solve.

    Interior-point iterates stop within O(sqrt(mu)) of a vertex where a
    constraint is active with zero multiplier, leaving that constraint's
    slack around 1e-5 rather than machine precision.  This re-solves the
    equality system of the guessed active set (grouped by pattern so each
    group is one factorization) and overwrites an iterate only when the
    polished point passes feasibility, multiplier-sign, and stationarity
    checks, so a wrong guess is harmless.  Arrays are updated in place.
    """
    opt = np.flatnonzero(status == 0)
    if opt.size == 0 or len(h) == 0:
        return
    n = x.shape[1]
    m, p = len(h), len(b)
    delta = 1e-12 * scale
    act = (z[opt] >= s[opt]) | (s[opt] <= 1e-8 * scale)
    patterns, inverse = np.unique(act, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for pi, pat in enumerate(patterns):
        rows = opt[inverse == pi]
        C = np.vstack([A, G[pat]]) if p else G[pat]
        d_rhs = np.concatenate([b, h[pat]]) if p else h[pat]
        q = len(d_rhs)
        K = np.zeros((n + q, n + q))
        K[:n, :n] = P + delta * np.eye(n)
        K[:n, n:] = C.T
        K[n:, :n] = C
        K[n:, n:] = -delta * np.eye(q)
        K0 = np.zeros((n + q, n + q))
        K0[:n, :n] = P
        K0[:n, n:] = C.T
        K0[n:, :n] = C
        rhs = np.empty((n + q, len(rows)))
        rhs[:n] = -R[rows].T
        rhs[n:] = d_rhs[:, None]
        try:
            sol = np.linalg.solve(K, rhs)
            # Two refinement steps against the unregularized system push
            # the delta-perturbation error down to machine precision.
            for _ in range(2):
                sol = sol + np.linalg.solve(K, rhs - K0 @ sol)
        except np.linalg.LinAlgError:
            continue
        xp = sol[:n].T
        yp = sol[n:n + p].T
        zraw = sol[n + p:].T
        zfull = np.zeros((len(rows), m))
        zfull[:, pat] = np.maximum(zraw, 0.0)
        slack = h - xp @ G.T
        ok = slack.min(axis=1) >= -1e-9 * scale
        if p:
            ok &= np.abs(xp @ A.T - b).max(axis=1) <= 1e-8 * scale
        if zraw.shape[1]:
            ok &= zraw.min(axis=1) >= -1e-9 * scale
        stat = xp @ P + R[rows] + zfull @ G + (yp @ A if p else 0.0)
        ok &= np.abs(stat).max(axis=1) <= 1e-8 * scale
        if not ok.any():
            continue
        good = rows[ok]
        sel = np.flatnonzero(ok)
        x[good] = xp[sel]
        if p:
            y[good] = yp[sel]
        z[good] = zfull[sel]
        s[good] = np.maximum(slack[sel], 0.0)


def _max_step(v: np.ndarray, dv: np.ndarray) -> np.ndarray:
    """Largest step keeping v + alpha*dv > 0, per batch row (cap 1e10)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(dv < 0, -v / dv, np.inf)
    out = ratios.min(axis=1)
    return np.minimum(out, 1e10)


def _solve_equality_batch(P, R, A, b, tol_abs) -> QpBatchSolution:
    """Direct KKT solve for problems with no inequality constraints."""
    B, n = R.shape
    p = len(b)
    pscale = float(np.abs(P).max()) if P.size else 0.0
    K = np.zeros((n + p, n + p))
    K[:n, :n] = P + 1e-14 * (1.0 + pscale) * np.eye(n)
    if p:
        K[:n, n:] = A.T
        K[n:, :n] = A
    rhs = np.zeros((n + p, B))
    rhs[:n] = -R.T
    if p:
        rhs[n:] = b[:, None]
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x = sol[:n].T
    y = sol[n:].T if p else np.zeros((B, 0))
    stat = x @ P + R + (y @ A if p else 0.0)
    worst = np.abs(stat).max(axis=1) if n else np.zeros(B)
    status = np.zeros(B, dtype=np.int8)
    if p:
        req = np.abs(x @ A.T - b).max(axis=1)
        worst = np.maximum(worst, req)
        status[req > tol_abs] = 1   # inconsistent equalities: infeasible
    # Leftover gradient with consistent equalities means a descent ray.
    status[(np.abs(stat).max(axis=1) > tol_abs) & (status == 0)] = 2
    objective = 0.5 * np.einsum("bi,ij,bj->b", x, P, x) + (R * x).sum(axis=1)
    return QpBatchSolution(x=x, mult_ineq=np.zeros((B, 0)), mult_eq=y,
                           objective=objective, status_code=status,
                           residual=worst, iterations=np.ones(B, dtype=np.int32))


def brute_force_oracle(problem: QpProblem, box, grid: int = 21,
                       passes: int = 3, zoom: float = 10.0):
    """Grid-refinement search for small problems; the test-side referee.

    ``box`` is a pair of per-variable arrays (lo, hi) bounding the search.
    Equality constraints are eliminated through their null space; the
    remaining free dimension must be at most 4.  Each pass lays a
    ``grid``-per-axis lattice over the current search region, keeps the
    best point satisfying the box and the inequalities, and shrinks the
    region by ``zoom`` around it.  Returns ``(x, value)``.
    """
    lo = np.asarray(box[0], dtype=float).ravel()
    hi = np.asarray(box[1], dtype=float).ravel()
    n = problem.n_var
    if lo.shape != (n,) or hi.shape != (n,):
        raise QpError(f"box must give bounds for all {n} variables")

    A, b = problem.A_eq, problem.b_eq
    if problem.n_eq:
        x_p, res, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if np.abs(A @ x_p - b).max() > 1e-8 * (1.0 + np.abs(b).max()):
            raise QpError("equality system is inconsistent; no feasible grid")
        # Orthonormal null-space basis via SVD.
        _, sv, Vt = np.linalg.svd(A)
        rank = int((sv > 1e-12 * max(sv[0], 1.0)).sum()) if sv.size else 0
        N = Vt[rank:].T
    else:
        x_p = np.zeros(n)
        N = np.eye(n)
    k = N.shape[1]
    if k > 4:
        raise QpError(f"{k} free dimensions after equality elimination; "
                      "the oracle handles at most 4")
    if k == 0:
        x = x_p
        if _feasible(problem, lo, hi, x[None, :])[0]:
            return x, problem.objective(x)
        raise QpError("empty feasible grid: equalities pin an infeasible point")

    center_x = 0.5 * (lo + hi)
    u0 = N.T @ (center_x - x_p)
    radius = 0.5 * float(np.linalg.norm(hi - lo)) + 1e-9

    best_u, best_f = None, np.inf
    for _ in range(passes):
        axes = [np.linspace(u0[j] - radius, u0[j] + radius, grid)
                for j in range(k)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        X = x_p + mesh @ N.T
        ok = _feasible(problem, lo, hi, X)
        if not ok.any():
            if best_u is None:
                raise QpError("empty feasible grid within the given box")
            radius /= zoom
            u0 = best_u
            continue
        Xok = X[ok]
        vals = 0.5 * np.einsum("bi,ij,bj->b", Xok, problem.P, Xok) + Xok @ problem.r
        i = int(vals.argmin())
        if vals[i] < best_f:
            best_f = float(vals[i])
            best_u = mesh[ok][i]
        u0 = best_u
        radius /= zoom
    x = x_p + N @ best_u
    return x, best_f


def _feasible(problem: QpProblem, lo, hi, X: np.ndarray) -> np.ndarray:
    slack = 1e-9
    ok = np.all(X >= lo - slack, axis=1) & np.all(X <= hi + slack, axis=1)
    if problem.n_ineq:
        ok &= np.all(X @ problem.A_ineq.T <= problem.b_ineq + slack, axis=1)
    return ok
