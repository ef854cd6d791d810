"""Standard-form cone programs and a compact primal-dual interior-point solver.

Problems take the form

    minimize    c'x + 0.5 * sum_i q_i x_i^2 + c0
    subject to  A x = b,   x in K

where K is an ordered product of Free, NonNeg and SecondOrder blocks that
partitions the variable vector.  The solver is a Mehrotra
predictor-corrector method with Nesterov-Todd scaling on the cone blocks;
equality duals are reported with the convention  d(obj)/d(b_i) = y_i,  which
is what lets a nodal-balance dual be read directly as a marginal price.

Everything here is deterministic: no randomization, no threading, and the
same inputs always produce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Free",
    "NonNeg",
    "SecondOrder",
    "ConeBlock",
    "ConicProgram",
    "ConicSolution",
    "OPTIMAL",
    "INFEASIBLE",
    "UNBOUNDED",
    "ITER_LIMIT",
    "solve_socp",
    "check_kkt",
    "dual_sensitivity_probe",
    "ProbeResult",
    "dump_program",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITER_LIMIT = "iter_limit"


@dataclass(frozen=True)
class ConeBlock:
    kind: str  # "free" | "nonneg" | "soc"
    size: int

    def __post_init__(self):
        if self.kind not in ("free", "nonneg", "soc"):
            raise ValueError(f"unknown cone kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("cone block must have positive size")
        if self.kind == "soc" and self.size < 2:
            raise ValueError("second-order cone needs dimension >= 2")


def Free(k: int) -> ConeBlock:
    return ConeBlock("free", k)


def NonNeg(k: int) -> ConeBlock:
    return ConeBlock("nonneg", k)


def SecondOrder(k: int) -> ConeBlock:
    return ConeBlock("soc", k)


@dataclass
class ConicProgram:
    """Standard-form cone program with an optional diagonal quadratic term."""

    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    cones: tuple[ConeBlock, ...]
    q: np.ndarray | None = None
    c0: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not sp.issparse(self.A):
            self.A = sp.csr_matrix(np.atleast_2d(np.asarray(self.A, dtype=float)))
        else:
            self.A = self.A.tocsr()
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=float)
            if np.any(self.q < 0):
                raise ValueError("quadratic diagonal must be elementwise nonnegative")
            if self.q.shape != self.c.shape:
                raise ValueError("quadratic diagonal must match variable count")
        n = sum(cb.size for cb in self.cones)
        if n != self.c.shape[0]:
            raise ValueError(
                f"cone blocks cover {n} coordinates but c has {self.c.shape[0]}"
            )
        if self.A.shape != (self.b.shape[0], n):
            raise ValueError(
                f"A has shape {self.A.shape}, expected ({self.b.shape[0]}, {n})"
            )

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_eq(self) -> int:
        return self.b.shape[0]

    def objective(self, x: np.ndarray) -> float:
        val = float(self.c @ x) + self.c0
        if self.q is not None:
            val += 0.5 * float(self.q @ (x * x))
        return val


@dataclass
class ConicSolution:
    status: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    obj: float
    residuals: dict[str, float] = field(default_factory=dict)
    iterations: int = 0


# ---------------------------------------------------------------------------
# Jordan-algebra primitives for second-order cones.
#
# For u = (u0, ub) the cone is u0 >= ||ub||; the algebra has identity
# e = (1, 0), product u o v = (u'v, u0*vb + v0*ub) and determinant
# det(u) = u0^2 - ||ub||^2.  The quadratic representation
# P(u) v = 2 u (u'v) - det(u) (v0, -vb) gives the NT scaling point in
# closed form:  w = P(sqrt(x)) (P(sqrt(x)) z)^(-1/2)  satisfies P(w) z = x.
# ---------------------------------------------------------------------------


def _jdet(u: np.ndarray) -> float:
    return float(u[0] * u[0] - u[1:] @ u[1:])


def _jsqrt(u: np.ndarray) -> np.ndarray:
    det = _jdet(u)
    root = math.sqrt(max(det, 0.0))
    s = math.sqrt(max((u[0] + root) / 2.0, 1e-300))
    out = np.empty_like(u)
    out[0] = s
    out[1:] = u[1:] / (2.0 * s)
    return out


def _jinv(u: np.ndarray) -> np.ndarray:
    det = _jdet(u)
    out = np.empty_like(u)
    out[0] = u[0] / det
    out[1:] = -u[1:] / det
    return out


def _jprod(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty_like(u)
    out[0] = u @ v
    out[1:] = u[0] * v[1:] + v[0] * u[1:]
    return out


def _jdiv(lam: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Solve lam o u = d for u."""
    det = _jdet(lam)
    out = np.empty_like(d)
    out[0] = (lam[0] * d[0] - lam[1:] @ d[1:]) / det
    out[1:] = (d[1:] - out[0] * lam[1:]) / lam[0]
    return out


def _papply(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Quadratic representation P(u) applied to v."""
    det = _jdet(u)
    uv = u @ v
    out = 2.0 * uv * u
    out[0] -= det * v[0]
    out[1:] += det * v[1:]
    return out


def _pmat(u: np.ndarray) -> np.ndarray:
    """Dense matrix of P(u) for a small cone block."""
    k = u.shape[0]
    det = _jdet(u)
    m = 2.0 * np.outer(u, u)
    m[0, 0] -= det
    m[1:, 1:] += det * np.eye(k - 1)
    return m


def _soc_step(u: np.ndarray, du: np.ndarray) -> float:
    """Largest step a with u + a*du remaining in the cone (inf if unbounded)."""
    a2 = du[0] * du[0] - du[1:] @ du[1:]
    b1 = u[0] * du[0] - u[1:] @ du[1:]
    c0 = _jdet(u)
    # f(a) = a2*a^2 + 2*b1*a + c0 >= 0, f(0) = c0 > 0
    disc = b1 * b1 - a2 * c0
    if a2 >= 0.0 and b1 >= 0.0:
        return math.inf
    if disc < 0.0:
        return math.inf
    rd = math.sqrt(disc)
    roots = []
    if abs(a2) > 1e-300:
        roots = [(-b1 - rd) / a2, (-b1 + rd) / a2]
    elif b1 < 0.0:
        roots = [-c0 / (2.0 * b1)]
    pos = [r for r in roots if r > 0.0]
    return min(pos) if pos else math.inf


class _Cones:
    """Precomputed block layout plus per-iteration NT scaling state."""

    def __init__(self, cones: tuple[ConeBlock, ...]):
        self.blocks: list[tuple[str, int, int]] = []
        off = 0
        for cb in cones:
            self.blocks.append((cb.kind, off, cb.size))
            off += cb.size
        self.n = off
        self.nonneg_idx = np.concatenate(
            [np.arange(o, o + k) for kind, o, k in self.blocks if kind == "nonneg"]
        ).astype(int) if any(kind == "nonneg" for kind, _, _ in self.blocks) else np.empty(0, dtype=int)
        self.soc_blocks = [(o, k) for kind, o, k in self.blocks if kind == "soc"]
        self.free_idx = np.concatenate(
            [np.arange(o, o + k) for kind, o, k in self.blocks if kind == "free"]
        ).astype(int) if any(kind == "free" for kind, _, _ in self.blocks) else np.empty(0, dtype=int)
        cone_parts = [np.arange(o, o + k) for kind, o, k in self.blocks if kind != "free"]
        self.cone_idx = (
            np.concatenate(cone_parts).astype(int) if cone_parts else np.empty(0, dtype=int)
        )
        self.degree = len(self.nonneg_idx) + len(self.soc_blocks)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        e[self.nonneg_idx] = 1.0
        for o, _ in self.soc_blocks:
            e[o] = 1.0
        return e

    def inside(self, u: np.ndarray, margin: float = 0.0) -> bool:
        if np.any(u[self.nonneg_idx] <= margin):
            return False
        for o, k in self.soc_blocks:
            if u[o] <= margin or _jdet(u[o : o + k]) <= margin:
                return False
        return True

    def membership_violation(self, u: np.ndarray) -> float:
        """How far u sits outside the cone (0 when inside)."""
        worst = 0.0
        if len(self.nonneg_idx):
            worst = max(worst, float(-np.min(u[self.nonneg_idx]))) if np.min(u[self.nonneg_idx]) < 0 else worst
        for o, k in self.soc_blocks:
            blk = u[o : o + k]
            worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
        return max(worst, 0.0)

    # -- NT scaling -------------------------------------------------------

    def compute_scaling(self, x: np.ndarray, z: np.ndarray):
        nn = self.nonneg_idx
        w_nn = np.sqrt(x[nn] / z[nn]) if len(nn) else np.empty(0)
        lam = np.zeros(self.n)
        lam[nn] = np.sqrt(x[nn] * z[nn])
        soc_w = []
        for o, k in self.soc_blocks:
            xb, zb = x[o : o + k], z[o : o + k]
            t = _jsqrt(xb)
            u = _papply(t, zb)
            w = _papply(t, _jinv(_jsqrt(u)))
            wh = _jsqrt(w)
            whi = _jinv(wh)
            soc_w.append((w, wh, whi))
            lam[o : o + k] = _papply(whi, xb)
        return w_nn, soc_w, lam

    def h_matrix(self, w_nn: np.ndarray, soc_w) -> sp.csr_matrix:
        """Block-diagonal W^{-T} W^{-1} (P(w^{-1}) on SOC blocks, z/x on NonNeg)."""
        rows, cols, vals = [], [], []
        nn = self.nonneg_idx
        for i, idx in enumerate(nn):
            rows.append(idx)
            cols.append(idx)
            vals.append(1.0 / (w_nn[i] * w_nn[i]))
        for (o, k), (w, _, _) in zip(self.soc_blocks, soc_w):
            m = _pmat(_jinv(w))
            for i in range(k):
                for j in range(k):
                    rows.append(o + i)
                    cols.append(o + j)
                    vals.append(m[i, j])
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def apply_w(self, w_nn, soc_w, u: np.ndarray, inverse: bool) -> np.ndarray:
        """Apply W (inverse=False) or W^{-1} (inverse=True) to the cone part."""
        out = u.copy()
        nn = self.nonneg_idx
        if len(nn):
            out[nn] = u[nn] / w_nn if inverse else u[nn] * w_nn
        for (o, k), (_, wh, whi) in zip(self.soc_blocks, soc_w):
            out[o : o + k] = _papply(whi if inverse else wh, u[o : o + k])
        return out

    def jprod_all(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        nn = self.nonneg_idx
        out[nn] = u[nn] * v[nn]
        for o, k in self.soc_blocks:
            out[o : o + k] = _jprod(u[o : o + k], v[o : o + k])
        return out

    def jdiv_all(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        nn = self.nonneg_idx
        out[nn] = d[nn] / lam[nn]
        for o, k in self.soc_blocks:
            out[o : o + k] = _jdiv(lam[o : o + k], d[o : o + k])
        return out

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        alpha = math.inf
        nn = self.nonneg_idx
        if len(nn):
            neg = du[nn] < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-u[nn][neg] / du[nn][neg])))
        for o, k in self.soc_blocks:
            alpha = min(alpha, _soc_step(u[o : o + k], du[o : o + k]))
        return alpha


def _kkt_factor(Q_plus_H: sp.csr_matrix, A: sp.csr_matrix, delta: float):
    n = Q_plus_H.shape[0]
    m = A.shape[0]
    reg_n = sp.identity(n) * delta
    reg_m = sp.identity(m) * delta
    kkt = sp.bmat(
        [[Q_plus_H + reg_n, A.T], [A, -reg_m]],
        format="csc",
    )
    return spla.splu(kkt)


def _solve_kkt(lu, A, Q_plus_H, rx, ry, refine: int = 1):
    n = Q_plus_H.shape[0]
    rhs = np.concatenate([rx, ry])
    sol = lu.solve(rhs)
    # one round of iterative refinement against the unregularized system
    for _ in range(refine):
        res_x = rx - (Q_plus_H @ sol[:n] + A.T @ sol[n:])
        res_y = ry - (A @ sol[:n])
        corr = lu.solve(np.concatenate([res_x, res_y]))
        sol = sol + corr
    return sol[:n], sol[n:]


def solve_socp(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve a standard-form cone program to the requested tolerance.

    Returns a point whose primal, dual and complementarity-gap residuals are
    all below ``tol``, or a non-optimal status (never raises on singular or
    diverging systems).
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    n, m = prog.n_vars, prog.n_eq
    cones = _Cones(prog.cones)
    c, b = prog.c, prog.b
    A = prog.A
    Q = sp.diags(prog.q) if prog.q is not None else sp.csr_matrix((n, n))

    if n == 0:
        ok = m == 0 or float(np.max(np.abs(b))) <= tol
        return ConicSolution(
            status=OPTIMAL if ok else INFEASIBLE,
            x=np.zeros(0),
            y=np.zeros(m),
            z=np.zeros(0),
            s=np.zeros(0),
            obj=prog.c0,
            residuals={"primal": 0.0, "dual": 0.0, "gap": 0.0},
        )

    bnorm = 1.0 + (float(np.max(np.abs(b))) if m else 0.0)
    cnorm = 1.0 + (float(np.max(np.abs(c))) if n else 0.0)

    def classify(x, y, z, iters, scale=1e8):
        """Divergence heuristics; ties favor infeasible.

        Primal infeasibility shows as a diverging dual ray with positive
        b'y and vanishing homogeneous residual A'y + z; unboundedness as a
        diverging primal ray that stays equality-feasible with negative
        linear objective along the ray.
        """
        xs = float(np.linalg.norm(x, np.inf)) if n else 0.0
        ys = (float(np.linalg.norm(y, np.inf)) if m else 0.0) + float(
            np.linalg.norm(z, np.inf)
        )
        status = ITER_LIMIT
        if ys > scale:
            hom_d = float(np.linalg.norm((A.T @ y if m else 0.0) + z, np.inf)) / ys
            if (float(b @ y) if m else 0.0) > 1e-8 * ys and hom_d <= 1e-6:
                status = INFEASIBLE
        if status == ITER_LIMIT and xs > scale:
            pr_ray = (float(np.max(np.abs(A @ x - b))) if m else 0.0) / xs
            lin_ray = float(c @ x + (prog.q @ (x * x) if prog.q is not None else 0.0)) / xs
            if pr_ray <= 1e-6 and lin_ray < -1e-8:
                status = UNBOUNDED
        if status == ITER_LIMIT and (ys > scale or xs > scale):
            # both certificates weak but iterates clearly diverged
            status = INFEASIBLE if ys >= xs else UNBOUNDED
        return _finish(status, x, y, z, iters)

    def _finish(status, x, y, z, iters):
        r_d = Q @ x + c - (A.T @ y if m else 0.0) - z
        r_p = A @ x - b if m else np.zeros(0)
        gap = float(x[cones.cone_idx] @ z[cones.cone_idx]) if len(cones.cone_idx) else 0.0
        s = np.zeros(n)
        s[cones.cone_idx] = x[cones.cone_idx]
        return ConicSolution(
            status=status,
            x=x,
            y=y,
            z=z,
            s=s,
            obj=prog.objective(x),
            residuals={
                "primal": float(np.max(np.abs(r_p))) if m else 0.0,
                "dual": float(np.max(np.abs(r_d))),
                "gap": abs(gap),
            },
            iterations=iters,
        )

    # purely free program: a single regularized KKT solve
    if cones.degree == 0:
        try:
            lu = _kkt_factor(Q, A, 1e-10)
            x, ytil = _solve_kkt(lu, A, Q, -c, b, refine=2)
        except (RuntimeError, ValueError):
            return ConicSolution(
                status=INFEASIBLE,
                x=np.zeros(n),
                y=np.zeros(m),
                z=np.zeros(n),
                s=np.zeros(n),
                obj=float("nan"),
                residuals={"primal": float("inf"), "dual": float("inf"), "gap": 0.0},
            )
        y = -ytil
        sol = _finish(OPTIMAL, x, y, np.zeros(n), 1)
        scaled_ok = (
            sol.residuals["primal"] / bnorm <= 10 * max(tol, 1e-9)
            and sol.residuals["dual"] / cnorm <= 10 * max(tol, 1e-9)
        )
        if not scaled_ok:
            sol.status = INFEASIBLE
        return sol

    # interior starting point
    e = cones.identity()
    x = e * max(1.0, math.sqrt(bnorm))
    z = e * max(1.0, math.sqrt(cnorm))
    y = np.zeros(m)
    nu = cones.degree

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _ipm_loop(
            prog, cones, Q, A, b, c, x, y, z, e, nu, bnorm, cnorm,
            tol, max_iter, classify, _finish,
        )


def _ipm_loop(prog, cones, Q, A, b, c, x, y, z, e, nu, bnorm, cnorm, tol, max_iter, classify, _finish):
    m = prog.n_eq
    best = None
    for it in range(1, max_iter + 1):
        r_d = Q @ x + c - (A.T @ y if m else 0.0) - z
        r_p = (A @ x - b) if m else np.zeros(0)
        gap = float(x[cones.cone_idx] @ z[cones.cone_idx])
        mu = gap / nu
        obj = prog.objective(x)

        rel_p = (float(np.max(np.abs(r_p))) / bnorm) if m else 0.0
        rel_d = float(np.max(np.abs(r_d))) / cnorm
        rel_g = abs(gap) / (1.0 + abs(obj))
        if rel_p <= tol and rel_d <= tol and rel_g <= tol:
            return _finish(OPTIMAL, x, y, z, it)
        if best is None or rel_p + rel_d + rel_g < best[0]:
            best = (rel_p + rel_d + rel_g, x.copy(), y.copy(), z.copy())
        xs = float(np.linalg.norm(x, np.inf))
        ys = (float(np.linalg.norm(y, np.inf)) if m else 0.0) + float(
            np.linalg.norm(z, np.inf)
        )
        if xs > 1e8 or ys > 1e8:
            verdict = classify(x, y, z, it)
            if verdict.status != ITER_LIMIT:
                return verdict

        w_nn, soc_w, lam = cones.compute_scaling(x, z)
        H = cones.h_matrix(w_nn, soc_w)
        try:
            lu = _kkt_factor(Q + H, A, 1e-9)
        except (RuntimeError, ValueError):
            try:
                lu = _kkt_factor(Q + H, A, 1e-6)
            except (RuntimeError, ValueError):
                return classify(x, y, z, it)

        lam_lam = cones.jprod_all(lam, lam)

        def direction(d_target):
            g = cones.jdiv_all(lam, d_target)
            wig = cones.apply_w(w_nn, soc_w, g, inverse=True)
            rx = -r_d + wig
            rx[cones.free_idx] = -r_d[cones.free_idx]
            # free coordinates carry no complementarity term
            dx, dyt = _solve_kkt(lu, A, Q + H, rx, -r_p)
            dy = -dyt
            dz = wig - H @ dx
            dz[cones.free_idx] = 0.0
            return dx, dy, dz

        # predictor
        dx_a, dy_a, dz_a = direction(-lam_lam)
        a_x = cones.max_step(x, dx_a)
        a_z = cones.max_step(z, dz_a)
        a_aff = min(1.0, a_x, a_z)
        x_a = x + a_aff * dx_a
        z_a = z + a_aff * dz_a
        mu_aff = float(x_a[cones.cone_idx] @ z_a[cones.cone_idx]) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0

        # corrector
        wdx = cones.apply_w(w_nn, soc_w, dx_a, inverse=True)
        wdz = cones.apply_w(w_nn, soc_w, dz_a, inverse=False)
        d_cor = sigma * mu * e - lam_lam - cones.jprod_all(wdx, wdz)
        dx, dy, dz = direction(d_cor)

        a_x = cones.max_step(x, dx)
        a_z = cones.max_step(z, dz)
        alpha = min(1.0, 0.99 * a_x, 0.99 * a_z)
        if not math.isfinite(alpha) or alpha <= 1e-14:
            return classify(x, y, z, it, scale=1e5)
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz

    # iteration cap: report the best iterate seen
    if best is not None:
        _, x, y, z = best
    return _finish(ITER_LIMIT, x, y, z, max_iter)


def check_kkt(prog: ConicProgram, sol: ConicSolution) -> dict[str, float]:
    """Recompute optimality residuals independently of the solver internals.

    Returns the infinity norms of the primal and dual residuals, the
    complementarity gap and the worst cone-membership violation of x and z.
    """
    if sol.status != OPTIMAL:
        raise ValueError("check_kkt expects an optimal solution")
    n, m = prog.n_vars, prog.n_eq
    if n == 0:
        return {"primal": 0.0, "dual": 0.0, "gap": 0.0, "cone": 0.0}
    cones = _Cones(prog.cones)
    r_p = prog.A @ sol.x - prog.b if m else np.zeros(0)
    qx = prog.q * sol.x if prog.q is not None else 0.0
    r_d = qx + prog.c - (prog.A.T @ sol.y if m else 0.0) - sol.z
    gap = (
        float(sol.x[cones.cone_idx] @ sol.z[cones.cone_idx])
        if len(cones.cone_idx)
        else 0.0
    )
    cone_viol = max(
        cones.membership_violation(sol.x), cones.membership_violation(sol.z)
    )
    return {
        "primal": float(np.max(np.abs(r_p))) if m else 0.0,
        "dual": float(np.max(np.abs(r_d))),
        "gap": abs(gap),
        "cone": cone_viol,
    }


@dataclass
class ProbeResult:
    estimate: float
    dual: float
    conclusive: bool


def dual_sensitivity_probe(
    prog: ConicProgram,
    sol: ConicSolution,
    eq_index: int,
    delta: float = 1e-5,
    tol: float = 1e-9,
) -> ProbeResult:
    """Certify an equality dual by central finite differences on b[eq_index].

    Re-solves the program at b +/- delta; a failed re-solve marks the probe
    inconclusive rather than raising.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if sol.status != OPTIMAL:
        raise ValueError("probe requires an optimal base solution")
    objs = []
    for sign in (+1.0, -1.0):
        b2 = prog.b.copy()
        b2[eq_index] += sign * delta
        pert = ConicProgram(
            c=prog.c, A=prog.A, b=b2, cones=prog.cones, q=prog.q, c0=prog.c0
        )
        s2 = solve_socp(pert, tol=tol)
        if s2.status != OPTIMAL:
            return ProbeResult(float("nan"), float(sol.y[eq_index]), False)
        objs.append(s2.obj)
    est = (objs[0] - objs[1]) / (2.0 * delta)
    return ProbeResult(est, float(sol.y[eq_index]), True)


def dump_program(prog: ConicProgram, path: str) -> None:
    """Write a plain-text standard-form dump (grammar in docs/formats.md)."""
    lines = [f"VARS {prog.n_vars}", f"EQS {prog.n_eq}", f"CONST {prog.c0!r}"]
    lines.append("CONES " + " ".join(f"{cb.kind}:{cb.size}" for cb in prog.cones))
    lines.append("C " + " ".join(repr(v) for v in prog.c))
    if prog.q is not None:
        lines.append("Q " + " ".join(repr(v) for v in prog.q))
    coo = prog.A.tocoo()
    for i, j, v in sorted(zip(coo.row, coo.col, coo.data), key=lambda t: (t[0], t[1])):
        lines.append(f"A {i} {j} {v!r}")
    for i, v in enumerate(prog.b):
        lines.append(f"B {i} {v!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
