"""Self-contained conic solver for linear SDPs.

A ConicProgram is

    minimize    objective . theta
    subject to  eq_coeff . theta == eq_rhs          (each equality)
                ineq_coeff . theta <= ineq_rhs      (each inequality)
                A_0 + sum_k theta_k A_k  >= 0       (each PSD block)

The bundled backend solves the homogeneous self-dual embedding of the
equivalent cone program  min c'x  s.t.  Gx + s = h, Ax = b,  s in
R+^l x PSD x ..., with a Mehrotra predictor-corrector and Nesterov-Todd
scaling.  Symmetric matrices travel in scaled svec coordinates (upper
triangle row-wise, off-diagonals times sqrt(2)), so dot products of svec
vectors are trace inner products.  Two implementation points carry the
numerics: the scaling is updated multiplicatively from scaled step data
instead of being refactored from the raw, nearly singular (s, z) pair,
and search directions get iterative refinement against the full embedding
residuals, because the tau-superposition cancels badly near convergence.

An adapter for the external cone solver cvxopt is registered under the
backend name "cvxopt" and accepts the same program object; it is imported
lazily so the package works without cvxopt installed.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import SchemaError


@dataclass
class PsdBlockMap:
    """Affine map theta -> A_0 + sum_k theta_k A_k into symmetric dim x dim
    matrices, stored entrywise.

    const holds (i, j, value) triples of A_0; coeffs holds (var, i, j, value)
    quadruples of the A_k.  Entries are upper-triangle positions (i <= j after
    normalization); duplicates accumulate.
    """

    dim: int
    const: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("PSD block dimension must be positive")
        self.const = [self._norm3(t) for t in self.const]
        self.coeffs = [self._norm4(t) for t in self.coeffs]

    def _norm3(self, t):
        i, j, v = int(t[0]), int(t[1]), float(t[2])
        if not (0 <= i < self.dim and 0 <= j < self.dim):
            raise ValueError(f"entry ({i}, {j}) outside block of dim {self.dim}")
        return (min(i, j), max(i, j), v)

    def _norm4(self, t):
        k, i, j, v = int(t[0]), int(t[1]), int(t[2]), float(t[3])
        if k < 0:
            raise ValueError("variable index must be nonnegative")
        if not (0 <= i < self.dim and 0 <= j < self.dim):
            raise ValueError(f"entry ({i}, {j}) outside block of dim {self.dim}")
        return (k, min(i, j), max(i, j), v)

    def constant_matrix(self) -> np.ndarray:
        A0 = np.zeros((self.dim, self.dim))
        for i, j, v in self.const:
            A0[i, j] += v
            if i != j:
                A0[j, i] += v
        return A0

    def coefficient_stack(self, num_vars: int) -> np.ndarray:
        """Dense (num_vars, dim, dim) array of the A_k."""
        stack = np.zeros((num_vars, self.dim, self.dim))
        for k, i, j, v in self.coeffs:
            if k >= num_vars:
                raise ValueError(f"variable index {k} outside program of size {num_vars}")
            stack[k, i, j] += v
            if i != j:
                stack[k, j, i] += v
        return stack

    def evaluate(self, theta: np.ndarray) -> np.ndarray:
        """The block value at a particular theta."""
        A = self.constant_matrix()
        theta = np.asarray(theta, dtype=float)
        for k, i, j, v in self.coeffs:
            inc = theta[k] * v
            A[i, j] += inc
            if i != j:
                A[j, i] += inc
        return A


@dataclass
class ConicProgram:
    """Linear SDP in inequality/equality/PSD-block form; see module docstring."""

    num_vars: int
    objective: np.ndarray
    equalities: list = field(default_factory=list)
    inequalities: list = field(default_factory=list)
    psd_blocks: list = field(default_factory=list)

    def __post_init__(self):
        if self.num_vars < 1:
            raise ValueError("program must have at least one variable")
        self.objective = np.asarray(self.objective, dtype=float).reshape(self.num_vars)
        self.equalities = [
            (np.asarray(a, dtype=float).reshape(self.num_vars), float(r))
            for a, r in self.equalities
        ]
        self.inequalities = [
            (np.asarray(a, dtype=float).reshape(self.num_vars), float(r))
            for a, r in self.inequalities
        ]


@dataclass
class SolverOptions:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-7
    max_iters: int = 200
    verbose: bool = False

    def __post_init__(self):
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


class SolverStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass
class SolverResult:
    status: SolverStatus
    theta: np.ndarray | None
    objective_value: float
    max_eig_violation: float
    ineq_violation: float
    eq_residual: float
    iterations: int
    detail: str = ""


@dataclass
class SolutionCheck:
    """Feasibility report for a candidate theta, computed from the program
    data alone (no solver internals)."""

    psd_min_eig: float
    ineq_violation: float
    eq_residual: float

    @property
    def max_eig_violation(self) -> float:
        return max(0.0, -self.psd_min_eig)

    def ok(self, tol: float) -> bool:
        return (
            self.psd_min_eig >= -tol
            and self.ineq_violation <= tol
            and self.eq_residual <= tol
        )


def verify_solution(program: ConicProgram, theta: np.ndarray) -> SolutionCheck:
    theta = np.asarray(theta, dtype=float).reshape(program.num_vars)
    min_eig = math.inf
    for blk in program.psd_blocks:
        vals = np.linalg.eigvalsh(blk.evaluate(theta))
        min_eig = min(min_eig, float(vals[0]))
    if not program.psd_blocks:
        min_eig = 0.0
    ineq = 0.0
    for a, r in program.inequalities:
        ineq = max(ineq, float(a @ theta - r))
    eq = 0.0
    for a, r in program.equalities:
        eq = max(eq, abs(float(a @ theta - r)))
    return SolutionCheck(psd_min_eig=min_eig, ineq_violation=max(0.0, ineq), eq_residual=eq)


# --- svec utilities --- #

_SQRT2 = math.sqrt(2.0)


def svec_indices(m: int):
    iu = np.triu_indices(m)
    mult = np.where(iu[0] == iu[1], 1.0, _SQRT2)
    return iu, mult


def svec(A: np.ndarray, iu, mult) -> np.ndarray:
    return A[iu] * mult


def smat(v: np.ndarray, m: int, iu, mult) -> np.ndarray:
    M = np.zeros((m, m))
    vals = v / mult
    M[iu] = vals
    M[(iu[1], iu[0])] = vals
    return M


# --- bundled homogeneous self-dual interior-point backend --- #


class _ConeData:
    """Standard-form data min c'x, Gx + s = h, Ax = b with s in
    R+^l x PSD(m_1) x ... derived from a ConicProgram."""

    def __init__(self, program: ConicProgram):
        nv = program.num_vars
        self.nv = nv
        self.c = program.objective.copy()
        if program.equalities:
            self.A = np.stack([a for a, _ in program.equalities])
            self.b = np.array([r for _, r in program.equalities])
        else:
            self.A = np.zeros((0, nv))
            self.b = np.zeros(0)
        self.l = len(program.inequalities)
        rows_G = [a for a, _ in program.inequalities]
        h = [r for _, r in program.inequalities]
        self.block_dims = []
        self.block_slices = []
        self.block_iu = []
        self.block_mult = []
        self.stacks = []
        offset = self.l
        G_psd_cols = []
        for blk in program.psd_blocks:
            m = blk.dim
            iu, mult = svec_indices(m)
            msv = m * (m + 1) // 2
            stack = blk.coefficient_stack(nv)
            self.block_dims.append(m)
            self.block_slices.append(slice(offset, offset + msv))
            self.block_iu.append(iu)
            self.block_mult.append(mult)
            self.stacks.append(stack)
            # columns of G restricted to this block: -svec(A_k)
            G_psd_cols.append(-(stack[:, iu[0], iu[1]] * mult))
            h.extend(svec(blk.constant_matrix(), iu, mult))
            offset += msv
        self.rows = offset
        G = np.zeros((self.rows, nv))
        if rows_G:
            G[: self.l] = np.stack(rows_G)
        for sl, cols in zip(self.block_slices, G_psd_cols):
            G[sl] = cols.T
        self.G = G
        self.h = np.asarray(h, dtype=float)
        self.degree = self.l + sum(self.block_dims)
        # QR of A' (constant across iterations): A' = [Q1 Q2] [R1; 0]
        ne = self.A.shape[0]
        if ne:
            Qa, Ra = scipy.linalg.qr(self.A.T)
            self.Qa = Qa
            self.R1 = Ra[:ne]
        else:
            self.Qa = np.eye(nv)
            self.R1 = np.zeros((0, 0))
        # per-iteration KKT assembly reuses G @ Qa: the LP rows are constant
        # up to row scaling and the PSD rows only need a congruence of these
        # pre-mixed coefficient stacks
        self.GQa_lp = self.G[: self.l] @ self.Qa
        self.mixed_stacks = [
            (self.Qa.T @ stack.reshape(nv, -1)).reshape(nv, m, m)
            for m, stack in zip(self.block_dims, self.stacks)
        ]

    def iter_blocks(self):
        return zip(self.block_dims, self.block_slices, self.block_iu, self.block_mult)

    def cone_identity(self) -> np.ndarray:
        e = np.zeros(self.rows)
        e[: self.l] = 1.0
        for m, sl, iu, mult in self.iter_blocks():
            e[sl] = svec(np.eye(m), iu, mult)
        return e

    def min_cone_eig(self, v: np.ndarray) -> float:
        """Smallest 'eigenvalue' of a cone point (LP entries and PSD spectra)."""
        worst = math.inf
        if self.l:
            worst = float(np.min(v[: self.l]))
        for m, sl, iu, mult in self.iter_blocks():
            M = smat(v[sl], m, iu, mult)
            worst = min(worst, float(np.linalg.eigvalsh(M)[0]))
        return worst


class _Scaling:
    """Nesterov-Todd scaling, kept current across iterations by multiplicative
    updates from scaled step data (update), never refactored from raw s, z."""

    def __init__(self, data: _ConeData, s: np.ndarray, z: np.ndarray):
        self.data = data
        if data.l:
            self.w = np.sqrt(s[: data.l] / z[: data.l])
            self.lam_lp = np.sqrt(s[: data.l] * z[: data.l])
        else:
            self.w = np.zeros(0)
            self.lam_lp = np.zeros(0)
        self.R = []
        self.Rti = []          # R^{-T}
        self.lam_psd = []
        for m, sl, iu, mult in data.iter_blocks():
            S = smat(s[sl], m, iu, mult)
            Z = smat(z[sl], m, iu, mult)
            Ls = np.linalg.cholesky(S)
            Lz = np.linalg.cholesky(Z)
            U, sig, Vt = np.linalg.svd(Lz.T @ Ls)
            isq = 1.0 / np.sqrt(sig)
            self.R.append(Ls @ Vt.T * isq)
            self.Rti.append(Lz @ U * isq)
            self.lam_psd.append(sig)

    def update(self, ls: np.ndarray, lz: np.ndarray) -> None:
        """Refresh the scaling for stepped points given in scaled coordinates:
        ls = lam + alpha W^{-T} ds, lz = lam + alpha W dz, both interior."""
        d = self.data
        if d.l:
            a = ls[: d.l]
            b = lz[: d.l]
            self.w *= np.sqrt(a / b)
            self.lam_lp = np.sqrt(a * b)
        for idx, (m, sl, iu, mult) in enumerate(d.iter_blocks()):
            Sm = smat(ls[sl], m, iu, mult)
            Zm = smat(lz[sl], m, iu, mult)
            Ls = np.linalg.cholesky(Sm)
            Lz = np.linalg.cholesky(Zm)
            U, sig, Vt = np.linalg.svd(Lz.T @ Ls)
            isq = 1.0 / np.sqrt(sig)
            self.R[idx] = self.R[idx] @ (Ls @ Vt.T * isq)
            self.Rti[idx] = self.Rti[idx] @ (Lz @ U * isq)
            self.lam_psd[idx] = sig

    def lam_vec(self) -> np.ndarray:
        out = np.zeros(self.data.rows)
        out[: self.data.l] = self.lam_lp
        for (m, sl, iu, mult), sig in zip(self.data.iter_blocks(), self.lam_psd):
            out[sl] = svec(np.diag(sig), iu, mult)
        return out

    def _congruence(self, v, which):
        d = self.data
        out = np.empty_like(v)
        if d.l:
            if which in ("W", "WT"):
                out[: d.l] = v[: d.l] * self.w
            else:
                out[: d.l] = v[: d.l] / self.w
        for idx, (m, sl, iu, mult) in enumerate(d.iter_blocks()):
            M = smat(v[sl], m, iu, mult)
            R, Rti = self.R[idx], self.Rti[idx]
            if which == "W":          # R' M R
                out[sl] = svec(R.T @ M @ R, iu, mult)
            elif which == "WT":       # R M R'
                out[sl] = svec(R @ M @ R.T, iu, mult)
            elif which == "WinvT":    # R^{-1} M R^{-T} = Rti' M Rti
                out[sl] = svec(Rti.T @ M @ Rti, iu, mult)
            else:                     # Winv: R^{-T} M R^{-1} = Rti M Rti'
                out[sl] = svec(Rti @ M @ Rti.T, iu, mult)
        return out

    def W(self, v):
        return self._congruence(v, "W")

    def WT(self, v):
        return self._congruence(v, "WT")

    def WinvT(self, v):
        return self._congruence(v, "WinvT")

    def Winv(self, v):
        return self._congruence(v, "Winv")

    def jordan_mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        d = self.data
        out = np.empty_like(a)
        if d.l:
            out[: d.l] = a[: d.l] * b[: d.l]
        for m, sl, iu, mult in d.iter_blocks():
            A = smat(a[sl], m, iu, mult)
            B = smat(b[sl], m, iu, mult)
            out[sl] = svec((A @ B + B @ A) / 2.0, iu, mult)
        return out

    def jordan_div_lam(self, v: np.ndarray) -> np.ndarray:
        """lam \\ v for the current scaling point (lam diagonal per block)."""
        d = self.data
        out = np.empty_like(v)
        if d.l:
            out[: d.l] = v[: d.l] / self.lam_lp
        for idx, (m, sl, iu, mult) in enumerate(d.iter_blocks()):
            sig = self.lam_psd[idx]
            M = smat(v[sl], m, iu, mult)
            denom = (sig[:, None] + sig[None, :]) / 2.0
            out[sl] = svec(M / denom, iu, mult)
        return out

    def max_step(self, v: np.ndarray) -> float:
        """Largest t with lam + a*v in the cone for all a in [0, t]."""
        d = self.data
        t = math.inf
        if d.l:
            neg = v[: d.l] < 0
            if np.any(neg):
                t = float(np.min(self.lam_lp[neg] / -v[: d.l][neg]))
        for idx, (m, sl, iu, mult) in enumerate(d.iter_blocks()):
            sig = self.lam_psd[idx]
            M = smat(v[sl], m, iu, mult)
            scaled = M / np.sqrt(sig[:, None] * sig[None, :])
            emin = float(np.linalg.eigvalsh(scaled)[0])
            if emin < 0:
                t = min(t, 1.0 / -emin)
        return t

class _KktSolver:
    """Reduced-system solver by double QR elimination.

    With Gs = W^{-T} G and A' = [Q1 Q2] [R1; 0], factor Gs*Q2 = Q3 R3 and
    solve the 3x3 system in the rotated coordinates.  Working on Gs directly
    keeps the conditioning at kappa(Gs) rather than its square, which is what
    a Schur-complement (normal-equations) form would give."""

    def __init__(self, data: _ConeData, scaling: _Scaling):
        self.data = data
        self.sc = scaling
        ne = data.A.shape[0]
        GsQ = np.empty((data.rows, data.nv))
        if data.l:
            GsQ[: data.l] = data.GQa_lp / scaling.w[:, None]
        for idx, (m, sl, iu, mult) in enumerate(data.iter_blocks()):
            Rti = scaling.Rti[idx]
            B = Rti.T @ data.mixed_stacks[idx] @ Rti
            GsQ[sl] = -(B[:, iu[0], iu[1]] * mult).T
        self.Gs1 = GsQ[:, :ne]
        self.n_free = GsQ.shape[1] - ne
        # raw Householder form: forming Q explicitly would double the cost
        if self.n_free:
            (qr_raw, tau), R3 = scipy.linalg.qr(
                GsQ[:, ne:], mode="raw", overwrite_a=True, check_finite=False
            )
        else:
            qr_raw = np.zeros((GsQ.shape[0], 0))
            tau = np.zeros(0)
            R3 = np.zeros((0, 0))
        self.qr_raw = np.asfortranarray(qr_raw)
        self.qr_tau = tau
        self.R3 = R3
        self.ormqr, = scipy.linalg.get_lapack_funcs(("ormqr",), (self.qr_raw,))
        diag = np.abs(np.diag(self.R3)) if self.R3.size else np.ones(1)
        if not np.all(diag > 0) or not np.all(np.isfinite(self.R3)):
            raise np.linalg.LinAlgError("scaled constraint matrix lost rank")

    def _qt(self, v: np.ndarray) -> np.ndarray:
        """First n_free entries of Q3' v."""
        if not self.n_free:
            return np.zeros(0)
        c = np.asfortranarray(v[:, None])
        out = self.ormqr("L", "T", self.qr_raw, self.qr_tau, c, -1)
        lwork = int(out[1][0])
        cq, _, info = self.ormqr("L", "T", self.qr_raw, self.qr_tau, c, lwork)
        if info != 0:
            raise np.linalg.LinAlgError("orthogonal apply failed")
        return cq[: self.n_free, 0]

    def _q(self, u: np.ndarray) -> np.ndarray:
        """Q3 u for a coefficient vector u of length n_free."""
        c = np.zeros((self.qr_raw.shape[0], 1), order="F")
        if not self.n_free:
            return c[:, 0]
        c[: self.n_free, 0] = u
        out = self.ormqr("L", "N", self.qr_raw, self.qr_tau, c, -1)
        lwork = int(out[1][0])
        cq, _, info = self.ormqr("L", "N", self.qr_raw, self.qr_tau, c, lwork)
        if info != 0:
            raise np.linalg.LinAlgError("orthogonal apply failed")
        return cq[:, 0]

    def solve3(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray):
        """Solve  A'uy + G'uz = bx;  A ux = by;  G ux - W'W uz = bz."""
        d, sc = self.data, self.sc
        ne = d.A.shape[0]
        bz_s = sc.WinvT(bz)
        qb = d.Qa.T @ bx
        if ne:
            x1 = scipy.linalg.solve_triangular(d.R1, by, trans="T")
            w = bz_s - self.Gs1 @ x1
        else:
            x1 = np.zeros(0)
            w = bz_s
        u = scipy.linalg.solve_triangular(self.R3, qb[ne:], trans="T") + self._qt(w)
        x2 = scipy.linalg.solve_triangular(self.R3, u)
        uz_s = self._q(u) - w
        if ne:
            uy = scipy.linalg.solve_triangular(d.R1, qb[:ne] - self.Gs1.T @ uz_s)
        else:
            uy = np.zeros(0)
        ux = d.Qa @ np.concatenate([x1, x2])
        uz = sc.Winv(uz_s)
        if not (np.all(np.isfinite(ux)) and np.all(np.isfinite(uz))):
            raise np.linalg.LinAlgError("non-finite KKT solution")
        return ux, uy, uz


class _KktSolverIdentity:
    """Reduced-system solver with W = I, used only for the initial point."""

    def __init__(self, data: _ConeData):
        self.data = data
        nv, ne = data.nv, data.A.shape[0]
        S = data.G.T @ data.G
        K = np.zeros((nv + ne, nv + ne))
        K[:nv, :nv] = S + 1e-13 * max(1.0, float(np.trace(S)) / nv) * np.eye(nv)
        if ne:
            K[:nv, nv:] = data.A.T
            K[nv:, :nv] = data.A
        self.lu = scipy.linalg.lu_factor(K)

    def solve3(self, bx, by, bz):
        d = self.data
        rhs = np.concatenate([bx + d.G.T @ bz, by])
        sol = scipy.linalg.lu_solve(self.lu, rhs)
        ux = sol[: d.nv]
        uy = sol[d.nv :]
        uz = d.G @ ux - bz
        return ux, uy, uz


def _failure(it, detail):
    return SolverResult(
        status=SolverStatus.NUMERICAL_FAILURE,
        theta=None,
        objective_value=math.nan,
        max_eig_violation=math.nan,
        ineq_violation=math.nan,
        eq_residual=math.nan,
        iterations=it,
        detail=detail,
    )


def _solve_bundled(program: ConicProgram, options: SolverOptions) -> SolverResult:
    data = _ConeData(program)
    if data.rows == 0:
        raise ValueError("program has no inequalities and no PSD blocks")
    c, A, b, G, h = data.c, data.A, data.b, data.G, data.h
    ne = A.shape[0]
    e = data.cone_identity()

    # initial point: least-norm heuristic with identity scaling, shifted into
    # the cone interior
    try:
        kkt0 = _KktSolverIdentity(data)
        x, y, zhat = kkt0.solve3(np.zeros(data.nv), b, h)
        s = -zhat
        shift = data.min_cone_eig(s)
        s = s + (1.0 - shift) * e if shift <= 0 else s
        _, _, zr = kkt0.solve3(-c, np.zeros(ne), np.zeros_like(h))
        z = zr
        shift = data.min_cone_eig(z)
        z = z + (1.0 - shift) * e if shift <= 0 else z
    except np.linalg.LinAlgError:
        x = np.zeros(data.nv)
        y = np.zeros(ne)
        s = e.copy()
        z = e.copy()
    tau, kappa = 1.0, 1.0

    sc = _Scaling(data, s, z)
    lam = sc.lam_vec()

    norm_b = max(1.0, float(np.linalg.norm(b)))
    norm_h = max(1.0, float(np.linalg.norm(h)))
    norm_c = max(1.0, float(np.linalg.norm(c)))

    # best near-solution seen so far; lets a stalled run terminate usefully
    # when the instance's attainable accuracy sits just above the tolerances
    best_theta = None
    best_score = math.inf
    best_note = ""

    def finish(it, detail):
        if best_theta is not None and best_score <= 10.0:
            check = verify_solution(program, best_theta)
            return SolverResult(
                status=SolverStatus.OPTIMAL,
                theta=best_theta,
                objective_value=float(c @ best_theta),
                max_eig_violation=check.max_eig_violation,
                ineq_violation=check.ineq_violation,
                eq_residual=check.eq_residual,
                iterations=it,
                detail=f"terminated at reduced accuracy ({best_note})",
            )
        return _failure(it, detail)

    last = ""
    for it in range(options.max_iters):
        # raw cone points reconstructed from the scaling so s'z == |lam|^2
        s = sc.WT(lam)
        z = sc.Winv(lam)
        rx = (A.T @ y if ne else 0.0) + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        rtau = kappa + float(c @ x) + (float(b @ y) if ne else 0.0) + float(h @ z)
        gap = float(lam @ lam)
        mu = (gap + tau * kappa) / (data.degree + 1)

        pcost = float(c @ x) / tau
        pres = max(float(np.linalg.norm(ry)) / norm_b, float(np.linalg.norm(rz)) / norm_h) / tau
        dres = float(np.linalg.norm(rx)) / norm_c / tau
        rel_gap = gap / tau**2 / max(1.0, abs(pcost))
        score = max(
            pres / options.feas_tol, dres / options.feas_tol, rel_gap / options.gap_tol
        )
        if math.isfinite(score) and score < best_score:
            best_score = score
            best_theta = x / tau
            best_note = f"pres {pres:.1e}, dres {dres:.1e}, relgap {rel_gap:.1e}"
        if options.verbose:
            print(
                f"iter {it:3d}  pcost {pcost:+.6e}  pres {pres:.2e}  "
                f"dres {dres:.2e}  relgap {rel_gap:.2e}  tau {tau:.2e}  kappa {kappa:.2e}"
            )
        if pres <= options.feas_tol and dres <= options.feas_tol and rel_gap <= options.gap_tol:
            theta = x / tau
            check = verify_solution(program, theta)
            return SolverResult(
                status=SolverStatus.OPTIMAL,
                theta=theta,
                objective_value=float(c @ theta),
                max_eig_violation=check.max_eig_violation,
                ineq_violation=check.ineq_violation,
                eq_residual=check.eq_residual,
                iterations=it,
                detail="",
            )
        # infeasibility certificates
        ct = (float(b @ y) if ne else 0.0) + float(h @ z)
        if ct < 0:
            cert = float(np.linalg.norm((A.T @ y if ne else 0.0) + G.T @ z))
            if cert / norm_c / (-ct) <= options.feas_tol:
                return SolverResult(
                    status=SolverStatus.INFEASIBLE,
                    theta=None,
                    objective_value=math.nan,
                    max_eig_violation=math.nan,
                    ineq_violation=math.nan,
                    eq_residual=math.nan,
                    iterations=it,
                    detail="primal infeasibility certificate found",
                )
        if float(c @ x) < 0:
            resid = max(
                float(np.linalg.norm(A @ x)) if ne else 0.0,
                float(np.linalg.norm(G @ x + s)),
            )
            if resid / max(norm_b, norm_h) / (-float(c @ x)) <= options.feas_tol:
                return _failure(
                    it, "dual infeasibility certificate: objective unbounded below"
                )

        try:
            kkt = _KktSolver(data, sc)
            x1, y1, z1 = kkt.solve3(-c, b, h)
        except np.linalg.LinAlgError:
            return finish(
                it,
                f"factorization failed (pres {pres:.1e}, dres {dres:.1e}, relgap {rel_gap:.1e})",
            )
        denom = float(c @ x1) + (float(b @ y1) if ne else 0.0) + float(h @ z1) - kappa / tau

        def f4_once(bx, by, bz, btau, bs, bkap):
            """One pass of the full linearized embedding:
            A'dy + G'dz + c dtau = bx;  A dx - b dtau = by;
            G dx + ds - h dtau = bz;  dkap + c'dx + b'dy + h'dz = btau;
            W^{-T} ds + W dz = bs;  tau dkap + kappa dtau = bkap."""
            u0x, u0y, u0z = kkt.solve3(bx, by, bz - sc.WT(bs))
            num = (
                btau
                - bkap / tau
                - (float(c @ u0x) + (float(b @ u0y) if ne else 0.0) + float(h @ u0z))
            )
            dtau = num / denom
            dx = u0x + dtau * x1
            dy = u0y + dtau * y1 if ne else u0y
            dz = u0z + dtau * z1
            ds = sc.WT(bs - sc.W(dz))
            dkap = (bkap - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkap

        def f4(bx, by, bz, btau, bs, bkap, refine=2):
            dx, dy, dz, ds, dtau, dkap = f4_once(bx, by, bz, btau, bs, bkap)
            for _ in range(refine):
                r1 = bx - ((A.T @ dy if ne else 0.0) + G.T @ dz + c * dtau)
                r2 = by - (A @ dx - b * dtau)
                r3 = bz - (G @ dx + ds - h * dtau)
                r4 = btau - (
                    dkap + float(c @ dx) + (float(b @ dy) if ne else 0.0) + float(h @ dz)
                )
                r5 = bs - (sc.WinvT(ds) + sc.W(dz))
                r6 = bkap - (tau * dkap + kappa * dtau)
                cx, cy, cz, cs, ctau, ckap = f4_once(r1, r2, r3, r4, r5, r6)
                dx = dx + cx
                dy = dy + cy if ne else dy
                dz = dz + cz
                ds = ds + cs
                dtau += ctau
                dkap += ckap
            return dx, dy, dz, ds, dtau, dkap

        def direction(sigma, comp_corr, kap_corr):
            eta = 1.0 - sigma
            d_s = sigma * mu * e - sc.jordan_mul(lam, lam) - comp_corr
            rho = sc.jordan_div_lam(d_s)
            dk_rhs = sigma * mu - tau * kappa - kap_corr
            dx, dy, dz, ds, dtau, dkap = f4(
                -eta * rx, -eta * ry, -eta * rz, -eta * rtau, rho, dk_rhs
            )
            return dx, dy, dz, ds, dtau, dkap

        zero = np.zeros_like(e)
        dxa, dya, dza, dsa, dtaua, dkapa = direction(0.0, zero, 0.0)
        dsa_scaled = sc.WinvT(dsa)
        dza_scaled = sc.W(dza)
        alpha = min(
            sc.max_step(dsa_scaled),
            sc.max_step(dza_scaled),
            tau / -dtaua if dtaua < 0 else math.inf,
            kappa / -dkapa if dkapa < 0 else math.inf,
        )
        alpha_aff = min(1.0, alpha)
        sigma = min(1.0, max(0.0, (1.0 - alpha_aff) ** 3))
        comp_corr = sc.jordan_mul(dsa_scaled, dza_scaled)
        kap_corr = dtaua * dkapa
        dx, dy, dz, ds, dtau, dkap = direction(sigma, comp_corr, kap_corr)
        ds_scaled = sc.WinvT(ds)
        dz_scaled = sc.W(dz)
        alpha = min(
            sc.max_step(ds_scaled),
            sc.max_step(dz_scaled),
            tau / -dtau if dtau < 0 else math.inf,
            kappa / -dkap if dkap < 0 else math.inf,
        )
        step = min(1.0, 0.99 * alpha)
        if step <= 1e-10 or not math.isfinite(step):
            return finish(
                it,
                f"step length collapsed (pres {pres:.1e}, dres {dres:.1e}, relgap {rel_gap:.1e})",
            )
        x = x + step * dx
        if ne:
            y = y + step * dy
        tau = tau + step * dtau
        kappa = kappa + step * dkap
        try:
            sc.update(lam + step * ds_scaled, lam + step * dz_scaled)
        except np.linalg.LinAlgError:
            return finish(
                it,
                f"scaling update failed (pres {pres:.1e}, dres {dres:.1e}, relgap {rel_gap:.1e})",
            )
        lam = sc.lam_vec()
        last = f"pres {pres:.1e}, dres {dres:.1e}, relgap {rel_gap:.1e}"

    return finish(options.max_iters, f"iteration limit reached ({last})")


# --- cvxopt adapter --- #


def _solve_cvxopt(program: ConicProgram, options: SolverOptions) -> SolverResult:
    try:
        import cvxopt
        import cvxopt.solvers
    except ImportError as ex:
        raise SchemaError(f"backend 'cvxopt' requires the cvxopt package: {ex}") from None

    nv = program.num_vars
    l = len(program.inequalities)
    dims = {"l": l, "q": [], "s": [blk.dim for blk in program.psd_blocks]}
    G_rows = []
    h_vals = []
    for a, r in program.inequalities:
        G_rows.append(a)
        h_vals.append(r)
    for blk in program.psd_blocks:
        m = blk.dim
        stack = blk.coefficient_stack(nv)
        # cvxopt 's' blocks use the full m*m column-major vec, no scaling
        block_cols = -stack.reshape(nv, m * m)
        G_rows.extend(block_cols.T)
        h_vals.extend(blk.constant_matrix().reshape(m * m))
    G = cvxopt.matrix(np.asarray(G_rows, dtype=float))
    h = cvxopt.matrix(np.asarray(h_vals, dtype=float))
    c = cvxopt.matrix(program.objective)
    if program.equalities:
        A = cvxopt.matrix(np.stack([a for a, _ in program.equalities]))
        b = cvxopt.matrix(np.array([r for _, r in program.equalities]))
    else:
        A = cvxopt.matrix(np.zeros((0, nv)))
        b = cvxopt.matrix(np.zeros(0))
    opts = {
        "show_progress": options.verbose,
        "maxiters": options.max_iters,
        "abstol": options.gap_tol,
        "reltol": options.gap_tol,
        "feastol": options.feas_tol,
    }
    sol = cvxopt.solvers.conelp(c, G, h, dims, A, b, options=opts)
    status = sol["status"]
    if status == "optimal":
        theta = np.array(sol["x"]).reshape(nv)
        check = verify_solution(program, theta)
        return SolverResult(
            status=SolverStatus.OPTIMAL,
            theta=theta,
            objective_value=float(program.objective @ theta),
            max_eig_violation=check.max_eig_violation,
            ineq_violation=check.ineq_violation,
            eq_residual=check.eq_residual,
            iterations=int(sol.get("iterations", 0)),
            detail="",
        )
    if status == "primal infeasible":
        return SolverResult(
            status=SolverStatus.INFEASIBLE,
            theta=None,
            objective_value=math.nan,
            max_eig_violation=math.nan,
            ineq_violation=math.nan,
            eq_residual=math.nan,
            iterations=int(sol.get("iterations", 0)),
            detail="primal infeasibility certificate found",
        )
    detail = (
        "objective unbounded below"
        if status == "dual infeasible"
        else f"cvxopt status {status!r}"
    )
    result = _failure(int(sol.get("iterations", 0)), detail)
    return result


_BACKENDS = {
    "bundled": _solve_bundled,
    "cvxopt": _solve_cvxopt,
}


def solve_conic(
    program: ConicProgram,
    options: SolverOptions | None = None,
    backend: str = "bundled",
) -> SolverResult:
    """Solve the program with the selected backend (default: bundled)."""
    if backend not in _BACKENDS:
        raise ValueError(
            f"unknown backend {backend!r}; available: {sorted(_BACKENDS)}"
        )
    return _BACKENDS[backend](program, options or SolverOptions())


# --- interchange format --- #


def save_program(program: ConicProgram, path: str) -> None:
    """Write the program as a structured-text (JSON) document, full precision."""
    doc = {
        "num_vars": program.num_vars,
        "objective": program.objective.tolist(),
        "equalities": [{"coeff": a.tolist(), "rhs": r} for a, r in program.equalities],
        "inequalities": [{"coeff": a.tolist(), "rhs": r} for a, r in program.inequalities],
        "psd_blocks": [
            {
                "dim": blk.dim,
                "const": [[i, j, v] for i, j, v in blk.const],
                "coeffs": [[k, i, j, v] for k, i, j, v in blk.coeffs],
            }
            for blk in program.psd_blocks
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_program(path: str) -> ConicProgram:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as ex:
            raise SchemaError(f"not a valid structured-text document: {ex}") from None
    required = {"num_vars", "objective", "equalities", "inequalities", "psd_blocks"}
    if not isinstance(doc, dict) or set(doc) != required:
        raise SchemaError(f"program document must have exactly the keys {sorted(required)}")
    try:
        blocks = [
            PsdBlockMap(
                dim=int(blk["dim"]),
                const=[tuple(t) for t in blk["const"]],
                coeffs=[tuple(t) for t in blk["coeffs"]],
            )
            for blk in doc["psd_blocks"]
        ]
        return ConicProgram(
            num_vars=int(doc["num_vars"]),
            objective=np.asarray(doc["objective"], dtype=float),
            equalities=[(e["coeff"], e["rhs"]) for e in doc["equalities"]],
            inequalities=[(e["coeff"], e["rhs"]) for e in doc["inequalities"]],
            psd_blocks=blocks,
        )
    except (KeyError, TypeError, ValueError) as ex:
        raise SchemaError(f"malformed program document: {ex}") from None
