"""Joint synthesis of an approximating implicit network and its certificate.

One semidefinite program decides everything at once: diagonal multipliers
certifying well-posedness of the synthesized network, products Y = T * Psi
standing in for its weights (the change of variables that makes the search
convex), and the three coefficients (gamma, gamma_u1, gamma_u2) of a bound

    ||g(u2) - g(u1)||_1  <=  gamma + gamma_u1 ||u~||_1 + gamma_u2 ||u~||_2^2

valid for every input pair drawn from the given pair set.  Weight-channel
inequalities keep each synthesized row within a relative tolerance of the
reference network's row; with all tolerances zero the weights collapse onto
the reference exactly and the program reduces to pure analysis, which is also
available directly (and cheaper) through analyze_network.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .conic import (
    ConicProgram,
    PsdBlockMap,
    SolverOptions,
    SolverResult,
    SolverStatus,
    solve_conic,
)
from .errors import Infeasible, NumericalFailure
from .multipliers import Dims, InputPairSet, MultiplierSet, certificate_matrix
from .network import ImplicitNetwork

# Fallback margin for structurally marginal instances: when the certificate
# matrix has a fixed neutral eigendirection (a direction whose quadratic form
# is identically zero for every multiplier choice), the strictly shifted
# program is infeasible by exactly the shift although valid certificates
# exist in the closure.  Rather than fail, such instances are re-solved with
# the margin relaxed to this small positive slack; the reported lmi_margin
# makes the relaxation visible.
MARGINAL_RELAXATION = 5e-8

# Iteration budget for first-attempt (uncapped) solves.  Healthy instances
# converge well inside this; an instance drifting along an unbounded
# multiplier ray (see SynthesisProblem.t_cap) only burns iterations, so the
# budget bounds the cost of discovering that the capped rescue is needed.
_UNCAPPED_ITER_BUDGET = 80


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights on the three bound coefficients in the synthesis objective."""

    gamma: float = 1.0
    gamma_u1: float = 1.0
    gamma_u2: float = 1.0

    def __post_init__(self):
        vals = (self.gamma, self.gamma_u1, self.gamma_u2)
        if any(v < 0 for v in vals):
            raise ValueError("objective weights must be nonnegative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one objective weight must be positive")


@dataclass(frozen=True)
class SimilarityTolerances:
    """Per-block relative deviation budgets for the synthesized weights.

    A budget eps on block W means each synthesized row i satisfies
    |Psi[i, j] - W[i, j]| <= eps elementwise (enforced in the convexified
    variables as |Y[i, j] - t_i W[i, j]| <= eps * t_i).  A budget of zero
    pins the block to the reference exactly.
    """

    w_x: float = 0.0
    w_u: float = 0.0
    w_fx: float = 0.0
    w_fu: float = 0.0

    def __post_init__(self):
        for name in ("w_x", "w_u", "w_fx", "w_fu"):
            if getattr(self, name) < 0:
                raise ValueError(f"tolerance {name} must be nonnegative")

    @classmethod
    def uniform(cls, eps: float) -> "SimilarityTolerances":
        return cls(w_x=eps, w_u=eps, w_fx=eps, w_fu=eps)


@dataclass
class SynthesisProblem:
    """Reference network, input pair set, tolerances and options for one run.

    strictness_shift is the margin by which the certificate matrix is pushed
    into the negative definite cone; t_floor is the lower bound on the
    diagonal multipliers (both keep the synthesized network certifiably
    well-posed rather than marginally so).  t_cap bounds the multipliers
    from above in the capped rescue solve (see synthesize); it is far above
    the scale of any multiplier the uncapped program resolves.
    fixed_gamma_u1/u2 pin a bound coefficient to a given value instead of
    optimizing it.
    """

    network: ImplicitNetwork
    input_set: InputPairSet
    tolerances: SimilarityTolerances
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    fixed_gamma_u1: float | None = None
    fixed_gamma_u2: float | None = None
    strictness_shift: float = 1e-8
    t_floor: float = 1e-6
    t_cap: float = 1e6

    def __post_init__(self):
        act = self.network.activation
        if act.slope_lo < 0 or act.slope_hi > 1:
            raise ValueError(
                "certificate requires activation slopes restricted to [0, 1], "
                f"got [{act.slope_lo}, {act.slope_hi}]"
            )
        if self.strictness_shift <= 0:
            raise ValueError("strictness_shift must be positive")
        if self.t_floor <= 0:
            raise ValueError("t_floor must be positive")
        if self.t_cap <= self.t_floor:
            raise ValueError("t_cap must exceed t_floor")
        for name in ("fixed_gamma_u1", "fixed_gamma_u2"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class VariableLayout:
    """Index map of the decision vector.

    Order: diag T_z, diag T_g, T_u1, T_u2, then (synthesis mode only) the
    row-major convexified weight blocks Y_z, Y_u, Y_gz, Y_gu, then gamma,
    gamma_u1, gamma_u2.
    """

    dims: Dims
    include_weights: bool
    sl_T_z: slice
    sl_T_g: slice
    idx_T_u1: int
    idx_T_u2: int
    sl_Y_z: slice
    sl_Y_u: slice
    sl_Y_gz: slice
    sl_Y_gu: slice
    idx_gamma: int
    idx_gamma_u1: int
    idx_gamma_u2: int
    num_vars: int


def layout_variables(dims: Dims, include_weights: bool = True) -> VariableLayout:
    n, n_u, n_g = dims.n, dims.n_u, dims.n_g
    pos = 0

    def take(count: int) -> slice:
        nonlocal pos
        sl = slice(pos, pos + count)
        pos += count
        return sl

    sl_T_z = take(n)
    sl_T_g = take(n_g)
    idx_T_u1 = pos
    pos += 1
    idx_T_u2 = pos
    pos += 1
    if include_weights:
        sl_Y_z = take(n * n)
        sl_Y_u = take(n * n_u)
        sl_Y_gz = take(n_g * n)
        sl_Y_gu = take(n_g * n_u)
    else:
        sl_Y_z = sl_Y_u = sl_Y_gz = sl_Y_gu = slice(pos, pos)
    idx_gamma = pos
    idx_gamma_u1 = pos + 1
    idx_gamma_u2 = pos + 2
    return VariableLayout(
        dims=dims,
        include_weights=include_weights,
        sl_T_z=sl_T_z,
        sl_T_g=sl_T_g,
        idx_T_u1=idx_T_u1,
        idx_T_u2=idx_T_u2,
        sl_Y_z=sl_Y_z,
        sl_Y_u=sl_Y_u,
        sl_Y_gz=sl_Y_gz,
        sl_Y_gu=sl_Y_gu,
        idx_gamma=idx_gamma,
        idx_gamma_u1=idx_gamma_u1,
        idx_gamma_u2=idx_gamma_u2,
        num_vars=pos + 3,
    )


def _certificate_psd_map(
    problem: SynthesisProblem, layout: VariableLayout, shift: float | None = None
) -> PsdBlockMap:
    """PSD block S(theta) = -M(theta) - shift * I >= 0 where M is the sum of
    the four certificate matrices in the convexified variables."""
    d = layout.dims
    net = problem.network
    n, n_u, n_g = d.n, d.n_u, d.n_g
    gp = lambda i: i
    gm = lambda i: n_g + i
    up = lambda j: 2 * n_g + j
    zz = lambda i: 2 * n_g + 2 * n_u + i
    uu = lambda j: 2 * n_g + 2 * n_u + n + j
    one = d.idx_one

    # entries of M; negated into the cone form at the end
    const = [(gp(i), one, 0.5) for i in range(2 * n_g)]
    coeffs = []

    for i in range(n):
        coeffs.append((layout.sl_T_z.start + i, zz(i), zz(i), -1.0))
    for i in range(n_g):
        k = layout.sl_T_g.start + i
        coeffs.append((k, gp(i), gp(i), -1.0))
        coeffs.append((k, gm(i), gm(i), -1.0))
    for j in range(2 * n_u):
        coeffs.append((layout.idx_T_u1, up(j), one, -0.5))
        coeffs.append((layout.idx_T_u2, up(j), up(j), -0.5))
    for j in range(n_u):
        coeffs.append((layout.idx_T_u2, uu(j), uu(j), -0.5))
    coeffs.append((layout.idx_T_u1, one, one, problem.input_set.eps_u1))
    coeffs.append((layout.idx_T_u2, one, one, problem.input_set.eps_u2))

    coeffs.append((layout.idx_gamma, one, one, -1.0))
    for j in range(2 * n_u):
        coeffs.append((layout.idx_gamma_u1, up(j), one, -0.5))
        coeffs.append((layout.idx_gamma_u2, up(j), up(j), -0.5))
    for j in range(n_u):
        coeffs.append((layout.idx_gamma_u2, uu(j), uu(j), -0.5))

    if layout.include_weights:
        for i in range(n):
            for j in range(n):
                k = layout.sl_Y_z.start + i * n + j
                if i == j:
                    coeffs.append((k, zz(i), zz(i), 1.0))
                else:
                    coeffs.append((k, zz(min(i, j)), zz(max(i, j)), 0.5))
            for j in range(n_u):
                coeffs.append((layout.sl_Y_u.start + i * n_u + j, zz(i), uu(j), 0.5))
        for i in range(n_g):
            for j in range(n):
                k = layout.sl_Y_gz.start + i * n + j
                coeffs.append((k, gp(i), zz(j), 0.5))
                coeffs.append((k, gm(i), zz(j), -0.5))
            for j in range(n_u):
                k = layout.sl_Y_gu.start + i * n_u + j
                coeffs.append((k, gp(i), uu(j), 0.5))
                coeffs.append((k, gm(i), uu(j), -0.5))
    else:
        # weights eliminated: Y = T * W folded into the multiplier columns
        for i in range(n):
            k = layout.sl_T_z.start + i
            coeffs.append((k, zz(i), zz(i), float(net.W_x[i, i])))
            for j in range(n):
                if j != i:
                    coeffs.append(
                        (k, zz(min(i, j)), zz(max(i, j)), 0.5 * float(net.W_x[i, j]))
                    )
            for j in range(n_u):
                coeffs.append((k, zz(i), uu(j), 0.5 * float(net.W_u[i, j])))
        for i in range(n_g):
            k = layout.sl_T_g.start + i
            for j in range(n):
                coeffs.append((k, gp(i), zz(j), 0.5 * float(net.W_fx[i, j])))
                coeffs.append((k, gm(i), zz(j), -0.5 * float(net.W_fx[i, j])))
            for j in range(n_u):
                coeffs.append((k, gp(i), uu(j), 0.5 * float(net.W_fu[i, j])))
                coeffs.append((k, gm(i), uu(j), -0.5 * float(net.W_fu[i, j])))

    if shift is None:
        shift = problem.strictness_shift
    const_neg = [(i, j, -v) for (i, j, v) in const]
    const_neg.extend((i, i, -shift) for i in range(d.N_p))
    coeffs_neg = [(k, i, j, -v) for (k, i, j, v) in coeffs]
    return PsdBlockMap(dim=d.N_p, const=const_neg, coeffs=coeffs_neg)


def _unit_row(num_vars: int, entries) -> np.ndarray:
    row = np.zeros(num_vars)
    for idx, val in entries:
        row[idx] += val
    return row


def assemble_synthesis_sdp(
    problem: SynthesisProblem,
    include_weights: bool = True,
    shift_override: float | None = None,
    capped: bool = False,
) -> tuple[ConicProgram, VariableLayout]:
    """Build the conic program for the given problem.

    include_weights=False assembles the analysis variant: the weight blocks
    are eliminated against the reference network and only multipliers and
    bound coefficients remain.  shift_override replaces the problem's
    strictness shift (negative values relax the margin; used for the
    marginal-instance fallback).  capped adds T <= t_cap rows on every
    diagonal multiplier; synthesize solves that variant only after the
    uncapped program fails numerically.
    """
    net = problem.network
    dims = Dims.of(net)
    layout = layout_variables(dims, include_weights)
    nv = layout.num_vars
    tol = problem.tolerances

    objective = np.zeros(nv)
    objective[layout.idx_gamma] = problem.weights.gamma
    objective[layout.idx_gamma_u1] = problem.weights.gamma_u1
    objective[layout.idx_gamma_u2] = problem.weights.gamma_u2

    equalities = []
    inequalities = []

    if include_weights:
        blocks = [
            (net.W_x, layout.sl_Y_z, layout.sl_T_z, tol.w_x),
            (net.W_u, layout.sl_Y_u, layout.sl_T_z, tol.w_u),
            (net.W_fx, layout.sl_Y_gz, layout.sl_T_g, tol.w_fx),
            (net.W_fu, layout.sl_Y_gu, layout.sl_T_g, tol.w_fu),
        ]
        for W, sl_Y, sl_T, eps in blocks:
            rows, cols = W.shape
            for i in range(rows):
                t_idx = sl_T.start + i
                for j in range(cols):
                    y_idx = sl_Y.start + i * cols + j
                    w = float(W[i, j])
                    if eps == 0.0:
                        equalities.append(
                            (_unit_row(nv, [(y_idx, 1.0), (t_idx, -w)]), 0.0)
                        )
                    else:
                        inequalities.append(
                            (_unit_row(nv, [(y_idx, 1.0), (t_idx, -w - eps)]), 0.0)
                        )
                        inequalities.append(
                            (_unit_row(nv, [(y_idx, -1.0), (t_idx, w - eps)]), 0.0)
                        )

    for sl in (layout.sl_T_z, layout.sl_T_g):
        for idx in range(sl.start, sl.stop):
            inequalities.append((_unit_row(nv, [(idx, -1.0)]), -problem.t_floor))
    inequalities.append((_unit_row(nv, [(layout.idx_T_u1, -1.0)]), 0.0))
    inequalities.append((_unit_row(nv, [(layout.idx_T_u2, -1.0)]), 0.0))
    if capped:
        # closes off the ray along which loose-tolerance instances run away
        for sl in (layout.sl_T_z, layout.sl_T_g):
            for idx in range(sl.start, sl.stop):
                inequalities.append((_unit_row(nv, [(idx, 1.0)]), problem.t_cap))
        inequalities.append((_unit_row(nv, [(layout.idx_T_u1, 1.0)]), problem.t_cap))
        inequalities.append((_unit_row(nv, [(layout.idx_T_u2, 1.0)]), problem.t_cap))
    inequalities.append((_unit_row(nv, [(layout.idx_gamma, -1.0)]), 0.0))

    # fixed bound coefficients are pinned by equality; the nonnegativity row
    # is dropped so a strictly feasible interior survives
    if problem.fixed_gamma_u1 is None:
        inequalities.append((_unit_row(nv, [(layout.idx_gamma_u1, -1.0)]), 0.0))
    else:
        equalities.append(
            (_unit_row(nv, [(layout.idx_gamma_u1, 1.0)]), problem.fixed_gamma_u1)
        )
    if problem.fixed_gamma_u2 is None:
        inequalities.append((_unit_row(nv, [(layout.idx_gamma_u2, -1.0)]), 0.0))
    else:
        equalities.append(
            (_unit_row(nv, [(layout.idx_gamma_u2, 1.0)]), problem.fixed_gamma_u2)
        )

    program = ConicProgram(
        num_vars=nv,
        objective=objective,
        equalities=equalities,
        inequalities=inequalities,
        psd_blocks=[_certificate_psd_map(problem, layout, shift_override)],
    )
    return program, layout


@dataclass(frozen=True)
class RobustnessCertificate:
    """Certified bound coefficients over a given input pair set.

    lmi_margin is the largest eigenvalue of the certificate matrix at the
    solution (valid certificates are negative definite, so this should sit
    at or below -strictness_shift up to solver tolerance).
    """

    gamma: float
    gamma_u1: float
    gamma_u2: float
    input_set: InputPairSet
    lmi_margin: float
    objective_value: float

    def bound(self, u_diff: np.ndarray) -> float:
        """Certified value of gamma + gamma_u1 ||u~||_1 + gamma_u2 ||u~||_2^2."""
        u_diff = np.asarray(u_diff, dtype=float).reshape(-1)
        return (
            self.gamma
            + self.gamma_u1 * float(np.sum(np.abs(u_diff)))
            + self.gamma_u2 * float(u_diff @ u_diff)
        )


@dataclass
class SynthesisSolution:
    network: ImplicitNetwork
    certificate: RobustnessCertificate
    multipliers: MultiplierSet
    theta: np.ndarray
    layout: VariableLayout
    solver_result: SolverResult
    strictness_relaxed: bool = False
    multiplier_capped: bool = False

    @property
    def status_label(self) -> str:
        """Solve outcome plus whichever fallbacks were needed to reach it."""
        notes = []
        if self.strictness_relaxed:
            notes.append("relaxed margin")
        if self.multiplier_capped:
            notes.append("capped multipliers")
        return f"optimal ({', '.join(notes)})" if notes else "optimal"


def _extract_solution(
    problem: SynthesisProblem, layout: VariableLayout, result: SolverResult
) -> SynthesisSolution:
    d = layout.dims
    theta = result.theta
    T_z = theta[layout.sl_T_z].copy()
    T_g = theta[layout.sl_T_g].copy()
    T_u1 = float(theta[layout.idx_T_u1])
    T_u2 = float(theta[layout.idx_T_u2])
    ref = problem.network
    if layout.include_weights:
        Y_z = theta[layout.sl_Y_z].reshape(d.n, d.n)
        Y_u = theta[layout.sl_Y_u].reshape(d.n, d.n_u)
        Y_gz = theta[layout.sl_Y_gz].reshape(d.n_g, d.n)
        Y_gu = theta[layout.sl_Y_gu].reshape(d.n_g, d.n_u)
        Psi_z = Y_z / T_z[:, None]
        Psi_u = Y_u / T_z[:, None]
        Psi_gz = Y_gz / T_g[:, None]
        Psi_gu = Y_gu / T_g[:, None]
        network = ImplicitNetwork(
            W_x=Psi_z,
            W_u=Psi_u,
            W_fx=Psi_gz,
            W_fu=Psi_gu,
            b=ref.b.copy(),
            b_f=ref.b_f.copy(),
            activation=ref.activation,
        )
    else:
        Y_z = T_z[:, None] * ref.W_x
        Y_u = T_z[:, None] * ref.W_u
        Y_gz = T_g[:, None] * ref.W_fx
        Y_gu = T_g[:, None] * ref.W_fu
        network = ref
    mults = MultiplierSet(
        T_z=T_z, T_g=T_g, T_u1=max(T_u1, 0.0), T_u2=max(T_u2, 0.0)
    )
    gamma = max(float(theta[layout.idx_gamma]), 0.0)
    gamma_u1 = max(float(theta[layout.idx_gamma_u1]), 0.0)
    gamma_u2 = max(float(theta[layout.idx_gamma_u2]), 0.0)
    M = certificate_matrix(
        d, mults, problem.input_set, gamma, gamma_u1, gamma_u2, Y_z, Y_u, Y_gz, Y_gu
    )
    certificate = RobustnessCertificate(
        gamma=gamma,
        gamma_u1=gamma_u1,
        gamma_u2=gamma_u2,
        input_set=problem.input_set,
        lmi_margin=float(np.linalg.eigvalsh(M)[-1]),
        objective_value=result.objective_value,
    )
    return SynthesisSolution(
        network=network,
        certificate=certificate,
        multipliers=mults,
        theta=theta,
        layout=layout,
        solver_result=result,
    )


def _run(problem, include_weights, options, backend) -> SynthesisSolution:
    opts = options if options is not None else SolverOptions()
    budget = opts
    if opts.max_iters > _UNCAPPED_ITER_BUDGET:
        budget = replace(opts, max_iters=_UNCAPPED_ITER_BUDGET)

    # Fallback ladder.  Strict margin first, relaxed (see MARGINAL_RELAXATION)
    # second; within each margin the uncapped program is tried before the
    # capped rescue, so healthy instances keep the smaller program and full
    # accuracy.  A genuinely uncertifiable problem stays infeasible under
    # every rung, so nothing is masked.
    first_detail = None
    for relaxed in (False, True):
        shift = -MARGINAL_RELAXATION if relaxed else None
        program, layout = assemble_synthesis_sdp(
            problem, include_weights, shift_override=shift
        )
        result = solve_conic(program, budget, backend)
        if result.status is SolverStatus.OPTIMAL:
            sol = _extract_solution(problem, layout, result)
            sol.strictness_relaxed = relaxed
            return sol
        if first_detail is None:
            first_detail = result.detail
        if result.status is not SolverStatus.INFEASIBLE:
            # numerical breakdown, usually a runaway multiplier ray; capping
            # T restores a bounded optimal face
            program, layout = assemble_synthesis_sdp(
                problem, include_weights, shift_override=shift, capped=True
            )
            result = solve_conic(program, opts, backend)
            if result.status is SolverStatus.OPTIMAL:
                sol = _extract_solution(problem, layout, result)
                sol.strictness_relaxed = relaxed
                sol.multiplier_capped = True
                return sol
        # fall through to the relaxed margin: either this margin is
        # infeasible (the cap cannot manufacture that, it sits far above any
        # resolvable multiplier scale) or both solves broke down

    if result.status is SolverStatus.INFEASIBLE:
        raise Infeasible(
            "no certificate exists for the requested tolerances and input set"
        )
    raise NumericalFailure(f"solver failed: {result.detail or first_detail}")


def synthesize(
    problem: SynthesisProblem,
    options: SolverOptions | None = None,
    backend: str = "bundled",
) -> SynthesisSolution:
    """Solve the joint synthesis program and extract network plus certificate.

    Two fallbacks may engage, each recorded on the returned solution: a
    relaxed strictness margin for structurally marginal instances
    (strictness_relaxed) and a multiplier cap for instances whose optimal
    multipliers run away (multiplier_capped).  Raises Infeasible when no
    certificate exists within the tolerances and NumericalFailure when the
    solver cannot resolve the instance on any rung.
    """
    return _run(problem, True, options, backend)


def analyze_network(
    network: ImplicitNetwork,
    input_set: InputPairSet,
    weights: ObjectiveWeights | None = None,
    fixed_gamma_u1: float | None = None,
    fixed_gamma_u2: float | None = None,
    strictness_shift: float = 1e-8,
    t_floor: float = 1e-6,
    options: SolverOptions | None = None,
    backend: str = "bundled",
) -> SynthesisSolution:
    """Certify the given network as-is (no weight freedom).

    Equivalent to synthesis with all tolerances zero but assembled on the
    reduced variable set, so it is cheaper and better conditioned.  The
    returned solution carries the input network unchanged.
    """
    problem = SynthesisProblem(
        network=network,
        input_set=input_set,
        tolerances=SimilarityTolerances.uniform(0.0),
        weights=weights or ObjectiveWeights(),
        fixed_gamma_u1=fixed_gamma_u1,
        fixed_gamma_u2=fixed_gamma_u2,
        strictness_shift=strictness_shift,
        t_floor=t_floor,
    )
    return _run(problem, False, options, backend)
