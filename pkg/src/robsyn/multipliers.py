"""Quadratic-form certificates for incremental 1-norm robustness.

Everything here operates on the stacked incremental vector

    p = [g_pm; u_pm; z_tilde; u_tilde; 1],        g_pm = [relu(g~); relu(-g~)],
                                                  u_pm = [relu(u~); relu(-u~)],

where tilde quantities are differences between two evaluations of a network
at inputs u1, u2.  Each builder returns a symmetric matrix whose quadratic
form p' M p equals the scalar certificate term it encodes:

    omega_z:      z~' T_z (Psi_z z~ + Psi_u u~ - z~)            (slope restriction)
    omega_g:      r(g~)' T_g (g~ - r(g~)) + r(-g~)' T_g (-g~ - r(-g~))
    omega_u:      T_u1 eps_u1 + T_u2 eps_u2 - T_u1 ||u~||_1 - T_u2 ||u~||_2^2
    omega_gamma:  ||g~||_1 - gamma - gamma_u1 ||u~||_1 - gamma_u2 ||u~||_2^2

The first three are nonnegative for realizable p (slope-restricted states,
u1 - u2 inside the input set), so their sum dominating omega_gamma yields the
robustness bound.  The "check" variants replace the bilinear products T*Psi
by free matrices Y, which is what makes the synthesis program convex; at
Y = T*W they coincide with the originals exactly.

Storage convention: off-diagonal blocks appear halved on each side of the
diagonal, and hermitian-sum blocks He(X) = X + X' are stored as their
symmetric part, so that the quadratic forms above hold without spurious
factors of two.  The convention is pinned by the scalar-form tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .network import FixedPointConfig, ImplicitNetwork, evaluate, relu


@dataclass(frozen=True)
class Dims:
    """Dimensions (n, n_u, n_g) of a network and the induced p-vector layout."""

    n: int
    n_u: int
    n_g: int

    @property
    def N_p(self) -> int:
        return 2 * self.n_g + 2 * self.n_u + self.n + self.n_u + 1

    # block slices into p, in declaration order
    @property
    def sl_g_pm(self) -> slice:
        return slice(0, 2 * self.n_g)

    @property
    def sl_u_pm(self) -> slice:
        return slice(2 * self.n_g, 2 * self.n_g + 2 * self.n_u)

    @property
    def sl_z(self) -> slice:
        a = 2 * self.n_g + 2 * self.n_u
        return slice(a, a + self.n)

    @property
    def sl_u(self) -> slice:
        a = 2 * self.n_g + 2 * self.n_u + self.n
        return slice(a, a + self.n_u)

    @property
    def idx_one(self) -> int:
        return self.N_p - 1

    @staticmethod
    def of(net: ImplicitNetwork) -> "Dims":
        return Dims(net.n, net.n_u, net.n_g)


@dataclass(frozen=True)
class InputPairSet:
    """Input-difference set {u~ : ||u~||_1 <= eps_u1 and ||u~||_2^2 <= eps_u2}."""

    eps_u1: float
    eps_u2: float

    def __post_init__(self):
        if self.eps_u1 < 0 or self.eps_u2 < 0:
            raise ValueError("input pair set radii must be nonnegative")

    def contains(self, u_diff: np.ndarray, slack: float = 0.0) -> bool:
        d = np.asarray(u_diff, dtype=float)
        return (
            float(np.sum(np.abs(d))) <= self.eps_u1 + slack
            and float(np.dot(d, d)) <= self.eps_u2 + slack
        )


@dataclass
class MultiplierSet:
    """Diagonal multipliers (T_z, T_g) and scalars (T_u1, T_u2), all >= 0."""

    T_z: np.ndarray
    T_g: np.ndarray
    T_u1: float
    T_u2: float

    def __post_init__(self):
        self.T_z = np.asarray(self.T_z, dtype=float).reshape(-1)
        self.T_g = np.asarray(self.T_g, dtype=float).reshape(-1)
        if np.any(self.T_z < 0) or np.any(self.T_g < 0) or self.T_u1 < 0 or self.T_u2 < 0:
            raise ValueError("multipliers must be nonnegative")


@dataclass
class IncrementalVector:
    """The stacked difference vector p for one evaluated input pair."""

    g_pm: np.ndarray
    u_pm: np.ndarray
    z_tilde: np.ndarray
    u_tilde: np.ndarray
    one: float = 1.0

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.g_pm, self.u_pm, self.z_tilde, self.u_tilde, [self.one]]
        )

    @property
    def g_tilde(self) -> np.ndarray:
        n_g = self.g_pm.size // 2
        return self.g_pm[:n_g] - self.g_pm[n_g:]


def assemble_p(
    net: ImplicitNetwork,
    u1: np.ndarray,
    u2: np.ndarray,
    config: FixedPointConfig | None = None,
) -> IncrementalVector:
    """Evaluate the network at u1 and u2 and stack the incremental vector.

    g~ is formed from the weight matrices acting on the state and input
    differences (the biases cancel), which coincides with g(u2) - g(u1).
    """
    r1 = evaluate(net, u1, config)
    r2 = evaluate(net, u2, config)
    z_tilde = r2.x - r1.x
    u_tilde = np.asarray(u2, dtype=float).reshape(net.n_u) - np.asarray(
        u1, dtype=float
    ).reshape(net.n_u)
    g_tilde = net.W_fx @ z_tilde + net.W_fu @ u_tilde
    return IncrementalVector(
        g_pm=np.concatenate([relu(g_tilde), relu(-g_tilde)]),
        u_pm=np.concatenate([relu(u_tilde), relu(-u_tilde)]),
        z_tilde=z_tilde,
        u_tilde=u_tilde,
    )


def _check_diag(name: str, arr: np.ndarray, length: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=float).reshape(-1)
    if arr.size != length:
        raise DimensionMismatch(f"{name} must have {length} entries, got {arr.size}")
    return arr


def _mirror_lower(M: np.ndarray) -> np.ndarray:
    # copy the upper triangle onto the lower one so symmetry is bit-exact
    iu = np.triu_indices(M.shape[0], k=1)
    M[(iu[1], iu[0])] = M[iu]
    return M


def build_omega_z(
    dims: Dims, T_z: np.ndarray, Psi_z: np.ndarray, Psi_u: np.ndarray
) -> np.ndarray:
    """Slope-restriction certificate for the internal states of a network
    (Psi_z, Psi_u): p' M p = z~' T_z (Psi_z z~ + Psi_u u~ - z~)."""
    T_z = _check_diag("T_z", T_z, dims.n)
    M = np.zeros((dims.N_p, dims.N_p))
    A = T_z[:, None] * np.asarray(Psi_z, dtype=float).reshape(dims.n, dims.n)
    M[dims.sl_z, dims.sl_z] = (A + A.T) / 2.0 - np.diag(T_z)
    B = T_z[:, None] * np.asarray(Psi_u, dtype=float).reshape(dims.n, dims.n_u)
    M[dims.sl_z, dims.sl_u] = B / 2.0
    return _mirror_lower(M)


def build_omega_z_check(
    dims: Dims, T_z: np.ndarray, Y_z: np.ndarray, Y_u: np.ndarray
) -> np.ndarray:
    """Convexified variant of build_omega_z with Y_z, Y_u replacing T_z*Psi."""
    T_z = _check_diag("T_z", T_z, dims.n)
    M = np.zeros((dims.N_p, dims.N_p))
    A = np.asarray(Y_z, dtype=float).reshape(dims.n, dims.n)
    M[dims.sl_z, dims.sl_z] = (A + A.T) / 2.0 - np.diag(T_z)
    M[dims.sl_z, dims.sl_u] = np.asarray(Y_u, dtype=float).reshape(dims.n, dims.n_u) / 2.0
    return _mirror_lower(M)


def build_omega_g(
    dims: Dims, T_g: np.ndarray, Psi_gz: np.ndarray, Psi_gu: np.ndarray
) -> np.ndarray:
    """Output-channel certificate tying g_pm to the two ReLU halves of g~:
    p' M p = r(g~)' T_g (g~ - r(g~)) + r(-g~)' T_g (-g~ - r(-g~))."""
    T_g = _check_diag("T_g", T_g, dims.n_g)
    n_g = dims.n_g
    M = np.zeros((dims.N_p, dims.N_p))
    gp = slice(0, n_g)
    gm = slice(n_g, 2 * n_g)
    M[gp, gp] = -np.diag(T_g)
    M[gm, gm] = -np.diag(T_g)
    Cz = T_g[:, None] * np.asarray(Psi_gz, dtype=float).reshape(n_g, dims.n)
    Cu = T_g[:, None] * np.asarray(Psi_gu, dtype=float).reshape(n_g, dims.n_u)
    M[gp, dims.sl_z] = Cz / 2.0
    M[gm, dims.sl_z] = -Cz / 2.0
    M[gp, dims.sl_u] = Cu / 2.0
    M[gm, dims.sl_u] = -Cu / 2.0
    return _mirror_lower(M)


def build_omega_g_check(
    dims: Dims, T_g: np.ndarray, Y_gz: np.ndarray, Y_gu: np.ndarray
) -> np.ndarray:
    """Convexified variant of build_omega_g with Y_gz, Y_gu replacing T_g*Psi."""
    T_g = _check_diag("T_g", T_g, dims.n_g)
    n_g = dims.n_g
    M = np.zeros((dims.N_p, dims.N_p))
    gp = slice(0, n_g)
    gm = slice(n_g, 2 * n_g)
    M[gp, gp] = -np.diag(T_g)
    M[gm, gm] = -np.diag(T_g)
    Cz = np.asarray(Y_gz, dtype=float).reshape(n_g, dims.n)
    Cu = np.asarray(Y_gu, dtype=float).reshape(n_g, dims.n_u)
    M[gp, dims.sl_z] = Cz / 2.0
    M[gm, dims.sl_z] = -Cz / 2.0
    M[gp, dims.sl_u] = Cu / 2.0
    M[gm, dims.sl_u] = -Cu / 2.0
    return _mirror_lower(M)


def build_omega_u(dims: Dims, T_u1: float, T_u2: float, pairset: InputPairSet) -> np.ndarray:
    """Input-set certificate: for u_pm realized from u~ inside the pair set,
    p' M p = T_u1 (eps_u1 - ||u~||_1) + T_u2 (eps_u2 - ||u~||_2^2) >= 0."""
    if T_u1 < 0 or T_u2 < 0:
        raise ValueError("T_u1 and T_u2 must be nonnegative")
    M = np.zeros((dims.N_p, dims.N_p))
    two_nu = 2 * dims.n_u
    M[dims.sl_u_pm, dims.sl_u_pm] = -0.5 * T_u2 * np.eye(two_nu)
    M[dims.sl_u, dims.sl_u] = -0.5 * T_u2 * np.eye(dims.n_u)
    M[dims.sl_u_pm, dims.idx_one] = -0.5 * T_u1
    M[dims.idx_one, dims.idx_one] = T_u1 * pairset.eps_u1 + T_u2 * pairset.eps_u2
    return _mirror_lower(M)


def build_omega_gamma(
    dims: Dims, gamma: float, gamma_u1: float, gamma_u2: float
) -> np.ndarray:
    """Bound side of the certificate:
    p' M p = ||g~||_1 - gamma - gamma_u1 ||u~||_1 - gamma_u2 ||u~||_2^2."""
    M = np.zeros((dims.N_p, dims.N_p))
    M[dims.sl_g_pm, dims.idx_one] = 0.5
    M[dims.sl_u_pm, dims.sl_u_pm] = -0.5 * gamma_u2 * np.eye(2 * dims.n_u)
    M[dims.sl_u, dims.sl_u] = -0.5 * gamma_u2 * np.eye(dims.n_u)
    M[dims.sl_u_pm, dims.idx_one] += -0.5 * gamma_u1
    M[dims.idx_one, dims.idx_one] = -gamma
    return _mirror_lower(M)


def certificate_matrix(
    dims: Dims,
    mults: MultiplierSet,
    pairset: InputPairSet,
    gamma: float,
    gamma_u1: float,
    gamma_u2: float,
    Y_z: np.ndarray,
    Y_u: np.ndarray,
    Y_gz: np.ndarray,
    Y_gu: np.ndarray,
) -> np.ndarray:
    """Sum of the four certificate matrices in their convexified form.

    Negative semidefiniteness of this matrix is the synthesis feasibility
    condition; with Y = T*W it reduces to the analysis condition.
    """
    return (
        build_omega_z_check(dims, mults.T_z, Y_z, Y_u)
        + build_omega_g_check(dims, mults.T_g, Y_gz, Y_gu)
        + build_omega_u(dims, mults.T_u1, mults.T_u2, pairset)
        + build_omega_gamma(dims, gamma, gamma_u1, gamma_u2)
    )


def dump_matrix_csv(M: np.ndarray, path: str) -> None:
    """Debug dump: row-major CSV with 17 significant digits per entry."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in M:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")
