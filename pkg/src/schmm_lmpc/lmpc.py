"""Lyapunov-certified state-feedback synthesis and the associated cost/horizon tools.

The gain comes from the discrete algebraic Riccati equation on the error
coordinates (A_hat, B_hat) = (A_e A_c A_e^-1, A_e B_c); the Lyapunov decrease,
Schur stability and the two block LMIs are then checked numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CertificationError, DomainError, SynthesisError

RICCATI_TOL = 1e-10
DEFAULT_EPS = 1e-6
DEFAULT_ALPHA = 1e-3
LMI_TOL = 1e-10


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _check_pd(name: str, a: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"{name} must be square, got {a.shape}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise DomainError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(_sym(a)).min() <= 0:
        raise DomainError(f"{name} must be positive definite")
    return a


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Stage weights P (n x n, error) and Q (m x m, input) plus certification settings.

    ``P_v`` selects the Lyapunov weight: ``"riccati"`` (the cost-to-go matrix
    of the synthesized gain), ``"identity"``, or an explicit nN x nN matrix.
    """

    P: np.ndarray
    Q: np.ndarray
    P_v: object = "riccati"
    N_max: int = 20
    v_ratio: float = 0.1
    eps: float = DEFAULT_EPS
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "P", _check_pd("P", self.P))
        object.__setattr__(self, "Q", _check_pd("Q", self.Q))
        if isinstance(self.P_v, str):
            if self.P_v not in ("riccati", "identity"):
                raise DomainError(f"unknown Lyapunov weight {self.P_v!r}")
        else:
            object.__setattr__(self, "P_v", _check_pd("P_v", self.P_v))
        if int(self.N_max) < 1:
            raise DomainError("N_max must be at least 1")
        if not 0.0 < self.v_ratio < 1.0:
            raise DomainError("v_ratio must lie in (0, 1)")
        if not self.eps >= 0.0:
            raise DomainError("eps must be non-negative")
        if not self.alpha > 0.0:
            raise DomainError("alpha must be positive")

    @classmethod
    def identity(cls, n: int, m: int, **kw) -> "CostWeights":
        return cls(P=np.eye(n), Q=np.eye(m), **kw)

    def expand(self, n_agents: int) -> tuple[np.ndarray, np.ndarray]:
        """Block-diagonal (P_J, Q_J) for the stacked N-agent system."""
        eye = np.eye(n_agents)
        return np.kron(eye, self.P), np.kron(eye, self.Q)


def _system(system) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(system, "A_hat"):
        return system.A_hat, system.B_hat
    A, B = system
    return np.atleast_2d(np.asarray(A, dtype=float)), np.atleast_2d(np.asarray(B, dtype=float))


def riccati_residual(A, B, Qx, Ru, X) -> float:
    BX = B.T @ X
    rhs = A.T @ X @ A - A.T @ X @ B @ np.linalg.solve(Ru + BX @ B, BX @ A) + Qx
    return float(np.abs(rhs - X).max() / max(1.0, np.abs(X).max()))


def solve_riccati(A, B, Qx, Ru, tol: float = RICCATI_TOL, max_iter: int = 200,
                  max_polish: int = 10000) -> tuple[np.ndarray, int, list[float]]:
    """Stabilizing solution of X = A'XA - A'XB(R + B'XB)^-1 B'XA + Q.

    Structure-preserving doubling (quadratic convergence), finished with plain
    Riccati fixed-point sweeps if the residual is still above ``tol``.
    Returns ``(X, iterations, trace)`` where ``trace`` holds per-iteration
    relative increments.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Qx = _sym(np.atleast_2d(np.asarray(Qx, dtype=float)))
    Ru = _sym(np.atleast_2d(np.asarray(Ru, dtype=float)))
    n = A.shape[0]
    Ak, Gk, Hk = A.copy(), B @ np.linalg.solve(Ru, B.T), Qx.copy()
    trace: list[float] = []
    iters = 0
    for iters in range(1, max_iter + 1):
        W = np.eye(n) + Gk @ Hk
        try:
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, Gk)
        except np.linalg.LinAlgError:
            raise SynthesisError("singular doubling step", trace) from None
        with np.errstate(over="ignore", invalid="ignore"):
            H_next = _sym(Hk + Ak.T @ Hk @ WA)
            Gk = _sym(Gk + Ak @ WG @ Ak.T)
            Ak = Ak @ WA
        if not np.all(np.isfinite(H_next)):
            raise SynthesisError(f"Riccati iteration diverged at step {iters}", trace)
        delta = float(np.abs(H_next - Hk).max() / max(1.0, np.abs(H_next).max()))
        trace.append(delta)
        Hk = H_next
        if delta <= tol:
            break
    else:
        raise SynthesisError(f"Riccati doubling did not converge in {max_iter} steps", trace)
    X = Hk
    res = riccati_residual(A, B, Qx, Ru, X)
    polish = 0
    while res > tol:
        if polish >= max_polish:
            raise SynthesisError(f"Riccati residual {res:.3g} above {tol:g}", trace)
        BX = B.T @ X
        X = _sym(A.T @ X @ A - A.T @ X @ B @ np.linalg.solve(Ru + BX @ B, BX @ A) + Qx)
        polish += 1
        res = riccati_residual(A, B, Qx, Ru, X)
        trace.append(res)
    return X, iters + polish, trace


def lqr_gain(A, B, Ru, X) -> np.ndarray:
    return -np.linalg.solve(Ru + B.T @ X @ B, B.T @ X @ A)


@dataclass(frozen=True, eq=False)
class GainSolution:
    K: np.ndarray
    Omega: np.ndarray
    Pi_mat: np.ndarray
    P_v: np.ndarray
    P_riccati: np.ndarray
    alpha: float
    spectral_radius: float
    dv_margin: float
    lmi2_margin: float
    reconstruction_error: float
    riccati_iterations: int
    riccati_residual: float
    eps: float
    closed_loop: np.ndarray = field(repr=False)

    def lyapunov(self, E) -> float:
        E = np.asarray(E, dtype=float)
        return float(E @ self.P_v @ E)

    def report(self, agent: int | None = None) -> str:
        head = f"agent {agent}" if agent is not None else "gain"
        return "\n".join([
            f"[{head}]",
            f"spectral_radius = {self.spectral_radius:.12g}",
            f"dv_margin = {self.dv_margin:.12g}",
            f"lmi2_margin = {self.lmi2_margin:.12g}",
            f"alpha = {self.alpha:.12g}",
            f"eps = {self.eps:.12g}",
            f"riccati_iterations = {self.riccati_iterations}",
            f"riccati_residual = {self.riccati_residual:.3e}",
            f"reconstruction_error = {self.reconstruction_error:.3e}",
        ])


def synthesize_gain(compact, weights: CostWeights) -> GainSolution:
    """Riccati gain on the compact error system, then numerical certification.

    Raises :class:`SynthesisError` if the Riccati iteration fails and
    :class:`CertificationError` if Schur stability or the Lyapunov decrease
    does not hold.
    """
    A, B = _system(compact)
    nN, mN = A.shape[0], B.shape[1]
    n, m = weights.P.shape[0], weights.Q.shape[0]
    if nN % n or mN % m or nN // n != mN // m:
        raise DomainError(f"weights ({n}, {m}) do not tile the compact system ({nN}, {mN})")
    P_J, Q_J = weights.expand(nN // n)
    X, iters, _ = solve_riccati(A, B, P_J, Q_J)
    K = lqr_gain(A, B, Q_J, X)
    Acl = A + B @ K
    rho = float(np.abs(np.linalg.eigvals(Acl)).max()) if nN else 0.0
    if not rho < 1.0:
        raise CertificationError(f"closed loop is not Schur stable (spectral radius {rho:.6g})")
    if isinstance(weights.P_v, str):
        P_v = X.copy() if weights.P_v == "riccati" else np.eye(nN)
    else:
        P_v = weights.P_v
        if P_v.shape != (nN, nN):
            raise DomainError(f"P_v must be {nN}x{nN}, got {P_v.shape}")
    dv = _sym(Acl.T @ P_v @ Acl - P_v) + weights.eps * np.eye(nN)
    dv_margin = float(np.linalg.eigvalsh(dv).max())
    if not dv_margin < 0:
        raise CertificationError(
            f"Lyapunov decrease fails: max eigenvalue of Acl' P_v Acl - P_v + eps I is {dv_margin:.6g}")
    Omega = _sym(np.linalg.inv(P_v))
    Pi_mat = K @ Omega
    recon = float(np.linalg.norm(K - np.linalg.solve(Omega, Pi_mat.T).T))  # Omega is symmetric
    _, lmi2 = check_lmi_2((A, B), K, Omega)
    for a in (K, Omega, Pi_mat, P_v, X, Acl):
        a.setflags(write=False)
    return GainSolution(K=K, Omega=Omega, Pi_mat=Pi_mat, P_v=P_v, P_riccati=X, alpha=weights.alpha,
                        spectral_radius=rho, dv_margin=dv_margin, lmi2_margin=lmi2,
                        reconstruction_error=recon, riccati_iterations=iters,
                        riccati_residual=riccati_residual(A, B, P_J, Q_J, X), eps=weights.eps,
                        closed_loop=Acl)


def check_lmi_1(E, P_v, alpha: float) -> tuple[bool, float]:
    """Feasibility of [[1, E'], [E, alpha P_v^-1]] >= 0, i.e. E' P_v E <= alpha."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    E = np.atleast_1d(np.asarray(E, dtype=float))
    P_v = np.atleast_2d(np.asarray(P_v, dtype=float))
    M = np.block([[np.ones((1, 1)), E[None, :]],
                  [E[:, None], alpha * np.linalg.inv(P_v)]])
    margin = float(np.linalg.eigvalsh(_sym(M)).min())
    return margin >= -LMI_TOL, margin


def min_alpha(E, P_v) -> float:
    E = np.atleast_1d(np.asarray(E, dtype=float))
    return float(E @ np.atleast_2d(P_v) @ E)


def check_lmi_2(system, K, Omega) -> tuple[bool, float]:
    """Lyapunov decrease with unit strictness, in P_v = Omega^-1 coordinates.

    Margin is the largest eigenvalue of Acl' Omega^-1 Acl - Omega^-1 + I.
    """
    A, B = _system(system)
    Acl = A + B @ np.atleast_2d(K)
    Pv = np.linalg.inv(np.atleast_2d(np.asarray(Omega, dtype=float)))
    M = _sym(Acl.T @ Pv @ Acl - Pv + np.eye(A.shape[0]))
    margin = float(np.linalg.eigvalsh(M).max())
    return margin < 0, margin


def evaluate_cost(E_traj, U_traj, P_J, Q_J) -> float:
    """Sum over the horizon of E' P_J E + U' Q_J U."""
    E = np.atleast_2d(np.asarray(E_traj, dtype=float))
    U = np.atleast_2d(np.asarray(U_traj, dtype=float))
    if E.size == 0:
        return 0.0
    if E.shape[0] != U.shape[0]:
        raise DomainError("error and input trajectories must have the same length")
    return float(((E @ P_J) * E).sum() + ((U @ Q_J) * U).sum())


def adaptive_horizon(v0: float, v_pred: Sequence[float], N_max: int = 20, v_ratio: float = 0.1) -> int:
    """Smallest p <= N_max with predicted V(E(k+p)) <= v_ratio V(E(k)); N_max otherwise.

    ``v_pred[p - 1]`` is the prediction p steps ahead.
    """
    for p, v in enumerate(v_pred[:N_max], start=1):
        if v <= v_ratio * v0:
            return p
    return int(N_max)


def rollout(gain: GainSolution, E0, steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop error and input sequences E_p, U_p = K E_p for p = 0..steps-1."""
    E = np.empty((steps, gain.closed_loop.shape[0]))
    e = np.asarray(E0, dtype=float)
    for p in range(steps):
        E[p] = e
        e = gain.closed_loop @ e
    return E, E @ gain.K.T


def plan(gain: GainSolution, weights: CostWeights, E0) -> dict:
    """Horizon, predicted trajectories and cost for one step of the controller."""
    E_full, U_full = rollout(gain, E0, weights.N_max + 1)
    v = ((E_full @ gain.P_v) * E_full).sum(axis=1)
    N_alpha = adaptive_horizon(float(v[0]), v[1:].tolist(), weights.N_max, weights.v_ratio)
    P_J, Q_J = weights.expand(gain.K.shape[1] // weights.P.shape[0])
    J = evaluate_cost(E_full[:N_alpha], U_full[:N_alpha], P_J, Q_J)
    return {"N_alpha": N_alpha, "E": E_full[:N_alpha], "U": U_full[:N_alpha], "J": J,
            "V": float(v[0]), "alpha": min_alpha(E0, gain.P_v)}


def horizon_for_decay(rho: float, v_ratio: float, N_max: int) -> int:
    """Horizon for a V sequence decaying geometrically by ``rho`` per step."""
    if rho <= 0:
        return 1
    return min(int(N_max), max(1, math.ceil(math.log(v_ratio) / math.log(rho))))
