"""Pointwise algebra of the Euler differential inclusion.

A state is a triple ``z = (v, u, q)`` with ``v`` the velocity, ``u`` a symmetric
trace-free n x n matrix and ``q = p + |v|^2 / n``. The linear system
``d_t v + div u + grad q = 0, div v = 0`` becomes ``div_y U = 0`` for the
bordered (n+1) x (n+1) matrix::

    U = [[u + q I, v],
         [v^T,     0]]

Matrices are plain ``numpy`` arrays; the helpers below validate the structural
invariants where it matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-12


class StateError(ValueError):
    """Raised when an input violates a structural invariant."""


@dataclass(frozen=True)
class StateTriple:
    v: np.ndarray
    u: np.ndarray
    q: float

    def __post_init__(self):
        v = np.asarray(self.v, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float)
        n = v.shape[0]
        if n < 2:
            raise StateError("dimension n must be at least 2")
        if u.shape != (n, n):
            raise StateError(f"u must be {n}x{n}, got {u.shape}")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "q", float(self.q))

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @classmethod
    def zero(cls, n: int) -> "StateTriple":
        return cls(np.zeros(n), np.zeros((n, n)), 0.0)

    def check(self, tol: float = SYM_TOL) -> None:
        scale = max(1.0, float(np.abs(self.u).max(initial=0.0)))
        if np.abs(self.u - self.u.T).max() > tol * scale:
            raise StateError("u is not symmetric")
        if abs(np.trace(self.u)) > tol * scale * self.n:
            raise StateError("u is not trace-free")

    def vector(self) -> np.ndarray:
        """Flat ``(v, u, q)`` vector; Euclidean norm on it is the state norm."""
        return np.concatenate([self.v, self.u.reshape(-1), [self.q]])

    def __add__(self, other: "StateTriple") -> "StateTriple":
        return StateTriple(self.v + other.v, self.u + other.u, self.q + other.q)

    def __sub__(self, other: "StateTriple") -> "StateTriple":
        return StateTriple(self.v - other.v, self.u - other.u, self.q - other.q)

    def __neg__(self) -> "StateTriple":
        return StateTriple(-self.v, -self.u, -self.q)

    def scale(self, s: float) -> "StateTriple":
        return StateTriple(s * self.v, s * self.u, s * self.q)


def check_m(U: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    """Validate membership in the space of symmetric matrices with zero corner."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape[0] < 3:
        raise StateError(f"expected a square (n+1)x(n+1) matrix, got {U.shape}")
    scale = max(1.0, float(np.abs(U).max()))
    if np.abs(U - U.T).max() > tol * scale:
        raise StateError("matrix is not symmetric")
    if abs(U[-1, -1]) > tol * scale:
        raise StateError("corner entry is not zero")
    return U


def check_galilean(A: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    e = np.zeros(m)
    e[-1] = 1.0
    if np.abs(A @ e - e).max() > tol:
        raise StateError("Galilean matrix must fix the last basis vector")
    if abs(np.linalg.det(A)) <= tol:
        raise StateError("Galilean matrix must be invertible")
    return A


def to_matrix(z: StateTriple) -> np.ndarray:
    z.check()
    n = z.n
    U = np.zeros((n + 1, n + 1))
    U[:n, :n] = z.u + z.q * np.eye(n)
    U[:n, n] = z.v
    U[n, :n] = z.v
    return U


def from_matrix(U: np.ndarray) -> StateTriple:
    U = check_m(U)
    n = U.shape[0] - 1
    block = U[:n, :n]
    q = math.fsum(np.diag(block)) / n
    u = block - q * np.eye(n)
    return StateTriple(U[:n, n].copy(), u, q)


def euler_embed(v, p: float) -> StateTriple:
    v = np.asarray(v, dtype=float).reshape(-1)
    n = v.shape[0]
    vv = float(v @ v)
    u = np.outer(v, v) - vv / n * np.eye(n)
    return StateTriple(v, u, p + vv / n)


def euler_extract(z: StateTriple) -> tuple[np.ndarray, float]:
    return z.v.copy(), z.q - float(z.v @ z.v) / z.n


def nc_mismatch(z: StateTriple) -> np.ndarray:
    """``v (x) v - |v|^2 I / n - u``; zero exactly when the Euler constraint holds."""
    n = z.n
    return np.outer(z.v, z.v) - float(z.v @ z.v) / n * np.eye(n) - z.u


def in_wave_cone(z: StateTriple, tol: float = 1e-10) -> bool:
    if tol <= 0:
        raise ValueError("tol must be positive")
    U = to_matrix(z)
    return matrix_in_wave_cone(U, tol)


def matrix_in_wave_cone(U: np.ndarray, tol: float = 1e-10) -> bool:
    det = np.linalg.det(U)
    if det == 0.0:
        return True
    norm = np.linalg.norm(U)
    return abs(det) <= tol * norm ** U.shape[0]


def normalized_det(U: np.ndarray) -> float:
    """``|det U| / |U|_F^(n+1)``, the scale-free cone defect (0 for U = 0)."""
    norm = np.linalg.norm(U)
    if norm == 0.0:
        return 0.0
    return abs(np.linalg.det(U)) / norm ** U.shape[0]


def orth_complement(v: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as columns) of the complement of ``v``."""
    v = np.asarray(v, dtype=float).reshape(1, -1)
    _, _, vt = np.linalg.svd(v)
    return vt[1:].T


def q_for_cone(v, u) -> float:
    """Return q with ``(v, u, q)`` in the wave cone.

    The bordered determinant vanishes iff ``-q`` is an eigenvalue of the
    quadratic form of ``u`` restricted to the complement of ``v``; we use the
    smallest eigenvalue.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float)
    if not np.any(v):
        raise StateError("q_for_cone needs a nonzero velocity")
    Q = orth_complement(v)
    restricted = Q.T @ u @ Q
    eig = np.linalg.eigvalsh(0.5 * (restricted + restricted.T))
    return -float(eig[0]) + 0.0  # no negative zero


def galilean_matrix(f) -> np.ndarray:
    """Invertible A with ``A e_1 = f`` and ``A e_{n+1} = e_{n+1}``.

    Middle columns are the Gram-Schmidt completion of ``span{f, e_{n+1}}``
    by standard basis vectors taken in order.
    """
    f = np.asarray(f, dtype=float).reshape(-1)
    m = f.shape[0]
    if m < 3:
        raise StateError("need n >= 2")
    fnorm = np.linalg.norm(f)
    if fnorm == 0.0:
        raise StateError("f must be nonzero")
    if np.linalg.norm(f[:-1]) <= 1e-12 * fnorm:
        raise StateError("f is parallel to e_{n+1}")
    basis = [f / fnorm]
    last = np.zeros(m)
    last[-1] = 1.0
    g = last - (last @ basis[0]) * basis[0]
    basis.append(g / np.linalg.norm(g))
    middle = []
    for i in range(m):
        if len(middle) == m - 2:
            break
        cand = np.zeros(m)
        cand[i] = 1.0
        for b in basis + middle:
            cand = cand - (cand @ b) * b
        nrm = np.linalg.norm(cand)
        if nrm > 1e-8:
            middle.append(cand / nrm)
    A = np.column_stack([f] + middle + [last])
    return check_galilean(A)


def conjugate_matrix(A: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``A^t U A``; maps the zero-corner space to itself for Galilean A."""
    A = check_galilean(A)
    return A.T @ U @ A


def split_fields(U: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched ``from_matrix`` without validation: ``(v, u, q)`` for a stack (P, n+1, n+1)."""
    U = np.asarray(U, dtype=float)
    n = U.shape[-1] - 1
    block = U[..., :n, :n]
    q = np.trace(block, axis1=-2, axis2=-1) / n
    u = block - q[..., None, None] * np.eye(n)
    return U[..., :n, n].copy(), u, q
