"""Fixed-rank online SVD with column updates and reverts of the oldest columns.

The tracked matrix is ``X ~ U diag(s) V^T`` where rows of ``V`` are ordered
oldest column first. Updates append columns at the bottom of ``V``; reverts
remove them from the top. Updates whose residual is negligible are buffered
and folded in later, which skips the QR/extension work for columns already
in the tracked subspace.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, StateError

__all__ = ["OnlineSVD", "signed_qr", "principal_angles"]


def signed_qr(a):
    """Thin QR with a nonnegative diagonal in ``R``."""
    q, r = np.linalg.qr(a)
    sign = np.where(np.diag(r) < 0, -1.0, 1.0)
    return q * sign, r * sign[:, np.newaxis]


def principal_angles(a, b):
    """Principal angles (radians, ascending) between the column spans of ``a`` and ``b``."""
    qa, _ = np.linalg.qr(a)
    qb, _ = np.linalg.qr(b)
    if qa.shape[1] < qb.shape[1]:
        qa, qb = qb, qa
    proj = qa.T @ qb
    cos = np.linalg.svd(proj, compute_uv=False)
    # arccos alone loses half the digits for small angles
    sin = np.linalg.svd(qb - qa @ proj, compute_uv=False)
    return np.sort(np.arctan2(np.sort(sin), np.sort(cos)[::-1]))


class OnlineSVD:
    """Rank-``r`` SVD tracked over a sliding set of columns.

    Attributes:
        U: ``rows x r`` left singular vectors.
        s: length-``r`` singular values, descending.
        V: ``n x r`` right singular vectors for the ``n`` flushed columns.
        tol: residual energy below which an update is buffered, also the
            trigger for reorthogonalizing the residual basis.
    """

    def __init__(self, U, s, V, tol=None, max_buffer=None):
        self.U = np.asarray(U, dtype=float)
        self.s = np.asarray(s, dtype=float)
        self.V = np.asarray(V, dtype=float)
        self.rank = self.s.shape[0]
        if tol is None:
            tol = 1e-10 * np.sqrt(self.U.shape[0])
        self.tol = float(tol)
        self.max_buffer = self.rank if max_buffer is None else int(max_buffer)
        self._buffer = []
        self.n_reorth = 0

    @classmethod
    def initialize(cls, X, rank, **kwargs) -> "OnlineSVD":
        """Best rank-``rank`` factorization of ``X`` by a batch SVD."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or rank < 1 or rank > min(X.shape):
            raise ConfigError(f"rank {rank} is invalid for a {X.shape} matrix")
        U, s, Vt = np.linalg.svd(X, full_matrices=False)
        return cls(U[:, :rank], s[:rank], Vt[:rank].T.copy(), **kwargs)

    @property
    def q_u(self) -> int:
        """Number of buffered (not yet folded) update columns."""
        return sum(b.shape[1] for b in self._buffer)

    @property
    def n_cols(self) -> int:
        """Columns currently represented, buffered ones included."""
        return self.V.shape[0] + self.q_u

    def reconstruct(self):
        self.flush()
        return (self.U * self.s) @ self.V.T

    def update(self, X):
        """Append the columns of ``X`` (``rows x c``)."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, np.newaxis]
        if X.shape[0] != self.U.shape[0]:
            raise ConfigError(
                f"update has {X.shape[0]} rows, tracked subspace has {self.U.shape[0]}")
        if X.shape[1] == 0:
            return
        L = self.U.T @ X
        H = X - self.U @ L
        Q, R = signed_qr(H)
        if np.linalg.norm(R) < self.tol:
            self._buffer.append(L)
            if self.q_u >= self.max_buffer:
                self.flush()
            return
        if self._buffer:
            Uy = self._fold_buffer()
            L = Uy.T @ L
        if np.max(np.abs(Q.T @ self.U)) > self.tol:
            Q = Q - self.U @ (self.U.T @ Q)
            Q, _ = signed_qr(Q)
            R = Q.T @ H
        # R is kq x c with kq = min(rows, c), so the core is not always square
        r, c, kq = self.rank, X.shape[1], Q.shape[1]
        Y = np.zeros((r + kq, r + c))
        Y[:r, :r] = np.diag(self.s)
        Y[:r, r:] = L
        Y[r:, r:] = R
        Uy, sy, Vyt = np.linalg.svd(Y, full_matrices=False)
        self.U = np.hstack([self.U, Q]) @ Uy[:, :r]
        self.s = sy[:r]
        Vy = Vyt[:r].T
        self.V = np.vstack([self.V @ Vy[:r], Vy[r:]])
        self._check_orthogonality()

    def flush(self):
        """Fold buffered in-subspace updates into the factors."""
        if self._buffer:
            self._fold_buffer()
            self._check_orthogonality()

    def _fold_buffer(self):
        buff = np.hstack(self._buffer)
        self._buffer = []
        r = self.rank
        Y = np.hstack([np.diag(self.s), buff])
        Uy, sy, Vyt = np.linalg.svd(Y, full_matrices=False)
        Vy = Vyt.T
        self.U = self.U @ Uy
        self.s = sy
        self.V = np.vstack([self.V @ Vy[:r], Vy[r:]])
        return Uy

    def revert(self, c):
        """Remove the ``c`` oldest columns."""
        self.flush()
        n = self.V.shape[0]
        if c == 0:
            return
        if c > n:
            raise StateError(f"cannot revert {c} columns, only {n} tracked")
        if n - c < self.rank:
            raise StateError(
                f"reverting {c} of {n} columns would leave fewer than rank {self.rank}")
        r = self.rank
        N = self.V[:c].T
        B = np.zeros((n, c))
        B[np.arange(c), np.arange(c)] = 1.0
        E = B - self.V @ N
        Q, R = signed_qr(E)
        # R^T R = I - N^T N for orthonormal V; a vanishing R means the reverted
        # columns carry whole singular directions and need no extension
        if np.linalg.norm(R) < self.tol:
            Q = np.zeros((n, 0))
            R = np.zeros((0, c))
        SN = self.s[:, np.newaxis] * N
        Y = np.hstack([np.diag(self.s) - SN @ N.T, -SN @ R.T])
        Uy, sy, Vyt = np.linalg.svd(Y, full_matrices=False)
        self.U = self.U @ Uy
        self.s = sy[:r]
        self.V = (np.hstack([self.V, Q]) @ Vyt[:r].T)[c:]
        self._check_orthogonality()

    def _check_orthogonality(self):
        r = self.rank
        eye = np.eye(r)
        du = np.max(np.abs(self.U.T @ self.U - eye))
        dv = np.max(np.abs(self.V.T @ self.V - eye)) if self.V.shape[0] >= r else 0.0
        if max(du, dv) <= 10 * self.tol:
            return
        # U diag(s) V^T = Qu (Ru diag(s) Rv^T) Qv^T; re-diagonalize the small core
        Qu, Ru = signed_qr(self.U)
        if self.V.shape[0] >= r:
            Qv, Rv = signed_qr(self.V)
        else:
            Qv, Rv = self.V, eye
        core = (Ru * self.s) @ Rv.T
        Uc, sc, Vct = np.linalg.svd(core)
        self.U = Qu @ Uc
        self.s = sc
        self.V = Qv @ Vct.T
        self.n_reorth += 1
