"""Reduced-order online DMD with control, tracked by weighted recursive least squares.

The operator ``A_bar = [A B]`` maps reduced snapshots ``x~`` (state block of
size ``p`` stacked over control block of size ``q``) to reduced shifted
snapshots. ``P`` is the running inverse of the weighted Gram matrix of the
reduced snapshots, updated with the Woodbury identity. Reverting columns is
an update with negated weights.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigError, NumericalError, StateError

__all__ = ["OnlineDMD", "ModeSet", "project_reconstruct", "exact_modes"]


@dataclass(frozen=True)
class ModeSet:
    """Eigenvalues, reduced eigenvectors and full-space modes of ``A``."""

    eigenvalues: np.ndarray
    W: np.ndarray
    modes: np.ndarray
    defective: bool = False


def project_reconstruct(U, X):
    """Project ``X`` on the orthonormal columns of ``U`` and reconstruct.

    Returns:
        ``(coords, reconstruction, errors)`` with ``errors`` the squared
        Euclidean reconstruction error of every column.
    """
    X = np.asarray(X, dtype=float)
    coords = U.T @ X
    recon = U @ coords
    return coords, recon, np.sum((X - recon) ** 2, axis=0)


def exact_modes(shifted, V, s, W):
    """Modes ``X' V diag(1/s) W`` from a batch SVD of the snapshot matrix."""
    return shifted @ (V / s) @ W


class OnlineDMD:
    """Weighted RLS estimate of the reduced operator ``[A B]``.

    Args:
        p: reduced state rank.
        q: reduced control rank.
        rho: scale of the diffuse prior, ``P = rho * I`` at start.
        polar: rotate ``P`` by the orthogonal polar factor of the alignment
            matrix instead of ``K P^-1 K^T``.
    """

    def __init__(self, p: int, q: int = 0, rho: float = 1e4, polar: bool = False):
        if p < 1 or q < 0:
            raise ConfigError(f"ranks must satisfy p >= 1, q >= 0 (got p={p}, q={q})")
        if rho <= 0:
            raise ConfigError(f"rho must be positive, got {rho}")
        self.p, self.q, self.rho = p, q, float(rho)
        self.polar = polar
        self.A = np.hstack([np.eye(p), np.zeros((p, q))])
        self.P = rho * np.eye(p + q)
        self.n_seen = 0
        self.alignment_defect = 0.0
        self.mixing = 0.0
        self._modes = None

    @property
    def r(self) -> int:
        return self.p + self.q

    @property
    def A_state(self):
        return self.A[:, : self.p]

    @property
    def B(self):
        return self.A[:, self.p:]

    @classmethod
    def from_batch(cls, X, Y, weights=None, p=None, q=0, rho=1e4, **kwargs):
        """Closed-form equivalent of updating a fresh state with all columns of ``X``."""
        p = Y.shape[0] if p is None else p
        new = cls(p, q, rho, **kwargs)
        X, Y, w = new._check(X, Y, weights)
        XW = X * w
        gram = XW @ X.T + np.eye(new.r) / rho
        cross = Y @ XW.T + new.A / rho
        cf = linalg.cho_factor(0.5 * (gram + gram.T))
        new.P = linalg.cho_solve(cf, np.eye(new.r))
        new.P = 0.5 * (new.P + new.P.T)
        new.A = linalg.cho_solve(cf, cross.T).T
        new.n_seen = X.shape[1]
        return new

    def copy(self) -> "OnlineDMD":
        new = OnlineDMD.__new__(OnlineDMD)
        new.__dict__.update(self.__dict__)
        new.A = self.A.copy()
        new.P = self.P.copy()
        return new

    def _check(self, X, Y, weights):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim == 1:
            X, Y = X[:, np.newaxis], Y[:, np.newaxis]
        if X.shape[0] != self.r or Y.shape[0] != self.p or X.shape[1] != Y.shape[1]:
            raise ConfigError(
                f"expected ({self.r} x c, {self.p} x c) snapshots, got {X.shape}, {Y.shape}")
        c = X.shape[1]
        w = np.ones(c) if weights is None else np.broadcast_to(
            np.asarray(weights, dtype=float), (c,))
        if np.any(w == 0):
            raise ConfigError("zero weights are not allowed")
        return X, Y, w

    def _step(self, X, Y, w):
        PX = self.P @ X
        S = np.diag(1.0 / w) + X.T @ PX
        try:
            # G = Gamma X^T P, with Gamma = (C^-1 + X^T P X)^-1
            G = np.linalg.solve(S, PX.T)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Woodbury system is singular",
                                 condition=np.linalg.cond(S)) from exc
        A = self.A + (Y - self.A @ X) @ G
        P = self.P - PX @ G
        return A, 0.5 * (P + P.T)

    def update(self, X, Y, weights=None):
        """Fold in snapshot pairs ``X`` (``r x c``), ``Y`` (``p x c``)."""
        X, Y, w = self._check(X, Y, weights)
        if X.shape[1] == 0:
            return
        self.A, self.P = self._step(X, Y, w)
        self.n_seen += X.shape[1]
        self._modes = None

    def revert(self, X, Y, weights=None):
        """Remove previously added pairs by updating with negated weights."""
        X, Y, w = self._check(X, Y, weights)
        if X.shape[1] == 0:
            return
        A, P = self._step(X, Y, -w)
        try:
            np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise StateError(
                "precision matrix lost positive definiteness on revert; "
                "the window no longer supports the rank") from exc
        self.A, self.P = A, P
        self.n_seen -= X.shape[1]
        self._modes = None

    def align(self, U_prev, U_new):
        """Rotate ``A`` and ``P`` from the basis ``U_prev`` to ``U_new``.

        Cross blocks of ``K = U_new^T U_prev`` between state and control
        directions are discarded for ``A``; their size is kept in ``mixing``.
        """
        if U_prev.shape[1] != self.r or U_new.shape[1] != self.r:
            raise ConfigError(f"bases must have {self.r} columns")
        p = self.p
        K = U_new.T @ U_prev
        self.alignment_defect = float(np.linalg.norm(K @ K.T - np.eye(self.r)))
        if self.alignment_defect > 0.1:
            # fixed text so the default filter reports it once per call site
            warnings.warn("subspace jump between consecutive bases; "
                          "see alignment_defect", RuntimeWarning, stacklevel=2)
        Kpp, Kqq = K[:p, :p], K[p:, p:]
        self.mixing = float(np.linalg.norm(K[:p, p:]) + np.linalg.norm(K[p:, :p]))
        A = Kpp @ self.A_state @ Kpp.T
        B = Kpp @ self.B @ Kqq.T
        self.A = np.hstack([A, B])

        if self.polar:
            # orthogonal polar factor of K: keeps the Gram spectrum when
            # truncation swaps a direction in or out
            Uk, _, Vkt = np.linalg.svd(K)
            O = Uk @ Vkt
            P = O @ self.P @ O.T
            self.P = 0.5 * (P + P.T)
            self._modes = None
            return
        # (K P^-1 K^T)^-1 through the Cholesky factor of P, no explicit inverse;
        # directions of U_new outside span(U_prev) get the diffuse prior
        L = np.linalg.cholesky(self.P)
        Z = linalg.solve_triangular(L, K.T, lower=True)
        gram = Z.T @ Z + (np.eye(self.r) - K @ K.T) / self.rho
        gram = 0.5 * (gram + gram.T)
        try:
            cf = linalg.cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("aligned Gram matrix is not positive definite",
                                 condition=np.linalg.cond(gram)) from exc
        P = linalg.cho_solve(cf, np.eye(self.r))
        self.P = 0.5 * (P + P.T)
        self._modes = None

    def modes(self, U_state=None) -> ModeSet:
        """Eigen-decomposition of the reduced state operator, sorted by modulus.

        ``U_state`` lifts reduced eigenvectors to modes; identity when omitted.
        """
        if self._modes is not None and U_state is None:
            return self._modes
        A = self.A_state
        lam, W = np.linalg.eig(A)
        order = np.argsort(-np.abs(lam), kind="stable")
        lam, W = lam[order], W[:, order]
        defective = np.linalg.cond(W) > 1e12
        if defective:
            warnings.warn("reduced operator is defective; using Schur vectors",
                          RuntimeWarning, stacklevel=2)
            T, Z = linalg.schur(A.astype(complex), output="complex")
            lam = np.diag(T)
            order = np.argsort(-np.abs(lam), kind="stable")
            lam, W = lam[order], Z[:, order]
        Phi = W if U_state is None else U_state @ W
        out = ModeSet(lam, W, Phi, bool(defective))
        if U_state is None:
            self._modes = out
        return out
