"""Dense matrix helpers and small eigenvalue solvers.

Matrices are float64 numpy arrays. Two eigen-solvers are provided: cyclic
Jacobi for symmetric matrices (the shrinkage-block Jacobians) and
Hessenberg reduction followed by shifted QR for general ones (residual
Jacobians). Both are aimed at the small widths used here, not at speed.
"""

from __future__ import annotations

import numpy as np

MAX_GENERAL_DIM = 256


class EigenConvergenceError(ArithmeticError):
    """The QR iteration ran out of iterations.

    ``eigenvalues`` holds what had deflated so far; ``partial`` is always
    true and exists so callers can report it without type checks.
    """

    def __init__(self, message, eigenvalues):
        super().__init__(message)
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.complex128)
        self.partial = True


def _as_matrix(a, name="a"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    """Matrix product with an explicit dimension check."""
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def _square(a):
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    return a


def _round_robin(n):
    """Pairings for one sweep: ``n - 1`` rounds of disjoint index pairs (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        rounds.append([(players[i], players[n - 1 - i]) for i in range(n // 2)])
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def symmetric_eigenvalues(a, tol: float = 1e-10, max_sweeps: int = 60):
    """Eigenvalues of a symmetric matrix in descending order.

    Cyclic Jacobi: each sweep visits every off-diagonal pair once, in
    round-robin order so that the rotations of one round act on disjoint
    index pairs and can be applied together. Iteration stops once the
    off-diagonal Frobenius norm drops below ``tol`` times the norm of ``a``
    (or ``tol`` itself for matrices of norm below one).
    """
    a = _square(a)
    n = a.shape[0]
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.max(np.abs(a - a.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    if n == 1:
        return a[0].copy()
    m = n + (n % 2)
    work = np.zeros((m, m))
    work[:n, :n] = 0.5 * (a + a.T)
    rounds = [np.array(r).T for r in _round_robin(m)]
    off_mask = ~np.eye(m, dtype=bool)
    for _ in range(max_sweeps):
        if np.linalg.norm(work[off_mask]) < tol * scale:
            break
        for p, q in rounds:
            apq = work[p, q]
            active = apq != 0.0
            if not active.any():
                continue
            with np.errstate(over="ignore"):
                # an infinite theta means a negligible rotation and gives t = 0 below
                theta = np.where(active, (work[q, q] - work[p, p]) / (2.0 * np.where(active, apq, 1.0)), 0.0)
                t = np.where(active, np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0)), 0.0)
            t = np.where(active & (theta == 0.0), 1.0, t)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(m)
            rot[p, p] = c
            rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            work = rot.T @ work @ rot
            work = 0.5 * (work + work.T)
    else:
        raise EigenConvergenceError("Jacobi iteration did not converge", np.diag(work)[:n])
    return np.sort(np.diag(work)[:n])[::-1]


def hessenberg(a):
    """Upper Hessenberg matrix similar to ``a`` via Householder reflections."""
    h = _square(a).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += np.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def _wilkinson_shift(a, b, c, d):
    # eigenvalue of [[a, b], [c, d]] closest to d
    half_tr = 0.5 * (a + d)
    disc = np.sqrt(half_tr * half_tr - (a * d - b * c) + 0j)
    e1, e2 = half_tr + disc, half_tr - disc
    return e1 if abs(e1 - d) <= abs(e2 - d) else e2


def _qr_step(s, mu):
    """One shifted QR step ``S - mu I = QR, S <- RQ + mu I`` on a Hessenberg block, in place."""
    m = s.shape[0]
    idx = np.arange(m)
    s[idx, idx] -= mu
    rots = []
    for k in range(m - 1):
        x, y = s[k, k], s[k + 1, k]
        r = np.hypot(abs(x), abs(y))
        if r == 0.0:
            c, sn = 1.0 + 0j, 0j
        else:
            c, sn = x / r, y / r
        rows = s[k:k + 2, k:].copy()
        s[k, k:] = np.conj(c) * rows[0] + np.conj(sn) * rows[1]
        s[k + 1, k:] = -sn * rows[0] + c * rows[1]
        rots.append((c, sn))
    for k, (c, sn) in enumerate(rots):
        top = min(k + 2, m - 1) + 1
        cols = s[:top, k:k + 2].copy()
        s[:top, k] = cols[:, 0] * c + cols[:, 1] * sn
        s[:top, k + 1] = -cols[:, 0] * np.conj(sn) + cols[:, 1] * np.conj(c)
    s[idx, idx] += mu


def general_eigenvalues(a, tol: float = 1e-10, max_iter: int | None = None):
    """All eigenvalues of a real square matrix as a complex array.

    Householder reduction to Hessenberg form, then QR iteration with
    Wilkinson shifts in complex arithmetic, deflating whenever a
    subdiagonal entry falls below ``tol`` relative to its diagonal
    neighbours. ``max_iter`` (default ``100 * n``) bounds the total number
    of QR steps; exceeding it raises :class:`EigenConvergenceError`.
    """
    a = _square(a)
    n = a.shape[0]
    if n > MAX_GENERAL_DIM:
        raise ValueError(f"dimension {n} exceeds the supported maximum of {MAX_GENERAL_DIM}")
    if not np.isfinite(a).all():
        raise ValueError("matrix has non-finite entries")
    if max_iter is None:
        max_iter = 100 * max(n, 1)
    h = hessenberg(a).astype(np.complex128)
    norm = max(float(np.abs(h).max(initial=0.0)), np.finfo(float).tiny)
    eigs = []
    hi = n - 1
    steps = 0
    stalled = 0
    while hi >= 0:
        lo = hi
        while lo > 0:
            sub = abs(h[lo, lo - 1])
            ref = abs(h[lo, lo]) + abs(h[lo - 1, lo - 1])
            if sub <= tol * (ref if ref > 0.0 else norm):
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            eigs.append(h[hi, hi])
            hi -= 1
            stalled = 0
            continue
        if steps >= max_iter:
            raise EigenConvergenceError(
                f"QR iteration did not converge in {max_iter} steps", eigs)
        stalled += 1
        if stalled % 11 == 0:
            mu = h[hi, hi] + 0.75 * abs(h[hi, hi - 1]) * (1 + 1j)
        else:
            mu = _wilkinson_shift(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
        _qr_step(h[lo:hi + 1, lo:hi + 1], mu)
        steps += 1
    eigs = np.array(eigs[::-1], dtype=np.complex128)
    # a real input has a spectrum closed under conjugation; clean rounding noise
    small = np.abs(eigs.imag) <= tol * max(norm, 1.0)
    eigs[small] = eigs[small].real
    return eigs


def spectral_abscissa(eigs) -> float:
    """Largest real part in a list of eigenvalues."""
    eigs = np.asarray(eigs)
    if eigs.size == 0:
        raise ValueError("spectral abscissa of an empty spectrum")
    return float(np.max(eigs.real))
