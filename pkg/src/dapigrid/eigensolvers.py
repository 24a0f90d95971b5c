"""Dense eigensolvers implemented in-repo.

Symmetric matrices go through cyclic Jacobi rotations; general real
matrices through balancing, Householder reduction to Hessenberg form and
the implicit double-shift QR iteration. Matrix sizes in this package stay
tiny (a few dozen at most), so the classic textbook algorithms are fast
enough and keep the call stack fully inspectable.

Eigenvector extraction is only needed to certify residuals; it uses
inverse iteration on top of stock linear solves.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import NumericError, ParameterError

_EPS = float(np.finfo(float).eps)


def symmetric_eigh(A, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.

    Cyclic-by-row Jacobi. Raises NumericError with the sweep count if the
    off-diagonal mass fails to vanish, which for symmetric input does not
    happen in practice.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ParameterError("matrix must be square")
    scale = np.linalg.norm(A)
    if scale > 0 and np.linalg.norm(A - A.T) > 1e-12 * scale:
        raise ParameterError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    if n == 1:
        return A.ravel().copy(), V
    stop = 1e-15 * max(scale, 1e-300)
    for sweep in range(1, max_sweeps + 1):
        off = math.sqrt(np.sum(np.tril(A, -1) ** 2) * 2.0)
        if off <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                # classic stable rotation angle
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise NumericError("Jacobi sweeps did not reduce the off-diagonal mass",
                           iterations=max_sweeps)
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def symmetric_eigenvalues(A, **kw) -> np.ndarray:
    return symmetric_eigh(A, **kw)[0]


def _balance(A: np.ndarray) -> np.ndarray:
    """Diagonal similarity scaling by powers of two to even out row/column norms."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    for _ in range(100):
        done = True
        for i in range(n):
            c = np.sum(np.abs(A[:, i])) - abs(A[i, i])
            r = np.sum(np.abs(A[i, :])) - abs(A[i, i])
            if c == 0.0 or r == 0.0:
                continue
            f = 2.0 ** round(math.log2(math.sqrt(r / c)))
            if f != 1.0 and c * f + r / f < 0.95 * (c + r):
                A[:, i] *= f
                A[i, :] /= f
                done = False
        if done:
            break
    return A


def hessenberg_form(A) -> np.ndarray:
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    H = np.array(A, dtype=float)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k]
        nx = np.linalg.norm(x)
        if nx == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(nx, x[0] if x[0] != 0 else 1.0)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            continue
        v /= nv
        H[k + 1:, k:] -= 2.0 * np.outer(v, v @ H[k + 1:, k:])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H


def _eig_2x2(a: float, b: float, c: float, d: float) -> list[complex]:
    t = 0.5 * (a + d)
    disc = 0.25 * (a - d) ** 2 + b * c
    if disc >= 0.0:
        s = math.sqrt(disc)
        return [complex(t + s), complex(t - s)]
    s = math.sqrt(-disc)
    return [complex(t, s), complex(t, -s)]


def _reflector(col: np.ndarray) -> np.ndarray | None:
    nx = np.linalg.norm(col)
    if nx == 0.0:
        return None
    v = col.copy()
    v[0] += math.copysign(nx, col[0] if col[0] != 0 else 1.0)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return None
    return v / nv


def general_eigenvalues(A, max_iter_factor: int = 60) -> np.ndarray:
    """All eigenvalues of a general real matrix via implicit double-shift QR.

    Returns a complex array in deflation order (callers sort as needed).
    Raises NumericError with the iteration count on non-convergence.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ParameterError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ParameterError("matrix entries must be finite")
    if n == 0:
        return np.zeros(0, complex)
    if n == 1:
        return A.astype(complex).ravel().copy()
    H = hessenberg_form(_balance(A))
    eigs: list[complex] = []
    hi = n - 1
    total = 0
    stuck = 0
    budget = max_iter_factor * n
    while hi >= 0:
        if hi == 0:
            eigs.append(complex(H[0, 0]))
            break
        # locate the start of the trailing unreduced block
        l = hi
        while l > 0:
            s = abs(H[l - 1, l - 1]) + abs(H[l, l])
            if s == 0.0:
                s = np.linalg.norm(H)
            if abs(H[l, l - 1]) <= _EPS * s:
                H[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            eigs.append(complex(H[hi, hi]))
            hi -= 1
            stuck = 0
            continue
        if l == hi - 1:
            eigs.extend(_eig_2x2(H[l, l], H[l, hi], H[hi, l], H[hi, hi]))
            hi -= 2
            stuck = 0
            continue

        total += 1
        stuck += 1
        if total > budget:
            raise NumericError("QR iteration did not converge", iterations=total)
        if stuck % 10 == 0:
            # exceptional shift built from subdiagonal magnitudes
            s = abs(H[hi, hi - 1]) + abs(H[hi - 1, hi - 2])
            sum_ = 2.0 * (H[hi, hi] + 0.75 * s)
            prod = (H[hi, hi] + 0.75 * s) ** 2 + 0.4375 * s * s
        else:
            sum_ = H[hi - 1, hi - 1] + H[hi, hi]
            prod = H[hi - 1, hi - 1] * H[hi, hi] - H[hi - 1, hi] * H[hi, hi - 1]

        # first column of (H - s1)(H - s2) restricted to the block
        x = H[l, l] * H[l, l] + H[l, l + 1] * H[l + 1, l] - sum_ * H[l, l] + prod
        y = H[l + 1, l] * (H[l, l] + H[l + 1, l + 1] - sum_)
        z = H[l + 2, l + 1] * H[l + 1, l]
        for k in range(l, hi - 1):
            v = _reflector(np.array([x, y, z]))
            if v is not None:
                H[k:k + 3, :] -= 2.0 * np.outer(v, v @ H[k:k + 3, :])
                H[:, k:k + 3] -= 2.0 * np.outer(H[:, k:k + 3] @ v, v)
            if k > l:
                # the reflector annihilated the bulge behind it
                H[k + 1, k - 1] = 0.0
                H[k + 2, k - 1] = 0.0
            x = H[k + 1, k]
            y = H[k + 2, k]
            z = H[k + 3, k] if k + 3 <= hi else 0.0
        v = _reflector(np.array([x, y]))
        if v is not None:
            H[hi - 1:hi + 1, :] -= 2.0 * np.outer(v, v @ H[hi - 1:hi + 1, :])
            H[:, hi - 1:hi + 1] -= 2.0 * np.outer(H[:, hi - 1:hi + 1] @ v, v)
        if hi - 2 >= l:
            H[hi, hi - 2] = 0.0
    return np.array(eigs, dtype=complex)


def eigen_residuals(A, eigenvalues, rounds: int = 3) -> np.ndarray:
    """Backward-error check: ||A v - lambda v|| for each supplied eigenvalue.

    Eigenvectors come from shifted inverse iteration; the shift is nudged
    off the exact eigenvalue just enough to keep the solves finite.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = np.linalg.norm(A, 2) if n else 0.0
    if scale == 0.0:
        scale = 1.0
    ident = np.eye(n)
    out = np.empty(len(eigenvalues))
    for idx, lam in enumerate(eigenvalues):
        jitter = 1e-12 * scale
        v = np.full(n, 1.0 / math.sqrt(n), dtype=complex)
        for attempt in range(6):
            try:
                m = A - (lam + jitter * (1.0 + 1.0j)) * ident
                w = v
                for _ in range(rounds):
                    w = np.linalg.solve(m, w)
                    nw = np.linalg.norm(w)
                    if not np.isfinite(nw) or nw == 0.0:
                        raise np.linalg.LinAlgError
                    w = w / nw
                v = w
                break
            except np.linalg.LinAlgError:
                jitter *= 100.0
        out[idx] = np.linalg.norm(A @ v - lam * v)
    return out
