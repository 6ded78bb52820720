"""Lowest eigenpairs of matrix-free real-symmetric operators.

The iterative path is a thick-restart block Krylov method: Rayleigh-Ritz over
an orthonormal subspace that grows by explicit residual directions of the
unconverged Ritz pairs, with full (two-pass) reorthogonalization of every new
direction; when the subspace hits its cap it is compressed back to the
leading Ritz vectors and the projected operator is rotated along.  No
preconditioning, no shift-invert.

Runs are deterministic: start vectors come from ``numpy.random.default_rng``
(PCG64) seeded by the request, reductions happen in fixed order, and returned
eigenvector signs are fixed by making the largest-magnitude component
positive.  Bit-identical results across runs require an equal BLAS thread
count.

``dense_oracle`` is the independent verification route: it takes an explicit
symmetric matrix and returns the full spectrum via LAPACK.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .grid import Grid, ScalarField


class EigenSolveError(RuntimeError):
    """Iterative solve failed to reach the requested residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


@dataclass(frozen=True)
class EigenRequest:
    """What to solve for and how hard to try.

    ``guard`` extra pairs are carried internally (never returned) so the last
    wanted pairs converge cleanly through near-degeneracies; ``block`` is the
    number of residual directions appended per cycle; ``max_subspace`` caps
    the subspace dimension before a thick restart (this bounds solver memory
    at two n-by-max_subspace arrays).  ``None`` picks defaults scaled to k.

    ``projector``, if given, is an idempotent linear map applied to start
    vectors and to every expansion direction; when it projects onto an
    invariant subspace of the operator (a symmetry sector), the solve is
    confined to that sector and returns its lowest pairs.
    """

    k: int
    tol: float = 1e-8
    max_iter: int = 4000
    seed: int = 7
    guard: int | None = None
    block: int | None = None
    max_subspace: int | None = None
    projector: object | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class EigenPair:
    """One converged eigenpair; ``vector`` is quadrature-normalized when the
    solver was given a grid, 2-norm-normalized otherwise."""

    value: float
    vector: ScalarField | np.ndarray
    residual: float


def _fix_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def _orthonormalize_against(V, m, block, drop_tol=1e-10):
    """Two-pass Gram-Schmidt of ``block`` columns against V[:, :m] and among
    themselves; returns only the columns that survive with real content."""
    nrm0 = np.linalg.norm(block, axis=0)
    B = block[:, nrm0 > 0] / nrm0[nrm0 > 0]
    if B.size and m:
        # batched projection against the fixed basis, two passes
        Vm = V[:, :m]
        for _ in range(2):
            B = B - Vm @ (Vm.T @ B)
    accepted = []
    for j in range(B.shape[1]):
        w = B[:, j]
        for _ in range(2):
            for u in accepted:
                w = w - u * (u @ w)
        nrm = np.linalg.norm(w)
        if nrm > drop_tol:
            w = w / nrm
            if nrm < 1e-4 and m:
                # heavily reduced column: renormalization amplified whatever
                # basis components the first passes left behind, clean again
                w = w - V[:, :m] @ (V[:, :m].T @ w)
                for u in accepted:
                    w = w - u * (u @ w)
                w = w / np.linalg.norm(w)
            accepted.append(w)
    if not accepted:
        return np.empty((V.shape[0], 0))
    return np.stack(accepted, axis=1)


def _as_apply(op, dim_info):
    """Normalize (operator, dim info) to (apply_flat, dim, grid-or-None)."""
    grid = dim_info if isinstance(dim_info, Grid) else None
    if hasattr(op, "apply_flat"):
        apply_flat = op.apply_flat
        grid = grid or getattr(op, "grid", None)
    elif callable(op):
        apply_flat = op
    else:
        raise TypeError("operator must be callable or expose apply_flat()")
    if grid is not None:
        dim = grid.npoints
    elif isinstance(dim_info, (int, np.integer)):
        dim = int(dim_info)
    else:
        raise TypeError("dim_info must be a Grid or an integer dimension")
    return apply_flat, dim, grid


def lowest_eigenpairs(op, dim_info, req: EigenRequest) -> list[EigenPair]:
    """k lowest eigenpairs of a real-symmetric operator, ascending.

    Parameters
    ----------
    op : callable or operator object
        Either ``apply(vec) -> vec`` on flat float64 vectors or an object
        with ``apply_flat`` (and optionally ``grid``).
    dim_info : Grid or int
        Geometry of the vectors.  With a Grid, returned vectors are
        ScalarFields normalized under the grid quadrature.
    req : EigenRequest

    Raises
    ------
    EigenSolveError
        If any requested pair misses ``req.tol`` within ``req.max_iter``
        subspace expansions; the best residuals are attached.
    """
    apply_flat, n, grid = _as_apply(op, dim_info)
    k = req.k
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the dimension {n}")

    guard = req.guard if req.guard is not None else min(10, k)
    nv = min(k + guard, n - 1)
    b = req.block if req.block is not None else max(2, min(8, nv))
    m_max = req.max_subspace if req.max_subspace is not None else (2 * nv + 10)
    m_max = max(min(m_max, n), nv + b)
    l_keep = min(nv + max(b, min(nv, 20)), m_max - b)

    project = req.projector

    def _sector(block):
        if project is None or block.shape[1] == 0:
            return block
        return np.stack([project(block[:, j]) for j in range(block.shape[1])], axis=1)

    rng = np.random.default_rng(req.seed)
    V = np.zeros((n, m_max))
    W = np.zeros((n, m_max))  # W = H V
    S_buf = np.zeros((m_max, m_max))  # projected operator V^T H V
    start = _orthonormalize_against(V, 0, _sector(rng.standard_normal((n, nv))))
    m = start.shape[1]
    if m < nv:
        # the projector's sector is smaller than the tracked set
        if m < k:
            raise ValueError(f"symmetry sector supports only {m} vectors < k={k}")
        nv = m
    V[:, :m] = start
    for j in range(m):
        W[:, j] = apply_flat(V[:, j])
    S0 = V[:, :m].T @ W[:, :m]
    S_buf[:m, :m] = 0.5 * (S0 + S0.T)

    known_res = np.full(nv, np.inf)  # last explicitly measured residuals
    theta = np.zeros(nv)
    C = np.eye(m)[:, :nv]
    done = False

    for _cycle in range(req.max_iter):
        evals, evecs = scipy.linalg.eigh(S_buf[:m, :m])
        theta = evals[:nv]
        C = evecs[:, :nv]

        cand = [i for i in range(nv) if known_res[i] > req.tol][:b]
        if not cand:
            # every tracked pair was certified at some earlier subspace;
            # re-certify the wanted ones against the current one
            Xw = V[:, :m] @ C[:, :k]
            Rw = W[:, :m] @ C[:, :k] - Xw * theta[:k]
            known_res[:k] = np.linalg.norm(Rw, axis=0)
            if np.all(known_res[:k] <= req.tol):
                done = True
                break
            continue

        Xc = V[:, :m] @ C[:, cand]
        Rc = W[:, :m] @ C[:, cand] - Xc * theta[cand]
        rn = np.linalg.norm(Rc, axis=0)
        for j, i in enumerate(cand):
            known_res[i] = rn[j]

        if all(known_res[i] <= req.tol for i in range(k)):
            # candidates just passed; take a fresh certificate for all k
            Xw = V[:, :m] @ C[:, :k]
            Rw = W[:, :m] @ C[:, :k] - Xw * theta[:k]
            known_res[:k] = np.linalg.norm(Rw, axis=0)
            if np.all(known_res[:k] <= req.tol):
                done = True
                break

        expand = Rc[:, rn > req.tol]
        if expand.shape[1] == 0:
            continue

        if m + expand.shape[1] > m_max:
            # thick restart: compress to the leading l_keep Ritz vectors
            keep = evecs[:, :l_keep]
            V[:, :l_keep] = V[:, :m] @ keep
            W[:, :l_keep] = W[:, :m] @ keep
            S_buf[:l_keep, :l_keep] = 0.0
            S_buf[:l_keep, :l_keep][np.diag_indices(l_keep)] = evals[:l_keep]
            m = l_keep

        new = _orthonormalize_against(V, m, _sector(expand))
        if new.shape[1] == 0:
            # residuals numerically inside the subspace; inject a fresh
            # random direction to keep making progress
            new = _orthonormalize_against(V, m, _sector(rng.standard_normal((n, 1))))
            if new.shape[1] == 0:
                break
        nb = new.shape[1]
        Wnew = np.empty((n, nb))
        for j in range(nb):
            Wnew[:, j] = apply_flat(new[:, j])
        S_vw = V[:, :m].T @ Wnew
        S_nw = new.T @ Wnew
        V[:, m:m + nb] = new
        W[:, m:m + nb] = Wnew
        S_buf[:m, m:m + nb] = S_vw
        S_buf[m:m + nb, :m] = S_vw.T
        S_buf[m:m + nb, m:m + nb] = 0.5 * (S_nw + S_nw.T)
        m += nb

    if not done:
        raise EigenSolveError(
            f"no convergence after {req.max_iter} cycles; "
            f"worst wanted residuals {np.sort(known_res[:k])[-3:]}",
            residuals=known_res[:k].copy(),
        )

    X = V[:, :m] @ C[:, :k]
    R = W[:, :m] @ C[:, :k] - X * theta[:k]
    pairs = []
    for i in range(k):
        v = _fix_sign(X[:, i])
        v = v / np.linalg.norm(v)
        res = float(np.linalg.norm(R[:, i]))
        if grid is not None:
            vec = ScalarField(grid, v / np.sqrt(grid.cell_volume()))
        else:
            vec = v
        pairs.append(EigenPair(value=float(theta[i]), vector=vec, residual=res))
    return pairs


DENSE_ORACLE_CAP = 20_000


def dense_oracle(matrix: np.ndarray, cap: int = DENSE_ORACLE_CAP) -> list[EigenPair]:
    """Full spectrum of an explicit symmetric matrix by direct diagonalization.

    The verification route for everything the iterative solver produces;
    refuses dimensions above ``cap``.
    """
    matrix = np.asarray(matrix)
    n = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape[1] != n:
        raise ValueError("dense_oracle needs a square matrix")
    if n > cap:
        raise ValueError(f"dimension {n} exceeds the dense-oracle cap {cap}")
    if not np.allclose(matrix, matrix.T, atol=1e-12 * max(1.0, float(np.abs(matrix).max()))):
        raise ValueError("matrix is not symmetric")
    evals, evecs = scipy.linalg.eigh(matrix)
    pairs = []
    for i in range(n):
        v = _fix_sign(evecs[:, i])
        res = float(np.linalg.norm(matrix @ v - evals[i] * v))
        pairs.append(EigenPair(value=float(evals[i]), vector=v, residual=res))
    return pairs


def materialize(op, dim: int) -> np.ndarray:
    """Explicit matrix of a matrix-free operator, column by column.

    Only for tests and oracle-sized problems.
    """
    apply_flat = op.apply_flat if hasattr(op, "apply_flat") else op
    cols = []
    e = np.zeros(dim)
    for j in range(dim):
        e[j] = 1.0
        cols.append(apply_flat(e.copy()))
        e[j] = 0.0
    return np.stack(cols, axis=1)
