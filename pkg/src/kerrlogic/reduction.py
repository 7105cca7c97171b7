"""Quasi-principal-component reduction of cavity models.

Two steady states of the full cavity are jointly diagonalized by Jacobi
sweeps (JADE). The columns of the resulting unitary, ordered by their weight
in both states, span the retained subspace. A plain Fock truncation is kept
as the baseline.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fock import HERMITIAN_TOL, Operator, SpaceDescriptor, read_matrix, write_matrix
from .slh import CavityModel

log = logging.getLogger(__name__)


class ReductionError(ValueError):
    pass


# -- joint diagonalization -------------------------------------------------------

def off(matrix: np.ndarray) -> float:
    """Sum of squared magnitudes of the off-diagonal entries."""
    m = np.abs(np.asarray(matrix)) ** 2
    # summed directly; ||m||^2 - ||diag||^2 cancels catastrophically near convergence
    return float(m.sum(where=~np.eye(m.shape[0], dtype=bool)))


@dataclass
class JadeResult:
    T: np.ndarray
    converged: bool
    sweeps: int
    off_history: list = field(default_factory=list)  # total off(.) before the first sweep and after each
    diagonalized: np.ndarray | None = None  # T* A_k T stacked

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_sweeps"


def _as_array(x) -> np.ndarray:
    if isinstance(x, Operator):
        return x.toarray()
    return np.asarray(x, dtype=complex)


def jade(matrices: Sequence, tol: float = 1e-12, max_sweeps: int = 200) -> JadeResult:
    """Unitary ``T`` making every ``T* A_k T`` as diagonal as possible.

    Complex Jacobi sweeps: each pair rotation is the dominant eigenvector of
    a real symmetric 3x3 matrix accumulated over all inputs, which minimizes
    the pair's off-diagonal energy exactly. Stops when every rotation sine in
    a sweep is below ``tol``.
    """
    mats = [_as_array(m) for m in matrices]
    if len(mats) < 2:
        raise ReductionError("joint diagonalization needs at least two matrices")
    n = mats[0].shape[0]
    for m in mats:
        if m.shape != (n, n):
            raise ReductionError("matrices must share one square shape")
        scale = max(1.0, float(np.abs(m).max()))
        if np.abs(m - m.conj().T).max() > HERMITIAN_TOL * scale:
            raise ReductionError("jade expects Hermitian matrices")
    A = np.array(mats)
    V = np.eye(n, dtype=complex)
    B = np.array([[1, 0, 0], [0, 1, 1], [0, -1j, 1j]])
    history = [sum(off(m) for m in A)]
    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                g = np.array([A[:, p, p] - A[:, q, q], A[:, p, q], A[:, q, p]])
                g = B @ g
                vals, vecs = np.linalg.eigh((g @ g.conj().T).real)
                x, y, z = vecs[:, -1]
                if x < 0:
                    x, y, z = -x, -y, -z
                c = np.sqrt(0.5 + x / 2)
                s = 0.5 * (y - 1j * z) / c
                if abs(s) <= tol:
                    continue
                rotated = True
                G = np.array([[c, -np.conj(s)], [s, c]])
                pair = [p, q]
                V[:, pair] = V[:, pair] @ G
                A[:, pair, :] = np.einsum("ji,kjl->kil", G.conj(), A[:, pair, :])
                A[:, :, pair] = A[:, :, pair] @ G
        history.append(sum(off(m) for m in A))
        if not rotated:
            converged = True
            break
    if not converged:
        log.warning("jade: no convergence after %d sweeps (off %.3g)", sweeps, history[-1])
    return JadeResult(V, converged, sweeps, history, A)


# -- bases ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReductionBasis:
    """Change of basis ``T`` and the retained block of ``d`` columns.

    ``convention`` is ``"last"`` for the joint-diagonalization basis (largest
    weights at the right) and ``"first"`` for plain Fock truncation.
    """

    T: np.ndarray
    d: int
    lam: float | None = None
    diag_weights: np.ndarray | None = None
    convention: str = "last"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        T = np.asarray(self.T, dtype=complex)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ReductionError("T must be square")
        if not 1 <= self.d <= T.shape[0]:
            raise ReductionError(f"retained dimension {self.d} outside [1, {T.shape[0]}]")
        if self.convention not in ("last", "first"):
            raise ReductionError(f"unknown convention {self.convention!r}")
        object.__setattr__(self, "T", T)

    @property
    def N(self) -> int:
        return self.T.shape[0]

    @property
    def columns(self) -> np.ndarray:
        """Isometry ``T P*`` of shape (N, d)."""
        return self.T[:, self.N - self.d:] if self.convention == "last" else self.T[:, :self.d]

    def projector(self) -> np.ndarray:
        P = np.zeros((self.d, self.N))
        if self.convention == "last":
            P[:, self.N - self.d:] = np.eye(self.d)
        else:
            P[:, :self.d] = np.eye(self.d)
        return P

    def truncate(self, d: int) -> "ReductionBasis":
        return ReductionBasis(self.T, d, self.lam, self.diag_weights, self.convention, dict(self.info))


def build_basis(rho_lam, rho_0, d: int, lam: float | None = None, tol: float = 1e-12,
                max_sweeps: int = 200, extra: Sequence = ()) -> ReductionBasis:
    """Joint-diagonalization basis of ``rho_lam`` and ``rho_0`` keeping ``d`` components."""
    r1, r0 = _as_array(rho_lam), _as_array(rho_0)
    N = r1.shape[0]
    if r0.shape != r1.shape:
        raise ReductionError("density matrices differ in size")
    if not 1 <= d < N:
        raise ReductionError(f"retained dimension d={d} must satisfy 1 <= d < N={N}")
    res = jade([r1, r0, *extra], tol=tol, max_sweeps=max_sweeps)
    T = res.T
    sigma = T.conj().T @ (r1 + r0) @ T
    w = np.abs(np.diag(sigma))
    order = np.argsort(w, kind="stable")
    info = {"jade_status": res.status, "jade_sweeps": res.sweeps, "off_history": res.off_history}
    return ReductionBasis(T[:, order], d, lam, w[order], "last", info)


def fock_truncation_basis(N: int, d: int) -> ReductionBasis:
    """Keep the first ``d`` Fock states."""
    if not 1 <= d <= N:
        raise ReductionError(f"retained dimension d={d} must satisfy 1 <= d <= N={N}")
    return ReductionBasis(np.eye(N, dtype=complex), d, None, None, "first")


def full_basis(N: int) -> ReductionBasis:
    return ReductionBasis(np.eye(N, dtype=complex), N, None, None, "last")


def reduce_operator(X, basis: ReductionBasis) -> Operator:
    """``P T* X T P*`` as an operator on the d-dimensional space."""
    M = _as_array(X)
    if M.shape != (basis.N, basis.N):
        raise ReductionError(f"operator side {M.shape[0]} does not match basis side {basis.N}")
    W = basis.columns
    return Operator(SpaceDescriptor((basis.d,)), W.conj().T @ M @ W)


def reduce_state(rho, basis: ReductionBasis, normalize: bool = True) -> np.ndarray:
    r = _as_array(rho)
    W = basis.columns
    if r.ndim == 1:
        out = W.conj().T @ r
        return out / np.linalg.norm(out) if normalize else out
    out = W.conj().T @ r @ W
    return out / np.trace(out).real if normalize else out


def reduced_vacuum(basis: ReductionBasis) -> np.ndarray:
    """Normalized projection of the Fock vacuum onto the retained space."""
    v = np.zeros(basis.N, dtype=complex)
    v[0] = 1.0
    out = basis.columns.conj().T @ v
    nrm = np.linalg.norm(out)
    if nrm < 1e-12:
        raise ReductionError("vacuum is orthogonal to the retained space")
    return out / nrm


def reduced_kerr_cavity(basis: ReductionBasis, kappa: float, detuning: float, chi: float) -> CavityModel:
    """Cavity model with ``a`` and ``H_0`` compressed onto the retained space."""
    from .fock import annihilation, kerr_hamiltonian
    space = SpaceDescriptor((basis.N,))
    a = reduce_operator(annihilation(space), basis)
    h0 = reduce_operator(kerr_hamiltonian(space, 0, detuning, chi), basis)
    # compression keeps H_0 Hermitian up to rounding; restore it exactly
    h0 = Operator(h0.space, 0.5 * (h0.toarray() + h0.toarray().conj().T))
    return CavityModel(a, h0, kappa)


def embed_jade_state(rho_r, basis: ReductionBasis) -> np.ndarray:
    """``T (0 + rho_r) T*`` with the block in the retained positions."""
    r = _as_array(rho_r)
    if r.shape != (basis.d, basis.d):
        raise ReductionError(f"reduced state side {r.shape[0]} != d={basis.d}")
    W = basis.columns
    return W @ r @ W.conj().T


def embed_fock_state(rho_r, d: int, N: int) -> np.ndarray:
    """``rho_r + 0``: the block occupies the first ``d`` Fock levels."""
    r = _as_array(rho_r)
    if r.shape != (d, d):
        raise ReductionError(f"reduced state side {r.shape[0]} != d={d}")
    if d > N:
        raise ReductionError("d exceeds N")
    out = np.zeros((N, N), dtype=complex)
    out[:d, :d] = r
    return out


# -- fidelity ---------------------------------------------------------------------

def _psd_sqrt(rho: np.ndarray, clamp: float = 1e-10) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(rho)
    if vals.min() < -clamp * max(1.0, vals.max()):
        raise ValueError(f"state has eigenvalue {vals.min():.3g} below {-clamp:.1g}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def _check_state(rho: np.ndarray, tol: float):
    tr = np.trace(rho).real
    if abs(tr - 1) > tol:
        raise ValueError(f"state trace {tr:.12g} differs from 1")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise ValueError("state is not Hermitian")


def fidelity(rho, sigma, tol: float = 1e-8) -> float:
    """``Tr sqrt(sqrt(rho) sigma sqrt(rho))``; vectors are taken as pure states."""
    r, s = _as_array(rho), _as_array(sigma)
    if r.ndim == 1 and s.ndim == 1:
        return float(min(1.0, abs(np.vdot(r, s))))
    if r.ndim == 1:
        r = np.outer(r, r.conj())
    if s.ndim == 1:
        s = np.outer(s, s.conj())
    if r.shape != s.shape:
        raise ValueError("states differ in size")
    _check_state(r, tol)
    _check_state(s, tol)
    sr = _psd_sqrt(r)
    m = sr @ s @ sr
    vals = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return float(min(1.0, np.sqrt(np.clip(vals, 0.0, None)).sum()))


def trace_distance(rho, sigma) -> float:
    d = _as_array(rho) - _as_array(sigma)
    return float(0.5 * np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))).sum())


# -- basis files ------------------------------------------------------------------

BASIS_MAGIC = "# kerrlogic basis v1"


def manifest_hash(manifest: dict) -> str:
    blob = json.dumps(manifest, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_basis(path, basis: ReductionBasis, manifest: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"{BASIS_MAGIC}\n")
        fh.write(f"N {basis.N}\n")
        fh.write(f"d {basis.d}\n")
        fh.write(f"lambda {'none' if basis.lam is None else repr(float(basis.lam))}\n")
        fh.write(f"convention {basis.convention}\n")
        fh.write(f"manifest {manifest_hash(manifest or {})}\n")
        write_matrix(fh, basis.T, (basis.N,), storage="dense")
        w = basis.diag_weights
        fh.write("weights " + ("none" if w is None else " ".join(repr(float(x)) for x in w)) + "\n")


def load_basis(path) -> ReductionBasis:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != BASIS_MAGIC:
        raise ReductionError(f"{path}: not a basis file")
    head = dict(line.split(" ", 1) for line in lines[1:6])
    _, T = read_matrix(lines[6:])
    N = int(head["N"])
    wline = lines[6 + 3 + N]
    if not wline.startswith("weights "):
        raise ReductionError(f"{path}: missing weights line")
    wtxt = wline[len("weights "):]
    weights = None if wtxt == "none" else np.array(wtxt.split(), dtype=float)
    lam = None if head["lambda"] == "none" else float(head["lambda"])
    return ReductionBasis(T, int(head["d"]), lam, weights, head["convention"],
                          {"manifest": head["manifest"]})
