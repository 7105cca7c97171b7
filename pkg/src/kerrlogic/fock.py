"""Truncated Fock-space operators, states and their text serialization.

Operators are immutable sparse matrices tagged with the tensor layout of the
space they act on. Modes are ordered; ``tensor`` concatenates mode lists.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

HERMITIAN_TOL = 1e-8


@dataclass(frozen=True)
class SpaceDescriptor:
    mode_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.mode_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"mode dimensions must be >= 1, got {self.mode_dims!r}")
        object.__setattr__(self, "mode_dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.mode_dims))

    @property
    def n_modes(self) -> int:
        return len(self.mode_dims)

    def __mul__(self, other: "SpaceDescriptor") -> "SpaceDescriptor":
        return SpaceDescriptor(self.mode_dims + other.mode_dims)


def as_space(space) -> SpaceDescriptor:
    if isinstance(space, SpaceDescriptor):
        return space
    if isinstance(space, (int, np.integer)):
        return SpaceDescriptor((int(space),))
    return SpaceDescriptor(tuple(space))


class SpaceMismatch(ValueError):
    pass


class Operator:
    """Sparse complex square matrix on a :class:`SpaceDescriptor`."""

    __slots__ = ("space", "data")

    def __init__(self, space, data):
        space = as_space(space)
        mat = sp.csr_matrix(data, dtype=complex)
        n = space.total_dim
        if mat.shape != (n, n):
            raise SpaceMismatch(f"matrix shape {mat.shape} does not match space {space.mode_dims}")
        mat.eliminate_zeros()
        mat.sort_indices()
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "data", mat)

    def __setattr__(self, name, value):
        raise AttributeError("Operator is immutable")

    def __repr__(self):
        return f"Operator(space={self.space.mode_dims}, nnz={self.data.nnz})"

    @property
    def shape(self):
        return self.data.shape

    def _check(self, other: "Operator"):
        if self.space != other.space:
            raise SpaceMismatch(f"{self.space.mode_dims} vs {other.space.mode_dims}")

    def dag(self) -> "Operator":
        return Operator(self.space, self.data.conj().T)

    def __add__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.data + other.data)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.data - other.data)
        return NotImplemented

    def __neg__(self):
        return Operator(self.space, -self.data)

    def __mul__(self, c):
        if np.isscalar(c):
            return Operator(self.space, self.data * complex(c))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check(other)
            return Operator(self.space, self.data @ other.data)
        return NotImplemented

    def toarray(self) -> np.ndarray:
        return self.data.toarray()

    def trace(self) -> complex:
        return complex(self.data.diagonal().sum())

    def norm(self) -> float:
        """Spectral norm (dense evaluation; intended for small operators)."""
        if self.data.nnz == 0:
            return 0.0
        return float(np.linalg.norm(self.toarray(), 2))

    def max_abs(self) -> float:
        return float(np.abs(self.data.data).max()) if self.data.nnz else 0.0

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        return (self - self.dag()).max_abs() <= tol

    def allclose(self, other: "Operator", atol: float = 1e-12) -> bool:
        self._check(other)
        return (self - other).max_abs() <= atol


def identity(space) -> Operator:
    space = as_space(space)
    return Operator(space, sp.identity(space.total_dim, dtype=complex, format="csr"))


def zero(space) -> Operator:
    space = as_space(space)
    n = space.total_dim
    return Operator(space, sp.csr_matrix((n, n), dtype=complex))


def _lowering(n: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n, dtype=float)), 1, shape=(n, n), format="csr", dtype=complex)


def embed(local: np.ndarray | sp.spmatrix, space, mode: int) -> Operator:
    """Place a single-mode matrix on ``mode`` of ``space`` (identity elsewhere)."""
    space = as_space(space)
    if not 0 <= mode < space.n_modes:
        raise IndexError(f"mode {mode} out of range for {space.n_modes} modes")
    local = sp.csr_matrix(local, dtype=complex)
    if local.shape[0] != space.mode_dims[mode]:
        raise SpaceMismatch(f"local operator side {local.shape[0]} != mode dim {space.mode_dims[mode]}")
    factors = [sp.identity(d, dtype=complex, format="csr") for d in space.mode_dims]
    factors[mode] = local
    return Operator(space, reduce(lambda x, y: sp.kron(x, y, format="csr"), factors))


def annihilation(space, mode: int = 0) -> Operator:
    space = as_space(space)
    if not 0 <= mode < space.n_modes:
        raise IndexError(f"mode {mode} out of range for {space.n_modes} modes")
    return embed(_lowering(space.mode_dims[mode]), space, mode)


def creation(space, mode: int = 0) -> Operator:
    return annihilation(space, mode).dag()


def number(space, mode: int = 0) -> Operator:
    a = annihilation(space, mode)
    return a.dag() @ a


def kerr_hamiltonian(space, mode: int, detuning: float, chi: float) -> Operator:
    """``detuning * a*a + chi * a*a*aa`` on one mode."""
    space = as_space(space)
    if not 0 <= mode < space.n_modes:
        raise IndexError(f"mode {mode} out of range for {space.n_modes} modes")
    n = np.arange(space.mode_dims[mode], dtype=float)
    diag = detuning * n + chi * n * (n - 1)
    return embed(sp.diags(diag.astype(complex), 0, format="csr"), space, mode)


def tensor(*ops: Operator) -> Operator:
    if not ops:
        raise ValueError("tensor needs at least one operator")
    space = reduce(lambda s, t: s * t, (op.space for op in ops))
    data = reduce(lambda x, y: sp.kron(x, y, format="csr"), (op.data for op in ops))
    return Operator(space, data)


def dagger(op: Operator) -> Operator:
    return op.dag()


def commutator(x: Operator, y: Operator) -> Operator:
    return x @ y - y @ x


def hermitian_eig(x, tol: float = HERMITIAN_TOL):
    """Eigen-decomposition of a Hermitian operator or matrix.

    Returns ascending real eigenvalues and a unitary whose columns are the
    eigenvectors. Raises ``ValueError`` when the input is not Hermitian
    within ``tol`` (absolute, entrywise).
    """
    mat = x.toarray() if isinstance(x, Operator) else np.asarray(x, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("expected a square matrix")
    defect = np.abs(mat - mat.conj().T).max() if mat.size else 0.0
    if defect > tol:
        raise ValueError(f"matrix is not Hermitian (defect {defect:.3g} > {tol:.3g})")
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    return vals, vecs


# -- states -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure vector or density matrix on a space."""

    space: SpaceDescriptor
    payload: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "space", as_space(self.space))
        arr = np.asarray(self.payload, dtype=complex)
        n = self.space.total_dim
        if arr.shape not in ((n,), (n, n)):
            raise SpaceMismatch(f"payload shape {arr.shape} does not fit space {self.space.mode_dims}")
        object.__setattr__(self, "payload", arr)

    @property
    def is_pure(self) -> bool:
        return self.payload.ndim == 1

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.payload, self.payload.conj())
        return self.payload

    def expect(self, op: Operator) -> complex:
        if self.is_pure:
            psi = self.payload
            return complex(np.vdot(psi, op.data @ psi))
        return complex((op.data @ self.payload).trace())

    def validate(self, tol: float = HERMITIAN_TOL) -> None:
        if self.is_pure:
            nrm = np.linalg.norm(self.payload)
            if abs(nrm - 1.0) > tol:
                raise ValueError(f"state vector norm {nrm} != 1")
        else:
            validate_density(self.payload, tol)


def basis_vector(space, index: int) -> np.ndarray:
    v = np.zeros(as_space(space).total_dim, dtype=complex)
    v[index] = 1.0
    return v


def vacuum(space, pure: bool = False) -> QuantumState:
    space = as_space(space)
    v = basis_vector(space, 0)
    return QuantumState(space, v if pure else np.outer(v, v))


def density_defects(rho: np.ndarray) -> tuple[float, float, float]:
    """(|trace - 1|, Hermiticity defect, minimum eigenvalue)."""
    rho = np.asarray(rho)
    herm = float(np.abs(rho - rho.conj().T).max())
    min_eig = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
    return abs(complex(np.trace(rho)) - 1.0), herm, min_eig


def validate_density(rho: np.ndarray, tol: float = HERMITIAN_TOL) -> None:
    tr, herm, min_eig = density_defects(rho)
    if tr > tol:
        raise ValueError(f"density matrix trace deviates from 1 by {tr:.3g}")
    if herm > tol:
        raise ValueError(f"density matrix Hermiticity defect {herm:.3g}")
    if min_eig < -tol:
        raise ValueError(f"density matrix has negative eigenvalue {min_eig:.3g}")


def clean_density(rho: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Hermitize, clamp small negative eigenvalues to zero and renormalize.

    Eigenvalues below ``-tol`` indicate a genuinely invalid state and raise.
    """
    rho = 0.5 * (rho + rho.conj().T)
    vals, vecs = np.linalg.eigh(rho)
    if vals.min() < -tol:
        raise ValueError(f"negative eigenvalue {vals.min():.3g} below tolerance")
    if vals.min() < 0:
        vals = np.clip(vals, 0.0, None)
        rho = (vecs * vals) @ vecs.conj().T
        rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


# -- serialization ------------------------------------------------------------

MATRIX_MAGIC = "# kerrlogic matrix v1"


def write_matrix(fh: TextIO, matrix, mode_dims: Sequence[int], storage: str = "coo") -> None:
    """Write a square complex matrix as a header plus coordinate or dense rows."""
    if storage not in ("coo", "dense"):
        raise ValueError(f"unknown storage kind {storage!r}")
    fh.write(f"{MATRIX_MAGIC}\n")
    fh.write("mode_dims " + " ".join(str(int(d)) for d in mode_dims) + "\n")
    fh.write(f"storage {storage}\n")
    if storage == "coo":
        coo = sp.coo_matrix(matrix)
        coo.sum_duplicates()
        order = np.lexsort((coo.col, coo.row))
        fh.write(f"nnz {coo.nnz}\n")
        for i in order:
            v = complex(coo.data[i])
            fh.write(f"{coo.row[i]} {coo.col[i]} {v.real!r} {v.imag!r}\n")
    else:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=complex)
        for row in dense:
            fh.write(" ".join(f"{complex(v).real!r} {complex(v).imag!r}" for v in row) + "\n")


def read_matrix(lines: Iterable[str]) -> tuple[tuple[int, ...], np.ndarray | sp.csr_matrix]:
    """Inverse of :func:`write_matrix`; consumes exactly the matrix block."""
    it = iter(lines)
    magic = next(it).strip()
    if magic != MATRIX_MAGIC:
        raise ValueError(f"bad matrix header {magic!r}")
    key, *dims = next(it).split()
    if key != "mode_dims":
        raise ValueError("expected mode_dims line")
    mode_dims = tuple(int(d) for d in dims)
    n = int(np.prod(mode_dims))
    key, storage = next(it).split()
    if storage == "coo":
        nnz = int(next(it).split()[1])
        rows, cols, vals = np.zeros(nnz, int), np.zeros(nnz, int), np.zeros(nnz, complex)
        for k in range(nnz):
            r, c, re, im = next(it).split()
            rows[k], cols[k], vals[k] = int(r), int(c), complex(float(re), float(im))
        return mode_dims, sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    if storage == "dense":
        out = np.empty((n, n), dtype=complex)
        for r in range(n):
            nums = np.array(next(it).split(), dtype=float)
            out[r] = nums[0::2] + 1j * nums[1::2]
        return mode_dims, out
    raise ValueError(f"unknown storage kind {storage!r}")


def save_operator(path, op: Operator, storage: str = "coo") -> None:
    with open(path, "w") as fh:
        write_matrix(fh, op.data, op.space.mode_dims, storage)


def load_operator(path) -> Operator:
    with open(path) as fh:
        dims, mat = read_matrix(fh)
    return Operator(SpaceDescriptor(dims), mat)
