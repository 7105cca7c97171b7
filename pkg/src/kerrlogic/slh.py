"""Drive-parametric SLH triples and the network composition rules.

A triple ``(S, L, H)`` has a scalar unitary scattering matrix ``S``, a vector
of coupling operators ``L`` and a Hamiltonian ``H``. ``L`` and ``H`` are
affine in named complex drive amplitudes (and their conjugates), so a gate is
composed once and evaluated at any input level afterwards.

Channel indices in the public API (``feedback``, ``permutation``) are 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .fock import Operator, SpaceDescriptor, SpaceMismatch, as_space, identity, kerr_hamiltonian, annihilation

# A coefficient key: ``None`` for drive-independent terms, otherwise
# ``(parameter name, conjugated)``.
Key = Union[None, tuple]

UNITARY_TOL = 1e-10


class UnboundDrive(KeyError):
    pass


class NonAffine(ValueError):
    """Raised when a product would make a coupling or Hamiltonian non-affine in the drives."""


class SingularFeedback(ValueError):
    pass


def _conj_key(k: Key) -> Key:
    return None if k is None else (k[0], not k[1])


def _key_value(k: Key, drives: Mapping[str, complex]) -> complex:
    if k is None:
        return 1.0
    name, conj = k
    try:
        v = complex(drives[name])
    except KeyError:
        raise UnboundDrive(name) from None
    return v.conjugate() if conj else v


def _merge_space(a, b):
    if a is None:
        return b
    if b is None or a == b:
        return a
    raise SpaceMismatch(f"{a.mode_dims} vs {b.mode_dims}")


class DriveExpr:
    """Affine scalar ``constant + sum coef * drive[name]`` (drive optionally conjugated)."""

    __slots__ = ("terms",)

    def __init__(self, constant: complex = 0.0, linear: Mapping[tuple, complex] | None = None):
        terms = {}
        if constant != 0:
            terms[None] = complex(constant)
        for k, c in (linear or {}).items():
            if c != 0:
                terms[(str(k[0]), bool(k[1]))] = complex(c)
        self.terms = terms

    @classmethod
    def param(cls, name: str, coef: complex = 1.0) -> "DriveExpr":
        return cls(0.0, {(name, False): coef})

    @classmethod
    def coerce(cls, x) -> "DriveExpr":
        if isinstance(x, DriveExpr):
            return x
        if isinstance(x, str):
            return cls.param(x)
        return cls(complex(x))

    @property
    def constant(self) -> complex:
        return self.terms.get(None, 0.0)

    @property
    def linear(self) -> dict:
        return {k: c for k, c in self.terms.items() if k is not None}

    def names(self) -> set[str]:
        return {k[0] for k in self.terms if k is not None}

    def conj(self) -> "DriveExpr":
        out = DriveExpr()
        out.terms = {_conj_key(k): c.conjugate() for k, c in self.terms.items()}
        return out

    def evaluate(self, drives: Mapping[str, complex]) -> complex:
        return sum((c * _key_value(k, drives) for k, c in self.terms.items()), 0j)

    def __add__(self, other):
        other = DriveExpr.coerce(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out.get(k, 0) + c
        res = DriveExpr()
        res.terms = {k: c for k, c in out.items() if c != 0}
        return res

    __radd__ = __add__

    def __mul__(self, c):
        res = DriveExpr()
        res.terms = {k: v * complex(c) for k, v in self.terms.items() if v * complex(c) != 0}
        return res

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-DriveExpr.coerce(other))

    def __repr__(self):
        return f"DriveExpr({self.terms!r})"


class ParametricOperator:
    """``sum_k value_k(drives) * (op_k + scalar_k * I)`` with affine keys.

    Identity-proportional parts are held as plain scalars so components with
    no Hilbert space of their own (displacements, beam splitters) can be
    composed before any space is known.
    """

    __slots__ = ("ops", "scalars", "space")

    def __init__(self, ops: Mapping[Key, Operator] | None = None, scalars: Mapping[Key, complex] | None = None):
        space = None
        clean_ops = {}
        for k, op in (ops or {}).items():
            space = _merge_space(space, op.space)
            if op.data.nnz:
                clean_ops[k] = op
        self.ops = clean_ops
        self.scalars = {k: complex(c) for k, c in (scalars or {}).items() if c != 0}
        self.space = space

    @classmethod
    def from_operator(cls, op: Operator) -> "ParametricOperator":
        return cls({None: op})

    @classmethod
    def from_drive(cls, expr) -> "ParametricOperator":
        return cls(scalars=DriveExpr.coerce(expr).terms)

    @classmethod
    def coerce(cls, x) -> "ParametricOperator":
        if isinstance(x, ParametricOperator):
            return x
        if isinstance(x, Operator):
            return cls.from_operator(x)
        return cls.from_drive(x)

    def __repr__(self):
        return f"ParametricOperator(ops={list(self.ops)}, scalars={self.scalars})"

    def is_zero(self) -> bool:
        return not self.ops and not self.scalars

    def names(self) -> set[str]:
        return {k[0] for k in list(self.ops) + list(self.scalars) if k is not None}

    def scalar_part(self) -> DriveExpr:
        out = DriveExpr()
        out.terms = dict(self.scalars)
        return out

    def operator_part(self) -> "ParametricOperator":
        return ParametricOperator(self.ops)

    def dag(self) -> "ParametricOperator":
        return ParametricOperator(
            {_conj_key(k): op.dag() for k, op in self.ops.items()},
            {_conj_key(k): c.conjugate() for k, c in self.scalars.items()},
        )

    def __add__(self, other):
        other = ParametricOperator.coerce(other)
        ops = dict(self.ops)
        for k, op in other.ops.items():
            ops[k] = ops[k] + op if k in ops else op
        scalars = dict(self.scalars)
        for k, c in other.scalars.items():
            scalars[k] = scalars.get(k, 0) + c
        return ParametricOperator(ops, scalars)

    __radd__ = __add__

    def __mul__(self, c):
        if not np.isscalar(c):
            return NotImplemented
        c = complex(c)
        if c == 0:
            return ParametricOperator()
        return ParametricOperator({k: op * c for k, op in self.ops.items()},
                                  {k: v * c for k, v in self.scalars.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def __sub__(self, other):
        return self + (-ParametricOperator.coerce(other))

    def __matmul__(self, other):
        return product(self, other)

    def evaluate(self, drives: Mapping[str, complex], space=None) -> Operator:
        space = _merge_space(self.space, as_space(space) if space is not None else None)
        if space is None:
            raise ValueError("cannot evaluate an operator without a space")
        total = identity(space) * sum((c * _key_value(k, drives) for k, c in self.scalars.items()), 0j)
        for k, op in self.ops.items():
            total = total + op * _key_value(k, drives)
        return total

    def drop_identity(self) -> "ParametricOperator":
        return ParametricOperator(self.ops)


def _combine_keys(k1: Key, k2: Key):
    if k1 is None:
        return k2, False
    if k2 is None:
        return k1, False
    return None, True


def product(x, y, drop_quadratic_identity: bool = False) -> ParametricOperator:
    """Operator product of two affine expressions.

    Drive-times-drive terms are only allowed when they multiply the identity
    and ``drop_quadratic_identity`` is set; they are then discarded.
    """
    x, y = ParametricOperator.coerce(x), ParametricOperator.coerce(y)
    ops: dict = {}
    scalars: dict = {}

    def add_op(k, op):
        ops[k] = ops[k] + op if k in ops else op

    for k1, c1 in x.scalars.items():
        for k2, c2 in y.scalars.items():
            k, quad = _combine_keys(k1, k2)
            if quad:
                if not drop_quadratic_identity:
                    raise NonAffine("product of two drive-dependent scalars")
                continue
            scalars[k] = scalars.get(k, 0) + c1 * c2
        for k2, op in y.ops.items():
            k, quad = _combine_keys(k1, k2)
            if quad:
                raise NonAffine("product of drive-dependent scalar and drive-dependent operator")
            add_op(k, op * c1)
    for k1, op1 in x.ops.items():
        for k2, c2 in y.scalars.items():
            k, quad = _combine_keys(k1, k2)
            if quad:
                raise NonAffine("product of drive-dependent operator and drive-dependent scalar")
            add_op(k, op1 * c2)
        for k2, op2 in y.ops.items():
            k, quad = _combine_keys(k1, k2)
            if quad:
                raise NonAffine("product of two drive-dependent operators")
            add_op(k, op1 @ op2)
    return ParametricOperator(ops, scalars)


def im_part(x: ParametricOperator) -> ParametricOperator:
    """``(X - X*) / 2i``."""
    return (x - x.dag()) * (1 / 2j)


def _hermitian_coupling(row, vec) -> ParametricOperator:
    """``Im(sum_j row_j* vec_j)`` with identity terms removed."""
    acc = ParametricOperator()
    for r, v in zip(row, vec):
        if r.is_zero() or v.is_zero():
            continue
        acc = acc + product(r.dag(), v, drop_quadratic_identity=True)
    return im_part(acc).drop_identity()


def _mat_vec(S: np.ndarray, L: Sequence[ParametricOperator]) -> list[ParametricOperator]:
    out = []
    for i in range(S.shape[0]):
        acc = ParametricOperator()
        for j, lj in enumerate(L):
            if S[i, j] != 0 and not lj.is_zero():
                acc = acc + lj * S[i, j]
        out.append(acc)
    return out


@dataclass(frozen=True, eq=False)
class SlhTriple:
    S: np.ndarray
    L: tuple
    H: ParametricOperator
    space: SpaceDescriptor | None = None

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, dtype=complex))
        n = S.shape[0]
        if S.shape != (n, n):
            raise ValueError(f"S must be square, got {S.shape}")
        L = tuple(ParametricOperator.coerce(l) for l in self.L)
        if len(L) != n:
            raise ValueError(f"L has {len(L)} entries for {n} channels")
        H = ParametricOperator.coerce(self.H)
        defect = np.abs(S.conj().T @ S - np.eye(n)).max()
        if defect > UNITARY_TOL:
            raise ValueError(f"S is not unitary (defect {defect:.3g})")
        space = as_space(self.space) if self.space is not None else None
        for x in L + (H,):
            space = _merge_space(space, x.space)
        S.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "space", space)

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def names(self) -> set[str]:
        out = set(self.H.names())
        for l in self.L:
            out |= l.names()
        return out

    def __add__(self, other: "SlhTriple") -> "SlhTriple":
        return concat(self, other)

    def __lshift__(self, other: "SlhTriple") -> "SlhTriple":
        return series(self, other)

    def __repr__(self):
        dims = self.space.mode_dims if self.space else None
        return f"SlhTriple(n={self.n}, space={dims}, drives={sorted(self.names())})"


def concat(g1: SlhTriple, g2: SlhTriple) -> SlhTriple:
    """Concatenation ``g1 ⊞ g2``: independent channels stacked."""
    space = _merge_space(g1.space, g2.space)
    n1, n2 = g1.n, g2.n
    S = np.zeros((n1 + n2, n1 + n2), dtype=complex)
    S[:n1, :n1] = g1.S
    S[n1:, n1:] = g2.S
    return SlhTriple(S, g1.L + g2.L, g1.H + g2.H, space)


def concat_all(*gs: SlhTriple) -> SlhTriple:
    out = gs[0]
    for g in gs[1:]:
        out = concat(out, g)
    return out


def series(g2: SlhTriple, g1: SlhTriple) -> SlhTriple:
    """Series product ``g2 ◁ g1``: outputs of ``g1`` feed the inputs of ``g2``."""
    if g1.n != g2.n:
        raise ValueError(f"channel mismatch in series product: {g2.n} vs {g1.n}")
    space = _merge_space(g1.space, g2.space)
    S2L1 = _mat_vec(g2.S, g1.L)
    L = tuple(l2 + y for l2, y in zip(g2.L, S2L1))
    H = (g1.H + g2.H + _hermitian_coupling(g2.L, S2L1)).drop_identity()
    return SlhTriple(g2.S @ g1.S, L, H, space)


def series_all(*gs: SlhTriple) -> SlhTriple:
    """``gs[0] ◁ gs[1] ◁ ... ◁ gs[-1]`` (the last system receives the inputs)."""
    out = gs[-1]
    for g in reversed(gs[:-1]):
        out = series(g, out)
    return out


def feedback(g: SlhTriple, k: int, l: int) -> SlhTriple:
    """Feed output ``k`` back into input ``l`` (1-based); removes one channel."""
    n = g.n
    if n < 2:
        raise ValueError("feedback needs at least two channels")
    if not (1 <= k <= n and 1 <= l <= n):
        raise IndexError(f"channels ({k}, {l}) out of range for n={n}")
    k0, l0 = k - 1, l - 1
    S = g.S
    denom = 1.0 - S[k0, l0]
    if abs(denom) <= 1e-12:
        raise SingularFeedback(f"1 - S[{k},{l}] vanishes")
    inv = 1.0 / denom
    kb = [i for i in range(n) if i != k0]
    lb = [j for j in range(n) if j != l0]
    S_new = S[np.ix_(kb, lb)] + np.outer(S[kb, l0], S[k0, lb]) * inv
    Lk = g.L[k0]
    L_new = tuple(g.L[i] + Lk * (S[i, l0] * inv) for i in kb)
    # sum_j L_j* S_jl as a single operator, then Im((...) (1 - S_kl)^-1 L_k)
    row = ParametricOperator()
    for j in range(n):
        if S[j, l0] != 0 and not g.L[j].is_zero():
            row = row + g.L[j].dag() * S[j, l0]
    H_new = (g.H + im_part(product(row, Lk * inv, drop_quadratic_identity=True))).drop_identity()
    return SlhTriple(S_new, L_new, H_new, g.space)


# -- elementary components ------------------------------------------------------

def identity_system(n: int = 1) -> SlhTriple:
    return SlhTriple(np.eye(n), [ParametricOperator()] * n, ParametricOperator())


def beamsplitter(theta: float) -> SlhTriple:
    c, s = np.cos(theta), np.sin(theta)
    return SlhTriple(np.array([[c, -s], [s, c]]), [ParametricOperator()] * 2, ParametricOperator())


def phase(phi: float) -> SlhTriple:
    return SlhTriple(np.array([[np.exp(1j * phi)]]), [ParametricOperator()], ParametricOperator())


def displacement(amplitude) -> SlhTriple:
    """Coherent input source; ``amplitude`` is a drive name, number or :class:`DriveExpr`."""
    return SlhTriple(np.eye(1), [ParametricOperator.from_drive(amplitude)], ParametricOperator())


def permutation_matrix(sigma: Sequence[int]) -> np.ndarray:
    sigma = [int(s) for s in sigma]
    n = len(sigma)
    if sorted(sigma) != list(range(1, n + 1)):
        raise ValueError(f"{sigma} is not a permutation of 1..{n}")
    P = np.zeros((n, n))
    for k, s in enumerate(sigma):
        P[s - 1, k] = 1.0
    return P


def permutation(sigma: Sequence[int]) -> SlhTriple:
    """Channel permutation with ``P[j, k] = delta(j, sigma(k))`` (1-based ``sigma``)."""
    P = permutation_matrix(sigma)
    return SlhTriple(P, [ParametricOperator()] * len(sigma), ParametricOperator())


def kerr_half1(a: Operator, kappa: float) -> SlhTriple:
    """First mirror of a cavity: ``(1, sqrt(kappa) a, 0)``."""
    return SlhTriple(np.eye(1), [a * np.sqrt(kappa)], ParametricOperator())


def kerr_half2(a: Operator, h0: Operator, kappa: float) -> SlhTriple:
    """Second mirror carrying the cavity Hamiltonian: ``(1, sqrt(kappa) a, H0)``."""
    return SlhTriple(np.eye(1), [a * np.sqrt(kappa)], h0)


def kerr_from_operators(a: Operator, h0: Operator, kappa: float) -> SlhTriple:
    return concat(kerr_half1(a, kappa), kerr_half2(a, h0, kappa))


def kerr_cavity(space, mode: int, kappa: float, detuning: float, chi: float) -> SlhTriple:
    """Two-port Kerr ring cavity ``(I2, [sqrt(kappa) a, sqrt(kappa) a], H0)``."""
    a = annihilation(space, mode)
    return kerr_from_operators(a, kerr_hamiltonian(space, mode, detuning, chi), kappa)


# -- evaluation -----------------------------------------------------------------

def evaluate(g: SlhTriple, drives: Mapping[str, complex] | None = None, space=None, herm_tol: float = 1e-10):
    """Bind drive values; returns ``(S, [L_k], H)`` as concrete operators."""
    drives = drives or {}
    space = _merge_space(g.space, as_space(space) if space is not None else None)
    if space is None:
        raise ValueError("triple has no Hilbert space; pass space=")
    missing = g.names() - set(drives)
    if missing:
        raise UnboundDrive(", ".join(sorted(missing)))
    L = [l.evaluate(drives, space) for l in g.L]
    H = g.H.evaluate(drives, space)
    scale = max(1.0, H.max_abs())
    defect = (H - H.dag()).max_abs()
    if defect > herm_tol * scale:
        raise ValueError(f"evaluated Hamiltonian is not Hermitian (defect {defect:.3g})")
    return np.array(g.S), L, H


def collapse_form(g: SlhTriple):
    """Master-equation form with constant coupling offsets moved into ``H``.

    For ``L_k = A_k + c_k`` with scalar ``c_k`` the dissipator of ``L_k`` equals
    that of ``A_k`` plus the Hamiltonian ``(i/2)(c_k* A_k - c_k A_k*)``.
    Returns ``(H', [A_k])`` as parametric operators (zero ``A_k`` dropped).
    """
    H = g.H
    collapse = []
    for l in g.L:
        A = l.operator_part()
        if A.is_zero():
            continue
        c = ParametricOperator(scalars=l.scalars)
        H = H + product(c.dag(), A) * 0.5j - product(A.dag(), c) * 0.5j
        collapse.append(A)
    return H.drop_identity(), collapse


@dataclass(frozen=True, eq=False)
class CavityModel:
    """Operators of one Kerr cavity on the (joint) network space.

    ``a`` is the lowering operator, or its projection for a reduced model, and
    ``h0`` the undriven cavity Hamiltonian.
    """

    a: Operator
    h0: Operator
    kappa: float

    def half1(self) -> SlhTriple:
        return kerr_half1(self.a, self.kappa)

    def half2(self) -> SlhTriple:
        return kerr_half2(self.a, self.h0, self.kappa)

    def full(self) -> SlhTriple:
        return concat(self.half1(), self.half2())
