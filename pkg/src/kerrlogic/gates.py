"""Kerr-cavity logic circuits: AND, NOT and the NAND latch.

Builders compose the bundled network descriptions around any cavity model
(full Fock truncation or a reduced basis). The ``closed_form_*`` functions
write the same triples out term by term without the composition engine and
serve as cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .fock import Operator, SpaceDescriptor, annihilation, embed, kerr_hamiltonian
from .network import bundled
from .slh import CavityModel, ParametricOperator, SlhTriple, DriveExpr

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class CavityParams:
    kappa: float = 25.0
    detuning: float = 50.0
    chi: float = -50.0 / 60.0


@dataclass(frozen=True)
class AndParams:
    theta: float = 1.073
    phi: float = 1.572
    alpha: float = 22.6274


@dataclass(frozen=True)
class NotParams:
    theta: float = 0.891
    theta_p: float = 1.071
    phi_p: float = 2.03
    alpha: float = 22.6274
    beta: complex = -34.289 - 11.909j
    beta_p: complex = 7.833 - 17.656j


@dataclass(frozen=True)
class LatchParams:
    theta: float = 0.891
    phi: float = 2.546
    beta: complex = -34.289 - 11.909j
    alpha: float = 22.6274
    # listed for the latch but not used by its network
    theta_p: float = 0.566
    phi_p: float = 0.158


@dataclass(frozen=True)
class GateParams:
    cavity: CavityParams = field(default_factory=CavityParams)
    and_gate: AndParams = field(default_factory=AndParams)
    not_gate: NotParams = field(default_factory=NotParams)
    latch: LatchParams = field(default_factory=LatchParams)


DEFAULT_PARAMS = GateParams()

GATE_KINDS = ("and", "not", "latch")
OUTPUT_CHANNEL = {"and": 2, "not": 4}


# -- cavity factories ---------------------------------------------------------

def full_cavity(N: int, cavity: CavityParams = CavityParams(), space=None, mode: int = 0) -> CavityModel:
    space = SpaceDescriptor((N,)) if space is None else space
    return CavityModel(annihilation(space, mode),
                       kerr_hamiltonian(space, mode, cavity.detuning, cavity.chi),
                       cavity.kappa)


def cavity_pair(single: CavityModel) -> tuple[CavityModel, CavityModel]:
    """Two copies of a single-mode cavity model on the joint space (a = slot 0, b = slot 1)."""
    if single.a.space.n_modes != 1:
        raise ValueError("cavity_pair expects a single-mode cavity model")
    d = single.a.space.total_dim
    space = SpaceDescriptor((d, d))
    return tuple(CavityModel(embed(single.a.data, space, m), embed(single.h0.data, space, m), single.kappa)
                 for m in (0, 1))


# -- builders -----------------------------------------------------------------

def build_driven_cavity(cavity: CavityModel) -> SlhTriple:
    return bundled("driven_cavity").build({}, [cavity])


def build_and(cavity: CavityModel, params: AndParams = AndParams()) -> SlhTriple:
    return bundled("and_gate").build({"theta": params.theta, "phi": params.phi}, [cavity])


def build_not(cavity: CavityModel, params: NotParams = NotParams()) -> SlhTriple:
    return bundled("not_gate").build(
        {"theta": params.theta, "theta_p": params.theta_p, "phi_p": params.phi_p}, [cavity])


def build_nand_latch(cavity_a: CavityModel, cavity_b: CavityModel, params: LatchParams = LatchParams()) -> SlhTriple:
    return bundled("nand_latch").build({"theta": params.theta, "phi": params.phi}, [cavity_a, cavity_b])


def build_gate(kind: str, cavities, params: GateParams = DEFAULT_PARAMS) -> SlhTriple:
    if kind == "and":
        return build_and(cavities[0], params.and_gate)
    if kind == "not":
        return build_not(cavities[0], params.not_gate)
    if kind == "latch":
        return build_nand_latch(cavities[0], cavities[1], params.latch)
    raise ValueError(f"unknown gate kind {kind!r}")


def fixed_drives(kind: str, params: GateParams = DEFAULT_PARAMS) -> dict[str, complex]:
    """Bias inputs held constant during operation."""
    if kind == "and":
        return {}
    if kind == "not":
        p = params.not_gate
        return {"alpha": p.alpha, "beta": p.beta, "beta_p": p.beta_p}
    if kind == "latch":
        return {"beta": params.latch.beta}
    raise ValueError(f"unknown gate kind {kind!r}")


# -- closed forms ---------------------------------------------------------------

def _drive(name: str, coef: complex = 1.0) -> ParametricOperator:
    return ParametricOperator.from_drive(DriveExpr.param(name, coef))


def _pumped(a: Operator, coef: complex, name_terms: Mapping[str, complex]) -> ParametricOperator:
    """``coef * (x* a - x a*)`` for the affine drive ``x = sum w_k drive_k``."""
    ops = {}
    for name, w in name_terms.items():
        ops[(name, True)] = a * (coef * np.conj(w))
        ops[(name, False)] = a.dag() * (-coef * w)
    return ParametricOperator(ops)


def closed_form_and(cavity: CavityModel, params: AndParams = AndParams()) -> SlhTriple:
    th, ph, k = params.theta, params.phi, cavity.kappa
    c, s, e = np.cos(th), np.sin(th), np.exp(1j * ph)
    S = np.array([[1 / SQRT2, -1 / SQRT2, 0],
                  [c * e / SQRT2, c * e / SQRT2, -s],
                  [s * e / SQRT2, s * e / SQRT2, c]])
    a = cavity.a
    sk = np.sqrt(k)
    L = [
        _drive("xi1", 1 / SQRT2) + _drive("xi2", -1 / SQRT2),
        ParametricOperator.from_operator(a * ((c * e - s) * sk)) + _drive("xi1", c * e / SQRT2) + _drive("xi2", c * e / SQRT2),
        ParametricOperator.from_operator(a * ((s * e + c) * sk)) + _drive("xi1", s * e / SQRT2) + _drive("xi2", s * e / SQRT2),
    ]
    H = ParametricOperator.from_operator(cavity.h0) + _pumped(a, 1j * sk / (2 * SQRT2), {"xi1": 1, "xi2": 1})
    return SlhTriple(S, L, H)


def _not_scattering(params: NotParams) -> np.ndarray:
    tp, pp, th = params.theta_p, params.phi_p, params.theta
    e = np.exp(1j * pp)
    sp_, cp = np.sin(tp), np.cos(tp)
    S1 = np.array([[(-1 - e * sp_) / 2, (1 - e * sp_) / 2, e * cp / SQRT2],
                   [(1 - e * sp_) / 2, (-1 - e * sp_) / 2, e * cp / SQRT2],
                   [cp / SQRT2, cp / SQRT2, sp_]])
    S2 = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    S = np.zeros((5, 5), dtype=complex)
    S[:3, :3] = S1
    S[3:, 3:] = S2
    return S


def closed_form_not(cavity: CavityModel, params: NotParams = NotParams()) -> SlhTriple:
    tp, pp, th, k = params.theta_p, params.phi_p, params.theta, cavity.kappa
    e = np.exp(1j * pp)
    sp_, cp = np.sin(tp), np.cos(tp)
    c, s = np.cos(th), np.sin(th)
    a, sk = cavity.a, np.sqrt(k)
    op = ParametricOperator.from_operator
    m, p = (-1 - e * sp_) / 2, (1 - e * sp_) / 2
    L = [
        op(a * (-sk * e * sp_ / SQRT2)) + _drive("xi", m) + _drive("alpha", p) + _drive("beta_p", e * cp / SQRT2),
        op(a * (-sk * e * sp_ / SQRT2)) + _drive("xi", p) + _drive("alpha", m) + _drive("beta_p", e * cp / SQRT2),
        op(a * (sk * cp)) + _drive("xi", cp / SQRT2) + _drive("alpha", cp / SQRT2) + _drive("beta_p", sp_),
        op(a * (-sk * s)) + _drive("beta", c),
        op(a * (sk * c)) + _drive("beta", s),
    ]
    H = op(cavity.h0) + _pumped(a, 0.5j * np.sqrt(k / 2), {"xi": 1, "alpha": 1})
    return SlhTriple(_not_scattering(params), L, H)


def latch_scattering_block(params: LatchParams) -> np.ndarray:
    c, s, e = np.cos(params.theta), np.sin(params.theta), np.exp(1j * params.phi)
    return np.array([[1 / SQRT2, -c * e / SQRT2, s * e / SQRT2],
                     [1 / SQRT2, c * e / SQRT2, -s * e / SQRT2],
                     [0, s, c]])


def closed_form_latch(cavity_a: CavityModel, cavity_b: CavityModel, params: LatchParams = LatchParams()) -> SlhTriple:
    th, ph, k = params.theta, params.phi, cavity_a.kappa
    c, s, e = np.cos(th), np.sin(th), np.exp(1j * ph)
    a, b = cavity_a.a, cavity_b.a
    sk, sk2 = np.sqrt(k), np.sqrt(k / 2)
    op = ParametricOperator.from_operator
    bias = -c * e / SQRT2  # coefficient of beta in channels 1 and 4
    L = [
        op(b * (sk2 * s * e)) + _drive("beta", bias) + _drive("S_bar", 1 / SQRT2),
        op(a * sk - b * (sk2 * s * e)) + _drive("beta", -bias) + _drive("S_bar", 1 / SQRT2),
        op(b * (sk * c)) + _drive("beta", s),
        op(a * (sk2 * s * e)) + _drive("beta", bias) + _drive("R_bar", 1 / SQRT2),
        op(b * sk - a * (sk2 * s * e)) + _drive("beta", -bias) + _drive("R_bar", 1 / SQRT2),
        op(a * (sk * c)) + _drive("beta", s),
    ]
    B = latch_scattering_block(params)
    S = np.zeros((6, 6), dtype=complex)
    S[:3, :3] = B
    S[3:, 3:] = B
    H = _latch_hamiltonian(cavity_a, cavity_b, params, 1j * sk / (2 * SQRT2))
    return SlhTriple(S, L, H)


def _latch_hamiltonian(cavity_a, cavity_b, params: LatchParams, pump: complex) -> ParametricOperator:
    th, ph, k = params.theta, params.phi, cavity_a.kappa
    c, s, e = np.cos(th), np.sin(th), np.exp(1j * ph)
    a, b = cavity_a.a, cavity_b.a
    coupling = (a @ b.dag() + a.dag() @ b) * (-k / SQRT2 * s * np.sin(ph))
    H = ParametricOperator.from_operator(cavity_a.h0 + cavity_b.h0 + coupling)
    H = H + _pumped(a, pump, {"S_bar": 1, "beta": c * e}) + _pumped(b, pump, {"R_bar": 1, "beta": c * e})
    return H


def closed_form(kind: str, cavities, params: GateParams = DEFAULT_PARAMS) -> SlhTriple:
    if kind == "and":
        return closed_form_and(cavities[0], params.and_gate)
    if kind == "not":
        return closed_form_not(cavities[0], params.not_gate)
    if kind == "latch":
        return closed_form_latch(cavities[0], cavities[1], params.latch)
    raise ValueError(f"unknown gate kind {kind!r}")


# -- compact master equations -----------------------------------------------------

def gate_generator(kind: str, cavities, params: GateParams = DEFAULT_PARAMS):
    """Compact Lindblad form of a gate with the drives left symbolic.

    The single-cavity gates decay through both cavity mirrors, written as one
    collapse operator ``sqrt(2 kappa) a``. The latch uses its four mixed
    collapse operators.
    """
    from .dynamics import Generator
    if kind in ("and", "not"):
        cav = cavities[0]
        a, k = cav.a, cav.kappa
        names = {"xi1": 1, "xi2": 1} if kind == "and" else {"xi": 1, "alpha": 1}
        H = ParametricOperator.from_operator(cav.h0) + _pumped(a, 1j * np.sqrt(k / 2), names)
        return Generator(H, (a * np.sqrt(2 * k),), a.space)
    if kind == "latch":
        cav_a, cav_b = cavities
        p = params.latch
        k = cav_a.kappa
        H = _latch_hamiltonian(cav_a, cav_b, p, 1j * np.sqrt(k / 2))
        c, s, e = np.cos(p.theta), np.sin(p.theta), np.exp(1j * p.phi)
        a, b = cav_a.a, cav_b.a
        g = np.sqrt(k / 2 * (1 + c**2))
        Ls = (a * g, a * (np.sqrt(k / 2) * s * e) - b * np.sqrt(k),
              b * g, b * (np.sqrt(k / 2) * s * e) - a * np.sqrt(k))
        return Generator(H, Ls, a.space)
    raise ValueError(f"unknown gate kind {kind!r}")


def gate_master_equation(kind: str, cavities, drives: Mapping[str, complex],
                         params: GateParams = DEFAULT_PARAMS) -> tuple[Operator, list[Operator]]:
    """Hamiltonian and collapse operators of a gate's compact Lindblad form at fixed drives."""
    gen = gate_generator(kind, cavities, params)
    full = dict(fixed_drives(kind, params))
    full.update(drives)
    return gen.evaluate(full)


# -- oracle comparison ---------------------------------------------------------------

def random_drives(names, rng: np.random.Generator, scale: float = 10.0) -> dict[str, complex]:
    return {n: complex(scale * rng.normal(), scale * rng.normal()) for n in sorted(names)}


def _traceless(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    return m - np.trace(m) / n * np.eye(n)


def triple_difference(g1: SlhTriple, g2: SlhTriple, drives: Mapping[str, complex]) -> tuple[float, float, float]:
    """Largest S entry difference and operator-norm differences of L entries and H.

    H is compared up to a multiple of the identity.
    """
    from .slh import evaluate
    S1, L1, H1 = evaluate(g1, drives)
    S2, L2, H2 = evaluate(g2, drives, space=g1.space)
    dS = float(np.abs(S1 - S2).max())
    dL = max(float(np.linalg.norm((x - y).toarray(), 2)) for x, y in zip(L1, L2))
    dH = float(np.linalg.norm(_traceless((H1 - H2).toarray()), 2))
    return dS, dL, dH


def oracle_cavities(kind: str, N: int, cavity: CavityParams = CavityParams()):
    single = full_cavity(N, cavity)
    return cavity_pair(single) if kind == "latch" else (single,)


def check_oracle(kind: str, N: int, n_samples: int = 10, seed: int = 0,
                 params: GateParams = DEFAULT_PARAMS, perturb: float = 0.0) -> dict[str, float]:
    """Composed triple against the closed form at random complex drives.

    ``perturb`` adds that multiple of the cavity number operator to the oracle's
    Hamiltonian (negative control).
    """
    cavs = oracle_cavities(kind, N, params.cavity)
    composed = build_gate(kind, cavs, params)
    oracle = closed_form(kind, cavs, params)
    if perturb:
        a = cavs[0].a
        oracle = SlhTriple(oracle.S, oracle.L, oracle.H + ParametricOperator.from_operator(a.dag() @ a * perturb))
    rng = np.random.default_rng(seed)
    worst = np.zeros(3)
    for _ in range(n_samples):
        dr = random_drives(composed.names() | oracle.names(), rng)
        worst = np.maximum(worst, triple_difference(composed, oracle, dr))
    unit = float(np.abs(composed.S.conj().T @ composed.S - np.eye(composed.n)).max())
    return {"dS": float(worst[0]), "dL": float(worst[1]), "dH": float(worst[2]), "unitarity": unit}
