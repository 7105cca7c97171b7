"""Reproduction experiments: bases, steady sweeps, fidelity curves, gate runs.

Each function returns plain arrays or series; the CLI handles files.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import dynamics as dy
from . import gates as gt
from . import reduction as rd
from .fock import SpaceDescriptor, embed, number
from .slh import CavityModel

log = logging.getLogger(__name__)

ALPHA = gt.AndParams().alpha


# -- cavity models ------------------------------------------------------------------

def cavity_steady_state(cavity: CavityModel, eps: complex) -> np.ndarray:
    G = gt.build_driven_cavity(cavity)
    H, Ls = dy.lindblad_operators(G, {"epsilon": eps})
    return dy.steady_state(H, Ls)


def jade_basis(N: int = 75, d: int = 15, lam: float = ALPHA,
               cavity: gt.CavityParams = gt.CavityParams(), **jade_kw) -> rd.ReductionBasis:
    """Reduction basis from the steady states at drive ``lam`` and at zero drive."""
    if lam == 0:
        raise rd.ReductionError("lambda = 0 gives rho_lambda = rho_0; nothing to diagonalize jointly")
    if d == N:
        return rd.full_basis(N)
    full = gt.full_cavity(N, cavity)
    rho_lam = cavity_steady_state(full, lam)
    rho_0 = cavity_steady_state(full, 0.0)
    return rd.build_basis(rho_lam, rho_0, d, lam=lam, **jade_kw)


def reduced_cavity(basis: rd.ReductionBasis, cavity: gt.CavityParams = gt.CavityParams()) -> CavityModel:
    return rd.reduced_kerr_cavity(basis, cavity.kappa, cavity.detuning, cavity.chi)


# -- steady sweep and fidelity ----------------------------------------------------------

def steady_sweep(cavity: CavityModel, eps_grid: Sequence[float]) -> dict[str, np.ndarray]:
    """``|<eta_refl>|`` (channel 1) and ``|<eta_trans>|`` (channel 2) at each drive."""
    G = gt.build_driven_cavity(cavity)
    refl, trans = [], []
    for eps in eps_grid:
        drives = {"epsilon": eps}
        H, Ls = dy.lindblad_operators(G, drives)
        rho = dy.steady_state(H, Ls)
        refl.append(abs(dy.output_mean(G, rho, drives, 1)))
        trans.append(abs(dy.output_mean(G, rho, drives, 2)))
    return {"eps": np.asarray(eps_grid, dtype=float), "reflected": np.array(refl), "transmitted": np.array(trans)}


def max_slope_interval(eps: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    """Grid interval with the steepest forward difference, and that slope."""
    slope = np.diff(values) / np.diff(eps)
    i = int(np.argmax(slope))
    return float(eps[i]), float(eps[i + 1]), float(slope[i])


def relative_deviation(reference: np.ndarray, other: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    """Pointwise ``|other - reference| / |reference|``; NaN where the reference vanishes."""
    ref = np.abs(reference)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(ref > floor, np.abs(other - reference) / ref, np.nan)


def fidelity_curve(basis: rd.ReductionBasis, eps: float, d_grid: Sequence[int],
                   cavity: gt.CavityParams = gt.CavityParams()) -> dict[str, np.ndarray]:
    """Fidelity of the embedded reduced steady states against the full one, per ``d``."""
    N = basis.N
    rho = cavity_steady_state(gt.full_cavity(N, cavity), eps)
    fj, ff = [], []
    for d in d_grid:
        if not 1 <= d <= N:
            raise ValueError(f"d={d} outside [1, {N}]")
        bj = basis.truncate(d) if d < N else rd.full_basis(N)
        rj = cavity_steady_state(reduced_cavity(bj, cavity), eps)
        fj.append(rd.fidelity(rho, rd.embed_jade_state(rj, bj)))
        bf = rd.fock_truncation_basis(N, d)
        rf = cavity_steady_state(reduced_cavity(bf, cavity), eps)
        ff.append(rd.fidelity(rho, rd.embed_fock_state(rf, d, N)))
    return {"d": np.asarray(d_grid, dtype=int), "jade": np.array(fj), "fock": np.array(ff)}


# -- schedules ----------------------------------------------------------------------

def gate_schedule(kind: str, alpha: float = ALPHA, ramp: float = 0.2) -> dy.DriveSchedule:
    """Input switching schedules used for the gate runs."""
    a = alpha
    if kind == "and":
        seg = [(0, 2, {"xi1": 0, "xi2": 0}), (2, 4, {"xi1": a, "xi2": a}), (4, 6, {"xi1": a, "xi2": 0}),
               (6, 8, {"xi1": a, "xi2": a}), (8, 10, {"xi1": 0, "xi2": a}), (10, 12, {"xi1": 0, "xi2": 0})]
    elif kind == "not":
        seg = [(0, 2, {"xi": 0}), (2, 4, {"xi": a}), (4, 6, {"xi": 0})]
    elif kind == "latch":
        seg = [(0, 2, {"S_bar": 0, "R_bar": a}), (2, 4, {"S_bar": a, "R_bar": a}), (4, 6, {"S_bar": a, "R_bar": 0}),
               (6, 8, {"S_bar": a, "R_bar": a}), (8, 10, {"S_bar": 0, "R_bar": a})]
    else:
        raise ValueError(f"unknown gate kind {kind!r}")
    return dy.DriveSchedule(seg, ramp_duration=ramp)


def sweep_schedule(rate: float = 4.0, t_end: float = 10.0) -> dy.DriveSchedule:
    """``epsilon(t) = rate * t``."""
    return dy.DriveSchedule.from_knots([(0.0, {"epsilon": 0.0}), (t_end, {"epsilon": rate * t_end})])


# -- gate runs ----------------------------------------------------------------------

@dataclass
class GateSetup:
    kind: str
    cavities: tuple
    generator: dy.Generator
    observables: list
    fixed: dict
    psi0: np.ndarray


def gate_setup(kind: str, single: CavityModel, params: gt.GateParams = gt.DEFAULT_PARAMS,
               basis: rd.ReductionBasis | None = None, compact: bool = True) -> GateSetup:
    """Gate generator, observables and initial state for a cavity model.

    ``basis`` marks a reduced cavity; the initial state is then the projected
    vacuum. Observables are the output field for AND/NOT and the photon
    numbers of both cavities for the latch.
    """
    d = single.a.space.total_dim
    v0 = rd.reduced_vacuum(basis) if basis is not None else _vacuum(d)
    if kind == "latch":
        cavities = gt.cavity_pair(single)
        space = cavities[0].a.space
        n_local = _local_number(single, basis)
        obs = [dy.Observable("n_a", embed(n_local, space, 0)), dy.Observable("n_b", embed(n_local, space, 1))]
        psi0 = np.kron(v0, v0)
    else:
        cavities = (single,)
        G = gt.build_gate(kind, cavities, params)
        obs = [dy.channel_observable(G, gt.OUTPUT_CHANNEL[kind], label="eta")]
        psi0 = v0
    gen = gt.gate_generator(kind, cavities, params) if compact else dy.Generator.from_slh(
        gt.build_gate(kind, cavities, params))
    return GateSetup(kind, cavities, gen, obs, gt.fixed_drives(kind, params), psi0)


def _vacuum(d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[0] = 1.0
    return v


def _local_number(single: CavityModel, basis: rd.ReductionBasis | None) -> np.ndarray:
    """Photon number on one cavity: compressed Fock number operator for reduced models."""
    d = single.a.space.total_dim
    if basis is None:
        return np.diag(np.arange(d, dtype=float)).astype(complex)
    full = number(SpaceDescriptor((basis.N,)))
    return rd.reduce_operator(full, basis).toarray()


def run_gate(setup: GateSetup, schedule: dy.DriveSchedule, times: Sequence[float], method: str = "mcwf",
             config: dy.TrajectoryConfig | None = None) -> dy.ExpectationSeries:
    t0 = time.perf_counter()
    if method == "mcwf":
        out = dy.mcwf_ensemble(setup.psi0, setup.generator, schedule, times, config or dy.TrajectoryConfig(),
                               setup.observables, fixed=setup.fixed)
    elif method == "me":
        out = dy.master_evolve(setup.psi0, setup.generator, schedule, times, setup.observables, fixed=setup.fixed)
    else:
        raise ValueError(f"unknown method {method!r}")
    log.info("%s gate (%s, dim %d): %.1f s", setup.kind, method, setup.generator.space.total_dim,
             time.perf_counter() - t0)
    return out


def segment_plateaus(series: dy.ExpectationSeries, label: str, schedule: dy.DriveSchedule,
                     settle: float = 1.0, magnitude: bool = True) -> list[tuple[float, float, float]]:
    """Mean of ``label`` over the last part of each segment (after ``settle``)."""
    out = []
    vals = series[label]
    vals = np.abs(vals) if magnitude else vals.real
    for a, b, _ in schedule.segments:
        m = (series.times >= a + settle) & (series.times <= b)
        out.append((a, b, float(vals[m].mean()) if m.any() else float("nan")))
    return out
