"""Master-equation and quantum-trajectory dynamics of SLH systems.

The Lindblad generator of a triple is taken in collapse form: constant
offsets of the couplings are moved into the Hamiltonian so that trajectories
only jump on the operator parts. Drives follow a :class:`DriveSchedule`.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .fock import Operator, QuantumState, SpaceDescriptor, clean_density, identity
from .slh import DriveExpr, ParametricOperator, SlhTriple, UnboundDrive, _key_value, collapse_form

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    pass


class SteadyStateError(RuntimeError):
    pass


# -- drive schedules ----------------------------------------------------------

class DriveSchedule:
    """Piecewise-linear drive levels.

    Built from contiguous constant segments; at each segment start the drives
    move linearly from the previous level to the new one over
    ``ramp_duration``. Arbitrary piecewise-linear profiles can be given as
    knots with :meth:`from_knots`.
    """

    def __init__(self, segments: Sequence[tuple[float, float, Mapping[str, complex]]], ramp_duration: float = 0.2):
        if not segments:
            raise ValueError("schedule needs at least one segment")
        segments = [(float(a), float(b), dict(lv)) for a, b, lv in segments]
        for (a, b, _), (c, _, _) in zip(segments, segments[1:]):
            if abs(b - c) > 1e-12:
                raise ValueError(f"segments must be contiguous: {b} != {c}")
        for a, b, _ in segments:
            if b < a:
                raise ValueError(f"segment end {b} before start {a}")
        self.segments = segments
        self.ramp_duration = float(ramp_duration)
        names = sorted(set().union(*(lv.keys() for _, _, lv in segments)))
        level = lambda lv, n: complex(lv.get(n, 0.0))
        knots = [(segments[0][0], {n: level(segments[0][2], n) for n in names})]
        for i, (a, b, lv) in enumerate(segments):
            new = {n: level(lv, n) for n in names}
            if i > 0 and new != knots[-1][1]:
                ramp_end = min(a + self.ramp_duration, b) if b > a else a
                if ramp_end - a > 0:
                    knots.append((a, knots[-1][1]))
                    knots.append((ramp_end, new))
                else:
                    knots.append((a, new))
            knots.append((b, new))
        self._set_knots(knots)

    @classmethod
    def from_knots(cls, knots: Sequence[tuple[float, Mapping[str, complex]]]) -> "DriveSchedule":
        obj = cls.__new__(cls)
        knots = [(float(t), {k: complex(v) for k, v in lv.items()}) for t, lv in knots]
        obj.segments = [(knots[0][0], knots[-1][0], knots[-1][1])]
        obj.ramp_duration = 0.0
        obj._set_knots(knots)
        return obj

    @classmethod
    def constant(cls, levels: Mapping[str, complex], t_end: float, t_start: float = 0.0) -> "DriveSchedule":
        return cls([(t_start, t_end, levels)])

    def _set_knots(self, knots):
        times = np.array([t for t, _ in knots])
        if np.any(np.diff(times) < 0):
            raise ValueError("knot times must be non-decreasing")
        names = sorted(set().union(*(lv.keys() for _, lv in knots)))
        self.names = names
        self._times = times
        self._stack = np.array([[complex(lv.get(n, 0.0)) for _, lv in knots] for n in names],
                               dtype=complex).reshape(len(names), len(knots))
        span = np.diff(times)
        inv = np.divide(1.0, span, out=np.zeros_like(span), where=span > 0)
        self._slope = np.diff(self._stack, axis=1) * inv

    @property
    def t_start(self) -> float:
        return float(self._times[0])

    @property
    def t_end(self) -> float:
        return float(self._times[-1])

    def breakpoints(self) -> np.ndarray:
        return np.unique(self._times)

    def values(self, t) -> dict:
        """Drive values at scalar or array ``t`` (held constant outside the knots)."""
        mat = self.values_matrix(t)
        scalar = np.ndim(t) == 0
        return {n: (complex(mat[i]) if scalar else mat[i]) for i, n in enumerate(self.names)}

    def values_matrix(self, t) -> np.ndarray:
        """Stacked drive values, shape ``(len(names),) + shape(t)``, in ``names`` order."""
        t_arr = np.asarray(t, dtype=float)
        xp = self._times
        if len(xp) == 1:
            return np.broadcast_to(self._stack[:, :1].reshape((-1,) + (1,) * t_arr.ndim),
                                   (len(self.names),) + t_arr.shape).copy()
        # right-continuous at repeated knot times, so a step change takes effect at its time
        tc = np.minimum(np.maximum(t_arr, xp[0]), xp[-1])
        i = np.minimum(np.searchsorted(xp, tc, side="right") - 1, len(xp) - 2)
        return self._stack[:, i] + self._slope[:, i] * (tc - xp[i])


# -- Lindblad generators ----------------------------------------------------------

def lindblad_apply(rho: np.ndarray, H: Operator, Ls: Sequence[Operator]) -> np.ndarray:
    """``-i[H, rho] + sum_j (L rho L* - {L*L, rho}/2)`` on a dense density matrix."""
    n = H.space.total_dim
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (n, n):
        raise ValueError(f"density matrix shape {rho.shape} does not match space of side {n}")
    Hd = H.data
    out = -1j * (Hd @ rho - (Hd.T @ rho.T).T)
    for L in Ls:
        if L.space != H.space:
            raise ValueError("collapse operator space mismatch")
        Ld = L.data
        LdL = Ld.conj().T @ Ld
        out += Ld @ (Ld @ rho.conj().T).conj().T - 0.5 * (LdL @ rho + (LdL.T @ rho.T).T)
    return out


def liouvillian(H: Operator, Ls: Sequence[Operator]) -> sp.csr_matrix:
    """Sparse superoperator acting on column-stacked density matrices."""
    n = H.space.total_dim
    I = sp.identity(n, dtype=complex, format="csr")
    Hd = H.data
    L = -1j * (sp.kron(I, Hd) - sp.kron(Hd.T, I))
    for op in Ls:
        c = op.data
        cdc = (c.conj().T @ c).tocsr()
        L = L + sp.kron(c.conj(), c) - 0.5 * sp.kron(I, cdc) - 0.5 * sp.kron(cdc.T, I)
    return L.tocsr()


def lindblad_operators(G, drives: Mapping[str, complex]) -> tuple[Operator, list[Operator]]:
    """Concrete ``(H, collapse operators)`` of a triple or generator at fixed drives."""
    gen = as_generator(G)
    missing = gen.names() - set(drives)
    if missing:
        raise UnboundDrive(", ".join(sorted(missing)))
    return gen.evaluate(drives)


def steady_state(H: Operator, Ls: Sequence[Operator], residual_tol: float = 1e-8) -> np.ndarray:
    """Unique stationary density matrix of the Lindblad generator.

    Solves the sparse linear system with one equation replaced by the trace
    constraint, then checks the residual of the untouched generator.
    """
    n = H.space.total_dim
    Lv = liouvillian(H, Ls)
    A = Lv.tolil()
    trace_row = np.zeros(n * n, dtype=complex)
    trace_row[np.arange(n) * (n + 1)] = 1.0
    A[0, :] = trace_row
    b = np.zeros(n * n, dtype=complex)
    b[0] = 1.0
    try:
        x = spla.splu(A.tocsc()).solve(b)
    except RuntimeError as exc:
        raise SteadyStateError(f"singular Liouvillian: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SteadyStateError("steady-state solve produced non-finite values")
    rho = x.reshape((n, n), order="F")
    residual = float(np.linalg.norm(Lv @ x))
    if residual > residual_tol:
        raise SteadyStateError(f"steady-state residual {residual:.3g} exceeds {residual_tol:.3g}")
    return clean_density(rho)


def steady_state_slh(G, drives: Mapping[str, complex], **kw) -> np.ndarray:
    H, Ls = lindblad_operators(G, drives)
    return steady_state(H, Ls, **kw)


# -- observables and results ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class Observable:
    """``<op> + offset(drives)``; the offset carries constant parts of output fields."""

    label: str
    op: Operator
    offset: DriveExpr = field(default_factory=DriveExpr)


def channel_observable(G: SlhTriple, channel: int, label: str | None = None) -> Observable:
    """Mean output field of channel ``channel`` (1-based), ``<L_k>`` including drive constants."""
    if not 1 <= channel <= G.n:
        raise IndexError(f"channel {channel} out of range for n={G.n}")
    L = G.L[channel - 1]
    if any(k is not None for k in L.ops):
        raise ValueError("output operator depends on the drives")
    op = L.ops.get(None)
    if op is None:
        op = identity(G.space) * 0
    return Observable(label or f"eta{channel}", op, L.scalar_part())


def _as_observables(observables) -> list[Observable]:
    out = []
    for i, o in enumerate(observables or []):
        out.append(o if isinstance(o, Observable) else Observable(f"obs{i}", o))
    return out


def output_mean(G: SlhTriple, state, drives: Mapping[str, complex], channel: int) -> complex:
    """``<L_k>`` of channel ``k`` (1-based) in a pure or mixed state."""
    if not 1 <= channel <= G.n:
        raise IndexError(f"channel {channel} out of range for n={G.n}")
    missing = G.L[channel - 1].names() - set(drives)
    if missing:
        raise UnboundDrive(", ".join(sorted(missing)))
    op = G.L[channel - 1].evaluate(drives, G.space)
    if not isinstance(state, QuantumState):
        state = QuantumState(G.space, state)
    return state.expect(op)


@dataclass
class ExpectationSeries:
    times: np.ndarray
    labels: list[str]
    mean: np.ndarray  # (n_obs, n_times) complex
    stderr: np.ndarray | None = None  # (n_obs, n_times), trajectory runs only
    n_trajectories: int | None = None
    final_state: np.ndarray | None = None
    states: np.ndarray | None = None  # (n_times, n, n) when requested

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if self.mean.shape != (len(self.labels), len(self.times)):
            raise ValueError("series shape does not match labels and grid")

    def __getitem__(self, label: str) -> np.ndarray:
        return self.mean[self.labels.index(label)]

    def err(self, label: str) -> np.ndarray:
        if self.stderr is None:
            return np.zeros(len(self.times))
        return self.stderr[self.labels.index(label)]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["time"]
            for lab in self.labels:
                header += [f"{lab}_re", f"{lab}_im", f"{lab}_abs", f"{lab}_stderr"]
            w.writerow(header)
            for j, t in enumerate(self.times):
                row = [repr(float(t))]
                for i in range(len(self.labels)):
                    m = self.mean[i, j]
                    se = 0.0 if self.stderr is None else self.stderr[i, j]
                    row += [repr(float(m.real)), repr(float(m.imag)), repr(float(abs(m))), repr(float(se))]
                w.writerow(row)


# -- time-dependent generator ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Generator:
    """Lindblad generator with a drive-affine Hamiltonian and fixed collapse operators."""

    H: ParametricOperator
    collapse: tuple
    space: SpaceDescriptor

    def __post_init__(self):
        object.__setattr__(self, "collapse", tuple(ParametricOperator.coerce(c) for c in self.collapse))

    @classmethod
    def from_slh(cls, G: SlhTriple) -> "Generator":
        H, collapse = collapse_form(G)
        return cls(H, tuple(collapse), G.space)

    def names(self) -> set[str]:
        out = set(self.H.names())
        for c in self.collapse:
            out |= c.names()
        return out

    def evaluate(self, drives: Mapping[str, complex]) -> tuple[Operator, list[Operator]]:
        return (self.H.evaluate(drives, self.space),
                [c.evaluate(drives, self.space) for c in self.collapse])


def as_generator(G) -> Generator:
    return G if isinstance(G, Generator) else Generator.from_slh(G)


class _AffineModel:
    """Generator bound to a drive schedule, split into static and driven parts."""

    def __init__(self, G, schedule: DriveSchedule, fixed: Mapping[str, complex] | None = None):
        gen = as_generator(G)
        H, collapse = gen.H, [ParametricOperator.coerce(c) for c in gen.collapse]
        space = gen.space
        self.space = space
        self.fixed = dict(fixed or {})
        self.schedule = schedule
        missing = gen.names() - set(schedule.names) - set(self.fixed)
        if missing:
            raise UnboundDrive(", ".join(sorted(missing)))
        self.collapse = []
        for A in collapse:
            if any(k is not None for k in A.ops):
                raise ValueError("collapse operators must not depend on the drives")
            self.collapse.append(A.ops[None])
        self.h0 = H.ops.get(None, identity(space) * 0)
        # drive terms split into scheduled keys and fixed ones folded into h0
        self.keys = []
        self.hk = []
        for k, op in H.ops.items():
            if k is None:
                continue
            if k[0] in self.fixed and k[0] not in schedule.names:
                self.h0 = self.h0 + op * _key_value(k, self.fixed)
            else:
                self.keys.append(k)
                self.hk.append(op)
        rows = {n: i for i, n in enumerate(schedule.names)}
        self._key_rows = [(rows[name], conj) for name, conj in self.keys]

    def drive_values(self, t) -> list:
        mat = self.schedule.values_matrix(t)
        return [np.conj(mat[i]) if conj else mat[i] for i, conj in self._key_rows]

    def all_drives(self, t) -> dict:
        d = dict(self.fixed)
        d.update(self.schedule.values(t))
        return d


def _make_evaluator(op: Operator):
    n = op.space.total_dim
    if op.data.nnz > 0.2 * n * n:
        return op.toarray()
    return op.data.tocsr()


def _observable_values(obs: Sequence[Observable], model: _AffineModel, t: float) -> np.ndarray:
    drives = model.all_drives(t)
    return np.array([o.offset.evaluate(drives) for o in obs], dtype=complex)


def master_evolve(rho0, G, schedule: DriveSchedule, times: Sequence[float],
                  observables=(), fixed: Mapping[str, complex] | None = None,
                  rtol: float = 1e-8, atol: float = 1e-10, method: str = "DOP853",
                  keep_states: bool = False) -> ExpectationSeries:
    """Integrate the master equation of ``G`` under ``schedule``.

    ``fixed`` binds drives not covered by the schedule (bias inputs). Returns
    expectations on ``times`` with the final density matrix attached, and the
    density matrix at every grid point if ``keep_states``.
    """
    model = _AffineModel(G, schedule, fixed)
    obs = _as_observables(observables)
    n = model.space.total_dim
    rho = rho0.density() if isinstance(rho0, QuantumState) else np.asarray(rho0, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    if rho.shape != (n, n):
        raise ValueError("initial state does not match the system space")
    times = np.asarray(times, dtype=float)

    cdc = sum((c.data.conj().T @ c.data for c in model.collapse), sp.csr_matrix((n, n), dtype=complex))
    M0 = _make_evaluator(Operator(model.space, -1j * (model.h0.data - 0.5j * cdc)))
    Mk = [_make_evaluator(Operator(model.space, -1j * h.data)) for h in model.hk]
    Cs = [_make_evaluator(c) for c in model.collapse]
    dense_drive = isinstance(M0, np.ndarray) and all(isinstance(M, np.ndarray) for M in Mk)

    def rhs(t, y):
        r = y.reshape(n, n)
        vals = model.drive_values(t)
        if dense_drive:
            M = M0.copy()
            for Mi, v in zip(Mk, vals):
                M += v * Mi
            X = M @ r
        else:
            X = M0 @ r
            for Mi, v in zip(Mk, vals):
                X += v * (Mi @ r)
        out = X + X.conj().T
        for C in Cs:
            Z = C @ (C @ r.conj().T).conj().T
            out += 0.5 * (Z + Z.conj().T)
        return out.ravel()

    obs_mats = [o.op.data for o in obs]
    means = np.zeros((len(obs), len(times)), dtype=complex)
    states = np.zeros((len(times), n, n), dtype=complex) if keep_states else None

    def record(j, r):
        if keep_states:
            states[j] = clean_density(r)
        offs = _observable_values(obs, model, times[j])
        for i, M in enumerate(obs_mats):
            means[i, j] = (M @ r).trace() + offs[i]

    knots = np.unique(np.concatenate([schedule.breakpoints(), times]))
    knots = knots[(knots >= times[0]) & (knots <= times[-1])]
    y = rho.ravel().copy()
    j = 0
    if abs(times[0] - knots[0]) < 1e-15:
        record(0, rho)
        j = 1
    t_now = knots[0]
    segment_ends = [k for k in schedule.breakpoints() if times[0] < k < times[-1]] + [times[-1]]
    for t_end in segment_ends:
        if t_end <= t_now:
            continue
        mask = (times > t_now) & (times <= t_end)
        t_eval = times[mask]
        sol = solve_ivp(rhs, (t_now, t_end), y, method=method, rtol=rtol, atol=atol,
                        t_eval=t_eval if len(t_eval) else None)
        if not sol.success:
            raise IntegrationError(sol.message)
        for col in range(len(t_eval)):
            r = sol.y[:, col].reshape(n, n)
            record(j, r)
            j += 1
        y = sol.y[:, -1] if len(t_eval) and abs(sol.t[-1] - t_end) < 1e-12 else solve_ivp(
            rhs, (t_now, t_end), y, method=method, rtol=rtol, atol=atol).y[:, -1]
        t_now = t_end
    final = clean_density(y.reshape(n, n))
    return ExpectationSeries(times, [o.label for o in obs], means, final_state=final, states=states)


# -- quantum trajectories ------------------------------------------------------------

@dataclass
class TrajectoryConfig:
    n_trajectories: int = 100
    seed: int = 0
    step_scale: float = 2.0  # step length times the generator norm bound
    max_step: float | None = None
    batch_size: int = 25
    workers: int = 1
    dense_propagator: bool | None = None  # None: decided from the operator sizes

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Random stream of trajectory ``index``; independent of the ensemble size."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _norm_bound(mat) -> float:
    """Spectral norm (estimated for large sparse matrices)."""
    if sp.issparse(mat):
        if mat.nnz == 0:
            return 0.0
        if mat.shape[0] <= 2000:
            return float(np.linalg.norm(mat.toarray(), 2))
        return float(spla.svds(mat, k=1, return_singular_vectors=False, random_state=0)[0]) * 1.01
    return float(np.linalg.norm(mat, 2)) if mat.size else 0.0


_TAYLOR_TOL = 1e-14


class _BatchPropagator:
    """Propagation of a block of unnormalized trajectories with jumps.

    The no-jump evolution ``psi' = G(t) psi`` has ``G`` affine in time on every
    piece of the drive schedule, so its Taylor coefficients follow the exact
    recursion ``(n+1) c[n+1] = A c[n] + B c[n-1]``. The squared norm is then a
    polynomial in the elapsed time and jump times are its roots. Constant
    pieces of moderate dimension use a cached dense ``expm(G h)`` for the
    steps without jumps.
    """

    def __init__(self, model: _AffineModel, config: TrajectoryConfig, times: np.ndarray, obs: Sequence[Observable]):
        self.model = model
        n = model.space.total_dim
        cdc = sum((c.data.conj().T @ c.data for c in model.collapse), sp.csr_matrix((n, n), dtype=complex))
        m0 = -1j * (model.h0.data - 0.5j * cdc)
        self.M0 = _make_evaluator(Operator(model.space, m0))
        self.Mk = [_make_evaluator(Operator(model.space, -1j * h.data)) for h in model.hk]
        self.C = [_make_evaluator(c) for c in model.collapse]
        self.obs = [_make_evaluator(o.op) for o in obs]
        self.times = times
        self.breaks = model.schedule.breakpoints()
        # generator norm bound over the schedule's drive range
        tt = np.linspace(times[0], times[-1], 2001)
        vmax = [np.abs(v).max() if np.ndim(v) else abs(v) for v in model.drive_values(tt)]
        bound = _norm_bound(self.M0) + sum(m * _norm_bound(M) for m, M in zip(vmax, self.Mk))
        h = config.step_scale / max(bound, 1e-12)
        if config.max_step is not None:
            h = min(h, config.max_step)
        self.h_max = h
        self.config = config
        if config.dense_propagator is None:
            nnz = sum(M.size if isinstance(M, np.ndarray) else M.nnz for M in [self.M0, *self.Mk])
            # one dense product against roughly 25 sparse Taylor terms
            self.use_expm = n <= 3000 and n * n <= 25 * nnz
        else:
            self.use_expm = bool(config.dense_propagator)
        self._cache: dict = {}

    # -- generator pieces ----------------------------------------------------------

    def _apply(self, psi, vals, prev_mk, slopes):
        """``A psi`` per column plus the ``B`` term from the previous order."""
        mk = [M @ psi for M in self.Mk]
        out = self.M0 @ psi
        for v, x in zip(vals, mk):
            out = out + x * v
        if prev_mk is not None:
            for sl, x in zip(slopes, prev_mk):
                if sl != 0:
                    out = out + x * sl
        return out, mk

    def _taylor(self, psi, vals, slopes, s, A=None):
        """Taylor coefficients of the no-jump evolution, converged on ``[0, s]`` per column.

        ``A`` is the combined generator of a constant piece; otherwise the
        per-column drive values ``vals`` and the piece ``slopes`` are used.
        """
        coefs = [psi]
        scale = np.maximum(np.linalg.norm(psi, axis=0), 1e-300)
        prev = None
        small = 0
        for k in range(400):
            if A is not None:
                nxt = A @ coefs[-1]
            else:
                nxt, prev = self._apply(coefs[-1], vals, prev if k > 0 else None, slopes)
            nxt = nxt / (k + 1)
            coefs.append(nxt)
            term = np.max(np.linalg.norm(nxt, axis=0) * s ** (k + 1) / scale)
            small = small + 1 if term < _TAYLOR_TOL else 0
            if small >= 2:
                return coefs
        raise IntegrationError("Taylor series of the trajectory step did not converge")

    @staticmethod
    def _horner(coefs, s):
        out = coefs[-1].copy()
        for c in coefs[-2::-1]:
            out = out * s + c
        return out

    @staticmethod
    def _norm_poly(coefs):
        """Coefficients (low order first) of the squared norm, per column."""
        C = np.stack(coefs).transpose(2, 0, 1)  # (columns, orders, dim)
        gram = np.matmul(C.conj(), C.transpose(0, 2, 1)).real
        K = len(coefs)
        poly = np.zeros((2 * K - 1, C.shape[0]))
        for a in range(K):
            poly[a:a + K] += gram[:, a, :].T
        return poly

    def _values(self, t0, t1):
        """Drive values at ``t0`` and slopes on ``[t0, t1]`` (one linear piece)."""
        v0 = np.array(self.model.drive_values(t0), dtype=complex).reshape(-1)
        v1 = np.array(self.model.drive_values(t1), dtype=complex).reshape(-1)
        return v0, (v1 - v0) / (t1 - t0)

    def _cached(self, key, build):
        out = self._cache.get(key)
        if out is None:
            if len(self._cache) >= 16:
                self._cache.pop(next(iter(self._cache)))
            out = self._cache[key] = build()
        return out

    def _generator(self, v0):
        """``M0 + sum v_k M_k`` for constant drives, dense or sparse like ``M0``."""
        def build():
            G = self.M0.copy()
            for v, M in zip(v0, self.Mk):
                G = G + v * (M.toarray() if isinstance(G, np.ndarray) and sp.issparse(M) else M)
            return G if isinstance(G, np.ndarray) else sp.csr_matrix(G)
        return self._cached(("G", tuple(np.round(v0, 12))), build)

    def _expm(self, v0, h):
        def build():
            G = self._generator(v0)
            return expm((G.toarray() if sp.issparse(G) else G) * h)
        return self._cached(("U", round(h, 15), tuple(np.round(v0, 12))), build)

    @staticmethod
    def _first_crossing(poly, h, target):
        """Smallest root of ``poly(u) = target`` per column for ``u`` in ``[0, 1]``, times ``h``.

        ``poly`` holds low-order-first coefficients in the scaled time ``u``;
        brackets are refined on 64-point grids.
        """
        m = poly.shape[1]
        lo, hi = np.zeros(m), np.ones(m)
        grid = np.linspace(0.0, 1.0, 65)[:, None]
        for _ in range(4):
            u = lo + (hi - lo) * grid
            val = np.broadcast_to(poly[-1], u.shape).copy()
            for c in poly[-2::-1]:
                val = val * u + c
            below = val < target
            below[-1] = True
            first = np.argmax(below, axis=0)
            first = np.maximum(first, 1)
            cols = np.arange(m)
            lo, hi = u[first - 1, cols], u[first, cols]
        return hi * h

    # -- trajectories ------------------------------------------------------------------

    def substeps(self, t0, t1):
        """Split ``[t0, t1]`` at schedule knots, then into steps no longer than ``h_max``."""
        cuts = [t0] + [b for b in self.breaks if t0 < b < t1] + [t1]
        out = []
        for a, b in zip(cuts, cuts[1:]):
            m = max(1, int(math.ceil((b - a) / self.h_max - 1e-9)))
            out += [(a + (b - a) * i / m, a + (b - a) * (i + 1) / m) for i in range(m)]
        return out

    def run(self, psi0: np.ndarray, indices: Sequence[int]):
        B = len(indices)
        rngs = [trajectory_rng(self.config.seed, j) for j in indices]
        psi = np.repeat(psi0[:, None], B, axis=1).astype(complex)
        r = np.array([g.random() for g in rngs])
        times = self.times
        nt = len(times)
        vals = np.zeros((len(self.obs), nt, B), dtype=complex)
        self._record(vals, 0, psi)
        for i in range(nt - 1):
            for t0, t1 in self.substeps(times[i], times[i + 1]):
                psi = self._advance(psi, r, t0, t1, rngs)
            self._record(vals, i + 1, psi)
        return vals

    def _record(self, vals, j, psi):
        nrm = np.einsum("ij,ij->j", psi.conj(), psi).real
        for o, M in enumerate(self.obs):
            vals[o, j] = np.einsum("ij,ij->j", psi.conj(), M @ psi) / nrm

    def _advance(self, psi, r, t0, t1, rngs):
        h = t1 - t0
        v0, slopes = self._values(t0, t1)
        const = not np.any(slopes)
        A = self._generator(v0) if const else None
        if const and self.use_expm:
            new = self._expm(v0, h) @ psi
        else:
            new = self._horner(self._taylor(psi, v0[:, None], slopes, h, A), h)
        nrm = np.einsum("ij,ij->j", new.conj(), new).real
        idx = np.flatnonzero(nrm < r)
        out = new
        if not len(idx):
            return out
        cur = psi[:, idx]
        tc = np.full(len(idx), t0)
        while len(idx):
            s = t1 - tc
            vals = v0[:, None] + slopes[:, None] * (tc - t0)[None, :]
            coefs = self._taylor(cur, vals, slopes, s, A)
            end = self._horner(coefs, s)
            end_n = np.einsum("ij,ij->j", end.conj(), end).real
            cross = end_n < r[idx]
            for j in np.flatnonzero(~cross):
                out[:, idx[j]] = end[:, j]
            if not cross.any():
                break
            sub = np.flatnonzero(cross)
            sc = s[sub]
            # squared norm as a polynomial in the scaled time u = elapsed / s
            scaled = [c[:, sub] * sc ** k for k, c in enumerate(coefs)]
            tau = self._first_crossing(self._norm_poly(scaled), sc, r[idx[sub]])
            at = self._horner([c[:, sub] for c in coefs], tau)
            nxt = self._jump(at, [rngs[idx[j]] for j in sub])
            for j in sub:
                r[idx[j]] = rngs[idx[j]].random()
            tnew = tc[sub] + tau
            # a jump landing on the step end finishes the column
            fin = tnew >= t1 - 1e-15 * max(1.0, abs(t1))
            for m in np.flatnonzero(fin):
                out[:, idx[sub[m]]] = nxt[:, m]
            keep = ~fin
            idx, cur, tc = idx[sub[keep]], nxt[:, keep], tnew[keep]
        return out

    def _jump(self, phi, rngs):
        """Apply a randomly chosen collapse operator to each column of ``phi``."""
        outs = np.stack([C @ phi for C in self.C])  # (channels, dim, columns)
        w = np.einsum("kij,kij->kj", outs.conj(), outs).real
        tot = w.sum(axis=0)
        if not np.all(np.isfinite(tot)) or np.any(tot <= 0):
            raise IntegrationError("jump with vanishing rate")
        cum = np.cumsum(w, axis=0) / tot
        res = np.empty_like(phi)
        for m, rng in enumerate(rngs):
            k = min(int(np.searchsorted(cum[:, m], rng.random(), side="right")), len(self.C) - 1)
            res[:, m] = outs[k, :, m] / np.sqrt(w[k, m])
        return res


def mcwf_ensemble(psi0, G, schedule: DriveSchedule, times: Sequence[float],
                  config: TrajectoryConfig = TrajectoryConfig(), observables=(),
                  fixed: Mapping[str, complex] | None = None) -> ExpectationSeries:
    """Monte-Carlo wave-function ensemble averages with standard errors.

    Each trajectory draws from its own stream seeded by ``(config.seed, index)``;
    trajectories are propagated in fixed-size blocks so a trajectory's result
    does not depend on how many others run.
    """
    model = _AffineModel(G, schedule, fixed)
    obs = _as_observables(observables)
    times = np.asarray(times, dtype=float)
    psi = psi0.payload if isinstance(psi0, QuantumState) else np.asarray(psi0, dtype=complex)
    if psi.ndim != 1 or psi.shape[0] != model.space.total_dim:
        raise ValueError("initial state must be a vector on the system space")
    if abs(np.linalg.norm(psi) - 1) > 1e-8:
        raise ValueError("initial state must be normalized")
    if not model.collapse:
        raise ValueError("system has no collapse operators")
    prop = _BatchPropagator(model, config, times, obs)
    n = config.n_trajectories
    B = config.batch_size
    batches = [list(range(b, b + B)) for b in range(0, n, B)]
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            results = list(pool.map(lambda idx: prop.run(psi, idx), batches))
    else:
        results = [prop.run(psi, idx) for idx in batches]
    vals = np.concatenate(results, axis=2)[:, :, :n]
    mean = vals.mean(axis=2)
    if n > 1:
        var = vals.real.var(axis=2, ddof=1) + vals.imag.var(axis=2, ddof=1)
        stderr = np.sqrt(var / n)
    else:
        stderr = np.zeros(mean.shape)
    for j, t in enumerate(times):
        mean[:, j] += _observable_values(obs, model, t)
    log.debug("mcwf: %d trajectories, step %.3g", n, prop.h_max)
    return ExpectationSeries(times, [o.label for o in obs], mean, stderr, n)
