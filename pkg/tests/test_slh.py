import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kerrlogic import fock, slh
from kerrlogic.slh import DriveExpr, ParametricOperator, SlhTriple

KAPPA = 25.0


def cavity(N=6):
    return slh.kerr_cavity([N], 0, KAPPA, 50.0, -50.0 / 60.0)


def assert_triples_close(g1, g2, drives=None, tol=1e-10):
    S1, L1, H1 = slh.evaluate(g1, drives, space=g1.space or g2.space)
    S2, L2, H2 = slh.evaluate(g2, drives, space=g1.space or g2.space)
    assert np.abs(S1 - S2).max() <= tol
    for x, y in zip(L1, L2):
        assert (x - y).max_abs() <= tol
    assert (H1 - H2).max_abs() <= tol


def test_concat_identities():
    g = slh.concat(slh.identity_system(1), slh.identity_system(2))
    assert np.array_equal(g.S, np.eye(3))
    assert all(l.is_zero() for l in g.L) and g.H.is_zero()


def test_concat_drive_stage():
    g = slh.concat(slh.displacement("eps"), slh.identity_system(1))
    S, L, H = slh.evaluate(g, {"eps": 2 + 1j}, space=[3])
    assert np.array_equal(S, np.eye(2))
    assert np.allclose(L[0].toarray(), (2 + 1j) * np.eye(3))
    assert L[1].max_abs() == 0 and H.max_abs() == 0


def test_kerr_halves_concat():
    space = fock.SpaceDescriptor((5,))
    a = fock.annihilation(space)
    h0 = fock.kerr_hamiltonian(space, 0, 50.0, -50 / 60)
    g = slh.concat(slh.kerr_half1(a, KAPPA), slh.kerr_half2(a, h0, KAPPA))
    S, L, H = slh.evaluate(g)
    assert np.array_equal(S, np.eye(2))
    for l in L:
        assert (l - a * np.sqrt(KAPPA)).max_abs() < 1e-15
    assert (H - h0).max_abs() == 0


def test_series_phases_compose():
    g = slh.series(slh.phase(0.4), slh.phase(1.1))
    assert np.allclose(g.S, [[np.exp(1.5j)]])


def test_series_identity_neutral():
    g = slh.series(slh.beamsplitter(0.3), slh.identity_system(2))
    assert np.allclose(g.S, slh.beamsplitter(0.3).S)


def test_driven_cavity_series():
    N = 6
    K = cavity(N)
    drive = slh.concat(slh.displacement("eps"), slh.identity_system(1))
    g = slh.series(K, drive)
    eps = 1.5 - 0.5j
    S, L, H = slh.evaluate(g, {"eps": eps})
    a = fock.annihilation([N]).toarray()
    sk = np.sqrt(KAPPA)
    assert np.allclose(L[0].toarray(), sk * a + eps * np.eye(N))
    assert np.allclose(L[1].toarray(), sk * a)
    h0 = fock.kerr_hamiltonian([N], 0, 50.0, -50 / 60).toarray()
    # written for real eps as i (sqrt(kappa)/2) eps (a - a*); general form uses eps* a - eps a*
    expect = h0 + 0.5j * sk * (np.conj(eps) * a - eps * a.conj().T)
    assert np.allclose(H.toarray(), expect)
    S, L, H = slh.evaluate(g, {"eps": 2.0})
    assert np.allclose(H.toarray(), h0 + 0.5j * sk * 2.0 * (a - a.T))


def test_feedback_identity():
    g = slh.feedback(slh.identity_system(2), 1, 2)
    assert g.n == 1 and np.allclose(g.S, [[1]])
    assert g.H.is_zero()


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.0, -0.7])
def test_feedback_beamsplitter_unimodular(theta):
    g = slh.feedback(slh.beamsplitter(theta), 2, 2)
    c, s = np.cos(theta), np.sin(theta)
    # with S = [[c, -s], [s, c]] the loop k=l=2 gives c + (-s)(1-c)^-1 s
    assert np.isclose(g.S[0, 0], c - s * s / (1 - c))
    assert np.isclose(abs(g.S[0, 0]), 1.0)


def test_feedback_singular():
    with pytest.raises(slh.SingularFeedback):
        slh.feedback(slh.identity_system(2), 1, 1)


def test_component_matrices():
    assert np.allclose(slh.beamsplitter(np.pi / 4).S, np.array([[1, -1], [1, 1]]) / np.sqrt(2))
    P = slh.permutation([1, 3, 2]).S
    assert np.array_equal(P, [[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    g = slh.phase(0)
    assert np.allclose(g.S, [[1]]) and g.L[0].is_zero() and g.H.is_zero()
    with pytest.raises(ValueError):
        slh.permutation([1, 1, 2])


def test_non_unitary_rejected():
    with pytest.raises(ValueError):
        SlhTriple(np.array([[1.0, 1.0], [0.0, 1.0]]), [ParametricOperator()] * 2, ParametricOperator())


def test_unbound_drive():
    g = slh.series(cavity(), slh.concat(slh.displacement("eps"), slh.identity_system(1)))
    with pytest.raises(slh.UnboundDrive):
        slh.evaluate(g, {})


def test_vacuum_drive_evaluation():
    K = cavity(5)
    g = slh.series(K, slh.concat(slh.displacement("eps"), slh.identity_system(1)))
    S, L, H = slh.evaluate(g, {"eps": 0})
    a = fock.annihilation([5])
    assert (L[0] - a * np.sqrt(KAPPA)).max_abs() < 1e-14
    assert (H - fock.kerr_hamiltonian([5], 0, 50, -50 / 60)).max_abs() < 1e-14


def test_drive_expr_algebra():
    e = DriveExpr.param("x", 2.0) + 3.0
    assert e.evaluate({"x": 1j}) == 3 + 2j
    assert e.conj().evaluate({"x": 1j}) == 3 - 2j
    assert (e - e).linear == {} and (e - e).constant == 0


def _random_system(rng, n, space):
    """Random unitary S, affine L and Hermitian H on ``space``."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    d = space.total_dim
    L = []
    for k in range(n):
        op = fock.Operator(space, rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
        L.append(ParametricOperator.from_operator(op) + ParametricOperator.from_drive(DriveExpr.param(f"u{k}", rng.normal())))
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = ParametricOperator.from_operator(fock.Operator(space, h + h.conj().T))
    return SlhTriple(q, L, H)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 3))
def test_series_associative(seed, n):
    rng = np.random.default_rng(seed)
    space = fock.SpaceDescriptor((3,))
    g1, g2, g3 = (_random_system(rng, n, space) for _ in range(3))
    drives = {f"u{k}": complex(*rng.normal(size=2)) for k in range(n)}
    assert_triples_close(slh.series(slh.series(g3, g2), g1), slh.series(g3, slh.series(g2, g1)), drives, tol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_composition_keeps_unitarity_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    space = fock.SpaceDescriptor((3,))
    g = slh.series(_random_system(rng, 3, space), _random_system(rng, 3, space))
    k, l = rng.integers(1, 4, size=2)
    if abs(1 - g.S[k - 1, l - 1]) < 1e-6:
        return
    f = slh.feedback(g, int(k), int(l))
    assert np.abs(f.S.conj().T @ f.S - np.eye(2)).max() <= 1e-10
    drives = {f"u{j}": complex(*rng.normal(size=2)) for j in range(3)}
    slh.evaluate(f, drives)  # raises if H is not Hermitian
    # the scattering matrix never picks up drives
    assert f.S.dtype.kind in "fc"


def test_collapse_form_equivalent_dissipator():
    from kerrlogic.dynamics import lindblad_apply
    N = 5
    g = slh.series(cavity(N), slh.concat(slh.displacement("eps"), slh.identity_system(1)))
    drives = {"eps": 1.3 - 0.4j}
    _, L, H = slh.evaluate(g, drives)
    Hc, A = slh.collapse_form(g)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(N, N)) + 1j * rng.normal(size=(N, N))
    rho = x @ x.conj().T
    rho /= np.trace(rho)
    d1 = lindblad_apply(rho, H, L)
    d2 = lindblad_apply(rho, Hc.evaluate(drives, g.space), [a.evaluate(drives, g.space) for a in A])
    assert np.abs(d1 - d2).max() < 1e-12
