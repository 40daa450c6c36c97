import numpy as np
import pytest

from hzplate.tensors import (
    Material,
    SymMatrix2,
    Tensor4,
    apply_compliance,
    apply_stiffness,
    compliance_matrix,
    double_contract,
    edge_transformation,
    stiffness_matrix,
)


def rand_sym(rng):
    return SymMatrix2(rng.standard_normal(), rng.standard_normal(), rng.standard_normal())


def test_stiffness_identity_strain_nu0():
    mat = Material(E=1.0, nu=0.0)
    out = apply_stiffness(mat, SymMatrix2.identity())
    assert np.allclose(out.as_matrix(), np.eye(2) / 12.0)


def test_stiffness_zero_strain():
    mat = Material(E=1.0, nu=0.3)
    out = apply_stiffness(mat, SymMatrix2.zero())
    assert out.norm() == 0.0


def test_stiffness_identity_strain_nu03():
    mat = Material(E=1.0, nu=0.3)
    out = apply_stiffness(mat, SymMatrix2.identity())
    expected = (1.3 / (12.0 * 0.91)) * np.eye(2)
    assert np.allclose(out.as_matrix(), expected)


def test_compliance_identity_moment():
    mat = Material(E=1.0, nu=0.3)
    out = apply_compliance(mat, SymMatrix2.identity())
    assert np.allclose(out.as_matrix(), 8.4 * np.eye(2))


def test_compliance_zero():
    mat = Material(E=1.0, nu=0.3)
    assert apply_compliance(mat, SymMatrix2.zero()).norm() == 0.0


def test_stiffness_compliance_mutually_inverse():
    rng = np.random.default_rng(7)
    for nu in (0.0, 0.2, 0.3, 0.45):
        mat = Material(E=2.3, nu=nu)
        assert np.allclose(stiffness_matrix(mat) @ compliance_matrix(mat), np.eye(3), atol=1e-12)
        for _ in range(10):
            m = rand_sym(rng)
            back = apply_stiffness(mat, apply_compliance(mat, m))
            assert abs(back.m11 - m.m11) < 1e-12
            assert abs(back.m12 - m.m12) < 1e-12
            assert abs(back.m22 - m.m22) < 1e-12


def test_compliance_positive_definite():
    rng = np.random.default_rng(11)
    for nu in (0.0, 0.25, 0.49):
        mat = Material(E=5.0, nu=nu)
        for _ in range(50):
            s = rand_sym(rng)
            if s.norm() < 1e-8:
                continue
            assert s.dot(apply_compliance(mat, s)) > 0.0


def test_material_validation():
    with pytest.raises(ValueError):
        Material(E=-1.0, nu=0.3)
    with pytest.raises(ValueError):
        Material(E=1.0, nu=0.5)
    with pytest.raises(ValueError):
        Material(E=1.0, nu=0.3, ks=0.0)
    with pytest.raises(ValueError):
        Material(E=1.0, nu=0.3, t=0.0)


def naive_contract(t4: Tensor4, s: SymMatrix2) -> np.ndarray:
    """Independent 4-nested-loop contraction oracle on full 2x2x2x2 data."""
    base = [
        SymMatrix2(1.0, 0.0, 0.0),
        SymMatrix2(0.0, 1.0 / np.sqrt(2.0), 0.0),
        SymMatrix2(0.0, 0.0, 1.0),
    ]
    a4 = np.zeros((2, 2, 2, 2))
    for i, ei in enumerate(base):
        for j, ej in enumerate(base):
            a4 += t4.mat[i, j] * np.einsum("ab,cd->abcd", ei.as_matrix(), ej.as_matrix())
    out = np.zeros((2, 2))
    smat = s.as_matrix()
    for a in range(2):
        for b in range(2):
            for c in range(2):
                for d in range(2):
                    out[a, b] += a4[a, b, c, d] * smat[c, d]
    return out


def test_double_contract_identity_and_zero():
    rng = np.random.default_rng(3)
    s = rand_sym(rng)
    assert np.allclose(double_contract(Tensor4.identity(), s).as_matrix(), s.as_matrix())
    assert double_contract(Tensor4.zero(), s).norm() == 0.0


def test_double_contract_rank_one():
    u = np.array([0.3, -1.2])
    v = np.array([2.0, 0.7])
    t4 = Tensor4.from_dyad(SymMatrix2.dyad(v), SymMatrix2.dyad(u))
    s = SymMatrix2(1.0, -0.5, 2.0)
    out = double_contract(t4, s)
    expected = float(u @ (s.as_matrix() @ u)) * np.outer(v, v)
    assert np.allclose(out.as_matrix(), expected)


def test_double_contract_against_loop_oracle():
    rng = np.random.default_rng(19)
    for _ in range(20):
        t4 = Tensor4(rng.standard_normal((3, 3)))
        s = rand_sym(rng)
        assert np.allclose(double_contract(t4, s).as_matrix(), naive_contract(t4, s), atol=1e-14)


def test_edge_transformation_identity_frame():
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    t4 = edge_transformation(e1, e2, e1, e2)
    assert np.allclose(t4.apply(SymMatrix2.dyad(e1)).as_matrix(), np.outer(e1, e1))
    assert np.allclose(t4.apply(SymMatrix2.dyad(e2)).as_matrix(), np.outer(e2, e2))


def test_edge_transformation_hypotenuse_frame():
    tau = np.array([1.0, -1.0])
    nu = np.array([1.0, 1.0])
    t = np.array([0.4, 1.1])
    n = np.array([-2.0, 0.3])
    t4 = edge_transformation(t, n, tau, nu)
    # <tau x tau, tau x tau> / |tau|^4 = 1, so tau x tau maps to t x t exactly
    assert np.allclose(t4.apply(SymMatrix2.dyad(tau)).as_matrix(), np.outer(t, t))


def test_edge_transformation_maps_dyads_to_multiples():
    rng = np.random.default_rng(5)
    for _ in range(10):
        tau = rng.standard_normal(2)
        while np.linalg.norm(tau) < 0.3:
            tau = rng.standard_normal(2)
        nu = np.array([-tau[1], tau[0]]) * rng.uniform(0.5, 2.0)
        t = rng.standard_normal(2)
        n = rng.standard_normal(2)
        t4 = edge_transformation(t, n, tau, nu)
        for ref, phys in (
            (SymMatrix2.dyad(tau), SymMatrix2.dyad(t)),
            (SymMatrix2.sym_dyad(tau, nu), SymMatrix2.sym_dyad(t, n)),
            (SymMatrix2.dyad(nu), SymMatrix2.dyad(n)),
        ):
            out = t4.apply(ref)
            cross = np.cross(out.coords(), phys.coords())
            assert np.linalg.norm(cross) < 1e-10 * max(1.0, out.norm() * phys.norm())


def test_edge_transformation_rank_three():
    rng = np.random.default_rng(23)
    for _ in range(10):
        tau = np.array([1.0, -1.0])
        nu = np.array([1.0, 1.0])
        t = rng.standard_normal(2)
        n = rng.standard_normal(2)
        while abs(t[0] * n[1] - t[1] * n[0]) < 0.1:
            t, n = rng.standard_normal(2), rng.standard_normal(2)
        t4 = edge_transformation(t, n, tau, nu)
        cols = np.column_stack(
            [
                t4.apply(SymMatrix2.dyad(tau)).coords(),
                t4.apply(SymMatrix2.sym_dyad(tau, nu)).coords(),
                t4.apply(SymMatrix2.dyad(nu)).coords(),
            ]
        )
        assert np.linalg.matrix_rank(cols, tol=1e-10) == 3


def test_edge_transformation_rejects_zero_tau():
    with pytest.raises(ValueError):
        edge_transformation([1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 1.0])
