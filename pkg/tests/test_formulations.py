import numpy as np
import pytest

from hzplate.formulations import (
    PlateProblem,
    analytic_disk,
    analytic_square,
    disk_load,
    error_l2,
    eval_scalar,
    eval_vector_dg,
    postprocess_shear,
    shear_field,
    solve_plate,
    solve_prm,
    solve_qfsrm,
    solve_tfsrm,
)
from hzplate.mesh import disk_mesh, square_mesh
from hzplate.quadrature import triangle_rule
from hzplate.tensors import Material

MAT = Material(E=1.0, nu=0.3, ks=5.0 / 6.0, t=0.1)
DISK_MAT = Material(E=240.0, nu=0.3, ks=5.0 / 6.0, t=0.1)


def _fd_grad(f, pts, h=1e-6):
    out = np.zeros(pts.shape[:1] + (2,) + np.asarray(f(pts)).shape[1:])
    for c in range(2):
        dp = np.zeros(2)
        dp[c] = h
        out[:, c] = (np.asarray(f(pts + dp)) - np.asarray(f(pts - dp))) / (2 * h)
    return out


# -- square manufactured solution ------------------------------------------


def test_square_boundary_vanishing():
    ts = np.linspace(0.0, 1.0, 21)
    for edge_pts in (
        np.column_stack([ts, np.zeros_like(ts)]),
        np.column_stack([ts, np.ones_like(ts)]),
        np.column_stack([np.zeros_like(ts), ts]),
        np.column_stack([np.ones_like(ts), ts]),
    ):
        sol = analytic_square(MAT, edge_pts)
        assert np.abs(sol["w"]).max() < 1e-14
        assert np.abs(sol["phi"]).max() < 1e-14


def test_square_center_value():
    sol = analytic_square(MAT, np.array([[0.5, 0.5]]))
    assert np.isclose(sol["w"][0], 199.0 / 21504.0, rtol=1e-13)


def test_square_frozen_spot_values():
    # frozen from the exact symbolic evaluation of the closed forms
    sol = analytic_square(MAT, np.array([[0.25, 0.75]]))
    assert np.isclose(sol["w"][0], 0.001360109874180385, rtol=1e-12)
    assert np.allclose(sol["phi"][0],
                       [0.011587142944335938, -0.011587142944335938], rtol=1e-12)
    assert np.allclose(
        sol["q"][0], [-0.041500552669986264, 0.041500552669986264], rtol=1e-11
    )
    assert np.isclose(sol["M"][0, 0, 0], 0.0018392290387834822, rtol=1e-11)
    assert np.isclose(sol["M"][0, 0, 1], -0.005942124586838942, rtol=1e-11)
    assert np.isclose(sol["g"][0], -0.15091110061813187, rtol=1e-12)


def test_square_requires_standard_shear_correction():
    with pytest.raises(ValueError):
        analytic_square(Material(E=1.0, nu=0.3, ks=1.0, t=0.1), [[0.5, 0.5]])


def test_square_strong_form_residuals():
    # finite-difference strong-form oracle at random interior points:
    # Di M = q, div q = g, and grad w - phi = -(t^2/(ks mu)) q
    rng = np.random.default_rng(7)
    pts = 0.05 + 0.9 * rng.random((50, 2))
    sol = analytic_square(MAT, pts)
    kappa = MAT.shear_stiffness

    m_grad = _fd_grad(lambda p: analytic_square(MAT, p)["M"], pts)
    div_m = m_grad[:, 0, :, 0] + m_grad[:, 1, :, 1]
    scale = max(1.0, np.abs(sol["q"]).max())
    assert np.abs(div_m - sol["q"]).max() / scale < 1e-7

    q_grad = _fd_grad(lambda p: analytic_square(MAT, p)["q"], pts)
    div_q = q_grad[:, 0, 0] + q_grad[:, 1, 1]
    scale = max(1.0, np.abs(sol["g"]).max())
    assert np.abs(div_q - sol["g"]).max() / scale < 1e-7

    w_grad = _fd_grad(lambda p: analytic_square(MAT, p)["w"], pts)[:, :, ]
    shear = w_grad - sol["phi"]
    assert np.abs(shear + sol["q"] / kappa).max() < 1e-7 * max(
        1.0, np.abs(shear).max()
    )


# -- disk solution -----------------------------------------------------------


def test_disk_boundary_vanishing():
    th = np.linspace(0, 2 * np.pi, 37)
    pts = np.column_stack([np.cos(th), np.sin(th)])
    sol = analytic_disk(DISK_MAT, pts)
    assert np.abs(sol["w"]).max() < 1e-13
    assert np.abs(sol["phi"]).max() < 1e-13


def test_disk_center_value():
    sol = analytic_disk(DISK_MAT, np.array([[0.0, 0.0]]))
    a = 12.0 * (0.3**2 - 1.0) / (64.0 * 240.0 * 0.1**3)
    b = 1.0 / (4.0 * (5.0 / 6.0) * DISK_MAT.mu * 0.1)
    assert np.isclose(sol["w"][0], a - b)
    assert np.isclose(sol["w"][0], -0.7434375)


def test_disk_strong_form_residual():
    # with f = -1 (g = -1/t^3) the fields satisfy the scaled strong system
    rng = np.random.default_rng(3)
    r = 0.9 * np.sqrt(rng.random(40))
    th = 2 * np.pi * rng.random(40)
    pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
    mat = DISK_MAT
    kappa = mat.ks * mat.mu / mat.t**2
    sol = analytic_disk(mat, pts)
    w_grad = _fd_grad(lambda p: analytic_disk(mat, p)["w"], pts)
    q = -kappa * (w_grad - sol["phi"])

    def qfun(p):
        s = analytic_disk(mat, p)
        wg = _fd_grad(lambda pp: analytic_disk(mat, pp)["w"], p)
        return -kappa * (wg - s["phi"])

    q_grad = _fd_grad(qfun, pts, h=2e-5)
    div_q = q_grad[:, 0, 0] + q_grad[:, 1, 1]
    g = disk_load(mat)
    assert np.abs(div_q - g).max() / abs(g) < 1e-4

    # second equilibrium: Div(Dstar sym D phi) = q
    from hzplate.tensors import stiffness_matrix

    smat = stiffness_matrix(mat)

    def mfun(p):
        pg = _fd_grad(lambda pp: analytic_disk(mat, pp)["phi"], p)
        eps = np.stack(
            [pg[:, 0, 0], (pg[:, 1, 0] + pg[:, 0, 1]) / np.sqrt(2.0), pg[:, 1, 1]],
            axis=-1,
        )
        mc = eps @ smat.T
        out = np.empty(p.shape[:1] + (2, 2))
        out[:, 0, 0] = mc[:, 0]
        out[:, 0, 1] = out[:, 1, 0] = mc[:, 1] / np.sqrt(2.0)
        out[:, 1, 1] = mc[:, 2]
        return out

    m_grad = _fd_grad(mfun, pts, h=2e-5)
    div_m = m_grad[:, 0, :, 0] + m_grad[:, 1, :, 1]
    scale = np.abs(q).max()
    assert np.abs(div_m - q).max() / scale < 1e-4


# -- solver behaviour --------------------------------------------------------


def _square_problem(form, k, mat=MAT, **kw):
    g = lambda pts: analytic_square(mat, pts)["g"]
    return PlateProblem(form, square_mesh(k), 3, mat, g, load_degree=8, **kw)


def _square_exact(mat=MAT):
    return {key: (lambda x, kk=key: analytic_square(mat, x)[kk])
            for key in ("w", "phi", "M", "q")}


def test_prm_square_spot_value():
    fields = solve_prm(_square_problem("prm", 5))
    errs = error_l2(fields, _square_exact())
    assert abs(errs["w"] - 0.012156844122413586) < 0.3 * 0.0122
    assert abs(errs["phi"] - 0.020959291576392428) < 0.3 * 0.021


def test_prm_locking_thin_plate():
    mat = Material(E=1.0, nu=0.3, ks=5.0 / 6.0, t=1e-5)
    for k in (1, 3):
        fields = solve_prm(_square_problem("prm", k, mat=mat))
        errs = error_l2(fields, _square_exact(mat))
        assert errs["w"] >= 0.9


def test_tfsrm_square_spot_value():
    fields = solve_tfsrm(_square_problem("tfsrm", 5))
    errs = error_l2(fields, _square_exact())
    assert abs(errs["w"] - 0.008366292981387493) < 0.3 * 0.008366
    assert abs(errs["phi"] - 0.03913725659476879) < 0.1 * 0.0391


def test_qfsrm_square_spot_value():
    fields = solve_qfsrm(_square_problem("qfsrm", 5))
    errs = error_l2(fields, _square_exact())
    assert abs(errs["q"] - 0.0376687447534508) < 0.1 * 0.0377


def test_tfsrm_qfsrm_agreement():
    f1 = solve_tfsrm(_square_problem("tfsrm", 5))
    f2 = solve_qfsrm(_square_problem("qfsrm", 5))
    e1 = error_l2(f1, _square_exact())
    e2 = error_l2(f2, _square_exact())
    rule = triangle_rule(10)
    w1 = eval_scalar(f1.space("w"), f1.field_coeffs("w"), rule.points)
    w2 = eval_scalar(f2.space("w"), f2.field_coeffs("w"), rule.points)
    sol = analytic_square(MAT, np.array([[0.5, 0.5]]))  # noqa: F841
    from hzplate.formulations import physical_points, quad_dets

    mesh = f1.problem.mesh
    dets = quad_dets(mesh, rule.points)
    x = physical_points(mesh, rule.points)
    wex = analytic_square(MAT, x.reshape(-1, 2))["w"].reshape(x.shape[:2])
    num = np.sqrt(np.einsum("eq,eq,q,eq->", w1 - w2, w1 - w2, rule.weights, dets))
    den = np.sqrt(np.einsum("eq,eq,q,eq->", wex, wex, rule.weights, dets))
    assert num / den <= 2.0 * (e1["w"] + e2["w"])


def test_solve_plate_dispatch():
    g = lambda pts: np.zeros(len(pts))
    for form in ("prm", "tfsrm", "qfsrm"):
        fields = solve_plate(PlateProblem(form, square_mesh(1), 3, MAT, g))
        assert np.abs(fields.coeffs).max() == 0.0


def test_formulation_validation():
    g = lambda pts: np.zeros(len(pts))
    with pytest.raises(ValueError):
        PlateProblem("nope", square_mesh(1), 3, MAT, g)
    with pytest.raises(ValueError):
        PlateProblem("tfsrm", square_mesh(1), 2, MAT, g)


# -- shear post-processing ---------------------------------------------------


def test_postprocess_shear_kirchhoff_love_state():
    # hand-built primal fields with grad w = phi give exactly zero shear
    mesh = square_mesh(3)
    problem = _square_problem("prm", 3)
    fields = solve_prm(problem)
    coeffs = np.zeros_like(fields.coeffs)
    lay = fields.layout
    lag = lay.field("w").space
    wslice = lay.global_slice("w")
    pslice = lay.global_slice("phi")
    wcoef = np.zeros(lag.ndofs)
    wcoef[: mesh.num_vertices] = mesh.vertices[:, 0]  # w = x
    coeffs[wslice] = wcoef
    pcoef = np.zeros(2 * lag.ndofs)
    pcoef[0 : 2 * mesh.num_vertices : 2] = 1.0  # phi = (1, 0)
    coeffs[pslice] = pcoef
    fields.coeffs[:] = coeffs
    rule = triangle_rule(4)
    q = postprocess_shear(fields, rule.points)
    assert np.abs(q).max() < 1e-9 * MAT.shear_stiffness


def test_postprocess_matches_definition():
    fields = solve_tfsrm(_square_problem("tfsrm", 3))
    rule = triangle_rule(5)
    from hzplate.formulations import eval_scalar_grad

    mesh = fields.problem.mesh
    gw = eval_scalar_grad(fields.space("w"), fields.field_coeffs("w"),
                          rule.points, mesh)
    phi = eval_vector_dg(fields.space("phi"), fields.field_coeffs("phi"),
                         rule.points)
    expected = -MAT.shear_stiffness * (gw - phi)
    assert np.allclose(postprocess_shear(fields, rule.points), expected)


def test_prm_thin_plate_shear_diverges():
    mat = Material(E=1.0, nu=0.3, ks=5.0 / 6.0, t=1e-5)
    errs = []
    for k in (3, 5, 7):
        fields = solve_prm(_square_problem("prm", k, mat=mat))
        errs.append(error_l2(fields, _square_exact(mat))["q"])
    assert errs[-1] > errs[0]
    assert errs[-1] > 1.0


# -- error norms -------------------------------------------------------------


def test_error_l2_interpolant_reproduction():
    problem = _square_problem("prm", 3)
    fields = solve_prm(problem)
    mesh = problem.mesh
    lay = fields.layout
    lag = lay.field("w").space
    fields.coeffs[:] = 0.0
    wcoef = np.zeros(lag.ndofs)
    wcoef[: mesh.num_vertices] = 2.0 * mesh.vertices[:, 0] - mesh.vertices[:, 1]
    fields.coeffs[lay.global_slice("w")] = wcoef
    errs = error_l2(fields, {"w": lambda x: 2.0 * x[:, 0] - x[:, 1]})
    assert errs["w"] < 1e-12


def test_error_l2_zero_field_is_one():
    problem = _square_problem("tfsrm", 1)
    fields = solve_tfsrm(problem)
    fields.coeffs[:] = 0.0
    errs = error_l2(fields, _square_exact())
    for v in errs.values():
        assert np.isclose(v, 1.0)


def test_error_l2_zero_exact_rejected():
    fields = solve_tfsrm(_square_problem("tfsrm", 1))
    with pytest.raises(ZeroDivisionError):
        error_l2(fields, {"w": lambda x: np.zeros(len(x))})


def test_disk_tfsrm_cubic_error():
    mat = DISK_MAT
    g = lambda pts: np.full(len(pts), disk_load(mat))
    problem = PlateProblem("tfsrm", disk_mesh(24, 3), 3, mat, g, load_degree=0)
    fields = solve_tfsrm(problem)
    errs = error_l2(
        fields,
        {
            "w": lambda x: analytic_disk(mat, x)["w"],
            "phi": lambda x: analytic_disk(mat, x)["phi"],
        },
    )
    assert errs["w"] <= 0.004  # paper: 0.2 %
