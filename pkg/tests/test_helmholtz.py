import threading

import numpy as np
import pytest

from mfpd import fem
from mfpd.bessel import bessel_reference, bessel_zero
from mfpd.coefficients import build_coefficients, homogeneous, paper_2d_inclusions
from mfpd.errors import ResonanceError, ValidationError
from mfpd.helmholtz import (
    HelmholtzOperator,
    SpectrumEstimate,
    check_resonance,
    estimate_spectrum,
    neumann_series_check,
    solve_helmholtz,
)


def test_constant_solution(homog_op):
    sol = homog_op.solve(0.0, "1")
    assert np.max(np.abs(sol.u - 1.0)) <= 1e-12
    assert np.max(np.abs(sol.grad)) <= 1e-10


@pytest.mark.parametrize("phi,mode", [("x1", "J1cos"), ("1", "J0")])
def test_bessel_examples(homog_op, disk, phi, mode):
    sol = homog_op.solve(1.0, phi)
    err, norm = fem.l2_error_against(disk, sol.u, lambda x, y: bessel_reference(1.0, mode, np.column_stack([x.ravel(), y.ravel()])).reshape(x.shape))
    assert err / norm <= 0.02


def test_boundary_trace_exact(homog_op, disk):
    sol = homog_op.solve(3.0, "x2+2")
    b = disk.boundary_vertices
    assert np.array_equal(sol.u[b], disk.vertices[b, 1] + 2)
    assert sol.diagnostics["residual"] <= 1e-10


def test_maximum_principle(disk):
    coeffs = build_coefficients(disk, paper_2d_inclusions())
    sol = solve_helmholtz(disk, coeffs, 0.0, "x1+2")
    assert sol.u.min() > 0


def test_linearity(homog_op):
    u1 = homog_op.solve(3.0, "x1").u
    u2 = homog_op.solve(3.0, "1").u
    u = homog_op.solve(3.0, "2*x1 - 0.5").u
    assert np.max(np.abs(u - (2 * u1 - 0.5 * u2))) <= 1e-10 * np.max(np.abs(u))


def test_spectrum_oracle(homog_op):
    spec = homog_op.spectrum()
    assert abs(spec.lambda0 - bessel_zero(0, 2.4) ** 2) / spec.lambda0 < 0.01
    assert abs(spec.lambda1 - bessel_zero(1, 3.8) ** 2) / spec.lambda1 < 0.02


def test_spectrum_scaling(disk_coarse):
    base = estimate_spectrum(disk_coarse, homogeneous(disk_coarse))
    sa = estimate_spectrum(disk_coarse, homogeneous(disk_coarse, 2.0, 1.0))
    sq = estimate_spectrum(disk_coarse, homogeneous(disk_coarse, 1.0, 2.0))
    assert np.allclose(sa.values, 2 * np.array(base.values), rtol=1e-10)
    assert np.allclose(sq.values, np.array(base.values) / 2, rtol=1e-10)


def test_resonance_guard(homog_op):
    spec = homog_op.spectrum()
    with pytest.raises(ResonanceError) as exc:
        homog_op.solve(5.78, "x1", spec)
    assert exc.value.eigenvalue == spec.lambda0
    with pytest.raises(ResonanceError):
        homog_op.solve(spec.lambda1 * 1.01, "1", spec)
    assert check_resonance(3.0, spec)["above_lambda1"] is False


def test_above_lambda1_flag(homog_op):
    spec = homog_op.spectrum()
    sol = homog_op.solve(20.0, "1", spec)
    assert sol.diagnostics["above_lambda1"] is True


def test_negative_k(homog_op):
    with pytest.raises(ValidationError):
        homog_op.solve(-1.0, "1")


def test_spectrum_estimate_invariant():
    with pytest.raises(ValidationError):
        SpectrumEstimate(3.0, 2.0)


def test_concurrent_solves_match_serial(homog_op):
    ks = [0.5, 1.0, 2.0, 3.0, 4.0, 7.0]
    serial = {k: homog_op.solve(k, "x1+x2").u for k in ks}
    out = {}

    def work(k):
        out[k] = homog_op.solve(k, "x1+x2").u

    threads = [threading.Thread(target=work, args=(k,)) for k in ks * 2]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in ks:
        assert np.array_equal(out[k], serial[k])


def test_neumann_zero_increment(homog_op_coarse, disk_coarse):
    rep = neumann_series_check(disk_coarse, homog_op_coarse.coeffs, 1.0, 1.0, 3, "x1", operator=homog_op_coarse)
    assert rep.errors[0] <= 1e-12


def test_neumann_geometric(homog_op, disk):
    # contraction rate is set by the nearest eigenvalue: (k - k0) / (lambda0 - k0)
    spec = homog_op.spectrum()
    rep = neumann_series_check(disk, homog_op.coeffs, 1.0, 1.5, 8, "1", operator=homog_op)
    assert not rep.diverged
    assert all(b < a for a, b in zip(rep.errors, rep.errors[1:]))
    expected = 0.5 / (spec.lambda0 - 1.0)
    assert abs(rep.ratios[-1] - expected) / expected < 1e-3


def test_neumann_divergence(homog_op_coarse, disk_coarse):
    rep = neumann_series_check(disk_coarse, homog_op_coarse.coeffs, 1.0, 12.0, 12, "1", operator=homog_op_coarse)
    assert rep.diverged
    assert "diverge" in rep.message


def test_mismatched_coefficients(disk, disk_coarse):
    with pytest.raises(ValidationError):
        HelmholtzOperator(disk, homogeneous(disk_coarse))
