import numpy as np
import pytest

from nird.problems import (NAMES, ProblemId, catalog, f_wavefront, instantiate, make_oscillatory,
                           oscillation_count)


def test_smooth_rhs_value():
    prob = instantiate("poisson_smooth")
    assert np.isclose(prob.f_at(np.array([[0.5, 0.5]]))[0], 1.0)
    assert prob.dirichlet == frozenset("SENW")


def test_oscillatory_zero_lines():
    f = make_oscillatory(16, 0)
    m = oscillation_count(16)
    assert m == 12
    y = np.linspace(0.013, 0.987, 31)
    for j in range(m + 1):
        pts = np.column_stack((np.full_like(y, j / m), y))
        assert np.abs(f(pts)).max() < 1e-12
        assert np.abs(f(pts[:, ::-1])).max() < 1e-12


def test_oscillatory_determinism():
    pts = np.random.default_rng(0).random((50, 2))
    a = instantiate(ProblemId("poisson_oscillatory", P=16, seed=7)).f_at(pts)
    b = instantiate(ProblemId("poisson_oscillatory", P=16, seed=7)).f_at(pts)
    c = instantiate(ProblemId("poisson_oscillatory", P=16, seed=8)).f_at(pts)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.abs(a).max() <= 1.0


def test_wavefront_clamped_at_centres():
    vals = f_wavefront(np.array([[0.65, 0.65], [0.35, 0.35]]))
    assert np.all(np.isfinite(vals))
    assert np.all(np.isfinite(instantiate("wavefront").f_at(np.random.default_rng(1).random((100, 2)))))


def test_localized_box():
    f = instantiate("poisson_localized").f_at(np.array([[0.5, 0.5], [0.3, 0.5], [0.511, 0.5]]))
    assert f.tolist() == [100.0, 0.0, 0.0]


def test_boundary_tags_and_coefficients():
    adv = instantiate("advdiff_in")
    assert adv.dirichlet == frozenset("SNW") and adv.neumann == frozenset("E")
    assert adv.b[0] < 0
    assert instantiate("advdiff_out").b[0] > 0
    cb = instantiate("jump_checkerboard")
    a = cb.alpha_at(np.array([[0.25, 0.25], [0.75, 0.25], [0.75, 0.75]]))
    assert a.tolist() == [1.0, 100.0, 1.0]
    assert instantiate("anisotropic").epsilon == 1e-3


def test_catalog_and_validation():
    assert [c["name"] for c in catalog()] == list(NAMES)
    with pytest.raises(ValueError):
        ProblemId("nope")
    with pytest.raises(ValueError):
        ProblemId("wavefront", rhs="oscillatory")
    with pytest.raises(ValueError):
        ProblemId("advdiff_in", rhs="wiggly")
    assert ProblemId("advdiff_in", rhs="oscillatory").rhs_kind == "oscillatory"
    assert instantiate("advdiff_in", rhs="oscillatory").params["rhs"] == "oscillatory"
