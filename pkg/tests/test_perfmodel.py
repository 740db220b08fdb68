import math

import pytest

from nird.perfmodel import PRESETS, MachineProblemParams, comm_cost_nird, comm_cost_traditional, sweep, sweep_csv


def level_sum(p):
    """Direct sum over NI levels i = log_c E .. log_c(EP) of nu * V-cycles * i."""
    lo = round(math.log(p.E, p.c))
    hi = round(math.log(p.E * p.P, p.c))
    cycles = math.log(p.beta) / math.log(1 / p.rho)
    return sum(p.nu * cycles * i for i in range(lo, hi + 1))


@pytest.mark.parametrize("E,P", [(4 ** 5, 4 ** 3), (4 ** 10, 4 ** 5), (4 ** 2, 4)])
def test_closed_form_matches_level_sum(E, P):
    p = PRESETS["easy"].with_(E=E, P=P)
    assert math.isclose(comm_cost_traditional(p), level_sum(p), rel_tol=1e-12)
    h = PRESETS["hard"].with_(E=2.0 ** 12, P=2 ** 6)
    assert math.isclose(comm_cost_traditional(h), level_sum(h), rel_tol=1e-12)


def test_reference_values():
    easy, hard = PRESETS["easy"], PRESETS["hard"]
    # frozen from a direct evaluation of the formula
    assert math.isclose(comm_cost_traditional(easy), 1427.4458, abs_tol=1e-4)
    assert comm_cost_nird(easy) == 20.0
    assert 70 <= comm_cost_traditional(hard) / comm_cost_traditional(easy) <= 80


def test_sweep_rows():
    rows = sweep(PRESETS["easy"], [1, 2, 1024])
    assert rows[0]["C_N"] == 0 and math.isinf(rows[0]["ratio"])
    assert rows[2]["C_N"] == 20
    assert [r["C_T"] for r in rows] == sorted(r["C_T"] for r in rows)
    text = sweep_csv(rows)
    assert text.splitlines()[0] == "P,C_T,C_N,ratio"
    assert text.splitlines()[1].endswith(",inf")


@pytest.mark.parametrize("kw", [{"rho": 1.0}, {"beta": 1.0}, {"c": 1.0}, {"nu": 0.5}, {"P": 3}, {"E": 0}])
def test_validation(kw):
    with pytest.raises(ValueError):
        MachineProblemParams(**kw)
