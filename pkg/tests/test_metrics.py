import math

import numpy as np
import pytest

from nird.metrics import CSV_COLUMNS, PROXY_NOTE, format_value, measure_run, write_rows
from nird.orchestrator import NirdConfig, nird_run
from nird.problems import instantiate


@pytest.fixture(scope="module")
def pair():
    prob = instantiate("poisson_smooth")
    cfg = NirdConfig(P=4, E=400, pou="cinf")
    a = nird_run(prob, cfg)
    b = nird_run(prob.scaled(10.0), cfg)
    return measure_run(a, table1=True), measure_run(b, table1=True)


def test_scale_invariance(pair):
    a, b = pair
    for key in ("C0", "Q1", "K1", "Q2", "K2", "eta_ratio"):
        assert math.isclose(a.row()[key], b.row()[key], rel_tol=1e-10), key
    for key, v in a.table1.as_dict().items():
        assert math.isclose(v, b.table1.as_dict()[key], rel_tol=1e-10), key


def test_union_ratio_at_most_one(pair):
    for m in pair[0].iterations:
        assert 0 < m.Q <= 1
        assert m.K > 0


def test_table1_definitional_bounds(pair):
    t = pair[0].table1
    assert t.C_s >= 1 and t.C_s_tilde >= 1
    assert 1 <= t.C_rho <= 3  # (sum of P-1 terms)^2 / sum of squares lies in [1, P-1]
    assert 0 < t.Q_hat <= 1
    assert t.C_b >= 1 and t.C_b_tilde > 0


def test_single_rank_is_exact():
    """P = 1: chi = 1, the NIRD iterate is a traditional solve, so C0 = Q = K = 1."""
    run = nird_run(instantiate("poisson_smooth"), NirdConfig(P=1, E=400, iterations=1), measure=True)
    rep = run.report
    assert math.isclose(rep.C0, 1.0, rel_tol=1e-8)
    q, k = rep.QK(1)
    assert q == 1.0
    assert math.isclose(k, 1.0, rel_tol=1e-8)


def test_report_row_and_csv(pair):
    row = pair[0].row()
    assert tuple(row) == CSV_COLUMNS
    text = write_rows([row])
    head, line = text.splitlines()
    assert head == ",".join(CSV_COLUMNS)
    assert line.startswith("Cinf,4,")
    assert pair[0].note == PROXY_NOTE
    assert format_value(None) == "" and format_value(math.inf) == "inf"
    assert format_value(0.1) == "1.0000000000000001e-01" and format_value(np.int64(3)) == "3"


def test_no_iterations_gives_empty_metrics():
    run = nird_run(instantiate("poisson_smooth"), NirdConfig(P=4, E=300, iterations=0), measure=True)
    row = run.report.row()
    assert row["C0"] is None and row["K1"] is None
