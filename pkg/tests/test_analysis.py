"""Cost accounting against frozen desk-checked totals, verification
reports, and the trade-off sweep."""

import json

import numpy as np
import pytest

from micronet.analysis import (BUDGETS, check_budget, count_costs,
                               format_json, format_sweep, rank_law_holds,
                               sweep_tradeoff, verify_connectivity,
                               verify_factorization, verify_model,
                               verify_rank)
from micronet.models import build_model

FROZEN_TOTALS = {
    "M0": (4_152_672, 937_886),
    "M1": (6_222_208, 1_709_429),
    "M2": (12_126_480, 2_284_641),
    "M3": (20_922_544, 2_592_495),
}


@pytest.mark.parametrize("variant", sorted(FROZEN_TOTALS))
def test_cost_totals_frozen(variant):
    report = count_costs(build_model(variant, seed=0), 224)
    assert (report.total_madds, report.total_params) == FROZEN_TOTALS[variant]


def test_m2_dynamic_share_frozen():
    report = count_costs(build_model("M2", seed=0), 224)
    assert report.dynamic_madds == 1_688_400
    assert report.dynamic_params == 189_573
    static = report.total_madds - report.dynamic_madds
    assert static == 10_438_080


@pytest.mark.parametrize("variant", sorted(BUDGETS))
def test_budgets_within_ten_percent(variant):
    report = count_costs(build_model(variant, seed=0), 224)
    rows = check_budget(report)
    assert rows and all(within for _, _, _, within in rows)
    for metric, value, target, _ in rows:
        assert abs(value - target) <= 0.10 * target, (metric, value, target)


def test_budget_tolerance_boundary():
    report = count_costs(build_model("M0", seed=0), 224)
    assert not all(w for _, _, _, w in check_budget(report, tolerance=0.001))
    assert check_budget(count_costs(build_model("tiny", seed=0), 32)) == []


def test_report_params_match_live_arrays():
    for variant in ("M0", "tiny"):
        net = build_model(variant, seed=0)
        report = count_costs(net, 224 if variant == "M0" else 32)
        assert report.total_params == net.param_count()
        names = [r.name for r in report.records]
        assert len(names) == len(set(names))
        assert {r.kind for r in report.records} <= {
            "conv", "linear", "pool", "dysm", "norm"}


def test_tiny_report_geometry():
    report = count_costs(build_model("tiny", seed=0), 32)
    by_name = {r.name: r for r in report.records}
    assert by_name["stem.conv1"].out_shape == (2, 16, 32)
    assert by_name["stem.conv2"].out_shape == (4, 16, 16)
    assert by_name["blocks.0.depthwise"].out_shape == (8, 8, 8)
    assert by_name["head.pool"].madds == 8 * 8 * 8
    assert by_name["head.fc1"].madds == 8 * 16
    assert by_name["head.fc2"].madds == 16 * 2


def test_cost_json_and_table_formats():
    report = count_costs(build_model("tiny", seed=0), 32)
    payload = report.to_json()
    assert payload["schema"] == "micronet.cost/1"
    assert payload["totals"]["madds"] == report.total_madds
    parsed = json.loads(format_json(payload))
    assert parsed == payload
    table = report.format_table()
    assert "total" in table and f"{report.total_madds:,}" in table


def test_verify_model_passes_and_serializes():
    net = build_model("M1", seed=3, dtype=np.float64)
    report = verify_model(net, 224, np.random.default_rng(0))
    assert report["passed"]
    assert report["schema"] == "micronet.verify/1"
    json.loads(format_json(report))
    assert all(r["ok"] for r in report["rank_law"])
    assert all(r["ok"] for r in report["connectivity"])
    assert all(r["ok"] for r in report["factorization"])


def test_verifiers_catch_broken_shuffle():
    net = build_model("M0", seed=0, dtype=np.float64)
    _, layer = net.pointwise_layers()[0]
    layer.perm = np.arange(layer.hidden)
    ranks = verify_rank(net)
    conn = verify_connectivity(net)
    assert not ranks[0].ok
    assert not conn[0].ok
    assert all(r.ok for r in ranks[1:])
    report = verify_model(net, 224, np.random.default_rng(0))
    assert not report["passed"]


def test_verify_factorization_reports_tolerance():
    net = build_model("tiny", seed=0, dtype=np.float64)
    rows = verify_factorization(net, np.random.default_rng(0))
    assert rows and all(ok for _, _, ok in rows)
    assert max(err for _, err, _ in rows) < 1e-12


def test_rank_law_trivial_blocks_skipped():
    from micronet.microfac import MicroFacPointwise
    layer = MicroFacPointwise(4, 4, 4, groups=(4, 1),
                              rng=np.random.default_rng(0))
    ok, worst = rank_law_holds(layer)
    assert ok and worst == 0.0


# ---------------------------------------------------------------------------
# sweep

def test_sweep_frozen_crossing():
    sweep = sweep_tradeoff(108, 2)
    assert sweep["schema"] == "micronet.sweep/1"
    cross = sweep["crossing"]
    assert cross["exact"] and cross["groups"] == pytest.approx(3.0)
    assert cross["channels"] == pytest.approx(18.0)
    rows = {r["groups"]: r for r in sweep["rows"]}
    assert rows[3]["regime"] == "balanced"
    assert rows[3]["channels"] == pytest.approx(18.0)
    assert rows[3]["connectivity"] == pytest.approx(18.0)
    assert rows[2]["regime"] == "over-connected"
    assert rows[4]["regime"] == "under-connected"


def test_sweep_rows_satisfy_cost_identities():
    budget, reduction = 340.0, 4
    sweep = sweep_tradeoff(budget, reduction, max_groups=10)
    for row in sweep["rows"]:
        c, g, e = row["channels"], row["groups"], row["connectivity"]
        assert 2 * c * c / (reduction * g) == pytest.approx(budget)
        assert c * c / (reduction * g * g) == pytest.approx(e)
    regimes = [r["regime"] for r in sweep["rows"]]
    flips = sum(1 for a, b in zip(regimes, regimes[1:]) if a != b)
    assert flips <= 2 and regimes[0] == "over-connected"
    assert regimes[-1] == "under-connected"


def test_sweep_validation_and_format():
    with pytest.raises(ValueError):
        sweep_tradeoff(0, 2)
    with pytest.raises(ValueError):
        sweep_tradeoff(108, 0)
    text = format_sweep(sweep_tradeoff(108, 2))
    assert "balance point" in text and "G=3" in text
