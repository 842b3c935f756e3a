import pytest

from partsim.engine import RunResult, run_experiment
from partsim.metrics import (CSV_COLUMNS, LengthMismatch, aggregate,
                             check_properties, render_csv, rolling_mean)
from partsim.scenarios import ScenarioConfig, SplitSpec, preset


def test_rolling_mean_short_prefix_and_window():
    assert rolling_mean([4.0], window=3) == [4.0]
    got = rolling_mean([1, 2, 3, 4, 5], window=3)
    assert got == [1.0, 1.5, 2.0, 3.0, 4.0]
    assert rolling_mean([], window=3) == []


def fake_result(confirmed, submitted=None, forks=None, rounds=None):
    rounds = rounds if rounds is not None else len(confirmed)
    return RunResult(name="t", n=4, rounds=rounds, seed=0,
                     submitted=submitted or [1] * len(confirmed),
                     confirmed=list(confirmed),
                     forks=forks or [0] * len(confirmed))


def test_aggregate_single_run_worked_example():
    res = fake_result([0, 2, 1, 0], submitted=[1, 1, 1, 1])
    rows = aggregate([res], warmup=2)
    assert [r["round"] for r in rows] == [0, 1, 2, 3]
    assert [r["mean_rolling_confirmed"] for r in rows] \
        == [0.0, 1.0, 1.0, 0.75]
    assert [r["sd_rolling_confirmed"] for r in rows] == [0.0] * 4
    assert [r["confirmed_cum"] for r in rows] == [0.0, 2.0, 3.0, 3.0]
    assert [r["submitted"] for r in rows] == [1.0, 2.0, 3.0, 4.0]
    assert rows[3]["confirmed_ratio"] == 0.75
    assert [r["excluded"] for r in rows] == [1, 1, 0, 0]


def test_aggregate_mean_and_spread_across_runs():
    rows = aggregate([fake_result([0, 4]), fake_result([2, 0])], warmup=0)
    assert rows[1]["mean_rolling_confirmed"] == 1.5
    # population sd of the two per-run rolling means 2.0 and 1.0
    assert rows[1]["sd_rolling_confirmed"] == 0.5
    assert rows[1]["confirmed_cum"] == 3.0


def test_aggregate_rejects_mismatched_lengths():
    with pytest.raises(LengthMismatch):
        aggregate([fake_result([1, 2]), fake_result([1, 2, 3])])
    with pytest.raises(LengthMismatch):
        aggregate([fake_result([1, 2], rounds=9)])
    assert aggregate([]) == []


def test_csv_layout_is_exact():
    rows = aggregate([fake_result([0, 2])], warmup=1)
    text = render_csv("demo", 1, rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == ("demo,1,0,0.000000,0.000000,1.000000,0.000000,"
                        "0.000000,0.000000,1")
    assert lines[2] == ("demo,1,1,1.000000,0.000000,2.000000,2.000000,"
                        "0.000000,1.000000,0")
    assert text == render_csv("demo", 1, rows)  # byte-stable


# ---------------------------------------------------------------------------
# Property checks on real runs
# ---------------------------------------------------------------------------

def split_run(seed=0):
    # submission rate below mining capacity: the pending queues drain, so
    # both liveness and side-disjointness are actually attainable
    n = 10
    cfg = ScenarioConfig(
        name="p", n=n, rounds=300, seed=seed, tx_every=6,
        splits=[SplitSpec(100, tuple(range(n // 2)),
                          tuple(range(n // 2, n)))])
    return run_experiment(cfg)


def test_check_properties_clean_run():
    res = split_run()
    report = check_properties(res, progress_cutoff=150)
    assert report.ok, report.violations


def test_check_properties_flags_double_confirmation():
    res = split_run()
    res.confirmations.append(res.confirmations[0])
    report = check_properties(res)
    assert any("twice" in v for v in report.violations)


def test_check_properties_flags_wrong_block():
    res = split_run()
    c = res.confirmations[0]
    tampered = type(c)(tx_id=c.tx_id, round=c.round,
                       block_id="genesis", domain=c.domain)
    res.confirmations[0] = tampered
    report = check_properties(res)
    assert any("not carrying" in v for v in report.violations)


def test_check_properties_flags_forgotten_valid_tx():
    res = split_run()
    # an affordable early tx that no block ever picked up
    ghost = type(res.submissions[0])(
        tx=type(res.submissions[0].tx)((99, 0), "a00", "a01", 1),
        round=5, partition=0)
    res.submissions.append(ghost)
    report = check_properties(res, progress_cutoff=150)
    assert any("never confirmed" in v for v in report.violations)


def test_check_properties_requires_sim_state():
    with pytest.raises(ValueError):
        check_properties(fake_result([1, 2]))
