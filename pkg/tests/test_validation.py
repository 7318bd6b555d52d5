"""Quick-scale acceptance harness and its fault-injection hooks."""

from __future__ import annotations

import json

import pytest

from tensorjump.validation import CHECKS, format_summary, no_jump_error, run_all, run_check


@pytest.fixture(scope="module")
def quick_reports():
    return run_all("quick")


def test_every_criterion_has_one_check(quick_reports):
    assert sorted(r.criterion for r in quick_reports) == list(range(1, 11))
    assert [r.check_id for r in quick_reports] == list(CHECKS)


def test_quick_scale_passes(quick_reports):
    failed = [(r.check_id, r.details) for r in quick_reports if not r.passed]
    assert not failed


def test_reports_serialize(quick_reports):
    text = json.dumps([r.to_dict() for r in quick_reports])
    assert all(key in json.loads(text)[0] for key in ("check_id", "observed", "bound", "passed", "runtime_s"))


def test_summary_lines(quick_reports):
    lines = format_summary(quick_reports).splitlines()
    assert len(lines) == 11 and lines[-1] == "10/10 checks passed"


def test_scaled_jump_ratio_breaks_martingale_mean():
    report = run_check("martingale_mean", "quick", jump_ratio_scale=0.5)
    assert not report.passed and report.observed > 4.0


def test_first_order_splitting_halves_convergence_ratio():
    ratio = no_jump_error(0.05, trotter_order=1) / no_jump_error(0.025, trotter_order=1)
    assert ratio == pytest.approx(2.0, abs=0.3)
    assert not run_check("trotter_order", "quick", trotter_order=1).passed


def test_unknown_scale_rejected():
    with pytest.raises(ValueError):
        run_all("huge")  # type: ignore[arg-type]


def test_crashing_check_reports_failure(monkeypatch):
    def boom(scale, **hooks):
        raise RuntimeError("injected")

    monkeypatch.setitem(CHECKS, "trotter_order", (5, boom))
    report = run_check("trotter_order")
    assert not report.passed and "injected" in report.details["error"]
