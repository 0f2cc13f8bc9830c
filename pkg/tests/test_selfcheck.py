import numpy as np

from trn_ood import autodiff as ad
from trn_ood import cli, selfcheck


def test_all_checks_pass_on_fresh_build(tmp_path):
    ok, table = selfcheck.run_all(tmp_path)
    assert ok, table
    assert table.count("PASS") >= 5
    assert "FAIL" not in table


def test_injected_wrong_softmax_gradient_is_caught(monkeypatch):
    real_softmax = ad.softmax

    def bad_softmax(a, axis=-1):
        out = real_softmax(a, axis=axis)
        tape = ad._active_tape()
        if tape is not None and tape.nodes and tape.nodes[-1].op == "softmax":
            node = tape.nodes[-1]
            real_vjp = node.vjp
            node.vjp = lambda g: tuple(None if x is None else 1.5 * x
                                       for x in real_vjp(g))
        return out

    monkeypatch.setattr(ad, "softmax", bad_softmax)
    ok, detail = selfcheck.check_primitive_gradients(trials=1)
    assert not ok
    assert "softmax" in detail


def test_report_lists_per_check_runtime(tmp_path):
    _, table = selfcheck.run_all(tmp_path)
    # one timing column entry per check line
    timed_lines = [ln for ln in table.splitlines() if "s  " in ln and
                   ("PASS" in ln or "FAIL" in ln)]
    assert len(timed_lines) >= 5


def test_cli_selfcheck_exit_zero(capsys):
    assert cli.main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "overall: PASS" in out


def test_max_rel_error_abs_floor():
    a = np.array([1e-9, 1.0])
    b = np.array([0.0, 1.0])
    assert selfcheck.max_rel_error(a, b) == 0.0
    assert selfcheck.max_rel_error(np.array([2.0]), np.array([1.0])) == 0.5
