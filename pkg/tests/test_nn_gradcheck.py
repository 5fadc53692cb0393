"""The finite-difference checker itself: passes on every layer family
and actually catches a broken gradient."""

import numpy as np

from asvkit.nn import tensor as T
from asvkit.nn.gradcheck import gradient_check, standard_suite
from asvkit.nn.tensor import Tensor


def test_standard_suite_passes():
    report = standard_suite(seed=0)
    assert report.passed
    names = {r.name for r in report.results}
    assert {"dense", "lstm_sequence", "bilstm", "attention",
            "conv2d", "residual_block", "maxpool2d"} <= names
    for r in report.results:
        assert r.max_rel_error < 1e-4


def test_report_text_has_one_line_per_check():
    report = standard_suite(seed=1)
    lines = report.to_text().splitlines()
    assert len(lines) == len(report.results) + 1
    assert lines[-1] == "all checks passed"
    for line in lines[:-1]:
        assert "max_rel_error=" in line and "[ok]" in line


def test_gradient_check_catches_wrong_vjp():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)

    def doubled_with_bad_grad():
        # forward computes 2x but the vjp claims the factor is 3
        y = T._make(x.data * 2.0, (x,), lambda g, need: (g * 3.0,))
        return T.sum_(y)

    result = gradient_check(doubled_with_bad_grad, {"x": x}, name="sabotaged")
    assert not result.passed
    assert result.max_rel_error > 0.3


def test_gradient_check_reports_worst_coordinate():
    x = Tensor(np.array([0.5, -0.25]), requires_grad=True)
    result = gradient_check(lambda: T.sum_(T.mul(x, x)), {"x": x})
    assert result.passed
    assert result.worst_param.startswith("x[")
