"""Poke at the reverse-mode autodiff core.

Builds a tiny expression whose gradient is known in closed form,
compares backward() against it, then runs the numeric gradient checks
that guard every layer and the assembled two-branch model.
"""

import numpy as np

import asvkit.nn as nn
from asvkit.model import gradcheck_full_model
from asvkit.nn import Tensor
from asvkit.nn.gradcheck import standard_suite


def main() -> None:
    # loss = sum((x * w)^2) has gradient 2 * x^2 * w
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal(5))
    w = Tensor(rng.standard_normal(5), requires_grad=True)
    loss = nn.sum_(nn.mul(nn.mul(x, w), nn.mul(x, w)))
    loss.backward()
    expected = 2 * x.data**2 * w.data
    print("hand-derived gradient matches backward():",
          np.abs(w.grad - expected).max(), "max gap")

    print("\nper-layer numeric checks (central differences):")
    report = standard_suite(seed=0)
    print(report.to_text())

    print("\nfull two-branch model, one end-to-end check:")
    result = gradcheck_full_model(seed=0)
    print(f"  max relative error {result.max_rel_error:.2e} "
          f"(tol {result.tol}), worst parameter {result.worst_param}")
    print("  passed" if result.passed else "  FAILED")


if __name__ == "__main__":
    main()
