"""Verify analytic gradients against central finite differences.

Runs the built-in verification suite (every fusion mode at several
recursion depths, through the temporal encoder, dropout, and the
concordance loss), then corrupts one backward rule on purpose to show
the checker localizing the broken parameter group.
"""

import numpy as np

import avfusion.autodiff as ad
from avfusion.verify import TOLERANCE, run_gradcheck_suite


def main():
    result = run_gradcheck_suite()
    for line in result.format_lines():
        print(line)
    print()

    # sabotage: scale the tanh backward rule by 1%, a typo-sized bug
    original = ad.tanh

    def broken_tanh(x):
        out = original(x)
        real_backward = out._backward

        def backward():
            real_backward()
            if x.grad is not None:
                x.grad *= 1.01

        out._backward = backward
        return out

    ad.tanh = broken_tanh
    try:
        result = run_gradcheck_suite()
    finally:
        ad.tanh = original

    print(f"after corrupting the tanh backward rule by 1%:")
    failures = result.failures()
    print(f"  {len(failures)} parameter groups exceed {TOLERANCE:.0e}")
    worst = sorted(failures, key=lambda item: -item[1])[:5]
    for name, err in worst:
        print(f"  {name}: {err:.3e}")
    assert not result.passed, "the corrupted rule must be caught"


if __name__ == "__main__":
    main()
