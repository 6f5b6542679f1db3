"""Smoke test for the `twofold` extension module.

Build and install first:  pip install --no-build-isolation -e crates/twofold-py
"""

import math

import twofold


def main():
    z0 = twofold.Model("z0")

    # r0 is a continuum of periodic orbits with upper fly time 2*x0
    assert twofold.x_fly_time(0.5, -0.5) == 1.0
    (x, y), period = z0.first_return(0.3, -0.3)
    assert abs(x - 0.3) < 1e-12 and abs(y + 0.3) < 1e-12
    assert abs(period - 1.2) < 1e-12
    assert z0.half_return_y(-1.0, 0.0) == (1.0, -2.0)

    assert z0.region(0.1, 0.1) == "sliding"
    assert z0.region(-0.1, -0.1) == "escaping"

    run = z0.simulate([0.1, 0.1, 0.0], 50.0)
    assert run["modes"][0] == "sliding"
    assert math.hypot(*run["points"][-1]) < 1e-3

    jac, (mu1, mu2) = z0.linearized_return(0.05)
    assert abs(mu1 - 1.0) < 1e-6
    assert abs(mu2 - math.exp(-0.2)) < 1e-6

    f3 = twofold.Model("z-eps-finite", k=3, epsilon=0.1)
    cycles = f3.find_cycles(0.01, 0.5)
    assert [c["j"] for c in cycles] == [1, 2, 3]
    for c in cycles:
        assert abs(c["x0"] - 0.1 * c["j"]) < 1e-9

    cell, predicted, observed = z0.classify_fate(0.1, 0.1)
    assert (cell, predicted, observed) == ("sliding", "to_origin", "to_origin")

    try:
        twofold.Model("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown model id accepted")

    print("ok:", len(cycles), "cycles;", "mu2(0.05) =", mu2)


if __name__ == "__main__":
    main()
