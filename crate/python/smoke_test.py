"""Quick end-to-end check of the Python bindings.

Build and install first:
    maturin build --release -m crates/mmp-py/Cargo.toml -o dist && pip install dist/mmp_py-*.whl
"""

import math

import mmp_py as mmp


def main():
    mu = mmp.Weights("zrp_weights(2)")
    fam = mmp.RateFamily.departure_rates(mu, "reciprocal", cutoff=8)
    st = mmp.stationarity(fam, mu, side=3, particles=5)
    assert st["max_residual_exact"] == "0", st

    inv = mmp.check_invariance(fam, mu, cutoff=6)
    assert inv["pass"], inv

    stick = mmp.RateFamily.builtin("stick")
    assert stick.rate(2, 5, 0) == 1.0
    assert mmp.check_attractiveness(stick)["pass"]
    assert not mmp.check_invariance(stick, mu, cutoff=6)["pass"]
    assert mmp.verify_coupling(stick, quad_cutoff=4)["marginals"]["pass"]

    agg = mmp.simulate(stick, side=16, init="fixed_density(1/2)", seed=3, events=50_000,
                       replicas=2, target=mmp.Weights("geometric(1)"), target_phi="1/3")
    assert agg["tv_to_target"] < 0.05, agg["tv_to_target"]
    again = mmp.simulate(stick, side=16, init="fixed_density(1/2)", seed=3, events=50_000,
                         replicas=2, target=mmp.Weights("geometric(1)"), target_phi="1/3")
    assert again == agg

    law = mmp.canonical(mmp.Weights("zrp_weights(4)"), 40, 80)
    assert math.isclose(sum(law["max_site_law"]), 1.0, abs_tol=1e-10)

    fv = mmp.fixed_volume(mmp.Weights("zrp_weights(3/2)"), 3, [50, 100, 200])
    assert fv["decreasing"], fv

    th = mmp.thermodynamic(mmp.Weights("zrp_weights(4)"), "1", [10, 20])
    assert abs(th["rho_c"] - 0.5) < 1e-6

    f = mmp.f_diagnostic("one_plus_b_over(2)", 40)
    assert any(v < 0 for a, v in f if a < 11)

    try:
        mmp.Weights("nonsense(")
    except ValueError:
        pass
    else:
        raise AssertionError("bad expression accepted")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
