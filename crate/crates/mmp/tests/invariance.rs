use mmp::invariance::{
    build_h_table, build_mmtp_rates, build_mmzrp_rates, check_mmzrp_invariance, check_product_invariance, compute_a,
    exact_stationarity_check, STATE_GUARD,
};
use mmp::lattice::{Kernel, KernelSymmetry, Torus};
use mmp::measures::{Marginal, TailRule};
use mmp::num::{int, rat, Rational};
use mmp::rates::{make_builtin, params, RateFamily};
use mmp::seq::Sequence;
use num_traits::Zero;
use proptest::prelude::*;

/// (μ Q)(α, β) / (μ(α)μ(β)) for two sites where mass only flows 0 → 1,
/// built by listing every transition of the two-site chain.
fn two_site_drift(fam: &RateFamily, w: &[Rational], a: usize, b: usize) -> Rational {
    let total = a + b;
    let mut flux = Rational::zero();
    for x in 0..=total {
        let y = total - x;
        for k in 1..=x {
            let rate = fam.rate(k, x, y);
            let p = &w[x] * &w[y] * &rate;
            if (x - k, y + k) == (a, b) {
                flux += &p;
            }
            if (x, y) == (a, b) {
                flux -= &p;
            }
        }
    }
    flux / (&w[a] * &w[b])
}

fn table_weights(head: &[(i64, i64)]) -> Marginal {
    Marginal::new(head.iter().map(|&(p, q)| rat(p, q)).collect(), TailRule::Zero).unwrap()
}

fn table_seq(values: &[(i64, i64)]) -> Sequence {
    Sequence::Table { values: values.iter().map(|&(p, q)| rat(p, q)).collect(), default: int(1) }
}

#[test]
fn drift_matches_two_site_generator() {
    let families = [
        make_builtin("stick", &params(&[])).unwrap(),
        make_builtin("ex1_h", &params(&[("h", "reciprocal")])).unwrap(),
        make_builtin("ex4_b_family", &params(&[("b", "2")])).unwrap(),
        make_builtin("qhahn", &params(&[("q", "1/3")])).unwrap(),
        make_builtin("single_mp", &params(&[("dep", "identity"), ("arr", "const(2)")])).unwrap(),
    ];
    let mu = Marginal::zrp_weights(rat(5, 2));
    let w = mu.weights_exact(12);
    for fam in &families {
        let a = compute_a::<Rational>(fam, &mu, 6).unwrap();
        for x in 0..=6 {
            for y in 0..=6 {
                assert_eq!(a.get(x, y), &two_site_drift(fam, &w, x, y), "{} at ({x}, {y})", fam.description());
            }
        }
    }
}

#[test]
fn built_departure_rates_are_stationary_in_two_dimensions() {
    let mu = Marginal::zrp_weights(int(3));
    let fam = build_mmzrp_rates(&mu, Sequence::Const(int(1)), 8).unwrap();
    let kernel = Kernel::nearest_neighbour_symmetric(2).unwrap();
    let r = exact_stationarity_check(&fam, &mu, Torus::new(2, 2).unwrap(), 4, &kernel, STATE_GUARD).unwrap();
    assert!(r.is_exactly_stationary());
    assert_eq!(r.states, 35);
}

#[test]
fn geometric_weights_make_the_stick_process_stationary_everywhere() {
    let fam = make_builtin("stick", &params(&[])).unwrap();
    let geo = Marginal::geometric(rat(1, 2));
    let a = compute_a::<Rational>(&fam, &geo, 8).unwrap();
    assert!(check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0).pass);
    let other = Marginal::zrp_weights(int(2));
    let b = compute_a::<Rational>(&fam, &other, 8).unwrap();
    assert!(!check_product_invariance(&b, KernelSymmetry::Asymmetric, 0.0).pass);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn built_departure_rates_keep_their_marginal(
        head in prop::collection::vec((1i64..12, 1i64..12), 14),
        c in prop::collection::vec((1i64..6, 1i64..6), 7),
    ) {
        let mu = table_weights(&head);
        let fam = build_mmzrp_rates(&mu, table_seq(&c), 6).unwrap();
        let report = check_mmzrp_invariance(&fam, &mu, 6).unwrap();
        prop_assert!(report.stationarity.pass, "{}", report.stationarity);
        let a = compute_a::<Rational>(&fam, &mu, 6).unwrap();
        prop_assert!(check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0).pass);
        let kernel = Kernel::totally_asymmetric(1).unwrap();
        let r = exact_stationarity_check(&fam, &mu, Torus::new(1, 3).unwrap(), 5, &kernel, STATE_GUARD).unwrap();
        prop_assert!(r.is_exactly_stationary());
    }

    #[test]
    fn potential_form_implies_antisymmetry(
        head in prop::collection::vec((1i64..9, 1i64..9), 14),
        h in prop::collection::vec((0i64..5, 1i64..5), 7),
        uniform in any::<bool>(),
    ) {
        let mu = table_weights(&head);
        let seq = table_seq(&h).to_string();
        let fam = if uniform {
            make_builtin("ex2_r", &params(&[("r", &seq)])).unwrap()
        } else {
            make_builtin("ex1_h", &params(&[("h", &seq)])).unwrap()
        };
        let a = compute_a::<Rational>(&fam, &mu, 6).unwrap();
        if check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0).pass {
            prop_assert!(check_product_invariance(&a, KernelSymmetry::Symmetric, 0.0).pass);
        }
    }

    #[test]
    fn drift_does_not_see_a_tilt(
        head in prop::collection::vec((1i64..9, 1i64..9), 14),
        num in 1i64..7, den in 1i64..7,
        which in 0usize..3,
    ) {
        let fam = match which {
            0 => make_builtin("ex1_h", &params(&[("h", "reciprocal")])).unwrap(),
            1 => make_builtin("ex2_r", &params(&[("r", "identity")])).unwrap(),
            _ => make_builtin("single_zrp", &params(&[("g", "identity")])).unwrap(),
        };
        let mu = table_weights(&head);
        let a = compute_a::<Rational>(&fam, &mu, 6).unwrap();
        let b = compute_a::<Rational>(&fam, &mu.tilt(&rat(num, den)), 6).unwrap();
        prop_assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn h_table_primal_and_dual_agree(head in prop::collection::vec((1i64..9, 1i64..9), 17)) {
        prop_assert!(build_h_table(&table_weights(&head), 8).unwrap().verified_dual);
    }

    #[test]
    fn built_target_rates_keep_their_marginal(
        num in 3i64..30, den in 2i64..6,
        power_law in any::<bool>(),
        g in prop::collection::vec((1i64..5, 1i64..5), 9),
    ) {
        let b = rat(num, den);
        let mu = if power_law { Marginal::power_law_pi(b.clone(), int(1) + &b) } else { Marginal::zrp_weights(b) };
        let fam = build_mmtp_rates(&mu, &table_seq(&g), 8);
        prop_assume!(fam.is_ok());
        let fam = fam.unwrap();
        let a = compute_a::<Rational>(&fam, &mu, 4).unwrap();
        prop_assert!(check_product_invariance(&a, KernelSymmetry::Asymmetric, 0.0).pass);
        let kernel = Kernel::totally_asymmetric(1).unwrap();
        let r = exact_stationarity_check(&fam, &mu, Torus::new(1, 3).unwrap(), 4, &kernel, STATE_GUARD).unwrap();
        prop_assert!(r.is_exactly_stationary());
    }
}
