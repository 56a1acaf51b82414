mod common;

use common::{oracle_demand, random_instance, random_spec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use tierfee_core::chain::TIE_TOLERANCE;
use tierfee_core::mechanisms::min_next_delay;
use tierfee_core::policy::{ClauseReport, TxOutcome};
use tierfee_core::solver::{expected_demand, solve_stable_prices, verify_compatible_stable, DemandMethod, SolverOptions};
use tierfee_core::{
    check_implementation, Blockchain, DemandSpec, DiscountDist, DiscountFunction, DiversityPolicy, MechanismParams,
    MechanismState, PolicyClause, TieredParams, V0Dist, ValueFunction,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smallest gap between the discount factors at the posted delays (and 0),
/// over all components. Zero when some component cannot tell two tiers apart.
fn min_slope_gap(inst: &common::Instance) -> f64 {
    inst.demand
        .spec()
        .components()
        .iter()
        .map(|c| {
            let h = c.discount.fixed().unwrap();
            let mut slopes: Vec<f64> = inst.delays.iter().map(|&d| h.factor(f64::from(d))).collect();
            slopes.push(0.0);
            slopes.windows(2).map(|w| (w[0] - w[1]).abs()).fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

fn random_chain(r: &mut ChaCha8Rng, k: usize, max_price: f64) -> Blockchain {
    let sizes = common::random_sizes(r, k, 120.0);
    let delays = common::random_delays(r, k);
    let prices: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..max_price)).collect();
    Blockchain::from_parts(&sizes, &delays, &prices).unwrap()
}

/// One-sample Kolmogorov-Smirnov statistic.
fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn v0_samples_match_their_distributions() {
    let uniform = DemandSpec::single(V0Dist::Uniform { lo: 1.0, hi: 90.0 }, DiscountDist::Point { urgency: 2.0 }).unwrap();
    let mut r = rng(1);
    let xs: Vec<f64> = (0..100_000).map(|_| uniform.sample(&mut r).value.v0()).collect();
    assert!(ks_distance(xs, |x| ((x - 1.0) / 89.0).clamp(0.0, 1.0)) <= 0.01);

    let normal = DemandSpec::single(V0Dist::Normal { mean: 2.0, sd: 2.0 }, DiscountDist::Point { urgency: 2.0 }).unwrap();
    let n = Normal::new(2.0, 2.0).unwrap();
    let kept = 1.0 - n.cdf(0.0);
    let xs: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut r).value.v0()).collect();
    assert!(xs.iter().all(|x| *x >= 0.0));
    assert!(ks_distance(xs, |x| (n.cdf(x) - n.cdf(0.0)) / kept) <= 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>()) {
        let spec = random_spec(&mut rng(seed), 3);
        let mut a = rng(seed ^ 0x5eed);
        let mut b = rng(seed ^ 0x5eed);
        for _ in 0..50 {
            prop_assert_eq!(spec.sample(&mut a), spec.sample(&mut b));
        }
    }

    #[test]
    fn chosen_tier_maximizes_utility(seed in any::<u64>(), k in 1usize..5, v0 in 0.0f64..3.0, urgency in 1.0f64..4.0) {
        let mut r = rng(seed);
        let chain = random_chain(&mut r, k, 2.0);
        let vf = ValueFunction::new(v0, DiscountFunction::geometric(urgency).unwrap()).unwrap();
        let choice = chain.choose_tier(&vf, &mut r);
        prop_assert!(chain.preferred_tiers(&vf).contains(&choice.tier_index));
        for j in 0..=k {
            prop_assert!(choice.utility >= chain.utility(&vf, j).unwrap() - TIE_TOLERANCE);
        }
    }

    #[test]
    fn analytic_demand_matches_oracle(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_instance(&mut rng(seed), k);
        let mut r = rng(seed.wrapping_add(1));
        let prices: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..2.0)).collect();
        let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, &prices).unwrap();
        let e = expected_demand(&chain, &inst.demand, DemandMethod::Analytic).unwrap();
        let oracle = oracle_demand(&chain, inst.demand.rate(), inst.demand.spec());
        prop_assert!((e.rejected - oracle[0]).abs() <= 1e-9 * inst.demand.rate());
        for j in 0..k {
            prop_assert!((e.tiers[j] - oracle[j + 1]).abs() <= 1e-9 * inst.demand.rate(), "tier {}: {} vs {}", j + 1, e.tiers[j], oracle[j + 1]);
        }
        prop_assert!((e.total() - inst.demand.rate()).abs() <= 1e-9 * inst.demand.rate());
    }

    #[test]
    fn raising_prices_never_raises_total_demand(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_instance(&mut rng(seed), k);
        let mut r = rng(seed.wrapping_add(2));
        let low: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..2.0)).collect();
        let high: Vec<f64> = low.iter().map(|p| p + r.gen_range(0.0..0.5)).collect();
        let at = |p: &[f64]| {
            let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, p).unwrap();
            expected_demand(&chain, &inst.demand, DemandMethod::Analytic).unwrap().included()
        };
        prop_assert!(at(&high) <= at(&low) + 1e-9);
    }

    #[test]
    fn demand_is_lipschitz_in_each_price(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_instance(&mut rng(seed), k);
        let mut r = rng(seed.wrapping_add(3));
        let prices: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..2.0)).collect();
        prop_assume!(min_slope_gap(&inst) > 1e-3);
        // Each breakpoint moves by eps / (slope gap); mass per unit v0 is the density.
        let mut bound = 0.0;
        for c in inst.demand.spec().components() {
            let h = c.discount.fixed().unwrap();
            let mut slopes: Vec<f64> = inst.delays.iter().map(|&d| h.factor(f64::from(d))).collect();
            slopes.push(0.0);
            let gap = slopes.windows(2).map(|w| (w[0] - w[1]).abs()).fold(f64::INFINITY, f64::min);
            let density = match c.v0 { V0Dist::Uniform { lo, hi } => 1.0 / (hi - lo), _ => unreachable!() };
            bound += 2.0 * c.weight * density / gap;
        }
        let bound = bound * inst.demand.rate();
        let eps = 1e-4;
        let base_chain = Blockchain::from_parts(&inst.sizes, &inst.delays, &prices).unwrap();
        let base = expected_demand(&base_chain, &inst.demand, DemandMethod::Analytic).unwrap();
        for i in 0..k {
            let mut p = prices.clone();
            p[i] += eps;
            let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, &p).unwrap();
            let e = expected_demand(&chain, &inst.demand, DemandMethod::Analytic).unwrap();
            for j in 0..k {
                let jump = (e.tiers[j] - base.tiers[j]).abs();
                prop_assert!(jump <= bound * eps * (1.0 + 1e-6) + 1e-9, "jump {} > {}", jump, bound * eps);
            }
        }
    }

    #[test]
    fn prices_above_support_empty_the_tier(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_instance(&mut rng(seed), k);
        let top = inst.demand.spec().upper_support();
        let mut r = rng(seed.wrapping_add(4));
        let mut prices: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..2.0)).collect();
        let j = r.gen_range(0..k);
        prices[j] = top + 1.0;
        let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, &prices).unwrap();
        let e = expected_demand(&chain, &inst.demand, DemandMethod::Analytic).unwrap();
        prop_assert_eq!(e.tiers[j], 0.0);
    }

    #[test]
    fn zero_prices_overflow_the_block(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_instance(&mut rng(seed), k);
        let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, &vec![0.0; k]).unwrap();
        let e = expected_demand(&chain, &inst.demand, DemandMethod::Analytic).unwrap();
        prop_assert!((e.included() - inst.demand.rate()).abs() <= 1e-9 * inst.demand.rate());
        prop_assert!(e.included() > inst.throughput());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solved_prices_fill_tiers_and_decrease(seed in any::<u64>(), k in 1usize..5) {
        let inst = random_instance(&mut rng(seed), k);
        // Tiers some buyers cannot tell apart make demand jump at equal prices.
        prop_assume!(min_slope_gap(&inst) > 1e-3);
        let tol = 1e-7 * inst.throughput();
        let report = solve_stable_prices(&inst.sizes, &inst.delays, &inst.demand, &SolverOptions::with_tol(tol)).unwrap();
        prop_assert!(report.is_solved(), "{:?}", report.outcome);
        prop_assert!(report.residual <= tol);
        let p = report.prices();
        prop_assert!(p.windows(2).all(|w| w[0] >= w[1] - 1e-9), "{:?}", p);
        let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, p).unwrap();
        prop_assert!(verify_compatible_stable(&chain, &inst.demand, 2.0 * tol).unwrap().passed());
        let oracle = oracle_demand(&chain, inst.demand.rate(), inst.demand.spec());
        for j in 0..k {
            prop_assert!((oracle[j + 1] - inst.sizes[j]).abs() <= 2.0 * tol);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_analytic(seed in any::<u64>(), k in 1usize..4) {
        let inst = random_instance(&mut rng(seed), k);
        let mut r = rng(seed.wrapping_add(5));
        let prices: Vec<f64> = (0..k).map(|_| r.gen_range(0.0..1.5)).collect();
        let chain = Blockchain::from_parts(&inst.sizes, &inst.delays, &prices).unwrap();
        let exact = expected_demand(&chain, &inst.demand, DemandMethod::Analytic).unwrap();
        let mc = expected_demand(&chain, &inst.demand, DemandMethod::MonteCarlo { samples: 40_000, seed }).unwrap();
        let se = mc.std_errors.clone().unwrap();
        prop_assert!((mc.rejected - exact.rejected).abs() <= 4.0 * se[0] + 1e-9);
        for j in 0..k {
            prop_assert!((mc.tiers[j] - exact.tiers[j]).abs() <= 4.0 * se[j + 1] + 1e-9);
        }
    }

    #[test]
    fn tiered_mechanism_keeps_menu_invariants(seed in any::<u64>(), k in 1usize..5, steps in 50usize..400) {
        let mut r = rng(seed);
        let throughput = 120.0;
        let params = TieredParams {
            max_tiers: k,
            size_fractions: vec![1.0 / k as f64; k],
            delay_factors: (1..k).map(|_| r.gen_range(1.1..3.0)).collect(),
            price_factors: (1..k).map(|_| r.gen_range(0.1..0.9)).collect(),
            delay_freq: r.gen_range(1..10),
            tier_freq: r.gen_range(1..20),
            p_decrease: r.gen_range(0.0..1.0),
            new_tier_price: None,
            add_tier_price: 2.0,
            remove_tier_price: 1.0,
            target_load: 1.0,
            max_fill_factor: 2.0,
            min_price: 0.0,
            min_first_tier_fraction: 0.05,
        };
        let lambda = params.delay_factors.clone();
        let mut state = MechanismState::initial(MechanismParams::Tiered(params), throughput, 3.0).unwrap();
        for _ in 0..steps {
            let fullness: Vec<f64> = state.chain().sizes().iter().map(|s| r.gen_range(0.0..2.0 * s)).collect();
            let before = state.chain().prices();
            state.advance(&fullness, &mut r).unwrap();
            let chain = state.chain();
            prop_assert!(chain.len() <= k && !chain.is_empty());
            prop_assert!((chain.throughput() - throughput).abs() <= 1e-9 * throughput);
            let d = chain.delays();
            prop_assert_eq!(d[0], 1);
            for j in 0..d.len() - 1 {
                prop_assert!(d[j + 1] >= min_next_delay(lambda[j], d[j]));
            }
            prop_assert!(chain.prices().iter().all(|p| *p >= 0.0));
            // Existing tiers move by at most one-eighth per block.
            for (j, (&p0, &p1)) in before.iter().zip(&chain.prices()).enumerate().take(chain.len().min(before.len())) {
                if j + 1 < chain.len() || chain.len() <= before.len() {
                    prop_assert!(p1 <= p0 * 1.125 + 1e-12 && p1 >= p0 * 0.875 - 1e-12);
                }
            }
        }
    }
}

fn outcome(v0: f64, urgency: f64, tier: usize, utility: f64) -> TxOutcome {
    TxOutcome {
        value: ValueFunction::new(v0, DiscountFunction::geometric(urgency).unwrap()).unwrap(),
        tier,
        utility,
    }
}

fn report(blocks: &[Vec<TxOutcome>], clause: PolicyClause) -> ClauseReport {
    check_implementation(blocks, &DiversityPolicy::new(vec![clause]).unwrap(), 10.0).unwrap()[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// With the outcomes fixed, a transaction counts exactly for thresholds
    /// `p` in `[v(d) - u, v(d)]`, so the counted set changes only at those ends.
    #[test]
    fn clause_membership_is_a_price_interval(seed in any::<u64>(), d in 1.0f64..6.0) {
        let mut r = rng(seed);
        let blocks: Vec<Vec<TxOutcome>> = (0..5)
            .map(|_| (0..8).map(|_| {
                let tier = r.gen_range(0..3);
                let u = if tier == 0 { 0.0 } else { r.gen_range(0.0..2.0) };
                outcome(r.gen_range(0.0..4.0), r.gen_range(1.0..3.0), tier, u)
            }).collect())
            .collect();
        for p in [0.05, 0.3, 0.7, 1.1, 1.9, 2.6, 3.5] {
            let expected: f64 = blocks.iter().flatten()
                .filter(|o| o.tier > 0)
                .filter(|o| { let v = o.value.value_at(d); p <= v + 1e-12 && p >= v - o.utility - 1e-12 })
                .count() as f64 / blocks.len() as f64;
            let got = report(&blocks, PolicyClause::new(0.5, d, p).unwrap()).estimate;
            prop_assert!((got - expected).abs() < 1e-12);
        }
    }

    /// Once every included transaction dominates the entry, raising `p` only
    /// removes transactions from the count.
    #[test]
    fn estimate_falls_as_threshold_rises(seed in any::<u64>(), a in 0.05f64..1.0) {
        let mut r = rng(seed);
        let blocks: Vec<Vec<TxOutcome>> = (0..6)
            .map(|_| (0..10).map(|_| {
                let v0 = r.gen_range(0.0..4.0);
                outcome(v0, 2.0, 1, v0)
            }).collect())
            .collect();
        let mut last = f64::INFINITY;
        for step in 1..40 {
            let rep = report(&blocks, PolicyClause::new(a, 2.0, 0.05 * f64::from(step)).unwrap());
            prop_assert!(rep.estimate <= last);
            last = rep.estimate;
        }
    }

    #[test]
    fn satisfaction_is_monotone_in_fraction(seed in any::<u64>(), d in 1.0f64..4.0, p in 0.05f64..2.0) {
        let mut r = rng(seed);
        let blocks: Vec<Vec<TxOutcome>> = (0..8)
            .map(|_| (0..12).map(|_| {
                let v0 = r.gen_range(0.0..4.0);
                outcome(v0, 1.5, r.gen_range(0..3), r.gen_range(0.0..v0.max(1e-9)))
            }).collect())
            .collect();
        let mut was_unsatisfied = false;
        for step in 1..=20 {
            let rep = report(&blocks, PolicyClause::new(0.05 * f64::from(step), d, p).unwrap());
            prop_assert!(!(was_unsatisfied && rep.satisfied));
            was_unsatisfied |= !rep.satisfied;
        }
    }
}
