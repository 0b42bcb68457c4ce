//! Invariants over randomly generated populations, responses and residuals.

use equitariff::domain::{DemandProfile, Group, PriceProfile, ScenarioConfig};
use equitariff::optimizer::{solve, LinearResponse};
use equitariff::scenarios::{apply_surge, reliability_margins, select_peak_hours};
use equitariff::synth::{gen_population, gen_price_days, synthetic_seed_profiles, PopulationConfig, PriceNoise};
use proptest::prelude::*;

fn population(seed: u64, n_consumers: usize, n_groups: usize) -> equitariff::synth::Population {
    let wholesale = equitariff::synth::wholesale_shape(24, 0.03);
    let config = PopulationConfig {
        n_consumers,
        n_groups,
        seed,
        ..Default::default()
    };
    gen_population(&config, &synthetic_seed_profiles(5, 24, seed), &wholesale).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn groups_partition_consumers_in_burden_order(seed in 0u64..10_000, n in 10usize..80, g in 1usize..8) {
        let g = g.min(n);
        let pop = population(seed, n, g);
        let mut ids: Vec<usize> = pop.groups.iter().flat_map(|g| g.members.clone()).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = pop.groups.iter().map(Group::size).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let wholesale = equitariff::synth::wholesale_shape(24, 0.03);
        let burden = |id: usize| -> f64 {
            let c = pop.consumer(id).unwrap();
            let bill: f64 = c.baseline.values().iter().zip(wholesale.values()).map(|(d, l)| d * l).sum();
            bill / c.daily_income
        };
        for w in pop.groups.windows(2) {
            let top = w[0].members.iter().map(|&i| burden(i)).fold(f64::NEG_INFINITY, f64::max);
            let bottom = w[1].members.iter().map(|&i| burden(i)).fold(f64::INFINITY, f64::min);
            prop_assert!(top <= bottom);
        }
    }

    #[test]
    fn peak_hours_dominate_the_rest(seed in 0u64..10_000, k in 1usize..24) {
        let pop = population(seed, 20, 2);
        let hours = select_peak_hours(&pop, k).unwrap();
        prop_assert_eq!(hours.len(), k);
        prop_assert!(hours.windows(2).all(|w| w[0] < w[1]));
        let agg = pop.aggregate_baseline();
        let lowest_in = hours.iter().map(|&t| agg[t]).fold(f64::INFINITY, f64::min);
        for t in (0..24).filter(|t| !hours.contains(t)) {
            prop_assert!(agg[t] <= lowest_in);
        }
    }

    #[test]
    fn surge_touches_only_named_hours(
        prices in prop::collection::vec(0.0f64..1.0, 24),
        hours in prop::collection::btree_set(0usize..24, 0..5),
        m in 1.0f64..10.0,
    ) {
        let base = PriceProfile::new(prices).unwrap();
        let hours: Vec<usize> = hours.into_iter().collect();
        let surged = apply_surge(&base, &hours, m).unwrap();
        for t in 0..24 {
            let expect = if hours.contains(&t) { base.values()[t] * m } else { base.values()[t] };
            prop_assert_eq!(surged.values()[t], expect);
        }
    }

    #[test]
    fn reliability_margin_grows_with_z(
        pools in prop::collection::vec(prop::collection::vec(prop::collection::vec(-0.05f64..0.05, 4), 1..12), 1..4),
        z1 in 0.0f64..3.0,
        dz in 0.0f64..3.0,
    ) {
        let sizes: Vec<usize> = (0..pools.len()).map(|g| 5 + g).collect();
        let hours = [0, 1, 2, 3];
        let lo = reliability_margins(&pools, &sizes, &hours, z1).unwrap();
        let hi = reliability_margins(&pools, &sizes, &hours, z1 + dz).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(*a >= 0.0);
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn price_days_are_positive_and_shaped(seed in 0u64..10_000, vol in 0.0f64..0.6, hv in 0.0f64..0.1) {
        let base = equitariff::synth::wholesale_shape(24, 0.03);
        let days = gen_price_days(20, seed, &base, &PriceNoise::lognormal(vol, hv)).unwrap();
        prop_assert_eq!(days.len(), 20);
        prop_assert!(days.iter().all(|d| d.len() == 24 && d.values().iter().all(|p| *p > 0.0 && p.is_finite())));
    }
}

fn linear_model(seeds: &[f64], t: usize) -> LinearResponse {
    let matrix = (0..t)
        .map(|i| (0..t).map(|j| if j <= i { seeds[(i * t + j) % seeds.len()] } else { 0.0 }).collect())
        .collect();
    LinearResponse {
        matrix,
        offset: (0..t).map(|i| 0.01 * seeds[i % seeds.len()]).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Accepted iterates stay strictly interior and the barrier objective never
    /// rises within an inner loop.
    #[test]
    fn barrier_iterates_are_interior_and_monotone(
        coeffs in prop::collection::vec(-3.0f64..0.5, 8),
        incomes in prop::collection::vec(3.0f64..200.0, 2),
        base in prop::collection::vec(0.5f64..3.0, 8),
        dr in any::<bool>(),
    ) {
        let lambda = PriceProfile::new(vec![0.05, 0.08, 0.12, 0.06]).unwrap();
        let groups: Vec<Group> = (0..2)
            .map(|n| Group {
                id: n,
                members: (0..3).map(|i| n * 10 + i).collect(),
                avg_baseline: DemandProfile::baseline(base[n * 4..n * 4 + 4].to_vec()).unwrap(),
                avg_daily_income: incomes[n],
            })
            .collect();
        let models = [linear_model(&coeffs[..4], 4), linear_model(&coeffs[4..], 4)];
        let config = ScenarioConfig {
            beta: if dr { 0.02 } else { 0.0 },
            peak_hours: if dr { vec![2] } else { vec![] },
            ..Default::default()
        };
        match solve(&groups, &models, &lambda, &config) {
            Ok(res) => {
                prop_assert!(res.trace.iter().all(|e| e.slacks.all_positive()));
                for w in res.trace.windows(2) {
                    if w[1].outer == w[0].outer && w[1].inner > 0 {
                        prop_assert!(w[1].barrier <= w[0].barrier);
                    }
                }
                let cap = res.wholesale.max() * config.price_cap_factor;
                prop_assert!(res.prices.iter().all(|p| p.values().iter().all(|v| *v > 0.0 && *v < cap)));
            }
            Err(equitariff::Error::ScenarioInfeasible(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}
