//! Case studies, agent-model validation of designed tariffs, and reliability analysis.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::solve_response;
use crate::domain::{check_len, dot, Group, PriceProfile, ScenarioConfig, Surge};
use crate::error::{Error, Result};
use crate::optimizer::{self, DemandResponse, OptimizationResult};
use crate::synth::Population;

/// The three case studies. Hours are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    TariffDesign,
    /// Peak-demand reduction of `beta` at the `peak_count` highest-demand hours.
    DrEvent { beta: f64, peak_count: usize },
    PriceSurge { hours: Vec<usize>, multiplier: f64 },
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::TariffDesign => "tariff_design",
            ScenarioKind::DrEvent { .. } => "dr_event",
            ScenarioKind::PriceSurge { .. } => "price_surge",
        }
    }

    /// The scenario settings implied by this kind on top of `base`.
    pub fn configure(&self, population: &Population, base: &ScenarioConfig) -> Result<ScenarioConfig> {
        let mut cfg = base.clone();
        match self {
            ScenarioKind::TariffDesign => {}
            ScenarioKind::DrEvent { beta, peak_count } => {
                cfg.beta = *beta;
                cfg.peak_hours = select_peak_hours(population, *peak_count)?;
            }
            ScenarioKind::PriceSurge { hours, multiplier } => {
                if !(*multiplier > 1.0) {
                    return Err(Error::Config(format!("surge multiplier must exceed 1, got {multiplier}")));
                }
                cfg.surge = Some(Surge {
                    hours: hours.clone(),
                    multiplier: *multiplier,
                });
            }
        }
        cfg.validate(population.horizon())?;
        Ok(cfg)
    }
}

/// The `k` hours with the largest aggregate baseline demand, ties to the
/// earlier hour, returned in ascending order.
pub fn select_peak_hours(population: &Population, k: usize) -> Result<Vec<usize>> {
    top_hours(&population.aggregate_baseline(), k)
}

fn top_hours(aggregate: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > aggregate.len() {
        return Err(Error::Config(format!("peak hour count {k} not in 1..={}", aggregate.len())));
    }
    let mut order: Vec<usize> = (0..aggregate.len()).collect();
    order.sort_by(|&a, &b| aggregate[b].total_cmp(&aggregate[a]).then(a.cmp(&b)));
    let mut hours = order[..k].to_vec();
    hours.sort_unstable();
    Ok(hours)
}

/// Multiplies the wholesale price at the given zero-based hours.
pub fn apply_surge(wholesale: &PriceProfile, hours: &[usize], multiplier: f64) -> Result<PriceProfile> {
    if let Some(&h) = hours.iter().find(|&&h| h >= wholesale.len()) {
        return Err(Error::Config(format!("surge hour {} outside 1..={}", h + 1, wholesale.len())));
    }
    let values = wholesale
        .values()
        .iter()
        .enumerate()
        .map(|(t, v)| if hours.contains(&t) { v * multiplier } else { *v })
        .collect();
    PriceProfile::new(values)
}

/// Wholesale prices after any surge in `config`.
pub fn effective_wholesale(wholesale: &PriceProfile, config: &ScenarioConfig) -> Result<PriceProfile> {
    match &config.surge {
        Some(s) => apply_surge(wholesale, &s.hours, s.multiplier),
        None => Ok(wholesale.clone()),
    }
}

/// Agent-model outcome for every consumer, at the group tariffs and at the wholesale price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestedOutcome {
    /// Per group: member bills at the tariff ($/day).
    pub bills: Vec<Vec<f64>>,
    /// Per group: member bills at the wholesale price.
    pub baseline_bills: Vec<Vec<f64>>,
    /// Per group: member daily incomes.
    pub incomes: Vec<Vec<f64>>,
    /// Aggregate hourly demand at the tariffs.
    pub demand: Vec<f64>,
    /// Aggregate hourly demand at the wholesale price.
    pub baseline_demand: Vec<f64>,
    /// Wholesale cost of the baseline demand, `Σ D_0·λ`.
    pub baseline_cost: f64,
}

/// Broadcasts each group's tariff to its members and solves every member's agent problem.
pub fn simulate_tested(population: &Population, tariffs: &[PriceProfile], wholesale: &PriceProfile) -> Result<TestedOutcome> {
    check_len(population.groups.len(), tariffs.len())?;
    let horizon = wholesale.len();
    let lookup: std::collections::HashMap<usize, &crate::domain::Consumer> =
        population.consumers.iter().map(|c| (c.id, c)).collect();
    type Member = (f64, f64, f64, Vec<f64>, Vec<f64>);
    let per_group: Vec<Vec<Member>> = population
        .groups
        .par_iter()
        .zip(tariffs)
        .map(|(g, tariff)| {
            g.members
                .iter()
                .map(|id| {
                    let c = lookup
                        .get(id)
                        .ok_or_else(|| Error::State(format!("group {} lists unknown consumer {id}", g.id)))?;
                    let at_tariff = solve_response(c, tariff).map_err(|e| e.for_consumer(*id))?;
                    let at_base = solve_response(c, wholesale).map_err(|e| e.for_consumer(*id))?;
                    Ok((
                        at_tariff.bill,
                        at_base.bill,
                        c.daily_income,
                        at_tariff.demand.into_inner(),
                        at_base.demand.into_inner(),
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = TestedOutcome {
        bills: Vec::new(),
        baseline_bills: Vec::new(),
        incomes: Vec::new(),
        demand: vec![0.0; horizon],
        baseline_demand: vec![0.0; horizon],
        baseline_cost: 0.0,
    };
    for members in per_group {
        let mut bills = Vec::with_capacity(members.len());
        let mut base = Vec::with_capacity(members.len());
        let mut incomes = Vec::with_capacity(members.len());
        for (bill, base_bill, income, d, d0) in members {
            bills.push(bill);
            base.push(base_bill);
            incomes.push(income);
            for t in 0..horizon {
                out.demand[t] += d[t];
                out.baseline_demand[t] += d0[t];
            }
            out.baseline_cost += dot(&d0, wholesale.values());
        }
        out.bills.push(bills);
        out.baseline_bills.push(base);
        out.incomes.push(incomes);
    }
    Ok(out)
}

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Linear-interpolation quartiles; `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Self {
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValidation {
    pub group: usize,
    pub size: usize,
    pub baseline_burden: f64,
    pub predicted_burden: f64,
    pub tested_burden: f64,
    /// Spread of individual tested burdens.
    pub member_burden: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueSummary {
    /// `Σ D_0·λ` from the agent model.
    pub baseline: f64,
    /// Model-predicted revenue at the tariffs.
    pub predicted: f64,
    /// Agent-model revenue at the tariffs.
    pub tested: f64,
    /// `C + Σ D_0·λ`.
    pub required: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakValidation {
    /// Zero-based hour.
    pub hour: usize,
    /// Fractional reduction against the reference demand.
    pub predicted_reduction: f64,
    pub tested_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub groups: Vec<GroupValidation>,
    pub revenue: RevenueSummary,
    pub peaks: Vec<PeakValidation>,
    pub beta: f64,
    /// Largest |predicted − tested| group burden.
    pub max_burden_gap: f64,
    /// Largest |predicted − tested| / tested group burden.
    pub max_relative_burden_gap: f64,
    /// |predicted − tested| / tested revenue.
    pub revenue_gap: f64,
    pub mismatch_budget: f64,
}

impl ValidationReport {
    /// Combines the optimizer's predictions with agent-model outcomes. Tested
    /// quantities come only from `tested`.
    pub fn new(result: &OptimizationResult, tested: &TestedOutcome, config: &ScenarioConfig, mismatch_budget: f64) -> Result<Self> {
        let n = result.prices.len();
        check_len(n, tested.bills.len())?;
        let mut groups = Vec::with_capacity(n);
        let mut predicted_revenue = 0.0;
        let (mut max_gap, mut max_rel) = (0.0f64, 0.0f64);
        for g in 0..n {
            let size = tested.bills[g].len();
            let income: f64 = tested.incomes[g].iter().sum();
            let tested_burden = tested.bills[g].iter().sum::<f64>() / income;
            let baseline_burden = tested.baseline_bills[g].iter().sum::<f64>() / income;
            let predicted_burden = result.objective.group_burden[g];
            let members: Vec<f64> = tested.bills[g].iter().zip(&tested.incomes[g]).map(|(b, i)| b / i).collect();
            let gap = (predicted_burden - tested_burden).abs();
            max_gap = max_gap.max(gap);
            max_rel = max_rel.max(gap / tested_burden.abs().max(f64::MIN_POSITIVE));
            predicted_revenue +=
                size as f64 * dot(result.predicted_demand[g].values(), result.prices[g].values());
            groups.push(GroupValidation {
                group: g,
                size,
                baseline_burden,
                predicted_burden,
                tested_burden,
                member_burden: Quartiles::of(&members).ok_or_else(|| Error::State(format!("group {g} is empty")))?,
            });
        }
        let tested_revenue: f64 = tested.bills.iter().flatten().sum();
        let peaks = config
            .peak_hours
            .iter()
            .map(|&t| {
                let predicted: f64 = (0..n)
                    .map(|g| tested.bills[g].len() as f64 * result.predicted_demand[g].values()[t])
                    .sum();
                let reference: f64 = (0..n)
                    .map(|g| tested.bills[g].len() as f64 * result.reference_demand[g].values()[t])
                    .sum();
                PeakValidation {
                    hour: t,
                    predicted_reduction: 1.0 - predicted / reference,
                    tested_reduction: 1.0 - tested.demand[t] / tested.baseline_demand[t],
                }
            })
            .collect();
        Ok(Self {
            groups,
            revenue: RevenueSummary {
                baseline: tested.baseline_cost,
                predicted: predicted_revenue,
                tested: tested_revenue,
                required: config.om_cost + tested.baseline_cost,
            },
            peaks,
            beta: config.beta,
            max_burden_gap: max_gap,
            max_relative_burden_gap: max_rel,
            revenue_gap: (predicted_revenue - tested_revenue).abs() / tested_revenue.abs().max(f64::MIN_POSITIVE),
            mismatch_budget,
        })
    }

    /// Tested peak hours whose reduction reaches `(1 − budget)·β`.
    pub fn peaks_within_budget(&self) -> usize {
        self.peaks
            .iter()
            .filter(|p| p.tested_reduction >= (1.0 - self.mismatch_budget) * self.beta)
            .count()
    }

    /// Every relative gap within the budget and every peak target met within it.
    pub fn within_budget(&self) -> bool {
        self.max_relative_burden_gap <= self.mismatch_budget
            && self.revenue_gap <= self.mismatch_budget
            && self.peaks_within_budget() == self.peaks.len()
    }
}

/// Revenue change against baseline, in $ and % of baseline profit. Baseline
/// profit is `Σ D_0·λ`, less `C` when `C > 0`.
pub fn revenue_delta(revenue: &RevenueSummary, om_cost: f64) -> (f64, f64) {
    let delta = revenue.tested - revenue.baseline;
    let profit = if om_cost > 0.0 { revenue.baseline - om_cost } else { revenue.baseline };
    (delta, 100.0 * delta / profit)
}

/// Everything produced by one case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub kind: ScenarioKind,
    pub config: ScenarioConfig,
    pub result: OptimizationResult,
    pub tested: TestedOutcome,
    pub report: ValidationReport,
}

/// The scenario config for `kind`, with reliability margins on the peak caps
/// when a residual pool is given and `reliability_z > 0`.
pub fn prepare_config(
    kind: &ScenarioKind,
    population: &Population,
    base: &ScenarioConfig,
    residuals: Option<&[Vec<Vec<f64>>]>,
) -> Result<ScenarioConfig> {
    let mut config = kind.configure(population, base)?;
    if config.has_dr_constraint() && config.reliability_z > 0.0 && config.peak_margin.is_empty() {
        match residuals {
            Some(pool) => {
                let sizes: Vec<usize> = population.groups.iter().map(Group::size).collect();
                config.peak_margin = reliability_margins(pool, &sizes, &config.peak_hours, config.reliability_z)?;
            }
            None => warn!("no residual pool given; the peak caps carry no reliability margin"),
        }
    }
    Ok(config)
}

/// Broadcasts the designed tariffs to every consumer and compares the agent
/// model's response with the optimizer's predictions.
pub fn validate_result(
    population: &Population,
    result: &OptimizationResult,
    config: &ScenarioConfig,
    mismatch_budget: f64,
) -> Result<(TestedOutcome, ValidationReport)> {
    let tested = simulate_tested(population, &result.prices, &result.wholesale)?;
    let report = ValidationReport::new(result, &tested, config, mismatch_budget)?;
    Ok((tested, report))
}

/// Optimizes tariffs for the scenario and validates them against the agent model.
pub fn run_scenario<M: DemandResponse>(
    kind: &ScenarioKind,
    population: &Population,
    models: &[M],
    wholesale: &PriceProfile,
    base: &ScenarioConfig,
    mismatch_budget: f64,
    residuals: Option<&[Vec<Vec<f64>>]>,
) -> Result<ScenarioOutcome> {
    let config = prepare_config(kind, population, base, residuals)?;
    let lambda = effective_wholesale(wholesale, &config)?;
    let result = optimizer::solve(&population.groups, models, &lambda, &config)?;
    let (tested, report) = validate_result(population, &result, &config, mismatch_budget)?;
    Ok(ScenarioOutcome {
        kind: kind.clone(),
        config,
        result,
        tested,
        report,
    })
}

/// Aggregate demand to hold back below each peak cap so that the bootstrap
/// sum of group residuals stays under it with a z-score of `z`:
/// `max(0, Σ size·mean + z·sqrt(Σ size²·var))` per hour.
pub fn reliability_margins(residuals: &[Vec<Vec<f64>>], sizes: &[usize], hours: &[usize], z: f64) -> Result<Vec<f64>> {
    check_len(residuals.len(), sizes.len())?;
    if residuals.iter().any(Vec::is_empty) {
        return Err(Error::State("empty residual pool; train with a validation split".into()));
    }
    hours
        .iter()
        .map(|&t| {
            let (mut mean, mut var) = (0.0, 0.0);
            for (pool, &size) in residuals.iter().zip(sizes) {
                let column = pool
                    .iter()
                    .map(|day| day.get(t).copied().ok_or(Error::Shape { expected: t + 1, got: day.len() }))
                    .collect::<Result<Vec<f64>>>()?;
                let m = column.iter().sum::<f64>() / column.len() as f64;
                let v = column.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / column.len() as f64;
                let s = size as f64;
                mean += s * m;
                var += s * s * v;
            }
            Ok((mean + z * var.sqrt()).max(0.0))
        })
        .collect()
}

/// Bootstrap samples of aggregate demand at each peak hour when residuals
/// are added to the predicted group demand, with the aggregate cap per hour.
///
/// `residuals[g]` holds group `g`'s validation residuals (actual minus
/// predicted ΔD, one vector per day). Each trial draws, independently for every
/// group and hour, one day from the pool and adds `scale` times its residual.
pub fn mc_peak_demand(
    result: &OptimizationResult,
    residuals: &[Vec<Vec<f64>>],
    sizes: &[usize],
    config: &ScenarioConfig,
    n_trials: usize,
    seed: u64,
    scale: f64,
) -> Result<Vec<PeakSamples>> {
    let n = result.prices.len();
    check_len(n, residuals.len())?;
    check_len(n, sizes.len())?;
    if residuals.iter().any(Vec::is_empty) {
        return Err(Error::State("empty residual pool; train with a validation split".into()));
    }
    if n_trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let hours = &config.peak_hours;
    let mut out: Vec<PeakSamples> = hours
        .iter()
        .map(|&t| PeakSamples {
            hour: t,
            cap: (0..n)
                .map(|g| sizes[g] as f64 * (1.0 - config.beta) * result.reference_demand[g].values()[t])
                .sum(),
            reference: (0..n)
                .map(|g| sizes[g] as f64 * result.reference_demand[g].values()[t])
                .sum(),
            demand: Vec::with_capacity(n_trials),
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_trials {
        for (k, &t) in hours.iter().enumerate() {
            let mut demand = 0.0;
            for g in 0..n {
                let pool = &residuals[g];
                let e = pool[rng.random_range(0..pool.len())][t];
                demand += sizes[g] as f64 * (result.predicted_demand[g].values()[t] + scale * e);
            }
            out[k].demand.push(demand);
        }
    }
    Ok(out)
}

/// Monte-Carlo draws of aggregate demand at one peak hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSamples {
    /// Zero-based hour.
    pub hour: usize,
    /// `(1 − β)·Σ size·D_ref,t`.
    pub cap: f64,
    /// `Σ size·D_ref,t`.
    pub reference: f64,
    pub demand: Vec<f64>,
}

impl PeakSamples {
    pub fn success_rate(&self) -> f64 {
        self.demand.iter().filter(|d| **d <= self.cap).count() as f64 / self.demand.len().max(1) as f64
    }

    /// Fractional reductions against the reference demand, one per trial.
    pub fn reductions(&self) -> Vec<f64> {
        self.demand.iter().map(|d| 1.0 - d / self.reference).collect()
    }
}

/// Success rate of the peak target at each peak hour when bootstrap residuals
/// are added to the predicted group demand. See [`mc_peak_demand`].
pub fn reliability_mc(
    result: &OptimizationResult,
    residuals: &[Vec<Vec<f64>>],
    sizes: &[usize],
    config: &ScenarioConfig,
    n_trials: usize,
    seed: u64,
    scale: f64,
) -> Result<Vec<(usize, f64)>> {
    Ok(mc_peak_demand(result, residuals, sizes, config, n_trials, seed, scale)?
        .iter()
        .map(|s| (s.hour, s.success_rate()))
        .collect())
}

/// One line of the metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    /// 1-based group or hour, a stage name, or empty.
    pub key: String,
    pub value: f64,
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

/// Flattens a run into `(metric, key, value)` rows.
pub fn metrics_report(outcome: &ScenarioOutcome, timings: &Timings) -> Vec<MetricRow> {
    let row = |metric: &str, key: String, value: f64| MetricRow {
        metric: metric.to_string(),
        key,
        value,
    };
    let r = &outcome.report;
    let mut rows = Vec::new();
    for g in &r.groups {
        rows.push(row("burden_baseline", (g.group + 1).to_string(), g.baseline_burden));
        rows.push(row("burden_predicted", (g.group + 1).to_string(), g.predicted_burden));
        rows.push(row("burden_tested", (g.group + 1).to_string(), g.tested_burden));
    }
    let (delta, pct) = revenue_delta(&r.revenue, outcome.config.om_cost);
    rows.push(row("revenue_baseline", String::new(), r.revenue.baseline));
    rows.push(row("revenue_predicted", String::new(), r.revenue.predicted));
    rows.push(row("revenue_tested", String::new(), r.revenue.tested));
    rows.push(row("revenue_delta_usd", String::new(), delta));
    rows.push(row("revenue_delta_pct", String::new(), pct));
    for p in &r.peaks {
        rows.push(row("peak_reduction_predicted", (p.hour + 1).to_string(), p.predicted_reduction));
        rows.push(row("peak_reduction_tested", (p.hour + 1).to_string(), p.tested_reduction));
    }
    let o = &outcome.result;
    rows.push(row("objective_total", String::new(), o.objective.total));
    rows.push(row("objective_burden", String::new(), o.objective.burden));
    rows.push(row("objective_deviation", String::new(), o.objective.deviation));
    rows.push(row("objective_burden_at_wholesale", String::new(), o.objective_at_wholesale.burden));
    rows.push(row("max_burden_gap", String::new(), r.max_burden_gap));
    rows.push(row("revenue_gap", String::new(), r.revenue_gap));
    rows.push(row("converged", String::new(), if o.converged { 1.0 } else { 0.0 }));
    for (stage, secs) in &timings.stages {
        rows.push(row("seconds", stage.clone(), *secs));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Consumer, DemandProfile, FlexParams};
    use crate::optimizer::InelasticResponse;
    use crate::synth::group_by_burden;

    fn consumer(id: usize, income: f64, base: Vec<f64>) -> Consumer {
        let d0 = DemandProfile::baseline(base).unwrap();
        let flex = FlexParams::proportional(&d0, 0.5, 0.1, 0.2, 0.1, 0.0).unwrap();
        Consumer::new(id, income, d0, flex).unwrap()
    }

    fn tiny_population() -> Population {
        let consumers = vec![
            consumer(0, 50_000.0, vec![1.0, 5.0, 3.0, 5.0]),
            consumer(1, 30_000.0, vec![1.0, 5.0, 3.0, 5.0]),
            consumer(2, 9_000.0, vec![1.0, 5.0, 3.0, 5.0]),
            consumer(3, 4_000.0, vec![1.0, 5.0, 3.0, 5.0]),
        ];
        group_by_burden(consumers, &PriceProfile::flat(0.1, 4).unwrap(), 2).unwrap()
    }

    #[test]
    fn peak_hours_follow_aggregate_demand_with_tie_rule() {
        assert_eq!(top_hours(&[1.0, 5.0, 3.0, 5.0], 2).unwrap(), vec![1, 3]);
        assert_eq!(top_hours(&[1.0, 5.0, 3.0, 5.0], 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(top_hours(&[1.0], 2).is_err());
        assert_eq!(select_peak_hours(&tiny_population(), 2).unwrap(), vec![1, 3]);
    }

    #[test]
    fn peak_hours_on_the_double_peak_profile() {
        let seeds = crate::synth::default_seed_profiles().unwrap();
        let wholesale = crate::synth::wholesale_shape(24, 0.07);
        let cfg = crate::synth::PopulationConfig {
            n_consumers: 100,
            ..Default::default()
        };
        let pop = crate::synth::gen_population(&cfg, &seeds, &wholesale).unwrap();
        let agg = pop.aggregate_baseline();
        let mut sorted: Vec<(f64, usize)> = agg.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut expected: Vec<usize> = sorted[..4].iter().map(|x| x.1).collect();
        expected.sort_unstable();
        assert_eq!(select_peak_hours(&pop, 4).unwrap(), expected);
        assert!(expected.iter().all(|&h| (14..=20).contains(&h)));
    }

    #[test]
    fn surge_multiplies_exactly_the_named_hours() {
        let base = crate::synth::wholesale_shape(24, 0.05);
        let s = apply_surge(&base, &[13, 15], 5.0).unwrap();
        for t in 0..24 {
            let expected = if t == 13 || t == 15 { 5.0 * base.values()[t] } else { base.values()[t] };
            assert_eq!(s.values()[t], expected);
        }
        assert_eq!(apply_surge(&base, &[13, 15], 1.0).unwrap(), base);
        assert_eq!(apply_surge(&base, &[], 5.0).unwrap(), base);
        assert!(apply_surge(&base, &[24], 5.0).is_err());
    }

    #[test]
    fn surge_kind_rejects_non_increasing_multiplier() {
        let kind = ScenarioKind::PriceSurge {
            hours: vec![1],
            multiplier: 1.0,
        };
        assert!(kind.configure(&tiny_population(), &ScenarioConfig::default()).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(Quartiles::of(&[]).is_none());
    }

    fn identity_outcome() -> (Population, OptimizationResult, TestedOutcome, ScenarioConfig) {
        let pop = tiny_population();
        let lambda = PriceProfile::flat(0.1, 4).unwrap();
        let cfg = ScenarioConfig {
            energy_burden_cap: 10.0,
            enforce_revenue: false,
            price_bounds: false,
            ..Default::default()
        };
        let models = [InelasticResponse { horizon: 4 }, InelasticResponse { horizon: 4 }];
        let result = optimizer::solve(&pop.groups, &models, &lambda, &cfg).unwrap();
        let tested = simulate_tested(&pop, &result.prices, &lambda).unwrap();
        (pop, result, tested, cfg)
    }

    #[test]
    fn identity_scenario_has_no_revenue_or_burden_change() {
        let (_, result, tested, cfg) = identity_outcome();
        assert_eq!(result.prices[0], PriceProfile::flat(0.1, 4).unwrap());
        let report = ValidationReport::new(&result, &tested, &cfg, 0.15).unwrap();
        let (delta, pct) = revenue_delta(&report.revenue, 0.0);
        assert_eq!(delta, 0.0);
        assert_eq!(pct, 0.0);
        for g in &report.groups {
            assert_eq!(g.tested_burden, g.baseline_burden);
        }
    }

    #[test]
    fn revenue_percentage_is_delta_over_baseline_profit() {
        let rev = RevenueSummary {
            baseline: 200.0,
            predicted: 0.0,
            tested: 209.0,
            required: 0.0,
        };
        assert_eq!(revenue_delta(&rev, 0.0), (9.0, 4.5));
        assert_eq!(revenue_delta(&rev, 20.0), (9.0, 5.0));
    }

    #[test]
    fn report_has_one_row_pair_per_peak_hour() {
        let (pop, result, tested, mut cfg) = identity_outcome();
        cfg.peak_hours = vec![1, 3];
        let report = ValidationReport::new(&result, &tested, &cfg, 0.15).unwrap();
        let outcome = ScenarioOutcome {
            kind: ScenarioKind::TariffDesign,
            config: cfg,
            result,
            tested,
            report,
        };
        let rows = metrics_report(&outcome, &Timings::default());
        let peak_rows = rows.iter().filter(|r| r.metric == "peak_reduction_tested").count();
        assert_eq!(peak_rows, 2);
        assert_eq!(rows.iter().filter(|r| r.metric == "burden_tested").count(), pop.groups.len());
    }

    fn mc_fixture(slack_per_group: f64) -> (OptimizationResult, ScenarioConfig) {
        let (_, mut result, _, mut cfg) = identity_outcome();
        cfg.peak_hours = vec![1];
        cfg.beta = 0.0;
        // predicted demand sits `slack_per_group` below the reference at hour 1
        for g in 0..2 {
            let mut d = result.reference_demand[g].values().to_vec();
            d[1] -= slack_per_group;
            result.predicted_demand[g] = DemandProfile::new(d).unwrap();
        }
        (result, cfg)
    }

    #[test]
    fn zero_residuals_always_succeed() {
        let (result, cfg) = mc_fixture(0.0);
        let pools = vec![vec![vec![0.0; 4]; 3]; 2];
        let rates = reliability_mc(&result, &pools, &[2, 2], &cfg, 100, 1, 1.0).unwrap();
        assert_eq!(rates, vec![(1, 1.0)]);
    }

    #[test]
    fn constant_violating_residual_always_fails() {
        let (result, cfg) = mc_fixture(0.1);
        let pools = vec![vec![vec![0.5; 4]; 3]; 2];
        let rates = reliability_mc(&result, &pools, &[2, 2], &cfg, 100, 1, 1.0).unwrap();
        assert_eq!(rates, vec![(1, 0.0)]);
    }

    #[test]
    fn two_point_residuals_match_the_analytic_rate() {
        // each group draws ±1 with probability ½ against a total slack of 1.2,
        // so only the (+1, +1) draw fails: rate 3/4
        let (result, cfg) = mc_fixture(0.6);
        let pools = vec![vec![vec![1.0; 4], vec![-1.0; 4]]; 2];
        let rates = reliability_mc(&result, &pools, &[1, 1], &cfg, 10_000, 42, 1.0).unwrap();
        let sigma = (0.75f64 * 0.25 / 10_000.0).sqrt();
        assert!((rates[0].1 - 0.75).abs() < 4.0 * sigma, "rate {}", rates[0].1);
        let again = reliability_mc(&result, &pools, &[1, 1], &cfg, 10_000, 42, 1.0).unwrap();
        assert_eq!(rates, again);
    }

    #[test]
    fn larger_residuals_never_raise_success() {
        let (result, cfg) = mc_fixture(0.3);
        let pools = vec![vec![vec![0.2; 4], vec![-0.4; 4], vec![0.05; 4], vec![0.5; 4]]; 2];
        let base = reliability_mc(&result, &pools, &[3, 5], &cfg, 5_000, 7, 1.0).unwrap();
        let wide = reliability_mc(&result, &pools, &[3, 5], &cfg, 5_000, 7, 2f64.sqrt()).unwrap();
        assert!(wide[0].1 <= base[0].1);
    }

    #[test]
    fn empty_pool_is_a_state_error() {
        let (result, cfg) = mc_fixture(0.1);
        let pools = vec![vec![], vec![vec![0.0; 4]]];
        assert!(matches!(
            reliability_mc(&result, &pools, &[2, 2], &cfg, 10, 1, 1.0),
            Err(Error::State(_))
        ));
    }
}
