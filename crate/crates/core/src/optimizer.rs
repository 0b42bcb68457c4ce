//! Group tariff design by a log-barrier method over learned demand responses.
//!
//! Decision variables are one price vector per group. The barrier objective is
//!
//! `F0 = μ·f − ln g_rev − Σ_peak ln g_t − Σ ln p − Σ ln(cap − p)`
//!
//! where `f` sums, over consumers, the squared burden excess plus
//! `α‖p − λ‖²`. Each inner loop takes damped Gauss-Newton steps with a
//! backtracking line search that keeps every slack strictly positive; the
//! outer loop multiplies `μ` until `M/μ < ε`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{check_len, dot, hinge, DemandProfile, GradientMode, Group, PriceProfile, ScenarioConfig};
use crate::error::{Error, Result};
use crate::rnn::RnnModel;

/// A price-to-demand-change map with its input Jacobian.
pub trait DemandResponse: Sync {
    /// Demand change (kWh per hour) at `price`.
    fn delta(&self, price: &[f64]) -> Vec<f64>;

    /// `J[t][s] = ∂ΔD_t/∂p_s`.
    fn jacobian(&self, price: &[f64]) -> Vec<Vec<f64>>;
}

impl DemandResponse for RnnModel {
    fn delta(&self, price: &[f64]) -> Vec<f64> {
        let p = PriceProfile::new(price.to_vec()).expect("optimizer keeps prices non-negative");
        self.forward(&p).into_inner()
    }

    fn jacobian(&self, price: &[f64]) -> Vec<Vec<f64>> {
        let p = PriceProfile::new(price.to_vec()).expect("optimizer keeps prices non-negative");
        self.input_jacobian(&p)
    }
}

/// Demand that ignores prices.
#[derive(Debug, Clone, Copy)]
pub struct InelasticResponse {
    pub horizon: usize,
}

impl DemandResponse for InelasticResponse {
    fn delta(&self, _price: &[f64]) -> Vec<f64> {
        vec![0.0; self.horizon]
    }

    fn jacobian(&self, _price: &[f64]) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.horizon]; self.horizon]
    }
}

/// `ΔD = offset + matrix · p`.
#[derive(Debug, Clone)]
pub struct LinearResponse {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl LinearResponse {
    /// Own-hour response `ΔD_t = slope · (p_t − reference_t)`.
    pub fn diagonal(slope: f64, reference: &[f64]) -> Self {
        let t = reference.len();
        let matrix = (0..t)
            .map(|i| (0..t).map(|j| if i == j { slope } else { 0.0 }).collect())
            .collect();
        Self {
            matrix,
            offset: reference.iter().map(|r| -slope * r).collect(),
        }
    }
}

impl DemandResponse for LinearResponse {
    fn delta(&self, price: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, c)| c + dot(row, price))
            .collect()
    }

    fn jacobian(&self, _price: &[f64]) -> Vec<Vec<f64>> {
        self.matrix.clone()
    }
}

/// Decomposition of the design objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub total: f64,
    /// `Σ_n size_n · ([E_n − Ē]^+)²`.
    pub burden: f64,
    /// `Σ_n size_n · α‖p_n − λ‖²`.
    pub deviation: f64,
    /// Predicted burden per group.
    pub group_burden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    /// `None` when the revenue constraint is disabled.
    pub revenue: Option<f64>,
    /// `(zero-based hour, g_t)` per peak hour.
    pub peak: Vec<(usize, f64)>,
    /// Smallest of `p` and `cap − p` over all groups and hours; `None` when unbounded.
    pub price_bound: Option<f64>,
}

impl Slacks {
    pub fn all_positive(&self) -> bool {
        self.revenue.is_none_or(|g| g > 0.0)
            && self.peak.iter().all(|(_, g)| *g > 0.0)
            && self.price_bound.is_none_or(|g| g > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer: usize,
    /// 0 marks the starting point of an inner loop.
    pub inner: usize,
    pub mu: f64,
    pub objective: f64,
    pub barrier: f64,
    pub grad_norm: f64,
    /// Half the squared Newton decrement of the step taken from this point.
    pub decrement: f64,
    pub step: f64,
    pub slacks: Slacks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub prices: Vec<PriceProfile>,
    pub predicted_dd: Vec<DemandProfile>,
    /// Raw group baseline plus predicted demand change.
    pub predicted_demand: Vec<DemandProfile>,
    /// Predicted demand at the wholesale price; the baseline of every constraint.
    pub reference_demand: Vec<DemandProfile>,
    pub wholesale: PriceProfile,
    pub objective: ObjectiveTerms,
    pub objective_at_wholesale: ObjectiveTerms,
    pub slacks: Slacks,
    pub converged: bool,
    pub outer_iterations: usize,
    pub phase1_kappa: f64,
    pub mu: f64,
    pub barrier_terms: usize,
    pub trace: Vec<TraceEntry>,
}

struct GroupData {
    size: f64,
    income: f64,
    raw: Vec<f64>,
}

/// Everything evaluated at one price point.
struct Eval {
    dd: Vec<Vec<f64>>,
    demand: Vec<Vec<f64>>,
    burden: Vec<f64>,
    terms: ObjectiveTerms,
    slacks: Slacks,
}

/// The design problem for fixed groups, models, wholesale prices and scenario.
pub struct TariffProblem<'a, M: DemandResponse> {
    groups: Vec<GroupData>,
    models: &'a [M],
    wholesale: Vec<f64>,
    config: ScenarioConfig,
    reference: Vec<Vec<f64>>,
    cap: f64,
    horizon: usize,
}

impl<'a, M: DemandResponse> TariffProblem<'a, M> {
    pub fn new(groups: &[Group], models: &'a [M], wholesale: &PriceProfile, config: &ScenarioConfig) -> Result<Self> {
        let horizon = wholesale.len();
        config.validate(horizon)?;
        if groups.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        if models.len() != groups.len() {
            return Err(Error::State(format!(
                "{} groups but {} trained models",
                groups.len(),
                models.len()
            )));
        }
        for (g, m) in groups.iter().zip(models) {
            check_len(horizon, g.avg_baseline.len())?;
            check_len(horizon, m.delta(wholesale.values()).len())?;
            if !(g.avg_daily_income > 0.0) || g.members.is_empty() {
                return Err(Error::Domain(format!("group {} has no members or no income", g.id)));
            }
        }
        if wholesale.values().iter().all(|v| *v == 0.0) && config.price_bounds {
            return Err(Error::Domain("wholesale prices are all zero; the price cap would be zero".into()));
        }
        let data: Vec<GroupData> = groups
            .iter()
            .map(|g| GroupData {
                size: g.size() as f64,
                income: g.avg_daily_income,
                raw: g.avg_baseline.values().to_vec(),
            })
            .collect();
        let lambda = wholesale.values().to_vec();
        let reference = data
            .iter()
            .zip(models)
            .map(|(g, m)| g.raw.iter().zip(m.delta(&lambda)).map(|(r, d)| r + d).collect())
            .collect();
        Ok(Self {
            groups: data,
            models,
            cap: config.price_cap_factor * wholesale.max(),
            wholesale: lambda,
            config: config.clone(),
            reference,
            horizon,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn price_cap(&self) -> f64 {
        self.cap
    }

    /// Predicted demand per group at the wholesale price.
    pub fn reference_demand(&self) -> &[Vec<f64>] {
        &self.reference
    }

    /// Number of logarithmic barrier terms `M`.
    pub fn barrier_count(&self) -> usize {
        usize::from(self.config.enforce_revenue)
            + self.config.peak_hours.len()
            + if self.config.price_bounds { 2 * self.groups.len() * self.horizon } else { 0 }
    }

    fn flatten(&self, prices: &[PriceProfile]) -> Result<Vec<f64>> {
        check_len(self.groups.len(), prices.len())?;
        let mut x = Vec::with_capacity(self.groups.len() * self.horizon);
        for p in prices {
            check_len(self.horizon, p.len())?;
            x.extend_from_slice(p.values());
        }
        Ok(x)
    }

    fn unflatten(&self, x: &[f64]) -> Vec<PriceProfile> {
        x.chunks(self.horizon)
            .map(|c| PriceProfile::new(c.iter().map(|v| v.max(0.0)).collect()).expect("finite prices"))
            .collect()
    }

    fn evaluate(&self, x: &[f64]) -> Eval {
        let t_len = self.horizon;
        let dd: Vec<Vec<f64>> = self
            .models
            .par_iter()
            .enumerate()
            .map(|(n, m)| m.delta(&x[n * t_len..(n + 1) * t_len]))
            .collect();
        let demand: Vec<Vec<f64>> = self
            .groups
            .iter()
            .zip(&dd)
            .map(|(g, d)| g.raw.iter().zip(d).map(|(r, v)| r + v).collect())
            .collect();
        let cap_e = self.config.energy_burden_cap;
        let (mut burden_term, mut deviation) = (0.0, 0.0);
        let mut burden = Vec::with_capacity(self.groups.len());
        for (n, g) in self.groups.iter().enumerate() {
            let p = &x[n * t_len..(n + 1) * t_len];
            let e = dot(&demand[n], p) / g.income;
            let h = hinge(e - cap_e);
            burden_term += g.size * h * h;
            let dev: f64 = p.iter().zip(&self.wholesale).map(|(a, b)| (a - b) * (a - b)).sum();
            deviation += g.size * self.config.alpha * dev;
            burden.push(e);
        }
        let slacks = self.slacks_of(x, &demand);
        Eval {
            dd,
            demand,
            terms: ObjectiveTerms {
                total: burden_term + deviation,
                burden: burden_term,
                deviation,
                group_burden: burden.clone(),
            },
            burden,
            slacks,
        }
    }

    fn slacks_of(&self, x: &[f64], demand: &[Vec<f64>]) -> Slacks {
        let t_len = self.horizon;
        let revenue = self.config.enforce_revenue.then(|| {
            let mut g = -self.config.om_cost;
            for (n, grp) in self.groups.iter().enumerate() {
                g += grp.size * (dot(&demand[n], &x[n * t_len..(n + 1) * t_len]) - dot(&self.reference[n], &self.wholesale));
            }
            g
        });
        let peak = self
            .config
            .peak_hours
            .iter()
            .map(|&t| {
                let mut g = -self.peak_margin(t);
                for (n, grp) in self.groups.iter().enumerate() {
                    g += grp.size * ((1.0 - self.config.beta) * self.reference[n][t] - demand[n][t]);
                }
                (t, g)
            })
            .collect();
        let price_bound = self
            .config
            .price_bounds
            .then(|| x.iter().map(|p| p.min(self.cap - p)).fold(f64::INFINITY, f64::min));
        Slacks {
            revenue,
            peak,
            price_bound,
        }
    }

    /// Design objective and its decomposition.
    pub fn objective_f(&self, prices: &[PriceProfile]) -> Result<ObjectiveTerms> {
        Ok(self.evaluate(&self.flatten(prices)?).terms)
    }

    /// Revenue slack `Σ size·D·p − C − Σ size·D_ref·λ`.
    pub fn slack_revenue(&self, prices: &[PriceProfile]) -> Result<f64> {
        let x = self.flatten(prices)?;
        let e = self.evaluate(&x);
        let mut g = -self.config.om_cost;
        for (n, grp) in self.groups.iter().enumerate() {
            g += grp.size * (dot(&e.demand[n], prices[n].values()) - dot(&self.reference[n], &self.wholesale));
        }
        Ok(g)
    }

    /// Aggregate demand held back below the cap at hour `t`.
    fn peak_margin(&self, t: usize) -> f64 {
        self.config
            .peak_hours
            .iter()
            .position(|&h| h == t)
            .and_then(|k| self.config.peak_margin.get(k))
            .copied()
            .unwrap_or(0.0)
    }

    /// Peak slack `(1 − β)·Σ size·D_ref,t − Σ size·D_t − margin_t` at zero-based hour `t`.
    pub fn slack_peak(&self, prices: &[PriceProfile], t: usize) -> Result<f64> {
        if t >= self.horizon {
            return Err(Error::Shape {
                expected: self.horizon,
                got: t + 1,
            });
        }
        let e = self.evaluate(&self.flatten(prices)?);
        Ok(self
            .groups
            .iter()
            .enumerate()
            .map(|(n, g)| g.size * ((1.0 - self.config.beta) * self.reference[n][t] - e.demand[n][t]))
            .sum::<f64>()
            - self.peak_margin(t))
    }

    fn barrier_of(&self, x: &[f64], e: &Eval, mu: f64) -> Result<f64> {
        let mut value = mu * e.terms.total;
        let mut log_term = |g: f64, what: &str| -> Result<()> {
            if !(g > 0.0) {
                return Err(Error::NotInterior(format!("{what} slack is {g}")));
            }
            value -= g.ln();
            Ok(())
        };
        if let Some(g) = e.slacks.revenue {
            log_term(g, "revenue")?;
        }
        for &(t, g) in &e.slacks.peak {
            log_term(g, &format!("peak hour {}", t + 1))?;
        }
        if self.config.price_bounds {
            for &p in x {
                log_term(p, "price lower bound")?;
                log_term(self.cap - p, "price upper bound")?;
            }
        }
        Ok(value)
    }

    /// `F0 = μ·f − Σ ln(slack)`; fails when any slack is not strictly positive.
    pub fn barrier_value(&self, prices: &[PriceProfile], mu: f64) -> Result<f64> {
        let x = self.flatten(prices)?;
        let e = self.evaluate(&x);
        self.barrier_of(&x, &e, mu)
    }

    fn jacobians(&self, x: &[f64], mode: GradientMode) -> Vec<Vec<Vec<f64>>> {
        let t_len = self.horizon;
        self.models
            .par_iter()
            .enumerate()
            .map(|(n, m)| {
                let mut j = m.jacobian(&x[n * t_len..(n + 1) * t_len]);
                if mode == GradientMode::Diagonal {
                    for (t, row) in j.iter_mut().enumerate() {
                        for (s, v) in row.iter_mut().enumerate() {
                            if s != t {
                                *v = 0.0;
                            }
                        }
                    }
                }
                j
            })
            .collect()
    }

    /// Gradient of `F0` and a Hessian that drops second derivatives of the response.
    fn derivatives(&self, x: &[f64], e: &Eval, mu: f64, mode: GradientMode, hessian: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let t_len = self.horizon;
        let dim = x.len();
        let jac = self.jacobians(x, mode);
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = hessian.then(|| DMatrix::<f64>::zeros(dim, dim));

        // ∂(D·p)/∂p_s = D_s + Σ_t p_t J[t][s]
        let bill_grad: Vec<Vec<f64>> = (0..self.groups.len())
            .map(|n| {
                let p = &x[n * t_len..(n + 1) * t_len];
                (0..t_len)
                    .map(|s| e.demand[n][s] + (s..t_len).map(|t| p[t] * jac[n][t][s]).sum::<f64>())
                    .collect()
            })
            .collect();

        let cap_e = self.config.energy_burden_cap;
        let alpha = self.config.alpha;
        for (n, g) in self.groups.iter().enumerate() {
            let h = hinge(e.burden[n] - cap_e);
            let base = n * t_len;
            for s in 0..t_len {
                let de = bill_grad[n][s] / g.income;
                grad[base + s] += mu * g.size * (2.0 * h * de + 2.0 * alpha * (x[base + s] - self.wholesale[s]));
            }
            if let Some(hm) = hess.as_mut() {
                for s in 0..t_len {
                    hm[(base + s, base + s)] += mu * g.size * 2.0 * alpha;
                }
                if h > 0.0 {
                    // curvature of the bill through the first-order response, J + Jᵀ
                    for s in 0..t_len {
                        for r in 0..t_len {
                            hm[(base + s, base + r)] += mu
                                * g.size
                                * 2.0
                                * (bill_grad[n][s] * bill_grad[n][r] / g.income + h * (jac[n][r][s] + jac[n][s][r]))
                                / g.income;
                        }
                    }
                }
            }
        }

        let add_log = |gvec: &DVector<f64>, slack: f64, grad: &mut DVector<f64>, hess: &mut Option<DMatrix<f64>>| {
            grad.axpy(-1.0 / slack, gvec, 1.0);
            if let Some(hm) = hess.as_mut() {
                hm.ger(1.0 / (slack * slack), gvec, gvec, 1.0);
            }
        };

        if let Some(g_rev) = e.slacks.revenue {
            let mut gv = DVector::<f64>::zeros(dim);
            for (n, g) in self.groups.iter().enumerate() {
                for s in 0..t_len {
                    gv[n * t_len + s] = g.size * bill_grad[n][s];
                }
            }
            add_log(&gv, g_rev, &mut grad, &mut hess);
            if let Some(hm) = hess.as_mut() {
                for (n, g) in self.groups.iter().enumerate() {
                    let base = n * t_len;
                    for s in 0..t_len {
                        for r in 0..t_len {
                            hm[(base + s, base + r)] -= g.size * (jac[n][r][s] + jac[n][s][r]) / g_rev;
                        }
                    }
                }
            }
        }
        for &(t, g_t) in &e.slacks.peak {
            let mut gv = DVector::<f64>::zeros(dim);
            for (n, g) in self.groups.iter().enumerate() {
                for s in 0..=t {
                    gv[n * t_len + s] = -g.size * jac[n][t][s];
                }
            }
            add_log(&gv, g_t, &mut grad, &mut hess);
        }
        if self.config.price_bounds {
            for (i, &p) in x.iter().enumerate() {
                let u = self.cap - p;
                grad[i] += -1.0 / p + 1.0 / u;
                if let Some(hm) = hess.as_mut() {
                    hm[(i, i)] += 1.0 / (p * p) + 1.0 / (u * u);
                }
            }
        }
        (grad, hess)
    }

    /// Gradient of `F0` per group. `Diagonal` keeps only own-hour sensitivities.
    pub fn barrier_gradient(&self, prices: &[PriceProfile], mu: f64, mode: GradientMode) -> Result<Vec<Vec<f64>>> {
        let x = self.flatten(prices)?;
        let e = self.evaluate(&x);
        self.barrier_of(&x, &e, mu)?;
        let (grad, _) = self.derivatives(&x, &e, mu, mode, false);
        Ok(grad.as_slice().chunks(self.horizon).map(<[f64]>::to_vec).collect())
    }

    fn start_point(&self) -> Vec<f64> {
        let delta = 1e-6 * self.cap;
        let mut x = Vec::with_capacity(self.groups.len() * self.horizon);
        for _ in &self.groups {
            for &l in &self.wholesale {
                x.push(if self.config.price_bounds { l.clamp(delta, self.cap - delta) } else { l });
            }
        }
        x
    }

    fn margins_met(&self, e: &Eval) -> std::result::Result<(), String> {
        let margin = self.config.barrier.slack_margin;
        if let Some(g) = e.slacks.revenue {
            let scale: f64 = self
                .groups
                .iter()
                .enumerate()
                .map(|(n, grp)| grp.size * dot(&self.reference[n], &self.wholesale))
                .sum::<f64>()
                + self.config.om_cost;
            if g < margin * scale.max(f64::MIN_POSITIVE) {
                return Err(format!("revenue adequacy (slack {g:.6})"));
            }
        }
        for &(t, g) in &e.slacks.peak {
            let scale: f64 = self.groups.iter().enumerate().map(|(n, grp)| grp.size * self.reference[n][t]).sum();
            if g < margin * scale.max(f64::MIN_POSITIVE) {
                return Err(format!("peak reduction at hour {} (slack {g:.6})", t + 1));
            }
        }
        if let Some(g) = e.slacks.price_bound {
            if g <= 0.0 {
                return Err("price bounds".into());
            }
        }
        Ok(())
    }

    /// A strictly interior starting point: wholesale prices with the peak
    /// hours (every hour when there are none) scaled by a growing factor κ.
    pub fn phase1_initialize(&self) -> Result<(Vec<PriceProfile>, f64)> {
        let (x, kappa) = self.phase1()?;
        Ok((self.unflatten(&x), kappa))
    }

    fn phase1(&self) -> Result<(Vec<f64>, f64)> {
        const KAPPA_MAX: f64 = 10.0;
        let start = self.start_point();
        let t_len = self.horizon;
        let scaled: Vec<bool> = (0..t_len)
            .map(|t| self.config.peak_hours.is_empty() || self.config.peak_hours.contains(&t))
            .collect();
        let delta = 1e-6 * self.cap;
        let mut kappa = 1.0;
        loop {
            let x: Vec<f64> = start
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    if scaled[i % t_len] {
                        let v = p * kappa;
                        if self.config.price_bounds {
                            v.min(self.cap - delta)
                        } else {
                            v
                        }
                    } else {
                        p
                    }
                })
                .collect();
            let e = self.evaluate(&x);
            match self.margins_met(&e) {
                Ok(()) => {
                    debug!("phase 1 accepted kappa = {kappa}");
                    return Ok((x, kappa));
                }
                Err(violated) => {
                    if kappa > KAPPA_MAX {
                        return Err(Error::ScenarioInfeasible(format!(
                            "no interior starting point: {violated} not satisfied with peak prices scaled up to {kappa:.2}x"
                        )));
                    }
                    kappa *= 1.25;
                }
            }
        }
    }

    /// Prices must stay inside the box when it is enforced and non-negative always.
    fn admissible(&self, x: &[f64]) -> bool {
        if self.config.price_bounds {
            x.iter().all(|&p| p > 0.0 && p < self.cap)
        } else {
            x.iter().all(|&p| p >= 0.0 && p.is_finite())
        }
    }

    fn newton_direction(grad: &DVector<f64>, mut hess: DMatrix<f64>) -> (DVector<f64>, bool) {
        let scale = hess.diagonal().amax().max(1e-300);
        let mut tau = 0.0;
        for _ in 0..20 {
            if tau > 0.0 {
                for i in 0..hess.nrows() {
                    hess[(i, i)] += tau;
                }
            }
            if let Some(ch) = hess.clone().cholesky() {
                let d = -ch.solve(grad);
                if d.iter().all(|v| v.is_finite()) {
                    return (d, true);
                }
            }
            if tau > 0.0 {
                for i in 0..hess.nrows() {
                    hess[(i, i)] -= tau;
                }
            }
            tau = if tau == 0.0 { 1e-10 * scale } else { tau * 10.0 };
        }
        (-grad.clone(), false)
    }

    /// Minimizes `F0` at fixed `μ` from an interior point. Returns the final
    /// point, its trace and whether the stopping tolerance was met.
    fn inner(&self, x0: Vec<f64>, mu: f64, outer: usize, trace: &mut Vec<TraceEntry>) -> Result<(Vec<f64>, bool)> {
        let b = &self.config.barrier;
        let mode = self.config.gradient_mode;
        let mut x = x0;
        let mut e = self.evaluate(&x);
        let mut value = self.barrier_of(&x, &e, mu)?;
        let mut stalled = false;
        for k in 0..=b.max_inner {
            let (grad, hess) = self.derivatives(&x, &e, mu, mode, true);
            let grad_norm = grad.norm();
            let (dir, newton) = Self::newton_direction(&grad, hess.expect("requested"));
            let slope = grad.dot(&dir);
            let decrement = -0.5 * slope;
            let mut entry = TraceEntry {
                outer,
                inner: k,
                mu,
                objective: e.terms.total,
                barrier: value,
                grad_norm,
                decrement,
                step: 0.0,
                slacks: e.slacks.clone(),
            };
            let done = grad_norm <= b.epsilon || (newton && decrement <= b.epsilon) || slope >= 0.0 || stalled;
            if done || k == b.max_inner {
                trace.push(entry);
                return Ok((x, done));
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=b.max_halvings {
                let cand: Vec<f64> = x.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                if !self.admissible(&cand) {
                    step *= 0.5;
                    continue;
                }
                let ce = self.evaluate(&cand);
                if ce.slacks.all_positive() {
                    if let Ok(v) = self.barrier_of(&cand, &ce, mu) {
                        if v <= value + b.armijo * step * slope {
                            accepted = Some((cand, ce, v));
                            break;
                        }
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some((cand, ce, v)) => {
                    entry.step = step;
                    trace.push(entry);
                    stalled = value - v <= b.relative_decrease * v.abs().max(1.0);
                    x = cand;
                    e = ce;
                    value = v;
                }
                None => {
                    warn!("line search stalled at outer {outer}, inner {k} (decrement {decrement:.3e})");
                    trace.push(entry);
                    // a stall at a point whose predicted decrease is negligible is convergence
                    let tiny = decrement <= 1e-9 * value.abs().max(1.0);
                    return Ok((x, tiny));
                }
            }
        }
        unreachable!("loop returns at max_inner")
    }

    /// Runs one inner loop at fixed `μ` from `prices` and returns the final prices.
    pub fn inner_minimize(&self, prices: &[PriceProfile], mu: f64) -> Result<(Vec<PriceProfile>, Vec<TraceEntry>, bool)> {
        let x = self.flatten(prices)?;
        let mut trace = Vec::new();
        let (x, ok) = self.inner(x, mu, 0, &mut trace)?;
        Ok((self.unflatten(&x), trace, ok))
    }

    /// Phase 1 followed by the outer barrier loop.
    pub fn solve(&self) -> Result<OptimizationResult> {
        let b = &self.config.barrier;
        let (mut x, kappa) = self.phase1()?;
        let m = self.barrier_count() as f64;
        let mut mu = b.mu0;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut outer = 0;
        while outer < b.max_outer {
            outer += 1;
            let (next, inner_ok) = self.inner(x, mu, outer, &mut trace)?;
            x = next;
            if m / mu < b.epsilon {
                converged = inner_ok;
                break;
            }
            mu *= b.mu_growth;
        }
        if !converged {
            warn!("barrier loop stopped after {outer} outer iterations with M/mu = {:.3e}", m / mu);
        }
        let e = self.evaluate(&x);
        let at_wholesale = self.evaluate(&self.start_point()).terms;
        let prices = self.unflatten(&x);
        Ok(OptimizationResult {
            predicted_dd: e.dd.into_iter().map(|d| DemandProfile::new(d).expect("finite")).collect(),
            predicted_demand: e.demand.into_iter().map(|d| DemandProfile::new(d).expect("finite")).collect(),
            reference_demand: self.reference.iter().map(|d| DemandProfile::new(d.clone()).expect("finite")).collect(),
            wholesale: PriceProfile::new(self.wholesale.clone())?,
            objective: e.terms,
            objective_at_wholesale: at_wholesale,
            slacks: e.slacks,
            converged,
            outer_iterations: outer,
            phase1_kappa: kappa,
            mu,
            barrier_terms: self.barrier_count(),
            trace,
            prices,
        })
    }
}

/// Builds the problem and solves it.
pub fn solve<M: DemandResponse>(
    groups: &[Group],
    models: &[M],
    wholesale: &PriceProfile,
    config: &ScenarioConfig,
) -> Result<OptimizationResult> {
    TariffProblem::new(groups, models, wholesale, config)?.solve()
}
