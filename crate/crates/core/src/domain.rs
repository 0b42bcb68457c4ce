//! Value types shared by every stage of the pipeline.
//!
//! Profiles are hourly vectors over a horizon of `T` slots (24 by default).
//! All constructors validate their input, so a value that exists is a value
//! that satisfies its invariants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of hourly slots in a tariff day.
pub const DEFAULT_HORIZON: usize = 24;

/// Days per year used to turn annual income into daily income (no leap years).
pub const DAYS_PER_YEAR: f64 = 365.0;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Domain(format!("{what} is empty")));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Domain(format!("{what}[{i}] = {v} is not finite")));
    }
    Ok(())
}

fn check_nonnegative(values: &[f64], what: &str) -> Result<()> {
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::Domain(format!("{what}[{i}] = {v} is negative")));
    }
    Ok(())
}

/// Checks that `got` equals the expected horizon.
pub fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape { expected, got });
    }
    Ok(())
}

/// Hourly prices in $/kWh. Used for both tariffs and the wholesale reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PriceProfile(Vec<f64>);

impl PriceProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "price")?;
        check_nonnegative(&values, "price")?;
        Ok(Self(values))
    }

    /// Like [`PriceProfile::new`] but also checks the horizon length.
    pub fn with_horizon(values: Vec<f64>, horizon: usize) -> Result<Self> {
        check_len(horizon, values.len())?;
        Self::new(values)
    }

    pub fn flat(value: f64, horizon: usize) -> Result<Self> {
        Self::new(vec![value; horizon])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PriceProfile {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PriceProfile> for Vec<f64> {
    fn from(p: PriceProfile) -> Self {
        p.0
    }
}

/// Hourly energy in kWh.
///
/// The same type carries baseline demand (non-negative, see
/// [`DemandProfile::baseline`]) and demand changes, which may be negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DemandProfile(Vec<f64>);

impl DemandProfile {
    /// Any finite profile; used for demand changes.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "demand")?;
        Ok(Self(values))
    }

    /// A consumption profile, which must also be non-negative.
    pub fn baseline(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "baseline demand")?;
        check_nonnegative(&values, "baseline demand")?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for DemandProfile {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<DemandProfile> for Vec<f64> {
    fn from(p: DemandProfile) -> Self {
        p.0
    }
}

/// Consumer flexibility in the agent model.
///
/// `c1` penalizes reduced demand and `c2` shifted demand ($/kWh²). The
/// bounds are per-hour boxes on the reduction and shift components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexParams {
    pub c1: f64,
    pub c2: f64,
    pub shift_lo: Vec<f64>,
    pub shift_hi: Vec<f64>,
    pub reduce_lo: Vec<f64>,
    pub reduce_hi: Vec<f64>,
}

impl FlexParams {
    /// Bounds proportional to the baseline: shifts within `±gamma_shift·D0`,
    /// reductions within `[-gamma_reduce·D0, reduce_up·D0]`.
    pub fn proportional(
        baseline: &DemandProfile,
        c1: f64,
        c2: f64,
        gamma_shift: f64,
        gamma_reduce: f64,
        reduce_up: f64,
    ) -> Result<Self> {
        let d0 = baseline.values();
        let flex = Self {
            c1,
            c2,
            shift_lo: d0.iter().map(|d| -gamma_shift * d).collect(),
            shift_hi: d0.iter().map(|d| gamma_shift * d).collect(),
            reduce_lo: d0.iter().map(|d| -gamma_reduce * d).collect(),
            reduce_hi: d0.iter().map(|d| reduce_up * d).collect(),
        };
        flex.validate(d0.len())?;
        Ok(flex)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1.is_finite()) || !(self.c2 > 0.0 && self.c2.is_finite()) {
            return Err(Error::Domain(format!(
                "flexibility costs must be positive (c1 = {}, c2 = {})",
                self.c1, self.c2
            )));
        }
        for (name, v) in [
            ("shift_lo", &self.shift_lo),
            ("shift_hi", &self.shift_hi),
            ("reduce_lo", &self.reduce_lo),
            ("reduce_hi", &self.reduce_hi),
        ] {
            check_len(horizon, v.len())?;
            check_finite(v, name)?;
        }
        for t in 0..horizon {
            if !(self.shift_lo[t] <= 0.0 && 0.0 <= self.shift_hi[t]) {
                return Err(Error::Domain(format!(
                    "shift bounds at hour {t} do not straddle zero: [{}, {}]",
                    self.shift_lo[t], self.shift_hi[t]
                )));
            }
            if !(self.reduce_lo[t] <= 0.0 && 0.0 <= self.reduce_hi[t]) {
                return Err(Error::Domain(format!(
                    "reduction bounds at hour {t} do not straddle zero: [{}, {}]",
                    self.reduce_lo[t], self.reduce_hi[t]
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consumer {
    pub id: usize,
    pub annual_income: f64,
    pub daily_income: f64,
    pub baseline: DemandProfile,
    pub flex: FlexParams,
}

impl Consumer {
    pub fn new(
        id: usize,
        annual_income: f64,
        baseline: DemandProfile,
        flex: FlexParams,
    ) -> Result<Self> {
        if !(annual_income > 0.0 && annual_income.is_finite()) {
            return Err(Error::Domain(format!(
                "consumer {id}: annual income must be positive, got {annual_income}"
            )));
        }
        check_nonnegative(baseline.values(), "baseline demand")?;
        flex.validate(baseline.len())?;
        Ok(Self {
            id,
            annual_income,
            daily_income: annual_income / DAYS_PER_YEAR,
            baseline,
            flex,
        })
    }

    pub fn horizon(&self) -> usize {
        self.baseline.len()
    }
}

/// A burden group. Every member is charged the same tariff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub id: usize,
    pub members: Vec<usize>,
    pub avg_baseline: DemandProfile,
    pub avg_daily_income: f64,
}

impl Group {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// How the optimizer differentiates the demand model with respect to prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Full lower-triangular Jacobian of demand change with respect to price.
    #[default]
    FullJacobian,
    /// Keeps only the own-hour sensitivities `∂ΔD_t/∂p_t`.
    #[serde(rename = "paper_diagonal", alias = "diagonal")]
    Diagonal,
}

/// Schedule and tolerances of the barrier method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierConfig {
    pub mu0: f64,
    pub mu_growth: f64,
    pub epsilon: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Required slack of the phase-1 point, as a fraction of each constraint's scale.
    pub slack_margin: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_halvings: usize,
    /// Inner loops also stop once an accepted step lowers `F0` by less than
    /// this fraction of `|F0|`. Relu kinks keep the gradient from vanishing.
    pub relative_decrease: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            mu0: 1.0,
            mu_growth: 10.0,
            epsilon: 1e-6,
            max_outer: 12,
            max_inner: 500,
            slack_margin: 1e-3,
            armijo: 1e-4,
            max_halvings: 60,
            relative_decrease: 1e-10,
        }
    }
}

/// A wholesale price surge: selected hours are multiplied by `multiplier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surge {
    /// Zero-based hour indices.
    pub hours: Vec<usize>,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub energy_burden_cap: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Zero-based hours carrying the demand-reduction constraint. Empty disables it.
    pub peak_hours: Vec<usize>,
    pub om_cost: f64,
    pub surge: Option<Surge>,
    pub barrier: BarrierConfig,
    pub gradient_mode: GradientMode,
    /// Upper price bound as a multiple of the largest wholesale price.
    pub price_cap_factor: f64,
    pub enforce_revenue: bool,
    pub price_bounds: bool,
    /// Width of the reliability margin below each peak cap, in standard
    /// deviations of the aggregated prediction residual. Zero keeps the plain cap.
    pub reliability_z: f64,
    /// Aggregate demand (kWh) held back below each peak cap, aligned with
    /// `peak_hours`. Empty means no margin.
    pub peak_margin: Vec<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            energy_burden_cap: 0.06,
            alpha: 1.0,
            beta: 0.0,
            peak_hours: Vec::new(),
            om_cost: 0.0,
            surge: None,
            barrier: BarrierConfig::default(),
            gradient_mode: GradientMode::default(),
            price_cap_factor: 5.0,
            enforce_revenue: true,
            price_bounds: true,
            reliability_z: 2.5,
            peak_margin: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.energy_burden_cap > 0.0) {
            return bad(format!("energy_burden_cap must be > 0, got {}", self.energy_burden_cap));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if let Some(&h) = self.peak_hours.iter().find(|&&h| h >= horizon) {
            return bad(format!("peak hour {} outside 1..={horizon}", h + 1));
        }
        if let Some(s) = &self.surge {
            if let Some(&h) = s.hours.iter().find(|&&h| h >= horizon) {
                return bad(format!("surge hour {} outside 1..={horizon}", h + 1));
            }
            if !(s.multiplier > 0.0 && s.multiplier.is_finite()) {
                return bad(format!("surge multiplier must be positive, got {}", s.multiplier));
            }
        }
        if !(self.reliability_z >= 0.0 && self.reliability_z.is_finite()) {
            return bad(format!("reliability_z must be >= 0, got {}", self.reliability_z));
        }
        if !self.peak_margin.is_empty() && self.peak_margin.len() != self.peak_hours.len() {
            return bad(format!(
                "{} peak margins for {} peak hours",
                self.peak_margin.len(),
                self.peak_hours.len()
            ));
        }
        if let Some(m) = self.peak_margin.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
            return bad(format!("peak margins must be finite and >= 0, got {m}"));
        }
        let b = &self.barrier;
        if !(b.epsilon > 0.0) {
            return bad(format!("epsilon must be > 0, got {}", b.epsilon));
        }
        if !(b.mu_growth > 1.0) {
            return bad(format!("mu_growth must be > 1, got {}", b.mu_growth));
        }
        if !(b.relative_decrease >= 0.0) {
            return bad(format!("relative_decrease must be >= 0, got {}", b.relative_decrease));
        }
        if !(b.mu0 > 0.0) {
            return bad(format!("mu0 must be > 0, got {}", b.mu0));
        }
        if !(b.armijo > 0.0 && b.armijo < 0.5) {
            return bad(format!("armijo constant must lie in (0, 0.5), got {}", b.armijo));
        }
        if !(self.price_cap_factor > 1.0) {
            return bad(format!("price_cap_factor must be > 1, got {}", self.price_cap_factor));
        }
        Ok(())
    }

    pub fn has_dr_constraint(&self) -> bool {
        !self.peak_hours.is_empty()
    }
}

/// `[x]^+`. The subgradient convention at 0 is 0.
pub fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Bill over income for one day: `demand · price / daily_income`.
pub fn energy_burden(demand: &DemandProfile, price: &PriceProfile, daily_income: f64) -> Result<f64> {
    if !(daily_income > 0.0) {
        return Err(Error::Domain(format!("daily income must be positive, got {daily_income}")));
    }
    check_len(demand.len(), price.len())?;
    Ok(dot(demand.values(), price.values()) / daily_income)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
