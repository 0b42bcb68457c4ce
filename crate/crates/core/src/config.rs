//! Run configuration as read from TOML files.
//!
//! Values are layered: built-in defaults, then the file, then command-line
//! overrides. Hours are 1-based in files and converted to 0-based on the way
//! into the library types. One master seed drives every random stream.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{BarrierConfig, GradientMode, PriceProfile, ScenarioConfig};
use crate::error::{Error, Result};
use crate::rnn::TrainConfig;
use crate::scenarios::ScenarioKind;
use crate::synth::{self, PopulationConfig, PriceNoise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; population, price-day, training and Monte-Carlo seeds derive from it.
    pub seed: u64,
    pub prices: PricesSection,
    pub population: PopulationConfig,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub scenario: ScenarioSection,
    pub validation: ValidationSection,
    pub mc: McSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2018,
            prices: PricesSection::default(),
            population: PopulationConfig::default(),
            dataset: DatasetSection::default(),
            train: TrainConfig::default(),
            scenario: ScenarioSection::default(),
            validation: ValidationSection::default(),
            mc: McSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricesSection {
    pub horizon: usize,
    /// Mean of the built-in wholesale shape ($/kWh).
    pub level: f64,
    /// One-row CSV replacing the built-in wholesale shape.
    pub wholesale_file: Option<PathBuf>,
    /// CSV of seed consumer days replacing the shipped profiles.
    pub seed_profiles_file: Option<PathBuf>,
}

impl Default for PricesSection {
    fn default() -> Self {
        Self {
            horizon: 24,
            level: 0.03,
            wholesale_file: None,
            seed_profiles_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub days: usize,
    pub train_fraction: f64,
    pub noise: PriceNoise,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            days: 500,
            train_fraction: 0.8,
            noise: PriceNoise::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    #[default]
    TariffDesign,
    DrEvent,
    PriceSurge,
}

impl std::str::FromStr for KindName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tariff_design" => Ok(KindName::TariffDesign),
            "dr_event" => Ok(KindName::DrEvent),
            "price_surge" => Ok(KindName::PriceSurge),
            other => Err(Error::Config(format!(
                "unknown scenario kind `{other}` (expected tariff_design, dr_event or price_surge)"
            ))),
        }
    }
}

/// Scenario settings in file form (1-based hours).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: KindName,
    /// Peak reduction ratio of a `dr_event`.
    pub beta: f64,
    /// Number of highest-demand hours a `dr_event` constrains.
    pub peak_count: usize,
    /// 1-based hours multiplied in a `price_surge`.
    pub surge_hours: Vec<usize>,
    pub surge_multiplier: f64,
    pub energy_burden_cap: f64,
    pub alpha: f64,
    pub om_cost: f64,
    pub gradient_mode: GradientMode,
    pub price_cap_factor: f64,
    pub enforce_revenue: bool,
    pub price_bounds: bool,
    pub reliability_z: f64,
    pub barrier: BarrierConfig,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let base = ScenarioConfig::default();
        Self {
            kind: KindName::TariffDesign,
            beta: 0.02,
            peak_count: 4,
            surge_hours: vec![14, 16],
            surge_multiplier: 5.0,
            energy_burden_cap: base.energy_burden_cap,
            alpha: base.alpha,
            om_cost: base.om_cost,
            gradient_mode: base.gradient_mode,
            price_cap_factor: base.price_cap_factor,
            enforce_revenue: base.enforce_revenue,
            price_bounds: base.price_bounds,
            reliability_z: base.reliability_z,
            barrier: base.barrier,
        }
    }
}

impl ScenarioSection {
    pub fn kind(&self) -> Result<ScenarioKind> {
        Ok(match self.kind {
            KindName::TariffDesign => ScenarioKind::TariffDesign,
            KindName::DrEvent => ScenarioKind::DrEvent {
                beta: self.beta,
                peak_count: self.peak_count,
            },
            KindName::PriceSurge => ScenarioKind::PriceSurge {
                hours: to_zero_based(&self.surge_hours, "surge_hours")?,
                multiplier: self.surge_multiplier,
            },
        })
    }

    /// Settings shared by all kinds; the kind adds its own on top.
    pub fn base(&self) -> ScenarioConfig {
        ScenarioConfig {
            energy_burden_cap: self.energy_burden_cap,
            alpha: self.alpha,
            om_cost: self.om_cost,
            barrier: self.barrier.clone(),
            gradient_mode: self.gradient_mode,
            price_cap_factor: self.price_cap_factor,
            enforce_revenue: self.enforce_revenue,
            price_bounds: self.price_bounds,
            reliability_z: self.reliability_z,
            ..ScenarioConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSection {
    /// Allowed relative gap between predicted and tested quantities.
    pub mismatch_budget: f64,
}

impl Default for ValidationSection {
    fn default() -> Self {
        Self { mismatch_budget: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub trials: usize,
    /// Residual variance multipliers to evaluate; 1 is the fitted spread.
    pub variance_factors: Vec<f64>,
}

impl Default for McSection {
    fn default() -> Self {
        Self {
            trials: 10_000,
            variance_factors: vec![1.0, 2.0],
        }
    }
}

/// Seeds of the independent random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub population: u64,
    pub price_days: u64,
    pub train: u64,
    pub mc: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let derive = |stream: u64| master.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        Self {
            master,
            population: master,
            price_days: derive(1),
            train: derive(2),
            mc: derive(3),
        }
    }
}

fn to_zero_based(hours: &[usize], what: &str) -> Result<Vec<usize>> {
    hours
        .iter()
        .map(|&h| {
            h.checked_sub(1)
                .ok_or_else(|| Error::Config(format!("{what}: hours are 1-based, got 0")))
        })
        .collect()
}

/// Line and column (1-based) of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
        Error::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = parse_toml(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults when `path` is `None`, otherwise the file layered over them.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { line, column, message } => Error::Config(format!(
                "{}:{line}:{column}: {message}",
                path.display()
            )),
            other => other,
        })?;
        // relative input paths are resolved against the config file
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.prices.wholesale_file, &mut cfg.prices.seed_profiles_file].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Replaces the scenario section with one read from a standalone file
    /// whose keys are those of `[scenario]`.
    pub fn load_scenario(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.scenario = parse_toml(&text).map_err(|e| match e {
            Error::Parse { line, column, message } => Error::Config(format!(
                "{}:{line}:{column}: {message}",
                path.display()
            )),
            other => other,
        })?;
        self.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.prices.horizon;
        if t == 0 {
            return Err(Error::Config("prices.horizon must be positive".into()));
        }
        if !(self.prices.level > 0.0 && self.prices.level.is_finite()) {
            return Err(Error::Config(format!("prices.level must be positive, got {}", self.prices.level)));
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dataset.train_fraction must lie in (0, 1), got {}",
                self.dataset.train_fraction
            )));
        }
        if self.dataset.days < 2 {
            return Err(Error::Config("dataset.days must be at least 2".into()));
        }
        self.train.validate()?;
        let s = &self.scenario;
        if s.kind == KindName::DrEvent && !(1..=t).contains(&s.peak_count) {
            return Err(Error::Config(format!("scenario.peak_count must lie in 1..={t}, got {}", s.peak_count)));
        }
        if let Some(&h) = s.surge_hours.iter().find(|&&h| h == 0 || h > t) {
            return Err(Error::Config(format!("scenario.surge_hours: hour {h} outside 1..={t}")));
        }
        let mut base = s.base();
        if s.kind == KindName::DrEvent {
            base.beta = s.beta;
        }
        base.validate(t)?;
        if !(self.validation.mismatch_budget >= 0.0) {
            return Err(Error::Config("validation.mismatch_budget must be >= 0".into()));
        }
        if self.mc.trials == 0 {
            return Err(Error::Config("mc.trials must be positive".into()));
        }
        if let Some(f) = self.mc.variance_factors.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::Config(format!("mc.variance_factors must be positive, got {f}")));
        }
        Ok(())
    }

    /// The population config with the derived seed applied.
    pub fn population_config(&self) -> PopulationConfig {
        PopulationConfig {
            seed: self.seeds().population,
            ..self.population.clone()
        }
    }

    /// The training config with the derived seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seeds().train,
            ..self.train.clone()
        }
    }

    /// The wholesale price day: the configured file or the built-in shape.
    pub fn wholesale(&self) -> Result<PriceProfile> {
        match &self.prices.wholesale_file {
            Some(path) => {
                let mut rows = synth::ingest_prices(path, self.prices.horizon)?;
                if rows.len() != 1 {
                    return Err(Error::Config(format!(
                        "{} must hold exactly one price day, found {}",
                        path.display(),
                        rows.len()
                    )));
                }
                Ok(rows.remove(0))
            }
            None => Ok(synth::wholesale_shape(self.prices.horizon, self.prices.level)),
        }
    }

    pub fn seed_profiles(&self) -> Result<Vec<crate::domain::DemandProfile>> {
        match &self.prices.seed_profiles_file {
            Some(path) => synth::ingest_demands(path, self.prices.horizon),
            None if self.prices.horizon == 24 => synth::default_seed_profiles(),
            None => Ok(synth::synthetic_seed_profiles(25, self.prices.horizon, 1979)),
        }
    }
}
