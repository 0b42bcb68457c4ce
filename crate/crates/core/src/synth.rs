//! Population, price days and the identification corpus.
//!
//! Seed load profiles are expanded into a large population with randomized
//! incomes and flexibility, consumers are ranked into burden groups, and the
//! agent model turns a set of price days into per-group `(price, ΔD)` pairs.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::solve_response;
use crate::domain::{check_len, dot, Consumer, DemandProfile, FlexParams, Group, PriceProfile};
use crate::error::{Error, Result};
use crate::rnn::NormStats;

/// 25 synthetic double-peak residential days shipped with the crate.
pub const SEED_PROFILES_CSV: &str = include_str!("../data/seed_profiles.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_consumers: usize,
    pub n_groups: usize,
    /// Annual income range of the main population ($).
    pub income_low: f64,
    pub income_high: f64,
    /// Fraction of consumers drawn from the low-income range instead.
    pub low_income_share: f64,
    pub low_income_low: f64,
    pub low_income_high: f64,
    /// Not read from config files; runs derive it from their master seed.
    #[serde(skip)]
    pub seed: u64,
    /// Median reduction cost c1 ($/kWh²).
    pub c1_mean: f64,
    /// Median shift cost c2 ($/kWh²).
    pub c2_mean: f64,
    /// Log-scale dispersion of c1 and c2 across consumers.
    pub cost_sigma: f64,
    pub gamma_shift: f64,
    pub gamma_reduce: f64,
    /// Upper bound on the reduction component, as a fraction of baseline (0 = pure reduction).
    pub reduce_up: f64,
    /// Strength of the income/flexibility link in [0, 1]; richer consumers get
    /// lower costs and wider bounds.
    pub flex_income_corr: f64,
    /// Log-scale dispersion of each consumer's baseline amplitude.
    pub amplitude_sigma: f64,
    /// Log-scale dispersion of hour-level baseline noise.
    pub hourly_sigma: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_consumers: 1000,
            n_groups: 10,
            income_low: 9_000.0,
            income_high: 60_000.0,
            low_income_share: 0.2,
            low_income_low: 2_200.0,
            low_income_high: 4_600.0,
            seed: 2018,
            c1_mean: 0.5,
            c2_mean: 0.12,
            cost_sigma: 0.3,
            gamma_shift: 0.2,
            gamma_reduce: 0.1,
            reduce_up: 0.0,
            flex_income_corr: 0.0,
            amplitude_sigma: 0.15,
            hourly_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub consumers: Vec<Consumer>,
    /// Ordered by ascending average baseline energy burden.
    pub groups: Vec<Group>,
}

impl Population {
    pub fn horizon(&self) -> usize {
        self.consumers.first().map_or(0, Consumer::horizon)
    }

    pub fn consumer(&self, id: usize) -> Option<&Consumer> {
        self.consumers.iter().find(|c| c.id == id)
    }

    /// Aggregate raw baseline demand per hour.
    pub fn aggregate_baseline(&self) -> Vec<f64> {
        let mut agg = vec![0.0; self.horizon()];
        for c in &self.consumers {
            for (a, d) in agg.iter_mut().zip(c.baseline.values()) {
                *a += d;
            }
        }
        agg
    }
}

fn lognormal_factor(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

fn consumer_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Expands the seed profiles into `n_consumers` consumers and groups them by
/// baseline burden at `wholesale`.
pub fn gen_population(
    config: &PopulationConfig,
    seed_profiles: &[DemandProfile],
    wholesale: &PriceProfile,
) -> Result<Population> {
    if seed_profiles.is_empty() {
        return Err(Error::Config("at least one seed demand profile is required".into()));
    }
    if config.n_groups == 0 || config.n_consumers < config.n_groups {
        return Err(Error::Config(format!(
            "need at least one consumer per group ({} consumers, {} groups)",
            config.n_consumers, config.n_groups
        )));
    }
    if !(config.income_low > 0.0 && config.income_low <= config.income_high) {
        return Err(Error::Config(format!(
            "income range [{}, {}] is invalid",
            config.income_low, config.income_high
        )));
    }
    if !(config.low_income_low > 0.0 && config.low_income_low <= config.low_income_high) {
        return Err(Error::Config(format!(
            "low income range [{}, {}] is invalid",
            config.low_income_low, config.low_income_high
        )));
    }
    if !(0.0..=1.0).contains(&config.low_income_share) {
        return Err(Error::Config("low_income_share must lie in [0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&config.flex_income_corr) {
        return Err(Error::Config("flex_income_corr must lie in [0, 1]".into()));
    }
    let horizon = seed_profiles[0].len();
    for p in seed_profiles {
        check_len(horizon, p.len())?;
    }
    check_len(horizon, wholesale.len())?;

    let floor = if config.low_income_share > 0.0 {
        config.income_low.min(config.low_income_low)
    } else {
        config.income_low
    };
    let ceiling = if config.low_income_share < 1.0 {
        config.income_high.max(config.low_income_high)
    } else {
        config.low_income_high
    };
    let span = ceiling - floor;
    let consumers = (0..config.n_consumers)
        .map(|id| {
            let mut rng = consumer_rng(config.seed, id);
            let (lo, hi) = if rng.random::<f64>() < config.low_income_share {
                (config.low_income_low, config.low_income_high)
            } else {
                (config.income_low, config.income_high)
            };
            let income = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let seed_profile = seed_profiles[id % seed_profiles.len()].values();
            let amplitude = lognormal_factor(&mut rng, config.amplitude_sigma);
            let baseline: Vec<f64> = seed_profile
                .iter()
                .map(|d| d * amplitude * lognormal_factor(&mut rng, config.hourly_sigma))
                .collect();
            let baseline = DemandProfile::baseline(baseline)?;

            // income position in [-1, 1]
            let z = if span > 0.0 { 2.0 * (income - floor) / span - 1.0 } else { 0.0 };
            let rho = config.flex_income_corr;
            let shrink = (-rho * z * std::f64::consts::LN_2).exp();
            let c1 = config.c1_mean * shrink * lognormal_factor(&mut rng, config.cost_sigma);
            let c2 = config.c2_mean * shrink * lognormal_factor(&mut rng, config.cost_sigma);
            let width = 1.0 + 0.5 * rho * z;
            let flex = FlexParams::proportional(
                &baseline,
                c1,
                c2,
                config.gamma_shift * width,
                config.gamma_reduce * width,
                config.reduce_up,
            )?;
            Consumer::new(id, income, baseline, flex)
        })
        .collect::<Result<Vec<_>>>()?;

    group_by_burden(consumers, wholesale, config.n_groups)
}

/// Sorts consumers by baseline burden at `wholesale` (ties by id) and cuts the
/// ranking into `n_groups` contiguous groups whose sizes differ by at most one.
pub fn group_by_burden(
    consumers: Vec<Consumer>,
    wholesale: &PriceProfile,
    n_groups: usize,
) -> Result<Population> {
    if n_groups == 0 {
        return Err(Error::Config("n_groups must be at least 1".into()));
    }
    if n_groups > consumers.len() {
        return Err(Error::Config(format!(
            "{n_groups} groups requested for {} consumers",
            consumers.len()
        )));
    }
    let burdens = consumers
        .iter()
        .map(|c| {
            check_len(wholesale.len(), c.horizon())?;
            Ok(dot(c.baseline.values(), wholesale.values()) / c.daily_income)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..consumers.len()).collect();
    order.sort_by(|&a, &b| {
        burdens[a]
            .total_cmp(&burdens[b])
            .then(consumers[a].id.cmp(&consumers[b].id))
    });

    let horizon = wholesale.len();
    let n = consumers.len();
    let (base, extra) = (n / n_groups, n % n_groups);
    let mut groups = Vec::with_capacity(n_groups);
    let mut start = 0;
    for g in 0..n_groups {
        let size = base + usize::from(g < extra);
        let idx = &order[start..start + size];
        start += size;
        let mut avg = vec![0.0; horizon];
        let mut income = 0.0;
        for &i in idx {
            for (a, d) in avg.iter_mut().zip(consumers[i].baseline.values()) {
                *a += d;
            }
            income += consumers[i].daily_income;
        }
        avg.iter_mut().for_each(|a| *a /= size as f64);
        groups.push(Group {
            id: g,
            members: idx.iter().map(|&i| consumers[i].id).collect(),
            avg_baseline: DemandProfile::baseline(avg)?,
            avg_daily_income: income / size as f64,
        });
    }
    Ok(Population { consumers, groups })
}

/// Group-average demand-change samples for one burden group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSamples {
    pub group: usize,
    pub prices: Vec<PriceProfile>,
    pub deltas: Vec<DemandProfile>,
}

impl GroupSamples {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// The identification corpus. Samples are stored in physical units; the
/// normalization applied during training travels with each trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub horizon: usize,
    /// Leading fraction of days used for training; the rest is validation.
    pub train_fraction: f64,
    pub groups: Vec<GroupSamples>,
}

impl Dataset {
    /// Number of leading days in the training split.
    pub fn train_len(&self) -> usize {
        let n = self.groups.first().map_or(0, GroupSamples::len);
        ((n as f64) * self.train_fraction).floor() as usize
    }
}

/// Plain-text summary stored next to a dataset's CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub horizon: usize,
    pub groups: usize,
    pub days: usize,
    pub train_fraction: f64,
    pub population_seed: u64,
    pub price_seed: u64,
    /// Normalization fitted on each group's training split.
    pub norm: Vec<NormStats>,
}

pub const DATASET_MANIFEST: &str = "manifest.toml";

fn profile_rows<'a>(path: &Path, horizon: usize, rows: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = (1..=horizon).map(|t| format!("h{t}")).collect();
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{}: {other:?}", path.display())),
    }
}

/// Writes `group_<n>_prices.csv` and `group_<n>_dd.csv` per group (1-based `n`,
/// one day per row) and a manifest. Returns the written file names.
pub fn save_dataset(dir: &Path, dataset: &Dataset, population_seed: u64, price_seed: u64) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let train = dataset.train_len();
    let mut written = Vec::new();
    let mut norm = Vec::with_capacity(dataset.groups.len());
    for g in &dataset.groups {
        let prices = format!("group_{}_prices.csv", g.group + 1);
        let dd = format!("group_{}_dd.csv", g.group + 1);
        profile_rows(&dir.join(&prices), dataset.horizon, g.prices.iter().map(PriceProfile::values))?;
        profile_rows(&dir.join(&dd), dataset.horizon, g.deltas.iter().map(DemandProfile::values))?;
        let p: Vec<&PriceProfile> = g.prices[..train].iter().collect();
        let d: Vec<&DemandProfile> = g.deltas[..train].iter().collect();
        norm.push(NormStats::fit(&p, &d));
        written.push(prices);
        written.push(dd);
    }
    let manifest = DatasetManifest {
        horizon: dataset.horizon,
        groups: dataset.groups.len(),
        days: dataset.groups.first().map_or(0, GroupSamples::len),
        train_fraction: dataset.train_fraction,
        population_seed,
        price_seed,
        norm,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join(DATASET_MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(DATASET_MANIFEST.to_string());
    Ok(written)
}

/// Reads a directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let path = dir.join(DATASET_MANIFEST);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path,
            hint: "run `equitariff synth` first".into(),
        });
    }
    let text = read_text(&path)?;
    let manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
    let mut groups = Vec::with_capacity(manifest.groups);
    for g in 0..manifest.groups {
        let read = |name: String| -> Result<Vec<Vec<f64>>> {
            let p = dir.join(&name);
            let rows = parse_profiles_csv(&read_text(&p)?, manifest.horizon).map_err(|e| match e {
                Error::Parse { line, column, message } => Error::Parse {
                    line,
                    column,
                    message: format!("{name}: {message}"),
                },
                other => other,
            })?;
            if rows.len() != manifest.days {
                return Err(Error::Config(format!("{name}: expected {} days, found {}", manifest.days, rows.len())));
            }
            Ok(rows)
        };
        let prices = read(format!("group_{}_prices.csv", g + 1))?
            .into_iter()
            .map(PriceProfile::new)
            .collect::<Result<Vec<_>>>()?;
        let deltas = read(format!("group_{}_dd.csv", g + 1))?
            .into_iter()
            .map(DemandProfile::new)
            .collect::<Result<Vec<_>>>()?;
        groups.push(GroupSamples { group: g, prices, deltas });
    }
    Ok((
        Dataset {
            horizon: manifest.horizon,
            train_fraction: manifest.train_fraction,
            groups,
        },
        manifest,
    ))
}

/// Runs the agent model for every member of every group on every price day
/// and averages the member demand changes into one sample per (group, day).
pub fn build_dataset(
    population: &Population,
    price_days: &[PriceProfile],
    train_fraction: f64,
) -> Result<Dataset> {
    if price_days.is_empty() {
        return Err(Error::Config("at least one price day is required".into()));
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} not in (0, 1]")));
    }
    let horizon = population.horizon();
    for p in price_days {
        check_len(horizon, p.len())?;
    }
    let lookup: std::collections::HashMap<usize, &Consumer> =
        population.consumers.iter().map(|c| (c.id, c)).collect();

    let n_days = price_days.len();
    let pairs: Vec<(usize, usize)> = (0..population.groups.len())
        .flat_map(|g| (0..n_days).map(move |d| (g, d)))
        .collect();
    let averaged = pairs
        .par_iter()
        .map(|&(g, d)| {
            let group = &population.groups[g];
            let mut acc = vec![0.0; horizon];
            for id in &group.members {
                let consumer = lookup
                    .get(id)
                    .ok_or_else(|| Error::State(format!("group {g} lists unknown consumer {id}")))?;
                let sol = solve_response(consumer, &price_days[d]).map_err(|e| e.for_consumer(*id))?;
                for (a, x) in acc.iter_mut().zip(sol.delta()) {
                    *a += x;
                }
            }
            acc.iter_mut().for_each(|a| *a /= group.size() as f64);
            DemandProfile::new(acc)
        })
        .collect::<Vec<Result<DemandProfile>>>();

    let mut iter = averaged.into_iter();
    let mut groups = Vec::with_capacity(population.groups.len());
    for g in 0..population.groups.len() {
        let deltas = iter.by_ref().take(n_days).collect::<Result<Vec<_>>>()?;
        groups.push(GroupSamples {
            group: g,
            prices: price_days.to_vec(),
            deltas,
        });
    }
    Ok(Dataset {
        horizon,
        train_fraction,
        groups,
    })
}

/// Reads one profile per row from CSV text. Rows with `4·horizon` columns are
/// quarter-hourly and are averaged down to hourly values. A leading row whose
/// first field is not numeric is treated as a header.
pub fn parse_profiles_csv(text: &str, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let width = record.len();
        if width != horizon && width != 4 * horizon {
            return Err(Error::Parse {
                line,
                column: width,
                message: format!("expected {horizon} or {} columns, found {width}", 4 * horizon),
            });
        }
        let mut values = Vec::with_capacity(width);
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 1,
                    message: format!("`{field}` is not finite"),
                });
            }
            values.push(v);
        }
        if width == 4 * horizon {
            values = values.chunks(4).map(|q| q.iter().sum::<f64>() / 4.0).collect();
        }
        rows.push(values);
    }
    Ok(rows)
}

fn read_text(path: &Path) -> Result<String> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    Ok(text)
}

/// Loads daily price profiles ($/kWh) from a CSV file.
pub fn ingest_prices(path: &Path, horizon: usize) -> Result<Vec<PriceProfile>> {
    parse_profiles_csv(&read_text(path)?, horizon)?
        .into_iter()
        .map(PriceProfile::new)
        .collect()
}

/// Loads daily baseline demand profiles (kWh) from a CSV file.
pub fn ingest_demands(path: &Path, horizon: usize) -> Result<Vec<DemandProfile>> {
    parse_profiles_csv(&read_text(path)?, horizon)?
        .into_iter()
        .map(DemandProfile::baseline)
        .collect()
}

/// The shipped seed profiles.
pub fn default_seed_profiles() -> Result<Vec<DemandProfile>> {
    parse_profiles_csv(SEED_PROFILES_CSV, crate::domain::DEFAULT_HORIZON)?
        .into_iter()
        .map(DemandProfile::baseline)
        .collect()
}

fn bump(x: f64, center: f64, width: f64) -> f64 {
    let u = (x - center) / width;
    (-0.5 * u * u).exp()
}

/// Hour-of-day position of slot `t` on a 24-hour clock.
fn clock(t: usize, horizon: usize) -> f64 {
    (t as f64 + 0.5) * 24.0 / horizon as f64
}

/// Residential load shape with a small morning peak and a large late-afternoon peak (kWh).
pub fn residential_shape(horizon: usize, peak_shift: f64) -> Vec<f64> {
    (0..horizon)
        .map(|t| {
            let h = clock(t, horizon);
            0.55 + 0.8 * bump(h, 7.5 + peak_shift, 1.5)
                + 0.6 * bump(h, 13.0 + peak_shift, 3.0)
                + 2.3 * bump(h, 17.5 + peak_shift, 2.4)
        })
        .collect()
}

/// Day-ahead wholesale reference shape ($/kWh): cheap nights, afternoon peak.
pub fn wholesale_shape(horizon: usize, level: f64) -> PriceProfile {
    let values = (0..horizon)
        .map(|t| {
            let h = clock(t, horizon);
            level * (0.6 + 0.3 * bump(h, 8.0, 1.5) + 1.1 * bump(h, 16.0, 2.5))
        })
        .collect();
    PriceProfile::new(values).expect("shape is positive and finite")
}

/// Synthetic seed days: the residential shape with a random peak shift,
/// amplitude and hourly noise per profile.
pub fn synthetic_seed_profiles(n: usize, horizon: usize, seed: u64) -> Vec<DemandProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let shift = rng.random_range(-1.0..1.0);
            let amplitude = lognormal_factor(&mut rng, 0.2);
            let values = residential_shape(horizon, shift)
                .into_iter()
                .map(|d| d * amplitude * lognormal_factor(&mut rng, 0.08))
                .collect();
            DemandProfile::baseline(values).expect("positive by construction")
        })
        .collect()
}

/// Randomness of synthetic price days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceNoise {
    /// Log-sd of the day-level factor.
    pub volatility: f64,
    /// Log-sd of the independent hour-level factors.
    pub hourly_volatility: f64,
    /// Chance that a day carries a price spike.
    pub spike_probability: f64,
    /// Spiked hours are multiplied by a factor drawn from `[1, spike_max]`.
    pub spike_max: f64,
    /// Up to this many distinct hours spike on a spiked day.
    pub spike_hours: usize,
}

impl Default for PriceNoise {
    fn default() -> Self {
        Self {
            volatility: 0.3,
            hourly_volatility: 0.03,
            spike_probability: 0.0,
            spike_max: 6.0,
            spike_hours: 2,
        }
    }
}

impl PriceNoise {
    /// Lognormal day and hour factors only.
    pub fn lognormal(volatility: f64, hourly_volatility: f64) -> Self {
        Self {
            volatility,
            hourly_volatility,
            spike_probability: 0.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        for v in [self.volatility, self.hourly_volatility] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("volatility {v} not in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return Err(Error::Config(format!("spike_probability {} not in [0, 1]", self.spike_probability)));
        }
        if !(self.spike_max >= 1.0 && self.spike_max.is_finite()) {
            return Err(Error::Config(format!("spike_max must be >= 1, got {}", self.spike_max)));
        }
        if self.spike_probability > 0.0 && self.spike_hours == 0 {
            return Err(Error::Config("spike_hours must be positive when spikes are enabled".into()));
        }
        Ok(())
    }
}

/// Synthetic price days: `base` times a day-level lognormal factor and
/// independent hour-level factors, both with unit mean. A spiked day then
/// multiplies a few random hours by a uniform factor in `[1, spike_max]`.
pub fn gen_price_days(n_days: usize, seed: u64, base: &PriceProfile, noise: &PriceNoise) -> Result<Vec<PriceProfile>> {
    noise.validate()?;
    let t_len = base.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_days)
        .map(|_| {
            let day = lognormal_factor(&mut rng, noise.volatility);
            let mut values: Vec<f64> = base
                .values()
                .iter()
                .map(|b| (b * day * lognormal_factor(&mut rng, noise.hourly_volatility)).max(0.0))
                .collect();
            if noise.spike_probability > 0.0 && rng.random::<f64>() < noise.spike_probability {
                let count = rng.random_range(1..=noise.spike_hours.min(t_len));
                for t in rand::seq::index::sample(&mut rng, t_len, count) {
                    values[t] *= rng.random_range(1.0..=noise.spike_max);
                }
            }
            PriceProfile::new(values)
        })
        .collect()
}
