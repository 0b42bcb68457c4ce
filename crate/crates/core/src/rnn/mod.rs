//! Multi-layer Elman network mapping a daily price profile to a demand-change profile.
//!
//! Each step consumes one scalar price. Layer `l` updates
//! `h_t = σ_l(h_t^{l-1} W_in + h_{t-1} W_rec + b)` with `h_0 = 0`, and the
//! readout is `y_t = σ_out(h_t^L · w_out + b_out)`. All arithmetic runs in
//! z-scored units; [`NormStats`] maps to and from physical units.

mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{check_len, DemandProfile, PriceProfile};
use crate::error::{Error, Result};

pub use train::{train, train_group_models, TrainConfig, TrainReport};

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

/// Checkpoint format version written by [`RnnModel::save`].
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Selu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative; the ReLU kink at 0 takes slope 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Scalar z-score statistics for prices and demand changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub price_mean: f64,
    pub price_std: f64,
    pub dd_mean: f64,
    pub dd_std: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            price_mean: 0.0,
            price_std: 1.0,
            dd_mean: 0.0,
            dd_std: 1.0,
        }
    }
}

impl NormStats {
    /// Statistics over every hour of every sample. A zero spread falls back to 1.
    pub fn fit(prices: &[&PriceProfile], deltas: &[&DemandProfile]) -> Self {
        fn mean_std<'a>(it: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
            let n = it.clone().count().max(1) as f64;
            let mean = it.clone().sum::<f64>() / n;
            let var = it.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        }
        let (price_mean, price_std) = mean_std(prices.iter().flat_map(|p| p.values()));
        let (dd_mean, dd_std) = mean_std(deltas.iter().flat_map(|d| d.values()));
        Self {
            price_mean,
            price_std,
            dd_mean,
            dd_std,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = [self.price_mean, self.price_std, self.dd_mean, self.dd_std]
            .iter()
            .all(|v| v.is_finite())
            && self.price_std > 0.0
            && self.dd_std > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::State(format!("invalid normalization statistics {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    input: usize,
    width: usize,
    /// Offset of this layer's units in the concatenated hidden state.
    unit: usize,
    w_in: usize,
    w_rec: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    layers: Vec<LayerSpan>,
    hidden: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(widths: &[usize]) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let (mut offset, mut unit, mut input) = (0, 0, 1);
        for &width in widths {
            let w_in = offset;
            let w_rec = w_in + input * width;
            let bias = w_rec + width * width;
            offset = bias + width;
            layers.push(LayerSpan {
                input,
                width,
                unit,
                w_in,
                w_rec,
                bias,
            });
            unit += width;
            input = width;
        }
        Self {
            layers,
            hidden: unit,
            w_out: offset,
            b_out: offset + input,
            total: offset + input + 1,
        }
    }

    fn top(&self) -> LayerSpan {
        *self.layers.last().expect("at least one layer")
    }
}

/// Activations cached by a forward pass, indexed `[t * hidden + unit]`.
#[derive(Debug, Clone, Default)]
struct Trace {
    z: Vec<f64>,
    h: Vec<f64>,
    a_out: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct RnnModel {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    output_activation: Activation,
    params: Vec<f64>,
    norm: NormStats,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    widths: Vec<usize>,
    activations: Vec<Activation>,
    output_activation: Activation,
    norm: NormStats,
    params: Vec<f64>,
}

impl From<RnnModel> for ModelFile {
    fn from(m: RnnModel) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            widths: m.widths,
            activations: m.activations,
            output_activation: m.output_activation,
            norm: m.norm,
            params: m.params,
        }
    }
}

impl TryFrom<ModelFile> for RnnModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                f.version
            )));
        }
        let mut model = RnnModel::zeros(&f.widths, &f.activations, f.output_activation)?;
        check_len(model.params.len(), f.params.len())?;
        if f.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::State("checkpoint contains non-finite weights".into()));
        }
        f.norm.check()?;
        model.params = f.params;
        model.norm = f.norm;
        Ok(model)
    }
}

impl RnnModel {
    /// A model with every weight and bias at zero and identity normalization.
    pub fn zeros(widths: &[usize], activations: &[Activation], output: Activation) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config(format!("hidden widths {widths:?} must be non-empty and positive")));
        }
        check_len(widths.len(), activations.len())?;
        Ok(Self {
            widths: widths.to_vec(),
            activations: activations.to_vec(),
            output_activation: output,
            params: vec![0.0; Layout::new(widths).total],
            norm: NormStats::default(),
        })
    }

    /// Weights uniform on ±√(1/fan_in), biases zero.
    pub fn init(
        widths: &[usize],
        activations: &[Activation],
        output: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(widths, activations, output)?;
        let layout = model.layout();
        let mut fill = |params: &mut [f64], fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for p in params {
                *p = rng.random_range(-bound..=bound);
            }
        };
        for span in &layout.layers {
            fill(&mut model.params[span.w_in..span.w_rec], span.input);
            fill(&mut model.params[span.w_rec..span.bias], span.width);
        }
        fill(&mut model.params[layout.w_out..layout.b_out], layout.top().width);
        Ok(model)
    }

    /// Seeded variant of [`RnnModel::init`].
    pub fn init_seeded(widths: &[usize], activations: &[Activation], output: Activation, seed: u64) -> Result<Self> {
        Self::init(widths, activations, output, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn norm(&self) -> &NormStats {
        &self.norm
    }

    pub fn set_norm(&mut self, norm: NormStats) -> Result<()> {
        norm.check()?;
        self.norm = norm;
        Ok(())
    }

    /// Flat parameter vector: per layer `(w_in, w_rec, bias)` row-major, then `w_out`, then `b_out`.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        check_len(self.params.len(), params.len())?;
        self.params = params;
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// One identity unit with `w_in = w`, `w_rec = a`, `w_out = v` and zero biases.
    pub fn scalar(w: f64, a: f64, v: f64) -> Self {
        let mut m = Self::zeros(&[1], &[Activation::Identity], Activation::Identity).expect("valid shape");
        m.params = vec![w, a, 0.0, v, 0.0];
        m
    }

    fn normalize_price(&self, price: &[f64]) -> Vec<f64> {
        price
            .iter()
            .map(|p| (p - self.norm.price_mean) / self.norm.price_std)
            .collect()
    }

    fn normalize_dd(&self, dd: &[f64]) -> Vec<f64> {
        dd.iter().map(|d| (d - self.norm.dd_mean) / self.norm.dd_std).collect()
    }

    fn run(&self, layout: &Layout, x: &[f64], trace: &mut Trace) {
        let t_len = x.len();
        let hid = layout.hidden;
        trace.z.clear();
        trace.z.resize(t_len * hid, 0.0);
        trace.h.clear();
        trace.h.resize(t_len * hid, 0.0);
        trace.a_out.clear();
        trace.a_out.resize(t_len, 0.0);
        trace.y.clear();
        trace.y.resize(t_len, 0.0);
        let p = &self.params;
        for t in 0..t_len {
            for (l, span) in layout.layers.iter().enumerate() {
                let act = self.activations[l];
                for j in 0..span.width {
                    let mut z = p[span.bias + j];
                    if l == 0 {
                        z += x[t] * p[span.w_in + j];
                    } else {
                        let below = layout.layers[l - 1].unit;
                        for i in 0..span.input {
                            z += trace.h[t * hid + below + i] * p[span.w_in + i * span.width + j];
                        }
                    }
                    if t > 0 {
                        for i in 0..span.width {
                            z += trace.h[(t - 1) * hid + span.unit + i] * p[span.w_rec + i * span.width + j];
                        }
                    }
                    trace.z[t * hid + span.unit + j] = z;
                    trace.h[t * hid + span.unit + j] = act.apply(z);
                }
            }
            let top = layout.top();
            let mut a = p[layout.b_out];
            for i in 0..top.width {
                a += trace.h[t * hid + top.unit + i] * p[layout.w_out + i];
            }
            trace.a_out[t] = a;
            trace.y[t] = self.output_activation.apply(a);
        }
    }

    /// Predicted demand change (kWh per hour) for one price day.
    pub fn forward(&self, price: &PriceProfile) -> DemandProfile {
        let layout = self.layout();
        let mut trace = Trace::default();
        self.run(&layout, &self.normalize_price(price.values()), &mut trace);
        let out = trace
            .y
            .iter()
            .map(|y| y * self.norm.dd_std + self.norm.dd_mean)
            .collect();
        DemandProfile::new(out).expect("finite weights give finite outputs")
    }

    /// Predicted demand change in normalized units.
    pub fn forward_normalized(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        self.run(&self.layout(), x, &mut trace);
        trace.y
    }

    /// Reverse accumulation of `Σ_t dy[t]·∂y_t/∂θ` into `grad`.
    fn backward(&self, layout: &Layout, x: &[f64], trace: &Trace, dy: &[f64], grad: &mut [f64]) {
        let t_len = x.len();
        let hid = layout.hidden;
        let p = &self.params;
        let top = layout.top();
        // gradient reaching h_t from step t+1 through the recurrent weights
        let mut carry = vec![0.0; hid];
        let mut next_carry = vec![0.0; hid];
        let mut dh = vec![0.0; hid];
        let mut dz = vec![0.0; hid];
        for t in (0..t_len).rev() {
            let g = dy[t] * self.output_activation.derivative(trace.a_out[t]);
            grad[layout.b_out] += g;
            for i in 0..top.width {
                grad[layout.w_out + i] += g * trace.h[t * hid + top.unit + i];
            }
            dh.copy_from_slice(&carry);
            for i in 0..top.width {
                dh[top.unit + i] += g * p[layout.w_out + i];
            }
            next_carry.iter_mut().for_each(|c| *c = 0.0);
            for (l, span) in layout.layers.iter().enumerate().rev() {
                let act = self.activations[l];
                for j in 0..span.width {
                    let u = span.unit + j;
                    dz[u] = dh[u] * act.derivative(trace.z[t * hid + u]);
                }
                for j in 0..span.width {
                    let d = dz[span.unit + j];
                    if d == 0.0 {
                        continue;
                    }
                    grad[span.bias + j] += d;
                    if l == 0 {
                        grad[span.w_in + j] += d * x[t];
                    } else {
                        let below = layout.layers[l - 1].unit;
                        for i in 0..span.input {
                            grad[span.w_in + i * span.width + j] += d * trace.h[t * hid + below + i];
                        }
                    }
                    if t > 0 {
                        for i in 0..span.width {
                            grad[span.w_rec + i * span.width + j] +=
                                d * trace.h[(t - 1) * hid + span.unit + i];
                        }
                    }
                }
                for i in 0..span.width {
                    let mut s = 0.0;
                    for j in 0..span.width {
                        s += p[span.w_rec + i * span.width + j] * dz[span.unit + j];
                    }
                    next_carry[span.unit + i] = s;
                }
                if l > 0 {
                    let below = layout.layers[l - 1].unit;
                    for i in 0..span.input {
                        let mut s = 0.0;
                        for j in 0..span.width {
                            s += p[span.w_in + i * span.width + j] * dz[span.unit + j];
                        }
                        dh[below + i] += s;
                    }
                }
            }
            std::mem::swap(&mut carry, &mut next_carry);
        }
    }

    /// Loss `mean_t (y_t − target_t)²` for normalized inputs, accumulating its
    /// gradient (scaled by `weight`) into `grad`.
    fn accumulate(&self, layout: &Layout, x: &[f64], target: &[f64], weight: f64, trace: &mut Trace, grad: &mut [f64]) -> f64 {
        self.run(layout, x, trace);
        let n = x.len() as f64;
        let mut loss = 0.0;
        let dy: Vec<f64> = trace
            .y
            .iter()
            .zip(target)
            .map(|(y, d)| {
                let e = y - d;
                loss += e * e;
                2.0 * e / n * weight
            })
            .collect();
        self.backward(layout, x, trace, &dy, grad);
        loss / n
    }

    /// Normalized squared loss of one sample and its exact gradient with
    /// respect to the flat parameter vector.
    pub fn param_gradient(&self, price: &PriceProfile, target: &DemandProfile) -> Result<(f64, Vec<f64>)> {
        check_len(price.len(), target.len())?;
        let layout = self.layout();
        let mut grad = vec![0.0; layout.total];
        let mut trace = Trace::default();
        let loss = self.accumulate(
            &layout,
            &self.normalize_price(price.values()),
            &self.normalize_dd(target.values()),
            1.0,
            &mut trace,
            &mut grad,
        );
        Ok((loss, grad))
    }

    /// Mean loss and mean gradient over a batch of samples.
    pub fn batch_gradient(&self, prices: &[&PriceProfile], targets: &[&DemandProfile]) -> Result<(f64, Vec<f64>)> {
        check_len(prices.len(), targets.len())?;
        if prices.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let xs: Vec<Vec<f64>> = prices.iter().map(|p| self.normalize_price(p.values())).collect();
        let ys: Vec<Vec<f64>> = targets.iter().map(|d| self.normalize_dd(d.values())).collect();
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        Ok(self.normalized_batch_gradient(&xr, &yr))
    }

    pub(crate) fn normalized_batch_gradient(&self, xs: &[&[f64]], ys: &[&[f64]]) -> (f64, Vec<f64>) {
        let layout = self.layout();
        let mut grad = vec![0.0; layout.total];
        let mut trace = Trace::default();
        let w = 1.0 / xs.len() as f64;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            loss += self.accumulate(&layout, x, y, w, &mut trace, &mut grad);
        }
        (loss * w, grad)
    }

    /// Mean normalized loss over samples already in normalized units.
    pub(crate) fn normalized_loss(&self, xs: &[&[f64]], ys: &[&[f64]]) -> f64 {
        let layout = self.layout();
        let mut trace = Trace::default();
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            self.run(&layout, x, &mut trace);
            total += trace.y.iter().zip(*y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
        }
        total / xs.len().max(1) as f64
    }

    /// `J[t][s] = ∂ΔD_t/∂p_s` in physical units, by forward-mode tangents.
    /// Entries with `s > t` are exactly zero.
    pub fn input_jacobian(&self, price: &PriceProfile) -> Vec<Vec<f64>> {
        let layout = self.layout();
        let x = self.normalize_price(price.values());
        let mut trace = Trace::default();
        self.run(&layout, &x, &mut trace);
        let t_len = x.len();
        let hid = layout.hidden;
        let p = &self.params;
        let top = layout.top();
        let scale = self.norm.dd_std / self.norm.price_std;
        let mut jac = vec![vec![0.0; t_len]; t_len];
        let mut prev = vec![0.0; hid];
        let mut cur = vec![0.0; hid];
        for s in 0..t_len {
            prev.iter_mut().for_each(|v| *v = 0.0);
            for t in s..t_len {
                for (l, span) in layout.layers.iter().enumerate() {
                    let act = self.activations[l];
                    for j in 0..span.width {
                        let mut dz = 0.0;
                        if l == 0 {
                            if t == s {
                                dz += p[span.w_in + j];
                            }
                        } else {
                            let below = layout.layers[l - 1].unit;
                            for i in 0..span.input {
                                dz += cur[below + i] * p[span.w_in + i * span.width + j];
                            }
                        }
                        if t > s {
                            for i in 0..span.width {
                                dz += prev[span.unit + i] * p[span.w_rec + i * span.width + j];
                            }
                        }
                        let u = span.unit + j;
                        cur[u] = dz * act.derivative(trace.z[t * hid + u]);
                    }
                }
                let mut da = 0.0;
                for i in 0..top.width {
                    da += cur[top.unit + i] * p[layout.w_out + i];
                }
                jac[t][s] = da * self.output_activation.derivative(trace.a_out[t]) * scale;
                std::mem::swap(&mut prev, &mut cur);
            }
        }
        jac
    }

    /// Smallest |pre-activation| over ReLU units for this input; a kink
    /// check for finite-difference comparisons.
    pub fn relu_margin(&self, price: &PriceProfile) -> f64 {
        let layout = self.layout();
        let mut trace = Trace::default();
        self.run(&layout, &self.normalize_price(price.values()), &mut trace);
        let mut margin = f64::INFINITY;
        for t in 0..price.len() {
            for (l, span) in layout.layers.iter().enumerate() {
                if self.activations[l] == Activation::Relu {
                    for j in 0..span.width {
                        margin = margin.min(trace.z[t * layout.hidden + span.unit + j].abs());
                    }
                }
            }
        }
        if self.output_activation == Activation::Relu {
            for a in &trace.a_out {
                margin = margin.min(a.abs());
            }
        }
        margin
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: "run `equitariff train` first".into(),
            });
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn price(values: Vec<f64>) -> PriceProfile {
        PriceProfile::new(values).unwrap()
    }

    fn random_model(seed: u64, widths: &[usize], acts: &[Activation], out: Activation) -> RnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = RnnModel::init(widths, acts, out, &mut rng).unwrap();
        let params = m.params().iter().map(|p| p + rng.random_range(-0.2..0.2)).collect();
        m.set_params(params).unwrap();
        m.set_norm(NormStats {
            price_mean: 0.07,
            price_std: 0.03,
            dd_mean: -0.1,
            dd_std: 0.2,
        })
        .unwrap();
        m
    }

    fn random_price(seed: u64, t: usize) -> PriceProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        price((0..t).map(|_| rng.random_range(0.02..0.15)).collect())
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Selu.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.derivative(-3.0), 0.0);
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        let expected = 1.050_700_987_355_480_5 * 1.673_263_242_354_377_2 * ((-1.0f64).exp() - 1.0);
        assert!((Activation::Selu.apply(-1.0) - expected).abs() < 1e-15);
        assert!((Activation::Selu.apply(-1.0) + 1.1113).abs() < 1e-4);
    }

    #[test]
    fn selu_derivative_matches_difference_quotient() {
        for &x in &[-2.0, -0.5, 0.3, 1.7] {
            let h = 1e-6;
            let fd = (Activation::Selu.apply(x + h) - Activation::Selu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Selu.derivative(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_model_outputs_zero() {
        for out in [Activation::Identity, Activation::Relu, Activation::Selu] {
            let m = RnnModel::zeros(&[10, 10], &[Activation::Relu, Activation::Selu], out).unwrap();
            let d = m.forward(&random_price(1, 24));
            assert!(d.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn memoryless_linear_model() {
        let m = RnnModel::scalar(2.0, 0.0, 0.75);
        let p = price(vec![0.1, 0.4, 0.2]);
        let d = m.forward(&p);
        for (dt, pt) in d.values().iter().zip(p.values()) {
            assert!((dt - 1.5 * pt).abs() < 1e-15);
        }
        let jac = m.input_jacobian(&p);
        for t in 0..3 {
            for s in 0..3 {
                let expected = if t == s { 1.5 } else { 0.0 };
                assert!((jac[t][s] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn recurrent_linear_model_unrolls_geometrically() {
        let (w, a, v) = (1.3, 0.6, -0.8);
        let m = RnnModel::scalar(w, a, v);
        let p = price(vec![0.3, 0.1, 0.5, 0.2, 0.4]);
        let d = m.forward(&p);
        let jac = m.input_jacobian(&p);
        for t in 0..5 {
            let closed: f64 = (0..=t).map(|s| v * w * a.powi((t - s) as i32) * p.values()[s]).sum();
            assert!((d.values()[t] - closed).abs() < 1e-14);
            for s in 0..5 {
                let expected = if s <= t { v * w * a.powi((t - s) as i32) } else { 0.0 };
                assert!((jac[t][s] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let m = random_model(3, &[10, 10], &[Activation::Relu, Activation::Selu], Activation::Identity);
        let p = random_price(4, 24);
        let target = m.forward(&p);
        let (loss, grad) = m.param_gradient(&p, &target).unwrap();
        assert!(loss < 1e-28);
        assert!(grad.iter().all(|g| g.abs() < 1e-13));
    }

    #[test]
    fn duplicated_batch_matches_single_sample() {
        let m = random_model(5, &[10, 10], &[Activation::Relu, Activation::Selu], Activation::Identity);
        let p = random_price(6, 24);
        let d = DemandProfile::new(vec![0.05; 24]).unwrap();
        let (l1, g1) = m.param_gradient(&p, &d).unwrap();
        let (l2, g2) = m.batch_gradient(&[&p, &p, &p], &[&d, &d, &d]).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-14 * (1.0 + a.abs()));
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn param_gradient_matches_central_differences() {
        let acts = [Activation::Relu, Activation::Selu];
        let mut checked = 0;
        for seed in 0..20u64 {
            let m = random_model(seed, &[6, 5], &acts, Activation::Selu);
            let p = random_price(100 + seed, 8);
            if m.relu_margin(&p) < 1e-3 {
                continue;
            }
            let target = DemandProfile::new(random_price(200 + seed, 8).into_inner()).unwrap();
            let (_, grad) = m.param_gradient(&p, &target).unwrap();
            let h = 1e-5;
            for k in 0..m.n_params() {
                let mut plus = m.clone();
                let mut minus = m.clone();
                let mut pp = m.params().to_vec();
                pp[k] += h;
                plus.set_params(pp.clone()).unwrap();
                pp[k] -= 2.0 * h;
                minus.set_params(pp).unwrap();
                let fd = (plus.param_gradient(&p, &target).unwrap().0 - minus.param_gradient(&p, &target).unwrap().0)
                    / (2.0 * h);
                assert!(rel_err(grad[k], fd) <= 1e-5, "seed {seed} param {k}: {} vs {fd}", grad[k]);
            }
            checked += 1;
        }
        assert!(checked >= 10);
    }

    #[test]
    fn input_jacobian_matches_central_differences() {
        let acts = [Activation::Relu, Activation::Selu];
        for seed in 0..10u64 {
            let m = random_model(seed, &[10, 10], &acts, Activation::Identity);
            let p = random_price(300 + seed, 24);
            if m.relu_margin(&p) < 1e-3 {
                continue;
            }
            let jac = m.input_jacobian(&p);
            let h = 1e-6;
            for s in 0..24 {
                let mut up = p.values().to_vec();
                let mut dn = p.values().to_vec();
                up[s] += h;
                dn[s] -= h;
                let fu = m.forward(&price(up));
                let fdn = m.forward(&price(dn));
                for t in 0..24 {
                    let fd = (fu.values()[t] - fdn.values()[t]) / (2.0 * h);
                    if s > t {
                        assert_eq!(jac[t][s], 0.0);
                        assert_eq!(fd, 0.0);
                    } else {
                        assert!(rel_err(jac[t][s], fd) <= 1e-5, "J[{t}][{s}] {} vs {fd}", jac[t][s]);
                    }
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = random_model(9, &[10, 10], &[Activation::Relu, Activation::Selu], Activation::Identity);
        let back = RnnModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let p = random_price(10, 24);
        assert_eq!(m.forward(&p), back.forward(&p));
    }

    #[test]
    fn checkpoint_rejects_bad_shapes_and_versions() {
        let m = RnnModel::scalar(1.0, 0.0, 1.0);
        let text = m.to_json().unwrap();
        let bad_version = text.replace("\"version\": 1", "\"version\": 99");
        assert!(RnnModel::from_json(&bad_version).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["params"] = serde_json::json!([1.0, 2.0]);
        assert!(RnnModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn missing_checkpoint_names_the_path() {
        let err = RnnModel::load(Path::new("/nonexistent/model.json")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
    }

    proptest! {
        #[test]
        fn jacobian_is_causal(seed in 0u64..1000) {
            let m = random_model(seed, &[4, 3], &[Activation::Relu, Activation::Selu], Activation::Identity);
            let jac = m.input_jacobian(&random_price(seed + 1, 12));
            for t in 0..12 {
                for s in t + 1..12 {
                    prop_assert_eq!(jac[t][s], 0.0);
                }
            }
        }

        #[test]
        fn finite_inputs_give_finite_outputs(seed in 0u64..1000, scale in 0.0f64..100.0) {
            let m = random_model(seed, &[10, 10], &[Activation::Relu, Activation::Selu], Activation::Selu);
            let p = PriceProfile::new(random_price(seed, 24).values().iter().map(|v| v * scale).collect()).unwrap();
            prop_assert!(m.forward(&p).values().iter().all(|v| v.is_finite()));
        }
    }
}
