//! Consumer price-response simulator.
//!
//! Each consumer minimizes
//!
//! ```text
//! p·D + c1·Σ D_r,t² + c2·Σ D_s,t²,   D = D0 + D_r + D_s
//! s.t. Σ D_s,t = 0,  reduce_lo ≤ D_r ≤ reduce_hi,  shift_lo ≤ D_s ≤ shift_hi
//! ```
//!
//! The problem is separable. Reductions have a closed form per hour, and the
//! shift block is solved through its single multiplier `nu` on the balance
//! constraint, found by bisection on the monotone balance function.

use serde::{Deserialize, Serialize};

use crate::domain::{check_len, Consumer, DemandProfile, FlexParams, PriceProfile};
use crate::error::{Error, Result};

const MAX_BISECTIONS: usize = 200;
const BALANCE_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSolution {
    pub d_r: Vec<f64>,
    pub d_s: Vec<f64>,
    pub demand: DemandProfile,
    pub bill: f64,
    /// Multiplier of the shift balance. `None` for the grid-search oracle.
    pub nu: Option<f64>,
    pub objective: f64,
}

impl AgentSolution {
    fn assemble(
        baseline: &[f64],
        flex: &FlexParams,
        price: &[f64],
        d_r: Vec<f64>,
        d_s: Vec<f64>,
        nu: Option<f64>,
    ) -> Result<Self> {
        let demand: Vec<f64> = (0..baseline.len())
            .map(|t| baseline[t] + d_r[t] + d_s[t])
            .collect();
        let bill = crate::domain::dot(price, &demand);
        let objective = bill
            + flex.c1 * d_r.iter().map(|x| x * x).sum::<f64>()
            + flex.c2 * d_s.iter().map(|x| x * x).sum::<f64>();
        Ok(Self {
            d_r,
            d_s,
            demand: DemandProfile::new(demand)?,
            bill,
            nu,
            objective,
        })
    }

    /// Demand change relative to the consumer's baseline.
    pub fn delta(&self) -> Vec<f64> {
        self.d_r.iter().zip(&self.d_s).map(|(r, s)| r + s).collect()
    }
}

/// Value of the agent objective at an arbitrary (not necessarily optimal) point.
pub fn agent_objective(consumer: &Consumer, price: &PriceProfile, d_r: &[f64], d_s: &[f64]) -> f64 {
    let d0 = consumer.baseline.values();
    let p = price.values();
    let mut obj = 0.0;
    for t in 0..d0.len() {
        obj += p[t] * (d0[t] + d_r[t] + d_s[t])
            + consumer.flex.c1 * d_r[t] * d_r[t]
            + consumer.flex.c2 * d_s[t] * d_s[t];
    }
    obj
}

fn shift_at(price: &[f64], nu: f64, c2: f64, lo: &[f64], hi: &[f64], out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for t in 0..price.len() {
        let x = (-(price[t] + nu) / (2.0 * c2)).clamp(lo[t], hi[t]);
        out[t] = x;
        sum += x;
    }
    sum
}

/// Closed-form optimum of the consumer's response to `price`.
pub fn solve_response(consumer: &Consumer, price: &PriceProfile) -> Result<AgentSolution> {
    solve_flex(consumer.baseline.values(), &consumer.flex, price.values())
}

/// Same as [`solve_response`] on raw parts, for callers without a [`Consumer`].
pub fn solve_flex(baseline: &[f64], flex: &FlexParams, price: &[f64]) -> Result<AgentSolution> {
    let horizon = baseline.len();
    check_len(horizon, price.len())?;
    flex.validate(horizon)?;
    let (c1, c2) = (flex.c1, flex.c2);

    let d_r: Vec<f64> = (0..horizon)
        .map(|t| (-price[t] / (2.0 * c1)).clamp(flex.reduce_lo[t], flex.reduce_hi[t]))
        .collect();

    let (lo, hi) = (&flex.shift_lo, &flex.shift_hi);
    let sum_lo: f64 = lo.iter().sum();
    let sum_hi: f64 = hi.iter().sum();
    if sum_lo > 0.0 || sum_hi < 0.0 {
        return Err(Error::Infeasible(format!(
            "shift bounds admit no balanced schedule (Σlo = {sum_lo}, Σhi = {sum_hi})"
        )));
    }

    let width: f64 = lo.iter().zip(hi.iter()).map(|(l, h)| h - l).sum();
    let tol = BALANCE_RTOL * width;
    let bound = lo.iter().chain(hi.iter()).fold(0.0f64, |m, b| m.max(b.abs()));
    let p_max = price.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p_min = price.iter().copied().fold(f64::INFINITY, f64::min);

    // Σ D_s(nu) is non-increasing in nu: all at `hi` for nu_lo, all at `lo` for nu_hi.
    let mut nu_lo = -p_max - 2.0 * c2 * bound;
    let mut nu_hi = -p_min + 2.0 * c2 * bound;
    let mut d_s = vec![0.0; horizon];
    let s_lo = shift_at(price, nu_lo, c2, lo, hi, &mut d_s);
    let s_hi = shift_at(price, nu_hi, c2, lo, hi, &mut d_s);
    if s_lo < -tol || s_hi > tol {
        return Err(Error::Internal(format!(
            "balance multiplier not bracketed: S({nu_lo}) = {s_lo}, S({nu_hi}) = {s_hi}"
        )));
    }

    let mut nu = 0.5 * (nu_lo + nu_hi);
    let mut sum = shift_at(price, nu, c2, lo, hi, &mut d_s);
    for _ in 0..MAX_BISECTIONS {
        if sum.abs() <= tol {
            break;
        }
        if sum > 0.0 {
            nu_lo = nu;
        } else {
            nu_hi = nu;
        }
        nu = 0.5 * (nu_lo + nu_hi);
        sum = shift_at(price, nu, c2, lo, hi, &mut d_s);
    }

    // Polish: with the active set fixed, the free coordinates are affine in nu,
    // so the exact multiplier follows from one linear equation.
    let mut clipped_sum = 0.0;
    let mut free_price = 0.0;
    let mut n_free = 0usize;
    for t in 0..horizon {
        if d_s[t] > lo[t] && d_s[t] < hi[t] {
            free_price += price[t];
            n_free += 1;
        } else {
            clipped_sum += d_s[t];
        }
    }
    if n_free > 0 {
        let nu_exact = (2.0 * c2 * clipped_sum - free_price) / n_free as f64;
        let mut candidate = vec![0.0; horizon];
        let s = shift_at(price, nu_exact, c2, lo, hi, &mut candidate);
        if s.abs() <= sum.abs() {
            nu = nu_exact;
            d_s = candidate;
        }
    }

    AgentSolution::assemble(baseline, flex, price, d_r, d_s, Some(nu))
}

/// Exhaustive grid search over the agent problem; a test oracle for small horizons.
///
/// Grid points are the multiples of `step` inside each box. The reduction
/// block is separable, so each hour is enumerated on its own. The shift block
/// enumerates the first `T - 1` hours and takes the unique grid value of the
/// last hour that balances the schedule, which is exactly the feasible subset
/// of the full product grid.
pub fn brute_force_response(
    consumer: &Consumer,
    price: &PriceProfile,
    step: f64,
) -> Result<AgentSolution> {
    let horizon = consumer.horizon();
    if horizon > 4 {
        return Err(Error::Refused(format!(
            "grid search is limited to horizons of at most 4 hours, got {horizon}"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::Domain(format!("grid step must be positive, got {step}")));
    }
    check_len(horizon, price.len())?;
    let flex = &consumer.flex;
    let p = price.values();

    let range = |lo: f64, hi: f64| -> (i64, i64) {
        ((lo / step - 1e-9).ceil() as i64, (hi / step + 1e-9).floor() as i64)
    };

    let mut d_r = vec![0.0; horizon];
    for t in 0..horizon {
        let (a, b) = range(flex.reduce_lo[t], flex.reduce_hi[t]);
        let mut best = (f64::INFINITY, 0.0);
        for k in a..=b {
            let x = k as f64 * step;
            let v = p[t] * x + flex.c1 * x * x;
            if v < best.0 {
                best = (v, x);
            }
        }
        d_r[t] = best.1;
    }

    let ranges: Vec<(i64, i64)> = (0..horizon)
        .map(|t| range(flex.shift_lo[t], flex.shift_hi[t]))
        .collect();
    let shift_cost = |t: usize, k: i64| {
        let x = k as f64 * step;
        p[t] * x + flex.c2 * x * x
    };
    let mut best_cost = f64::INFINITY;
    let mut best_idx = vec![0i64; horizon];
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    if horizon == 1 {
        best_idx[0] = 0;
    } else {
        loop {
            let partial: i64 = idx[..horizon - 1].iter().sum();
            let last = -partial;
            let (a, b) = ranges[horizon - 1];
            if last >= a && last <= b {
                idx[horizon - 1] = last;
                let cost: f64 = (0..horizon).map(|t| shift_cost(t, idx[t])).sum();
                if cost < best_cost {
                    best_cost = cost;
                    best_idx.copy_from_slice(&idx);
                }
            }
            // odometer over the first T-1 coordinates
            let mut pos = 0;
            loop {
                if pos == horizon - 1 {
                    break;
                }
                if idx[pos] < ranges[pos].1 {
                    idx[pos] += 1;
                    break;
                }
                idx[pos] = ranges[pos].0;
                pos += 1;
            }
            if pos == horizon - 1 {
                break;
            }
        }
        if !best_cost.is_finite() {
            return Err(Error::Infeasible("no balanced grid point".into()));
        }
    }
    let d_s: Vec<f64> = best_idx.iter().map(|&k| k as f64 * step).collect();
    AgentSolution::assemble(consumer.baseline.values(), flex, p, d_r, d_s, None)
}
