use std::collections::BTreeMap;

use super::{MachineSpec, MachineType, PerfModel, PerfModelSet, PiecewiseLinear, ProfileSample};
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Largest absolute residual (ms) over the prompt-phase training samples.
    pub prompt_train_error: f64,
    /// Largest absolute residual (ms) over the token-phase training samples.
    pub token_train_error: f64,
    pub train_samples: usize,
    pub holdout_samples: usize,
    /// Mean absolute percentage error on the holdout split, as a fraction.
    pub holdout_mape: Option<f64>,
}

/// Weighted pool-adjacent-violators: returns a non-decreasing sequence
/// minimizing weighted squared error.
fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            if blocks[n - 2].0 <= blocks[n - 1].0 {
                break;
            }
            let (m2, w2, c2) = blocks.pop().unwrap();
            let (m1, w1, c1) = blocks.pop().unwrap();
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, c1 + c2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

fn interp(a: (f64, f64), b: (f64, f64), x: f64) -> f64 {
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Fit one monotone piece-wise linear curve through `(x, y)` points.
fn fit_curve(points: &[(u32, f64)], knot_budget: usize) -> Result<PiecewiseLinear> {
    let mut grouped: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for &(x, y) in points {
        let e = grouped.entry(x).or_insert((0.0, 0));
        e.0 += y;
        e.1 += 1;
    }
    if grouped.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 distinct abscissas, found {}",
            grouped.len()
        )));
    }
    let xs: Vec<f64> = grouped.keys().map(|&x| x as f64).collect();
    let means: Vec<f64> = grouped.values().map(|&(s, c)| s / c as f64).collect();
    let weights: Vec<f64> = grouped.values().map(|&(_, c)| c as f64).collect();
    let ys = isotonic(&means, &weights);

    let mut keep: Vec<bool> = vec![true; xs.len()];
    let budget = knot_budget.max(2);
    let mut live = xs.len();
    while live > budget {
        let idx: Vec<usize> = (0..xs.len()).filter(|&i| keep[i]).collect();
        let mut best: Option<(f64, usize)> = None;
        for w in idx.windows(3) {
            let (l, m, r) = (w[0], w[1], w[2]);
            let a = (xs[l], ys[l]);
            let b = (xs[r], ys[r]);
            let mut added = 0.0;
            for j in l + 1..r {
                let before = {
                    // current interpolant on (l, m) or (m, r)
                    if j <= m {
                        interp(a, (xs[m], ys[m]), xs[j])
                    } else {
                        interp((xs[m], ys[m]), b, xs[j])
                    }
                };
                let after = interp(a, b, xs[j]);
                added += weights[j] * ((after - means[j]).powi(2) - (before - means[j]).powi(2));
            }
            if best.is_none_or(|(e, _)| added < e) {
                best = Some((added, m));
            }
        }
        let (_, m) = best.expect("at least three live knots");
        keep[m] = false;
        live -= 1;
    }
    let knots: Vec<(f64, f64)> = xs
        .iter()
        .zip(&ys)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|((&x, &y), _)| (x, y))
        .collect();
    PiecewiseLinear::new(knots)
}

fn single_identity(samples: &[ProfileSample]) -> Result<(MachineType, String)> {
    let first = samples.first().ok_or_else(|| Error::Fit("no profile samples".into()))?;
    if samples
        .iter()
        .any(|s| s.machine_type != first.machine_type || s.llm != first.llm)
    {
        return Err(Error::Fit(
            "samples mix machine types or models; fit each group separately".into(),
        ));
    }
    Ok((first.machine_type, first.llm.clone()))
}

/// Least-squares `memory = weight + kv * prompt_tokens` over prompt samples.
fn fit_memory(samples: &[ProfileSample]) -> Result<(u64, u64)> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.is_prompt())
        .map(|s| (s.batch_prompt_tokens as f64, s.measured_memory as f64))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("memory fit needs distinct prompt sizes".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope.round() >= 1.0) {
        return Err(Error::Fit(format!(
            "memory samples imply non-positive KV bytes per token ({slope:.1})"
        )));
    }
    Ok((intercept.round().max(0.0) as u64, slope.round() as u64))
}

/// Fit a performance model for one (machine type, LLM) from its samples.
/// Knots are every distinct abscissa, reduced greedily to `knot_budget`.
pub fn fit_piecewise_linear(samples: &[ProfileSample], knot_budget: usize) -> Result<PerfModel> {
    fit_inner(samples, knot_budget).map(|(m, _)| m)
}

fn fit_inner(samples: &[ProfileSample], knot_budget: usize) -> Result<(PerfModel, FitReport)> {
    let (machine_type, llm) = single_identity(samples)?;
    for s in samples {
        s.validate()?;
    }
    let prompt_pts: Vec<(u32, f64)> = samples
        .iter()
        .filter(|s| s.is_prompt())
        .map(|s| (s.batch_prompt_tokens, s.measured_time_ms))
        .collect();
    let token_pts: Vec<(u32, f64)> = samples
        .iter()
        .filter(|s| !s.is_prompt())
        .map(|s| (s.batch_token_count, s.measured_time_ms))
        .collect();
    let prompt = fit_curve(&prompt_pts, knot_budget)
        .map_err(|e| Error::Fit(format!("{machine_type} {llm} prompt phase: {e}")))?;
    let token =
        fit_curve(&token_pts, knot_budget).map_err(|e| Error::Fit(format!("{machine_type} {llm} token phase: {e}")))?;
    let (weight_memory, kv_bytes_per_token) = fit_memory(samples)?;
    let max_token_batch = token_pts.iter().map(|p| p.0).max().unwrap_or(1);
    let max_err = |f: &PiecewiseLinear, pts: &[(u32, f64)]| {
        pts.iter()
            .map(|&(x, y)| (f.eval(x as f64) - y).abs())
            .fold(0.0, f64::max)
    };
    let report = FitReport {
        prompt_train_error: max_err(&prompt, &prompt_pts),
        token_train_error: max_err(&token, &token_pts),
        train_samples: samples.len(),
        holdout_samples: 0,
        holdout_mape: None,
    };
    let model = PerfModel {
        machine_type,
        llm,
        prompt,
        token,
        kv_bytes_per_token,
        weight_memory,
        memory_capacity: MachineSpec::standard(machine_type).memory_capacity,
        max_token_batch,
    };
    Ok((model, report))
}

/// Seeded 80:20 train/holdout split; reports holdout MAPE over both phases.
/// The smallest and largest abscissa of each phase always train, so the
/// holdout measures interpolation rather than the clamp below the range.
pub fn fit_with_holdout(samples: &[ProfileSample], knot_budget: usize, seed: u64) -> Result<(PerfModel, FitReport)> {
    let mut pinned = Vec::new();
    for prompt in [true, false] {
        let phase = || samples.iter().enumerate().filter(move |(_, s)| s.is_prompt() == prompt);
        if let Some((i, _)) = phase().min_by_key(|(_, s)| s.abscissa()) {
            pinned.push(i);
        }
        if let Some((i, _)) = phase().max_by_key(|(_, s)| s.abscissa()) {
            pinned.push(i);
        }
    }
    pinned.sort_unstable();
    pinned.dedup();
    let mut order: Vec<usize> = (0..samples.len()).filter(|i| !pinned.contains(i)).collect();
    let mut rng = SimRng::new(seed);
    for i in (1..order.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let holdout_n = ((samples.len() as f64 * 0.2).round() as usize).min(order.len());
    let (test_idx, rest) = order.split_at(holdout_n);
    let train: Vec<ProfileSample> = rest.iter().chain(&pinned).map(|&i| samples[i].clone()).collect();
    let (model, mut report) = fit_inner(&train, knot_budget)?;
    if !test_idx.is_empty() {
        let mape = test_idx
            .iter()
            .map(|&i| {
                let s = &samples[i];
                let pred = if s.is_prompt() {
                    model.prompt.eval(s.batch_prompt_tokens as f64)
                } else {
                    model.token.eval(s.batch_token_count as f64)
                };
                ((pred - s.measured_time_ms) / s.measured_time_ms).abs()
            })
            .sum::<f64>()
            / test_idx.len() as f64;
        report.holdout_mape = Some(mape);
    }
    report.holdout_samples = test_idx.len();
    Ok((model, report))
}

/// Fitted models of one LLM with a report per machine type.
pub type FittedLlm = (PerfModelSet, Vec<(MachineType, FitReport)>);

/// Group samples by LLM and machine type and fit each group.
pub fn fit_profiles(
    samples: &[ProfileSample],
    knot_budget: usize,
    holdout_seed: Option<u64>,
) -> Result<BTreeMap<String, FittedLlm>> {
    let mut groups: BTreeMap<(String, MachineType), Vec<ProfileSample>> = BTreeMap::new();
    for s in samples {
        groups
            .entry((s.llm.clone(), s.machine_type))
            .or_default()
            .push(s.clone());
    }
    if groups.is_empty() {
        return Err(Error::Fit("no profile samples".into()));
    }
    let mut out: BTreeMap<String, (PerfModelSet, Vec<(MachineType, FitReport)>)> = BTreeMap::new();
    for ((llm, mt), group) in groups {
        let (model, report) = match holdout_seed {
            Some(seed) => fit_with_holdout(&group, knot_budget, seed)?,
            None => fit_inner(&group, knot_budget)?,
        };
        let entry = out.entry(llm.clone()).or_insert_with(|| {
            (
                PerfModelSet {
                    llm,
                    models: BTreeMap::new(),
                },
                Vec::new(),
            )
        });
        entry.0.models.insert(mt, model);
        entry.1.push((mt, report));
    }
    Ok(out)
}
