//! Design-space search: how many prompt and token machines of a design are
//! needed to meet the SLOs at a load, or how much load a budget can carry.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cluster::{ClusterConfig, Design};
use crate::engine::{run, RunOptions};
use crate::error::{Error, Result};
use crate::machine::Role;
use crate::perfmodel::PerfModelSet;
use crate::trace::{generate_trace, Workload};

pub use crate::cluster::machine_cost_power;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    MaxThroughput,
    MinCost,
    MinPower,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max_throughput" => Ok(Objective::MaxThroughput),
            "min_cost" => Ok(Objective::MinCost),
            "min_power" => Ok(Objective::MinPower),
            other => Err(Error::config(format!(
                "unknown objective `{other}` (expected max_throughput, min_cost or min_power)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    PowerBudget(f64),
    CostBudget(f64),
    /// Requests per second every returned point must sustain.
    ThroughputTarget(f64),
}

impl Constraint {
    pub fn describe(&self) -> String {
        match self {
            Constraint::PowerBudget(b) => format!("power budget {b}"),
            Constraint::CostBudget(b) => format!("cost budget {b}"),
            Constraint::ThroughputTarget(r) => format!("throughput target {r} rps"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub design: Design,
    pub prompt_count: u32,
    pub token_count: u32,
    /// Highest SLO-passing load found. For throughput-target searches the
    /// sweep stops at the target, so this is the target for passing points.
    pub max_rps: f64,
    pub cost: f64,
    pub power: f64,
    pub slo_pass: bool,
}

impl DesignPoint {
    pub fn new(design: Design, prompt_count: u32, token_count: u32) -> Self {
        let (cost, power) = counts_cost_power(design, prompt_count, token_count);
        Self {
            design,
            prompt_count,
            token_count,
            max_rps: 0.0,
            cost,
            power,
            slo_pass: false,
        }
    }

    pub fn total_machines(&self) -> u32 {
        self.prompt_count + self.token_count
    }
}

pub fn counts_cost_power(design: Design, prompt_count: u32, token_count: u32) -> (f64, f64) {
    let (pc, pp) = machine_cost_power(design, Role::Prompt);
    let (tc, tp) = machine_cost_power(design, Role::Token);
    (
        prompt_count as f64 * pc + token_count as f64 * tc,
        prompt_count as f64 * pp + token_count as f64 * tp,
    )
}

fn fits(count: f64, unit: f64, budget: f64) -> u32 {
    ((budget - count) / unit + 1e-9).floor().max(0.0) as u32
}

/// Largest number of `role` machines of `design` within `budget` when
/// `used` of the budget is already spent.
pub fn machines_within(design: Design, role: Role, constraint: Constraint, used: f64) -> Option<u32> {
    let (cost, power) = machine_cost_power(design, role);
    match constraint {
        Constraint::PowerBudget(b) => Some(fits(used, power, b)),
        Constraint::CostBudget(b) => Some(fits(used, cost, b)),
        Constraint::ThroughputTarget(_) => None,
    }
}

/// Budget-maximal (prompt, token) counts: no machine of either role can be
/// added without breaking the budget. Baseline designs have one point with
/// every machine in the prompt slot.
pub fn budget_frontier(design: Design, constraint: Constraint, min_count: u32) -> Result<Vec<(u32, u32)>> {
    if matches!(constraint, Constraint::ThroughputTarget(_)) {
        return Err(Error::config("budget frontier needs a power or cost budget"));
    }
    if design.is_baseline() {
        let n = machines_within(design, Role::Prompt, constraint, 0.0).unwrap_or(0);
        return Ok(if n >= 1 { vec![(n, 0)] } else { vec![] });
    }
    let unit = |role| {
        let (c, p) = machine_cost_power(design, role);
        match constraint {
            Constraint::PowerBudget(_) => p,
            _ => c,
        }
    };
    let max_p = machines_within(design, Role::Prompt, constraint, 0.0).unwrap_or(0);
    let mut out = Vec::new();
    for p in min_count..=max_p {
        let t = machines_within(design, Role::Token, constraint, p as f64 * unit(Role::Prompt)).unwrap_or(0);
        if t >= min_count {
            out.push((p, t));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub growth: f64,
    /// Bisection stops when `(hi - lo) / lo` falls below this.
    pub resolution: f64,
    /// Initial load per machine, in requests per second.
    pub start_per_machine: f64,
    pub min_rps: f64,
    pub max_rps: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            growth: 1.5,
            resolution: 0.02,
            start_per_machine: 0.5,
            min_rps: 0.01,
            max_rps: 10_000.0,
        }
    }
}

/// Everything needed to judge one cluster at one load.
#[derive(Debug, Clone)]
pub struct LoadTest {
    pub workload: Workload,
    pub duration_s: f64,
    /// The SLOs must hold for the trace of every seed.
    pub seeds: Vec<u64>,
    pub options: RunOptions,
    pub perf: PerfModelSet,
}

impl LoadTest {
    pub fn new(workload: Workload, perf: PerfModelSet, base_seed: u64) -> Self {
        Self {
            workload,
            duration_s: 120.0,
            seeds: (0..3).map(|i| base_seed.wrapping_add(i)).collect(),
            options: RunOptions::default(),
            perf,
        }
    }

    /// Whether `config` meets all nine SLOs at `rate` for every seed. Runs
    /// that fail to finish within the horizon count as failures.
    pub fn passes(&self, config: &ClusterConfig, rate: f64) -> Result<bool> {
        // only the verdict is used, so a run can stop once it is decided
        let options = RunOptions {
            stop_on_slo_miss: true,
            ..self.options.clone()
        };
        let verdicts: Vec<Result<bool>> = self
            .seeds
            .par_iter()
            .map(|&seed| {
                let trace = generate_trace(
                    &self.workload.prompt,
                    &self.workload.output,
                    rate,
                    self.duration_s,
                    seed,
                )?;
                if trace.is_empty() {
                    return Ok(true);
                }
                match run(config, &self.perf, &trace, &options) {
                    Ok(out) => Ok(out.report.slo_pass()),
                    Err(Error::Runtime(_)) => Ok(false),
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut all = true;
        for v in verdicts {
            all &= v?;
        }
        Ok(all)
    }
}

/// Highest rate that meets the SLOs: a geometric ramp to the first failure,
/// then bisection. Returns 0 if even the minimum rate fails.
pub fn max_throughput(config: &ClusterConfig, test: &LoadTest, sweep: &SweepConfig, hint: Option<f64>) -> Result<f64> {
    let start = hint.unwrap_or(sweep.start_per_machine * config.total_machines() as f64);
    let mut rate = start.clamp(sweep.min_rps, sweep.max_rps);
    let (mut lo, mut hi);
    if test.passes(config, rate)? {
        lo = rate;
        loop {
            rate = (rate * sweep.growth).min(sweep.max_rps);
            if rate <= lo {
                return Ok(lo);
            }
            if !test.passes(config, rate)? {
                hi = rate;
                break;
            }
            lo = rate;
        }
    } else {
        hi = rate;
        loop {
            rate /= sweep.growth;
            if rate < sweep.min_rps {
                return Ok(0.0);
            }
            if test.passes(config, rate)? {
                lo = rate;
                break;
            }
            hi = rate;
        }
    }
    while (hi - lo) / lo > sweep.resolution {
        let mid = 0.5 * (lo + hi);
        if test.passes(config, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Debug, Clone)]
pub struct SearchSpec {
    pub design: Design,
    pub objective: Objective,
    pub constraint: Constraint,
    /// Inclusive count ranges; `None` derives them from the budget (or
    /// `1..=default_max_count` for throughput targets).
    pub prompt_range: Option<(u32, u32)>,
    pub token_range: Option<(u32, u32)>,
    pub default_max_count: u32,
    /// Coarse stride over prompt counts before refining at stride 1.
    pub stride: u32,
    /// Cluster template providing scheduler and transfer settings.
    pub template: ClusterConfig,
    pub test: LoadTest,
    pub sweep: SweepConfig,
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        match (self.objective, self.constraint) {
            (Objective::MaxThroughput, Constraint::PowerBudget(b) | Constraint::CostBudget(b)) if b > 0.0 => {}
            (Objective::MinCost | Objective::MinPower, Constraint::ThroughputTarget(r)) if r > 0.0 => {}
            (Objective::MaxThroughput, Constraint::ThroughputTarget(_)) => {
                return Err(Error::config("max_throughput needs a power or cost budget"))
            }
            (Objective::MinCost | Objective::MinPower, Constraint::PowerBudget(_) | Constraint::CostBudget(_)) => {
                return Err(Error::config("min_cost and min_power need a throughput target"))
            }
            _ => return Err(Error::validation("budget and target must be positive")),
        }
        for (lo, hi) in [self.prompt_range, self.token_range].into_iter().flatten() {
            if lo > hi {
                return Err(Error::validation("empty count range"));
            }
        }
        if self.stride == 0 {
            return Err(Error::validation("stride must be positive"));
        }
        Ok(())
    }

    fn config_for(&self, p: u32, t: u32) -> ClusterConfig {
        let mut c = self.template.clone();
        let fresh = ClusterConfig::new(self.design, p, t);
        c.design = self.design;
        c.prompt_machines = p;
        c.token_machines = t;
        c.prompt_spec = fresh.prompt_spec;
        c.token_spec = fresh.token_spec;
        c
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    /// Every evaluated point, in evaluation-independent grid order.
    pub points: Vec<DesignPoint>,
    pub pareto: Vec<DesignPoint>,
    pub optimum: Option<DesignPoint>,
    /// Set when no point satisfies the constraint; names the constraint.
    pub infeasible: Option<String>,
}

fn in_range(x: u32, r: Option<(u32, u32)>) -> bool {
    r.is_none_or(|(lo, hi)| x >= lo && x <= hi)
}

pub fn search(spec: &SearchSpec) -> Result<SearchResult> {
    spec.validate()?;
    let mut points = match spec.constraint {
        Constraint::ThroughputTarget(target) => search_target(spec, target)?,
        budget => search_budget(spec, budget)?,
    };
    points.sort_by_key(|p| (p.prompt_count, p.token_count));
    points.dedup_by_key(|p| (p.prompt_count, p.token_count));
    let pareto = pareto_front(&points);
    let optimum = choose_optimum(&points, spec.objective);
    let infeasible = optimum.is_none().then(|| {
        format!(
            "infeasible: no {} configuration meets the SLOs under the {}",
            spec.design,
            spec.constraint.describe()
        )
    });
    Ok(SearchResult {
        points,
        pareto,
        optimum,
        infeasible,
    })
}

/// Maximize throughput on the budget frontier; adding machines never
/// lowers throughput, so interior grid points are skipped.
fn search_budget(spec: &SearchSpec, budget: Constraint) -> Result<Vec<DesignPoint>> {
    let frontier: Vec<(u32, u32)> = budget_frontier(spec.design, budget, 1)?
        .into_iter()
        .filter(|&(p, t)| {
            in_range(p, spec.prompt_range) && (spec.design.is_baseline() || in_range(t, spec.token_range))
        })
        .collect();
    if frontier.is_empty() {
        return Ok(Vec::new());
    }
    let evaluate = |&(p, t): &(u32, u32)| -> Result<DesignPoint> {
        let config = spec.config_for(p, t);
        let rps = max_throughput(&config, &spec.test, &spec.sweep, None)?;
        let mut point = DesignPoint::new(spec.design, p, t);
        point.max_rps = rps;
        point.slo_pass = rps > 0.0;
        Ok(point)
    };
    let stride = spec.stride as usize;
    let coarse: Vec<(u32, u32)> = frontier
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i == frontier.len() - 1)
        .map(|(_, x)| *x)
        .collect();
    let mut points: Vec<DesignPoint> = coarse.par_iter().map(evaluate).collect::<Result<_>>()?;
    if stride > 1 {
        let best = choose_optimum(&points, Objective::MaxThroughput);
        if let Some(best) = best {
            let idx = frontier
                .iter()
                .position(|&x| x == (best.prompt_count, best.token_count))
                .expect("optimum comes from the frontier");
            let lo = idx.saturating_sub(stride - 1);
            let hi = (idx + stride - 1).min(frontier.len() - 1);
            let refine: Vec<(u32, u32)> = frontier[lo..=hi]
                .iter()
                .filter(|x| !coarse.contains(x))
                .copied()
                .collect();
            let more: Vec<DesignPoint> = refine.par_iter().map(evaluate).collect::<Result<_>>()?;
            points.extend(more);
        }
    }
    Ok(points)
}

/// Cheapest clusters meeting the target. Passing is monotone in both
/// counts, so a staircase walk finds, for each prompt count, the fewest
/// token machines that pass.
fn search_target(spec: &SearchSpec, target: f64) -> Result<Vec<DesignPoint>> {
    let max = spec.default_max_count;
    let baseline = spec.design.is_baseline();
    let (p_lo, p_hi) = spec.prompt_range.unwrap_or((1, max));
    let (t_lo, t_hi) = if baseline {
        (0, 0)
    } else {
        spec.token_range.unwrap_or((1, max))
    };
    let mut evaluated: Vec<DesignPoint> = Vec::new();
    let mut eval = |p: u32, t: u32, evaluated: &mut Vec<DesignPoint>| -> Result<bool> {
        if let Some(d) = evaluated.iter().find(|d| d.prompt_count == p && d.token_count == t) {
            return Ok(d.slo_pass);
        }
        if p + t == 0 {
            return Ok(false);
        }
        let pass = spec.test.passes(&spec.config_for(p, t), target)?;
        let mut point = DesignPoint::new(spec.design, p, t);
        point.slo_pass = pass;
        point.max_rps = if pass { target } else { 0.0 };
        evaluated.push(point);
        Ok(pass)
    };

    if baseline {
        // smallest passing count by bisection over 1-D counts
        if !eval(p_hi, 0, &mut evaluated)? {
            return Ok(evaluated);
        }
        let (mut lo, mut hi) = (p_lo, p_hi);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if eval(mid, 0, &mut evaluated)? {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        return Ok(evaluated);
    }

    type Eval<'e> = dyn FnMut(u32, u32, &mut Vec<DesignPoint>) -> Result<bool> + 'e;
    let staircase = |ps: &[u32], t_start: u32, evaluated: &mut Vec<DesignPoint>, eval: &mut Eval| -> Result<()> {
        let mut t = t_start;
        for &p in ps {
            if !eval(p, t, evaluated)? {
                continue;
            }
            while t > t_lo && eval(p, t - 1, evaluated)? {
                t -= 1;
            }
        }
        Ok(())
    };
    let stride = spec.stride.max(1);
    let coarse: Vec<u32> = (p_lo..=p_hi)
        .filter(|p| (p - p_lo) % stride == 0 || *p == p_hi)
        .collect();
    staircase(&coarse, t_hi, &mut evaluated, &mut eval)?;
    if stride > 1 {
        let objective = spec.objective;
        if let Some(best) = choose_optimum(&evaluated, objective) {
            let lo = best.prompt_count.saturating_sub(stride - 1).max(p_lo);
            let hi = (best.prompt_count + stride - 1).min(p_hi);
            let fine: Vec<u32> = (lo..=hi).collect();
            // fewest token machines known to pass at or below `lo` bounds the walk
            let t_start = evaluated
                .iter()
                .filter(|d| d.slo_pass && d.prompt_count <= lo)
                .map(|d| d.token_count)
                .min()
                .unwrap_or(t_hi);
            staircase(&fine, t_start, &mut evaluated, &mut eval)?;
        }
    }
    Ok(evaluated)
}

fn key(objective: Objective, p: &DesignPoint) -> f64 {
    match objective {
        Objective::MaxThroughput => -p.max_rps,
        Objective::MinCost => p.cost,
        Objective::MinPower => p.power,
    }
}

/// Best passing point; ties go to fewer machines, then lower cost, then
/// lower power.
pub fn choose_optimum(points: &[DesignPoint], objective: Objective) -> Option<DesignPoint> {
    points
        .iter()
        .filter(|p| p.slo_pass)
        .min_by(|a, b| {
            key(objective, a)
                .total_cmp(&key(objective, b))
                .then(a.total_machines().cmp(&b.total_machines()))
                .then(a.cost.total_cmp(&b.cost))
                .then(a.power.total_cmp(&b.power))
        })
        .cloned()
}

fn dominates(a: &DesignPoint, b: &DesignPoint) -> bool {
    let ge = a.max_rps >= b.max_rps && a.cost <= b.cost && a.power <= b.power;
    let gt = a.max_rps > b.max_rps || a.cost < b.cost || a.power < b.power;
    ge && gt
}

/// Passing points not dominated in (throughput, -cost, -power).
pub fn pareto_front(points: &[DesignPoint]) -> Vec<DesignPoint> {
    let passing: Vec<&DesignPoint> = points.iter().filter(|p| p.slo_pass).collect();
    passing
        .iter()
        .filter(|p| !passing.iter().any(|q| dominates(q, p)))
        .map(|p| (*p).clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeReport {
    pub design: Design,
    pub prompt_count: u32,
    pub token_count: u32,
    pub throughput: f64,
    pub cost: f64,
    pub power: f64,
    pub machines: f64,
}

/// Each point's throughput, cost, power and machine count relative to
/// `baseline`.
pub fn summarize(points: &[DesignPoint], baseline: &DesignPoint) -> Result<Vec<RelativeReport>> {
    if baseline.max_rps <= 0.0 || baseline.cost <= 0.0 || baseline.power <= 0.0 || baseline.total_machines() == 0 {
        return Err(Error::validation("baseline point has a zero metric"));
    }
    Ok(points
        .iter()
        .map(|p| RelativeReport {
            design: p.design,
            prompt_count: p.prompt_count,
            token_count: p.token_count,
            throughput: p.max_rps / baseline.max_rps,
            cost: p.cost / baseline.cost,
            power: p.power / baseline.power,
            machines: p.total_machines() as f64 / baseline.total_machines() as f64,
        })
        .collect())
}

pub const POINTS_HEADER: &str = "design,prompt_count,token_count,max_rps,cost,power,slo_pass";

pub fn write_points_csv(points: &[DesignPoint], optimum: Option<&DesignPoint>) -> String {
    let mut out = String::new();
    out.push_str(POINTS_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{}",
            p.design, p.prompt_count, p.token_count, p.max_rps, p.cost, p.power, p.slo_pass
        );
    }
    match optimum {
        Some(o) => {
            let _ = writeln!(out, "# optimum: {}", describe_point(o));
        }
        None => out.push_str("# optimum: none\n"),
    }
    out
}

/// Pareto points sorted by cost, for plotting throughput against cost and
/// power.
pub fn write_pareto_csv(points: &[DesignPoint]) -> String {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.power.total_cmp(&b.power)));
    write_points_csv(&sorted, None)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn describe_point(p: &DesignPoint) -> String {
    format!(
        "{} prompt={} token={} total={} max_rps={:.3} cost={:.2} power={:.2}",
        p.design,
        p.prompt_count,
        p.token_count,
        p.total_machines(),
        p.max_rps,
        p.cost,
        p.power
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iso_power_a100_count() {
        // 40 H100 machines at 1.75 each
        let budget = Constraint::PowerBudget(40.0 * 1.75);
        assert_eq!(budget_frontier(Design::BaselineA100, budget, 1).unwrap(), vec![(70, 0)]);
        assert_eq!(budget_frontier(Design::BaselineH100, budget, 1).unwrap(), vec![(40, 0)]);
    }

    #[test]
    fn cost_power_additivity() {
        let (c, p) = counts_cost_power(Design::SplitwiseHHcap, 3, 4);
        assert!((c - (3.0 * 2.35 + 4.0 * 2.5)).abs() < 1e-12);
        assert!((p - (3.0 * 1.75 + 4.0 * 1.23)).abs() < 1e-12);
    }

    #[test]
    fn frontier_is_maximal_and_within_budget() {
        let budget = Constraint::CostBudget(40.0);
        let f = budget_frontier(Design::SplitwiseHA, budget, 1).unwrap();
        assert!(!f.is_empty());
        for &(p, t) in &f {
            let (c, _) = counts_cost_power(Design::SplitwiseHA, p, t);
            assert!(c <= 40.0 + 1e-9);
            let (c2, _) = counts_cost_power(Design::SplitwiseHA, p, t + 1);
            assert!(c2 > 40.0);
        }
    }

    fn pt(rps: f64, cost: f64, power: f64, pass: bool) -> DesignPoint {
        DesignPoint {
            design: Design::SplitwiseAA,
            prompt_count: cost as u32,
            token_count: 1,
            max_rps: rps,
            cost,
            power,
            slo_pass: pass,
        }
    }

    #[test]
    fn pareto_matches_brute_force() {
        let pts = vec![
            pt(10.0, 5.0, 5.0, true),
            pt(12.0, 6.0, 6.0, true),
            pt(9.0, 6.0, 6.0, true),
            pt(20.0, 1.0, 1.0, false),
        ];
        let front = pareto_front(&pts);
        assert_eq!(front.len(), 2);
        assert!(front.iter().all(|p| p.max_rps != 9.0));
    }

    #[test]
    fn optimum_tie_breaks() {
        let mut a = pt(10.0, 5.0, 5.0, true);
        a.prompt_count = 3;
        let mut b = pt(10.0, 5.0, 4.0, true);
        b.prompt_count = 2;
        let best = choose_optimum(&[a, b.clone()], Objective::MinCost).unwrap();
        assert_eq!(best, b);
        assert!(choose_optimum(&[pt(1.0, 1.0, 1.0, false)], Objective::MinCost).is_none());
    }

    #[test]
    fn summary_ratios() {
        let base = pt(10.0, 5.0, 5.0, true);
        let r = summarize(std::slice::from_ref(&base), &base).unwrap();
        assert_eq!(
            (r[0].throughput, r[0].cost, r[0].power, r[0].machines),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert!(summarize(&[base], &pt(0.0, 1.0, 1.0, true)).is_err());
    }

    #[test]
    fn spec_combinations() {
        let perf = PerfModelSet::preset("llama2-70b").unwrap();
        let mut spec = SearchSpec {
            design: Design::SplitwiseHH,
            objective: Objective::MaxThroughput,
            constraint: Constraint::ThroughputTarget(10.0),
            prompt_range: None,
            token_range: None,
            default_max_count: 40,
            stride: 4,
            template: ClusterConfig::new(Design::SplitwiseHH, 1, 1),
            test: LoadTest::new(Workload::coding(), perf, 1),
            sweep: SweepConfig::default(),
        };
        assert!(spec.validate().is_err());
        spec.objective = Objective::MinCost;
        assert!(spec.validate().is_ok());
        spec.constraint = Constraint::PowerBudget(10.0);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn infeasible_budget() {
        let perf = PerfModelSet::preset("llama2-70b").unwrap();
        let spec = SearchSpec {
            design: Design::SplitwiseHH,
            objective: Objective::MaxThroughput,
            constraint: Constraint::PowerBudget(2.0),
            prompt_range: None,
            token_range: None,
            default_max_count: 40,
            stride: 1,
            template: ClusterConfig::new(Design::SplitwiseHH, 1, 1),
            test: LoadTest::new(Workload::coding(), perf, 1),
            sweep: SweepConfig::default(),
        };
        let res = search(&spec).unwrap();
        assert!(res.optimum.is_none());
        assert!(res.infeasible.unwrap().contains("power budget"));
    }
}
