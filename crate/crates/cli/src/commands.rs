use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use splitsim_core::engine::{write_event_log, EVENT_LOG_HEADER};
use splitsim_core::metrics::{
    parse_summary_csv, percentile, write_requests_csv, write_summary_csv, write_tbt_csv, MetricsReport,
    REQUESTS_HEADER, SUMMARY_HEADER, TBT_HEADER,
};
use splitsim_core::perfmodel::{fit_profiles, parse_profile_csv, write_model_file};
use splitsim_core::provision::{
    describe_point, search, write_pareto_csv, write_points_csv, Constraint, LoadTest, Objective, SearchSpec,
    SweepConfig, POINTS_HEADER,
};
use splitsim_core::trace::{generate_trace_with_report, parse_trace, trace_stats, write_trace, Trace, TRACE_HEADER};
use splitsim_core::{run, ClusterConfig, RunOptions};

use crate::settings::Settings;
use crate::{FitModelArgs, GenTraceArgs, ModelArgs, ProvisionArgs, ReportArgs, SimulateArgs};

pub enum Outcome {
    Pass,
    Fail,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn apply_model(s: &mut Settings, m: &ModelArgs) {
    s.set("model.preset", m.model.as_deref());
    s.set("model.file", m.model_file.as_ref().map(|p| p.display()));
}

fn print_trace_stats(trace: &Trace) -> Result<()> {
    let st = trace_stats(trace)?;
    eprintln!(
        "requests={} rate={:.4}/s prompt median={} p90={} output median={} p90={}",
        st.count, st.mean_rate, st.median_prompt, st.p90_prompt, st.median_output, st.p90_output
    );
    Ok(())
}

/// Build a trace from `trace.*` settings (prefix `trace.workload` etc.).
fn synthesize(s: &Settings, seed: u64) -> Result<Trace> {
    let workload = s.workload("trace.workload")?;
    let rate: f64 = s
        .cfg
        .get("trace.rate")?
        .context("a trace needs a rate (--rate or `trace.rate`)")?;
    let duration: f64 = s
        .cfg
        .get("trace.duration_s")?
        .context("a trace needs a duration (--duration or `trace.duration_s`)")?;
    let (trace, clamps) = generate_trace_with_report(&workload.prompt, &workload.output, rate, duration, seed)?;
    if clamps.prompt_clamped + clamps.output_clamped > 0 {
        eprintln!(
            "warning: clamped {} prompt and {} output sizes to the distribution bounds",
            clamps.prompt_clamped, clamps.output_clamped
        );
    }
    Ok(trace)
}

pub fn gen_trace(a: GenTraceArgs) -> Result<Outcome> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.set("trace.workload", a.preset.as_deref());
    s.set("trace.rate", a.rate);
    s.set("trace.duration_s", a.duration);
    s.check_paths()?;
    let seed = s.seed(a.seed, "trace.seed")?;
    let trace = synthesize(&s, seed)?;
    let csv = write_trace(&trace);
    match &a.output {
        Some(p) => write_file(p, &csv)?,
        None => print!("{csv}"),
    }
    if trace.is_empty() {
        eprintln!("warning: trace has no requests");
    } else {
        print_trace_stats(&trace)?;
    }
    Ok(Outcome::Pass)
}

pub fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.set("trace.path", a.trace.as_ref().map(|p| p.display()));
    apply_model(&mut s, &a.model);
    s.set("cluster.design", a.design.as_deref());
    s.set("cluster.prompt_machines", a.prompt_machines);
    s.set("cluster.token_machines", a.token_machines);
    s.set("trace.workload", a.workload.as_deref());
    s.set("trace.rate", a.rate);
    s.set("trace.duration_s", a.duration);
    s.set("metrics.tbt_mode", a.tbt_mode.as_deref());
    s.set("output.dir", a.output_dir.as_ref().map(|p| p.display()));
    s.check_paths()?;

    let config = ClusterConfig::from_config(&s.cfg)?;
    let perf = s.perf_models()?;
    let mut options = RunOptions::from_config(&s.cfg)?;
    options.record_log = a.event_log.is_some();
    let trace = match s.path("trace.path") {
        Some(p) => {
            let f = fs::File::open(&p).with_context(|| format!("opening trace {}", p.display()))?;
            parse_trace(f).with_context(|| format!("in trace {}", p.display()))?
        }
        None => synthesize(&s, s.seed(a.seed, "trace.seed")?)?,
    };
    if trace.is_empty() {
        bail!("trace has no requests");
    }

    let out = run(&config, &perf, &trace, &options)?;
    let dir = s.path("output.dir").unwrap_or_else(|| PathBuf::from("."));
    write_file(&dir.join("requests.csv"), &write_requests_csv(&out.report))?;
    write_file(&dir.join("tbt.csv"), &write_tbt_csv(&out.report))?;
    let summary = write_summary_csv(&out.report);
    write_file(&dir.join("summary.csv"), &summary)?;
    if let Some(p) = &a.event_log {
        write_file(p, &write_event_log(&out.log))?;
    }
    print_run(&out.report, &summary);
    Ok(if out.report.slo_pass() {
        Outcome::Pass
    } else {
        Outcome::Fail
    })
}

fn print_run(report: &MetricsReport, summary: &str) {
    for line in summary.lines().filter(|l| l.starts_with('#')) {
        println!("{}", line.trim_start_matches("# "));
    }
    match &report.slo {
        None => println!("slo: no A100 reference model, verdicts unavailable"),
        Some(slo) if slo.pass => println!("slo: pass"),
        Some(slo) => {
            for row in slo.failing() {
                println!(
                    "slo fail: {} p{} ratio={} limit={}",
                    row.metric.as_str(),
                    (row.percentile * 100.0).round(),
                    row.ratio.map_or_else(|| "na".into(), |r| format!("{r:.3}")),
                    row.multiplier
                );
            }
        }
    }
}

fn constraint_from(s: &Settings, a: &ProvisionArgs) -> Result<Constraint> {
    let flags = [
        a.power_budget.map(Constraint::PowerBudget),
        a.cost_budget.map(Constraint::CostBudget),
        a.throughput.map(Constraint::ThroughputTarget),
    ];
    if let Some(c) = flags.into_iter().flatten().next() {
        return Ok(c);
    }
    let from_cfg = [
        s.cfg.get("provision.power_budget")?.map(Constraint::PowerBudget),
        s.cfg.get("provision.cost_budget")?.map(Constraint::CostBudget),
        s.cfg.get("provision.throughput")?.map(Constraint::ThroughputTarget),
    ];
    let given: Vec<Constraint> = from_cfg.into_iter().flatten().collect();
    match given.as_slice() {
        [c] => Ok(*c),
        [] => bail!("provision needs one of --power-budget, --cost-budget or --throughput"),
        _ => bail!("config sets more than one of provision.power_budget, provision.cost_budget, provision.throughput"),
    }
}

fn range(s: &Settings, lo: &str, hi: &str, max: u32) -> Result<Option<(u32, u32)>> {
    let lo: Option<u32> = s.cfg.get(lo)?;
    let hi: Option<u32> = s.cfg.get(hi)?;
    Ok(match (lo, hi) {
        (None, None) => None,
        (lo, hi) => Some((lo.unwrap_or(0), hi.unwrap_or(max))),
    })
}

pub fn provision(a: ProvisionArgs) -> Result<Outcome> {
    let mut s = Settings::load(a.config.as_deref())?;
    apply_model(&mut s, &a.model);
    s.set("cluster.design", a.design.as_deref());
    s.set("provision.objective", a.objective.as_deref());
    s.set("trace.workload", a.workload.as_deref());
    s.set("provision.seeds", a.seeds);
    s.set("provision.trace_duration_s", a.trace_duration);
    s.set("provision.prompt_min", a.prompt_min);
    s.set("provision.prompt_max", a.prompt_max);
    s.set("provision.token_min", a.token_min);
    s.set("provision.token_max", a.token_max);
    s.set("provision.max_count", a.max_count);
    s.set("provision.stride", a.stride);
    s.set("output.dir", a.output_dir.as_ref().map(|p| p.display()));
    s.check_paths()?;

    let constraint = constraint_from(&s, &a)?;
    let objective: Objective = s
        .cfg
        .raw("provision.objective")
        .context("provision needs --objective")?
        .parse()?;
    let template = ClusterConfig::from_config(&s.cfg)?;
    let perf = s.perf_models()?;
    let mut test = LoadTest::new(s.workload("trace.workload")?, perf, s.seed(a.seed, "trace.seed")?);
    test.options = RunOptions::from_config(&s.cfg)?;
    test.duration_s = s.cfg.get_or("provision.trace_duration_s", test.duration_s)?;
    let seed_count: u64 = s.cfg.get_or("provision.seeds", test.seeds.len() as u64)?;
    if seed_count == 0 {
        bail!("provision.seeds must be at least 1");
    }
    let base = test.seeds[0];
    test.seeds = (0..seed_count).map(|i| base.wrapping_add(i)).collect();

    let max_count = s.cfg.get_or("provision.max_count", 100u32)?;
    let spec = SearchSpec {
        design: template.design,
        objective,
        constraint,
        prompt_range: range(&s, "provision.prompt_min", "provision.prompt_max", max_count)?,
        token_range: range(&s, "provision.token_min", "provision.token_max", max_count)?,
        default_max_count: max_count,
        stride: s.cfg.get_or("provision.stride", 1u32)?,
        template,
        test,
        sweep: SweepConfig::default(),
    };
    let result = search(&spec)?;

    let dir = s.path("output.dir").unwrap_or_else(|| PathBuf::from("."));
    write_file(
        &dir.join("results.csv"),
        &write_points_csv(&result.points, result.optimum.as_ref()),
    )?;
    write_file(&dir.join("pareto.csv"), &write_pareto_csv(&result.pareto))?;
    match (&result.optimum, &result.infeasible) {
        (Some(o), _) => {
            println!("optimum: {}", describe_point(o));
            Ok(Outcome::Pass)
        }
        (None, reason) => {
            match reason {
                Some(r) => println!("{r}"),
                None => println!("infeasible: no point meets the {}", constraint.describe()),
            }
            Ok(Outcome::Fail)
        }
    }
}

pub fn fit_model(a: FitModelArgs) -> Result<Outcome> {
    let mut s = Settings::load(a.config.as_deref())?;
    s.set("fit.profile", a.profile.as_ref().map(|p| p.display()));
    s.set("fit.knots", a.knots);
    s.check_paths()?;
    let path = s.path("fit.profile").context("fit-model needs --profile")?;
    let knots = s.cfg.get_or("fit.knots", 8usize)?;
    let seed = s.seed(a.seed, "trace.seed")?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading profile {}", path.display()))?;
    let samples = parse_profile_csv(&text).with_context(|| format!("in profile {}", path.display()))?;
    let fitted = fit_profiles(&samples, knots, Some(seed))?;
    if fitted.len() != 1 {
        bail!(
            "profile mixes {} LLMs; a model file holds one (found {})",
            fitted.len(),
            fitted.keys().cloned().collect::<Vec<_>>().join(", ")
        );
    }
    let (set, reports) = fitted.into_values().next().expect("one entry");
    write_file(&a.output, &write_model_file(&set))?;
    for (mt, r) in &reports {
        let mape = r
            .holdout_mape
            .map_or_else(|| "na".to_string(), |m| format!("{:.3}%", 100.0 * m));
        println!(
            "{} {mt}: train={} holdout={} holdout_mape={mape} max_residual_ms prompt={:.3} token={:.3}",
            set.llm, r.train_samples, r.holdout_samples, r.prompt_train_error, r.token_train_error
        );
    }
    Ok(Outcome::Pass)
}

fn first_data_line(text: &str) -> Option<&str> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
}

/// Column `idx` of every data row, parsed as f64.
fn column(text: &str, idx: usize) -> Result<Vec<f64>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            l.split(',')
                .nth(idx)
                .and_then(|v| v.parse().ok())
                .with_context(|| format!("malformed row `{l}`"))
        })
        .collect()
}

fn print_percentiles(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        println!("  {name}: no samples");
        return Ok(());
    }
    println!(
        "  {name}: p50={:.3} p90={:.3} p99={:.3}",
        percentile(values, 0.5)?,
        percentile(values, 0.9)?,
        percentile(values, 0.99)?
    );
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<Outcome> {
    let mut outcome = Outcome::Pass;
    for path in &a.files {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        println!("{}:", path.display());
        match first_data_line(&text) {
            Some(TRACE_HEADER) => {
                let trace = parse_trace(text.as_bytes())?;
                let st = trace_stats(&trace)?;
                println!(
                    "  trace: requests={} rate={:.4}/s prompt median={} p90={} output median={} p90={}",
                    st.count, st.mean_rate, st.median_prompt, st.p90_prompt, st.median_output, st.p90_output
                );
            }
            Some(REQUESTS_HEADER) => {
                print_percentiles("ttft_ms", &column(&text, 2)?)?;
                print_percentiles("e2e_ms", &column(&text, 3)?)?;
            }
            Some(TBT_HEADER) => print_percentiles("tbt_ms", &column(&text, 2)?)?,
            Some(SUMMARY_HEADER) => {
                let rows = parse_summary_csv(&text)?;
                let failing: Vec<String> = rows
                    .iter()
                    .filter(|r| !r.4)
                    .map(|r| format!("{} {}", r.0, r.1))
                    .collect();
                if rows.is_empty() {
                    println!("  slo: no verdicts");
                } else if failing.is_empty() {
                    println!("  slo: pass ({} rows)", rows.len());
                } else {
                    println!("  slo: fail ({})", failing.join(", "));
                    outcome = Outcome::Fail;
                }
            }
            Some(POINTS_HEADER) => {
                let rps = column(&text, 3)?;
                println!("  points={}", rps.len());
                if let Some(opt) = text.lines().find(|l| l.starts_with("# optimum:")) {
                    println!("  {}", opt.trim_start_matches("# "));
                }
            }
            Some(EVENT_LOG_HEADER) => {
                let n = text.lines().count().saturating_sub(1);
                println!("  events={n}");
            }
            _ => bail!("{}: unrecognized CSV header", path.display()),
        }
    }
    Ok(outcome)
}
