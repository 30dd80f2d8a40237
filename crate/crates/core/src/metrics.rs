//! Per-request latency records, percentiles, and SLO evaluation against an
//! unloaded A100 reference.

use std::fmt::Write as _;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::machine::{nanos_to_ms, nanos_to_secs, Nanos, Role};
use crate::perfmodel::{MachineType, PerfModel};
use crate::trace::Request;

/// Nearest-rank percentile: the value at 0-based index `ceil(p * n) - 1`
/// of the sorted samples.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::validation("percentile of an empty sample"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

/// [`percentile`] on already sorted, non-empty samples.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    // the epsilon keeps products like 0.07 * 100 from rounding up a rank
    let rank = (p * n as f64 - 1e-9).ceil() as i64;
    sorted[(rank - 1).clamp(0, n as i64 - 1) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ttft,
    Tbt,
    E2e,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ttft, Metric::Tbt, Metric::E2e];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Ttft => "ttft",
            Metric::Tbt => "tbt",
            Metric::E2e => "e2e",
        }
    }
}

pub const SLO_PERCENTILES: [f64; 3] = [0.5, 0.9, 0.99];

fn pct_label(p: f64) -> &'static str {
    if p == 0.5 {
        "p50"
    } else if p == 0.9 {
        "p90"
    } else {
        "p99"
    }
}

/// Allowed slowdown per metric at P50, P90 and P99.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SloTable {
    pub ttft: [f64; 3],
    pub tbt: [f64; 3],
    pub e2e: [f64; 3],
}

impl Default for SloTable {
    fn default() -> Self {
        Self {
            ttft: [2.0, 3.0, 6.0],
            tbt: [1.25, 1.5, 5.0],
            e2e: [1.25, 1.5, 5.0],
        }
    }
}

impl SloTable {
    pub fn multipliers(&self, metric: Metric) -> [f64; 3] {
        match metric {
            Metric::Ttft => self.ttft,
            Metric::Tbt => self.tbt,
            Metric::E2e => self.e2e,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.ttft.iter().chain(&self.tbt).chain(&self.e2e);
        if all.into_iter().any(|&m| !(m >= 1.0)) {
            return Err(Error::validation("SLO multipliers must be >= 1"));
        }
        Ok(())
    }

    /// Reads `slo.<metric>_<p50|p90|p99>` overrides.
    pub fn from_config(cfg: &FlatConfig) -> Result<Self> {
        let mut t = Self::default();
        for metric in Metric::ALL {
            let row = match metric {
                Metric::Ttft => &mut t.ttft,
                Metric::Tbt => &mut t.tbt,
                Metric::E2e => &mut t.e2e,
            };
            for (i, p) in SLO_PERCENTILES.iter().enumerate() {
                let key = format!("slo.{}_{}", metric.as_str(), pct_label(*p));
                row[i] = cfg.get_or(&key, row[i])?;
            }
        }
        t.validate()?;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TbtMode {
    /// Every inter-token gap of every request is one sample.
    Pooled,
    /// One sample per request: the mean of its gaps.
    PerRequestMean,
}

impl std::str::FromStr for TbtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(TbtMode::Pooled),
            "per-request-mean" | "per_request_mean" => Ok(TbtMode::PerRequestMean),
            other => Err(Error::config(format!("unknown TBT mode `{other}`"))),
        }
    }
}

/// Unloaded latencies of one request on the reference machine, in ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLatencies {
    pub ttft: f64,
    pub tbt: f64,
    pub e2e: f64,
}

pub fn reference_latencies(request: &Request, reference: &PerfModel) -> Result<ReferenceLatencies> {
    let ttft = reference.prompt_time(request.prompt_tokens)?;
    let tbt = reference.token_iter_time(1)?;
    Ok(ReferenceLatencies {
        ttft,
        tbt,
        e2e: ttft + (request.output_tokens.saturating_sub(1)) as f64 * tbt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub id: u64,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
    pub arrival: Nanos,
    /// Emission time of every output token; the first is the first token.
    pub emissions: Vec<Nanos>,
    pub prompt_machine: usize,
    pub token_machine: usize,
    pub transfer_visible_ms: f64,
    pub preempt_count: u32,
}

impl RequestRecord {
    pub fn first_token(&self) -> Nanos {
        self.emissions.first().copied().unwrap_or(self.arrival)
    }

    pub fn completion(&self) -> Nanos {
        self.emissions.last().copied().unwrap_or(self.arrival)
    }

    pub fn ttft(&self) -> Nanos {
        self.first_token() - self.arrival
    }

    pub fn e2e(&self) -> Nanos {
        self.completion() - self.arrival
    }

    pub fn tbt_gaps(&self) -> impl Iterator<Item = Nanos> + '_ {
        self.emissions.windows(2).map(|w| w[1] - w[0])
    }

    pub fn is_complete(&self) -> bool {
        self.emissions.len() == self.output_tokens as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

impl Percentiles {
    fn of(samples: &mut [f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        samples.sort_by(f64::total_cmp);
        Self {
            p50: percentile_sorted(samples, 0.5),
            p90: percentile_sorted(samples, 0.9),
            p99: percentile_sorted(samples, 0.99),
        }
    }

    pub fn at(&self, p: f64) -> f64 {
        if p == 0.5 {
            self.p50
        } else if p == 0.9 {
            self.p90
        } else {
            self.p99
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SloRow {
    pub metric: Metric,
    pub percentile: f64,
    /// `None` when there were no samples (e.g. only single-token requests).
    pub ratio: Option<f64>,
    pub multiplier: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SloReport {
    pub rows: Vec<SloRow>,
    pub pass: bool,
}

impl SloReport {
    pub fn failing(&self) -> impl Iterator<Item = &SloRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn ratio(&self, metric: Metric, p: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.percentile == p)
            .and_then(|r| r.ratio)
    }
}

/// Slowdown ratios per request (per gap for pooled TBT).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SloRatios {
    pub ttft: Vec<f64>,
    pub tbt: Vec<f64>,
    pub e2e: Vec<f64>,
}

pub fn slo_ratios<'a>(
    pairs: impl IntoIterator<Item = (&'a RequestRecord, &'a ReferenceLatencies)>,
    mode: TbtMode,
) -> SloRatios {
    let mut out = SloRatios::default();
    for (r, refs) in pairs {
        out.ttft.push(nanos_to_ms(r.ttft()) / refs.ttft);
        out.e2e.push(nanos_to_ms(r.e2e()) / refs.e2e);
        match mode {
            TbtMode::Pooled => out.tbt.extend(r.tbt_gaps().map(|g| nanos_to_ms(g) / refs.tbt)),
            TbtMode::PerRequestMean => {
                let n = r.emissions.len().saturating_sub(1);
                if n > 0 {
                    let mean = nanos_to_ms(r.completion() - r.first_token()) / n as f64;
                    out.tbt.push(mean / refs.tbt);
                }
            }
        }
    }
    out
}

/// Nine verdicts: each metric's ratio percentile against its multiplier.
pub fn check_slo(ratios: &SloRatios, slo: &SloTable) -> SloReport {
    let mut rows = Vec::with_capacity(9);
    for metric in Metric::ALL {
        let mut samples = match metric {
            Metric::Ttft => ratios.ttft.clone(),
            Metric::Tbt => ratios.tbt.clone(),
            Metric::E2e => ratios.e2e.clone(),
        };
        samples.sort_by(f64::total_cmp);
        for (i, &p) in SLO_PERCENTILES.iter().enumerate() {
            let multiplier = slo.multipliers(metric)[i];
            let ratio = (!samples.is_empty()).then(|| percentile_sorted(&samples, p));
            rows.push(SloRow {
                metric,
                percentile: p,
                ratio,
                multiplier,
                pass: ratio.is_none_or(|r| r <= multiplier),
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    SloReport { rows, pass }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineReport {
    pub id: usize,
    pub machine_type: MachineType,
    pub home_role: Role,
    pub busy: Nanos,
    pub utilization: f64,
    pub iterations: u64,
    pub mixed_iterations: u64,
    /// Busy time by batched active tokens, bucket `i` covering `[2^i, 2^(i+1))`.
    pub batched_token_time: Vec<Nanos>,
    pub peak_memory: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub design: String,
    pub prompt_machines: u32,
    pub token_machines: u32,
    pub requests: Vec<RequestRecord>,
    /// Absolute latencies in ms over the measured requests.
    pub ttft: Percentiles,
    pub tbt: Percentiles,
    pub e2e: Percentiles,
    pub throughput_rps: f64,
    pub end_time: Nanos,
    pub transfers: u64,
    pub machines: Vec<MachineReport>,
    pub slo: Option<SloReport>,
}

impl MetricsReport {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        design: String,
        prompt_machines: u32,
        token_machines: u32,
        requests: Vec<RequestRecord>,
        measured: &[usize],
        references: Option<&[ReferenceLatencies]>,
        slo: &SloTable,
        tbt_mode: TbtMode,
        end_time: Nanos,
        transfers: u64,
        machines: Vec<MachineReport>,
    ) -> Self {
        let mut ttft: Vec<f64> = measured.iter().map(|&i| nanos_to_ms(requests[i].ttft())).collect();
        let mut e2e: Vec<f64> = measured.iter().map(|&i| nanos_to_ms(requests[i].e2e())).collect();
        let mut tbt: Vec<f64> = match tbt_mode {
            TbtMode::Pooled => measured
                .iter()
                .flat_map(|&i| requests[i].tbt_gaps().map(nanos_to_ms))
                .collect(),
            TbtMode::PerRequestMean => measured
                .iter()
                .filter_map(|&i| {
                    let r = &requests[i];
                    let n = r.emissions.len().saturating_sub(1);
                    (n > 0).then(|| nanos_to_ms(r.completion() - r.first_token()) / n as f64)
                })
                .collect(),
        };
        let slo_report = references.map(|refs| {
            let pairs = measured.iter().map(|&i| (&requests[i], &refs[i]));
            check_slo(&slo_ratios(pairs, tbt_mode), slo)
        });
        let throughput_rps = if end_time == 0 {
            0.0
        } else {
            requests.len() as f64 / nanos_to_secs(end_time)
        };
        Self {
            design,
            prompt_machines,
            token_machines,
            ttft: Percentiles::of(&mut ttft),
            tbt: Percentiles::of(&mut tbt),
            e2e: Percentiles::of(&mut e2e),
            requests,
            throughput_rps,
            end_time,
            transfers,
            machines,
            slo: slo_report,
        }
    }

    pub fn slo_pass(&self) -> bool {
        self.slo.as_ref().is_some_and(|s| s.pass)
    }
}

pub const REQUESTS_HEADER: &str =
    "request_id,arrival_s,ttft_ms,e2e_ms,prompt_machine,token_machine,transfer_visible_ms,preempt_count";
pub const TBT_HEADER: &str = "request_id,token_index,tbt_ms";
pub const SUMMARY_HEADER: &str = "metric,percentile,ratio,multiplier,result";

pub fn write_requests_csv(report: &MetricsReport) -> String {
    let mut out = String::with_capacity(64 * (report.requests.len() + 1));
    out.push_str(REQUESTS_HEADER);
    out.push('\n');
    for r in &report.requests {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{},{},{:.6},{}",
            r.id,
            nanos_to_secs(r.arrival),
            nanos_to_ms(r.ttft()),
            nanos_to_ms(r.e2e()),
            r.prompt_machine,
            r.token_machine,
            r.transfer_visible_ms,
            r.preempt_count
        );
    }
    out
}

/// One row per inter-token gap; `token_index` is the 1-based index of the
/// later token of the pair.
pub fn write_tbt_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(TBT_HEADER);
    out.push('\n');
    for r in &report.requests {
        for (i, g) in r.tbt_gaps().enumerate() {
            let _ = writeln!(out, "{},{},{:.6}", r.id, i + 2, nanos_to_ms(g));
        }
    }
    out
}

pub fn write_summary_csv(report: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# design={} prompt_machines={} token_machines={} requests={} throughput_rps={:.6}",
        report.design,
        report.prompt_machines,
        report.token_machines,
        report.requests.len(),
        report.throughput_rps
    );
    let _ = writeln!(
        out,
        "# ttft_ms p50={:.3} p90={:.3} p99={:.3}; tbt_ms p50={:.3} p90={:.3} p99={:.3}; e2e_ms p50={:.3} p90={:.3} p99={:.3}",
        report.ttft.p50,
        report.ttft.p90,
        report.ttft.p99,
        report.tbt.p50,
        report.tbt.p90,
        report.tbt.p99,
        report.e2e.p50,
        report.e2e.p90,
        report.e2e.p99
    );
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    if let Some(slo) = &report.slo {
        for row in &slo.rows {
            let ratio = row.ratio.map_or_else(|| "na".to_string(), |r| format!("{r:.6}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.metric.as_str(),
                pct_label(row.percentile),
                ratio,
                row.multiplier,
                if row.pass { "pass" } else { "fail" }
            );
        }
    }
    out
}

/// metric, percentile, ratio, limit, pass
pub type SummaryRow = (String, String, Option<f64>, f64, bool);

/// Parsed SLO rows of a summary CSV.
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != SUMMARY_HEADER {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected header `{SUMMARY_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let err = || Error::Parse {
            line: i + 1,
            message: "malformed summary row".into(),
        };
        if f.len() != 5 {
            return Err(err());
        }
        let ratio = if f[2] == "na" {
            None
        } else {
            Some(f[2].parse().map_err(|_| err())?)
        };
        let mult: f64 = f[3].parse().map_err(|_| err())?;
        let pass = match f[4] {
            "pass" => true,
            "fail" => false,
            _ => return Err(err()),
        };
        rows.push((f[0].to_string(), f[1].to_string(), ratio, mult, pass));
    }
    if !header_seen {
        return Err(Error::validation("summary has no header"));
    }
    Ok(rows)
}
