//! Request traces: CSV ingestion, synthesis from token-size distributions,
//! and summary statistics.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const TRACE_HEADER: &str = "arrival_s,prompt_tokens,output_tokens";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub id: u64,
    /// Arrival time in seconds.
    pub arrival: f64,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub requests: Vec<Request>,
    /// Seconds covered by the trace; every arrival is `<= duration`.
    pub duration: f64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn empty(duration: f64) -> Self {
        Self {
            requests: Vec::new(),
            duration,
        }
    }

    /// Build a trace from arbitrary requests, sorting stably by arrival and
    /// validating the request invariants.
    pub fn from_requests(mut requests: Vec<Request>) -> Result<Self> {
        let mut ids = std::collections::HashSet::with_capacity(requests.len());
        for r in &requests {
            validate_request(r)?;
            if !ids.insert(r.id) {
                return Err(Error::validation(format!("duplicate request id {}", r.id)));
            }
        }
        requests.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
        let duration = requests.last().map_or(0.0, |r| r.arrival);
        Ok(Self { requests, duration })
    }

    pub fn total_output_tokens(&self) -> u64 {
        self.requests.iter().map(|r| r.output_tokens as u64).sum()
    }
}

fn validate_request(r: &Request) -> Result<()> {
    if r.prompt_tokens == 0 || r.output_tokens == 0 {
        return Err(Error::validation(format!(
            "request {} has non-positive token count",
            r.id
        )));
    }
    if !(r.arrival >= 0.0) || !r.arrival.is_finite() {
        return Err(Error::validation(format!(
            "request {} has invalid arrival {}",
            r.id, r.arrival
        )));
    }
    Ok(())
}

/// Parse a `arrival_s,prompt_tokens,output_tokens` CSV. Request ids are the
/// positions after a stable sort by arrival, so rows tied in time keep
/// file order.
pub fn parse_trace<R: Read>(source: R) -> Result<Trace> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(Error::validation("empty trace")),
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    if header.trim() != TRACE_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{TRACE_HEADER}`"),
        });
    }

    let mut requests = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::Parse {
            line: line_no,
            message: format!("invalid {what}"),
        };
        let arrival: f64 = fields[0].parse().map_err(|_| parse_err("arrival_s"))?;
        let prompt: i64 = fields[1].parse().map_err(|_| parse_err("prompt_tokens"))?;
        let output: i64 = fields[2].parse().map_err(|_| parse_err("output_tokens"))?;
        if prompt <= 0 || output <= 0 {
            return Err(Error::validation(format!(
                "line {line_no}: token counts must be positive"
            )));
        }
        if prompt > u32::MAX as i64 || output > u32::MAX as i64 {
            return Err(parse_err("token count (too large)"));
        }
        let req = Request {
            id: requests.len() as u64,
            arrival,
            prompt_tokens: prompt as u32,
            output_tokens: output as u32,
        };
        validate_request(&req).map_err(|e| match e {
            Error::Validation(m) => Error::validation(format!("line {line_no}: {m}")),
            other => other,
        })?;
        requests.push(req);
    }
    if requests.is_empty() {
        return Err(Error::validation("empty trace"));
    }
    let mut trace = Trace::from_requests(requests)?;
    for (i, r) in trace.requests.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Ok(trace)
}

/// Serialize in the same CSV format; arrivals are written with microsecond
/// precision, which is the resolution generated traces are quantized to.
pub fn write_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(32 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in &trace.requests {
        let _ = writeln!(out, "{:.6},{},{}", r.arrival, r.prompt_tokens, r.output_tokens);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistKind {
    /// Inverse-CDF table of `(cumulative probability, tokens)` points with
    /// strictly increasing probabilities and non-decreasing token values.
    Empirical {
        cdf: Vec<(f64, f64)>,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// Two-component lognormal mixture; `weight2` is the second component's
    /// probability.
    BimodalLogNormal {
        mu: f64,
        sigma: f64,
        weight2: f64,
        mu2: f64,
        sigma2: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution {
    pub kind: DistKind,
    pub min_tokens: u32,
    pub max_tokens: u32,
}

impl SizeDistribution {
    pub fn new(kind: DistKind, min_tokens: u32, max_tokens: u32) -> Result<Self> {
        let d = Self {
            kind,
            min_tokens,
            max_tokens,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn lognormal_median(median: f64, sigma: f64, min_tokens: u32, max_tokens: u32) -> Self {
        Self {
            kind: DistKind::LogNormal { mu: median.ln(), sigma },
            min_tokens,
            max_tokens,
        }
    }

    pub fn constant(tokens: u32) -> Self {
        Self {
            kind: DistKind::Empirical {
                cdf: vec![(0.0, tokens as f64), (1.0, tokens as f64)],
            },
            min_tokens: tokens,
            max_tokens: tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::validation(format!(
                "invalid clamp [{}, {}]",
                self.min_tokens, self.max_tokens
            )));
        }
        match &self.kind {
            DistKind::Empirical { cdf } => {
                if cdf.len() < 2 {
                    return Err(Error::validation("empirical CDF needs at least two points"));
                }
                if cdf[0].0 != 0.0 || cdf[cdf.len() - 1].0 != 1.0 {
                    return Err(Error::validation("empirical CDF must span [0, 1]"));
                }
                for w in cdf.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::validation(
                            "empirical CDF probabilities must be strictly increasing",
                        ));
                    }
                    if w[1].1 < w[0].1 {
                        return Err(Error::validation("empirical CDF values must be non-decreasing"));
                    }
                }
            }
            DistKind::LogNormal { mu, sigma } => check_lognormal(*mu, *sigma)?,
            DistKind::BimodalLogNormal {
                mu,
                sigma,
                weight2,
                mu2,
                sigma2,
            } => {
                check_lognormal(*mu, *sigma)?;
                check_lognormal(*mu2, *sigma2)?;
                if !(0.0..=1.0).contains(weight2) {
                    return Err(Error::validation("mixture weight must be in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Draw one size. Returns the clamped value and whether clamping applied.
    pub fn sample(&self, rng: &mut SimRng) -> (u32, bool) {
        let raw = match &self.kind {
            DistKind::Empirical { cdf } => {
                let u = rng.uniform();
                let i = cdf.partition_point(|&(p, _)| p <= u).clamp(1, cdf.len() - 1);
                let (p0, v0) = cdf[i - 1];
                let (p1, v1) = cdf[i];
                v0 + (v1 - v0) * (u - p0) / (p1 - p0)
            }
            DistKind::LogNormal { mu, sigma } => (mu + sigma * rng.standard_normal()).exp(),
            DistKind::BimodalLogNormal {
                mu,
                sigma,
                weight2,
                mu2,
                sigma2,
            } => {
                let second = rng.uniform() < *weight2;
                let z = rng.standard_normal();
                if second {
                    (mu2 + sigma2 * z).exp()
                } else {
                    (mu + sigma * z).exp()
                }
            }
        };
        let rounded = raw.round();
        if rounded < self.min_tokens as f64 {
            (self.min_tokens, true)
        } else if rounded > self.max_tokens as f64 {
            (self.max_tokens, true)
        } else {
            (rounded as u32, false)
        }
    }

    /// Read `{prefix}.kind`, `{prefix}.mu`, ... from a flat config.
    /// `{prefix}.median` is accepted as an alternative to `mu`.
    pub fn from_config(cfg: &FlatConfig, prefix: &str) -> Result<Option<Self>> {
        let Some(kind) = cfg.raw(&format!("{prefix}.kind")).map(str::to_string) else {
            return Ok(None);
        };
        let key = |k: &str| format!("{prefix}.{k}");
        let mu = |mu_key: &str, median_key: &str| -> Result<f64> {
            if let Some(m) = cfg.get::<f64>(&key(mu_key))? {
                return Ok(m);
            }
            if let Some(med) = cfg.get::<f64>(&key(median_key))? {
                return Ok(med.ln());
            }
            Err(Error::config(format!("missing `{}`", key(mu_key))))
        };
        let req = |k: &str| -> Result<f64> {
            cfg.get::<f64>(&key(k))?
                .ok_or_else(|| Error::config(format!("missing `{}`", key(k))))
        };
        let min = cfg.get_or::<u32>(&key("min"), 1)?;
        let max = cfg.get_or::<u32>(&key("max"), 8192)?;
        let kind = match kind.as_str() {
            "lognormal" => DistKind::LogNormal {
                mu: mu("mu", "median")?,
                sigma: req("sigma")?,
            },
            "bimodal-lognormal" => DistKind::BimodalLogNormal {
                mu: mu("mu", "median")?,
                sigma: req("sigma")?,
                weight2: req("weight2")?,
                mu2: mu("mu2", "median2")?,
                sigma2: req("sigma2")?,
            },
            "constant" => {
                let v = req("value")?;
                DistKind::Empirical {
                    cdf: vec![(0.0, v), (1.0, v)],
                }
            }
            other => {
                return Err(Error::config(format!(
                    "unknown distribution kind `{other}` for `{prefix}`"
                )))
            }
        };
        Self::new(kind, min, max).map(Some)
    }
}

fn check_lognormal(mu: f64, sigma: f64) -> Result<()> {
    if !mu.is_finite() || !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::validation("lognormal parameters must be finite with sigma >= 0"));
    }
    Ok(())
}

/// Prompt/output size distributions describing one inference service.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub name: String,
    pub prompt: SizeDistribution,
    pub output: SizeDistribution,
}

impl Workload {
    /// Code completion: long prompts (median 1500), very short outputs
    /// (median 13).
    pub fn coding() -> Self {
        Self {
            name: "coding".into(),
            prompt: SizeDistribution::lognormal_median(1500.0, 0.9, 8, 8192),
            output: SizeDistribution::lognormal_median(13.0, 1.0, 1, 2048),
        }
    }

    /// Chat: medium prompts (median 1020) and a bimodal output mix whose
    /// median is 129 tokens.
    pub fn conversation() -> Self {
        Self {
            name: "conversation".into(),
            prompt: SizeDistribution::lognormal_median(1020.0, 0.9, 8, 8192),
            output: SizeDistribution {
                kind: DistKind::BimodalLogNormal {
                    mu: 40f64.ln(),
                    sigma: 0.8,
                    weight2: 0.4947,
                    mu2: 300f64.ln(),
                    sigma2: 0.55,
                },
                min_tokens: 1,
                max_tokens: 2048,
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "coding" => Ok(Self::coding()),
            "conversation" => Ok(Self::conversation()),
            other => Err(Error::config(format!(
                "unknown workload preset `{other}` (expected coding or conversation)"
            ))),
        }
    }

    /// Override either distribution from `prompt_dist.*` / `output_dist.*`.
    pub fn apply_config(&mut self, cfg: &FlatConfig) -> Result<()> {
        if let Some(d) = SizeDistribution::from_config(cfg, "prompt_dist")? {
            self.prompt = d;
        }
        if let Some(d) = SizeDistribution::from_config(cfg, "output_dist")? {
            self.output = d;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClampReport {
    pub prompt_clamped: u64,
    pub output_clamped: u64,
}

/// Synthesize a Poisson-arrival trace. Gaps are exponential with mean
/// `1/rate`; sizes are independent draws. Arrivals are quantized to
/// microseconds so the CSV form is exact.
pub fn generate_trace(
    prompt_dist: &SizeDistribution,
    output_dist: &SizeDistribution,
    rate: f64,
    duration: f64,
    seed: u64,
) -> Result<Trace> {
    generate_trace_with_report(prompt_dist, output_dist, rate, duration, seed).map(|(t, _)| t)
}

pub fn generate_trace_with_report(
    prompt_dist: &SizeDistribution,
    output_dist: &SizeDistribution,
    rate: f64,
    duration: f64,
    seed: u64,
) -> Result<(Trace, ClampReport)> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::validation(format!("rate must be >= 0, got {rate}")));
    }
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::validation(format!("duration must be > 0, got {duration}")));
    }
    prompt_dist.validate()?;
    output_dist.validate()?;
    let mut report = ClampReport::default();
    if rate == 0.0 {
        return Ok((Trace::empty(duration), report));
    }
    let mut rng = SimRng::new(seed);
    let mut requests = Vec::with_capacity((rate * duration * 1.05) as usize + 16);
    let mut t = 0.0;
    loop {
        t += rng.exponential(rate);
        if t > duration {
            break;
        }
        let (prompt, pc) = prompt_dist.sample(&mut rng);
        let (output, oc) = output_dist.sample(&mut rng);
        report.prompt_clamped += pc as u64;
        report.output_clamped += oc as u64;
        requests.push(Request {
            id: requests.len() as u64,
            arrival: ((t * 1e6).round() / 1e6).min(duration),
            prompt_tokens: prompt,
            output_tokens: output,
        });
    }
    Ok((Trace { requests, duration }, report))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    pub count: usize,
    pub median_prompt: u32,
    pub p90_prompt: u32,
    pub median_output: u32,
    pub p90_output: u32,
    /// Requests per second over the trace duration.
    pub mean_rate: f64,
}

/// Medians use the lower middle element; P90 is nearest-rank.
pub fn trace_stats(trace: &Trace) -> Result<TraceStats> {
    if trace.is_empty() {
        return Err(Error::validation("empty trace"));
    }
    let mut prompts: Vec<u32> = trace.requests.iter().map(|r| r.prompt_tokens).collect();
    let mut outputs: Vec<u32> = trace.requests.iter().map(|r| r.output_tokens).collect();
    prompts.sort_unstable();
    outputs.sort_unstable();
    let n = prompts.len();
    let median = (n - 1) / 2;
    let p90 = ((0.9 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let span = if trace.duration > 0.0 {
        trace.duration
    } else {
        trace.requests.last().map_or(0.0, |r| r.arrival)
    };
    Ok(TraceStats {
        count: n,
        median_prompt: prompts[median],
        p90_prompt: prompts[p90],
        median_output: outputs[median],
        p90_output: outputs[p90],
        mean_rate: if span > 0.0 { n as f64 / span } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_str(s: &str) -> Result<Trace> {
        parse_trace(s.as_bytes())
    }

    #[test]
    fn parses_single_row() {
        let t = parse_str("arrival_s,prompt_tokens,output_tokens\n0.0,1500,13").unwrap();
        assert_eq!(t.len(), 1);
        let r = t.requests[0];
        assert_eq!((r.arrival, r.prompt_tokens, r.output_tokens), (0.0, 1500, 13));
    }

    #[test]
    fn header_only_is_empty_trace() {
        let err = parse_str("arrival_s,prompt_tokens,output_tokens\n").unwrap_err();
        assert!(err.to_string().contains("empty trace"));
        assert!(parse_str("").unwrap_err().to_string().contains("empty trace"));
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let t = parse_str("arrival_s,prompt_tokens,output_tokens\n2.0,5,5\n1.0,6,6\n").unwrap();
        let arrivals: Vec<f64> = t.requests.iter().map(|r| r.arrival).collect();
        assert_eq!(arrivals, vec![1.0, 2.0]);
        assert_eq!(t.requests[0].id, 0);
        assert_eq!(t.requests[0].prompt_tokens, 6);
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_str("arrival_s,prompt_tokens,output_tokens\n0.0,1,1\nx,2,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = parse_str("arrival_s,prompt_tokens,output_tokens\n0.0,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn non_positive_tokens_rejected() {
        let err = parse_str("arrival_s,prompt_tokens,output_tokens\n0.0,0,1\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        let err = parse_str("arrival_s,prompt_tokens,output_tokens\n0.0,4,-1\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn negative_arrival_rejected() {
        let err = parse_str("arrival_s,prompt_tokens,output_tokens\n-1.0,4,1\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn zero_rate_gives_empty_trace() {
        let w = Workload::coding();
        let t = generate_trace(&w.prompt, &w.output, 0.0, 10.0, 1).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.duration, 10.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let w = Workload::conversation();
        let a = generate_trace(&w.prompt, &w.output, 2.0, 600.0, 7).unwrap();
        let b = generate_trace(&w.prompt, &w.output, 2.0, 600.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_trace(&w.prompt, &w.output, 2.0, 600.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_generation_params() {
        let w = Workload::coding();
        assert!(generate_trace(&w.prompt, &w.output, -1.0, 10.0, 1).is_err());
        assert!(generate_trace(&w.prompt, &w.output, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn singleton_stats() {
        let t = Trace::from_requests(vec![Request {
            id: 0,
            arrival: 1.0,
            prompt_tokens: 10,
            output_tokens: 5,
        }])
        .unwrap();
        let s = trace_stats(&t).unwrap();
        assert_eq!((s.median_prompt, s.median_output), (10, 5));
    }

    #[test]
    fn even_count_uses_lower_median() {
        let reqs = [4u32, 1, 3, 2]
            .iter()
            .enumerate()
            .map(|(i, &p)| Request {
                id: i as u64,
                arrival: i as f64,
                prompt_tokens: p,
                output_tokens: p,
            })
            .collect();
        let s = trace_stats(&Trace::from_requests(reqs).unwrap()).unwrap();
        assert_eq!(s.median_prompt, 2);
        assert_eq!(s.p90_prompt, 4);
    }

    #[test]
    fn empty_stats_error() {
        assert!(trace_stats(&Trace::empty(1.0)).is_err());
    }

    #[test]
    fn presets_hit_reported_medians() {
        for (w, mp, mo) in [
            (Workload::coding(), 1500.0, 13.0),
            (Workload::conversation(), 1020.0, 129.0),
        ] {
            let t = generate_trace(&w.prompt, &w.output, 20.0, 1000.0, 42).unwrap();
            let s = trace_stats(&t).unwrap();
            let rel = |x: u32, target: f64| (x as f64 - target).abs() / target;
            assert!(rel(s.median_prompt, mp) < 0.05, "{} prompt {}", w.name, s.median_prompt);
            assert!(rel(s.median_output, mo) < 0.08, "{} output {}", w.name, s.median_output);
        }
    }

    #[test]
    fn empirical_distribution_interpolates() {
        let d = SizeDistribution::new(
            DistKind::Empirical {
                cdf: vec![(0.0, 10.0), (0.5, 20.0), (1.0, 100.0)],
            },
            1,
            1000,
        )
        .unwrap();
        let mut rng = SimRng::new(5);
        for _ in 0..1000 {
            let (v, clamped) = d.sample(&mut rng);
            assert!((10..=100).contains(&v));
            assert!(!clamped);
        }
        let bad = SizeDistribution::new(
            DistKind::Empirical {
                cdf: vec![(0.0, 10.0), (0.0, 20.0), (1.0, 100.0)],
            },
            1,
            1000,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn distribution_from_config() {
        let cfg = FlatConfig::parse(
            "prompt_dist.kind = lognormal\nprompt_dist.mu = 7.0\nprompt_dist.sigma = 0.5\n\
             prompt_dist.min = 2\nprompt_dist.max = 4000\n\
             output_dist.kind = bimodal-lognormal\noutput_dist.mu = 3\noutput_dist.sigma = 0.5\n\
             output_dist.weight2 = 0.3\noutput_dist.mu2 = 5\noutput_dist.sigma2 = 0.4\n",
        )
        .unwrap();
        let mut w = Workload::coding();
        w.apply_config(&cfg).unwrap();
        assert_eq!(w.prompt.max_tokens, 4000);
        assert!(matches!(w.output.kind, DistKind::BimodalLogNormal { weight2, .. } if weight2 == 0.3));
        assert!(cfg.reject_unknown().is_ok());
    }

    proptest! {
        #[test]
        fn samples_respect_clamp(seed in any::<u64>(), min in 1u32..50, span in 0u32..500, sigma in 0.0f64..3.0) {
            let d = SizeDistribution::new(DistKind::LogNormal { mu: 4.0, sigma }, min, min + span).unwrap();
            let mut rng = SimRng::new(seed);
            for _ in 0..50 {
                let (v, _) = d.sample(&mut rng);
                prop_assert!(v >= min && v <= min + span);
            }
        }

        #[test]
        fn csv_round_trip(seed in any::<u64>(), rate in 0.5f64..20.0) {
            let w = Workload::conversation();
            let t = generate_trace(&w.prompt, &w.output, rate, 5.0, seed).unwrap();
            prop_assume!(!t.is_empty());
            let text = write_trace(&t);
            let back = parse_trace(text.as_bytes()).unwrap();
            prop_assert_eq!(write_trace(&back), text);
            prop_assert_eq!(back.len(), t.len());
        }
    }
}
