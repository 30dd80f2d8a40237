use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{MachineType, PerfModel, PerfModelSet, PiecewiseLinear, ProfileSample};
use crate::error::{Error, Result};

pub const PROFILE_HEADER: &str = "machine_type,llm,phase,prompt_tokens,batch_size,time_ms,memory_bytes";

/// Parse profile rows. Prompt rows use `prompt_tokens` (total batch prompt
/// tokens) as the abscissa; token rows use `batch_size`.
pub fn parse_profile_csv(text: &str) -> Result<Vec<ProfileSample>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == PROFILE_HEADER => {}
        Some((i, _)) => {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected header `{PROFILE_HEADER}`"),
            })
        }
        None => return Err(Error::validation("empty profile")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |m: &str| Error::Parse {
            line: line_no,
            message: m.to_string(),
        };
        if f.len() != 7 {
            return Err(err("expected 7 fields"));
        }
        let machine_type: MachineType = f[0].parse().map_err(|_| err("unknown machine_type"))?;
        let prompt_tokens: u32 = f[3].parse().map_err(|_| err("invalid prompt_tokens"))?;
        let batch_size: u32 = f[4].parse().map_err(|_| err("invalid batch_size"))?;
        let time: f64 = f[5].parse().map_err(|_| err("invalid time_ms"))?;
        let memory: u64 = f[6].parse().map_err(|_| err("invalid memory_bytes"))?;
        let sample = match f[2] {
            "prompt" => ProfileSample {
                machine_type,
                llm: f[1].to_string(),
                batch_prompt_tokens: prompt_tokens,
                batch_token_count: 0,
                measured_time_ms: time,
                measured_memory: memory,
            },
            "token" => ProfileSample {
                machine_type,
                llm: f[1].to_string(),
                batch_prompt_tokens: 0,
                batch_token_count: batch_size,
                measured_time_ms: time,
                measured_memory: memory,
            },
            _ => return Err(err("phase must be `prompt` or `token`")),
        };
        sample
            .validate()
            .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
        out.push(sample);
    }
    Ok(out)
}

/// Export models as profile rows sampled at their knots, so fitting the
/// output reproduces the models.
pub fn write_profile_csv(set: &PerfModelSet) -> String {
    let mut out = String::new();
    out.push_str(PROFILE_HEADER);
    out.push('\n');
    for m in set.models.values() {
        for &(x, y) in m.prompt.knots() {
            let mem = m.weight_memory + m.kv_cache_bytes(x as u64);
            let _ = writeln!(out, "{},{},prompt,{},1,{},{}", m.machine_type, m.llm, x as u64, y, mem);
        }
        for &(x, y) in m.token.knots() {
            let _ = writeln!(
                out,
                "{},{},token,0,{},{},{}",
                m.machine_type, m.llm, x as u64, y, m.weight_memory
            );
        }
    }
    out
}

fn knots_to_string(f: &PiecewiseLinear) -> String {
    f.knots()
        .iter()
        .map(|(x, y)| format!("{x}:{y}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Text form of fitted models: one `[model]` block per machine type.
pub fn write_model_file(set: &PerfModelSet) -> String {
    let mut out = String::new();
    for m in set.models.values() {
        let _ = writeln!(out, "[model]");
        let _ = writeln!(out, "machine_type = {}", m.machine_type);
        let _ = writeln!(out, "llm = {}", m.llm);
        let _ = writeln!(out, "kv_bytes_per_token = {}", m.kv_bytes_per_token);
        let _ = writeln!(out, "weight_memory = {}", m.weight_memory);
        let _ = writeln!(out, "memory_capacity = {}", m.memory_capacity);
        let _ = writeln!(out, "max_token_batch = {}", m.max_token_batch);
        let _ = writeln!(out, "prompt_knots = {}", knots_to_string(&m.prompt));
        let _ = writeln!(out, "token_knots = {}", knots_to_string(&m.token));
        out.push('\n');
    }
    out
}

pub fn parse_model_file(text: &str) -> Result<PerfModelSet> {
    let mut blocks: Vec<(usize, BTreeMap<String, String>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == "[model]" {
            blocks.push((i + 1, BTreeMap::new()));
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected `key = value`".into(),
        })?;
        let block = blocks.last_mut().ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "key outside a [model] block".into(),
        })?;
        block.1.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut llm_name: Option<String> = None;
    let mut models = BTreeMap::new();
    for (line, kv) in blocks {
        let get = |k: &str| {
            kv.get(k).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing `{k}`"),
            })
        };
        let num = |k: &str| -> Result<u64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                line,
                message: format!("invalid `{k}`"),
            })
        };
        let knots = |k: &str| -> Result<PiecewiseLinear> {
            let pts = get(k)?
                .split(',')
                .map(|p| {
                    let (x, y) = p.split_once(':')?;
                    Some((x.trim().parse().ok()?, y.trim().parse().ok()?))
                })
                .collect::<Option<Vec<(f64, f64)>>>()
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid `{k}`"),
                })?;
            PiecewiseLinear::new(pts)
        };
        let machine_type: MachineType = get("machine_type")?.parse()?;
        let llm = get("llm")?.clone();
        match &llm_name {
            None => llm_name = Some(llm.clone()),
            Some(n) if *n != llm => {
                return Err(Error::validation("model file mixes LLMs"));
            }
            _ => {}
        }
        let model = PerfModel {
            machine_type,
            llm,
            prompt: knots("prompt_knots")?,
            token: knots("token_knots")?,
            kv_bytes_per_token: num("kv_bytes_per_token")?,
            weight_memory: num("weight_memory")?,
            memory_capacity: num("memory_capacity")?,
            max_token_batch: num("max_token_batch")? as u32,
        };
        if model.kv_bytes_per_token == 0 {
            return Err(Error::validation("kv_bytes_per_token must be positive"));
        }
        models.insert(machine_type, model);
    }
    let llm = llm_name.ok_or_else(|| Error::validation("model file has no [model] blocks"))?;
    Ok(PerfModelSet { llm, models })
}

#[cfg(test)]
mod tests {
    use super::super::fit_profiles;
    use super::*;

    #[test]
    fn preset_export_refits_to_same_models() {
        let set = PerfModelSet::preset("llama2-70b").unwrap();
        let csv = write_profile_csv(&set);
        let samples = parse_profile_csv(&csv).unwrap();
        let fitted = fit_profiles(&samples, 64, None).unwrap();
        let (refit, _) = &fitted["llama2-70b"];
        assert_eq!(refit, &set);
    }

    #[test]
    fn model_file_round_trip() {
        let set = PerfModelSet::preset("bloom-176b").unwrap();
        let text = write_model_file(&set);
        assert_eq!(parse_model_file(&text).unwrap(), set);
    }

    #[test]
    fn profile_errors() {
        assert!(parse_profile_csv("").is_err());
        let bad_phase = format!("{PROFILE_HEADER}\nH100,x,decode,1,1,1.0,1\n");
        assert!(matches!(
            parse_profile_csv(&bad_phase),
            Err(Error::Parse { line: 2, .. })
        ));
        let zero_time = format!("{PROFILE_HEADER}\nH100,x,prompt,10,1,0,1\n");
        assert!(parse_profile_csv(&zero_time).is_err());
    }
}
