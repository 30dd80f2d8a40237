//! Helpers shared by the integration test targets. The routing oracle here
//! works only from the textual event log and the cluster shape, never from
//! simulator internals.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use splitsim_core::machine::Nanos;
use splitsim_core::metrics::RequestRecord;
use splitsim_core::trace::{generate_trace, Request, Trace, Workload};
use splitsim_core::Design;

#[derive(Debug, Clone)]
pub struct LogLine {
    pub time_s: String,
    pub seq: u64,
    pub kind: String,
    pub fields: HashMap<String, String>,
}

impl LogLine {
    pub fn num(&self, key: &str) -> u64 {
        self.fields
            .get(key)
            .unwrap_or_else(|| panic!("{} record without `{key}`", self.kind))
            .parse()
            .unwrap_or_else(|_| panic!("{} record with bad `{key}`", self.kind))
    }

    pub fn text(&self, key: &str) -> &str {
        self.fields
            .get(key)
            .unwrap_or_else(|| panic!("{} record without `{key}`", self.kind))
    }

    pub fn list(&self, key: &str) -> Vec<u64> {
        self.text(key).split_whitespace().map(|v| v.parse().unwrap()).collect()
    }
}

pub fn parse_log(text: &str) -> Vec<LogLine> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_s,seq,kind,payload"));
    lines
        .map(|l| {
            let mut parts = l.splitn(4, ',');
            let time_s = parts.next().unwrap().to_string();
            let seq = parts.next().unwrap().parse().unwrap();
            let kind = parts.next().unwrap().to_string();
            let payload = parts.next().unwrap_or("");
            let fields = payload
                .split(';')
                .filter(|kv| !kv.is_empty())
                .map(|kv| {
                    let (k, v) = kv.split_once('=').expect("k=v payload");
                    (k.to_string(), v.to_string())
                })
                .collect();
            LogLine {
                time_s,
                seq,
                kind,
                fields,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Prompt,
    Token,
    Mixed,
}

fn group(name: &str) -> Group {
    match name {
        "prompt" => Group::Prompt,
        "token" => Group::Token,
        "mixed" => Group::Mixed,
        other => panic!("unknown pool `{other}`"),
    }
}

/// Recompute every routing decision of a run by brute force from its log.
/// Returns the number of decisions checked, or a description of the first
/// mismatch.
pub fn replay_routing(
    log: &[LogLine],
    design: Design,
    prompt_count: usize,
    token_count: usize,
    threshold: u64,
) -> Result<usize, String> {
    let n = prompt_count + token_count;
    let baseline = design.is_baseline();
    let mut pools: Vec<Group> = (0..n)
        .map(|m| {
            if baseline {
                Group::Mixed
            } else if m < prompt_count {
                Group::Prompt
            } else {
                Group::Token
            }
        })
        .collect();
    // home role as the pool a machine returns to
    let mut home: Vec<Group> = (0..n)
        .map(|m| if m < prompt_count { Group::Prompt } else { Group::Token })
        .collect();
    let mut prompt_load = vec![0u64; n];
    let mut token_load = vec![0u64; n];
    let mut prompt_size: HashMap<u64, u64> = HashMap::new();
    let mut checked = 0;

    let pick = |pools: &[Group], load: &dyn Fn(usize) -> u64, want: Group| -> usize {
        let order: Vec<Group> = if baseline {
            vec![Group::Mixed]
        } else {
            let other = if want == Group::Prompt {
                Group::Token
            } else {
                Group::Prompt
            };
            vec![want, Group::Mixed, other]
        };
        let mut mins: Vec<(u64, usize)> = Vec::new();
        for g in order {
            let mut best: Option<(u64, usize)> = None;
            for m in 0..n {
                if pools[m] != g {
                    continue;
                }
                let c = (load(m), m);
                if best.is_none_or(|b| c < b) {
                    best = Some(c);
                }
            }
            if let Some(b) = best {
                mins.push(b);
            }
        }
        if let Some(&(_, m)) = mins.iter().find(|(q, _)| *q <= threshold) {
            return m;
        }
        let lowest = mins.iter().map(|(q, _)| *q).min().expect("some machine");
        mins.iter().find(|(q, _)| *q == lowest).unwrap().1
    };

    let mut i = 0;
    while i < log.len() {
        let rec = &log[i];
        i += 1;
        match rec.kind.as_str() {
            "request_arrival" => {
                let request = rec.num("request");
                let size = rec.num("prompt_tokens");
                let pm = rec.num("prompt_machine") as usize;
                let tm = rec.num("token_machine") as usize;
                let mut expected_changes = Vec::new();

                let load = |m: usize| prompt_load[m] + token_load[m];
                let want_p = pick(&pools, &load, Group::Prompt);
                if want_p != pm {
                    return Err(format!(
                        "request {request}: prompt machine {pm}, brute force picks {want_p} (loads {:?})",
                        (0..n).map(load).collect::<Vec<_>>()
                    ));
                }
                prompt_load[pm] += size;
                prompt_size.insert(request, size);
                if !baseline && pools[pm] == Group::Token {
                    pools[pm] = Group::Mixed;
                    expected_changes.push((pm, "token", "mixed"));
                }

                let want_t = if baseline {
                    pm
                } else {
                    let load = |m: usize| prompt_load[m] + token_load[m];
                    pick(&pools, &load, Group::Token)
                };
                if want_t != tm {
                    return Err(format!(
                        "request {request}: token machine {tm}, brute force picks {want_t} (loads {:?})",
                        (0..n).map(|m| prompt_load[m] + token_load[m]).collect::<Vec<_>>()
                    ));
                }
                token_load[tm] += 1;
                if !baseline && pools[tm] == Group::Prompt {
                    pools[tm] = Group::Mixed;
                    expected_changes.push((tm, "prompt", "mixed"));
                }
                for (m, from, to) in expected_changes {
                    let next = log.get(i).ok_or("log ends after a routing decision")?;
                    let ok = next.kind == "pool_change"
                        && next.seq == rec.seq
                        && next.num("machine") as usize == m
                        && next.text("from") == from
                        && next.text("to") == to;
                    if !ok {
                        return Err(format!(
                            "request {request}: expected machine {m} to move {from}->{to}, log has {next:?}"
                        ));
                    }
                    i += 1;
                }
                checked += 1;
            }
            "prompt_done" => {
                let size = prompt_size[&rec.num("request")];
                prompt_load[rec.num("machine") as usize] -= size;
            }
            "request_done" => {
                token_load[rec.num("machine") as usize] -= 1;
            }
            "pool_change" => {
                let m = rec.num("machine") as usize;
                if pools[m] != group(rec.text("from")) {
                    return Err(format!("machine {m} left pool {} it was not in", rec.text("from")));
                }
                pools[m] = group(rec.text("to"));
            }
            "role_change" => {
                let m = rec.num("machine") as usize;
                home[m] = group(rec.text("to"));
            }
            _ => {}
        }
    }
    for m in 0..n {
        if prompt_load[m] != 0 || token_load[m] != 0 {
            return Err(format!("machine {m} still holds work after the last event"));
        }
    }
    Ok(checked)
}

/// The first `count` requests of a synthetic trace at `rate`.
pub fn first_requests(workload: &Workload, rate: f64, count: usize, seed: u64) -> Trace {
    let duration = 4.0 * count as f64 / rate + 10.0;
    let full = generate_trace(&workload.prompt, &workload.output, rate, duration, seed).unwrap();
    assert!(full.len() >= count, "trace too short");
    let requests: Vec<Request> = full.requests.into_iter().take(count).collect();
    Trace::from_requests(requests).unwrap()
}

pub fn tbt_sum(r: &RequestRecord) -> Nanos {
    r.tbt_gaps().sum()
}
