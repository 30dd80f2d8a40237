//! Deterministic discrete-event simulation of one cluster over one trace.
//!
//! Events are ordered by `(time, seq)`. Arrivals take sequence numbers
//! `0..n` in trace order; every other event is numbered as it is scheduled.

use std::cmp::Ordering;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::cluster::{Cluster, ClusterConfig, PoolTransition, RoleChange};
use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::machine::{
    ms_to_nanos, nanos_to_ms, nanos_to_secs, secs_to_nanos, BatchKind, MachineEvent, Nanos, Pool, Role, Task,
};
use crate::metrics::{
    reference_latencies, MachineReport, MetricsReport, ReferenceLatencies, RequestRecord, SloTable, TbtMode,
    SLO_PERCENTILES,
};
use crate::perfmodel::{MachineType, PerfModelSet};
use crate::trace::Trace;
use crate::transfer::{plan_transfer, TransferMode};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Abort once the clock passes the last arrival by this much.
    pub horizon_extra_s: f64,
    pub tbt_mode: TbtMode,
    /// Requests arriving before this are simulated but not measured.
    pub trim_s: f64,
    pub slo: SloTable,
    pub record_log: bool,
    /// Stop with [`Error::Runtime`] as soon as enough measured requests have
    /// waited past their TTFT or E2E limit that some percentile must fail.
    pub stop_on_slo_miss: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            horizon_extra_s: 600.0,
            tbt_mode: TbtMode::Pooled,
            trim_s: 0.0,
            slo: SloTable::default(),
            record_log: false,
            stop_on_slo_miss: false,
        }
    }
}

impl RunOptions {
    /// Reads `sim.horizon_extra_s`, `sim.trim_s`, `metrics.tbt_mode` and `slo.*`.
    pub fn from_config(cfg: &FlatConfig) -> Result<Self> {
        let mut o = Self::default();
        o.horizon_extra_s = cfg.get_or("sim.horizon_extra_s", o.horizon_extra_s)?;
        o.trim_s = cfg.get_or("sim.trim_s", o.trim_s)?;
        if let Some(m) = cfg.get::<TbtMode>("metrics.tbt_mode")? {
            o.tbt_mode = m;
        }
        o.slo = SloTable::from_config(cfg)?;
        if !(o.horizon_extra_s > 0.0) || !(o.trim_s >= 0.0) {
            return Err(Error::validation("horizon must be positive and trim non-negative"));
        }
        Ok(o)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    RequestArrival { request: usize },
    IterationComplete { machine: usize },
    TransferComplete { request: usize, from: usize, to: usize },
    PoolMaintenance,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::RequestArrival { .. } => "request_arrival",
            EventKind::IterationComplete { .. } => "iteration_complete",
            EventKind::TransferComplete { .. } => "transfer_complete",
            EventKind::PoolMaintenance => "pool_maintenance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Nanos,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// One line of the event log. Records caused by the same event share its
/// time and sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub time: Nanos,
    pub seq: u64,
    pub entry: LogEntry,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogEntry {
    Route {
        request: u64,
        prompt_tokens: u32,
        prompt_machine: usize,
        token_machine: usize,
    },
    BatchStart {
        machine: usize,
        kind: BatchKind,
        prompts: Vec<u64>,
        prompt_tokens: u32,
        tokens: Vec<u64>,
        admitted: Vec<u64>,
        preempted: Vec<u64>,
        duration: Nanos,
        memory_used: u64,
        memory_capacity: u64,
    },
    IterationComplete {
        machine: usize,
    },
    PromptDone {
        request: u64,
        machine: usize,
    },
    TransferStart {
        request: u64,
        from: usize,
        to: usize,
        mode: TransferMode,
        visible_ms: f64,
    },
    TransferComplete {
        request: u64,
        from: usize,
        to: usize,
    },
    TokenReady {
        request: u64,
        machine: usize,
    },
    RequestDone {
        request: u64,
        machine: usize,
    },
    PoolChange {
        machine: usize,
        from: Pool,
        to: Pool,
    },
    RoleChange {
        machine: usize,
        from: Role,
        to: Role,
    },
    PoolMaintenance,
}

fn ids(v: &[u64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x}");
    }
    s
}

impl LogEntry {
    pub fn kind(&self) -> &'static str {
        match self {
            LogEntry::Route { .. } => "request_arrival",
            LogEntry::BatchStart { .. } => "batch_start",
            LogEntry::IterationComplete { .. } => "iteration_complete",
            LogEntry::PromptDone { .. } => "prompt_done",
            LogEntry::TransferStart { .. } => "transfer_start",
            LogEntry::TransferComplete { .. } => "transfer_complete",
            LogEntry::TokenReady { .. } => "token_ready",
            LogEntry::RequestDone { .. } => "request_done",
            LogEntry::PoolChange { .. } => "pool_change",
            LogEntry::RoleChange { .. } => "role_change",
            LogEntry::PoolMaintenance => "pool_maintenance",
        }
    }

    pub fn payload(&self) -> String {
        match self {
            LogEntry::Route {
                request,
                prompt_tokens,
                prompt_machine,
                token_machine,
            } => format!("request={request};prompt_tokens={prompt_tokens};prompt_machine={prompt_machine};token_machine={token_machine}"),
            LogEntry::BatchStart {
                machine,
                kind,
                prompts,
                prompt_tokens,
                tokens,
                admitted,
                preempted,
                duration,
                memory_used,
                memory_capacity,
            } => format!(
                "machine={machine};batch={};prompts={};prompt_tokens={prompt_tokens};tokens={};admitted={};preempted={};duration_ns={duration};memory={memory_used}/{memory_capacity}",
                kind.as_str(),
                ids(prompts),
                ids(tokens),
                ids(admitted),
                ids(preempted)
            ),
            LogEntry::IterationComplete { machine } => format!("machine={machine}"),
            LogEntry::PromptDone { request, machine } => format!("request={request};machine={machine}"),
            LogEntry::TransferStart {
                request,
                from,
                to,
                mode,
                visible_ms,
            } => format!(
                "request={request};from={from};to={to};mode={};visible_ms={visible_ms:.6}",
                mode.as_str()
            ),
            LogEntry::TransferComplete { request, from, to } => format!("request={request};from={from};to={to}"),
            LogEntry::TokenReady { request, machine } => format!("request={request};machine={machine}"),
            LogEntry::RequestDone { request, machine } => format!("request={request};machine={machine}"),
            LogEntry::PoolChange { machine, from, to } => {
                format!("machine={machine};from={};to={}", from.as_str(), to.as_str())
            }
            LogEntry::RoleChange { machine, from, to } => {
                format!("machine={machine};from={};to={}", from.as_str(), to.as_str())
            }
            LogEntry::PoolMaintenance => String::new(),
        }
    }
}

pub const EVENT_LOG_HEADER: &str = "time_s,seq,kind,payload";

pub fn write_event_log(log: &[LogRecord]) -> String {
    let mut out = String::with_capacity(80 * (log.len() + 1));
    out.push_str(EVENT_LOG_HEADER);
    out.push('\n');
    for r in log {
        let _ = writeln!(
            out,
            "{:.9},{},{},{}",
            nanos_to_secs(r.time),
            r.seq,
            r.entry.kind(),
            r.entry.payload()
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub report: MetricsReport,
    pub log: Vec<LogRecord>,
    pub events_processed: u64,
}

struct Engine<'a> {
    cluster: Cluster,
    trace: &'a Trace,
    arrivals: Vec<Nanos>,
    next_arrival: usize,
    heap: BinaryHeap<Event>,
    next_seq: u64,
    now: Nanos,
    records: Vec<RequestRecord>,
    outstanding: usize,
    transfers: u64,
    log: Option<Vec<LogRecord>>,
    current_seq: u64,
    touched: Vec<usize>,
    events_processed: u64,
    watch: Option<SloWatch>,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: Nanos, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { time, seq, kind });
    }

    fn pop(&mut self) -> Option<Event> {
        let arrival = self.arrivals.get(self.next_arrival).map(|&t| Event {
            time: t,
            seq: self.next_arrival as u64,
            kind: EventKind::RequestArrival {
                request: self.next_arrival,
            },
        });
        match (arrival, self.heap.peek()) {
            (Some(a), Some(h)) if (h.time, h.seq) < (a.time, a.seq) => self.heap.pop(),
            (Some(a), _) => {
                self.next_arrival += 1;
                Some(a)
            }
            (None, _) => self.heap.pop(),
        }
    }

    fn log(&mut self, entry: LogEntry) {
        if let Some(log) = &mut self.log {
            log.push(LogRecord {
                time: self.now,
                seq: self.current_seq,
                entry,
            });
        }
    }

    fn touch(&mut self, machine: usize) {
        if !self.touched.contains(&machine) {
            self.touched.push(machine);
        }
    }

    fn log_transitions(&mut self, transitions: Vec<PoolTransition>) {
        for t in transitions {
            self.log(LogEntry::PoolChange {
                machine: t.machine,
                from: t.from,
                to: t.to,
            });
        }
    }

    fn log_role_changes(&mut self, changes: Vec<RoleChange>) {
        for c in changes {
            self.log(LogEntry::RoleChange {
                machine: c.machine,
                from: c.from,
                to: c.to,
            });
            if c.pool_from != c.pool_to {
                self.log(LogEntry::PoolChange {
                    machine: c.machine,
                    from: c.pool_from,
                    to: c.pool_to,
                });
            }
        }
    }

    fn on_arrival(&mut self, idx: usize) -> Result<()> {
        let request = &self.trace.requests[idx];
        let (decision, transitions) = self.cluster.route(request, self.now)?;
        let rec = &mut self.records[idx];
        rec.prompt_machine = decision.prompt_machine;
        rec.token_machine = decision.token_machine;
        self.log(LogEntry::Route {
            request: request.id,
            prompt_tokens: request.prompt_tokens,
            prompt_machine: decision.prompt_machine,
            token_machine: decision.token_machine,
        });
        self.log_transitions(transitions);
        self.touch(decision.prompt_machine);
        self.touch(decision.token_machine);
        Ok(())
    }

    fn on_iteration_complete(&mut self, m: usize) -> Result<()> {
        let iteration_ms = self.cluster.machines[m]
            .running()
            .map(|b| b.iteration_ms)
            .ok_or_else(|| Error::Internal(format!("machine {m} completed without a batch")))?;
        let events = self.cluster.machines[m].complete_iteration(self.now)?;
        self.log(LogEntry::IterationComplete { machine: m });
        self.touch(m);
        for ev in events {
            match ev {
                MachineEvent::PromptFinished { task } => self.on_prompt_finished(m, task, iteration_ms)?,
                MachineEvent::TokenEmitted { request, .. } => {
                    self.records[request as usize].emissions.push(self.now);
                }
                MachineEvent::RequestFinished { request } => {
                    self.finish(request, m);
                }
            }
        }
        // preemption counts live on the resident tasks
        for t in self.cluster.machines[m].active_tasks() {
            let rec = &mut self.records[t.request as usize];
            rec.preempt_count = rec.preempt_count.max(t.preempt_count);
        }
        Ok(())
    }

    fn finish(&mut self, request: u64, machine: usize) {
        self.outstanding -= 1;
        self.log(LogEntry::RequestDone { request, machine });
    }

    fn on_prompt_finished(&mut self, m: usize, task: Task, iteration_ms: f64) -> Result<()> {
        let idx = task.request as usize;
        self.records[idx].emissions.push(self.now);
        self.log(LogEntry::PromptDone {
            request: task.request,
            machine: m,
        });
        let prompt_bytes = self.cluster.machines[m].model.kv_cache_bytes(task.prompt_tokens as u64);
        let target = self.records[idx].token_machine;
        if task.output_tokens <= 1 {
            self.cluster.machines[m].release(prompt_bytes)?;
            if !self.cluster.machines[target].cancel_token(task.request) {
                return Err(Error::Internal(format!(
                    "request {} had no token assignment on machine {target}",
                    task.request
                )));
            }
            self.touch(target);
            self.finish(task.request, target);
            return Ok(());
        }
        if target == m {
            self.cluster.machines[m].release(prompt_bytes)?;
            self.cluster.machines[m].enqueue(
                Task::token(task.request, task.prompt_tokens, task.output_tokens, self.now),
                self.now,
            )?;
            self.log(LogEntry::TokenReady {
                request: task.request,
                machine: m,
            });
            return Ok(());
        }
        let from_type = self.cluster.machines[m].spec.machine_type;
        let to_type = self.cluster.machines[target].spec.machine_type;
        let link = self.cluster.config.transfer_config(from_type, to_type);
        let plan = plan_transfer(task.prompt_tokens, prompt_bytes, iteration_ms, &link);
        self.records[idx].transfer_visible_ms = plan.visible_latency_ms;
        self.transfers += 1;
        self.log(LogEntry::TransferStart {
            request: task.request,
            from: m,
            to: target,
            mode: plan.mode,
            visible_ms: plan.visible_latency_ms,
        });
        let done = self.now + ms_to_nanos(plan.visible_latency_ms);
        self.push(
            done,
            EventKind::TransferComplete {
                request: idx,
                from: m,
                to: target,
            },
        );
        Ok(())
    }

    fn on_transfer_complete(&mut self, idx: usize, from: usize, to: usize) -> Result<()> {
        let req = &self.trace.requests[idx];
        let bytes = self.cluster.machines[from]
            .model
            .kv_cache_bytes(req.prompt_tokens as u64);
        self.cluster.machines[from].release(bytes)?;
        self.cluster.machines[to].enqueue(
            Task::token(req.id, req.prompt_tokens, req.output_tokens, self.now),
            self.now,
        )?;
        self.log(LogEntry::TransferComplete {
            request: req.id,
            from,
            to,
        });
        self.log(LogEntry::TokenReady {
            request: req.id,
            machine: to,
        });
        self.touch(from);
        self.touch(to);
        Ok(())
    }

    fn on_maintenance(&mut self) -> Result<()> {
        self.log(LogEntry::PoolMaintenance);
        let changes = self.cluster.repurpose(self.now);
        for c in &changes {
            self.touched.push(c.machine);
        }
        self.log_role_changes(changes);
        if self.outstanding > 0 || self.next_arrival < self.arrivals.len() {
            if let Some(w) = self.cluster.config.repurpose_window {
                self.push(self.now + w, EventKind::PoolMaintenance);
            }
        }
        Ok(())
    }

    /// Pool returns, then new batches on idle touched machines.
    fn settle(&mut self) -> Result<()> {
        let touched = std::mem::take(&mut self.touched);
        let transitions = self.cluster.update_pools(&touched, self.now);
        self.log_transitions(transitions);
        let sched = self.cluster.config.scheduler;
        for &m in &touched {
            let machine = &mut self.cluster.machines[m];
            if machine.is_busy() {
                continue;
            }
            if let Some(plan) = machine.form_batch(self.now, &sched)? {
                let memory_used = machine.memory_used();
                let memory_capacity = machine.memory_capacity();
                self.push(
                    self.now + plan.iteration_time,
                    EventKind::IterationComplete { machine: m },
                );
                if self.log.is_some() {
                    self.log(LogEntry::BatchStart {
                        machine: m,
                        kind: plan.kind,
                        prompts: plan.prompt_requests,
                        prompt_tokens: plan.prompt_tokens,
                        tokens: plan.token_requests,
                        admitted: plan.admitted_tokens,
                        preempted: plan.preempted,
                        duration: plan.iteration_time,
                        memory_used,
                        memory_capacity,
                    });
                }
            }
        }
        for &m in &touched {
            let machine = &self.cluster.machines[m];
            if machine.memory_used() > machine.memory_capacity() {
                return Err(Error::Internal(format!("machine {m} exceeded its memory capacity")));
            }
            self.cluster.report(m, self.now);
        }
        self.touched = touched;
        self.touched.clear();
        Ok(())
    }

    fn run(&mut self, horizon: Nanos) -> Result<()> {
        if let Some(w) = self.cluster.config.repurpose_window {
            if !self.arrivals.is_empty() {
                self.push(w, EventKind::PoolMaintenance);
            }
        }
        while let Some(ev) = self.pop() {
            // maintenance after the last request must not stretch the run
            if ev.kind == EventKind::PoolMaintenance
                && self.outstanding == 0
                && self.next_arrival >= self.arrivals.len()
            {
                continue;
            }
            if ev.time < self.now {
                return Err(Error::Internal("clock moved backwards".into()));
            }
            if ev.time > horizon {
                return Err(Error::Runtime(format!(
                    "simulation passed its horizon of {:.1} s with {} requests outstanding ({} arrivals pending)",
                    nanos_to_secs(horizon),
                    self.outstanding,
                    self.arrivals.len() - self.next_arrival
                )));
            }
            self.now = ev.time;
            self.current_seq = ev.seq;
            self.events_processed += 1;
            match ev.kind {
                EventKind::RequestArrival { request } => self.on_arrival(request)?,
                EventKind::IterationComplete { machine } => self.on_iteration_complete(machine)?,
                EventKind::TransferComplete { request, from, to } => self.on_transfer_complete(request, from, to)?,
                EventKind::PoolMaintenance => self.on_maintenance()?,
            }
            self.settle()?;
            if let Some(w) = &mut self.watch {
                w.check(self.now, &self.records)?;
            }
        }
        if self.outstanding != 0 {
            return Err(Error::Runtime(format!(
                "simulation stalled with {} requests outstanding",
                self.outstanding
            )));
        }
        self.cluster.check_pools()
    }
}

/// Counts, for each TTFT and E2E percentile, the measured requests already
/// certain to exceed their limit. A request still waiting at `now` ends with a
/// latency of at least `now - arrival`, so once that alone is over the limit
/// it is a miss. Enough misses make the percentile fail whatever comes later.
struct SloWatch {
    rows: Vec<WatchRow>,
}

struct WatchRow {
    e2e: bool,
    limit: f64,
    /// Reference latency in ms by request index.
    reference: Vec<f64>,
    /// Misses at which the percentile fails.
    budget: usize,
    misses: usize,
    /// (earliest time the request can be a miss, request index)
    due: BinaryHeap<Reverse<(Nanos, usize)>>,
}

impl SloWatch {
    fn new(records: &[RequestRecord], refs: &[ReferenceLatencies], measured: &[usize], slo: &SloTable) -> Self {
        let n = measured.len();
        let mut rows = Vec::new();
        if n == 0 {
            return Self { rows };
        }
        for (e2e, limits) in [(false, slo.ttft), (true, slo.e2e)] {
            let reference: Vec<f64> = refs.iter().map(|r| if e2e { r.e2e } else { r.ttft }).collect();
            for (&p, &k) in SLO_PERCENTILES.iter().zip(&limits) {
                let rank = ((p * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
                let due = measured
                    .iter()
                    .filter(|&&i| reference[i] > 0.0)
                    .map(|&i| Reverse((records[i].arrival + ms_to_nanos(k * reference[i]), i)))
                    .collect();
                rows.push(WatchRow {
                    e2e,
                    limit: k,
                    reference: reference.clone(),
                    budget: n - rank + 1,
                    misses: 0,
                    due,
                });
            }
        }
        Self { rows }
    }

    fn check(&mut self, now: Nanos, records: &[RequestRecord]) -> Result<()> {
        for row in &mut self.rows {
            while let Some(&Reverse((at, i))) = row.due.peek() {
                if at > now {
                    break;
                }
                row.due.pop();
                let r = &records[i];
                let settled = if row.e2e {
                    r.is_complete()
                } else {
                    !r.emissions.is_empty()
                };
                if settled {
                    continue;
                }
                // the same comparison the report makes, so rounding cannot miscount
                if nanos_to_ms(now - r.arrival) / row.reference[i] > row.limit {
                    row.misses += 1;
                    if row.misses >= row.budget {
                        return Err(Error::Runtime(format!(
                            "{} SLO at {}x is already lost at {:.3} s",
                            if row.e2e { "E2E" } else { "TTFT" },
                            row.limit,
                            nanos_to_secs(now)
                        )));
                    }
                } else {
                    row.due.push(Reverse((now + 1, i)));
                }
            }
        }
        Ok(())
    }
}

/// Simulate `trace` on the cluster described by `config`. The run is fully
/// deterministic for fixed inputs; randomness enters only through trace
/// synthesis.
pub fn run(config: &ClusterConfig, perf: &PerfModelSet, trace: &Trace, options: &RunOptions) -> Result<SimOutput> {
    let cluster = Cluster::new(config.clone(), perf)?;
    for m in &cluster.machines {
        if m.model.llm != perf.llm {
            return Err(Error::config("performance models mix LLMs"));
        }
    }
    let arrivals: Vec<Nanos> = trace.requests.iter().map(|r| secs_to_nanos(r.arrival)).collect();
    let records: Vec<RequestRecord> = trace
        .requests
        .iter()
        .zip(&arrivals)
        .map(|(r, &a)| RequestRecord {
            id: r.id,
            prompt_tokens: r.prompt_tokens,
            output_tokens: r.output_tokens,
            arrival: a,
            emissions: Vec::with_capacity(r.output_tokens as usize),
            prompt_machine: 0,
            token_machine: 0,
            transfer_visible_ms: 0.0,
            preempt_count: 0,
        })
        .collect();
    for (i, r) in trace.requests.iter().enumerate() {
        if r.id != i as u64 {
            return Err(Error::validation("request ids must equal their trace position"));
        }
    }
    let last_arrival = arrivals.last().copied().unwrap_or(0);
    let horizon = last_arrival.max(secs_to_nanos(trace.duration)) + secs_to_nanos(options.horizon_extra_s);
    let n = trace.requests.len();
    let references = match perf.models.get(&MachineType::A100) {
        Some(a100) => Some(
            trace
                .requests
                .iter()
                .map(|r| reference_latencies(r, a100))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let trim = secs_to_nanos(options.trim_s);
    let measured: Vec<usize> = (0..n).filter(|&i| records[i].arrival >= trim).collect();
    let watch = match (&references, options.stop_on_slo_miss) {
        (Some(refs), true) => Some(SloWatch::new(&records, refs, &measured, &options.slo)),
        _ => None,
    };
    let mut engine = Engine {
        cluster,
        trace,
        arrivals,
        next_arrival: 0,
        heap: BinaryHeap::new(),
        next_seq: n as u64,
        now: 0,
        records,
        outstanding: n,
        transfers: 0,
        log: options.record_log.then(Vec::new),
        current_seq: 0,
        touched: Vec::with_capacity(4),
        events_processed: 0,
        watch,
    };
    engine.run(horizon)?;

    for r in &engine.records {
        if !r.is_complete() {
            return Err(Error::Internal(format!("request {} did not emit every token", r.id)));
        }
    }
    let end_time = engine.now;
    let machines: Vec<MachineReport> = engine
        .cluster
        .machines
        .iter()
        .map(|m| MachineReport {
            id: m.id,
            machine_type: m.spec.machine_type,
            home_role: m.home_role,
            busy: m.stats.busy,
            utilization: if end_time == 0 {
                0.0
            } else {
                m.stats.busy as f64 / end_time as f64
            },
            iterations: m.stats.iterations,
            mixed_iterations: m.stats.mixed_iterations,
            batched_token_time: m.stats.batched_token_time.clone(),
            peak_memory: m.stats.peak_memory,
        })
        .collect();

    let report = MetricsReport::build(
        config.design.name().to_string(),
        config.prompt_machines,
        config.token_machines,
        engine.records,
        &measured,
        references.as_deref(),
        &options.slo,
        options.tbt_mode,
        end_time,
        engine.transfers,
        machines,
    );
    Ok(SimOutput {
        report,
        log: engine.log.unwrap_or_default(),
        events_processed: engine.events_processed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Design;
    use crate::trace::Request;
    use crate::transfer::TransferConfig;

    fn perf() -> PerfModelSet {
        PerfModelSet::preset("llama2-70b").unwrap()
    }

    fn one(prompt: u32, output: u32) -> Trace {
        Trace::from_requests(vec![Request {
            id: 0,
            arrival: 0.0,
            prompt_tokens: prompt,
            output_tokens: output,
        }])
        .unwrap()
    }

    fn logged() -> RunOptions {
        RunOptions {
            record_log: true,
            ..RunOptions::default()
        }
    }

    #[test]
    fn heap_orders_by_time_then_seq() {
        let mut h = BinaryHeap::new();
        for (t, s) in [(5, 2), (3, 9), (5, 1), (3, 4)] {
            h.push(Event {
                time: t,
                seq: s,
                kind: EventKind::PoolMaintenance,
            });
        }
        let order: Vec<(u64, u64)> = std::iter::from_fn(|| h.pop().map(|e| (e.time, e.seq))).collect();
        assert_eq!(order, vec![(3, 4), (3, 9), (5, 1), (5, 2)]);
    }

    #[test]
    fn single_request_on_baseline_h100() {
        let cfg = ClusterConfig::new(Design::BaselineH100, 1, 0);
        let out = run(&cfg, &perf(), &one(1500, 13), &logged()).unwrap();
        let r = &out.report.requests[0];
        let h = perf().get(MachineType::H100).unwrap().clone();
        let ttft = ms_to_nanos(h.prompt_time(1500).unwrap());
        let tbt = ms_to_nanos(h.token_iter_time(1).unwrap());
        assert_eq!(r.ttft(), ttft);
        assert_eq!(r.e2e(), ttft + 12 * tbt);
        assert_eq!(ttft, 95_000_000);
        assert_eq!(out.report.transfers, 0);
    }

    #[test]
    fn pending_maintenance_does_not_extend_the_run() {
        let mut cfg = ClusterConfig::new(Design::SplitwiseHH, 1, 1);
        cfg.repurpose_window = Some(secs_to_nanos(300.0));
        let out = run(&cfg, &perf(), &one(1500, 13), &RunOptions::default()).unwrap();
        assert_eq!(out.report.end_time, out.report.requests[0].completion());
        let short = RunOptions {
            horizon_extra_s: 1.0,
            ..RunOptions::default()
        };
        assert!(run(&cfg, &perf(), &one(1500, 13), &short).is_ok());
    }

    #[test]
    fn split_pair_adds_visible_transfer_to_second_gap() {
        let cfg = ClusterConfig::new(Design::SplitwiseHH, 1, 1);
        let out = run(&cfg, &perf(), &one(1500, 13), &logged()).unwrap();
        let base = run(
            &ClusterConfig::new(Design::BaselineH100, 1, 0),
            &perf(),
            &one(1500, 13),
            &logged(),
        )
        .unwrap();
        let r = &out.report.requests[0];
        let b = &base.report.requests[0];
        assert_eq!(r.ttft(), b.ttft());
        let link = TransferConfig::h100_class(80);
        let h = perf().get(MachineType::H100).unwrap().clone();
        let plan = plan_transfer(1500, h.kv_cache_bytes(1500), 95.0, &link);
        assert_eq!(r.e2e(), b.e2e() + ms_to_nanos(plan.visible_latency_ms));
        assert_eq!((r.prompt_machine, r.token_machine), (0, 1));
        assert_eq!(out.report.transfers, 1);
        assert!(out
            .log
            .iter()
            .any(|l| matches!(l.entry, LogEntry::TransferStart { .. })));
    }

    #[test]
    fn empty_trace_yields_empty_report() {
        let cfg = ClusterConfig::new(Design::SplitwiseAA, 1, 1);
        let out = run(&cfg, &perf(), &Trace::empty(10.0), &logged()).unwrap();
        assert!(out.report.requests.is_empty());
        assert!(out.log.is_empty());
        assert_eq!(out.events_processed, 0);
    }

    #[test]
    fn single_token_request_finishes_at_prompt() {
        let cfg = ClusterConfig::new(Design::SplitwiseHH, 1, 1);
        let out = run(&cfg, &perf(), &one(100, 1), &logged()).unwrap();
        let r = &out.report.requests[0];
        assert_eq!(r.ttft(), r.e2e());
        assert_eq!(out.report.transfers, 0);
    }

    #[test]
    fn missing_model_is_config_error() {
        let mut p = perf();
        p.models.remove(&MachineType::H100Cap);
        let cfg = ClusterConfig::new(Design::SplitwiseHHcap, 1, 1);
        let err = run(&cfg, &p, &one(100, 2), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("H100cap")));
    }

    #[test]
    fn horizon_exceeded_is_runtime_error() {
        let cfg = ClusterConfig::new(Design::BaselineA100, 1, 0);
        let opts = RunOptions {
            horizon_extra_s: 0.5,
            ..RunOptions::default()
        };
        let err = run(&cfg, &perf(), &one(1500, 200), &opts).unwrap_err();
        assert!(matches!(err, Error::Runtime(_)));
    }

    #[test]
    fn unloaded_a100_meets_every_slo() {
        let cfg = ClusterConfig::new(Design::BaselineA100, 1, 0);
        let out = run(&cfg, &perf(), &one(1500, 13), &RunOptions::default()).unwrap();
        let slo = out.report.slo.as_ref().unwrap();
        assert!(slo.pass);
        for row in &slo.rows {
            assert!((row.ratio.unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn log_lines_render() {
        let cfg = ClusterConfig::new(Design::SplitwiseHH, 1, 1);
        let out = run(&cfg, &perf(), &one(600, 3), &logged()).unwrap();
        let text = write_event_log(&out.log);
        assert!(text.starts_with(EVENT_LOG_HEADER));
        assert!(text.contains("request_arrival"));
        assert!(text.contains("transfer_complete"));
        assert!(text.contains("request_done"));
    }
}
