//! Machine-level scheduling: per-machine queues, iteration batches, KV
//! memory reservations, and token preemption on mixed machines.
//!
//! Memory is reserved, not grown: a prompt reserves its prompt KV while it
//! runs (and until its cache has been shipped), and an admitted token task
//! reserves KV for its final context (`prompt + output` tokens) so that a
//! resident task can never run the machine out of memory later. Preempted
//! token tasks stay resident; preemption only frees compute in the batch.

use std::collections::{HashSet, VecDeque};

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::perfmodel::{MachineSpec, PerfModel};

/// Simulation time in integer nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

pub fn ms_to_nanos(ms: f64) -> Nanos {
    (ms * 1e6).round().max(0.0) as Nanos
}

pub fn secs_to_nanos(s: f64) -> Nanos {
    (s * NANOS_PER_SEC).round().max(0.0) as Nanos
}

pub fn nanos_to_ms(ns: Nanos) -> f64 {
    ns as f64 / 1e6
}

pub fn nanos_to_secs(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_SEC
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Prompt,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Prompt,
    Token,
}

impl Role {
    pub fn opposite(self) -> Role {
        match self {
            Role::Prompt => Role::Token,
            Role::Token => Role::Prompt,
        }
    }

    pub fn home_pool(self) -> Pool {
        match self {
            Role::Prompt => Pool::Prompt,
            Role::Token => Pool::Token,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Prompt => "prompt",
            Role::Token => "token",
        }
    }

    fn kind(self) -> TaskKind {
        match self {
            Role::Prompt => TaskKind::Prompt,
            Role::Token => TaskKind::Token,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pool {
    Prompt,
    Token,
    Mixed,
}

impl Pool {
    pub fn as_str(self) -> &'static str {
        match self {
            Pool::Prompt => "prompt",
            Pool::Token => "token",
            Pool::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixingRule {
    /// Mixed iteration costs prompt time plus token time.
    Sum,
    /// Mixed iteration costs the slower of the two components.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    /// Cap on total prompt tokens batched together.
    pub prompt_token_cap: u32,
    pub max_preemptions: u32,
    /// Priority gained per second of waiting.
    pub aging_rate: f64,
    /// CLS overflow threshold on a pool's shortest queue, in pending tokens.
    pub queue_threshold_tokens: u64,
    pub mixing_rule: MixingRule,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            prompt_token_cap: 2048,
            max_preemptions: 4,
            aging_rate: 1.0,
            queue_threshold_tokens: 4096,
            mixing_rule: MixingRule::Sum,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_token_cap == 0 || self.max_preemptions == 0 || self.queue_threshold_tokens == 0 {
            return Err(Error::validation("scheduler limits must be positive"));
        }
        if !(self.aging_rate > 0.0) {
            return Err(Error::validation("aging rate must be positive"));
        }
        Ok(())
    }

    /// Reads `mls.*` and `cls.queue_threshold_tokens`. When the cap is
    /// changed and no threshold is given, the threshold follows as twice
    /// the cap.
    pub fn from_config(cfg: &FlatConfig) -> Result<Self> {
        let mut c = Self::default();
        if let Some(cap) = cfg.get("mls.prompt_token_cap")? {
            c.prompt_token_cap = cap;
            c.queue_threshold_tokens = 2 * cap as u64;
        }
        c.max_preemptions = cfg.get_or("mls.max_preemptions", c.max_preemptions)?;
        c.aging_rate = cfg.get_or("mls.aging_rate", c.aging_rate)?;
        c.queue_threshold_tokens = cfg.get_or("cls.queue_threshold_tokens", c.queue_threshold_tokens)?;
        if let Some(rule) = cfg.raw("mls.mixing_rule") {
            c.mixing_rule = match rule {
                "sum" => MixingRule::Sum,
                "max" => MixingRule::Max,
                other => return Err(Error::config(format!("unknown mixing rule `{other}`"))),
            };
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub request: u64,
    pub kind: TaskKind,
    /// Prompt size for prompt tasks; current context length for token tasks.
    pub tokens: u32,
    pub enqueue_time: Nanos,
    pub preempt_count: u32,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
    /// Tokens of the request emitted so far (the prompt phase emits the first).
    pub emitted: u32,
    /// Set while the task sits out the current iteration.
    parked: bool,
}

impl Task {
    pub fn prompt(request: u64, prompt_tokens: u32, output_tokens: u32, now: Nanos) -> Self {
        Self {
            request,
            kind: TaskKind::Prompt,
            tokens: prompt_tokens,
            enqueue_time: now,
            preempt_count: 0,
            prompt_tokens,
            output_tokens,
            emitted: 0,
            parked: false,
        }
    }

    /// Token phase of a request whose first token has been produced.
    pub fn token(request: u64, prompt_tokens: u32, output_tokens: u32, now: Nanos) -> Self {
        Self {
            request,
            kind: TaskKind::Token,
            tokens: prompt_tokens + 1,
            enqueue_time: now,
            preempt_count: 0,
            prompt_tokens,
            output_tokens,
            emitted: 1,
            parked: false,
        }
    }

    /// Context length when the request completes; token admission reserves
    /// KV for this many tokens.
    pub fn final_context(&self) -> u64 {
        self.prompt_tokens as u64 + self.output_tokens as u64
    }
}

/// Base priority grows linearly with time since enqueue. A task that has
/// reached the preemption cap gets a bonus no aging can reach.
pub fn aging_priority(task: &Task, now: Nanos, config: &SchedulerConfig) -> f64 {
    let waited = now.saturating_sub(task.enqueue_time) as f64 / NANOS_PER_SEC;
    let aged = config.aging_rate * waited;
    if task.preempt_count >= config.max_preemptions {
        aged + PREEMPTION_CAP_BONUS
    } else {
        aged
    }
}

const PREEMPTION_CAP_BONUS: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchKind {
    PromptOnly,
    TokenOnly,
    Mixed,
}

impl BatchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchKind::PromptOnly => "prompt_only",
            BatchKind::TokenOnly => "token_only",
            BatchKind::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub kind: BatchKind,
    pub prompts: Vec<Task>,
    /// Token tasks computing this iteration.
    pub token_count: u32,
    pub started: Nanos,
    pub iteration_time: Nanos,
    pub iteration_ms: f64,
}

impl Batch {
    pub fn prompt_tokens(&self) -> u32 {
        self.prompts.iter().map(|t| t.tokens).sum()
    }

    /// Active tokens as counted for batching statistics: every prompt token
    /// plus one per generating token task.
    pub fn active_tokens(&self) -> u32 {
        self.prompt_tokens() + self.token_count
    }
}

/// What a batch looked like when it was formed, for logging and checks.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub kind: BatchKind,
    pub prompt_requests: Vec<u64>,
    pub prompt_tokens: u32,
    pub token_requests: Vec<u64>,
    pub admitted_tokens: Vec<u64>,
    pub preempted: Vec<u64>,
    pub iteration_time: Nanos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MachineEvent {
    /// Prompt phase done: the first token is out. The prompt's KV
    /// reservation is still held; the engine releases it once the cache has
    /// been handed off.
    PromptFinished {
        task: Task,
    },
    /// Token with 1-based index `index` emitted for `request`.
    TokenEmitted {
        request: u64,
        index: u32,
    },
    RequestFinished {
        request: u64,
    },
}

const HIST_BUCKETS: usize = 16;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MachineStats {
    pub busy: Nanos,
    pub iterations: u64,
    pub prompt_iterations: u64,
    pub mixed_iterations: u64,
    /// Busy time by active batched tokens, bucket `i` covering `[2^i, 2^(i+1))`.
    pub batched_token_time: Vec<Nanos>,
    pub peak_memory: u64,
}

#[derive(Debug, Clone)]
pub struct Machine {
    pub id: usize,
    pub spec: MachineSpec,
    pub model: PerfModel,
    pub home_role: Role,
    pub current_pool: Pool,
    /// Baseline machines batch both kinds and never change pools.
    pub fixed_mixed: bool,
    pending_prompts: VecDeque<Task>,
    /// Tokens of prompts not yet finished, queued or running.
    pending_prompt_tokens: u64,
    /// Token tasks whose KV has arrived, waiting for admission.
    ready_tokens: VecDeque<Task>,
    /// Requests assigned here whose token phase has not started yet.
    awaiting_tokens: HashSet<u64>,
    /// Admitted token tasks; each holds a KV reservation.
    active: Vec<Task>,
    running: Option<Batch>,
    memory_used: u64,
    queued: HashSet<(u64, TaskKind)>,
    pub stats: MachineStats,
}

impl Machine {
    pub fn new(id: usize, spec: MachineSpec, model: PerfModel, home_role: Role, fixed_mixed: bool) -> Self {
        let memory_used = model.weight_memory;
        Self {
            id,
            spec,
            model,
            home_role,
            current_pool: if fixed_mixed {
                Pool::Mixed
            } else {
                home_role.home_pool()
            },
            fixed_mixed,
            pending_prompts: VecDeque::new(),
            pending_prompt_tokens: 0,
            ready_tokens: VecDeque::new(),
            awaiting_tokens: HashSet::new(),
            active: Vec::new(),
            running: None,
            memory_used,
            queued: HashSet::new(),
            stats: MachineStats {
                batched_token_time: vec![0; HIST_BUCKETS],
                peak_memory: memory_used,
                ..Default::default()
            },
        }
    }

    pub fn memory_used(&self) -> u64 {
        self.memory_used
    }

    pub fn memory_capacity(&self) -> u64 {
        self.spec.memory_capacity.min(self.model.memory_capacity)
    }

    pub fn is_busy(&self) -> bool {
        self.running.is_some()
    }

    pub fn running(&self) -> Option<&Batch> {
        self.running.as_ref()
    }

    pub fn pending_prompt_count(&self) -> usize {
        self.pending_prompts.len()
    }

    pub fn active_token_count(&self) -> usize {
        self.active.len()
    }

    pub fn ready_token_count(&self) -> usize {
        self.ready_tokens.len()
    }

    pub fn awaiting_token_count(&self) -> usize {
        self.awaiting_tokens.len()
    }

    pub fn active_tasks(&self) -> &[Task] {
        &self.active
    }

    /// CLS queue length: tokens of prompts queued or running here plus one
    /// per token task that is assigned, queued, or running here. A prompt
    /// counts until its first token is out.
    pub fn pending_tokens(&self) -> u64 {
        self.pending_prompt_tokens + self.token_task_count() as u64
    }

    fn token_task_count(&self) -> usize {
        self.awaiting_tokens.len() + self.ready_tokens.len() + self.active.len()
    }

    fn prompt_task_count(&self) -> usize {
        self.pending_prompts.len() + self.running.as_ref().map_or(0, |b| b.prompts.len())
    }

    /// Whether any task of the kind opposite to the home role is pending or
    /// running.
    pub fn has_opposite_kind_work(&self) -> bool {
        match self.home_role.opposite().kind() {
            TaskKind::Prompt => self.prompt_task_count() > 0,
            TaskKind::Token => self.token_task_count() > 0,
        }
    }

    pub fn has_work(&self) -> bool {
        self.prompt_task_count() > 0 || self.token_task_count() > 0
    }

    fn note_opposite(&mut self, kind: TaskKind) {
        if !self.fixed_mixed && kind != self.home_role.kind() {
            self.current_pool = Pool::Mixed;
        }
    }

    /// Queue a task FIFO. Prompt tasks are queued at routing time; token
    /// tasks once their KV cache is present on this machine.
    pub fn enqueue(&mut self, task: Task, now: Nanos) -> Result<()> {
        let _ = now;
        if !self.queued.insert((task.request, task.kind)) {
            return Err(Error::Internal(format!(
                "machine {}: duplicate {:?} task for request {}",
                self.id, task.kind, task.request
            )));
        }
        self.note_opposite(task.kind);
        match task.kind {
            TaskKind::Prompt => {
                self.pending_prompt_tokens += task.tokens as u64;
                self.pending_prompts.push_back(task);
            }
            TaskKind::Token => {
                self.awaiting_tokens.remove(&task.request);
                self.ready_tokens.push_back(task);
            }
        }
        Ok(())
    }

    /// Record that `request`'s token phase will run here.
    pub fn assign_token(&mut self, request: u64) -> Result<()> {
        if !self.awaiting_tokens.insert(request) {
            return Err(Error::Internal(format!(
                "machine {}: request {request} assigned twice",
                self.id
            )));
        }
        self.note_opposite(TaskKind::Token);
        Ok(())
    }

    /// Drop an assignment whose token phase will never start (single-token
    /// requests finish with their prompt).
    pub fn cancel_token(&mut self, request: u64) -> bool {
        self.awaiting_tokens.remove(&request)
    }

    pub fn reserve(&mut self, bytes: u64) -> Result<()> {
        let next = self.memory_used + bytes;
        if next > self.memory_capacity() {
            return Err(Error::Internal(format!(
                "machine {}: reservation of {bytes} bytes exceeds capacity",
                self.id
            )));
        }
        self.memory_used = next;
        self.stats.peak_memory = self.stats.peak_memory.max(next);
        Ok(())
    }

    pub fn release(&mut self, bytes: u64) -> Result<()> {
        if bytes > self.memory_used - self.model.weight_memory {
            return Err(Error::Internal(format!(
                "machine {}: releasing {bytes} bytes more than reserved",
                self.id
            )));
        }
        self.memory_used -= bytes;
        Ok(())
    }

    fn fits(&self, bytes: u64) -> bool {
        self.memory_used + bytes <= self.memory_capacity()
    }

    /// Form the next iteration's batch. Returns `None` (idle) when nothing is
    /// admissible. Must only be called at an iteration boundary.
    pub fn form_batch(&mut self, now: Nanos, config: &SchedulerConfig) -> Result<Option<BatchPlan>> {
        if self.running.is_some() {
            return Err(Error::Internal(format!(
                "machine {}: form_batch called mid-iteration",
                self.id
            )));
        }

        // Admit ready token tasks FCFS while the batch limit and memory allow.
        let mut admitted_tokens = Vec::new();
        while let Some(front) = self.ready_tokens.front() {
            let bytes = self.model.kv_cache_bytes(front.final_context());
            if self.active.len() as u32 >= self.model.max_token_batch || !self.fits(bytes) {
                break;
            }
            let task = self.ready_tokens.pop_front().expect("front exists");
            self.reserve(bytes)?;
            admitted_tokens.push(task.request);
            self.active.push(task);
        }

        // Prompts FCFS: the head always goes if memory allows; followers only
        // while the batch stays within the prompt token cap.
        let mut prompts: Vec<Task> = Vec::new();
        let mut prompt_sum: u32 = 0;
        while let Some(front) = self.pending_prompts.front() {
            if !prompts.is_empty() && prompt_sum + front.tokens > config.prompt_token_cap {
                break;
            }
            let bytes = self.model.kv_cache_bytes(front.tokens as u64);
            if !self.fits(bytes) {
                break;
            }
            let task = self.pending_prompts.pop_front().expect("front exists");
            self.reserve(bytes)?;
            prompt_sum += task.tokens;
            prompts.push(task);
        }

        // Mixed batch: prompts take priority, token tasks fill whatever is
        // left of the cap and the excess is preempted for this iteration.
        let mut preempted = Vec::new();
        if !prompts.is_empty() && !self.active.is_empty() {
            let budget = config.prompt_token_cap.saturating_sub(prompt_sum) as usize;
            if self.active.len() > budget {
                let need = self.active.len() - budget;
                let mut candidates: Vec<(f64, u32, u64, usize)> = self
                    .active
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.preempt_count < config.max_preemptions)
                    .map(|(i, t)| (aging_priority(t, now, config), t.tokens, t.request, i))
                    .collect();
                // lowest priority first; ties by largest context, then request id
                candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
                for &(_, _, req, i) in candidates.iter().take(need) {
                    let t = &mut self.active[i];
                    t.parked = true;
                    t.preempt_count += 1;
                    preempted.push(req);
                }
            }
        }

        let token_requests: Vec<u64> = self.active.iter().filter(|t| !t.parked).map(|t| t.request).collect();
        let token_count = token_requests.len() as u32;
        if prompts.is_empty() && token_count == 0 {
            return Ok(None);
        }

        let prompt_ms = if prompts.is_empty() {
            None
        } else {
            Some(self.model.prompt_time(prompt_sum)?)
        };
        let token_ms = if token_count == 0 {
            None
        } else {
            Some(self.model.token_iter_time(token_count)?)
        };
        let (kind, iteration_ms) = match (prompt_ms, token_ms) {
            (Some(p), None) => (BatchKind::PromptOnly, p),
            (None, Some(t)) => (BatchKind::TokenOnly, t),
            (Some(p), Some(t)) => (
                BatchKind::Mixed,
                match config.mixing_rule {
                    MixingRule::Sum => p + t,
                    MixingRule::Max => p.max(t),
                },
            ),
            (None, None) => unreachable!("empty batch handled above"),
        };
        let iteration_time = ms_to_nanos(iteration_ms).max(1);
        let plan = BatchPlan {
            kind,
            prompt_requests: prompts.iter().map(|t| t.request).collect(),
            prompt_tokens: prompt_sum,
            token_requests,
            admitted_tokens,
            preempted,
            iteration_time,
        };
        self.running = Some(Batch {
            kind,
            prompts,
            token_count,
            started: now,
            iteration_time,
            iteration_ms,
        });
        Ok(Some(plan))
    }

    /// Finish the running iteration at `now`: prompts emit their first
    /// token, each computing token task emits one more, and finished
    /// requests release their reservation.
    pub fn complete_iteration(&mut self, now: Nanos) -> Result<Vec<MachineEvent>> {
        let batch = self
            .running
            .take()
            .ok_or_else(|| Error::Internal(format!("machine {}: no running batch to complete", self.id)))?;
        let elapsed = now.saturating_sub(batch.started);
        self.stats.busy += elapsed;
        self.stats.iterations += 1;
        match batch.kind {
            BatchKind::PromptOnly => self.stats.prompt_iterations += 1,
            BatchKind::Mixed => self.stats.mixed_iterations += 1,
            BatchKind::TokenOnly => {}
        }
        let bucket = (31 - batch.active_tokens().max(1).leading_zeros()) as usize;
        self.stats.batched_token_time[bucket.min(HIST_BUCKETS - 1)] += elapsed;

        let mut events = Vec::with_capacity(batch.prompts.len() + batch.token_count as usize);
        for task in batch.prompts {
            self.queued.remove(&(task.request, TaskKind::Prompt));
            self.pending_prompt_tokens -= task.tokens as u64;
            events.push(MachineEvent::PromptFinished { task });
        }

        let mut finished_bytes = 0u64;
        let kv_per_token = self.model.kv_bytes_per_token;
        let queued = &mut self.queued;
        self.active.retain_mut(|t| {
            if t.parked {
                t.parked = false;
                return true;
            }
            t.emitted += 1;
            t.tokens += 1;
            events.push(MachineEvent::TokenEmitted {
                request: t.request,
                index: t.emitted,
            });
            if t.emitted >= t.output_tokens {
                finished_bytes += t.final_context() * kv_per_token;
                queued.remove(&(t.request, TaskKind::Token));
                events.push(MachineEvent::RequestFinished { request: t.request });
                false
            } else {
                true
            }
        });
        self.release(finished_bytes)?;
        Ok(events)
    }

    /// Flip the home role (coarse re-purposing). Queues are untouched.
    pub fn set_home_role(&mut self, role: Role) {
        self.home_role = role;
        if self.current_pool != Pool::Mixed {
            self.current_pool = role.home_pool();
        }
        if self.has_opposite_kind_work() && !self.fixed_mixed {
            self.current_pool = Pool::Mixed;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perfmodel::{MachineType, PerfModelSet};

    fn h100() -> PerfModel {
        PerfModelSet::preset("llama2-70b").unwrap().models[&MachineType::H100].clone()
    }

    fn machine(role: Role) -> Machine {
        Machine::new(0, MachineSpec::standard(MachineType::H100), h100(), role, false)
    }

    fn cfg() -> SchedulerConfig {
        SchedulerConfig::default()
    }

    #[test]
    fn idle_machine_runs_enqueued_prompt() {
        let mut m = machine(Role::Prompt);
        assert!(m.form_batch(0, &cfg()).unwrap().is_none());
        m.enqueue(Task::prompt(1, 100, 5, 0), 0).unwrap();
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.prompt_requests, vec![1]);
        assert_eq!(plan.kind, BatchKind::PromptOnly);
    }

    #[test]
    fn prompt_on_token_machine_goes_mixed() {
        let mut m = machine(Role::Token);
        assert_eq!(m.current_pool, Pool::Token);
        m.enqueue(Task::prompt(1, 100, 5, 0), 0).unwrap();
        assert_eq!(m.current_pool, Pool::Mixed);
        assert!(m.has_opposite_kind_work());
    }

    #[test]
    fn duplicate_task_rejected() {
        let mut m = machine(Role::Prompt);
        m.enqueue(Task::prompt(1, 100, 5, 0), 0).unwrap();
        assert!(matches!(
            m.enqueue(Task::prompt(1, 100, 5, 0), 0),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn prompt_cap_limits_batch() {
        let mut m = machine(Role::Prompt);
        m.enqueue(Task::prompt(1, 1500, 5, 0), 0).unwrap();
        m.enqueue(Task::prompt(2, 1000, 5, 0), 0).unwrap();
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.prompt_requests, vec![1]);
        assert_eq!(m.pending_prompt_count(), 1);
        assert_eq!(m.pending_tokens(), 2500);
        m.complete_iteration(1).unwrap();
        assert_eq!(m.pending_tokens(), 1000);
    }

    #[test]
    fn oversized_prompt_runs_alone() {
        let mut m = machine(Role::Prompt);
        m.enqueue(Task::prompt(1, 3000, 5, 0), 0).unwrap();
        m.enqueue(Task::prompt(2, 10, 5, 0), 0).unwrap();
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.prompt_requests, vec![1]);
    }

    #[test]
    fn fifo_order_preserved() {
        let mut m = machine(Role::Prompt);
        for (i, p) in [300u32, 200, 100].iter().enumerate() {
            m.enqueue(Task::prompt(i as u64, *p, 5, 0), 0).unwrap();
        }
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.prompt_requests, vec![0, 1, 2]);
    }

    #[test]
    fn token_batch_limited_to_max_batch() {
        let mut m = machine(Role::Token);
        for r in 0..70 {
            m.assign_token(r).unwrap();
            m.enqueue(Task::token(r, 100, 50, 0), 0).unwrap();
        }
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.token_requests.len(), 64);
        assert_eq!(m.ready_token_count(), 6);
        assert_eq!(plan.kind, BatchKind::TokenOnly);
        let first: Vec<u64> = (0..64).collect();
        assert_eq!(plan.admitted_tokens, first);
    }

    #[test]
    fn token_admission_respects_memory() {
        let mut model = h100();
        // room for exactly two final contexts of 1000 tokens
        model.memory_capacity = model.weight_memory + model.kv_cache_bytes(2000);
        let mut m = Machine::new(0, MachineSpec::standard(MachineType::H100), model, Role::Token, false);
        for r in 0..3 {
            m.enqueue(Task::token(r, 990, 10, 0), 0).unwrap();
        }
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.token_requests, vec![0, 1]);
        assert!(m.memory_used() <= m.memory_capacity());
    }

    #[test]
    fn token_iteration_uses_model_time() {
        let mut m = machine(Role::Token);
        for r in 0..5 {
            m.enqueue(Task::token(r, 100, 50, 0), 0).unwrap();
        }
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.iteration_time, ms_to_nanos(h100().token_iter_time(5).unwrap()));
    }

    #[test]
    fn last_token_finishes_and_releases_memory() {
        let mut m = machine(Role::Token);
        m.enqueue(Task::token(9, 100, 2, 0), 0).unwrap();
        let before = m.memory_used();
        m.form_batch(0, &cfg()).unwrap().unwrap();
        let reserved = m.memory_used() - before;
        assert_eq!(reserved, h100().kv_cache_bytes(102));
        let events = m.complete_iteration(1_000).unwrap();
        assert_eq!(
            events,
            vec![
                MachineEvent::TokenEmitted { request: 9, index: 2 },
                MachineEvent::RequestFinished { request: 9 }
            ]
        );
        assert_eq!(m.memory_used(), before);
        assert!(!m.has_work());
    }

    #[test]
    fn mixed_machine_preempts_youngest_tokens() {
        let mut m = machine(Role::Token);
        // 8 running token tasks with staggered enqueue times (older = lower id)
        for r in 0..8u64 {
            m.enqueue(Task::token(r, 100, 100, r * 1_000_000_000), 0).unwrap();
        }
        let now = 10_000_000_000;
        m.form_batch(now, &cfg()).unwrap().unwrap();
        m.complete_iteration(now + 1).unwrap();
        // prompt needs all but 3 slots of the 2048 cap
        m.enqueue(Task::prompt(100, 2045, 10, now), now).unwrap();
        let plan = m.form_batch(now + 1, &cfg()).unwrap().unwrap();
        assert_eq!(plan.kind, BatchKind::Mixed);
        assert_eq!(plan.prompt_requests, vec![100]);
        // youngest five (highest enqueue time, lowest priority) sit out
        let mut pre = plan.preempted.clone();
        pre.sort();
        assert_eq!(pre, vec![3, 4, 5, 6, 7]);
        assert_eq!(plan.token_requests, vec![0, 1, 2]);
        for t in m.active_tasks() {
            let expected = if t.request >= 3 { 1 } else { 0 };
            assert_eq!(t.preempt_count, expected);
        }
    }

    #[test]
    fn capped_tasks_are_never_preempted() {
        let mut c = cfg();
        c.max_preemptions = 1;
        let mut m = machine(Role::Token);
        m.enqueue(Task::token(0, 100, 100, 0), 0).unwrap();
        m.form_batch(0, &c).unwrap();
        m.complete_iteration(10).unwrap();
        m.enqueue(Task::prompt(1, 2048, 5, 10), 10).unwrap();
        let plan = m.form_batch(10, &c).unwrap().unwrap();
        assert_eq!(plan.preempted, vec![0]);
        m.complete_iteration(20).unwrap();
        m.enqueue(Task::prompt(2, 2048, 5, 20), 20).unwrap();
        let plan = m.form_batch(20, &c).unwrap().unwrap();
        assert!(plan.preempted.is_empty());
        assert_eq!(plan.token_requests, vec![0]);
    }

    #[test]
    fn aging_priority_rules() {
        let c = cfg();
        let t0 = Task::token(1, 10, 10, 5_000_000_000);
        assert_eq!(aging_priority(&t0, 5_000_000_000, &c), 0.0);
        let older = Task::token(2, 10, 10, 1_000_000_000);
        assert!(aging_priority(&older, 6_000_000_000, &c) > aging_priority(&t0, 6_000_000_000, &c));
        let mut capped = t0.clone();
        capped.preempt_count = c.max_preemptions;
        // far older uncapped task still ranks below a capped one
        let ancient = Task::token(3, 10, 10, 0);
        let far = 1_000_000 * 1_000_000_000;
        assert!(aging_priority(&capped, far, &c) > aging_priority(&ancient, far, &c));
    }

    #[test]
    fn mixing_rules() {
        let mut m = machine(Role::Token);
        m.enqueue(Task::token(0, 100, 100, 0), 0).unwrap();
        m.enqueue(Task::prompt(1, 1000, 5, 0), 0).unwrap();
        let p = h100().prompt_time(1000).unwrap();
        let t = h100().token_iter_time(1).unwrap();
        let plan = m.form_batch(0, &cfg()).unwrap().unwrap();
        assert_eq!(plan.iteration_time, ms_to_nanos(p + t));

        let mut m = machine(Role::Token);
        m.enqueue(Task::token(0, 100, 100, 0), 0).unwrap();
        m.enqueue(Task::prompt(1, 1000, 5, 0), 0).unwrap();
        let c = SchedulerConfig {
            mixing_rule: MixingRule::Max,
            ..cfg()
        };
        let plan = m.form_batch(0, &c).unwrap().unwrap();
        assert_eq!(plan.iteration_time, ms_to_nanos(p.max(t)));
        assert!(plan.iteration_time >= ms_to_nanos(t));
    }

    #[test]
    fn pending_tokens_counts() {
        let mut m = machine(Role::Prompt);
        assert_eq!(m.pending_tokens(), 0);
        m.enqueue(Task::prompt(0, 1500, 5, 0), 0).unwrap();
        for r in 1..=3 {
            m.assign_token(r).unwrap();
        }
        assert_eq!(m.pending_tokens(), 1503);
    }

    #[test]
    fn config_keys() {
        let cfg =
            FlatConfig::parse("mls.prompt_token_cap = 1024\nmls.mixing_rule = max\nmls.max_preemptions = 2\n").unwrap();
        let c = SchedulerConfig::from_config(&cfg).unwrap();
        assert_eq!(c.prompt_token_cap, 1024);
        assert_eq!(c.queue_threshold_tokens, 2048);
        assert_eq!(c.mixing_rule, MixingRule::Max);
        assert_eq!(c.max_preemptions, 2);
        let bad = FlatConfig::parse("mls.mixing_rule = avg\n").unwrap();
        assert!(SchedulerConfig::from_config(&bad).is_err());
    }
}
