//! Cluster-level scheduling: machine pools, join-the-shortest-queue routing
//! of each request to a prompt and a token machine, overflow into the
//! mixed pool, and coarse re-purposing of machines between roles.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::config::FlatConfig;
use crate::error::{Error, Result};
use crate::machine::{secs_to_nanos, Machine, Nanos, Pool, Role, SchedulerConfig, Task};
use crate::perfmodel::{MachineSpec, MachineType, PerfModelSet};
use crate::trace::Request;
use crate::transfer::{TransferConfig, TransferOverrides};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Design {
    BaselineA100,
    BaselineH100,
    SplitwiseAA,
    SplitwiseHH,
    SplitwiseHHcap,
    SplitwiseHA,
}

impl Design {
    pub const ALL: [Design; 6] = [
        Design::BaselineA100,
        Design::BaselineH100,
        Design::SplitwiseAA,
        Design::SplitwiseHH,
        Design::SplitwiseHHcap,
        Design::SplitwiseHA,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Design::BaselineA100 => "Baseline-A100",
            Design::BaselineH100 => "Baseline-H100",
            Design::SplitwiseAA => "Splitwise-AA",
            Design::SplitwiseHH => "Splitwise-HH",
            Design::SplitwiseHHcap => "Splitwise-HHcap",
            Design::SplitwiseHA => "Splitwise-HA",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Design::BaselineA100 | Design::BaselineH100)
    }

    pub fn machine_type(self, role: Role) -> MachineType {
        use MachineType::*;
        match (self, role) {
            (Design::BaselineA100, _) | (Design::SplitwiseAA, _) => A100,
            (Design::BaselineH100, _) | (Design::SplitwiseHH, _) => H100,
            (Design::SplitwiseHHcap, Role::Prompt) | (Design::SplitwiseHA, Role::Prompt) => H100,
            (Design::SplitwiseHHcap, Role::Token) => H100Cap,
            (Design::SplitwiseHA, Role::Token) => A100,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .iter()
            .copied()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let names: Vec<&str> = Design::ALL.iter().map(|d| d.name()).collect();
                Error::config(format!("unknown design `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Normalized (cost, power) of one machine in `role` for `design`, with a
/// DGX-A100 at (1, 1). Baseline designs have a single role; `role` is
/// ignored for them.
pub fn machine_cost_power(design: Design, role: Role) -> (f64, f64) {
    match (design, role) {
        (Design::BaselineA100, _) | (Design::SplitwiseAA, _) => (1.0, 1.0),
        (Design::BaselineH100, _) => (2.35, 1.75),
        (Design::SplitwiseHH, Role::Prompt)
        | (Design::SplitwiseHHcap, Role::Prompt)
        | (Design::SplitwiseHA, Role::Prompt) => (2.35, 1.75),
        (Design::SplitwiseHH, Role::Token) => (2.5, 1.75),
        (Design::SplitwiseHHcap, Role::Token) => (2.5, 1.23),
        (Design::SplitwiseHA, Role::Token) => (1.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub design: Design,
    /// For Baseline designs the machine count is `prompt_machines + token_machines`.
    pub prompt_machines: u32,
    pub token_machines: u32,
    pub prompt_spec: MachineSpec,
    pub token_spec: MachineSpec,
    pub scheduler: SchedulerConfig,
    pub transfer: TransferOverrides,
    pub num_layers: u32,
    /// `None` disables re-purposing.
    pub repurpose_window: Option<Nanos>,
    pub repurpose_fraction: f64,
    /// How stale the router's view of machine queues may get; 0 is exact.
    pub staleness: Nanos,
}

impl ClusterConfig {
    pub fn new(design: Design, prompt_machines: u32, token_machines: u32) -> Self {
        let spec = |role| {
            let t = design.machine_type(role);
            let (cost, power) = machine_cost_power(design, role);
            MachineSpec {
                cost_rate: cost,
                power_rating: power,
                ..MachineSpec::standard(t)
            }
        };
        Self {
            design,
            prompt_machines,
            token_machines,
            prompt_spec: spec(Role::Prompt),
            token_spec: spec(Role::Token),
            scheduler: SchedulerConfig::default(),
            transfer: TransferOverrides::default(),
            num_layers: 80,
            repurpose_window: Some(secs_to_nanos(300.0)),
            repurpose_fraction: 0.5,
            staleness: 0,
        }
    }

    pub fn total_machines(&self) -> u32 {
        self.prompt_machines + self.token_machines
    }

    /// Reads `cluster.*`, `cls.*`, `mls.*` and `transfer.*`.
    pub fn from_config(cfg: &FlatConfig) -> Result<Self> {
        let design: Design = cfg
            .raw("cluster.design")
            .ok_or_else(|| Error::config("missing `cluster.design`"))?
            .parse()?;
        let prompt = cfg.get_or("cluster.prompt_machines", 1u32)?;
        let token = cfg.get_or("cluster.token_machines", if design.is_baseline() { 0 } else { 1 })?;
        let mut c = Self::new(design, prompt, token);
        if let Some(t) = cfg.get::<MachineType>("cluster.prompt_type")? {
            c.prompt_spec = MachineSpec {
                cost_rate: c.prompt_spec.cost_rate,
                power_rating: c.prompt_spec.power_rating,
                ..MachineSpec::standard(t)
            };
        }
        if let Some(t) = cfg.get::<MachineType>("cluster.token_type")? {
            c.token_spec = MachineSpec {
                cost_rate: c.token_spec.cost_rate,
                power_rating: c.token_spec.power_rating,
                ..MachineSpec::standard(t)
            };
        }
        c.scheduler = SchedulerConfig::from_config(cfg)?;
        c.transfer = TransferOverrides::from_config(cfg)?;
        if let Some(n) = c.transfer.num_layers {
            c.num_layers = n;
        }
        if let Some(w) = cfg.raw("cls.repurpose_window_s") {
            c.repurpose_window = match w.to_ascii_lowercase().as_str() {
                "inf" | "off" | "none" => None,
                v => {
                    let s: f64 = v
                        .parse()
                        .map_err(|_| Error::config(format!("invalid value `{v}` for `cls.repurpose_window_s`")))?;
                    if s.is_infinite() {
                        None
                    } else {
                        Some(secs_to_nanos(s))
                    }
                }
            };
        }
        c.repurpose_fraction = cfg.get_or("cls.repurpose_fraction", c.repurpose_fraction)?;
        c.staleness = secs_to_nanos(cfg.get_or("cls.staleness_s", 0.0f64)?);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_machines() == 0 {
            return Err(Error::config("cluster has no machines"));
        }
        if self.repurpose_window == Some(0) {
            return Err(Error::validation("repurpose window must be positive"));
        }
        if !(0.0..=1.0).contains(&self.repurpose_fraction) {
            return Err(Error::validation("repurpose fraction must be in [0, 1]"));
        }
        self.scheduler.validate()
    }

    /// Link parameters for a KV handoff between two machine types.
    pub fn transfer_config(&self, from: MachineType, to: MachineType) -> TransferConfig {
        let mut t = TransferConfig::for_pair(from, to, self.num_layers);
        t.apply_overrides(&self.transfer);
        t
    }

    /// Total provisioned (cost, power).
    pub fn cost_power(&self) -> (f64, f64) {
        let p = self.prompt_machines as f64;
        let t = self.token_machines as f64;
        (
            p * self.prompt_spec.cost_rate + t * self.token_spec.cost_rate,
            p * self.prompt_spec.power_rating + t * self.token_spec.power_rating,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingDecision {
    pub request: u64,
    pub prompt_machine: usize,
    pub token_machine: usize,
    pub decided_at: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolTransition {
    pub machine: usize,
    pub from: Pool,
    pub to: Pool,
    pub at: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoleChange {
    pub machine: usize,
    pub from: Role,
    pub to: Role,
    pub at: Nanos,
    /// Pool membership before and after the flip.
    pub pool_from: Pool,
    pub pool_to: Pool,
}

#[derive(Debug, Clone, Default)]
struct Residency {
    mixed_since: Option<Nanos>,
    closed: VecDeque<(Nanos, Nanos)>,
}

impl Residency {
    fn enter(&mut self, now: Nanos) {
        if self.mixed_since.is_none() {
            self.mixed_since = Some(now);
        }
    }

    fn leave(&mut self, now: Nanos) {
        if let Some(s) = self.mixed_since.take() {
            if now > s {
                self.closed.push_back((s, now));
            }
        }
    }

    /// Time spent mixed within `[now - window, now]`.
    fn within(&mut self, now: Nanos, window: Nanos) -> Nanos {
        let lo = now.saturating_sub(window);
        while self.closed.front().is_some_and(|&(_, e)| e <= lo) {
            self.closed.pop_front();
        }
        let overlap = |s: Nanos, e: Nanos| e.min(now).saturating_sub(s.max(lo));
        let mut total: Nanos = self.closed.iter().map(|&(s, e)| overlap(s, e)).sum();
        if let Some(s) = self.mixed_since {
            total += overlap(s, now);
        }
        total
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    pub config: ClusterConfig,
    pub machines: Vec<Machine>,
    residency: Vec<Residency>,
    view: Vec<u64>,
    view_time: Vec<Nanos>,
}

impl Cluster {
    /// Prompt-home machines get ids `0..prompt_machines`, token-home
    /// machines follow.
    pub fn new(config: ClusterConfig, perf: &PerfModelSet) -> Result<Self> {
        config.validate()?;
        let baseline = config.design.is_baseline();
        let mut machines = Vec::with_capacity(config.total_machines() as usize);
        for i in 0..config.total_machines() {
            let role = if i < config.prompt_machines {
                Role::Prompt
            } else {
                Role::Token
            };
            let spec = if baseline || role == Role::Prompt {
                config.prompt_spec
            } else {
                config.token_spec
            };
            let model = perf.get(spec.machine_type)?.clone();
            machines.push(Machine::new(i as usize, spec, model, role, baseline));
        }
        let n = machines.len();
        Ok(Self {
            config,
            machines,
            residency: vec![Residency::default(); n],
            view: vec![0; n],
            view_time: vec![0; n],
        })
    }

    pub fn pool_members(&self, pool: Pool) -> Vec<usize> {
        self.machines
            .iter()
            .filter(|m| m.current_pool == pool)
            .map(|m| m.id)
            .collect()
    }

    /// The router's view of a machine's queue length in pending tokens.
    pub fn observed_pending(&self, machine: usize) -> u64 {
        if self.config.staleness == 0 {
            self.machines[machine].pending_tokens()
        } else {
            self.view[machine]
        }
    }

    /// Status report from a machine after a local change; with a staleness
    /// delay configured the view refreshes at most once per delay.
    pub fn report(&mut self, machine: usize, now: Nanos) {
        if self.config.staleness == 0 {
            return;
        }
        if now.saturating_sub(self.view_time[machine]) >= self.config.staleness || now == 0 {
            self.view[machine] = self.machines[machine].pending_tokens();
            self.view_time[machine] = now;
        }
    }

    fn tiers(&self, role: Role) -> [Pool; 3] {
        if self.config.design.is_baseline() {
            [Pool::Mixed; 3]
        } else {
            [role.home_pool(), Pool::Mixed, role.opposite().home_pool()]
        }
    }

    /// Pick a machine for `role`: shortest queue in the home pool, falling
    /// through to the mixed pool and then the opposite pool while the
    /// current tier's shortest queue exceeds the threshold. If every tier
    /// is over the threshold, the overall shortest queue wins.
    pub fn choose(&self, role: Role) -> Result<usize> {
        let threshold = self.config.scheduler.queue_threshold_tokens;
        let mut best: Option<(u64, usize)> = None;
        for pool in self.tiers(role) {
            let tier_best = self
                .machines
                .iter()
                .filter(|m| m.current_pool == pool)
                .map(|m| (self.observed_pending(m.id), m.id))
                .min();
            let Some(candidate) = tier_best else { continue };
            if candidate.0 <= threshold {
                return Ok(candidate.1);
            }
            if best.is_none_or(|b| candidate.0 < b.0) {
                best = Some(candidate);
            }
        }
        best.map(|b| b.1)
            .ok_or_else(|| Error::config("no machine available for routing"))
    }

    /// Assign both machines for `request` at its arrival and enqueue the
    /// prompt task. Pool transitions caused by the assignment are returned.
    pub fn route(&mut self, request: &Request, now: Nanos) -> Result<(RoutingDecision, Vec<PoolTransition>)> {
        let mut transitions = Vec::new();
        let prompt_machine = self.choose(Role::Prompt)?;
        let before = self.machines[prompt_machine].current_pool;
        self.machines[prompt_machine].enqueue(
            Task::prompt(request.id, request.prompt_tokens, request.output_tokens, now),
            now,
        )?;
        self.note_pool_change(prompt_machine, before, now, &mut transitions);
        if self.config.staleness > 0 {
            self.view[prompt_machine] += request.prompt_tokens as u64;
        }

        let token_machine = if self.config.design.is_baseline() {
            prompt_machine
        } else {
            self.choose(Role::Token)?
        };
        let before = self.machines[token_machine].current_pool;
        self.machines[token_machine].assign_token(request.id)?;
        self.note_pool_change(token_machine, before, now, &mut transitions);
        if self.config.staleness > 0 {
            self.view[token_machine] += 1;
        }

        Ok((
            RoutingDecision {
                request: request.id,
                prompt_machine,
                token_machine,
                decided_at: now,
            },
            transitions,
        ))
    }

    fn note_pool_change(&mut self, machine: usize, before: Pool, now: Nanos, out: &mut Vec<PoolTransition>) {
        let after = self.machines[machine].current_pool;
        if after == before {
            return;
        }
        if after == Pool::Mixed {
            self.residency[machine].enter(now);
        } else if before == Pool::Mixed {
            self.residency[machine].leave(now);
        }
        out.push(PoolTransition {
            machine,
            from: before,
            to: after,
            at: now,
        });
    }

    /// Return idle-of-opposite-work mixed machines to their home pool. Busy
    /// machines are left for their next iteration boundary.
    pub fn update_pools(&mut self, machines: &[usize], now: Nanos) -> Vec<PoolTransition> {
        let mut out = Vec::new();
        if self.config.design.is_baseline() {
            return out;
        }
        for &id in machines {
            let m = &self.machines[id];
            if m.current_pool != Pool::Mixed || m.is_busy() || m.has_opposite_kind_work() {
                continue;
            }
            let home = m.home_role.home_pool();
            self.machines[id].current_pool = home;
            self.note_pool_change(id, Pool::Mixed, now, &mut out);
        }
        out
    }

    /// Flip the home role of every machine that spent more than the
    /// configured fraction of the last window in the mixed pool.
    pub fn repurpose(&mut self, now: Nanos) -> Vec<RoleChange> {
        let mut out = Vec::new();
        let Some(window) = self.config.repurpose_window else {
            return out;
        };
        if self.config.design.is_baseline() {
            return out;
        }
        let limit = self.config.repurpose_fraction * window as f64;
        for id in 0..self.machines.len() {
            let mixed = self.residency[id].within(now, window) as f64;
            if mixed <= limit {
                continue;
            }
            let from = self.machines[id].home_role;
            let pool_from = self.machines[id].current_pool;
            self.machines[id].set_home_role(from.opposite());
            let r = &mut self.residency[id];
            r.closed.clear();
            r.mixed_since = (self.machines[id].current_pool == Pool::Mixed).then_some(now);
            out.push(RoleChange {
                machine: id,
                from,
                to: from.opposite(),
                at: now,
                pool_from,
                pool_to: self.machines[id].current_pool,
            });
        }
        out
    }

    /// Mixed-pool residency of `machine` within the trailing window.
    pub fn mixed_residency(&mut self, machine: usize, now: Nanos, window: Nanos) -> Nanos {
        self.residency[machine].within(now, window)
    }

    /// Pools partition the machines and every member's pool is consistent
    /// with the design.
    pub fn check_pools(&self) -> Result<()> {
        for m in &self.machines {
            let ok = if self.config.design.is_baseline() {
                m.current_pool == Pool::Mixed
            } else {
                m.current_pool == Pool::Mixed || m.current_pool == m.home_role.home_pool()
            };
            if !ok {
                return Err(Error::Internal(format!(
                    "machine {} in pool {} with home role {}",
                    m.id,
                    m.current_pool.as_str(),
                    m.home_role.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::TaskKind;

    fn perf() -> PerfModelSet {
        PerfModelSet::preset("llama2-70b").unwrap()
    }

    fn req(id: u64, p: u32) -> Request {
        Request {
            id,
            arrival: 0.0,
            prompt_tokens: p,
            output_tokens: 10,
        }
    }

    fn splitwise(p: u32, t: u32) -> Cluster {
        Cluster::new(ClusterConfig::new(Design::SplitwiseHH, p, t), &perf()).unwrap()
    }

    #[test]
    fn design_names_round_trip() {
        for d in Design::ALL {
            assert_eq!(d.name().parse::<Design>().unwrap(), d);
        }
        assert_eq!("splitwise-hh".parse::<Design>().unwrap(), Design::SplitwiseHH);
        assert!("splitwise-xx".parse::<Design>().is_err());
    }

    #[test]
    fn table_rates() {
        assert_eq!(machine_cost_power(Design::SplitwiseHHcap, Role::Token).1, 1.23);
        assert_eq!(machine_cost_power(Design::SplitwiseAA, Role::Prompt), (1.0, 1.0));
        assert_eq!(machine_cost_power(Design::SplitwiseHH, Role::Prompt).0, 2.35);
        assert_eq!(machine_cost_power(Design::SplitwiseHH, Role::Token), (2.5, 1.75));
        assert_eq!(machine_cost_power(Design::SplitwiseHA, Role::Token), (1.0, 1.0));
    }

    #[test]
    fn ha_transfers_at_a100_speed() {
        let c = ClusterConfig::new(Design::SplitwiseHA, 1, 1);
        let t = c.transfer_config(MachineType::H100, MachineType::A100);
        assert_eq!(t.bandwidth, 200e9);
    }

    #[test]
    fn empty_cluster_rejected() {
        let c = ClusterConfig::new(Design::SplitwiseHH, 0, 0);
        assert!(matches!(Cluster::new(c, &perf()), Err(Error::Config(_))));
    }

    #[test]
    fn shortest_queue_and_tie_break() {
        let mut c = splitwise(2, 1);
        c.machines[0].enqueue(Task::prompt(100, 3000, 1, 0), 0).unwrap();
        c.machines[1].enqueue(Task::prompt(101, 500, 1, 0), 0).unwrap();
        assert_eq!(c.choose(Role::Prompt).unwrap(), 1);
        let c = splitwise(2, 1);
        assert_eq!(c.choose(Role::Prompt).unwrap(), 0);
    }

    #[test]
    fn overflow_moves_token_machine_to_mixed() {
        let mut c = splitwise(1, 1);
        c.machines[0].enqueue(Task::prompt(100, 5000, 1, 0), 0).unwrap();
        let (d, transitions) = c.route(&req(1, 1000), 0).unwrap();
        assert_eq!(d.prompt_machine, 1);
        assert_eq!(d.token_machine, 1);
        assert_eq!(c.machines[1].current_pool, Pool::Mixed);
        assert_eq!(transitions.len(), 1);
        assert_eq!(transitions[0].to, Pool::Mixed);
        c.check_pools().unwrap();
    }

    #[test]
    fn mixed_tier_before_opposite_pool() {
        let mut c = splitwise(1, 2);
        c.machines[0].enqueue(Task::prompt(100, 5000, 1, 0), 0).unwrap();
        // machine 2 already mixed with a small prompt
        c.machines[2].enqueue(Task::prompt(101, 50, 1, 0), 0).unwrap();
        assert_eq!(c.machines[2].current_pool, Pool::Mixed);
        assert_eq!(c.choose(Role::Prompt).unwrap(), 2);
    }

    #[test]
    fn saturated_cluster_uses_shortest_overall() {
        let mut c = splitwise(1, 1);
        c.machines[0].enqueue(Task::prompt(100, 9000, 1, 0), 0).unwrap();
        c.machines[1].enqueue(Task::prompt(101, 5000, 1, 0), 0).unwrap();
        assert_eq!(c.choose(Role::Prompt).unwrap(), 1);
    }

    #[test]
    fn baseline_routes_both_phases_to_one_machine() {
        let mut c = Cluster::new(ClusterConfig::new(Design::BaselineH100, 3, 0), &perf()).unwrap();
        for r in 0..3 {
            let (d, tr) = c.route(&req(r, 100), 0).unwrap();
            assert_eq!(d.prompt_machine, d.token_machine);
            assert_eq!(d.prompt_machine, r as usize);
            assert!(tr.is_empty());
        }
    }

    #[test]
    fn machine_returns_home_when_opposite_work_done() {
        let mut c = splitwise(1, 1);
        c.machines[1].enqueue(Task::prompt(5, 100, 1, 0), 0).unwrap();
        assert_eq!(c.machines[1].current_pool, Pool::Mixed);
        assert!(c.update_pools(&[1], 10).is_empty());
        let cfg = c.config.scheduler;
        c.machines[1].form_batch(10, &cfg).unwrap();
        assert!(c.update_pools(&[1], 20).is_empty(), "busy machines stay put");
        let events = c.machines[1].complete_iteration(30).unwrap();
        assert_eq!(events.len(), 1);
        let t = c.update_pools(&[1], 30);
        assert_eq!(t.len(), 1);
        assert_eq!(c.machines[1].current_pool, Pool::Token);
    }

    #[test]
    fn pending_token_accounting_moves_with_phase() {
        let mut c = splitwise(1, 1);
        let (d, _) = c.route(&req(1, 1500), 0).unwrap();
        assert_eq!(c.machines[d.prompt_machine].pending_tokens(), 1500);
        assert_eq!(c.machines[d.token_machine].pending_tokens(), 1);
        let cfg = c.config.scheduler;
        c.machines[0].form_batch(0, &cfg).unwrap();
        assert_eq!(c.machines[0].pending_tokens(), 1500);
        c.machines[0].complete_iteration(5).unwrap();
        assert_eq!(c.machines[0].pending_tokens(), 0);
        c.machines[1].enqueue(Task::token(1, 1500, 10, 5), 5).unwrap();
        assert_eq!(c.machines[1].pending_tokens(), 1);
        assert_eq!(c.machines[1].awaiting_token_count(), 0);
        let _ = TaskKind::Token;
    }

    #[test]
    fn residency_matches_timeline_sum() {
        let mut r = Residency::default();
        let s = 1_000_000_000u64;
        r.enter(10 * s);
        r.leave(50 * s);
        r.enter(70 * s);
        r.leave(90 * s);
        r.enter(95 * s);
        // window [0, 100]: 40 + 20 + 5
        assert_eq!(r.within(100 * s, 100 * s), 65 * s);
        // window [60, 100]: 20 + 5
        assert_eq!(r.within(100 * s, 40 * s), 25 * s);
    }

    #[test]
    fn repurpose_flips_mostly_mixed_machine() {
        let s = 1_000_000_000u64;
        let mut cfg = ClusterConfig::new(Design::SplitwiseHH, 1, 2);
        cfg.repurpose_window = Some(100 * s);
        let mut c = Cluster::new(cfg, &perf()).unwrap();
        c.residency[1].enter(20 * s);
        let changes = c.repurpose(100 * s);
        assert_eq!(changes.len(), 1);
        assert_eq!(changes[0].machine, 1);
        assert_eq!(c.machines[1].home_role, Role::Prompt);
        assert_eq!(c.machines[2].home_role, Role::Token);
    }

    #[test]
    fn repurpose_disabled() {
        let s = 1_000_000_000u64;
        let mut cfg = ClusterConfig::new(Design::SplitwiseHH, 1, 1);
        cfg.repurpose_window = None;
        let mut c = Cluster::new(cfg, &perf()).unwrap();
        c.residency[1].enter(0);
        assert!(c.repurpose(1000 * s).is_empty());
    }

    #[test]
    fn config_from_keys() {
        let cfg = FlatConfig::parse(
            "cluster.design = splitwise-hh\ncluster.prompt_machines = 35\ncluster.token_machines = 5\ncls.repurpose_window_s = inf\n",
        )
        .unwrap();
        let c = ClusterConfig::from_config(&cfg).unwrap();
        assert_eq!((c.prompt_machines, c.token_machines), (35, 5));
        assert_eq!(c.repurpose_window, None);
        let (cost, power) = c.cost_power();
        assert!((cost - (35.0 * 2.35 + 5.0 * 2.5)).abs() < 1e-9);
        assert!((power - 40.0 * 1.75).abs() < 1e-9);
        assert!(cfg.unused_keys().is_empty());
    }
}
