//! Seeded, tick-based simulation of the asynchronous block update law.
//!
//! Every agent keeps a full copy of the ensemble state. At each tick the
//! scheduler draws, in a fixed order, one update coin per agent (ascending)
//! and one communication coin per ordered pair `(from, to)` (lexicographic).
//! Deliveries are applied before computations. An agent that computes
//! replaces its own block with `clamp(x_i − γ ∇_i f_A(xⁱ))`, evaluated at its
//! possibly stale local copy; copies of other agents' blocks only change when
//! a message from that agent is delivered.
//!
//! All state transitions are recorded in an append-only [`Event`] log, and
//! [`replay`] rebuilds the agents' views from the log alone.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::problem::{Problem, Regularization};
use crate::{Error, Result};

pub const TRACE_FORMAT: &str = "async-blockopt-trace/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayModel {
    /// A communication event hands over the sender's latest block at once.
    Instant,
    /// Messages take a uniform random latency in `0..=max_latency` ticks and
    /// are delivered first-in first-out per ordered pair.
    Queued { max_latency: u64 },
}

/// Per-tick event probabilities and the delay model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub p_update: f64,
    pub p_comm: f64,
    pub delay: DelayModel,
}

impl Schedule {
    pub fn new(p_update: f64, p_comm: f64, delay: DelayModel) -> Result<Self> {
        let s = Schedule {
            p_update,
            p_comm,
            delay,
        };
        s.validate()?;
        Ok(s)
    }

    /// Every agent computes and every pair communicates at every tick.
    pub fn synchronous() -> Self {
        Schedule {
            p_update: 1.0,
            p_comm: 1.0,
            delay: DelayModel::Instant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_update", self.p_update), ("p_comm", self.p_comm)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            p_update: 0.1,
            p_comm: 0.1,
            delay: DelayModel::Instant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Event {
    Update {
        tick: u64,
        agent: usize,
        clamped: bool,
    },
    Deliver {
        tick: u64,
        from: usize,
        to: usize,
        tau: u64,
    },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match *self {
            Event::Update { tick, .. } | Event::Deliver { tick, .. } => tick,
        }
    }
}

/// Agent `id`'s local copy of the ensemble state.
///
/// `tau[j]` is the tick at which agent `j` computed the value held in block
/// `j`; for the agent's own block it is the tick of its last update.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentView {
    pub id: usize,
    pub state: Vec<f64>,
    pub tau: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Message {
    due: u64,
    tau: u64,
    value: Vec<f64>,
}

/// Own-block values an agent has computed, keyed by tick.
#[derive(Debug, Clone)]
struct History(Vec<(u64, Vec<f64>)>);

impl History {
    fn at(&self, tick: u64) -> Option<&[f64]> {
        self.0
            .binary_search_by_key(&tick, |(t, _)| *t)
            .ok()
            .map(|k| self.0[k].1.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    problem: Problem,
    reg: Regularization,
    schedule: Schedule,
    seed: u64,
    x0: Vec<f64>,
    views: Vec<AgentView>,
    tick: u64,
    rng: ChaCha8Rng,
    log: Vec<Event>,
    last_update: Vec<u64>,
    history: Vec<History>,
    in_flight: Vec<VecDeque<Message>>,
    last_due: Vec<u64>,
}

/// Builds a world in which every agent's view equals `x0` and every `τ` is 0.
pub fn init_world(
    problem: Problem,
    reg: Regularization,
    x0: Vec<f64>,
    seed: u64,
    schedule: Schedule,
) -> Result<World> {
    problem.check_feasible(&x0)?;
    schedule.validate()?;
    let n_agents = problem.agents();
    if reg.alphas().len() != n_agents {
        return Err(Error::DimensionMismatch {
            expected: n_agents,
            found: reg.alphas().len(),
        });
    }
    let views = (0..n_agents)
        .map(|id| AgentView {
            id,
            state: x0.clone(),
            tau: vec![0; n_agents],
        })
        .collect();
    let history = (0..n_agents)
        .map(|i| History(vec![(0, x0[problem.layout().range(i)].to_vec())]))
        .collect();
    Ok(World {
        schedule,
        seed,
        views,
        tick: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        log: Vec::new(),
        last_update: vec![0; n_agents],
        history,
        in_flight: vec![VecDeque::new(); n_agents * n_agents],
        last_due: vec![0; n_agents * n_agents],
        x0,
        problem,
        reg,
    })
}

impl World {
    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn regularization(&self) -> &Regularization {
        &self.reg
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn views(&self) -> &[AgentView] {
        &self.views
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    pub fn agents(&self) -> usize {
        self.views.len()
    }

    /// Concatenation of every agent's own block.
    pub fn own_state(&self) -> Vec<f64> {
        let layout = self.problem.layout();
        let mut x = vec![0.0; layout.dim()];
        for (i, v) in self.views.iter().enumerate() {
            let r = layout.range(i);
            x[r.clone()].copy_from_slice(&v.state[r]);
        }
        x
    }

    /// The value agent `agent` computed at `tick`, if it computed one then
    /// (tick 0 is the initial state).
    pub fn computed_value(&self, agent: usize, tick: u64) -> Option<&[f64]> {
        self.history.get(agent)?.at(tick)
    }

    /// Agent `i` takes a gradient step on its own block using its local view.
    pub fn agent_compute(&mut self, i: usize) -> Result<()> {
        self.problem.layout().check_index(i)?;
        let r = self.problem.layout().range(i);
        let mut g = vec![0.0; r.len()];
        let view = &mut self.views[i];
        self.problem
            .grad_block_unchecked(self.reg.alpha(i), &view.state, i, &mut g);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("block gradient"));
        }
        let gamma = self.reg.gamma();
        let block = &mut view.state[r];
        for (x, gk) in block.iter_mut().zip(&g) {
            *x -= gamma * gk;
        }
        let clamped = self.problem.clamp_block(i, block);
        view.tau[i] = self.tick;
        self.last_update[i] = self.tick;
        let value = block.to_vec();
        let hist = &mut self.history[i].0;
        match hist.last_mut() {
            Some((t, v)) if *t == self.tick => *v = value,
            _ => hist.push((self.tick, value)),
        }
        self.log.push(Event::Update {
            tick: self.tick,
            agent: i,
            clamped,
        });
        Ok(())
    }

    /// Delivers `from`'s latest computed block to `to` immediately.
    pub fn deliver(&mut self, from: usize, to: usize) -> Result<()> {
        self.check_pair(from, to)?;
        let r = self.problem.layout().range(from);
        let value = self.views[from].state[r].to_vec();
        let tau = self.last_update[from];
        self.apply_delivery(from, to, tau, &value);
        Ok(())
    }

    fn check_pair(&self, from: usize, to: usize) -> Result<()> {
        let layout = self.problem.layout();
        layout.check_index(from)?;
        layout.check_index(to)?;
        if from == to {
            return Err(Error::SelfDelivery(from));
        }
        Ok(())
    }

    fn apply_delivery(&mut self, from: usize, to: usize, tau: u64, value: &[f64]) {
        let r = self.problem.layout().range(from);
        let view = &mut self.views[to];
        view.state[r].copy_from_slice(value);
        view.tau[from] = tau;
        self.log.push(Event::Deliver {
            tick: self.tick,
            from,
            to,
            tau,
        });
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<()> {
        self.tick += 1;
        let n = self.agents();
        let Schedule {
            p_update,
            p_comm,
            delay,
        } = self.schedule;

        let updates: Vec<bool> = (0..n)
            .map(|_| self.rng.random::<f64>() < p_update)
            .collect();
        let mut sends = Vec::new();
        for from in 0..n {
            for to in 0..n {
                if from == to {
                    continue;
                }
                if self.rng.random::<f64>() < p_comm {
                    let latency = match delay {
                        DelayModel::Instant => 0,
                        DelayModel::Queued { max_latency } => {
                            self.rng.random_range(0..=max_latency)
                        }
                    };
                    sends.push((from, to, latency));
                }
            }
        }

        match delay {
            DelayModel::Instant => {
                for &(from, to, _) in &sends {
                    self.deliver(from, to)?;
                }
            }
            DelayModel::Queued { .. } => {
                for &(from, to, latency) in &sends {
                    let pair = from * n + to;
                    let due = (self.tick + latency).max(self.last_due[pair]);
                    self.last_due[pair] = due;
                    let r = self.problem.layout().range(from);
                    let msg = Message {
                        due,
                        tau: self.last_update[from],
                        value: self.views[from].state[r].to_vec(),
                    };
                    self.in_flight[pair].push_back(msg);
                }
                for pair in 0..n * n {
                    while self.in_flight[pair]
                        .front()
                        .is_some_and(|m| m.due <= self.tick)
                    {
                        let msg = self.in_flight[pair].pop_front().unwrap();
                        self.apply_delivery(pair / n, pair % n, msg.tau, &msg.value);
                    }
                }
            }
        }

        for (i, &go) in updates.iter().enumerate() {
            if go {
                self.agent_compute(i)?;
            }
        }
        Ok(())
    }

    /// Messages sent but not yet delivered.
    pub fn messages_in_flight(&self) -> usize {
        self.in_flight.iter().map(VecDeque::len).sum()
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            tick: self.tick,
            views: self.views.iter().map(|v| v.state.clone()).collect(),
        }
    }
}

/// All agents' views after every event of `tick` has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub views: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub agents: usize,
    pub layout: crate::problem::BlockLayout,
    pub seed: u64,
    pub schedule: Schedule,
    pub alphas: Vec<f64>,
    pub gamma: f64,
    pub x0: Vec<f64>,
    pub stride: u64,
    /// Free-form description of how the problem was built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// Output of [`run`]: the full event log plus snapshots every `stride` ticks
/// (the first and last tick of the run are always included).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header(TraceHeader),
    Update {
        tick: u64,
        agent: usize,
        clamped: bool,
    },
    Deliver {
        tick: u64,
        from: usize,
        to: usize,
        tau: u64,
    },
    Snapshot(Snapshot),
}

impl From<Event> for Record {
    fn from(e: Event) -> Self {
        match e {
            Event::Update {
                tick,
                agent,
                clamped,
            } => Record::Update {
                tick,
                agent,
                clamped,
            },
            Event::Deliver {
                tick,
                from,
                to,
                tau,
            } => Record::Deliver {
                tick,
                from,
                to,
                tau,
            },
        }
    }
}

/// Runs `ticks` more ticks. `stride = 0` keeps only the first and last snapshot.
pub fn run(world: &mut World, ticks: u64, stride: u64) -> Result<Trace> {
    run_with(world, ticks, stride, |_| {})
}

/// Like [`run`], calling `hook` with the world after every tick.
pub fn run_with<F: FnMut(&World)>(
    world: &mut World,
    ticks: u64,
    stride: u64,
    mut hook: F,
) -> Result<Trace> {
    let mut snapshots = vec![world.snapshot()];
    let end = world.tick + ticks;
    while world.tick < end {
        world.step()?;
        hook(world);
        if world.tick == end || (stride > 0 && world.tick.is_multiple_of(stride)) {
            snapshots.push(world.snapshot());
        }
    }
    Ok(Trace {
        header: TraceHeader {
            format: TRACE_FORMAT.to_string(),
            agents: world.agents(),
            layout: world.problem.layout().clone(),
            seed: world.seed,
            schedule: world.schedule,
            alphas: world.reg.alphas().to_vec(),
            gamma: world.reg.gamma(),
            x0: world.x0.clone(),
            stride,
            meta: None,
        },
        events: world.log.clone(),
        snapshots,
    })
}

impl Trace {
    /// Number of update events whose result had to be projected onto the box.
    pub fn clamp_activations(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::Update { clamped: true, .. }))
            .count()
    }

    /// Writes one JSON record per line: the header, then events and snapshots
    /// merged in tick order (a snapshot follows the events of its tick).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = |rec: &Record| -> Result<()> {
            serde_json::to_writer(&mut out, rec).map_err(|e| Error::Trace(e.to_string()))?;
            out.write_all(b"\n")?;
            Ok(())
        };
        line(&Record::Header(self.header.clone()))?;
        let mut events = self.events.iter().peekable();
        for snap in &self.snapshots {
            while let Some(e) = events.next_if(|e| e.tick() <= snap.tick) {
                line(&Record::from(*e))?;
            }
            line(&Record::Snapshot(snap.clone()))?;
        }
        for e in events {
            line(&Record::from(*e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut events = Vec::new();
        let mut snapshots = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Trace(format!("line {}: {e}", lineno + 1)))?;
            match rec {
                Record::Header(h) if header.is_none() && lineno == 0 => header = Some(h),
                Record::Header(_) => {
                    return Err(Error::Trace(format!(
                        "unexpected header on line {}",
                        lineno + 1
                    )))
                }
                Record::Update {
                    tick,
                    agent,
                    clamped,
                } => events.push(Event::Update {
                    tick,
                    agent,
                    clamped,
                }),
                Record::Deliver {
                    tick,
                    from,
                    to,
                    tau,
                } => events.push(Event::Deliver {
                    tick,
                    from,
                    to,
                    tau,
                }),
                Record::Snapshot(s) => snapshots.push(s),
            }
        }
        let header = header.ok_or_else(|| Error::Trace("missing header record".into()))?;
        if header.format != TRACE_FORMAT {
            return Err(Error::Trace(format!(
                "unsupported format {:?}",
                header.format
            )));
        }
        Ok(Trace {
            header,
            events,
            snapshots,
        })
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    /// SHA-256 of the serialized trace, hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl_bytes()))
    }
}

/// Rebuilds all agents' views by re-executing `events` from `x0`.
///
/// Each delivery is resolved against the value the sender computed at the
/// delivered `τ`, so a successful replay that matches a live world also shows
/// that every stale copy equals exactly what its sender held at `τ`.
pub fn replay(
    problem: &Problem,
    reg: &Regularization,
    x0: &[f64],
    events: &[Event],
) -> Result<Vec<AgentView>> {
    problem.check_feasible(x0)?;
    let n = problem.agents();
    let layout = problem.layout();
    let mut views: Vec<AgentView> = (0..n)
        .map(|id| AgentView {
            id,
            state: x0.to_vec(),
            tau: vec![0; n],
        })
        .collect();
    let mut history: Vec<History> = (0..n)
        .map(|i| History(vec![(0, x0[layout.range(i)].to_vec())]))
        .collect();
    let mut last_tick = 0;
    for e in events {
        if e.tick() < last_tick {
            return Err(Error::MalformedLog(format!(
                "tick {} after tick {last_tick}",
                e.tick()
            )));
        }
        last_tick = e.tick();
        match *e {
            Event::Update {
                tick,
                agent,
                clamped,
            } => {
                layout.check_index(agent)?;
                let r = layout.range(agent);
                let mut g = vec![0.0; r.len()];
                problem.grad_block_unchecked(reg.alpha(agent), &views[agent].state, agent, &mut g);
                let block = &mut views[agent].state[r];
                for (x, gk) in block.iter_mut().zip(&g) {
                    *x -= reg.gamma() * gk;
                }
                if problem.clamp_block(agent, block) != clamped {
                    return Err(Error::MalformedLog(format!(
                        "clamp flag of update by {agent} at tick {tick} does not replay"
                    )));
                }
                let value = block.to_vec();
                views[agent].tau[agent] = tick;
                let hist = &mut history[agent].0;
                match hist.last_mut() {
                    Some((t, v)) if *t == tick => *v = value,
                    _ => hist.push((tick, value)),
                }
            }
            Event::Deliver {
                tick,
                from,
                to,
                tau,
            } => {
                layout.check_index(from)?;
                layout.check_index(to)?;
                if from == to {
                    return Err(Error::SelfDelivery(from));
                }
                if tau > tick {
                    return Err(Error::MalformedLog(format!(
                        "delivery at tick {tick} carries future tau {tau}"
                    )));
                }
                let value = history[from].at(tau).ok_or_else(|| {
                    Error::MalformedLog(format!("agent {from} computed nothing at tick {tau}"))
                })?;
                views[to].state[layout.range(from)].copy_from_slice(value);
                views[to].tau[from] = tau;
            }
        }
    }
    Ok(views)
}
