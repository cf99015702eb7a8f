//! Live steering of a trained policy.
//!
//! A [`Controller`] owns the environment and the policy and advances one tick at a
//! time. Commands land in a shared mailbox and are drained at the start of a tick,
//! so a command acknowledged with `applied_at_tick = k` is first visible in frame
//! `k`. [`SteerService`] runs a controller on its own thread and fans frames out
//! over a bounded broadcast channel; lagging subscribers lose the oldest frames and
//! never slow the loop down.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::agent::{self, ConstraintLevel};
use crate::checkpoint::Checkpoint;
use crate::cost::ContactSnapshot;
use crate::env::{self, EnvState, Stepper};
use crate::error::{Error, Result};

pub const TELEMETRY_QUEUE: usize = 256;

/// Fields left out are unchanged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteerCommand {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Commanded speed in m/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paused: Option<bool>,
}

impl SteerCommand {
    pub fn epsilon(e: f64) -> Self {
        Self { epsilon: Some(e), ..Default::default() }
    }

    pub fn validate(&self, v_range: [f64; 2]) -> Result<()> {
        if let Some(e) = self.epsilon {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::InvalidCommand { field: "epsilon".into(), reason: format!("{e} is outside [0, 1]") });
            }
        }
        if let Some(v) = self.v_target {
            if !(v >= v_range[0] && v <= v_range[1]) {
                return Err(Error::InvalidCommand {
                    field: "v_target".into(),
                    reason: format!("{v} m/s is outside [{}, {}]", v_range[0], v_range[1]),
                });
            }
        }
        Ok(())
    }

    fn merge(&mut self, newer: SteerCommand) {
        self.epsilon = newer.epsilon.or(self.epsilon);
        self.v_target = newer.v_target.or(self.v_target);
        self.paused = newer.paused.or(self.paused);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub applied_at_tick: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    /// m/s
    pub v: f64,
    /// m/s
    pub v_target: f64,
    pub epsilon: f64,
    /// Normalised cost of this step.
    pub step_cost: f64,
    /// Mean step cost over the last second of simulated time.
    pub rolling_cost: f64,
    /// Display-only pseudo-decibel `30 + 40 · rolling_cost`; not a measured SPL.
    pub db_proxy: f64,
    pub contact: ContactSnapshot,
}

pub fn db_proxy(rolling_cost: f64) -> f64 {
    30.0 + 40.0 * rolling_cost
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LoopStatus {
    Running,
    Paused,
    Stopped { reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerConfig {
    /// Simulated ticks per second.
    pub tick_rate_hz: f64,
    pub initial_epsilon: f64,
    pub initial_v_target: f64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self { tick_rate_hz: 50.0, initial_epsilon: 0.5, initial_v_target: 1.5 }
    }
}

#[derive(Debug, Default)]
struct Mailbox {
    pending: SteerCommand,
    /// Tick number of the next frame that has not drained the mailbox yet.
    next_tick: u64,
    paused: bool,
}

pub struct Controller {
    ck: Checkpoint,
    stepper: Stepper,
    state: EnvState,
    epsilon: f64,
    window: VecDeque<f64>,
    window_len: usize,
    window_sum: f64,
    mailbox: Arc<Mutex<Mailbox>>,
    config: SteerConfig,
}

impl Controller {
    pub fn new(ck: Checkpoint, config: SteerConfig) -> Result<Self> {
        ck.validate()?;
        if !(config.tick_rate_hz > 0.0) {
            return Err(Error::InvalidParams("tick rate must be > 0".into()));
        }
        let stepper = Stepper::new(ck.env.clone(), ck.cost)?;
        let init = SteerCommand { epsilon: Some(config.initial_epsilon), v_target: Some(config.initial_v_target), paused: None };
        init.validate(ck.env.v_target_range)?;
        Ok(Self {
            state: env::reset_with_target(config.initial_v_target),
            epsilon: config.initial_epsilon,
            window: VecDeque::new(),
            window_len: (config.tick_rate_hz.round() as usize).max(1),
            window_sum: 0.0,
            mailbox: Arc::new(Mutex::new(Mailbox::default())),
            ck,
            stepper,
            config,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ck
    }

    pub fn config(&self) -> SteerConfig {
        self.config
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Queues a command; later commands overwrite earlier ones field by field.
    pub fn submit(&self, cmd: SteerCommand) -> Result<Ack> {
        submit(&self.mailbox, cmd, self.ck.env.v_target_range)
    }

    pub fn is_paused(&self) -> bool {
        self.mailbox.lock().paused
    }

    /// Drains the mailbox and advances one step. Returns `None` while paused.
    pub fn tick(&mut self) -> Result<Option<TelemetryFrame>> {
        let (cmd, tick) = {
            let mut mb = self.mailbox.lock();
            let cmd = std::mem::take(&mut mb.pending);
            if let Some(p) = cmd.paused {
                mb.paused = p;
            }
            if mb.paused {
                // keep value changes for the resume tick
                mb.pending = SteerCommand { paused: None, ..cmd };
                return Ok(None);
            }
            let t = mb.next_tick;
            mb.next_tick += 1;
            (cmd, t)
        };
        if let Some(e) = cmd.epsilon {
            self.epsilon = e;
        }
        if let Some(v) = cmd.v_target {
            self.state.v_target = v;
        }
        let eps = ConstraintLevel::new(self.epsilon)?;
        let action = agent::act_deterministic(&self.state.observation(), eps, &self.ck.policy, self.ck.conditioning)?;
        let (next, tr) = self.stepper.step(&self.state, action)?;
        self.window.push_back(tr.cost);
        self.window_sum += tr.cost;
        if self.window.len() > self.window_len {
            self.window_sum -= self.window.pop_front().unwrap_or(0.0);
        }
        let rolling = (self.window_sum / self.window.len() as f64).clamp(0.0, 1.0);
        let frame = TelemetryFrame {
            tick,
            v: next.v,
            v_target: next.v_target,
            epsilon: self.epsilon,
            step_cost: tr.cost,
            rolling_cost: rolling,
            db_proxy: db_proxy(rolling),
            contact: tr.contact,
        };
        self.state = if tr.done { env::reset_with_target(next.v_target) } else { next };
        Ok(Some(frame))
    }
}

fn submit(mailbox: &Mutex<Mailbox>, cmd: SteerCommand, v_range: [f64; 2]) -> Result<Ack> {
    cmd.validate(v_range)?;
    let mut mb = mailbox.lock();
    mb.pending.merge(cmd);
    Ok(Ack { applied_at_tick: mb.next_tick })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: LoopStatus,
    pub checkpoint_hash: String,
    pub method: String,
    pub tick_rate_hz: f64,
    pub realtime: bool,
    pub next_tick: u64,
}

struct Shared {
    mailbox: Arc<Mutex<Mailbox>>,
    status: Mutex<LoopStatus>,
    stop: AtomicBool,
    v_range: [f64; 2],
}

/// A controller running on a dedicated thread.
pub struct SteerService {
    shared: Arc<Shared>,
    tx: broadcast::Sender<TelemetryFrame>,
    thread: Option<JoinHandle<()>>,
    checkpoint_hash: String,
    method: String,
    tick_rate_hz: f64,
    realtime: bool,
}

impl SteerService {
    /// Starts the loop. With `realtime` the loop sleeps to hold the tick rate in
    /// wall-clock time; otherwise it runs as fast as it can.
    pub fn start(controller: Controller, realtime: bool) -> Result<Self> {
        let (tx, _) = broadcast::channel(TELEMETRY_QUEUE);
        let shared = Arc::new(Shared {
            mailbox: controller.mailbox.clone(),
            status: Mutex::new(LoopStatus::Running),
            stop: AtomicBool::new(false),
            v_range: controller.ck.env.v_target_range,
        });
        let checkpoint_hash = controller.ck.hash()?;
        let method = controller.ck.method.label();
        let tick_rate_hz = controller.config.tick_rate_hz;
        let period = Duration::from_secs_f64(1.0 / tick_rate_hz);
        let thread = {
            let shared = shared.clone();
            let tx = tx.clone();
            std::thread::Builder::new().name("steer-loop".into()).spawn(move || run_loop(controller, shared, tx, realtime, period))?
        };
        Ok(Self { shared, tx, thread: Some(thread), checkpoint_hash, method, tick_rate_hz, realtime })
    }

    pub fn command(&self, cmd: SteerCommand) -> Result<Ack> {
        if let LoopStatus::Stopped { reason } = &*self.shared.status.lock() {
            return Err(Error::InvalidCommand { field: "service".into(), reason: format!("loop stopped: {reason}") });
        }
        submit(&self.shared.mailbox, cmd, self.shared.v_range)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<TelemetryFrame> {
        self.tx.subscribe()
    }

    pub fn subscriber_count(&self) -> usize {
        self.tx.receiver_count()
    }

    pub fn health(&self) -> Health {
        Health {
            status: self.shared.status.lock().clone(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            method: self.method.clone(),
            tick_rate_hz: self.tick_rate_hz,
            realtime: self.realtime,
            next_tick: self.shared.mailbox.lock().next_tick,
        }
    }

    pub fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SteerService {
    fn drop(&mut self) {
        self.stop();
    }
}

fn run_loop(mut c: Controller, shared: Arc<Shared>, tx: broadcast::Sender<TelemetryFrame>, realtime: bool, period: Duration) {
    let mut deadline = Instant::now();
    while !shared.stop.load(Ordering::SeqCst) {
        match c.tick() {
            Ok(Some(frame)) => {
                *shared.status.lock() = LoopStatus::Running;
                // no subscribers is not an error
                let _ = tx.send(frame);
            }
            Ok(None) => *shared.status.lock() = LoopStatus::Paused,
            Err(e) => {
                log::error!("steering loop stopped: {e}");
                *shared.status.lock() = LoopStatus::Stopped { reason: e.to_string() };
                return;
            }
        }
        if realtime || c.is_paused() {
            deadline += period;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            } else {
                deadline = now;
            }
        } else {
            std::thread::yield_now();
        }
    }
    *shared.status.lock() = LoopStatus::Stopped { reason: "shut down".into() };
}
