//! Baseline and learned planners behind the common [`Planner`] interface.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dwa::{dwa_plan, DwaConfig};
use super::{Observation, Planner};
use crate::error::Result;
use crate::planner::PlannerWeights;
use crate::safety::{lookahead_goal, Controller, SafetyConfig, SafetyMonitor};
use crate::world::{ControlAction, RobotLimits};

#[derive(Debug, Clone)]
pub enum PlannerSpec {
    /// Never moves.
    Stop,
    /// Full speed toward the goal, ignoring obstacles.
    Straight,
    /// Uniform random admissible action each tick.
    Random,
    Dwa(DwaConfig),
    Learned { id: String, weights: Arc<PlannerWeights> },
}

impl PlannerSpec {
    pub fn id(&self) -> String {
        match self {
            PlannerSpec::Stop => "stop".into(),
            PlannerSpec::Straight => "straight".into(),
            PlannerSpec::Random => "random".into(),
            PlannerSpec::Dwa(_) => "dwa".into(),
            PlannerSpec::Learned { id, .. } => id.clone(),
        }
    }
}

pub fn build_planner(spec: &PlannerSpec) -> Result<Box<dyn Planner>> {
    Ok(match spec {
        PlannerSpec::Stop => Box::new(StopPlanner),
        PlannerSpec::Straight => Box::new(ScriptedPlanner::default()),
        PlannerSpec::Random => Box::new(RandomPlanner::new()),
        PlannerSpec::Dwa(cfg) => {
            cfg.validate()?;
            Box::new(DwaPlanner::new(*cfg))
        }
        PlannerSpec::Learned { id, weights } => Box::new(LearnedPlanner::new(id.clone(), weights.as_ref().clone())?),
    })
}

fn off() -> SafetyConfig {
    SafetyConfig {
        enabled: false,
        ..SafetyConfig::default()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StopPlanner;

impl Planner for StopPlanner {
    fn id(&self) -> String {
        "stop".into()
    }

    fn reset(&mut self, _seed: u64, _safety: SafetyConfig) {}

    fn act(&mut self, _obs: &Observation<'_>) -> Result<ControlAction> {
        Ok(ControlAction::stop())
    }
}

/// Drives at `speed` and turns proportionally toward the goal.
#[derive(Debug, Clone)]
pub struct ScriptedPlanner {
    pub speed: f64,
    pub gain: f64,
    monitor: SafetyMonitor,
}

impl Default for ScriptedPlanner {
    fn default() -> Self {
        Self {
            speed: 1.0,
            gain: 2.0,
            monitor: SafetyMonitor::new(off()),
        }
    }
}

impl Planner for ScriptedPlanner {
    fn id(&self) -> String {
        "straight".into()
    }

    fn reset(&mut self, _seed: u64, safety: SafetyConfig) {
        self.monitor = SafetyMonitor::new(safety);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<ControlAction> {
        let g = obs.pose.to_local(obs.goal);
        let w = (self.gain * g[1].atan2(g[0])).clamp(-RobotLimits::default().w_max, RobotLimits::default().w_max);
        self.monitor.apply(obs.pose, obs.scan, ControlAction::new(self.speed, w))
    }
}

#[derive(Debug, Clone)]
pub struct RandomPlanner {
    rng: ChaCha8Rng,
    monitor: SafetyMonitor,
}

impl RandomPlanner {
    pub fn new() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            monitor: SafetyMonitor::new(off()),
        }
    }
}

impl Default for RandomPlanner {
    fn default() -> Self {
        Self::new()
    }
}

impl Planner for RandomPlanner {
    fn id(&self) -> String {
        "random".into()
    }

    fn reset(&mut self, seed: u64, safety: SafetyConfig) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.monitor = SafetyMonitor::new(safety);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<ControlAction> {
        let lim = RobotLimits::default();
        let u = ControlAction::new(self.rng.random_range(0.0..=lim.v_max), self.rng.random_range(-lim.w_max..=lim.w_max));
        self.monitor.apply(obs.pose, obs.scan, u)
    }
}

#[derive(Debug, Clone)]
pub struct DwaPlanner {
    pub cfg: DwaConfig,
    pub goal_ahead: f64,
    current: ControlAction,
    monitor: SafetyMonitor,
}

impl DwaPlanner {
    pub fn new(cfg: DwaConfig) -> Self {
        Self {
            cfg,
            goal_ahead: 2.5,
            current: ControlAction::stop(),
            monitor: SafetyMonitor::new(off()),
        }
    }
}

impl Planner for DwaPlanner {
    fn id(&self) -> String {
        "dwa".into()
    }

    fn reset(&mut self, _seed: u64, safety: SafetyConfig) {
        self.current = ControlAction::stop();
        self.monitor = SafetyMonitor::new(safety);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<ControlAction> {
        let dir = lookahead_goal(&obs.pose, obs.start, obs.goal, self.goal_ahead);
        let remaining = crate::world::dist(obs.pose.position(), obs.goal).min(self.goal_ahead);
        let goal = [dir[0] * remaining, dir[1] * remaining];
        let u = dwa_plan(&obs.scan.points(), goal, self.current, &self.cfg).action;
        let u = self.monitor.apply(obs.pose, obs.scan, u)?;
        self.current = u;
        Ok(u)
    }
}

/// A trained scan-history planner run through [`Controller`].
#[derive(Debug, Clone)]
pub struct LearnedPlanner {
    id: String,
    controller: Controller,
}

impl LearnedPlanner {
    pub fn new(id: String, weights: PlannerWeights) -> Result<Self> {
        Ok(Self {
            id,
            controller: Controller::new(weights, off())?,
        })
    }
}

impl Planner for LearnedPlanner {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn reset(&mut self, _seed: u64, safety: SafetyConfig) {
        self.controller.reset();
        self.controller.safety = safety;
    }

    fn act(&mut self, obs: &Observation<'_>) -> Result<ControlAction> {
        Ok(self
            .controller
            .control_step(obs.pose, obs.scan.clone(), obs.start, obs.goal)?
            .action)
    }
}
