//! The full learning pipeline in one call: collect plans, learn the
//! hallucination, build the dataset and train a planner. Used for the
//! history-length and static-obstacle ablations.

use serde::{Deserialize, Serialize};

use crate::dataset::{augment, collect_open_space_plans, generate_dataset, AugmentConfig, CollectConfig, Dataset, DatasetConfig};
use crate::error::Result;
use crate::halluc::{train_hallucination, HallucConfig, HallucTraining};
use crate::planner::{train_planner, PlannerConfig, PlannerTraining};
use crate::rng::derive_seed;
use crate::world::MotionPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Velocities of hallucinated obstacles forced to zero.
    pub static_obstacles: bool,
    pub collect: CollectConfig,
    pub halluc: HallucConfig,
    pub dataset: DatasetConfig,
    pub augment: Option<AugmentConfig>,
    pub planner: PlannerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            static_obstacles: false,
            collect: CollectConfig::default(),
            halluc: HallucConfig::default(),
            dataset: DatasetConfig::default(),
            augment: Some(AugmentConfig::default()),
            planner: PlannerConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Stage configs with seeds derived from `seed` and the static flag
    /// applied.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.collect.seed = derive_seed(self.seed, &[1]);
        c.halluc.seed = derive_seed(self.seed, &[2]);
        c.dataset.seed = derive_seed(self.seed, &[3]);
        if let Some(a) = c.augment.as_mut() {
            a.seed = derive_seed(self.seed, &[4]);
        }
        c.planner.seed = derive_seed(self.seed, &[5]);
        c.halluc.static_obstacles = self.static_obstacles;
        c.dataset.static_obstacles = self.static_obstacles;
        c.halluc.obstacles = c.dataset.obstacles;
        c
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub plans: Vec<MotionPlan>,
    pub halluc: HallucTraining,
    pub dataset: Dataset,
    pub planner: PlannerTraining,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let c = cfg.resolved();
    let plans = collect_open_space_plans(&c.collect)?;
    let halluc = train_hallucination(&plans, &c.halluc, None)?;
    let mut dataset = generate_dataset(&plans, &halluc.weights, &c.dataset)?;
    if let Some(a) = &c.augment {
        dataset = augment(&dataset, &plans, a)?;
    }
    let planner = train_planner(&dataset, &c.planner)?;
    Ok(PipelineOutput { config: c, plans, halluc, dataset, planner })
}
