#![allow(dead_code)]

use mfl_core::budget::BudgetConfig;
use mfl_core::eval::{synth_task, SynthTask};
use mfl_core::model::{DataPool, LabelSet};
use mfl_core::orchestrator::{Components, Engine, LowBinding, RunConfig};

/// `pool` samples in the pool plus a quarter as many in the test set.
pub fn task(pool: usize, seed: u64) -> SynthTask {
    synth_task(4, pool + pool / 4, 4.0, 0.0, seed).unwrap()
}

pub fn config(human: u64, llm: u64, rounds: u32, warmstart: u64) -> RunConfig {
    let mut budget = BudgetConfig::new(human + llm, human, llm, rounds).unwrap();
    budget.warmstart = warmstart;
    RunConfig {
        budget,
        pool: "in-memory".into(),
        annotator_low: LowBinding::Noisy,
        learner_epochs: 20,
        ..RunConfig::default()
    }
}

pub fn labels(t: &SynthTask) -> LabelSet {
    LabelSet::new(t.labels.iter().map(|l| l.as_str())).unwrap()
}

pub fn components(config: &RunConfig, t: &SynthTask) -> Components {
    Components::from_config(config, &labels(t), None).unwrap()
}

pub fn engine_with(config: RunConfig, t: &SynthTask, components: Components) -> Engine {
    let pool = DataPool::from_samples(t.pool.clone()).unwrap();
    Engine::new(config, labels(t), pool, t.test.clone(), components).unwrap()
}

pub fn engine(config: RunConfig, t: &SynthTask) -> Engine {
    let c = components(&config, t);
    engine_with(config, t, c)
}
