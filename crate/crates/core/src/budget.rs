//! Per-round annotation budgets and termination.
//!
//! Human budgets decay geometrically (`ceil(B_H / 2^r)` per round, the residual
//! folded into the last round). LLM budgets are flat at `floor(B_G / R)` with
//! the remainder in the last round.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// Geometric human-budget decay.
    #[default]
    Variable,
    /// `B_H / R` every round (ablation baseline).
    Equal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub total: u64,
    pub human: u64,
    pub llm: u64,
    pub rounds: u32,
    /// Size of the warm-start set `A_H^0`; not drawn from `human`.
    pub warmstart: u64,
    pub max_finetune_rounds: u32,
    #[serde(default)]
    pub schedule: ScheduleKind,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BudgetError {
    #[error("budget.total ({total}) must equal budget.human ({human}) + budget.llm ({llm})")]
    Unbalanced { total: u64, human: u64, llm: u64 },
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("ledger integrity: {0}")]
    Integrity(String),
}

impl BudgetConfig {
    pub fn new(total: u64, human: u64, llm: u64, rounds: u32) -> Result<Self, BudgetError> {
        let cfg = BudgetConfig {
            total,
            human,
            llm,
            rounds,
            warmstart: 0,
            max_finetune_rounds: rounds,
            schedule: ScheduleKind::Variable,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if self.human.checked_add(self.llm) != Some(self.total) {
            return Err(BudgetError::Unbalanced {
                total: self.total,
                human: self.human,
                llm: self.llm,
            });
        }
        if self.rounds == 0 {
            return Err(BudgetError::NoRounds);
        }
        Ok(())
    }

    pub fn human_schedule(&self) -> Vec<u64> {
        match self.schedule {
            ScheduleKind::Variable => human_schedule(self.human, self.rounds),
            ScheduleKind::Equal => llm_schedule(self.human, self.rounds),
        }
    }

    pub fn llm_schedule(&self) -> Vec<u64> {
        llm_schedule(self.llm, self.rounds)
    }
}

/// Geometric human budget: round `r < R` gets `ceil(B_H / 2^r)`, the last
/// round gets whatever is left so the schedule sums to `B_H`.
///
/// For tiny budgets the ceilings alone can exceed `B_H` (e.g. `B_H = 1`), so
/// each round is capped by the budget still unallocated.
pub fn human_schedule(budget: u64, rounds: u32) -> Vec<u64> {
    assert!(rounds >= 1, "rounds must be at least 1");
    let mut out = Vec::with_capacity(rounds as usize);
    let mut remaining = budget;
    for r in 1..rounds {
        let share = ceil_div_pow2(budget, r).min(remaining);
        remaining -= share;
        out.push(share);
    }
    out.push(remaining);
    out
}

fn ceil_div_pow2(value: u64, exp: u32) -> u64 {
    if exp >= 64 {
        return u64::from(value > 0);
    }
    let denom = 1u64 << exp;
    value / denom + u64::from(value % denom != 0)
}

/// Flat schedule: `floor(B / R)` per round, remainder absorbed by the last.
pub fn llm_schedule(budget: u64, rounds: u32) -> Vec<u64> {
    assert!(rounds >= 1, "rounds must be at least 1");
    let base = budget / u64::from(rounds);
    let mut out = vec![base; rounds as usize];
    *out.last_mut().unwrap() += budget - base * u64::from(rounds);
    out
}

/// Running totals of human + LLM allocations.
pub fn cumulative(human: &[u64], llm: &[u64]) -> Vec<u64> {
    assert_eq!(human.len(), llm.len(), "schedules must cover the same rounds");
    human
        .iter()
        .zip(llm)
        .scan(0u64, |acc, (h, g)| {
            *acc += h + g;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Continue,
    BudgetExhausted,
    ComputeExhausted,
}

/// Budget bookkeeping for one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub config: BudgetConfig,
    pub human_schedule: Vec<u64>,
    pub llm_schedule: Vec<u64>,
    pub spent_human: u64,
    pub spent_llm: u64,
    pub rounds_run: u32,
    /// Unspent budget from the previous round, added to the next LLM allocation.
    pub llm_carry: u64,
    /// Everything ever rolled over, for the spent-llm bound.
    pub rolled_over: u64,
    pub warmstart_spent: u64,
}

/// Allocation for a single round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundBudget {
    pub human: u64,
    pub llm: u64,
}

impl RoundBudget {
    pub fn total(&self) -> u64 {
        self.human + self.llm
    }
}

impl BudgetLedger {
    pub fn new(config: BudgetConfig) -> Result<Self, BudgetError> {
        config.validate()?;
        Ok(BudgetLedger {
            human_schedule: config.human_schedule(),
            llm_schedule: config.llm_schedule(),
            config,
            spent_human: 0,
            spent_llm: 0,
            rounds_run: 0,
            llm_carry: 0,
            rolled_over: 0,
            warmstart_spent: 0,
        })
    }

    pub fn spent(&self) -> u64 {
        self.spent_human + self.spent_llm
    }

    /// Allocation for 1-indexed round `r`, including any rollover.
    pub fn allocation(&self, round: u32) -> RoundBudget {
        let i = (round as usize).saturating_sub(1);
        RoundBudget {
            human: self.human_schedule.get(i).copied().unwrap_or(0),
            llm: self.llm_schedule.get(i).copied().unwrap_or(0) + self.llm_carry,
        }
    }

    /// Record what a round actually spent. Anything allocated but not spent
    /// becomes next round's LLM carry (lost after the last round).
    pub fn record_round(&mut self, round: u32, human_spent: u64, llm_spent: u64) {
        let alloc = self.allocation(round);
        debug_assert!(human_spent <= alloc.human && llm_spent <= alloc.llm);
        self.spent_human += human_spent;
        self.spent_llm += llm_spent;
        self.rounds_run += 1;
        let unspent = alloc.total() - human_spent - llm_spent;
        self.llm_carry = if round < self.config.rounds { unspent } else { 0 };
        self.rolled_over += self.llm_carry;
    }

    pub fn check_integrity(&self) -> Result<(), BudgetError> {
        self.config.validate()?;
        let c = &self.config;
        let fail = |m: String| Err(BudgetError::Integrity(m));
        if self.human_schedule.iter().sum::<u64>() != c.human
            || self.llm_schedule.iter().sum::<u64>() != c.llm
        {
            return fail("schedules do not sum to their budgets".into());
        }
        if self.human_schedule.len() != c.rounds as usize || self.llm_schedule.len() != c.rounds as usize {
            return fail("schedule length differs from rounds".into());
        }
        if self.spent_human > c.human {
            return fail(format!("spent_human {} exceeds budget.human {}", self.spent_human, c.human));
        }
        if self.spent_llm > c.llm + self.rolled_over {
            return fail(format!("spent_llm {} exceeds budget.llm {} plus rollover {}", self.spent_llm, c.llm, self.rolled_over));
        }
        if self.spent() > c.total {
            return fail(format!("spent {} exceeds budget.total {}", self.spent(), c.total));
        }
        if self.rounds_run > c.rounds {
            return fail(format!("rounds_run {} exceeds rounds {}", self.rounds_run, c.rounds));
        }
        Ok(())
    }
}

/// Budget exhaustion wins over compute exhaustion when both hold.
pub fn should_terminate(ledger: &BudgetLedger) -> Termination {
    if ledger.spent() >= ledger.config.total {
        Termination::BudgetExhausted
    } else if ledger.rounds_run >= ledger.config.max_finetune_rounds {
        Termination::ComputeExhausted
    } else {
        Termination::Continue
    }
}
