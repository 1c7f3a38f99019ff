use alloc::vec;
use alloc::vec::Vec;

use super::{StepOutcome, TeamEvents};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ShapingKind {
    /// Team holds the carrier token this step.
    Holding,
    /// Team scored after a completed pass in the same possession.
    PassBeforeGoal,
    /// Two teammates on the same or neighbouring cells.
    Grouping,
}

/// Dense bonus added to a team's reward whenever its trigger fires.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ShapingRule {
    pub kind: ShapingKind,
    pub magnitude: f64,
}

impl ShapingRule {
    pub fn triggered(&self, ev: &TeamEvents) -> bool {
        match self.kind {
            ShapingKind::Holding => ev.holding,
            ShapingKind::PassBeforeGoal => ev.pass_before_goal,
            ShapingKind::Grouping => ev.grouped,
        }
    }
}

pub fn default_goalrush_rules() -> Vec<ShapingRule> {
    vec![
        ShapingRule {
            kind: ShapingKind::Holding,
            magnitude: 0.0001,
        },
        ShapingRule {
            kind: ShapingKind::PassBeforeGoal,
            magnitude: 0.05,
        },
        ShapingRule {
            kind: ShapingKind::Grouping,
            magnitude: -0.001,
        },
    ]
}

/// Adds each team's triggered bonuses and mirrors them so the game stays
/// zero-sum: team 0 gets `base + own bonus − opponent bonus`, team 1 the
/// negation.
pub fn shape_rewards(mut outcome: StepOutcome, rules: &[ShapingRule]) -> StepOutcome {
    let mut bonus = [0.0; 2];
    for (t, b) in bonus.iter_mut().enumerate() {
        for rule in rules {
            if rule.triggered(&outcome.events[t]) {
                *b += rule.magnitude;
            }
        }
    }
    let r0 = outcome.base_rewards[0] + bonus[0] - bonus[1];
    outcome.rewards = [r0, -r0];
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TeamView;

    fn outcome(events: [TeamEvents; 2], base: f64) -> StepOutcome {
        let v = TeamView {
            obs: Vec::new(),
            global: Vec::new(),
            masks: vec![true],
        };
        StepOutcome {
            teams: [v.clone(), v],
            base_rewards: [base, -base],
            rewards: [base, -base],
            done: false,
            result: None,
            step: 1,
            events,
        }
    }

    #[test]
    fn no_rules_leaves_rewards() {
        let o = shape_rewards(outcome([TeamEvents::default(); 2], 1.0), &[]);
        assert_eq!(o.rewards, [1.0, -1.0]);
        assert_eq!(o.rewards[0] + o.rewards[1], 0.0);
    }

    #[test]
    fn grouping_penalty_is_mirrored() {
        let ev = TeamEvents {
            grouped: true,
            ..TeamEvents::default()
        };
        let o = shape_rewards(outcome([ev, TeamEvents::default()], 0.0), &default_goalrush_rules());
        assert_eq!(o.rewards, [-0.001, 0.001]);
    }

    #[test]
    fn both_teams_bonuses_cancel_symmetrically() {
        let ev = TeamEvents {
            grouped: true,
            holding: false,
            pass_before_goal: false,
        };
        let o = shape_rewards(outcome([ev, ev], 0.0), &default_goalrush_rules());
        assert_eq!(o.rewards, [0.0, 0.0]);
    }
}
