//! Per-iteration conditioning schedules for SWITCH and ALTERNATE.
//!
//! Iterations are indexed in execution order: index 0 is the first denoising
//! iteration (the noisiest timestep). A SWITCH at `m` conditions the first `m`
//! iterations on the first prompt and the rest on the second.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptSelector {
    P1,
    P2,
}

impl PromptSelector {
    pub fn as_char(self) -> char {
        match self {
            PromptSelector::P1 => '1',
            PromptSelector::P2 => '2',
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            PromptSelector::P1 => PromptSelector::P2,
            PromptSelector::P2 => PromptSelector::P1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScheduleKind {
    Switch,
    Alternate,
    Constant,
}

/// The parameters a schedule was generated from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScheduleParams {
    Switch { switch_step: usize },
    Period { period: usize },
    Ratio { ratio_p1: f64 },
    Constant { selector: PromptSelector },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningSchedule {
    selections: Vec<PromptSelector>,
    kind: ScheduleKind,
    params: ScheduleParams,
}

fn check_steps(total_steps: usize) -> Result<()> {
    if total_steps == 0 {
        return Err(Error::InvalidConfig("schedule needs at least one step".into()));
    }
    Ok(())
}

fn check_ratio(ratio_p1: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio_p1) {
        return Err(Error::OutOfRange {
            name: "ratio",
            value: ratio_p1,
            range: "[0, 1]",
        });
    }
    Ok(())
}

/// `round(ratio * total)` with ties away from zero.
pub fn ratio_count(total: usize, ratio_p1: f64) -> Result<usize> {
    check_ratio(ratio_p1)?;
    Ok(((ratio_p1 * total as f64).round() as usize).min(total))
}

/// First `switch_step` iterations on P1, remaining iterations on P2.
pub fn make_switch_schedule(total_steps: usize, switch_step: usize) -> Result<ConditioningSchedule> {
    check_steps(total_steps)?;
    if switch_step > total_steps {
        return Err(Error::OutOfRange {
            name: "switch_step",
            value: switch_step as f64,
            range: "[0, total_steps]",
        });
    }
    let selections = (0..total_steps)
        .map(|i| {
            if i < switch_step {
                PromptSelector::P1
            } else {
                PromptSelector::P2
            }
        })
        .collect();
    Ok(ConditioningSchedule {
        selections,
        kind: ScheduleKind::Switch,
        params: ScheduleParams::Switch { switch_step },
    })
}

/// SWITCH whose changeover is `round(ratio * total_steps)`.
pub fn make_switch_schedule_from_ratio(total_steps: usize, ratio_p1: f64) -> Result<ConditioningSchedule> {
    make_switch_schedule(total_steps, ratio_count(total_steps, ratio_p1)?)
}

/// Iteration `i` (0-based) selects P1 iff `i % period == 0`. `period = 2`
/// gives P1 on even iterations and P2 on odd ones.
pub fn make_alternate_schedule(total_steps: usize, period: usize) -> Result<ConditioningSchedule> {
    check_steps(total_steps)?;
    if period < 2 {
        return Err(Error::OutOfRange {
            name: "period",
            value: period as f64,
            range: "[2, inf)",
        });
    }
    let selections = (0..total_steps)
        .map(|i| {
            if i % period == 0 {
                PromptSelector::P1
            } else {
                PromptSelector::P2
            }
        })
        .collect();
    Ok(ConditioningSchedule {
        selections,
        kind: ScheduleKind::Alternate,
        params: ScheduleParams::Period { period },
    })
}

/// Interleaved schedule with exactly `round(ratio * total_steps)` P1
/// iterations, spread as evenly as possible.
///
/// An error accumulator advances by the P1 count each iteration (mod
/// `total_steps`); iteration `i` selects P1 iff `(i * count) % total_steps < count`.
pub fn make_ratio_schedule(total_steps: usize, ratio_p1: f64) -> Result<ConditioningSchedule> {
    check_steps(total_steps)?;
    let count = ratio_count(total_steps, ratio_p1)?;
    let mut acc = 0usize;
    let mut selections = Vec::with_capacity(total_steps);
    for _ in 0..total_steps {
        selections.push(if acc < count {
            PromptSelector::P1
        } else {
            PromptSelector::P2
        });
        acc = (acc + count) % total_steps;
    }
    Ok(ConditioningSchedule {
        selections,
        kind: ScheduleKind::Alternate,
        params: ScheduleParams::Ratio { ratio_p1 },
    })
}

pub fn make_constant_schedule(total_steps: usize, selector: PromptSelector) -> Result<ConditioningSchedule> {
    check_steps(total_steps)?;
    Ok(ConditioningSchedule {
        selections: vec![selector; total_steps],
        kind: ScheduleKind::Constant,
        params: ScheduleParams::Constant { selector },
    })
}

impl ConditioningSchedule {
    pub fn total_steps(&self) -> usize {
        self.selections.len()
    }

    pub fn selections(&self) -> &[PromptSelector] {
        &self.selections
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn params(&self) -> ScheduleParams {
        self.params
    }

    /// Selector for 0-based iteration `step`.
    pub fn selector_at(&self, step: usize) -> PromptSelector {
        self.selections[step]
    }

    pub fn count(&self, selector: PromptSelector) -> usize {
        self.selections.iter().filter(|&&s| s == selector).count()
    }

    /// Fraction of iterations conditioned on P1.
    pub fn ratio_of(&self) -> f64 {
        self.count(PromptSelector::P1) as f64 / self.total_steps() as f64
    }

    /// Selector string as written to manifests, e.g. `"1111112222..."`.
    pub fn selector_string(&self) -> String {
        self.selections.iter().map(|s| s.as_char()).collect()
    }

    pub fn longest_run(&self) -> usize {
        longest_run(&self.selections)
    }
}

impl fmt::Display for ConditioningSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.selector_string())
    }
}

/// Parses a selector string back into a sequence of selectors.
pub fn parse_selector_string(s: &str) -> Result<Vec<PromptSelector>> {
    s.chars()
        .map(|c| match c {
            '1' => Ok(PromptSelector::P1),
            '2' => Ok(PromptSelector::P2),
            other => Err(Error::Parse(format!("unexpected selector {other:?}"))),
        })
        .collect()
}

impl FromStr for PromptSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "P1" | "p1" => Ok(PromptSelector::P1),
            "2" | "P2" | "p2" => Ok(PromptSelector::P2),
            other => Err(Error::Parse(format!("unknown selector {other:?}"))),
        }
    }
}

pub(crate) fn longest_run<T: PartialEq>(items: &[T]) -> usize {
    let mut best = 0;
    let mut current = 0;
    for (i, item) in items.iter().enumerate() {
        if i > 0 && items[i - 1] == *item {
            current += 1;
        } else {
            current = 1;
        }
        best = best.max(current);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use PromptSelector::{P1, P2};

    #[test]
    fn switch_examples() {
        let s = make_switch_schedule(25, 6).unwrap();
        assert_eq!(s.selector_string(), format!("{}{}", "1".repeat(6), "2".repeat(19)));
        assert_eq!(s.kind(), ScheduleKind::Switch);
        assert_eq!(make_switch_schedule(25, 25).unwrap().count(P1), 25);
        assert_eq!(make_switch_schedule(25, 0).unwrap().count(P2), 25);
        assert!(make_switch_schedule(25, 26).is_err());
        assert!(make_switch_schedule(0, 0).is_err());
    }

    #[test]
    fn alternate_examples() {
        let s = make_alternate_schedule(25, 2).unwrap();
        assert_eq!(s.count(P1), 13);
        assert_eq!(s.count(P2), 12);
        for i in (0..25).step_by(2) {
            assert_eq!(s.selector_at(i), P1);
        }
        assert_eq!(make_alternate_schedule(1, 2).unwrap().selections(), &[P1]);
        assert_eq!(make_alternate_schedule(6, 3).unwrap().selections(), &[P1, P2, P2, P1, P2, P2]);
        assert!(make_alternate_schedule(10, 1).is_err());
        assert!(make_alternate_schedule(10, 0).is_err());
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(make_ratio_schedule(25, 0.6).unwrap().count(P1), 15);
        assert_eq!(make_ratio_schedule(25, 1.0).unwrap().count(P1), 25);
        // Accumulator by hand: acc 0 -> P1, 2 -> P2, 0 -> P1, 2 -> P2.
        assert_eq!(make_ratio_schedule(4, 0.5).unwrap().selections(), &[P1, P2, P1, P2]);
        assert!(make_ratio_schedule(4, 1.5).is_err());
        assert!(make_ratio_schedule(4, f64::NAN).is_err());
    }

    #[test]
    fn ratio_half_on_odd_length_matches_parity_schedule() {
        assert_eq!(
            make_ratio_schedule(25, 0.5).unwrap().selections(),
            make_alternate_schedule(25, 2).unwrap().selections()
        );
    }

    #[test]
    fn ratio_of_examples() {
        assert_eq!(make_switch_schedule(25, 6).unwrap().ratio_of(), 0.24);
        assert_eq!(make_alternate_schedule(25, 2).unwrap().ratio_of(), 0.52);
        assert_eq!(make_constant_schedule(25, P1).unwrap().ratio_of(), 1.0);
    }

    #[test]
    fn selector_string_round_trips() {
        let s = make_alternate_schedule(7, 3).unwrap();
        assert_eq!(s.selector_string(), "1221221");
        assert_eq!(parse_selector_string(&s.selector_string()).unwrap(), s.selections());
        assert!(parse_selector_string("12x").is_err());
    }

    proptest! {
        #[test]
        fn switch_is_sorted_prefix(t in 1usize..=64, frac in 0.0f64..=1.0) {
            let m = ((t as f64) * frac).floor() as usize;
            let s = make_switch_schedule(t, m).unwrap();
            prop_assert_eq!(s.total_steps(), t);
            prop_assert_eq!(s.count(P1), m);
            let changes = s.selections().windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert!(changes <= 1);
            prop_assert!(s.selections().windows(2).all(|w| !(w[0] == P2 && w[1] == P1)));
        }

        #[test]
        fn ratio_count_and_spread(t in 1usize..=64, r in 0.0f64..=1.0) {
            let s = make_ratio_schedule(t, r).unwrap();
            let c1 = s.count(P1);
            let c2 = s.count(P2);
            prop_assert_eq!(s.total_steps(), t);
            prop_assert!((c1 as f64 - r * t as f64).abs() <= 0.5 + 1e-9);
            if c1 > 0 && c2 > 0 {
                let bound = t.div_ceil(c1.min(c2));
                prop_assert!(s.longest_run() <= bound, "run {} > {}", s.longest_run(), bound);
            }
        }

        #[test]
        fn schedules_are_pure(t in 1usize..=64, r in 0.0f64..=1.0) {
            prop_assert_eq!(make_ratio_schedule(t, r).unwrap(), make_ratio_schedule(t, r).unwrap());
        }

        #[test]
        fn parity_and_ratio_agree_on_count(t in 1usize..=64) {
            let alt = make_alternate_schedule(t, 2).unwrap();
            let ratio = make_ratio_schedule(t, t.div_ceil(2) as f64 / t as f64).unwrap();
            prop_assert_eq!(alt.count(P1), t.div_ceil(2));
            prop_assert_eq!(ratio.count(P1), t.div_ceil(2));
        }
    }
}
