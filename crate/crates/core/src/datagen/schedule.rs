//! Class schedules: which class ids are learned at which step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKGROUND: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Step-t images never contain pixels of classes learned after step t.
    Disjoint,
    /// Future classes may appear in step-t images (labeled background).
    Overlapped,
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disjoint" => Ok(Scenario::Disjoint),
            "overlapped" | "overlap" => Ok(Scenario::Overlapped),
            other => Err(Error::Config(format!(
                "unknown scenario {other:?} (expected disjoint or overlapped)"
            ))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Disjoint => f.write_str("disjoint"),
            Scenario::Overlapped => f.write_str("overlapped"),
        }
    }
}

/// A CSS setting: either `X-Y` or an explicit list of foreground classes per
/// step (`"5,1,1,1,1,1"`; a single entry gives a one-step schedule).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Setting {
    Increment { initial: usize, increment: usize },
    Explicit(Vec<usize>),
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |part: &str| -> Result<usize> {
            let v: i64 = part.trim().parse().map_err(|_| {
                Error::validation(
                    "datagen",
                    format!("setting {s:?}: {part:?} is not an integer"),
                )
            })?;
            if v <= 0 {
                return Err(Error::validation(
                    "datagen",
                    format!("setting {s:?}: class counts must be >= 1, got {v}"),
                ));
            }
            Ok(v as usize)
        };
        // "X-Y" splits on the first '-' after the first character so "-1" is
        // reported as a non-positive count rather than a parse failure.
        if let Some(pos) = s
            .char_indices()
            .skip(1)
            .find(|&(_, c)| c == '-')
            .map(|(i, _)| i)
        {
            let (x, y) = (&s[..pos], &s[pos + 1..]);
            return Ok(Setting::Increment {
                initial: parse(x)?,
                increment: parse(y)?,
            });
        }
        let sizes = s.split(',').map(parse).collect::<Result<Vec<_>>>()?;
        Ok(Setting::Explicit(sizes))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Increment { initial, increment } => write!(f, "{initial}-{increment}"),
            Setting::Explicit(sizes) => {
                let parts: Vec<String> = sizes.iter().map(usize::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl From<Setting> for String {
    fn from(s: Setting) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Setting {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Ordered, pairwise disjoint class sets `C^1..C^T` partitioning `{0..N}`.
/// Background (id 0) always belongs to `C^1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSchedule {
    total_fg_classes: usize,
    steps: Vec<Vec<u16>>,
    scenario: Scenario,
}

/// Parses a setting and lays out consecutive class-id blocks.
pub fn build_schedule(
    setting: &Setting,
    total_fg_classes: usize,
    scenario: Scenario,
) -> Result<ClassSchedule> {
    if total_fg_classes == 0 {
        return Err(Error::validation(
            "datagen",
            "total foreground classes must be >= 1",
        ));
    }
    if total_fg_classes >= crate::datagen::IGNORE as usize {
        return Err(Error::validation(
            "datagen",
            "too many classes for u16 labels",
        ));
    }
    let sizes: Vec<usize> = match setting {
        Setting::Increment { initial, increment } => {
            let (x, y) = (*initial, *increment);
            if x == 0 || y == 0 {
                return Err(Error::validation("datagen", "X and Y must be >= 1"));
            }
            if x >= total_fg_classes || !(total_fg_classes - x).is_multiple_of(y) {
                return Err(Error::Schedule(format!(
                    "setting {x}-{y} does not fit {total_fg_classes} classes: no k >= 1 with {x} + k*{y} = {total_fg_classes}"
                )));
            }
            let k = (total_fg_classes - x) / y;
            std::iter::once(x)
                .chain(std::iter::repeat_n(y, k))
                .collect()
        }
        Setting::Explicit(sizes) => {
            if sizes.is_empty() || sizes.contains(&0) {
                return Err(Error::validation(
                    "datagen",
                    "explicit step sizes must be >= 1",
                ));
            }
            let sum: usize = sizes.iter().sum();
            if sum != total_fg_classes {
                return Err(Error::Schedule(format!(
                    "explicit step sizes sum to {sum}, expected {total_fg_classes}"
                )));
            }
            sizes.clone()
        }
    };

    let mut steps = Vec::with_capacity(sizes.len());
    let mut next = 1u16;
    for (i, &n) in sizes.iter().enumerate() {
        let mut set = Vec::with_capacity(n + 1);
        if i == 0 {
            set.push(BACKGROUND);
        }
        set.extend(next..next + n as u16);
        next += n as u16;
        steps.push(set);
    }
    Ok(ClassSchedule {
        total_fg_classes,
        steps,
        scenario,
    })
}

impl ClassSchedule {
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn total_fg_classes(&self) -> usize {
        self.total_fg_classes
    }

    /// `N + 1`: foreground classes plus background.
    pub fn num_classes(&self) -> usize {
        self.total_fg_classes + 1
    }

    pub fn scenario(&self) -> Scenario {
        self.scenario
    }

    /// Class ids of step `t` (1-based), ascending.
    pub fn classes_at(&self, step: usize) -> &[u16] {
        &self.steps[step - 1]
    }

    pub fn steps(&self) -> &[Vec<u16>] {
        &self.steps
    }

    /// Number of classes in `C^{1:t}`. Ids are contiguous, so `C^{1:t}` is
    /// exactly `0..seen_classes(t)`.
    pub fn seen_classes(&self, step: usize) -> usize {
        self.steps[..step].iter().map(Vec::len).sum()
    }

    /// Ids in `C^{from:to}` (1-based, inclusive); empty when `from > to`.
    pub fn classes_between(&self, from: usize, to: usize) -> Vec<u16> {
        if from > to || from > self.steps.len() {
            return Vec::new();
        }
        self.steps[from - 1..to.min(self.steps.len())].concat()
    }

    pub fn step_of(&self, class: u16) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| s.contains(&class))
            .map(|i| i + 1)
    }

    /// The same classes learned in a single step (used by joint training).
    pub fn collapsed(&self) -> ClassSchedule {
        ClassSchedule {
            total_fg_classes: self.total_fg_classes,
            steps: vec![self.steps.concat()],
            scenario: self.scenario,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xy(s: &str) -> Setting {
        s.parse().unwrap()
    }

    #[test]
    fn ten_one_on_twenty() {
        let s = build_schedule(&xy("10-1"), 20, Scenario::Overlapped).unwrap();
        assert_eq!(s.num_steps(), 11);
        assert_eq!(s.classes_at(1), (0..=10).collect::<Vec<u16>>().as_slice());
        for t in 2..=11 {
            assert_eq!(s.classes_at(t), &[(t + 9) as u16]);
        }
    }

    #[test]
    fn nineteen_one_is_two_steps() {
        let s = build_schedule(&xy("19-1"), 20, Scenario::Overlapped).unwrap();
        assert_eq!(s.num_steps(), 2);
    }

    #[test]
    fn non_divisible_remainder_is_schedule_error() {
        let err = build_schedule(&xy("15-2"), 20, Scenario::Overlapped).unwrap_err();
        assert!(matches!(err, Error::Schedule(_)), "{err}");
    }

    #[test]
    fn non_positive_counts_are_validation_errors() {
        assert!(matches!(
            "0-1".parse::<Setting>(),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            "5-0".parse::<Setting>(),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            "5--1".parse::<Setting>(),
            Err(Error::Validation { .. })
        ));
        assert!(matches!(
            "-1".parse::<Setting>(),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn explicit_single_step() {
        let s = build_schedule(&xy("10"), 10, Scenario::Overlapped).unwrap();
        assert_eq!(s.num_steps(), 1);
        assert_eq!(s.seen_classes(1), 11);
        assert_eq!(xy("5,3,2").to_string(), "5,3,2");
    }

    #[test]
    fn class_range_helpers() {
        let s = build_schedule(&xy("5-1"), 10, Scenario::Overlapped).unwrap();
        assert_eq!(s.classes_between(4, 6), vec![8, 9, 10]);
        assert!(s.classes_between(7, 6).is_empty());
        assert_eq!(s.step_of(0), Some(1));
        assert_eq!(s.step_of(7), Some(3));
        assert_eq!(s.seen_classes(2), 7);
    }

    proptest! {
        #[test]
        fn schedules_partition_all_classes(x in 1usize..30, y in 1usize..8, k in 1usize..8) {
            let n = x + k * y;
            let s = build_schedule(&Setting::Increment { initial: x, increment: y }, n, Scenario::Disjoint).unwrap();
            prop_assert_eq!(s.num_steps(), 1 + k);
            prop_assert!(s.classes_at(1).contains(&BACKGROUND));
            prop_assert_eq!(s.classes_at(1).len(), x + 1);
            let mut all: Vec<u16> = s.steps().concat();
            for t in 2..=s.num_steps() {
                prop_assert_eq!(s.classes_at(t).len(), y);
            }
            all.sort_unstable();
            let expect: Vec<u16> = (0..=n as u16).collect();
            prop_assert_eq!(all, expect);
        }
    }
}
