//! Synthetic-year calendar: contiguous training periods in the first nine
//! months and a held-out test window at the end of the year.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

const MONTH_DAYS: [usize; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

/// Months available for training (January through September).
pub const TRAINING_MONTHS: usize = 9;

/// Inclusive day range, 1-based within the year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DayRange {
    pub start: usize,
    pub end: usize,
}

impl DayRange {
    pub fn days(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn overlaps(&self, other: &DayRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// First day of month `m` (1-based).
pub fn month_start(m: usize) -> usize {
    1 + MONTH_DAYS[..m - 1].iter().sum::<usize>()
}

/// Days covered by months `first..first + months`.
pub fn month_span(first: usize, months: usize) -> DayRange {
    let start = month_start(first);
    let len: usize = MONTH_DAYS[first - 1..first - 1 + months].iter().sum();
    DayRange {
        start,
        end: start + len - 1,
    }
}

/// Default held-out window: October through December, 92 days.
pub fn test_window() -> DayRange {
    DayRange {
        start: month_start(10),
        end: 365,
    }
}

/// Training period `index` of `months` whole months, with its first month
/// drawn uniformly so the period ends by September 30.
pub fn training_period(months: usize, index: usize, seed: u64) -> Result<DayRange> {
    if !(1..=TRAINING_MONTHS).contains(&months) {
        return Err(Error::config(
            "experiment.months",
            format!("training spans 1..={TRAINING_MONTHS} months, got {months}"),
        ));
    }
    let mut rng = seeds::rng(seed, &[months as u64, index as u64]);
    let first = rng.gen_range(1..=TRAINING_MONTHS - months + 1);
    Ok(month_span(first, months))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_window_is_last_quarter() {
        let w = test_window();
        assert_eq!((w.start, w.end, w.len()), (274, 365, 92));
    }

    #[test]
    fn training_periods_stay_before_october() {
        for months in 1..=9 {
            for index in 0..20 {
                let p = training_period(months, index, 3).unwrap();
                assert!(p.start >= 1 && p.end <= 273);
                assert!(!p.overlaps(&test_window()));
                assert!((28 * months..=31 * months).contains(&p.len()));
            }
        }
        assert_eq!(
            training_period(9, 0, 1).unwrap(),
            DayRange { start: 1, end: 273 }
        );
        assert!(training_period(10, 0, 1).is_err());
        assert!(training_period(0, 0, 1).is_err());
    }

    #[test]
    fn month_spans() {
        assert_eq!(month_span(1, 1), DayRange { start: 1, end: 31 });
        assert_eq!(month_span(2, 2), DayRange { start: 32, end: 90 });
    }
}
