use serde::{Deserialize, Serialize};

use crate::data::Trajectory;
use crate::error::{Error, Result};

/// Half-open range of day indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: u32,
    pub end: u32,
}

impl DayRange {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, day: u32) -> bool {
        day >= self.start && day < self.end
    }

    pub fn iter(&self) -> std::ops::Range<u32> {
        self.start..self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

/// Chronological, contiguous train / validation / test day ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: DayRange,
    pub val: DayRange,
    pub test: DayRange,
}

impl DatasetSplit {
    pub fn from_day_count(days: u32, ratios: SplitRatios) -> Result<Self> {
        if days < 3 {
            return Err(Error::Split(format!("need at least 3 days, found {days}")));
        }
        let sum = ratios.train + ratios.val + ratios.test;
        if [ratios.train, ratios.val, ratios.test].iter().any(|r| *r <= 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Split(format!("ratios {ratios:?} must be positive and sum to 1")));
        }
        // small epsilon keeps exact products such as 10 * 0.7 from flooring to 6
        let floor = |r: f64| ((days as f64) * r + 1e-9).floor() as u32;
        let n_train = floor(ratios.train);
        let n_val = floor(ratios.val);
        let n_test = days - n_train - n_val;
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::Split(format!("{days} days leave an empty partition")));
        }
        Ok(DatasetSplit {
            train: DayRange { start: 0, end: n_train },
            val: DayRange {
                start: n_train,
                end: n_train + n_val,
            },
            test: DayRange {
                start: n_train + n_val,
                end: days,
            },
        })
    }

    pub fn total_days(&self) -> u32 {
        self.test.end
    }
}

/// Splits the common day span of `trajs` chronologically.
pub fn split_by_days(trajs: &[Trajectory], ratios: SplitRatios) -> Result<DatasetSplit> {
    let days = trajs.iter().map(Trajectory::num_days).max().unwrap_or(0);
    DatasetSplit::from_day_count(days, ratios)
}
