use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DAYS_PER_WEEK: u32 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weekday {
    Sunday,
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Sunday,
        Weekday::Monday,
        Weekday::Tuesday,
        Weekday::Wednesday,
        Weekday::Thursday,
        Weekday::Friday,
        Weekday::Saturday,
    ];

    /// 0 = Sunday .. 6 = Saturday.
    pub fn index(self) -> u32 {
        self as u32
    }

    pub fn from_index(i: u32) -> Result<Self> {
        Self::ALL
            .get(i as usize)
            .copied()
            .ok_or_else(|| Error::Index(format!("day of week {i} not in 0..7")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Weekday::Sunday => "Sunday",
            Weekday::Monday => "Monday",
            Weekday::Tuesday => "Tuesday",
            Weekday::Wednesday => "Wednesday",
            Weekday::Thursday => "Thursday",
            Weekday::Friday => "Friday",
            Weekday::Saturday => "Saturday",
        }
    }

    pub fn is_weekend(self) -> bool {
        matches!(self, Weekday::Saturday | Weekday::Sunday)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("first_weekday", format!("unknown weekday `{s}`")))
    }
}

/// Slot resolution and the weekday of day 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    pub slots_per_day: u32,
    pub first_weekday: Weekday,
}

impl Default for Calendar {
    fn default() -> Self {
        Calendar {
            slots_per_day: 48,
            first_weekday: Weekday::Sunday,
        }
    }
}

impl Calendar {
    pub fn new(slots_per_day: u32, first_weekday: Weekday) -> Result<Self> {
        if slots_per_day == 0 || (24 * 60) % slots_per_day != 0 {
            return Err(Error::config(
                "slots_per_day",
                format!("{slots_per_day} does not divide a day into whole minutes"),
            ));
        }
        Ok(Calendar {
            slots_per_day,
            first_weekday,
        })
    }

    pub fn weekday(&self, day_index: u32) -> Weekday {
        let dow = (day_index + self.first_weekday.index()) % DAYS_PER_WEEK;
        Weekday::ALL[dow as usize]
    }

    pub fn dow(&self, day_index: u32) -> u32 {
        self.weekday(day_index).index()
    }

    pub fn minutes_per_slot(&self) -> u32 {
        24 * 60 / self.slots_per_day
    }

    /// `HH:MM` label of the start of a slot.
    pub fn clock(&self, tod_slot: u32) -> String {
        let m = tod_slot * self.minutes_per_slot();
        format!("{:02}:{:02}", m / 60, m % 60)
    }
}

/// One time slot: its time-of-day index, weekday, absolute day and, when
/// observed, its cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub tod_slot: u32,
    pub dow: u32,
    pub day_index: u32,
    pub location: Option<u32>,
}

/// Dense per-slot trajectory of one user covering whole days `0..num_days`.
/// `observations[i]` is absolute slot `i`; the mask is derived from
/// `location.is_some()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user_id: String,
    pub slots_per_day: u32,
    pub observations: Vec<Observation>,
}

impl Trajectory {
    /// All-missing trajectory of `num_days` days.
    pub fn empty(user_id: impl Into<String>, num_days: u32, calendar: &Calendar) -> Self {
        let s = calendar.slots_per_day;
        let observations = (0..num_days * s)
            .map(|i| Observation {
                tod_slot: i % s,
                dow: calendar.dow(i / s),
                day_index: i / s,
                location: None,
            })
            .collect();
        Trajectory {
            user_id: user_id.into(),
            slots_per_day: s,
            observations,
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn num_days(&self) -> u32 {
        self.observations.len() as u32 / self.slots_per_day
    }

    pub fn mask(&self) -> Vec<bool> {
        self.observations.iter().map(|o| o.location.is_some()).collect()
    }

    pub fn slot_index(&self, day: u32, tod_slot: u32) -> usize {
        (day * self.slots_per_day + tod_slot) as usize
    }

    pub fn day(&self, day: u32) -> &[Observation] {
        let s = self.slots_per_day as usize;
        let start = day as usize * s;
        &self.observations[start..start + s]
    }

    /// Slots of the contiguous day range `[first, first + count)`.
    pub fn days(&self, first: u32, count: u32) -> &[Observation] {
        let s = self.slots_per_day as usize;
        &self.observations[first as usize * s..(first + count) as usize * s]
    }

    pub fn set_location(&mut self, day: u32, tod_slot: u32, location: Option<u32>) {
        let i = self.slot_index(day, tod_slot);
        self.observations[i].location = location;
    }

    pub fn observed_count(&self) -> usize {
        self.observations.iter().filter(|o| o.location.is_some()).count()
    }
}
