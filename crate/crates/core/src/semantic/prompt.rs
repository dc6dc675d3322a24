use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Calendar, LocationGrid, Trajectory, Weekday};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptKind {
    TrajectoryInfo,
    TaskDescription,
}

/// Cache key of a semantic vector: `traj/<user>/<day>` or `task/<user>/<day>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticKey {
    pub kind: PromptKind,
    pub user: String,
    pub day: u32,
}

impl SemanticKey {
    pub fn trajectory(user: &str, day: u32) -> Self {
        SemanticKey {
            kind: PromptKind::TrajectoryInfo,
            user: user.to_string(),
            day,
        }
    }

    pub fn task(user: &str, day: u32) -> Self {
        SemanticKey {
            kind: PromptKind::TaskDescription,
            user: user.to_string(),
            day,
        }
    }
}

impl fmt::Display for SemanticKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            PromptKind::TrajectoryInfo => "traj",
            PromptKind::TaskDescription => "task",
        };
        write!(f, "{kind}/{}/{}", self.user, self.day)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptText {
    pub kind: PromptKind,
    pub text: String,
    pub key: SemanticKey,
}

/// Rendering parameters shared by both prompt kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub grid: LocationGrid,
    pub calendar: Calendar,
    /// Minimum grid displacement (in cells) for a key transition.
    pub transition_min_cells: f64,
    /// Minimum consecutive observed records at one cell for a stay.
    pub stay_min_records: usize,
}

impl PromptContext {
    pub fn new(grid: LocationGrid, calendar: Calendar) -> Self {
        PromptContext {
            grid,
            calendar,
            transition_min_cells: 5.0,
            stay_min_records: 2,
        }
    }

    fn coord(&self, cell: u32) -> String {
        let (x, y) = self.grid.col_row(cell);
        format!("(X={x}, Y={y})")
    }
}

/// Describes one day of a trajectory: the observed records, large jumps
/// between consecutive records and runs of records at one cell.
pub fn build_trajectory_prompt(traj: &Trajectory, day: u32, ctx: &PromptContext) -> Result<PromptText> {
    if day >= traj.num_days() {
        return Err(Error::Index(format!(
            "day {day} outside trajectory span of {} days",
            traj.num_days()
        )));
    }
    let slots = traj.day(day);
    let weekday = ctx.calendar.weekday(day);
    let records: Vec<(u32, u32)> = slots
        .iter()
        .filter_map(|o| o.location.map(|c| (o.tod_slot, c)))
        .collect();
    let clock = |slot: u32| ctx.calendar.clock(slot);

    let mut text = format!(
        "This is the trajectory of user {} of day {} which is a {}. The trajectory consists of {} records, each record of coordinate is as follows:\n",
        traj.user_id,
        day,
        weekday.name(),
        records.len()
    );
    for (i, &(slot, cell)) in records.iter().enumerate() {
        let end = if i + 1 == records.len() { "." } else { ";" };
        text.push_str(&format!("{}: {}{end}\n", clock(slot), ctx.coord(cell)));
    }

    let transitions: Vec<String> = records
        .windows(2)
        .filter(|w| ctx.grid.distance(w[0].1, w[1].1) >= ctx.transition_min_cells)
        .map(|w| format!("At {}: {} -> {}", clock(w[1].0), ctx.coord(w[0].1), ctx.coord(w[1].1)))
        .collect();
    text.push_str("\nKey transitions: ");
    text.push_str(&join_or_none(&transitions));
    text.push('\n');

    let minutes = ctx.calendar.minutes_per_slot() as f64;
    let mut stays = Vec::new();
    for run in records.chunk_by(|a, b| a.1 == b.1) {
        if run.len() >= ctx.stay_min_records.max(1) {
            let (first, cell) = run[0];
            let last = run[run.len() - 1].0;
            let hours = (last - first) as f64 * minutes / 60.0;
            stays.push(format!(
                "{} from {} to {} ({hours:.1} hours)",
                ctx.coord(cell),
                clock(first),
                clock(last)
            ));
        }
    }
    text.push_str("\nMain stay locations: ");
    text.push_str(&join_or_none(&stays));
    text.push('\n');

    Ok(PromptText {
        kind: PromptKind::TrajectoryInfo,
        text,
        key: SemanticKey::trajectory(&traj.user_id, day),
    })
}

fn join_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "none.".to_string()
    } else {
        format!("{}.", items.join("; "))
    }
}

/// Task description for predicting one day of a user.
pub fn build_task_prompt(user_id: &str, day: u32, weekday: Weekday, ctx: &PromptContext) -> PromptText {
    let (w, h) = (ctx.grid.width, ctx.grid.height);
    let text = format!(
        "You are a mobility prediction assistant that forecasts human movement patterns in urban environments. \
The city is represented as a {w} x {h} grid of cells, where each cell is identified by coordinates (X,Y). \
The X coordinate increases from left (0) to right ({}), and the Y coordinate increases from top (0) to bottom ({}).\n\
\n\
TASK: Based on User {user_id}'s historical movement patterns, predict their locations for Day {day} ({}). \
The predictions should capture expected locations at {}-minute intervals throughout the day ({} time slots). \
The model should analyze patterns like frequent locations, typical daily routines, and time-dependent behaviors \
to generate accurate predictions of where this user is likely to be throughout the next day.\n\
\n\
The previous days' trajectory data contains information about the user's typical movement patterns, \
regular visited locations, transition times, and duration of stays. Key patterns to consider include: \
home and work locations, morning and evening routines, lunch-time behaviors, weekend vs. weekday differences, \
and recurring visit patterns.\n",
        w - 1,
        h - 1,
        weekday.name(),
        ctx.calendar.minutes_per_slot(),
        ctx.calendar.slots_per_day,
    );
    PromptText {
        kind: PromptKind::TaskDescription,
        text,
        key: SemanticKey::task(user_id, day),
    }
}
