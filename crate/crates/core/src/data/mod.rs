//! Trajectory data model: location grid, dense slot-indexed trajectories,
//! CSV ingestion, day-based splitting and a synthetic routine generator.

mod grid;
mod io;
mod split;
mod synthetic;
mod trajectory;

pub use grid::LocationGrid;
pub use io::{load_trajectories, read_trajectories, write_trajectories};
pub use split::{split_by_days, DatasetSplit, DayRange, SplitRatios};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use trajectory::{Calendar, Observation, Trajectory, Weekday};
