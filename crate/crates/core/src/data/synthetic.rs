use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Calendar, LocationGrid, Trajectory};
use crate::error::{Error, Result};

const ROUTINE_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const MISSING_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_users: u32,
    pub n_days: u32,
    pub grid: LocationGrid,
    pub calendar: Calendar,
    pub noise_eps: f64,
    pub missing_mu: f64,
    pub seed: u64,
}

/// Routine cells of one synthetic user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Routine {
    pub home: u32,
    pub work: u32,
    pub leisure: u32,
}

/// Phase boundaries of the daily template: `[0, a)` home, `[a, a+2)`
/// transition, `[a+2, b)` away, `[b, b+2)` transition, `[b+2, S)` home.
/// With 48 slots this is 0–15 / 16–17 / 18–33 / 34–35 / 36–47.
fn template_bounds(slots_per_day: u32) -> (u32, u32) {
    let a = slots_per_day / 3;
    (a, a + 2 + slots_per_day / 3)
}

fn lerp_cell(grid: &LocationGrid, from: u32, to: u32, frac: f64) -> u32 {
    let (fc, fr) = grid.col_row(from);
    let (tc, tr) = grid.col_row(to);
    let c = (fc as f64 + frac * (tc as f64 - fc as f64)).round() as u32;
    let r = (fr as f64 + frac * (tr as f64 - fr as f64)).round() as u32;
    r * grid.width + c
}

/// Noise-free cell of a routine at a time-of-day slot.
pub fn routine_cell(grid: &LocationGrid, routine: &Routine, slots_per_day: u32, weekend: bool, tod: u32) -> u32 {
    let away = if weekend { routine.leisure } else { routine.work };
    let (a, b) = template_bounds(slots_per_day);
    match tod {
        t if t < a => routine.home,
        t if t < a + 2 => lerp_cell(grid, routine.home, away, (t - a + 1) as f64 / 3.0),
        t if t < b => away,
        t if t < b + 2 => lerp_cell(grid, away, routine.home, (t - b + 1) as f64 / 3.0),
        _ => routine.home,
    }
}

/// Draws the routine cells of every user from the routine stream.
pub fn routines(cfg: &SyntheticConfig) -> Result<Vec<Routine>> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(ROUTINE_STREAM);
    Ok((0..cfg.n_users)
        .map(|_| {
            let cells = sample(&mut rng, cfg.grid.num_cells(), 3);
            Routine {
                home: cells.index(0) as u32,
                work: cells.index(1) as u32,
                leisure: cells.index(2) as u32,
            }
        })
        .collect())
}

fn validate(cfg: &SyntheticConfig) -> Result<()> {
    if cfg.grid.width < 4 || cfg.grid.height < 4 {
        return Err(Error::Generator(format!(
            "grid {}x{} smaller than 4x4",
            cfg.grid.width, cfg.grid.height
        )));
    }
    if !(0.0..1.0).contains(&cfg.noise_eps) || !(0.0..1.0).contains(&cfg.missing_mu) {
        return Err(Error::Generator("noise and missing probabilities must lie in [0,1)".into()));
    }
    if cfg.calendar.slots_per_day < 12 {
        return Err(Error::Generator("daily template needs at least 12 slots per day".into()));
    }
    Ok(())
}

/// Users with weekday home→work→home and weekend home→leisure→home routines.
/// Noise replaces a slot with a random in-grid 8-neighbour; missingness
/// clears the slot. Routine, noise and missingness draw from separate
/// streams and every slot consumes the same number of draws regardless of
/// the probabilities, so changing `noise_eps` leaves cells and mask intact.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Trajectory>> {
    let routines = routines(cfg)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let mut missing_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    missing_rng.set_stream(MISSING_STREAM);

    let width = (cfg.n_users.max(1) - 1).to_string().len();
    let s = cfg.calendar.slots_per_day;
    Ok(routines
        .iter()
        .enumerate()
        .map(|(u, routine)| {
            let mut traj = Trajectory::empty(format!("u{u:0width$}"), cfg.n_days, &cfg.calendar);
            for day in 0..cfg.n_days {
                let weekend = cfg.calendar.weekday(day).is_weekend();
                for tod in 0..s {
                    let mut cell = routine_cell(&cfg.grid, routine, s, weekend, tod);
                    let corrupt = noise_rng.gen::<f64>() < cfg.noise_eps;
                    let neighbors = cfg.grid.neighbors(cell);
                    let pick = noise_rng.gen_range(0..neighbors.len());
                    if corrupt {
                        cell = neighbors[pick];
                    }
                    let missing = missing_rng.gen::<f64>() < cfg.missing_mu;
                    traj.set_location(day, tod, (!missing).then_some(cell));
                }
            }
            traj
        })
        .collect())
}
