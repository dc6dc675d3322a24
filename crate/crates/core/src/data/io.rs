use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{Calendar, LocationGrid, Trajectory};
use crate::error::{Error, Result};

pub const HEADER: [&str; 5] = ["user_id", "day_index", "tod_slot", "col", "row"];

/// Loads sparse `user_id,day_index,tod_slot,col,row` rows into dense
/// trajectories. Every user is padded to the largest day index seen in the
/// file; users come back in ascending `user_id` order.
pub fn load_trajectories(path: &Path, grid: &LocationGrid, calendar: &Calendar) -> Result<Vec<Trajectory>> {
    let file = File::open(path)?;
    read_trajectories(file, path, grid, calendar)
}

pub fn read_trajectories<R: Read>(
    reader: R,
    path: &Path,
    grid: &LocationGrid,
    calendar: &Calendar,
) -> Result<Vec<Trajectory>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let parse_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };

    let mut rows: BTreeMap<String, BTreeMap<(u32, u32), (u32, usize)>> = BTreeMap::new();
    let mut max_day: Option<u32> = None;
    for (i, record) in rdr.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if line == 1 && record.iter().eq(HEADER.iter().copied()) {
            continue;
        }
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected 5 fields, found {}", record.len())));
        }
        let field = |idx: usize| -> Result<u32> {
            record[idx]
                .parse::<u32>()
                .map_err(|e| parse_err(line, format!("{}: `{}` ({e})", HEADER[idx], &record[idx])))
        };
        let user = record[0].to_string();
        if user.is_empty() {
            return Err(parse_err(line, "empty user_id".into()));
        }
        let (day, slot, col, row) = (field(1)?, field(2)?, field(3)?, field(4)?);
        if slot >= calendar.slots_per_day {
            return Err(parse_err(
                line,
                format!("tod_slot {slot} >= slots per day {}", calendar.slots_per_day),
            ));
        }
        let cell = grid
            .cell_id(col, row)
            .map_err(|e| parse_err(line, e.to_string()))?;
        let entry = rows.entry(user.clone()).or_default();
        if entry.insert((day, slot), (cell, line)).is_some() {
            return Err(Error::Conflict {
                path: PathBuf::from(path),
                line,
                user,
                day,
                slot,
            });
        }
        max_day = Some(max_day.map_or(day, |m| m.max(day)));
    }

    let Some(max_day) = max_day else {
        return Ok(Vec::new());
    };
    Ok(rows
        .into_iter()
        .map(|(user, cells)| {
            let mut t = Trajectory::empty(user, max_day + 1, calendar);
            for ((day, slot), (cell, _)) in cells {
                t.set_location(day, slot, Some(cell));
            }
            t
        })
        .collect())
}

/// Writes observed slots only, in user / day / slot order.
pub fn write_trajectories<W: Write>(writer: W, trajs: &[Trajectory], grid: &LocationGrid) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for t in trajs {
        for o in &t.observations {
            if let Some(cell) = o.location {
                let (col, row) = grid.col_row(cell);
                wtr.write_record([
                    t.user_id.clone(),
                    o.day_index.to_string(),
                    o.tod_slot.to_string(),
                    col.to_string(),
                    row.to_string(),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str) -> Result<Vec<Trajectory>> {
        let grid = LocationGrid::new(200, 200).unwrap();
        read_trajectories(text.as_bytes(), Path::new("mem.csv"), &grid, &Calendar::default())
    }

    #[test]
    fn single_row_becomes_one_observed_slot() {
        let t = load("user_id,day_index,tod_slot,col,row\nu1,0,17,136,42\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 48);
        let mask = t[0].mask();
        assert_eq!(mask.iter().filter(|m| **m).count(), 1);
        assert!(mask[17]);
        assert_eq!(t[0].observations[17].location, Some(42 * 200 + 136));
    }

    #[test]
    fn empty_file_gives_no_trajectories() {
        assert!(load("").unwrap().is_empty());
        assert!(load("user_id,day_index,tod_slot,col,row\n").unwrap().is_empty());
    }

    #[test]
    fn out_of_grid_column_is_rejected_with_line() {
        let err = load("user_id,day_index,tod_slot,col,row\nu1,0,1,3,3\nu1,0,2,200,5\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_duplicate_rows() {
        assert!(matches!(load("u1,zero,1,2,3\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load("u1,0,1,2\n"), Err(Error::Parse { .. })));
        assert!(matches!(load("u1,0,48,2,3\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            load("u1,0,1,2,3\nu2,0,1,2,3\nu1,0,1,5,5\n"),
            Err(Error::Conflict { line: 3, .. })
        ));
    }

    #[test]
    fn users_share_the_day_span() {
        let t = load("b,2,0,1,1\na,0,0,1,1\n").unwrap();
        assert_eq!(t[0].user_id, "a");
        assert_eq!(t[0].num_days(), 3);
        assert_eq!(t[1].num_days(), 3);
    }
}
