use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectangular grid of cells; `id = row * width + col`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocationGrid {
    pub width: u32,
    pub height: u32,
}

impl LocationGrid {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("grid", "grid dimensions must be positive"));
        }
        Ok(LocationGrid { width, height })
    }

    pub fn num_cells(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && col < self.width as i64 && row < self.height as i64
    }

    pub fn cell_id(&self, col: u32, row: u32) -> Result<u32> {
        if col >= self.width || row >= self.height {
            return Err(Error::Index(format!(
                "cell ({col},{row}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        Ok(row * self.width + col)
    }

    pub fn col_row(&self, id: u32) -> (u32, u32) {
        (id % self.width, id / self.width)
    }

    /// Normalized cell center in the open unit square.
    pub fn cell_center(&self, id: u32) -> (f64, f64) {
        let (col, row) = self.col_row(id);
        (
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// Euclidean distance between integer cell coordinates.
    pub fn distance(&self, a: u32, b: u32) -> f64 {
        let (ac, ar) = self.col_row(a);
        let (bc, br) = self.col_row(b);
        let dc = ac as f64 - bc as f64;
        let dr = ar as f64 - br as f64;
        (dc * dc + dr * dr).sqrt()
    }

    /// In-grid 8-neighbours of a cell, in row-major order.
    pub fn neighbors(&self, id: u32) -> Vec<u32> {
        let (col, row) = self.col_row(id);
        let mut out = Vec::with_capacity(8);
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (c, r) = (col as i64 + dc, row as i64 + dr);
                if self.contains(c, r) {
                    out.push(r as u32 * self.width + c as u32);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn id_roundtrips_and_centers_are_interior(w in 1u32..60, h in 1u32..60, seed in any::<u32>()) {
            let g = LocationGrid::new(w, h).unwrap();
            let id = seed % (w * h);
            let (c, r) = g.col_row(id);
            prop_assert_eq!(g.cell_id(c, r).unwrap(), id);
            let (x, y) = g.cell_center(id);
            prop_assert!(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn neighbours_respect_edges() {
        let g = LocationGrid::new(4, 4).unwrap();
        assert_eq!(g.neighbors(0), vec![1, 4, 5]);
        assert_eq!(g.neighbors(5).len(), 8);
        assert_eq!(g.distance(0, g.cell_id(3, 3).unwrap()), 18f64.sqrt());
    }
}
