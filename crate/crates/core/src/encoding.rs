//! Per-slot fused spatio-temporal embeddings.
//!
//! The temporal part projects `[tod_table[slot] ‖ dow_table[dow]]` to the
//! model width; the spatial part projects `[loc_table[cell] ‖ W_coord·xy + b]`.
//! Slots without a known location (future slots, unobserved history) carry
//! the temporal part only.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LocationGrid, Observation};
use crate::error::{Error, Result};
use crate::nn::{join_path, normal_matrix, Linear, Param, Parameters};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_tod: usize,
    pub d_dow: usize,
    pub d_loc: usize,
    pub d_coord: usize,
    pub model_dim: usize,
}

impl EncoderDims {
    pub fn with_model_dim(model_dim: usize) -> Self {
        EncoderDims {
            d_tod: 128,
            d_dow: 128,
            d_loc: 256,
            d_coord: 128,
            model_dim,
        }
    }

    pub fn temporal_width(&self) -> usize {
        self.d_tod + self.d_dow
    }

    pub fn spatial_width(&self) -> usize {
        self.d_loc + self.d_coord
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotOrigin {
    Historical,
    Future,
    MissingSpatial,
}

/// `n × D` slot embeddings with a per-row origin tag.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotEmbeddingSequence<F> {
    pub vectors: Array2<F>,
    pub origin: Vec<SlotOrigin>,
}

#[derive(Clone, Debug)]
pub struct EncoderParams<F> {
    pub dims: EncoderDims,
    pub grid: LocationGrid,
    pub tod_table: Param<F>,
    pub dow_table: Param<F>,
    pub loc_table: Param<F>,
    pub coord_proj: Linear<F>,
    pub temporal_proj: Linear<F>,
    pub spatial_proj: Linear<F>,
}

/// Saved activations of a batched encode.
#[derive(Clone, Debug)]
pub struct EncoderCache<F> {
    tods: Vec<usize>,
    dows: Vec<usize>,
    temporal_in: Array2<F>,
    /// (row in the output, cell id)
    observed: Vec<(usize, usize)>,
    coords: Array2<F>,
    spatial_in: Array2<F>,
}

impl<F: Real> EncoderParams<F> {
    pub fn new<R: Rng + ?Sized>(
        dims: EncoderDims,
        grid: LocationGrid,
        slots_per_day: usize,
        rng: &mut R,
    ) -> Self {
        EncoderParams {
            dims,
            grid,
            tod_table: Param::new(normal_matrix(slots_per_day, dims.d_tod, 1.0, rng)),
            dow_table: Param::new(normal_matrix(7, dims.d_dow, 1.0, rng)),
            loc_table: Param::new(normal_matrix(grid.num_cells(), dims.d_loc, 1.0, rng)),
            coord_proj: Linear::new(2, dims.d_coord, true, 1.0, rng),
            temporal_proj: Linear::xavier(dims.temporal_width(), dims.model_dim, true, rng),
            spatial_proj: Linear::xavier(dims.spatial_width(), dims.model_dim, true, rng),
        }
    }

    pub fn slots_per_day(&self) -> usize {
        self.tod_table.value.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.loc_table.value.nrows()
    }

    fn check_time(&self, tod: u32, dow: u32) -> Result<()> {
        if tod as usize >= self.slots_per_day() {
            return Err(Error::Index(format!("tod slot {tod} >= {}", self.slots_per_day())));
        }
        if dow >= 7 {
            return Err(Error::Index(format!("day of week {dow} >= 7")));
        }
        Ok(())
    }

    fn check_cell(&self, loc: u32) -> Result<()> {
        if loc as usize >= self.vocab_size() {
            return Err(Error::Index(format!(
                "location {loc} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    fn temporal_rows(&self, times: &[(u32, u32)]) -> Array2<F> {
        let d_tod = self.dims.d_tod;
        let mut input = Array2::zeros((times.len(), self.dims.temporal_width()));
        for (i, &(tod, dow)) in times.iter().enumerate() {
            input
                .slice_mut(s![i, ..d_tod])
                .assign(&self.tod_table.value.row(tod as usize));
            input
                .slice_mut(s![i, d_tod..])
                .assign(&self.dow_table.value.row(dow as usize));
        }
        input
    }

    fn spatial_rows(&self, cells: &[(u32, (f64, f64))]) -> (Array2<F>, Array2<F>) {
        let coords = Array2::from_shape_fn((cells.len(), 2), |(i, j)| {
            let (x, y) = cells[i].1;
            F::of(if j == 0 { x } else { y })
        });
        let projected = self.coord_proj.forward(&coords);
        let d_loc = self.dims.d_loc;
        let mut input = Array2::zeros((cells.len(), self.dims.spatial_width()));
        for (i, &(loc, _)) in cells.iter().enumerate() {
            input
                .slice_mut(s![i, ..d_loc])
                .assign(&self.loc_table.value.row(loc as usize));
        }
        input.slice_mut(s![.., d_loc..]).assign(&projected);
        (coords, input)
    }

    pub fn encode_temporal(&self, obs: &Observation) -> Result<Array1<F>> {
        self.check_time(obs.tod_slot, obs.dow)?;
        let input = self.temporal_rows(&[(obs.tod_slot, obs.dow)]);
        Ok(self.temporal_proj.forward(&input).row(0).to_owned())
    }

    pub fn encode_spatial(&self, loc: u32, coords: (f64, f64)) -> Result<Array1<F>> {
        self.check_cell(loc)?;
        let (_, input) = self.spatial_rows(&[(loc, coords)]);
        Ok(self.spatial_proj.forward(&input).row(0).to_owned())
    }

    /// Encodes history observations and future `(tod_slot, dow)` pairs.
    pub fn encode_sequence(
        &self,
        history: &[Observation],
        future: &[(u32, u32)],
    ) -> Result<(SlotEmbeddingSequence<F>, SlotEmbeddingSequence<F>)> {
        let (hist, fut, _) = self.forward(history, future)?;
        let origin_hist = history
            .iter()
            .map(|o| match o.location {
                Some(_) => SlotOrigin::Historical,
                None => SlotOrigin::MissingSpatial,
            })
            .collect();
        Ok((
            SlotEmbeddingSequence {
                vectors: hist,
                origin: origin_hist,
            },
            SlotEmbeddingSequence {
                vectors: fut,
                origin: vec![SlotOrigin::Future; future.len()],
            },
        ))
    }

    /// Batched encode returning `(history T×D, future H×D, cache)`.
    pub fn forward(
        &self,
        history: &[Observation],
        future: &[(u32, u32)],
    ) -> Result<(Array2<F>, Array2<F>, EncoderCache<F>)> {
        if future.is_empty() {
            return Err(Error::Shape("prediction horizon is empty".into()));
        }
        let mut times = Vec::with_capacity(history.len() + future.len());
        let mut cells = Vec::new();
        let mut observed = Vec::new();
        for (i, o) in history.iter().enumerate() {
            self.check_time(o.tod_slot, o.dow)?;
            times.push((o.tod_slot, o.dow));
            if let Some(loc) = o.location {
                self.check_cell(loc)?;
                cells.push((loc, self.grid.cell_center(loc)));
                observed.push((i, loc as usize));
            }
        }
        for &(tod, dow) in future {
            self.check_time(tod, dow)?;
            times.push((tod, dow));
        }

        let temporal_in = self.temporal_rows(&times);
        let mut out = self.temporal_proj.forward(&temporal_in);
        let (coords, spatial_in) = self.spatial_rows(&cells);
        if !cells.is_empty() {
            let spatial = self.spatial_proj.forward(&spatial_in);
            for (k, &(row, _)) in observed.iter().enumerate() {
                let mut r = out.row_mut(row);
                r += &spatial.row(k);
            }
        }
        let fut = out.slice(s![history.len().., ..]).to_owned();
        out.slice_collapse(s![..history.len(), ..]);
        Ok((
            out,
            fut,
            EncoderCache {
                tods: times.iter().map(|t| t.0 as usize).collect(),
                dows: times.iter().map(|t| t.1 as usize).collect(),
                temporal_in,
                observed,
                coords,
                spatial_in,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderCache<F>, d_hist: &Array2<F>, d_fut: &Array2<F>) {
        let d_all = ndarray::concatenate(Axis(0), &[d_hist.view(), d_fut.view()]).expect("same width");
        let d_in = self.temporal_proj.backward(&cache.temporal_in, &d_all, true);
        let d_tod = self.dims.d_tod;
        for (i, (&tod, &dow)) in cache.tods.iter().zip(&cache.dows).enumerate() {
            let mut g = self.tod_table.grad.row_mut(tod);
            g += &d_in.slice(s![i, ..d_tod]);
            let mut g = self.dow_table.grad.row_mut(dow);
            g += &d_in.slice(s![i, d_tod..]);
        }
        if cache.observed.is_empty() {
            return;
        }
        let rows: Vec<usize> = cache.observed.iter().map(|&(r, _)| r).collect();
        let d_spatial = d_hist.select(Axis(0), &rows);
        let d_sin = self.spatial_proj.backward(&cache.spatial_in, &d_spatial, true);
        let d_loc = self.dims.d_loc;
        for (k, &(_, cell)) in cache.observed.iter().enumerate() {
            let mut g = self.loc_table.grad.row_mut(cell);
            g += &d_sin.slice(s![k, ..d_loc]);
        }
        let d_proj = d_sin.slice(s![.., d_loc..]).to_owned();
        self.coord_proj.backward(&cache.coords, &d_proj, true);
    }
}

impl<F: Real> Parameters<F> for EncoderParams<F> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<F>)>) {
        out.push((join_path(prefix, "tod_table"), &self.tod_table));
        out.push((join_path(prefix, "dow_table"), &self.dow_table));
        out.push((join_path(prefix, "loc_table"), &self.loc_table));
        self.coord_proj.visit(&join_path(prefix, "coord_proj"), out);
        self.temporal_proj.visit(&join_path(prefix, "temporal_proj"), out);
        self.spatial_proj.visit(&join_path(prefix, "spatial_proj"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<F>)>) {
        out.push((join_path(prefix, "tod_table"), &mut self.tod_table));
        out.push((join_path(prefix, "dow_table"), &mut self.dow_table));
        out.push((join_path(prefix, "loc_table"), &mut self.loc_table));
        self.coord_proj.visit_mut(&join_path(prefix, "coord_proj"), out);
        self.temporal_proj.visit_mut(&join_path(prefix, "temporal_proj"), out);
        self.spatial_proj.visit_mut(&join_path(prefix, "spatial_proj"), out);
    }
}
