//! Prompt construction, semantic embedding providers, the offline embedding
//! cache and additive alignment of semantic vectors with tokens.

mod cache;
mod prompt;
mod provider;

pub use cache::{precompute_semantics, SemanticCache, CACHE_MAGIC, CACHE_VERSION};
pub use prompt::{build_task_prompt, build_trajectory_prompt, PromptContext, PromptKind, PromptText, SemanticKey};
pub use provider::{FileProvider, SemanticProvider, StubProvider};

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::real::Real;

/// Stacks cached vectors for `keys` into a `keys.len() × D` matrix.
pub fn lookup_rows<F: Real>(cache: &SemanticCache, keys: &[SemanticKey]) -> Result<Array2<F>> {
    let mut out = Array2::zeros((keys.len(), cache.dim()));
    for (i, key) in keys.iter().enumerate() {
        let v = cache.get(&key.to_string())?;
        out.row_mut(i).assign(&Array1::from_iter(v.iter().map(|&x| F::of(x as f64))));
    }
    Ok(out)
}

/// `[tokens + segment_te ; future + task_te]`, always `N + H` rows.
pub fn combine<F: Real>(
    tokens: &Array2<F>,
    future: &Array2<F>,
    segment_te: &Array2<F>,
    task_te: &Array1<F>,
) -> Result<Array2<F>> {
    if tokens.dim() != segment_te.dim() {
        return Err(Error::Shape(format!(
            "{:?} tokens vs {:?} semantic vectors",
            tokens.dim(),
            segment_te.dim()
        )));
    }
    if future.ncols() != task_te.len() || tokens.ncols() != future.ncols() {
        return Err(Error::Shape("future tokens and task vector widths differ".into()));
    }
    let seg = tokens + segment_te;
    let fut = future + &task_te.view().insert_axis(Axis(0));
    Ok(concatenate(Axis(0), &[seg.view(), fut.view()]).expect("equal widths"))
}

/// Resolves cache keys and combines.
pub fn combine_from_cache<F: Real>(
    tokens: &Array2<F>,
    future: &Array2<F>,
    cache: &SemanticCache,
    segment_keys: &[SemanticKey],
    task_key: &SemanticKey,
) -> Result<Array2<F>> {
    let seg = lookup_rows(cache, segment_keys)?;
    let task = lookup_rows(cache, std::slice::from_ref(task_key))?;
    combine(tokens, future, &seg, &task.row(0).to_owned())
}
