//! Reference attention math used for measurement: plain softmax attention,
//! per-frame attention profiles over a cache, and the retained-mass metric
//! that scores a surviving token set against the full uncompressed key set.
//!
//! Everything here favors clarity over speed. Accumulation runs in f64 and
//! softmax uses max-subtraction, so the row-stochastic and mass-fraction
//! checks hold to tight tolerances.

use std::collections::BTreeMap;

use crate::cache::LayerCache;
use crate::error::{Error, Result};

/// Standard attention scale for a head dimension: `1 / sqrt(d)`.
pub fn default_scale(head_dim: usize) -> f64 {
    1.0 / (head_dim as f64).sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn check_rows(rows: &[Vec<f32>], width: usize, context: &'static str) -> Result<()> {
    for row in rows {
        if row.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: row.len(),
                context,
            });
        }
    }
    Ok(())
}

/// Softmax weights of one query against a key set, in key order.
fn softmax_weights(query: &[f32], keys: &[Vec<f32>], scale: f64) -> Vec<f64> {
    let logits: Vec<f64> = keys.iter().map(|k| dot(query, k) * scale).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Full attention: `softmax(q K^T * scale) V` per query row.
pub fn attend(
    queries: &[Vec<f32>],
    keys: &[Vec<f32>],
    values: &[Vec<f32>],
    scale: f64,
) -> Result<Vec<Vec<f32>>> {
    if queries.is_empty() || keys.is_empty() {
        return Err(Error::Dimension {
            expected: 1,
            got: 0,
            context: "attend needs at least one query and one key",
        });
    }
    if keys.len() != values.len() {
        return Err(Error::Dimension {
            expected: keys.len(),
            got: values.len(),
            context: "attend key/value counts",
        });
    }
    if !scale.is_finite() {
        return Err(Error::Config(format!("attention scale must be finite, got {scale}")));
    }
    let dim = keys[0].len();
    check_rows(queries, dim, "attend query width")?;
    check_rows(keys, dim, "attend key width")?;
    let value_dim = values[0].len();
    check_rows(values, value_dim, "attend value width")?;

    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        let weights = softmax_weights(q, keys, scale);
        let mut row = vec![0.0f64; value_dim];
        for (w, v) in weights.iter().zip(values) {
            for (acc, x) in row.iter_mut().zip(v) {
                *acc += w * *x as f64;
            }
        }
        out.push(row.into_iter().map(|x| x as f32).collect());
    }
    Ok(out)
}

/// Attention mass per effective frame for one head of a cache, averaged over
/// the query rows. Weights sum to one.
#[derive(Debug, Clone)]
pub struct AttentionProfile {
    pub head: usize,
    /// (effective frame, mean attention weight), ascending by frame.
    pub weights: Vec<(u32, f64)>,
}

impl AttentionProfile {
    pub fn total(&self) -> f64 {
        self.weights.iter().map(|(_, w)| w).sum()
    }
}

/// Computes the per-frame attention profile of `queries` (full-width rows)
/// against one head of the cache.
pub fn frame_attention_profile(
    queries: &[Vec<f32>],
    cache: &LayerCache,
    head: usize,
) -> Result<AttentionProfile> {
    if head >= cache.num_heads() {
        return Err(Error::IndexOutOfRange {
            index: head,
            len: cache.num_heads(),
        });
    }
    if queries.is_empty() || cache.token_count() == 0 {
        return Err(Error::Dimension {
            expected: 1,
            got: 0,
            context: "frame_attention_profile needs queries and a nonempty cache",
        });
    }
    let dim = cache.head_dim();
    check_rows(queries, cache.row_width(), "frame_attention_profile query width")?;

    let slice = |row: &[f32]| row[head * dim..(head + 1) * dim].to_vec();
    let keys: Vec<Vec<f32>> = cache.tokens().iter().map(|t| slice(&t.key)).collect();
    let scale = default_scale(dim);

    let mut per_frame: BTreeMap<u32, f64> = BTreeMap::new();
    for q in queries {
        let weights = softmax_weights(&slice(q), &keys, scale);
        for (w, tok) in weights.iter().zip(cache.tokens()) {
            *per_frame.entry(tok.effective_frame).or_insert(0.0) += w / queries.len() as f64;
        }
    }
    Ok(AttentionProfile {
        head,
        weights: per_frame.into_iter().collect(),
    })
}

/// Fraction of softmax attention mass, computed over the *full* key set,
/// that lands on the retained subset; averaged over the query rows.
///
/// `retained` indexes into `full_keys`, strictly ascending.
pub fn retained_mass(
    queries: &[Vec<f32>],
    full_keys: &[Vec<f32>],
    retained: &[usize],
    scale: f64,
) -> Result<f64> {
    if queries.is_empty() || full_keys.is_empty() {
        return Err(Error::Dimension {
            expected: 1,
            got: 0,
            context: "retained_mass needs queries and keys",
        });
    }
    let dim = full_keys[0].len();
    check_rows(queries, dim, "retained_mass query width")?;
    check_rows(full_keys, dim, "retained_mass key width")?;
    for pair in retained.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(
                "retained indices must be strictly ascending".into(),
            ));
        }
    }
    if let Some(&last) = retained.last() {
        if last >= full_keys.len() {
            return Err(Error::IndexOutOfRange {
                index: last,
                len: full_keys.len(),
            });
        }
    }

    let mut acc = 0.0;
    for q in queries {
        let weights = softmax_weights(q, full_keys, scale);
        acc += retained.iter().map(|&i| weights[i]).sum::<f64>();
    }
    Ok(acc / queries.len() as f64)
}
