//! 3D rotary position embeddings over (frame, height, width) axes, plus the
//! incremental temporal re-rotation used when cached keys are moved to a new
//! effective frame.
//!
//! The head dimension is split into three even-sized sections, one per axis,
//! laid out `[temporal | height | width]`. Within a section, adjacent pairs
//! `(2i, 2i+1)` rotate together by `pos * freq_i`. Rotation math runs in f64
//! and is written back to the f32 storage, which keeps the re-rotation path
//! bit-stable enough for tight equivalence checks against fresh embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid position of one token: temporal frame index and spatial cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenPosition {
    pub frame: u32,
    pub h: u32,
    pub w: u32,
}

impl TokenPosition {
    pub fn new(frame: u32, h: u32, w: u32) -> Self {
        Self { frame, h, w }
    }
}

/// Per-axis share of the head dimension. Every part must be even; parts may
/// be zero to disable an axis entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimSplit {
    pub temporal: usize,
    pub height: usize,
    pub width: usize,
}

impl DimSplit {
    pub fn new(temporal: usize, height: usize, width: usize) -> Self {
        Self {
            temporal,
            height,
            width,
        }
    }

    /// Default split for a head dimension: both spatial axes take
    /// `floor(d/3)` rounded down to even, the temporal axis keeps the rest.
    pub fn default_for(head_dim: usize) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "head_dim must be even and nonzero, got {head_dim}"
            )));
        }
        let spatial = (head_dim / 3) & !1;
        Ok(Self {
            temporal: head_dim - 2 * spatial,
            height: spatial,
            width: spatial,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.temporal + self.height + self.width
    }

    fn validate(&self) -> Result<()> {
        for (name, part) in [
            ("temporal", self.temporal),
            ("height", self.height),
            ("width", self.width),
        ] {
            if part % 2 != 0 {
                return Err(Error::Config(format!(
                    "{name} split {part} is odd; rotary pairs need even sections"
                )));
            }
        }
        if self.head_dim() == 0 {
            return Err(Error::Config("dim split sums to zero".into()));
        }
        Ok(())
    }
}

/// Precomputed per-axis rotary frequencies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RopeFrequencies {
    pub split: DimSplit,
    pub base: f64,
    temporal: Vec<f64>,
    height: Vec<f64>,
    width: Vec<f64>,
}

fn axis_freqs(dim: usize, base: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|i| base.powf(-2.0 * i as f64 / dim as f64))
        .collect()
}

/// Builds frequency tables for `head_dim` under the given split.
/// `freq_i = base^(-2i/d_axis)` per axis section.
pub fn build_frequencies(head_dim: usize, split: DimSplit, base: f64) -> Result<RopeFrequencies> {
    split.validate()?;
    if split.head_dim() != head_dim {
        return Err(Error::Config(format!(
            "dim split {:?} sums to {}, head_dim is {head_dim}",
            split,
            split.head_dim()
        )));
    }
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::Config(format!("rope base must be positive, got {base}")));
    }
    Ok(RopeFrequencies {
        split,
        base,
        temporal: axis_freqs(split.temporal, base),
        height: axis_freqs(split.height, base),
        width: axis_freqs(split.width, base),
    })
}

impl RopeFrequencies {
    pub fn head_dim(&self) -> usize {
        self.split.head_dim()
    }

    pub fn temporal_freqs(&self) -> &[f64] {
        &self.temporal
    }
}

#[inline]
fn rotate_pair(vec: &mut [f32], idx: usize, angle: f64) {
    let (sin, cos) = angle.sin_cos();
    let x0 = vec[idx] as f64;
    let x1 = vec[idx + 1] as f64;
    vec[idx] = (x0 * cos - x1 * sin) as f32;
    vec[idx + 1] = (x0 * sin + x1 * cos) as f32;
}

fn rotate_section(vec: &mut [f32], offset: usize, freqs: &[f64], pos: f64) {
    for (i, freq) in freqs.iter().enumerate() {
        rotate_pair(vec, offset + 2 * i, pos * freq);
    }
}

fn check_block(len: usize, head_dim: usize, context: &'static str) -> Result<()> {
    if head_dim == 0 || len == 0 || len % head_dim != 0 {
        return Err(Error::Dimension {
            expected: head_dim,
            got: len,
            context,
        });
    }
    Ok(())
}

/// Applies the 3D rotary embedding in place. `block` holds one or more
/// head-dim vectors back to back (all at the same position), so a full
/// multi-head row can be embedded in one call.
pub fn apply_rope(block: &mut [f32], pos: TokenPosition, freqs: &RopeFrequencies) -> Result<()> {
    let dim = freqs.head_dim();
    check_block(block.len(), dim, "apply_rope block")?;
    for head in block.chunks_exact_mut(dim) {
        rotate_section(head, 0, &freqs.temporal, pos.frame as f64);
        rotate_section(head, freqs.split.temporal, &freqs.height, pos.h as f64);
        rotate_section(
            head,
            freqs.split.temporal + freqs.split.height,
            &freqs.width,
            pos.w as f64,
        );
    }
    Ok(())
}

/// Advances the temporal phase of already-embedded keys by `delta` frames,
/// leaving spatial sections untouched. Composes additively and inverts with
/// the opposite delta, so `rotate_temporal(apply_rope(k, t), d)` matches
/// `apply_rope(k, t + d)` without access to the raw key.
pub fn rotate_temporal(block: &mut [f32], delta: i64, freqs: &RopeFrequencies) -> Result<()> {
    let dim = freqs.head_dim();
    check_block(block.len(), dim, "rotate_temporal block")?;
    if delta == 0 {
        return Ok(());
    }
    for head in block.chunks_exact_mut(dim) {
        rotate_section(head, 0, &freqs.temporal, delta as f64);
    }
    Ok(())
}
