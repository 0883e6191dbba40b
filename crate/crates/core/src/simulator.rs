//! Synthetic chunk-wise autoregressive rollout: a seeded stream surrogate
//! stands in for the diffusion model, emitting per-chunk key/value/query
//! blocks, and the rollout loop drives a cache policy through long horizons
//! while recording per-step traces, selection counts, and retained attention
//! mass against an uncompressed shadow cache.
//!
//! Per chunk the loop walks the denoising schedule high to low; at the first
//! timestep it invokes the configured policy on every cache whose window has
//! filled, and after the schedule it appends the chunk's blocks.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{default_scale, retained_mass};
use crate::cache::{CacheBank, CachePolicyConfig, HeadMode, PolicyKind};
use crate::error::{Error, Result};
use crate::policy::{policy_step, CompressionReport};
use crate::rope::{apply_rope, build_frequencies, DimSplit, RopeFrequencies, TokenPosition};

const ROLE_KEY: u64 = 0;
const ROLE_VALUE: u64 = 1;
const ROLE_QUERY: u64 = 2;
const ROLE_DRIFT: u64 = 3;
const ROLE_POLICY: u64 = 4;
const ROLE_DENOISE_BASE: u64 = 1000;

/// Independent deterministic stream for one (seed, tag triple). The four
/// words fill the ChaCha key exactly, so distinct tags never collide.
pub fn derive_rng(seed: u64, a: u64, b: u64, c: u64) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&a.to_le_bytes());
    bytes[16..24].copy_from_slice(&b.to_le_bytes());
    bytes[24..32].copy_from_slice(&c.to_le_bytes());
    ChaCha12Rng::from_seed(bytes)
}

/// Stream surrogate flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// Independent standard-normal blocks.
    Gaussian,
    /// Gaussian plus planted anchor keys that future queries score above
    /// everything else by roughly `anchor_gain`.
    Clustered,
    /// Keys and queries ride a random-walk mean, modeling distribution
    /// shift along the stream.
    Drifting,
}

/// Deterministic surrogate for the chunk generator: every block is a pure
/// function of (seed, layer, chunk, timestep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamModel {
    pub kind: StreamKind,
    pub seed: u64,
    pub tokens_per_frame: usize,
    pub chunk_frames: usize,
    pub head_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub rope_base: f64,
    /// Denoising timesteps per chunk, strictly decreasing, all positive.
    pub schedule: Vec<u32>,
    /// Scale of the timestep-proportional noise added to denoising queries.
    pub jitter: f64,
    /// Clustered mode: anchors planted per planting chunk.
    pub anchor_count: usize,
    /// Clustered mode: logit advantage of anchors over ordinary keys.
    pub anchor_gain: f64,
    /// Clustered mode: chunk of the first planting.
    pub anchor_chunk: usize,
    /// Clustered mode: chunks between plantings; 0 plants exactly once.
    pub anchor_period: usize,
    /// Drifting mode: step scale of the mean random walk.
    pub drift_rate: f64,
}

impl Default for StreamModel {
    fn default() -> Self {
        Self {
            kind: StreamKind::Gaussian,
            seed: 7,
            tokens_per_frame: 64,
            chunk_frames: 3,
            head_dim: 64,
            num_heads: 4,
            num_layers: 2,
            rope_base: 10_000.0,
            schedule: vec![1000, 750, 500, 250],
            jitter: 0.1,
            anchor_count: 4,
            anchor_gain: 10.0,
            anchor_chunk: 4,
            anchor_period: 0,
            drift_rate: 0.02,
        }
    }
}

/// One chunk's raw (pre-embedding) blocks for one layer.
#[derive(Debug, Clone)]
pub struct ChunkTensors {
    pub positions: Vec<TokenPosition>,
    pub keys: Vec<Vec<f32>>,
    pub values: Vec<Vec<f32>>,
    pub queries: Vec<Vec<f32>>,
}

/// Side length of the spatial grid that frames of `per_frame` tokens use.
pub fn grid_width(per_frame: usize) -> u32 {
    (per_frame as f64).sqrt().ceil() as u32
}

impl StreamModel {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.num_heads == 0 {
            return Err(Error::Config(
                "stream model needs at least one layer and one head".into(),
            ));
        }
        if self.tokens_per_frame == 0 || self.chunk_frames == 0 {
            return Err(Error::Config(
                "tokens_per_frame and chunk_frames must be at least 1".into(),
            ));
        }
        if self.schedule.is_empty()
            || self.schedule.iter().any(|&t| t == 0)
            || self.schedule.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Config(
                "schedule must be non-empty, positive, strictly decreasing".into(),
            ));
        }
        if !self.jitter.is_finite() || self.jitter < 0.0 {
            return Err(Error::Config("jitter must be finite and >= 0".into()));
        }
        if !self.anchor_gain.is_finite() || self.anchor_gain < 0.0 {
            return Err(Error::Config("anchor_gain must be finite and >= 0".into()));
        }
        if self.kind == StreamKind::Clustered
            && self.anchor_count > self.chunk_frames * self.tokens_per_frame
        {
            return Err(Error::Config(format!(
                "anchor_count {} exceeds the {} tokens of one chunk",
                self.anchor_count,
                self.chunk_frames * self.tokens_per_frame
            )));
        }
        DimSplit::default_for(self.head_dim)?;
        Ok(())
    }

    /// Rotary tables for this model's head dimension and base.
    pub fn frequencies(&self) -> Result<RopeFrequencies> {
        build_frequencies(self.head_dim, DimSplit::default_for(self.head_dim)?, self.rope_base)
    }

    pub fn row_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    fn chunk_tokens(&self) -> usize {
        self.chunk_frames * self.tokens_per_frame
    }

    /// Grid positions of one chunk, frame-major.
    pub fn chunk_positions(&self, chunk_index: usize) -> Vec<TokenPosition> {
        let gw = grid_width(self.tokens_per_frame);
        let start = (chunk_index * self.chunk_frames) as u32;
        (0..self.chunk_tokens())
            .map(|i| {
                let slot = (i % self.tokens_per_frame) as u32;
                TokenPosition::new(start + (i / self.tokens_per_frame) as u32, slot / gw, slot % gw)
            })
            .collect()
    }

    fn check_timestep(&self, timestep: u32) -> Result<()> {
        if timestep != 0 && !self.schedule.contains(&timestep) {
            return Err(Error::UnknownTimestep(timestep));
        }
        Ok(())
    }

    fn gaussian_rows(&self, rng: &mut ChaCha12Rng, n: usize) -> Vec<Vec<f32>> {
        let width = self.row_width();
        (0..n)
            .map(|_| (0..width).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
            .collect()
    }

    /// Cluster direction: unit mass on the slowest temporal rotary pair of
    /// every head, so the anchors' alignment with queries survives the
    /// relative rotations between distant positions.
    fn anchor_direction(&self) -> Vec<f32> {
        let split = DimSplit::default_for(self.head_dim).expect("validated head_dim");
        let mut dir = vec![0.0f32; self.row_width()];
        let c = std::f32::consts::FRAC_1_SQRT_2;
        for head in 0..self.num_heads {
            let base = head * self.head_dim;
            dir[base + split.temporal - 2] = c;
            dir[base + split.temporal - 1] = c;
        }
        dir
    }

    /// Whether `chunk_index` plants anchors (clustered mode only).
    pub fn plants_anchors_in(&self, chunk_index: usize) -> bool {
        self.kind == StreamKind::Clustered
            && self.anchor_count > 0
            && if self.anchor_period == 0 {
                chunk_index == self.anchor_chunk
            } else {
                chunk_index >= self.anchor_chunk
                    && (chunk_index - self.anchor_chunk) % self.anchor_period == 0
            }
    }

    /// Within-chunk row indices that become anchors in a planting chunk,
    /// spread evenly across the chunk.
    pub fn anchor_rows(&self) -> Vec<usize> {
        let tokens = self.chunk_tokens();
        (0..self.anchor_count).map(|j| j * tokens / self.anchor_count).collect()
    }

    /// Random-walk mean of a drifting stream at `chunk_index`, recomputed
    /// from the walk's own stream so the result is independent of call order.
    fn drift_mean(&self, layer: usize, chunk_index: usize) -> Vec<f32> {
        let width = self.row_width();
        let mut rng = derive_rng(self.seed, layer as u64, ROLE_DRIFT, 0);
        let mut mean = vec![0.0f32; width];
        for _ in 0..=chunk_index {
            for m in mean.iter_mut() {
                *m += self.drift_rate as f32 * rng.sample::<f32, _>(StandardNormal);
            }
        }
        mean
    }

    fn clean_queries(&self, layer: usize, chunk_index: usize) -> Vec<Vec<f32>> {
        let mut rng = derive_rng(self.seed, layer as u64, chunk_index as u64, ROLE_QUERY);
        let mut queries = self.gaussian_rows(&mut rng, self.chunk_tokens());
        match self.kind {
            StreamKind::Gaussian => {}
            StreamKind::Clustered => {
                let dir = self.anchor_direction();
                for row in &mut queries {
                    for (x, d) in row.iter_mut().zip(&dir) {
                        *x += d;
                    }
                }
            }
            StreamKind::Drifting => {
                let mean = self.drift_mean(layer, chunk_index);
                for row in &mut queries {
                    for (x, m) in row.iter_mut().zip(&mean) {
                        *x += m;
                    }
                }
            }
        }
        queries
    }

    /// Queries the surrogate would use at `timestep`: the clean queries plus
    /// noise scaled by `jitter * timestep / 1000`. Timestep 0 is the clean
    /// block itself.
    pub fn denoising_queries(
        &self,
        layer: usize,
        chunk_index: usize,
        timestep: u32,
    ) -> Result<Vec<Vec<f32>>> {
        self.check_timestep(timestep)?;
        let mut queries = self.clean_queries(layer, chunk_index);
        if timestep > 0 {
            let scale = (self.jitter * timestep as f64 / 1000.0) as f32;
            let mut rng = derive_rng(
                self.seed,
                layer as u64,
                chunk_index as u64,
                ROLE_DENOISE_BASE + timestep as u64,
            );
            for row in &mut queries {
                for x in row.iter_mut() {
                    *x += scale * rng.sample::<f32, _>(StandardNormal);
                }
            }
        }
        Ok(queries)
    }

    /// One layer's blocks for one chunk: raw keys/values, the queries of the
    /// requested timestep, and grid positions. Keys and values do not depend
    /// on the timestep.
    pub fn generate_chunk(
        &self,
        layer: usize,
        chunk_index: usize,
        timestep: u32,
    ) -> Result<ChunkTensors> {
        self.check_timestep(timestep)?;
        if layer >= self.num_layers {
            return Err(Error::IndexOutOfRange {
                index: layer,
                len: self.num_layers,
            });
        }
        let mut key_rng = derive_rng(self.seed, layer as u64, chunk_index as u64, ROLE_KEY);
        let mut value_rng = derive_rng(self.seed, layer as u64, chunk_index as u64, ROLE_VALUE);
        let mut keys = self.gaussian_rows(&mut key_rng, self.chunk_tokens());
        let values = self.gaussian_rows(&mut value_rng, self.chunk_tokens());

        match self.kind {
            StreamKind::Gaussian => {}
            StreamKind::Clustered => {
                if self.plants_anchors_in(chunk_index) {
                    let dir = self.anchor_direction();
                    let gain = self.anchor_gain as f32;
                    for row in self.anchor_rows() {
                        for (x, d) in keys[row].iter_mut().zip(&dir) {
                            *x += gain * d;
                        }
                    }
                }
            }
            StreamKind::Drifting => {
                let mean = self.drift_mean(layer, chunk_index);
                for row in &mut keys {
                    for (x, m) in row.iter_mut().zip(&mean) {
                        *x += m;
                    }
                }
            }
        }

        Ok(ChunkTensors {
            positions: self.chunk_positions(chunk_index),
            keys,
            values,
            queries: self.denoising_queries(layer, chunk_index, timestep)?,
        })
    }
}

/// Switches for optional rollout instrumentation.
#[derive(Debug, Clone, Copy, Default)]
pub struct RolloutOptions {
    /// Keep an uncompressed shadow cache and score retained attention mass
    /// at every compression event.
    pub oracle: bool,
}

/// One policy invocation on one cache, as seen by the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionEvent {
    pub cache: usize,
    /// Fraction of full-context attention mass surviving this event
    /// (oracle mode only).
    pub retained_mass: Option<f64>,
    /// Candidate-region tokens that were planted anchors, at event time.
    pub anchor_candidates: usize,
    /// Pre-compression slots of selected tokens that were planted anchors.
    pub anchor_slots: Vec<usize>,
    pub report: CompressionReport,
}

/// Trace row: one denoising step of one chunk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub chunk: usize,
    pub step_index: usize,
    pub timestep: u32,
    /// Tokens per cache after any compression at this step.
    pub cache_tokens: usize,
    pub cache_frames: usize,
    pub events: Vec<CompressionEvent>,
    /// Mean retained mass over this step's events (oracle mode only).
    pub retained_mass: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub schedule: Vec<u32>,
    pub steps: Vec<StepRecord>,
    /// Number of steps at which compression fired.
    pub compressions: usize,
}

/// A finished rollout: the trace plus the live cache bank it produced.
pub struct RolloutOutput {
    pub trace: RolloutTrace,
    pub bank: CacheBank,
}

/// Uncompressed keys+values of everything ever inserted into one cache,
/// embedded at original positions; rows are indexed `frame * F + slot`.
struct ShadowCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

fn shadow_row(pos: &TokenPosition, per_frame: usize) -> usize {
    let gw = grid_width(per_frame);
    pos.frame as usize * per_frame + (pos.h * gw + pos.w) as usize
}

fn slice_head(rows: &[Vec<f32>], head: Option<usize>, head_dim: usize) -> Vec<Vec<f32>> {
    match head {
        Some(h) => rows
            .iter()
            .map(|r| r[h * head_dim..(h + 1) * head_dim].to_vec())
            .collect(),
        None => rows.to_vec(),
    }
}

/// Drives `cfg`'s policy over `chunks` generated chunks. Per chunk: walk the
/// schedule high to low, run the policy at the first timestep once the
/// window has filled, then append the chunk's blocks to every layer.
pub fn rollout(
    model: &StreamModel,
    cfg: &CachePolicyConfig,
    chunks: usize,
    options: RolloutOptions,
) -> Result<RolloutOutput> {
    model.validate()?;
    cfg.validate()?;
    if chunks == 0 {
        return Err(Error::Config("rollout needs at least one chunk".into()));
    }
    if model.tokens_per_frame != cfg.tokens_per_frame {
        return Err(Error::Config(format!(
            "model tokens_per_frame {} does not match cache config {}",
            model.tokens_per_frame, cfg.tokens_per_frame
        )));
    }
    if model.chunk_frames != cfg.chunk_frames {
        return Err(Error::Config(format!(
            "model chunk_frames {} does not match cache config {}",
            model.chunk_frames, cfg.chunk_frames
        )));
    }

    let freqs = model.frequencies()?;
    let mut bank = CacheBank::new(cfg.clone(), freqs.clone(), model.num_layers, model.num_heads)?;
    let head_dim = model.head_dim;
    let per_frame = model.tokens_per_frame;
    let scale = match cfg.head_mode {
        HeadMode::PerHead => default_scale(head_dim),
        HeadMode::Shared => default_scale(model.row_width()),
    };

    let mut shadows: Vec<ShadowCache> = (0..bank.cache_count())
        .map(|_| ShadowCache {
            keys: Vec::new(),
            values: Vec::new(),
        })
        .collect();
    let mut anchor_set: HashSet<TokenPosition> = HashSet::new();

    let mut steps = Vec::with_capacity(chunks * model.schedule.len());
    let mut compressions = 0usize;
    let schedule = model.schedule.clone();

    for chunk in 0..chunks {
        let tensors: Vec<ChunkTensors> = (0..model.num_layers)
            .map(|layer| model.generate_chunk(layer, chunk, 0))
            .collect::<Result<_>>()?;

        for (step_index, &timestep) in schedule.iter().enumerate() {
            let mut events = Vec::new();
            if step_index == 0 && bank.trigger_due() {
                // Embed this chunk's denoising queries (and, in oracle mode,
                // its clean queries as mass probes) once per layer.
                let mut denoise_by_layer = Vec::with_capacity(model.num_layers);
                let mut probes_by_layer = Vec::with_capacity(model.num_layers);
                for layer in 0..model.num_layers {
                    let positions = &tensors[layer].positions;
                    let mut denoise = model.denoising_queries(layer, chunk, timestep)?;
                    for (row, pos) in denoise.iter_mut().zip(positions) {
                        apply_rope(row, *pos, &freqs)?;
                    }
                    denoise_by_layer.push(denoise);
                    if options.oracle {
                        let mut probes = tensors[layer].queries.clone();
                        for (row, pos) in probes.iter_mut().zip(positions) {
                            apply_rope(row, *pos, &freqs)?;
                        }
                        probes_by_layer.push(probes);
                    }
                }

                for ci in 0..bank.cache_count() {
                    let (layer, head) = bank.cache_identity(ci);
                    let recent_rows: Vec<Vec<f32>> = bank
                        .recent_queries(ci)
                        .iter()
                        .flat_map(|fq| fq.rows.iter().cloned())
                        .collect();
                    let denoise_rows = slice_head(&denoise_by_layer[layer], head, head_dim);

                    let pre_positions: Option<Vec<TokenPosition>> =
                        if model.kind == StreamKind::Clustered {
                            Some(
                                bank.cache(ci)
                                    .expect("cache index")
                                    .tokens()
                                    .iter()
                                    .map(|t| t.original)
                                    .collect(),
                            )
                        } else {
                            None
                        };
                    let part = bank.cache(ci).expect("cache index").partition(cfg)?;

                    let mut rng = derive_rng(model.seed, ci as u64, chunk as u64, ROLE_POLICY);
                    let report = policy_step(
                        bank.cache_mut(ci).expect("cache index"),
                        &recent_rows,
                        &denoise_rows,
                        cfg,
                        &freqs,
                        &mut rng,
                        0,
                    )?;
                    let Some(report) = report else { continue };

                    let (anchor_candidates, anchor_slots) = match &pre_positions {
                        Some(positions) => {
                            let in_set = |i: &usize| anchor_set.contains(&positions[*i]);
                            let candidates =
                                (part.candidates.clone()).filter(|i| in_set(i)).count();
                            let slots: Vec<usize> =
                                report.selected.iter().filter(|i| in_set(i)).copied().collect();
                            (candidates, slots)
                        }
                        None => (0, Vec::new()),
                    };

                    let mass = if options.oracle {
                        let shadow = &shadows[ci];
                        let retained: Vec<usize> = bank
                            .cache(ci)
                            .expect("cache index")
                            .tokens()
                            .iter()
                            .map(|t| shadow_row(&t.original, per_frame))
                            .collect();
                        let probes: Vec<Vec<f32>> =
                            slice_head(&probes_by_layer[layer], head, head_dim);
                        Some(retained_mass(&probes, &shadow.keys, &retained, scale)?)
                    } else {
                        None
                    };

                    events.push(CompressionEvent {
                        cache: ci,
                        retained_mass: mass,
                        anchor_candidates,
                        anchor_slots,
                        report,
                    });
                }
            }

            let step_mass = if options.oracle && !events.is_empty() {
                let masses: Vec<f64> = events.iter().filter_map(|e| e.retained_mass).collect();
                Some(masses.iter().sum::<f64>() / masses.len() as f64)
            } else {
                None
            };
            if !events.is_empty() {
                compressions += 1;
            }
            steps.push(StepRecord {
                chunk,
                step_index,
                timestep,
                cache_tokens: bank.token_count(),
                cache_frames: bank.caches()[0].frame_equivalents(),
                events,
                retained_mass: step_mass,
            });
        }

        for (layer, t) in tensors.iter().enumerate() {
            bank.append_layer_chunk(layer, &t.keys, &t.values, &t.queries, &t.positions)?;
            if options.oracle {
                let mut embedded = t.keys.clone();
                for (row, pos) in embedded.iter_mut().zip(&t.positions) {
                    apply_rope(row, *pos, &freqs)?;
                }
                for ci in bank.layer_cache_indices(layer) {
                    let (_, head) = bank.cache_identity(ci);
                    let shadow = &mut shadows[ci];
                    shadow.keys.extend(slice_head(&embedded, head, head_dim));
                    shadow.values.extend(slice_head(&t.values, head, head_dim));
                }
            }
        }
        if model.plants_anchors_in(chunk) {
            let positions = model.chunk_positions(chunk);
            for row in model.anchor_rows() {
                anchor_set.insert(positions[row]);
            }
        }
    }

    Ok(RolloutOutput {
        trace: RolloutTrace {
            schedule,
            steps,
            compressions,
        },
        bank,
    })
}

/// Per-slot selection counts aggregated over every compression event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionHeatmap {
    /// Times each pre-compression cache slot was selected.
    pub slot_counts: Vec<u64>,
    /// Subset of `slot_counts` contributed by planted anchor tokens.
    pub anchor_counts: Vec<u64>,
    /// First slot past the sink region: `S * F`.
    pub sink_end: usize,
    /// Largest end of the candidate region over events: `max(pre - R * F)`.
    pub candidate_end: usize,
    pub events: usize,
}

/// Aggregates Top-C selection counts by cache slot. The slot space covers
/// the largest window any event compressed; a trace without compressions
/// yields all-zero counts over the trigger window.
pub fn selection_heatmap(
    trace: &RolloutTrace,
    cfg: &CachePolicyConfig,
) -> Result<SelectionHeatmap> {
    if trace.steps.is_empty() {
        return Err(Error::Config("trace has no steps to aggregate".into()));
    }
    let max_pre = trace
        .steps
        .iter()
        .flat_map(|s| s.events.iter())
        .map(|e| e.report.pre_size)
        .max();
    let slots = max_pre.unwrap_or(cfg.trigger_tokens());
    let mut slot_counts = vec![0u64; slots];
    let mut anchor_counts = vec![0u64; slots];
    let mut candidate_end = cfg.trigger_tokens() - cfg.recent_tokens();
    let mut events = 0usize;
    for step in &trace.steps {
        for event in &step.events {
            events += 1;
            candidate_end = candidate_end.max(event.report.pre_size - cfg.recent_tokens());
            for &slot in &event.report.selected {
                slot_counts[slot] += 1;
            }
            for &slot in &event.anchor_slots {
                anchor_counts[slot] += 1;
            }
        }
    }
    Ok(SelectionHeatmap {
        slot_counts,
        anchor_counts,
        sink_end: cfg.sink_tokens(),
        candidate_end,
        events,
    })
}

/// One policy's aggregate behavior over a rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub compressions: usize,
    /// Tokens evicted across all events and caches.
    pub evicted_tokens: u64,
    pub final_tokens: usize,
    pub final_frames: usize,
    pub mean_retained_mass: Option<f64>,
    pub min_retained_mass: Option<f64>,
}

/// Summarizes one finished rollout.
pub fn summarize(output: &RolloutOutput, cfg: &CachePolicyConfig) -> PolicySummary {
    let mut evicted = 0u64;
    let mut masses: Vec<f64> = Vec::new();
    for step in &output.trace.steps {
        for event in &step.events {
            evicted += event.report.evicted.len() as u64;
            if let Some(m) = event.retained_mass {
                masses.push(m);
            }
        }
    }
    let mean = if masses.is_empty() {
        None
    } else {
        Some(masses.iter().sum::<f64>() / masses.len() as f64)
    };
    let min = masses.iter().cloned().reduce(f64::min);
    PolicySummary {
        policy: cfg.policy,
        compressions: output.trace.compressions,
        evicted_tokens: evicted,
        final_tokens: output.bank.token_count(),
        final_frames: output.bank.caches()[0].frame_equivalents(),
        mean_retained_mass: mean,
        min_retained_mass: min,
    }
}

/// Runs the same stream through each config (shadow oracle on) and returns
/// one summary per config, in order. All configs must agree with the model
/// on frame shape.
pub fn compare_policies(
    model: &StreamModel,
    cfgs: &[CachePolicyConfig],
    chunks: usize,
) -> Result<Vec<PolicySummary>> {
    if cfgs.is_empty() {
        return Err(Error::Config("compare_policies needs at least one config".into()));
    }
    cfgs.iter()
        .map(|cfg| {
            let output = rollout(model, cfg, chunks, RolloutOptions { oracle: true })?;
            Ok(summarize(&output, cfg))
        })
        .collect()
}
