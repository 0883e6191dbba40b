//! Cache management policies: deep-sink temporal re-alignment, importance
//! scoring over the candidate region, Top-C selection, phase unification of
//! the survivors, and the rolling baselines the engine is compared against.
//!
//! The compressed cache always assembles as `[sink | selected | recent]` in
//! original insertion order. Re-alignment anchors the post-compression
//! timeline at the recent block, whose phases are never touched: with `n`
//! distinct surviving frames the sink is rotated to end at
//! `recent_start - n` (one frame earlier in adjacent mode) and the k-th
//! distinct surviving frame is re-rotated to `sink_end + 1 + k`, which
//! packs the survivors into the frames directly before the recent block.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::default_scale;
use crate::cache::{CachePolicyConfig, LayerCache, PolicyKind, QueryMode, ScoreMode};
use crate::error::{Error, Result};
use crate::rope::RopeFrequencies;

/// Importance scores over the candidate region. `candidate_indices[i]` is
/// the cache token index that `scores[i]` belongs to.
#[derive(Debug, Clone)]
pub struct ImportanceVector {
    pub scores: Vec<f64>,
    pub candidate_indices: Vec<usize>,
}

impl ImportanceVector {
    pub fn new(scores: Vec<f64>, candidate_indices: Vec<usize>) -> Result<Self> {
        if scores.len() != candidate_indices.len() {
            return Err(Error::Dimension {
                expected: candidate_indices.len(),
                got: scores.len(),
                context: "importance scores vs candidate indices",
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config("importance scores must be finite".into()));
        }
        Ok(Self {
            scores,
            candidate_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// What one policy invocation did to a cache.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionReport {
    pub policy: PolicyKind,
    /// Cache token indices (pre-compression) that were kept from the
    /// candidate region, ascending.
    pub selected: Vec<usize>,
    /// Cache token indices (pre-compression) that were dropped, ascending.
    pub evicted: Vec<usize>,
    /// Temporal shift applied to the sink block, in frames.
    pub delta_sink: i64,
    /// Temporal shift applied to each selected token, parallel to `selected`.
    pub delta_top: Vec<i64>,
    pub pre_size: usize,
    pub post_size: usize,
}

/// Frame shift that closes the gap between the sink's last frame and the
/// tail's first frame: `delta = s_tail - s_sink`.
pub fn compute_delta_sink(s_tail: i64, s_sink: i64) -> Result<i64> {
    if s_tail < s_sink {
        return Err(Error::InvertedSink {
            tail: s_tail,
            sink: s_sink,
        });
    }
    Ok(s_tail - s_sink)
}

fn adjacency_offset(cfg: &CachePolicyConfig) -> i64 {
    if cfg.sink_adjacent {
        1
    } else {
        0
    }
}

/// Rotates the first `sink_tokens` tokens so the sink's last effective frame
/// becomes `target_end`. Returns the applied shift.
fn realign_sink_to(
    cache: &mut LayerCache,
    sink_tokens: usize,
    target_end: i64,
    freqs: &RopeFrequencies,
) -> Result<i64> {
    if sink_tokens == 0 {
        return Ok(0);
    }
    let current = cache.tokens()[sink_tokens - 1].effective_frame as i64;
    let delta = target_end - current;
    cache.shift_range(0..sink_tokens, delta, freqs)?;
    Ok(delta)
}

/// Re-rotates the sink block so its last frame meets the tail's first frame
/// (or sits one frame before it in adjacent mode). Idempotent until the tail
/// moves again. Returns the applied shift.
pub fn deep_sink_realign(
    cache: &mut LayerCache,
    cfg: &CachePolicyConfig,
    freqs: &RopeFrequencies,
) -> Result<i64> {
    let sink_tokens = cfg.sink_tokens();
    if sink_tokens == 0 {
        return Ok(0);
    }
    if cache.token_count() <= sink_tokens {
        return Err(Error::CacheTooShort {
            tokens: cache.token_count(),
            required: sink_tokens + 1,
        });
    }
    let s_sink = cache.tokens()[sink_tokens - 1].effective_frame as i64;
    let s_tail = cache.tokens()[sink_tokens].effective_frame as i64;
    let delta = (compute_delta_sink(s_tail, s_sink)? - adjacency_offset(cfg)).max(0);
    cache.shift_range(0..sink_tokens, delta, freqs)?;
    Ok(delta)
}

fn gather_queries<'a>(
    recent: &'a [Vec<f32>],
    denoising: &'a [Vec<f32>],
    mode: QueryMode,
) -> Result<Vec<&'a [f32]>> {
    let mut rows: Vec<&[f32]> = Vec::new();
    match mode {
        QueryMode::PastOnly => rows.extend(recent.iter().map(|r| r.as_slice())),
        QueryMode::DenoisingOnly => rows.extend(denoising.iter().map(|r| r.as_slice())),
        QueryMode::Both => {
            rows.extend(recent.iter().map(|r| r.as_slice()));
            rows.extend(denoising.iter().map(|r| r.as_slice()));
        }
    }
    if rows.is_empty() {
        let (mode, missing) = match mode {
            QueryMode::PastOnly => ("past_only", "recent"),
            QueryMode::DenoisingOnly => ("denoising_only", "denoising"),
            QueryMode::Both => ("both", "recent and denoising"),
        };
        return Err(Error::EmptyQueries { mode, missing });
    }
    Ok(rows)
}

/// Sums query-key logits over the contributing query set for every token in
/// `candidates`. `keys` is the full cache key set so the softmax score mode
/// can normalize each query row over the whole cache; raw-logit mode only
/// reads the candidate range and collapses the query sum first (the score is
/// linear in the query, so one summed query row scores every candidate).
pub fn importance_scores(
    recent_queries: &[Vec<f32>],
    denoising_queries: &[Vec<f32>],
    keys: &[&[f32]],
    candidates: std::ops::Range<usize>,
    query_mode: QueryMode,
    score_mode: ScoreMode,
) -> Result<ImportanceVector> {
    if candidates.end > keys.len() {
        return Err(Error::IndexOutOfRange {
            index: candidates.end,
            len: keys.len(),
        });
    }
    let rows = gather_queries(recent_queries, denoising_queries, query_mode)?;
    let width = keys.first().map_or_else(|| rows[0].len(), |k| k.len());
    for row in rows.iter().chain(keys.iter()) {
        if row.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: row.len(),
                context: "importance_scores row width",
            });
        }
    }

    let candidate_indices: Vec<usize> = candidates.clone().collect();
    let scores = match score_mode {
        ScoreMode::RawLogit => {
            let mut qsum = vec![0.0f64; width];
            for row in &rows {
                for (acc, x) in qsum.iter_mut().zip(row.iter()) {
                    *acc += *x as f64;
                }
            }
            keys[candidates]
                .iter()
                .map(|k| qsum.iter().zip(k.iter()).map(|(q, x)| q * *x as f64).sum())
                .collect()
        }
        ScoreMode::Softmax => {
            let scale = default_scale(width);
            let mut scores = vec![0.0f64; candidate_indices.len()];
            for row in &rows {
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|k| row.iter().zip(k.iter()).map(|(q, x)| *q as f64 * *x as f64).sum::<f64>() * scale)
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
                for (score, idx) in scores.iter_mut().zip(&candidate_indices) {
                    *score += (logits[*idx] - max).exp() / total;
                }
            }
            scores
        }
    };
    ImportanceVector::new(scores, candidate_indices)
}

/// Picks the `c_tok` highest-scoring candidates. Ties break toward the
/// earlier cache position; the result lists candidate ordinals ascending.
pub fn top_c_select(importance: &ImportanceVector, c_tok: usize) -> Vec<usize> {
    let take = c_tok.min(importance.len());
    if take == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        importance.scores[b]
            .total_cmp(&importance.scores[a])
            .then_with(|| a.cmp(&b))
    });
    let mut picked = order[..take].to_vec();
    picked.sort_unstable();
    picked
}

fn distinct_original_targets(
    cache: &LayerCache,
    selected: &[usize],
    target_start: i64,
) -> Vec<i64> {
    let mut deltas = Vec::with_capacity(selected.len());
    let mut last_original = None;
    let mut k: i64 = -1;
    for &idx in selected {
        let tok = &cache.tokens()[idx];
        if last_original != Some(tok.original.frame) {
            debug_assert!(
                last_original.map_or(true, |f| tok.original.frame > f),
                "selected tokens out of temporal order"
            );
            last_original = Some(tok.original.frame);
            k += 1;
        }
        deltas.push(target_start + k - tok.effective_frame as i64);
    }
    deltas
}

fn validate_selected(cache: &LayerCache, selected: &[usize]) -> Result<()> {
    for pair in selected.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::Config(
                "selected token indices must be strictly ascending".into(),
            ));
        }
    }
    if let Some(&last) = selected.last() {
        if last >= cache.token_count() {
            return Err(Error::IndexOutOfRange {
                index: last,
                len: cache.token_count(),
            });
        }
    }
    Ok(())
}

/// Re-rotates the selected survivors onto a packed timeline: the k-th
/// distinct surviving original frame lands on effective frame
/// `sink_end + 1 + k`. With no sink the packed block is anchored to end
/// directly before the recent region instead. Returns the per-token shifts,
/// parallel to `selected`.
pub fn unify_topc_rope(
    cache: &mut LayerCache,
    selected: &[usize],
    cfg: &CachePolicyConfig,
    freqs: &RopeFrequencies,
) -> Result<Vec<i64>> {
    validate_selected(cache, selected)?;
    if selected.is_empty() {
        return Ok(Vec::new());
    }
    let target_start = if cfg.sink_tokens() > 0 {
        cache.tokens()[cfg.sink_tokens() - 1].effective_frame as i64 + 1
    } else {
        let distinct = {
            let mut n = 0usize;
            let mut last = None;
            for &idx in selected {
                let f = cache.tokens()[idx].original.frame;
                if last != Some(f) {
                    n += 1;
                    last = Some(f);
                }
            }
            n as i64
        };
        let anchor = if cfg.recent_tokens() > 0 && cache.token_count() > cfg.recent_tokens() {
            cache.tokens()[cache.token_count() - cfg.recent_tokens()].effective_frame as i64
        } else {
            cache.next_frame().unwrap_or(0) as i64
        };
        anchor - distinct
    };
    let deltas = distinct_original_targets(cache, selected, target_start);
    for (&idx, &delta) in selected.iter().zip(&deltas) {
        cache.shift_token(idx, delta, freqs)?;
    }
    cache.finish_shifts();
    Ok(deltas)
}

fn check_trigger(cache: &LayerCache, cfg: &CachePolicyConfig) -> Result<()> {
    if cache.token_count() < cfg.trigger_tokens() {
        return Err(Error::WindowNotFull {
            tokens: cache.token_count(),
            trigger: cfg.trigger_tokens(),
        });
    }
    Ok(())
}

/// Shared tail of the selection pipeline: realign the sink against the
/// packed survivor block, re-rotate the survivors, evict the rest.
fn compress_with_scores(
    cache: &mut LayerCache,
    importance: &ImportanceVector,
    cfg: &CachePolicyConfig,
    freqs: &RopeFrequencies,
    policy: PolicyKind,
) -> Result<CompressionReport> {
    let pre_size = cache.token_count();
    let part = cache.partition(cfg)?;
    debug_assert_eq!(importance.candidate_indices.len(), part.candidates.len());

    let ordinals = top_c_select(importance, cfg.top_c_tokens());
    let selected: Vec<usize> = ordinals
        .iter()
        .map(|&o| importance.candidate_indices[o])
        .collect();

    let mut distinct = 0usize;
    let mut last = None;
    for &idx in &selected {
        let f = cache.tokens()[idx].original.frame;
        if last != Some(f) {
            distinct += 1;
            last = Some(f);
        }
    }

    // The recent block anchors the packed timeline; everything earlier is
    // rotated up against it.
    let anchor = if cfg.recent_tokens() > 0 {
        cache.tokens()[part.recent.start].effective_frame as i64
    } else {
        cache.next_frame().unwrap_or(0) as i64
    };
    let sink_target_end = anchor - distinct as i64 - adjacency_offset(cfg);
    let delta_sink = if cfg.sink_tokens() > 0 {
        realign_sink_to(cache, cfg.sink_tokens(), sink_target_end, freqs)?
    } else {
        0
    };

    let delta_top = unify_topc_rope(cache, &selected, cfg, freqs)?;

    let mut keep: Vec<usize> = (part.sink.clone())
        .chain(selected.iter().copied())
        .chain(part.recent.clone())
        .collect();
    keep.sort_unstable();
    let evicted: Vec<usize> = {
        let mut keep_iter = keep.iter().peekable();
        (0..pre_size)
            .filter(|i| {
                if keep_iter.peek() == Some(&i) {
                    keep_iter.next();
                    false
                } else {
                    true
                }
            })
            .collect()
    };
    cache.retain_indices(&keep)?;

    debug_assert!(cache.timeline_contiguous(), "compressed timeline has gaps");
    Ok(CompressionReport {
        policy,
        selected,
        evicted,
        delta_sink,
        delta_top,
        pre_size,
        post_size: cache.token_count(),
    })
}

/// Full compression pass: partition the window, score the candidate region
/// against the configured query sets, keep the Top-C survivors, re-rotate
/// sink and survivors onto a packed timeline, evict the rest. The cache
/// shrinks from `max_window_frames` to `budget_frames` worth of tokens.
pub fn participative_compress(
    cache: &mut LayerCache,
    recent_queries: &[Vec<f32>],
    denoising_queries: &[Vec<f32>],
    cfg: &CachePolicyConfig,
    freqs: &RopeFrequencies,
) -> Result<CompressionReport> {
    check_trigger(cache, cfg)?;
    let part = cache.partition(cfg)?;
    let importance = if part.candidates.is_empty() {
        ImportanceVector::new(Vec::new(), Vec::new())?
    } else {
        let keys: Vec<&[f32]> = cache.tokens().iter().map(|t| t.key.as_slice()).collect();
        importance_scores(
            recent_queries,
            denoising_queries,
            &keys,
            part.candidates.clone(),
            cfg.query_mode,
            cfg.score_mode,
        )?
    };
    compress_with_scores(cache, &importance, cfg, freqs, PolicyKind::DeepForcing)
}

fn roll_tail(
    cache: &mut LayerCache,
    cfg: &CachePolicyConfig,
    sink_frames: usize,
    policy: PolicyKind,
    realign_adjacent: bool,
    freqs: &RopeFrequencies,
) -> Result<CompressionReport> {
    check_trigger(cache, cfg)?;
    let pre_size = cache.token_count();
    let sink_tokens = sink_frames * cfg.tokens_per_frame;
    let drop_tokens = cfg.chunk_frames * cfg.tokens_per_frame;
    if sink_tokens + drop_tokens > pre_size {
        return Err(Error::OverEviction {
            requested: sink_frames + cfg.chunk_frames,
            held: cache.frame_equivalents(),
        });
    }
    let evicted: Vec<usize> = (sink_tokens..sink_tokens + drop_tokens).collect();
    cache.evict_token_range(sink_tokens..sink_tokens + drop_tokens)?;

    let delta_sink = if realign_adjacent && sink_tokens > 0 && cache.token_count() > sink_tokens {
        let tail_first = cache.tokens()[sink_tokens].effective_frame as i64;
        realign_sink_to(cache, sink_tokens, tail_first - 1, freqs)?
    } else {
        0
    };

    Ok(CompressionReport {
        policy,
        selected: Vec::new(),
        evicted,
        delta_sink,
        delta_top: Vec::new(),
        pre_size,
        post_size: cache.token_count(),
    })
}

/// One rolling step for the non-selection policies. `fifo` drops the oldest
/// chunk outright; the sink variants drop the oldest chunk after their sink
/// block; `random_topc` runs the full selection pipeline with standard-
/// normal scores drawn from `rng`.
pub fn baseline_step<R: Rng>(
    cache: &mut LayerCache,
    cfg: &CachePolicyConfig,
    freqs: &RopeFrequencies,
    rng: &mut R,
) -> Result<CompressionReport> {
    match cfg.policy {
        PolicyKind::Fifo => {
            check_trigger(cache, cfg)?;
            let pre_size = cache.token_count();
            let drop_tokens = cfg.chunk_frames * cfg.tokens_per_frame;
            if drop_tokens > pre_size {
                return Err(Error::OverEviction {
                    requested: cfg.chunk_frames,
                    held: cache.frame_equivalents(),
                });
            }
            cache.evict_fifo(cfg.chunk_frames)?;
            Ok(CompressionReport {
                policy: PolicyKind::Fifo,
                selected: Vec::new(),
                evicted: (0..drop_tokens).collect(),
                delta_sink: 0,
                delta_top: Vec::new(),
                pre_size,
                post_size: cache.token_count(),
            })
        }
        PolicyKind::ShallowSink => roll_tail(
            cache,
            cfg,
            cfg.sink_frames,
            PolicyKind::ShallowSink,
            false,
            freqs,
        ),
        PolicyKind::LongliveSink => {
            roll_tail(cache, cfg, 3, PolicyKind::LongliveSink, false, freqs)
        }
        PolicyKind::RollingforcingSink => {
            roll_tail(cache, cfg, 3, PolicyKind::RollingforcingSink, true, freqs)
        }
        PolicyKind::RandomTopc => {
            check_trigger(cache, cfg)?;
            let part = cache.partition(cfg)?;
            let scores: Vec<f64> = (0..part.candidates.len())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let importance = ImportanceVector::new(scores, part.candidates.clone().collect())?;
            compress_with_scores(cache, &importance, cfg, freqs, PolicyKind::RandomTopc)
        }
        PolicyKind::DeepForcing => Err(Error::Config(
            "deep_forcing is the primary policy, not a baseline step".into(),
        )),
    }
}

/// Policy dispatch for one denoising step. Must only be called at the first
/// step of a chunk's schedule; returns `None` when the window has not filled
/// yet, otherwise runs the configured policy and returns its report.
pub fn policy_step<R: Rng>(
    cache: &mut LayerCache,
    recent_queries: &[Vec<f32>],
    denoising_queries: &[Vec<f32>],
    cfg: &CachePolicyConfig,
    freqs: &RopeFrequencies,
    rng: &mut R,
    step_index: usize,
) -> Result<Option<CompressionReport>> {
    if step_index != 0 {
        return Err(Error::WrongTimestep { step_index });
    }
    if cache.token_count() < cfg.trigger_tokens() {
        return Ok(None);
    }
    let report = match cfg.policy {
        PolicyKind::DeepForcing => {
            participative_compress(cache, recent_queries, denoising_queries, cfg, freqs)?
        }
        _ => baseline_step(cache, cfg, freqs, rng)?,
    };
    Ok(Some(report))
}
