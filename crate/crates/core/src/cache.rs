//! Streaming KV cache storage: per-layer token records, region partition
//! arithmetic, FIFO eviction, and the multi-layer bank that fans one policy
//! config out over every attention layer (and, in per-head mode, every head).
//!
//! Keys are stored already position-embedded; values are stored exactly as
//! inserted and are never touched afterward. Each token carries its original
//! grid position plus the effective frame its temporal phase currently
//! encodes, which starts equal to the original frame and only changes when a
//! policy re-rotates the key.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{apply_rope, RopeFrequencies, TokenPosition};

/// One cached token: embedded key, raw value, and position bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRecord {
    pub key: Vec<f32>,
    pub value: Vec<f32>,
    pub original: TokenPosition,
    pub effective_frame: u32,
}

/// Cache policy variants selectable at runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Rolling window: evict the oldest frames, no sink.
    Fifo,
    /// Sink of `sink_frames` frames kept verbatim, FIFO tail, no re-rotation.
    ShallowSink,
    /// Fixed 3-frame sink left at its original phases forever, FIFO tail.
    LongliveSink,
    /// Fixed 3-frame sink re-rotated to sit against the tail on every roll.
    RollingforcingSink,
    /// Full sink + selection pipeline with standard-normal importance draws.
    RandomTopc,
    /// Deep sink re-alignment plus importance-ranked candidate selection.
    DeepForcing,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Fifo => "fifo",
            PolicyKind::ShallowSink => "shallow_sink",
            PolicyKind::LongliveSink => "longlive_sink",
            PolicyKind::RollingforcingSink => "rollingforcing_sink",
            PolicyKind::RandomTopc => "random_topc",
            PolicyKind::DeepForcing => "deep_forcing",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fifo" => Ok(PolicyKind::Fifo),
            "shallow_sink" => Ok(PolicyKind::ShallowSink),
            "longlive_sink" => Ok(PolicyKind::LongliveSink),
            "rollingforcing_sink" => Ok(PolicyKind::RollingforcingSink),
            "random_topc" => Ok(PolicyKind::RandomTopc),
            "deep_forcing" => Ok(PolicyKind::DeepForcing),
            other => Err(Error::Config(format!(
                "unknown policy {other:?}; expected one of fifo, shallow_sink, longlive_sink, \
                 rollingforcing_sink, random_topc, deep_forcing"
            ))),
        }
    }
}

/// Which query set feeds importance scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    PastOnly,
    DenoisingOnly,
    Both,
}

/// Raw summed logits, or per-query softmax over the full cache first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    RawLogit,
    Softmax,
}

/// Selection granularity across attention heads. `PerHead` gives every
/// (layer, head) pair its own cache so each head keeps its own survivors;
/// `Shared` keeps one cache per layer and sums scores over heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    PerHead,
    Shared,
}

/// Frame budgets and mode switches for one cache policy.
///
/// `sink_frames` + `recent_frames` must fit inside `budget_frames`, which in
/// turn must fit inside `max_window_frames`; compression triggers when the
/// cache reaches `max_window_frames` worth of tokens and shrinks it back to
/// `budget_frames` worth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CachePolicyConfig {
    pub sink_frames: usize,
    pub budget_frames: usize,
    pub recent_frames: usize,
    pub max_window_frames: usize,
    pub tokens_per_frame: usize,
    pub chunk_frames: usize,
    pub policy: PolicyKind,
    pub query_mode: QueryMode,
    pub score_mode: ScoreMode,
    pub head_mode: HeadMode,
    /// When true the sink is re-aligned to end one frame before the tail
    /// instead of landing exactly on the tail's first frame.
    pub sink_adjacent: bool,
}

impl Default for CachePolicyConfig {
    fn default() -> Self {
        Self {
            sink_frames: 10,
            budget_frames: 16,
            recent_frames: 4,
            max_window_frames: 21,
            tokens_per_frame: 64,
            chunk_frames: 3,
            policy: PolicyKind::DeepForcing,
            query_mode: QueryMode::Both,
            score_mode: ScoreMode::RawLogit,
            head_mode: HeadMode::PerHead,
            sink_adjacent: false,
        }
    }
}

impl CachePolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let (s, n, r, m) = (
            self.sink_frames,
            self.budget_frames,
            self.recent_frames,
            self.max_window_frames,
        );
        if s + r > n {
            return Err(Error::Config(format!(
                "sink_frames {s} + recent_frames {r} exceed budget_frames {n}"
            )));
        }
        if n > m {
            return Err(Error::Config(format!(
                "budget_frames {n} exceeds max_window_frames {m}"
            )));
        }
        if self.tokens_per_frame == 0 {
            return Err(Error::Config("tokens_per_frame must be at least 1".into()));
        }
        if self.chunk_frames == 0 {
            return Err(Error::Config("chunk_frames must be at least 1".into()));
        }
        Ok(())
    }

    /// Token capacity of the selected block: `(N - S - R) * F`.
    pub fn top_c_tokens(&self) -> usize {
        (self.budget_frames - self.sink_frames - self.recent_frames) * self.tokens_per_frame
    }

    /// Token count at which compression fires.
    pub fn trigger_tokens(&self) -> usize {
        self.max_window_frames * self.tokens_per_frame
    }

    pub fn sink_tokens(&self) -> usize {
        self.sink_frames * self.tokens_per_frame
    }

    pub fn recent_tokens(&self) -> usize {
        self.recent_frames * self.tokens_per_frame
    }
}

/// Token-index ranges of the three cache regions at compression time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub sink: std::ops::Range<usize>,
    pub candidates: std::ops::Range<usize>,
    pub recent: std::ops::Range<usize>,
}

/// KV cache for one attention layer (or one head of one layer when running
/// per-head selection).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "LayerCacheSerde", into = "LayerCacheSerde")]
pub struct LayerCache {
    tokens_per_frame: usize,
    num_heads: usize,
    head_dim: usize,
    next_frame: Option<u32>,
    tokens: Vec<TokenRecord>,
    frame_starts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerCacheSerde {
    tokens_per_frame: usize,
    num_heads: usize,
    head_dim: usize,
    next_frame: Option<u32>,
    tokens: Vec<TokenRecord>,
}

impl From<LayerCacheSerde> for LayerCache {
    fn from(s: LayerCacheSerde) -> Self {
        let mut cache = LayerCache {
            tokens_per_frame: s.tokens_per_frame,
            num_heads: s.num_heads,
            head_dim: s.head_dim,
            next_frame: s.next_frame,
            tokens: s.tokens,
            frame_starts: Vec::new(),
        };
        cache.rebuild_frame_index();
        cache
    }
}

impl From<LayerCache> for LayerCacheSerde {
    fn from(c: LayerCache) -> Self {
        LayerCacheSerde {
            tokens_per_frame: c.tokens_per_frame,
            num_heads: c.num_heads,
            head_dim: c.head_dim,
            next_frame: c.next_frame,
            tokens: c.tokens,
        }
    }
}

impl LayerCache {
    pub fn new(tokens_per_frame: usize, num_heads: usize, head_dim: usize) -> Self {
        Self {
            tokens_per_frame,
            num_heads,
            head_dim,
            next_frame: None,
            tokens: Vec::new(),
            frame_starts: Vec::new(),
        }
    }

    pub fn tokens(&self) -> &[TokenRecord] {
        &self.tokens
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn row_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Cache size in whole-frame equivalents (token count over F, rounded up;
    /// the count is an exact multiple of F everywhere in the engine's flow).
    pub fn frame_equivalents(&self) -> usize {
        self.tokens.len().div_ceil(self.tokens_per_frame)
    }

    /// Number of distinct effective frames currently cached.
    pub fn distinct_frames(&self) -> usize {
        self.frame_starts.len()
    }

    /// Start offset of each distinct effective frame, in token order.
    pub fn frame_starts(&self) -> &[usize] {
        &self.frame_starts
    }

    /// Original frame index the next appended chunk must start at, if the
    /// cache has seen any chunk yet.
    pub fn next_frame(&self) -> Option<u32> {
        self.next_frame
    }

    fn rebuild_frame_index(&mut self) {
        self.frame_starts.clear();
        let mut last = None;
        for (i, tok) in self.tokens.iter().enumerate() {
            if last != Some(tok.effective_frame) {
                self.frame_starts.push(i);
                last = Some(tok.effective_frame);
            }
        }
    }

    /// Appends one chunk of already-embedded keys and raw values. Rows are
    /// frame-major: every frame contributes exactly `tokens_per_frame`
    /// consecutive rows, and frames continue the cached timeline.
    pub fn append_chunk(
        &mut self,
        keys: &[Vec<f32>],
        values: &[Vec<f32>],
        positions: &[TokenPosition],
    ) -> Result<()> {
        let width = self.row_width();
        if keys.len() != positions.len() || values.len() != positions.len() {
            return Err(Error::Dimension {
                expected: positions.len(),
                got: keys.len().min(values.len()),
                context: "append_chunk row count",
            });
        }
        if positions.is_empty() || positions.len() % self.tokens_per_frame != 0 {
            return Err(Error::Dimension {
                expected: self.tokens_per_frame,
                got: positions.len(),
                context: "append_chunk token count per frame",
            });
        }
        for row in keys.iter().chain(values) {
            if row.len() != width {
                return Err(Error::Dimension {
                    expected: width,
                    got: row.len(),
                    context: "append_chunk row width",
                });
            }
        }
        let start = positions[0].frame;
        if let Some(expected) = self.next_frame {
            if start != expected {
                return Err(Error::FrameGap {
                    expected,
                    got: start,
                });
            }
        }
        for (i, pos) in positions.iter().enumerate() {
            let frame = start + (i / self.tokens_per_frame) as u32;
            if pos.frame != frame {
                return Err(Error::FrameGap {
                    expected: frame,
                    got: pos.frame,
                });
            }
        }

        for ((key, value), pos) in keys.iter().zip(values).zip(positions) {
            self.tokens.push(TokenRecord {
                key: key.clone(),
                value: value.clone(),
                original: *pos,
                effective_frame: pos.frame,
            });
        }
        self.next_frame = Some(start + (positions.len() / self.tokens_per_frame) as u32);
        self.rebuild_frame_index();
        Ok(())
    }

    /// Splits the cache into sink, candidate, and recent token ranges. The
    /// sink and recent regions always hold whole frames, so the split is
    /// computed in token counts.
    pub fn partition(&self, cfg: &CachePolicyConfig) -> Result<Partition> {
        let len = self.tokens.len();
        let required = cfg.sink_tokens() + cfg.recent_tokens();
        if len < required {
            return Err(Error::CacheTooShort {
                tokens: len,
                required,
            });
        }
        let sink_end = cfg.sink_tokens();
        let recent_start = len - cfg.recent_tokens();
        Ok(Partition {
            sink: 0..sink_end,
            candidates: sink_end..recent_start,
            recent: recent_start..len,
        })
    }

    /// Drops the oldest `frames` whole frames of tokens.
    pub fn evict_fifo(&mut self, frames: usize) -> Result<()> {
        let drop = frames * self.tokens_per_frame;
        if drop > self.tokens.len() {
            return Err(Error::OverEviction {
                requested: frames,
                held: self.frame_equivalents(),
            });
        }
        self.tokens.drain(..drop);
        self.rebuild_frame_index();
        Ok(())
    }

    /// Drops an arbitrary whole-frame token range (used by tail-rolling
    /// policies that preserve a leading sink).
    pub(crate) fn evict_token_range(&mut self, range: std::ops::Range<usize>) -> Result<()> {
        if range.end > self.tokens.len() || range.start > range.end {
            return Err(Error::IndexOutOfRange {
                index: range.end,
                len: self.tokens.len(),
            });
        }
        self.tokens.drain(range);
        self.rebuild_frame_index();
        Ok(())
    }

    /// Keeps exactly the tokens whose indices appear in `keep` (ascending,
    /// deduplicated), dropping the rest. Order is preserved.
    pub(crate) fn retain_indices(&mut self, keep: &[usize]) -> Result<()> {
        for pair in keep.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::Config(
                    "retain_indices expects strictly ascending indices".into(),
                ));
            }
        }
        if let Some(&last) = keep.last() {
            if last >= self.tokens.len() {
                return Err(Error::IndexOutOfRange {
                    index: last,
                    len: self.tokens.len(),
                });
            }
        }
        let mut keep_iter = keep.iter().peekable();
        let mut idx = 0;
        self.tokens.retain(|_| {
            let keep_this = keep_iter.peek() == Some(&&idx);
            if keep_this {
                keep_iter.next();
            }
            idx += 1;
            keep_this
        });
        self.rebuild_frame_index();
        Ok(())
    }

    /// Rotates the temporal phase of every token in `range` by `delta`
    /// frames and moves their effective frames with it.
    pub(crate) fn shift_range(
        &mut self,
        range: std::ops::Range<usize>,
        delta: i64,
        freqs: &RopeFrequencies,
    ) -> Result<()> {
        if range.end > self.tokens.len() {
            return Err(Error::IndexOutOfRange {
                index: range.end,
                len: self.tokens.len(),
            });
        }
        if delta == 0 {
            return Ok(());
        }
        for tok in &mut self.tokens[range] {
            crate::rope::rotate_temporal(&mut tok.key, delta, freqs)?;
            let frame = tok.effective_frame as i64 + delta;
            debug_assert!(frame >= 0, "effective frame went negative");
            tok.effective_frame = frame.max(0) as u32;
        }
        self.rebuild_frame_index();
        Ok(())
    }

    /// Per-token variant of [`shift_range`]; skips the frame-index rebuild so
    /// callers batching many shifts rebuild once via [`finish_shifts`].
    pub(crate) fn shift_token(
        &mut self,
        index: usize,
        delta: i64,
        freqs: &RopeFrequencies,
    ) -> Result<()> {
        let len = self.tokens.len();
        let tok = self
            .tokens
            .get_mut(index)
            .ok_or(Error::IndexOutOfRange { index, len })?;
        if delta == 0 {
            return Ok(());
        }
        crate::rope::rotate_temporal(&mut tok.key, delta, freqs)?;
        let frame = tok.effective_frame as i64 + delta;
        debug_assert!(frame >= 0, "effective frame went negative");
        tok.effective_frame = frame.max(0) as u32;
        Ok(())
    }

    pub(crate) fn finish_shifts(&mut self) {
        self.rebuild_frame_index();
    }

    /// Appends rows without timeline-contiguity checks so tests can fake an
    /// already-rolled cache (gaps in original frames) directly.
    #[cfg(test)]
    pub(crate) fn append_chunk_unchecked_for_tests(
        &mut self,
        keys: &[Vec<f32>],
        values: &[Vec<f32>],
        positions: &[TokenPosition],
    ) {
        for ((key, value), pos) in keys.iter().zip(values).zip(positions) {
            self.tokens.push(TokenRecord {
                key: key.clone(),
                value: value.clone(),
                original: *pos,
                effective_frame: pos.frame,
            });
        }
        if let Some(last) = positions.last() {
            self.next_frame = Some(last.frame + 1);
        }
        self.rebuild_frame_index();
    }

    #[cfg(test)]
    pub(crate) fn overwrite_key_for_tests(&mut self, index: usize, key: Vec<f32>) {
        self.tokens[index].key = key;
    }

    /// True when consecutive tokens never step back in effective frame and
    /// never jump forward by more than one frame.
    pub fn timeline_contiguous(&self) -> bool {
        self.tokens.windows(2).all(|pair| {
            let (a, b) = (pair[0].effective_frame, pair[1].effective_frame);
            b >= a && b - a <= 1
        })
    }
}

/// Post-embedding queries of one frame, kept for importance scoring.
#[derive(Debug, Clone)]
pub struct FrameQueries {
    pub frame: u32,
    pub rows: Vec<Vec<f32>>,
}

/// All caches of a model under one policy config: one per layer in shared
/// head mode, one per (layer, head) in per-head mode. Also retains the last
/// `recent_frames` frames of clean queries per cache, which later serve as
/// the past-query block at compression time.
#[derive(Debug, Clone)]
pub struct CacheBank {
    cfg: CachePolicyConfig,
    freqs: RopeFrequencies,
    num_layers: usize,
    model_heads: usize,
    caches: Vec<LayerCache>,
    recent_queries: Vec<VecDeque<FrameQueries>>,
}

impl CacheBank {
    pub fn new(
        cfg: CachePolicyConfig,
        freqs: RopeFrequencies,
        num_layers: usize,
        num_heads: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if num_layers == 0 || num_heads == 0 {
            return Err(Error::Config(
                "cache bank needs at least one layer and one head".into(),
            ));
        }
        let per_cache_heads = match cfg.head_mode {
            HeadMode::PerHead => 1,
            HeadMode::Shared => num_heads,
        };
        let cache_count = match cfg.head_mode {
            HeadMode::PerHead => num_layers * num_heads,
            HeadMode::Shared => num_layers,
        };
        let head_dim = freqs.head_dim();
        let caches = (0..cache_count)
            .map(|_| LayerCache::new(cfg.tokens_per_frame, per_cache_heads, head_dim))
            .collect();
        Ok(Self {
            cfg,
            freqs,
            num_layers,
            model_heads: num_heads,
            caches,
            recent_queries: (0..cache_count).map(|_| VecDeque::new()).collect(),
        })
    }

    pub fn config(&self) -> &CachePolicyConfig {
        &self.cfg
    }

    pub fn frequencies(&self) -> &RopeFrequencies {
        &self.freqs
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn cache_count(&self) -> usize {
        self.caches.len()
    }

    pub fn caches(&self) -> &[LayerCache] {
        &self.caches
    }

    pub fn cache(&self, index: usize) -> Option<&LayerCache> {
        self.caches.get(index)
    }

    pub fn cache_mut(&mut self, index: usize) -> Option<&mut LayerCache> {
        self.caches.get_mut(index)
    }

    /// Caches belonging to `layer`, as a contiguous index range.
    pub fn layer_cache_indices(&self, layer: usize) -> std::ops::Range<usize> {
        match self.cfg.head_mode {
            HeadMode::PerHead => layer * self.model_heads..(layer + 1) * self.model_heads,
            HeadMode::Shared => layer..layer + 1,
        }
    }

    /// Which (layer, head) a cache index covers; head is None in shared mode.
    pub fn cache_identity(&self, index: usize) -> (usize, Option<usize>) {
        match self.cfg.head_mode {
            HeadMode::PerHead => (index / self.model_heads, Some(index % self.model_heads)),
            HeadMode::Shared => (index, None),
        }
    }

    pub fn recent_queries(&self, cache_index: usize) -> &VecDeque<FrameQueries> {
        &self.recent_queries[cache_index]
    }

    /// How many tokens every cache currently holds (identical across caches).
    pub fn token_count(&self) -> usize {
        let count = self.caches[0].token_count();
        debug_assert!(self.caches.iter().all(|c| c.token_count() == count));
        count
    }

    /// True once the window has filled to the compression trigger.
    pub fn trigger_due(&self) -> bool {
        self.token_count() >= self.cfg.trigger_tokens()
    }

    fn slice_rows(rows: &[Vec<f32>], head: usize, head_dim: usize) -> Vec<Vec<f32>> {
        rows.iter()
            .map(|row| row[head * head_dim..(head + 1) * head_dim].to_vec())
            .collect()
    }

    /// Appends one chunk to every cache of `layer`. Keys and queries arrive
    /// raw (full-width rows of `num_heads * head_dim`) and are position-
    /// embedded here; values pass through untouched.
    pub fn append_layer_chunk(
        &mut self,
        layer: usize,
        raw_keys: &[Vec<f32>],
        raw_values: &[Vec<f32>],
        raw_queries: &[Vec<f32>],
        positions: &[TokenPosition],
    ) -> Result<()> {
        if layer >= self.num_layers {
            return Err(Error::IndexOutOfRange {
                index: layer,
                len: self.num_layers,
            });
        }
        let width = self.model_heads * self.freqs.head_dim();
        for row in raw_keys.iter().chain(raw_queries) {
            if row.len() != width {
                return Err(Error::Dimension {
                    expected: width,
                    got: row.len(),
                    context: "append_layer_chunk row width",
                });
            }
        }
        if raw_queries.len() != positions.len() {
            return Err(Error::Dimension {
                expected: positions.len(),
                got: raw_queries.len(),
                context: "append_layer_chunk query count",
            });
        }

        let mut keys = raw_keys.to_vec();
        let mut queries = raw_queries.to_vec();
        for (row, pos) in keys.iter_mut().zip(positions) {
            apply_rope(row, *pos, &self.freqs)?;
        }
        for (row, pos) in queries.iter_mut().zip(positions) {
            apply_rope(row, *pos, &self.freqs)?;
        }

        let head_dim = self.freqs.head_dim();
        let frame_count = positions.len() / self.cfg.tokens_per_frame.max(1);
        for cache_index in self.layer_cache_indices(layer) {
            let (keys_c, values_c, queries_c) = match self.cfg.head_mode {
                HeadMode::PerHead => {
                    let (_, head) = self.cache_identity(cache_index);
                    let head = head.unwrap();
                    (
                        Self::slice_rows(&keys, head, head_dim),
                        Self::slice_rows(raw_values, head, head_dim),
                        Self::slice_rows(&queries, head, head_dim),
                    )
                }
                HeadMode::Shared => (keys.clone(), raw_values.to_vec(), queries.clone()),
            };
            self.caches[cache_index].append_chunk(&keys_c, &values_c, positions)?;

            let per_frame = self.cfg.tokens_per_frame;
            let recent = &mut self.recent_queries[cache_index];
            for f in 0..frame_count {
                recent.push_back(FrameQueries {
                    frame: positions[f * per_frame].frame,
                    rows: queries_c[f * per_frame..(f + 1) * per_frame].to_vec(),
                });
                while recent.len() > self.cfg.recent_frames {
                    recent.pop_front();
                }
            }
        }
        Ok(())
    }
}
