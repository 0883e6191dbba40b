//! End-to-end acceptance gate: each test exercises one promised behavior of
//! the engine at the stated scale and tolerance, and prints one PASS line.
//! Tests share a lock so the timed criteria are not skewed by parallel
//! neighbors.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use framepress::attention::{default_scale, retained_mass};
use framepress::cache::{CachePolicyConfig, LayerCache, PolicyKind, QueryMode, ScoreMode};
use framepress::policy::{
    importance_scores, participative_compress, policy_step, top_c_select, ImportanceVector,
};
use framepress::rope::{apply_rope, build_frequencies, rotate_temporal, DimSplit, TokenPosition};
use framepress::simulator::{
    rollout, selection_heatmap, RolloutOptions, StreamKind, StreamModel,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn full_scale_model() -> StreamModel {
    StreamModel {
        tokens_per_frame: 1560,
        chunk_frames: 3,
        head_dim: 64,
        num_heads: 1,
        num_layers: 1,
        ..StreamModel::default()
    }
}

fn full_scale_cfg() -> CachePolicyConfig {
    CachePolicyConfig {
        sink_frames: 10,
        budget_frames: 16,
        recent_frames: 4,
        max_window_frames: 21,
        tokens_per_frame: 1560,
        chunk_frames: 3,
        ..CachePolicyConfig::default()
    }
}

/// Criterion 1: one full-scale compression maps 32,760 tokens to 24,960 and
/// the aggregated selection heatmap puts the region boundaries at 15,600 and
/// 28,080, in under a second.
#[test]
fn full_scale_budget_arithmetic() {
    let _guard = serial();
    let start = Instant::now();

    let model = full_scale_model();
    let cfg = full_scale_cfg();
    let out = rollout(&model, &cfg, 12, RolloutOptions::default()).unwrap();

    let events: Vec<_> = out
        .trace
        .steps
        .iter()
        .flat_map(|s| s.events.iter())
        .collect();
    assert!(events.len() >= 2, "need a steady-state compression");
    assert_eq!(events[0].report.pre_size, 32_760);
    assert_eq!(events[0].report.post_size, 24_960);
    for event in &events {
        assert_eq!(event.report.post_size, 24_960);
    }

    let map = selection_heatmap(&out.trace, &cfg).unwrap();
    assert_eq!(map.sink_end, 15_600);
    assert_eq!(map.candidate_end, 28_080);

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!(
        "PASS full_scale_budget_arithmetic: 32760->24960, boundaries 15600/28080 ({elapsed:?})"
    );
}

/// Criterion 2: 1,000 random importance vectors (length <= 512, C <= 64),
/// selection matches an exhaustive stable-sort oracle exactly, ties
/// included, in under two seconds.
#[test]
fn top_c_matches_exhaustive_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(42);

    for trial in 0..1000 {
        let n = rng.gen_range(1..=512);
        let c = rng.gen_range(0..=64usize);
        // Half the trials quantize scores hard so ties are everywhere.
        let scores: Vec<f64> = if trial % 2 == 0 {
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
        } else {
            (0..n).map(|_| rng.gen_range(0..6) as f64 / 3.0).collect()
        };
        let iv = ImportanceVector::new(scores.clone(), (0..n).collect()).unwrap();
        let got = top_c_select(&iv, c);

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        let mut want = order[..c.min(n)].to_vec();
        want.sort_unstable();
        assert_eq!(got, want, "trial {trial}: n={n} c={c}");
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(2), "took {elapsed:?}");
    println!("PASS top_c_matches_exhaustive_oracle: 1000 trials exact ({elapsed:?})");
}

fn close(a: &[f32], b: &[f32], rel: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| {
        let diff = (*x as f64 - *y as f64).abs();
        diff <= rel * 1.0f64.max((*x as f64).abs()).max((*y as f64).abs())
    })
}

/// Criterion 3: over 1,000 random keys at head_dim 64 (default split),
/// shifting an embedded key's temporal phase equals embedding at the shifted
/// position, and shifts compose additively, within 1e-5 relative error.
#[test]
fn temporal_shift_equals_fresh_embedding() {
    let _guard = serial();
    let start = Instant::now();
    let freqs = build_frequencies(64, DimSplit::default_for(64).unwrap(), 10_000.0).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(5);

    for trial in 0..1000 {
        let raw: Vec<f32> = (0..64).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        let tau = rng.gen_range(0..1200u32);
        let delta = rng.gen_range(-(tau as i64)..1200);
        let h = rng.gen_range(0..32);
        let w = rng.gen_range(0..32);

        let mut shifted = raw.clone();
        apply_rope(&mut shifted, TokenPosition::new(tau, h, w), &freqs).unwrap();
        rotate_temporal(&mut shifted, delta, &freqs).unwrap();

        let mut fresh = raw.clone();
        let target = (tau as i64 + delta) as u32;
        apply_rope(&mut fresh, TokenPosition::new(target, h, w), &freqs).unwrap();
        assert!(
            close(&shifted, &fresh, 1e-5),
            "trial {trial}: shift {tau}+{delta} diverged from fresh embedding"
        );

        // Composition: two partial shifts equal one combined shift.
        let (d1, d2) = (delta / 2, delta - delta / 2);
        let mut composed = raw.clone();
        apply_rope(&mut composed, TokenPosition::new(tau, h, w), &freqs).unwrap();
        rotate_temporal(&mut composed, d1, &freqs).unwrap();
        rotate_temporal(&mut composed, d2, &freqs).unwrap();
        assert!(
            close(&composed, &fresh, 1e-5),
            "trial {trial}: composition {d1}+{d2} diverged"
        );
    }

    let elapsed = start.elapsed();
    println!("PASS temporal_shift_equals_fresh_embedding: 1000 keys within 1e-5 ({elapsed:?})");
}

/// Criterion 4: across 200 randomized compressions, surviving values stay
/// bit-identical to insertion, the effective timeline stays non-decreasing
/// and gap-free, and the post-compression size formula holds exactly.
#[test]
fn cache_integrity_over_randomized_compressions() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let head_dim = 8;
    let freqs = build_frequencies(head_dim, DimSplit::new(4, 2, 2), 10_000.0).unwrap();

    let mut compressions = 0usize;
    let mut config_round = 0u64;
    while compressions < 200 {
        config_round += 1;
        let f = [1usize, 2, 4, 8][rng.gen_range(0..4)];
        let s = rng.gen_range(0..=3);
        let r = rng.gen_range(0..=2);
        let top = rng.gen_range(0..=3).max(if s + r == 0 { 1 } else { 0 });
        let n = s + r + top;
        let m = n + rng.gen_range(1..=4);
        let cfg = CachePolicyConfig {
            sink_frames: s,
            budget_frames: n,
            recent_frames: r,
            max_window_frames: m,
            tokens_per_frame: f,
            chunk_frames: rng.gen_range(1..=3),
            policy: if rng.gen_bool(0.5) {
                PolicyKind::DeepForcing
            } else {
                PolicyKind::RandomTopc
            },
            sink_adjacent: rng.gen_bool(0.5),
            ..CachePolicyConfig::default()
        };
        cfg.validate().unwrap();

        let mut cache = LayerCache::new(f, 1, head_dim);
        let mut inserted: HashMap<TokenPosition, Vec<u32>> = HashMap::new();
        let mut next = 0u32;
        for _ in 0..5 {
            // Fill the window, then step the policy.
            while cache.token_count() < cfg.trigger_tokens() {
                let frames = cfg.chunk_frames;
                let positions: Vec<TokenPosition> = (0..frames * f)
                    .map(|i| TokenPosition::new(next + (i / f) as u32, 0, (i % f) as u32))
                    .collect();
                let mut keys = Vec::new();
                let mut values = Vec::new();
                for pos in &positions {
                    let mut key: Vec<f32> =
                        (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                    apply_rope(&mut key, *pos, &freqs).unwrap();
                    let value: Vec<f32> =
                        (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                    inserted.insert(*pos, value.iter().map(|x| x.to_bits()).collect());
                    keys.push(key);
                    values.push(value);
                }
                cache.append_chunk(&keys, &values, &positions).unwrap();
                next += frames as u32;
            }

            let queries: Vec<Vec<f32>> = (0..2)
                .map(|_| (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
                .collect();
            let pre = cache.token_count();
            let report = policy_step(&mut cache, &queries, &queries, &cfg, &freqs, &mut rng, 0)
                .unwrap()
                .expect("window was full");
            compressions += 1;

            let candidates = pre - cfg.sink_tokens() - cfg.recent_tokens();
            let expected = cfg.sink_tokens()
                + cfg.top_c_tokens().min(candidates)
                + cfg.recent_tokens();
            assert_eq!(report.post_size, expected, "size formula, round {config_round}");
            assert_eq!(cache.token_count(), expected);
            assert!(
                cache.timeline_contiguous(),
                "timeline gap, round {config_round}"
            );
            for tok in cache.tokens() {
                let bits: Vec<u32> = tok.value.iter().map(|x| x.to_bits()).collect();
                assert_eq!(
                    &bits,
                    inserted.get(&tok.original).expect("unknown survivor"),
                    "value mutated, round {config_round}"
                );
            }
        }
    }

    let elapsed = start.elapsed();
    println!(
        "PASS cache_integrity_over_randomized_compressions: {compressions} compressions, \
         {config_round} configs ({elapsed:?})"
    );
}

/// Criterion 5: on clustered streams (gain 10, 20 seeds, >= 50 compressions
/// each) the primary policy's mean retained mass strictly exceeds random
/// Top-C and FIFO, planted anchors survive >= 99% of compressions, and on
/// enumerable instances the policy reaches >= 95% of the exhaustive-best
/// same-budget mass. Total under 60 seconds.
#[test]
fn retained_mass_dominance() {
    let _guard = serial();
    let start = Instant::now();

    let base_cfg = CachePolicyConfig {
        sink_frames: 2,
        budget_frames: 6,
        recent_frames: 1,
        max_window_frames: 8,
        tokens_per_frame: 8,
        chunk_frames: 1,
        ..CachePolicyConfig::default()
    };
    let base_model = StreamModel {
        kind: StreamKind::Clustered,
        tokens_per_frame: 8,
        chunk_frames: 1,
        head_dim: 16,
        num_heads: 1,
        num_layers: 1,
        anchor_count: 4,
        anchor_gain: 10.0,
        anchor_chunk: 2,
        anchor_period: 0,
        ..StreamModel::default()
    };
    let chunks = 110;

    let mut means = HashMap::new();
    let mut anchor_events = 0usize;
    let mut anchor_full_recoveries = 0usize;
    for policy in [PolicyKind::DeepForcing, PolicyKind::RandomTopc, PolicyKind::Fifo] {
        let cfg = CachePolicyConfig {
            policy,
            ..base_cfg.clone()
        };
        let mut masses = Vec::new();
        for seed in 0..20u64 {
            let model = StreamModel {
                seed: 1000 + seed,
                ..base_model.clone()
            };
            let out = rollout(&model, &cfg, chunks, RolloutOptions { oracle: true }).unwrap();
            assert!(
                out.trace.compressions >= 50,
                "{policy:?} seed {seed}: only {} compressions",
                out.trace.compressions
            );
            for event in out.trace.steps.iter().flat_map(|s| s.events.iter()) {
                masses.push(event.retained_mass.unwrap());
                if policy == PolicyKind::DeepForcing && event.anchor_candidates > 0 {
                    anchor_events += 1;
                    if event.anchor_slots.len() == event.anchor_candidates {
                        anchor_full_recoveries += 1;
                    }
                }
            }
        }
        means.insert(policy, masses.iter().sum::<f64>() / masses.len() as f64);
    }
    let deep = means[&PolicyKind::DeepForcing];
    let random = means[&PolicyKind::RandomTopc];
    let fifo = means[&PolicyKind::Fifo];
    assert!(deep > random, "deep {deep} vs random {random}");
    assert!(deep > fifo, "deep {deep} vs fifo {fifo}");
    let recovery = anchor_full_recoveries as f64 / anchor_events as f64;
    assert!(recovery >= 0.99, "anchor recovery {recovery} over {anchor_events} events");

    // Enumerable instances: 12 tokens, keep the best 2 of 8 candidates.
    let cfg = CachePolicyConfig {
        sink_frames: 1,
        budget_frames: 3,
        recent_frames: 1,
        max_window_frames: 6,
        tokens_per_frame: 2,
        ..CachePolicyConfig::default()
    };
    let head_dim = 16;
    let freqs = build_frequencies(head_dim, DimSplit::default_for(head_dim).unwrap(), 10_000.0)
        .unwrap();
    let scale = default_scale(head_dim);
    let mut rng = ChaCha12Rng::seed_from_u64(31);
    for instance in 0..50 {
        let mut cache = LayerCache::new(2, 1, head_dim);
        for frame in 0..6u32 {
            let positions: Vec<TokenPosition> =
                (0..2).map(|i| TokenPosition::new(frame, 0, i)).collect();
            let mut keys = Vec::new();
            let mut values = Vec::new();
            for pos in &positions {
                let mut key: Vec<f32> =
                    (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                apply_rope(&mut key, *pos, &freqs).unwrap();
                keys.push(key);
                values.push(vec![0.0; head_dim]);
            }
            cache.append_chunk(&keys, &values, &positions).unwrap();
        }
        let queries: Vec<Vec<f32>> = (0..4)
            .map(|_| (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let (recent_q, denoise_q) = queries.split_at(2);

        let part = cache.partition(&cfg).unwrap();
        let keys: Vec<&[f32]> = cache.tokens().iter().map(|t| t.key.as_slice()).collect();
        let iv = importance_scores(
            recent_q,
            denoise_q,
            &keys,
            part.candidates.clone(),
            QueryMode::Both,
            ScoreMode::RawLogit,
        )
        .unwrap();
        let picked = top_c_select(&iv, cfg.top_c_tokens());
        let full_keys: Vec<Vec<f32>> =
            cache.tokens().iter().map(|t| t.key.clone()).collect();
        let retained_set = |subset: &[usize]| -> Vec<usize> {
            let mut set: Vec<usize> = part
                .sink
                .clone()
                .chain(subset.iter().map(|&o| part.candidates.start + o))
                .chain(part.recent.clone())
                .collect();
            set.sort_unstable();
            set
        };
        let policy_mass =
            retained_mass(&queries, &full_keys, &retained_set(&picked), scale).unwrap();

        let mut best = 0.0f64;
        let cand = part.candidates.len();
        for i in 0..cand {
            for j in i + 1..cand {
                let mass =
                    retained_mass(&queries, &full_keys, &retained_set(&[i, j]), scale).unwrap();
                best = best.max(mass);
            }
        }
        assert!(
            policy_mass >= 0.95 * best - 1e-12,
            "instance {instance}: policy {policy_mass} vs best {best}"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "PASS retained_mass_dominance: deep {deep:.4} > random {random:.4}, fifo {fifo:.4}; \
         anchor recovery {recovery:.4}; exhaustive-best ratio held ({elapsed:?})"
    );
}

/// Criterion 6: over a 320-chunk rollout, compression fires only once the
/// window holds at least `max_window_frames` and only at the schedule's
/// first timestep, exactly following the symbolic cadence.
#[test]
fn trigger_discipline_trace_audit() {
    let _guard = serial();
    let start = Instant::now();
    let model = StreamModel::default(); // desk scale: F=64, 2 layers, 4 heads
    let cfg = CachePolicyConfig::default();
    let out = rollout(&model, &cfg, 320, RolloutOptions::default()).unwrap();

    // Symbolic replay of the loop: compress-then-append each chunk.
    let mut frames = 0usize;
    let mut expected_chunks = Vec::new();
    for chunk in 0..320 {
        if frames >= cfg.max_window_frames {
            expected_chunks.push(chunk);
            frames = cfg.budget_frames;
        }
        frames += cfg.chunk_frames;
    }

    let mut got_chunks = Vec::new();
    for step in &out.trace.steps {
        if step.events.is_empty() {
            continue;
        }
        assert_eq!(step.step_index, 0, "event outside the first timestep");
        assert_eq!(step.timestep, model.schedule[0]);
        got_chunks.push(step.chunk);
        for event in &step.events {
            assert!(
                event.report.pre_size >= cfg.trigger_tokens(),
                "event below trigger: {} tokens",
                event.report.pre_size
            );
        }
        assert_eq!(
            step.cache_tokens,
            cfg.budget_frames * cfg.tokens_per_frame,
            "cache not on budget after compression"
        );
    }
    assert_eq!(got_chunks, expected_chunks);
    assert_eq!(out.trace.compressions, expected_chunks.len());
    assert!(out.trace.compressions >= 150);

    let elapsed = start.elapsed();
    println!(
        "PASS trigger_discipline_trace_audit: {} events, all at first timestep with full window \
         ({elapsed:?})",
        out.trace.compressions
    );
}

/// Criterion 7: a 320-chunk desk-scale rollout finishes in under 10 seconds,
/// and compression cost grows near-linearly with candidate count.
#[test]
fn throughput_and_near_linear_compression() {
    let _guard = serial();
    let model = StreamModel::default();
    let cfg = CachePolicyConfig::default();

    let start = Instant::now();
    let out = rollout(&model, &cfg, 320, RolloutOptions::default()).unwrap();
    let rollout_time = start.elapsed();
    assert!(out.trace.compressions > 100);
    assert!(
        rollout_time < Duration::from_secs(10),
        "rollout took {rollout_time:?}"
    );

    // Compression cost at 7 vs 35 candidate frames (5x), same query volume.
    let time_compress = |window_frames: usize| -> Duration {
        let cfg = CachePolicyConfig {
            max_window_frames: window_frames,
            ..CachePolicyConfig::default()
        };
        let f = cfg.tokens_per_frame;
        let head_dim = 64;
        let freqs =
            build_frequencies(head_dim, DimSplit::default_for(head_dim).unwrap(), 10_000.0)
                .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut cache = LayerCache::new(f, 1, head_dim);
        for frame in 0..window_frames as u32 {
            let positions: Vec<TokenPosition> = (0..f)
                .map(|i| TokenPosition::new(frame, (i / 8) as u32, (i % 8) as u32))
                .collect();
            let mut keys = Vec::new();
            let mut values = Vec::new();
            for pos in &positions {
                let mut key: Vec<f32> =
                    (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                apply_rope(&mut key, *pos, &freqs).unwrap();
                keys.push(key);
                values.push(vec![0.5; head_dim]);
            }
            cache.append_chunk(&keys, &values, &positions).unwrap();
        }
        let queries: Vec<Vec<f32>> = (0..7 * f)
            .map(|_| (0..head_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let (recent_q, denoise_q) = queries.split_at(4 * f);

        let reps = 20;
        let mut clones: Vec<LayerCache> = (0..reps).map(|_| cache.clone()).collect();
        let mut best = Duration::MAX;
        for clone in clones.iter_mut() {
            let t = Instant::now();
            participative_compress(clone, recent_q, denoise_q, &cfg, &freqs).unwrap();
            best = best.min(t.elapsed());
        }
        best
    };
    let small = time_compress(21); // 7 candidate frames
    let large = time_compress(49); // 35 candidate frames
    let ratio = large.as_secs_f64() / small.as_secs_f64().max(1e-9);
    assert!(
        ratio < 8.0,
        "5x candidates cost {ratio:.1}x time ({small:?} -> {large:?})"
    );

    println!(
        "PASS throughput_and_near_linear_compression: rollout {rollout_time:?}; 5x candidates \
         -> {ratio:.2}x cost ({small:?} vs {large:?})"
    );
}

/// Criterion 8: random selection is uniform over candidate slots (chi-square
/// at alpha 0.01), FIFO never selects, and on clustered streams the primary
/// policy concentrates selections so the top decile of slots captures at
/// least 80% of anchor occupancy.
#[test]
fn selection_heatmap_behavior() {
    let _guard = serial();
    let start = Instant::now();
    // Window shape chosen so every compression sees exactly M*F tokens and
    // the candidate region is the same 72 slots every time.
    let cfg = CachePolicyConfig {
        sink_frames: 2,
        budget_frames: 8,
        recent_frames: 1,
        max_window_frames: 12,
        tokens_per_frame: 8,
        chunk_frames: 1,
        policy: PolicyKind::RandomTopc,
        ..CachePolicyConfig::default()
    };
    let model = StreamModel {
        tokens_per_frame: 8,
        chunk_frames: 1,
        head_dim: 16,
        num_heads: 1,
        num_layers: 1,
        ..StreamModel::default()
    };

    let out = rollout(&model, &cfg, 825, RolloutOptions::default()).unwrap();
    let map = selection_heatmap(&out.trace, &cfg).unwrap();
    assert!(map.events >= 200, "only {} events", map.events);
    assert_eq!((map.sink_end, map.candidate_end), (16, 88));
    let candidate_counts = &map.slot_counts[map.sink_end..map.candidate_end];
    let total: u64 = candidate_counts.iter().sum();
    let expected = total as f64 / candidate_counts.len() as f64;
    let stat: f64 = candidate_counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    let cutoff = ChiSquared::new((candidate_counts.len() - 1) as f64)
        .unwrap()
        .inverse_cdf(0.99);
    assert!(
        stat < cutoff,
        "uniformity rejected: chi2 {stat:.1} >= {cutoff:.1}"
    );

    let fifo_cfg = CachePolicyConfig {
        policy: PolicyKind::Fifo,
        ..cfg.clone()
    };
    let fifo_out = rollout(&model, &fifo_cfg, 60, RolloutOptions::default()).unwrap();
    let fifo_map = selection_heatmap(&fifo_out.trace, &fifo_cfg).unwrap();
    assert!(fifo_map.events > 0);
    assert!(fifo_map.slot_counts.iter().all(|&c| c == 0));

    // Clustered stream: one full frame of anchors planted in the first
    // post-sink chunk stays pinned at the head of the candidate region.
    let deep_cfg = CachePolicyConfig {
        policy: PolicyKind::DeepForcing,
        ..cfg.clone()
    };
    let deep_model = StreamModel {
        kind: StreamKind::Clustered,
        anchor_count: 8,
        anchor_gain: 10.0,
        anchor_chunk: 2,
        anchor_period: 0,
        ..model.clone()
    };
    let deep_out = rollout(&deep_model, &deep_cfg, 212, RolloutOptions::default()).unwrap();
    let deep_map = selection_heatmap(&deep_out.trace, &deep_cfg).unwrap();
    assert!(deep_map.events >= 50);
    let region = deep_map.sink_end..deep_map.candidate_end;
    let decile = (region.len() + 9) / 10;
    let mut slots: Vec<usize> = region.clone().collect();
    slots.sort_by(|&a, &b| {
        deep_map.slot_counts[b]
            .cmp(&deep_map.slot_counts[a])
            .then_with(|| a.cmp(&b))
    });
    let top: std::collections::HashSet<usize> = slots[..decile].iter().copied().collect();
    let anchor_total: u64 = deep_map.anchor_counts.iter().sum();
    let anchor_in_top: u64 = deep_map
        .anchor_counts
        .iter()
        .enumerate()
        .filter(|(slot, _)| top.contains(slot))
        .map(|(_, &c)| c)
        .sum();
    assert!(anchor_total > 0);
    let share = anchor_in_top as f64 / anchor_total as f64;
    assert!(share >= 0.8, "top decile holds only {share:.3} of anchor mass");

    let elapsed = start.elapsed();
    println!(
        "PASS selection_heatmap_behavior: chi2 {stat:.1} < {cutoff:.1} over {} events; fifo \
         all-zero; anchor share {share:.3} ({elapsed:?})",
        map.events
    );
}
