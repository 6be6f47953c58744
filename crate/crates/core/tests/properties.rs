use cci_core::dsp::{mix_at_snr, power, resample, standardize, tile, bandpass, zero_center};
use cci_core::eval::{match_events, Counts};
use cci_core::intervene::{apply_do, InterventionKind, InterventionSpec};
use cci_core::latentviz::{kde_scott, project_unit_2d};
use cci_core::nn::FrameProbs;
use cci_core::objective::{cosine_similarity, total_loss};
use cci_core::postprocess::{candidate_runs, hs_onsets, qrs_decisions, reconstruct_states, Event, EventList};
use cci_core::records::{labelize, load_record, save_record, slice_episodes, Annotation, SignalRecord, Task};
use proptest::prelude::*;

fn qrs_record() -> impl Strategy<Value = SignalRecord> {
    (50usize..3000, prop::collection::vec(-5.0f32..5.0, 1..8), prop::collection::btree_set(0usize..3000, 0..20))
        .prop_map(|(n, pattern, beats)| SignalRecord {
            id: "r".into(),
            task: Task::Qrs,
            fs_hz: 250.0,
            samples: (0..n).map(|i| pattern[i % pattern.len()] + i as f32 * 1e-3).collect(),
            annotations: beats.into_iter().filter(|&b| b < n).map(|b| Annotation::new(b, "beat")).collect(),
        })
}

fn sine_mix(n: usize, fs: f64, freqs: &[(f64, f64)]) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            freqs.iter().map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * t).sin()).sum()
        })
        .collect()
}

/// Maximum one-to-one matching by exhaustive search over assignments.
fn brute_force_tp(r: &[f64], p: &[f64], grace: f64) -> u64 {
    fn go(i: usize, used: u32, r: &[f64], p: &[f64], grace: f64, memo: &mut std::collections::HashMap<(usize, u32), u64>) -> u64 {
        if i == r.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, r, p, grace, memo);
        for (j, &pj) in p.iter().enumerate() {
            if used & (1 << j) == 0 && (r[i] - pj).abs() <= grace {
                best = best.max(1 + go(i + 1, used | (1 << j), r, p, grace, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    go(0, 0, r, p, grace, &mut Default::default())
}

fn events(times: &[(f64, bool)]) -> EventList {
    let mut sorted: Vec<(f64, bool)> = times.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.dedup_by(|a, b| a.0 == b.0);
    EventList::new(
        sorted
            .into_iter()
            .map(|(t, l)| Event { time_ms: t, label: if l { "S1" } else { "S2" }.into() })
            .collect(),
    )
    .unwrap()
}

fn brute_force(r: &EventList, p: &EventList, grace: f64) -> Counts {
    let mut tp = 0;
    for label in ["S1", "S2"] {
        let rt: Vec<f64> = r.events.iter().filter(|e| e.label == label).map(|e| e.time_ms).collect();
        let pt: Vec<f64> = p.events.iter().filter(|e| e.label == label).map(|e| e.time_ms).collect();
        tp += brute_force_tp(&rt, &pt, grace);
    }
    Counts { tp, fp: p.len() as u64 - tp, fn_: r.len() as u64 - tp }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn record_round_trip(rec in qrs_record()) {
        let dir = tempfile::tempdir().unwrap();
        save_record(&rec, dir.path()).unwrap();
        prop_assert_eq!(load_record(dir.path().join("r")).unwrap(), rec);
    }

    #[test]
    fn slices_are_ordered_prefix(rec in qrs_record(), frames in 10usize..200) {
        let len = frames * 4;
        let eps = slice_episodes(&rec, len as f64 / rec.fs_hz).unwrap();
        for (k, ep) in eps.iter().enumerate() {
            prop_assert_eq!(ep.offset_samples, k * len);
            for (a, b) in ep.signal.iter().zip(&rec.samples[ep.offset_samples..]) {
                prop_assert_eq!(*a, *b as f64);
            }
        }
        prop_assert!(eps.len() * len <= rec.samples.len());
    }

    #[test]
    fn adding_a_beat_never_clears_a_label(beats in prop::collection::btree_set(0usize..2500, 0..15), extra in 0usize..2500) {
        let anns: Vec<Annotation> = beats.iter().map(|&b| Annotation::new(b, "beat")).collect();
        let mut more_set = beats.clone();
        more_set.insert(extra);
        let more: Vec<Annotation> = more_set.iter().map(|&b| Annotation::new(b, "beat")).collect();
        let a = labelize(0..2500, &anns, Task::Qrs, 250.0, 4, 75.0).unwrap();
        let b = labelize(0..2500, &more, Task::Qrs, 250.0, 4, 75.0).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| y >= x));
    }

    #[test]
    fn standardize_is_idempotent(x in prop::collection::vec(-100.0f64..100.0, 2..500)) {
        let once = standardize(&x);
        let twice = standardize(&once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn filters_preserve_length(x in prop::collection::vec(-1.0f64..1.0, 64..600)) {
        prop_assert_eq!(bandpass(&x, 250.0, 0.5, 50.0).unwrap().len(), x.len());
        prop_assert_eq!(zero_center(&x).unwrap().len(), x.len());
        prop_assert_eq!(standardize(&x).len(), x.len());
    }

    #[test]
    fn mixing_hits_target_snr(
        s in prop::collection::vec(-3.0f64..3.0, 16..400),
        v in prop::collection::vec(-3.0f64..3.0, 4..400),
        snr in -10.0f64..30.0,
    ) {
        prop_assume!(power(&s) > 1e-6);
        let tiled = tile(&v, s.len(), 0);
        prop_assume!(power(&tiled) > 1e-6);
        let y = mix_at_snr(&s, &v, snr).unwrap();
        let added: Vec<f64> = y.iter().zip(&s).map(|(a, b)| a - b).collect();
        let achieved = 10.0 * (power(&s) / power(&added)).log10();
        prop_assert!((achieved - snr).abs() < 0.1);
    }

    #[test]
    fn resample_round_trip(f1 in 1.0f64..20.0, f2 in 20.0f64..60.0, a in 0.1f64..2.0) {
        let x = sine_mix(2000, 250.0, &[(f1, a), (f2, 0.5)]);
        let up = resample(&x, 250.0, 500.0).unwrap();
        let back = resample(&up, 500.0, 250.0).unwrap();
        prop_assert_eq!(back.len(), x.len());
        let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = x[200..1800].iter().zip(&back[200..1800]).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        prop_assert!(err <= 1e-3 * peak, "err {err} peak {peak}");
    }

    #[test]
    fn intervention_algebra(
        x in prop::collection::vec(-5.0f64..5.0, 160),
        tau in 0usize..40,
        w in 1usize..40,
    ) {
        prop_assume!(tau + w <= 40);
        let spec = |kind| InterventionSpec { kind, target_frame: tau, frames_covered: w, frame_len_samples: 4 };
        let inv = spec(InterventionKind::InvertMorph);
        let zero = spec(InterventionKind::ZeroRhythm);
        prop_assert_eq!(apply_do(&apply_do(&x, &inv).unwrap(), &inv).unwrap(), x.clone());
        let z1 = apply_do(&x, &zero).unwrap();
        prop_assert_eq!(apply_do(&z1, &zero).unwrap(), z1.clone());
        let window = zero.samples();
        for s in [&z1, &apply_do(&x, &inv).unwrap()] {
            for i in (0..x.len()).filter(|i| !window.contains(i)) {
                prop_assert_eq!(s[i].to_bits(), x[i].to_bits());
            }
        }
    }

    #[test]
    fn cosine_scale_invariance(
        a in prop::collection::vec(-3.0f64..3.0, 2..16),
        c in 0.01f64..100.0,
    ) {
        let b: Vec<f64> = a.iter().rev().map(|v| v + 0.5).collect();
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
        prop_assert!((cosine_similarity(&scaled, &b).unwrap() - cosine_similarity(&a, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_affine(s in -5.0f64..5.0, i in -5.0f64..5.0, m in -1.0f64..1.0, l1 in 0.0f64..2.0, l2 in 0.0f64..2.0, d in -1.0f64..1.0) {
        let base = total_loss(s, i, m, l1, l2).total;
        prop_assert!((total_loss(s + d, i, m, l1, l2).total - base - d).abs() < 1e-12);
        prop_assert!((total_loss(s, i + d, m, l1, l2).total - base - l1 * d).abs() < 1e-12);
        prop_assert!((total_loss(s, i, m + d, l1, l2).total - base + l2 * d).abs() < 1e-12);
    }

    #[test]
    fn detections_respect_refractory(p in prop::collection::vec(0.0f64..1.0, 10..400)) {
        let probs = FrameProbs { frames: p.len(), values: p.clone(), classes: 1 };
        let t = qrs_decisions(&probs, 16.0).times();
        prop_assert!(t.windows(2).all(|w| w[1] - w[0] >= 200.0));
    }

    #[test]
    fn higher_threshold_runs_nest(p in prop::collection::vec(0.0f64..1.0, 1..300), lo in 0.0f64..1.0, d in 0.0f64..0.5) {
        let low = candidate_runs(&p, lo);
        let high = candidate_runs(&p, lo + d);
        let width = |r: &[(usize, usize)]| r.iter().map(|(s, e)| e - s).sum::<usize>();
        prop_assert!(width(&high) <= width(&low));
        for (s, e) in high {
            prop_assert!(low.iter().any(|&(a, b)| a <= s && e <= b));
        }
    }

    #[test]
    fn onsets_reconstruct_argmax(states in prop::collection::vec(0usize..4, 1..200)) {
        let mut values = vec![0.05; states.len() * 4];
        for (t, &s) in states.iter().enumerate() {
            values[t * 4 + s] = 0.85;
        }
        let probs = FrameProbs { values, frames: states.len(), classes: 4 };
        let onsets = hs_onsets(&probs, 20.0);
        let back = reconstruct_states(&onsets, states.len(), 20.0).unwrap();
        prop_assert_eq!(back, states.iter().map(|&s| s as u8).collect::<Vec<_>>());
    }

    #[test]
    fn matching_is_optimal_and_symmetric(
        r in prop::collection::vec((0.0f64..3000.0, any::<bool>()), 0..=10),
        p in prop::collection::vec((0.0f64..3000.0, any::<bool>()), 0..=10),
        grace in 10.0f64..400.0,
    ) {
        let (r, p) = (events(&r), events(&p));
        let c = match_events(&r, &p, grace).unwrap();
        prop_assert_eq!(c, brute_force(&r, &p, grace));
        let s = match_events(&p, &r, grace).unwrap();
        prop_assert_eq!((s.tp, s.fp, s.fn_), (c.tp, c.fn_, c.fp));
    }

    #[test]
    fn unit_projection_scale_invariant(
        v in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 5), 3..40),
        c in 0.1f64..50.0,
    ) {
        let a = project_unit_2d(&v);
        prop_assume!(a.is_ok());
        let a = a.unwrap();
        let scaled: Vec<Vec<f64>> = v.iter().map(|x| x.iter().map(|y| y * c).collect()).collect();
        let b = project_unit_2d(&scaled).unwrap();
        prop_assert_eq!(a.dropped, b.dropped);
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-6);
            prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn kde_is_permutation_invariant(pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..30), k in 1usize..29) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        let mut rot = pts.clone();
        rot.rotate_left(k % pts.len());
        let a = kde_scott(&pts, 24).unwrap();
        let b = kde_scott(&rot, 24).unwrap();
        prop_assert!(a.density.iter().all(|&d| d >= 0.0));
        for (x, y) in a.density.iter().zip(&b.density) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn raising_threshold_can_split_a_run() {
    let p = [0.9, 0.6, 0.9];
    assert_eq!(candidate_runs(&p, 0.5).len(), 1);
    assert_eq!(candidate_runs(&p, 0.7).len(), 2);
}

#[test]
fn projection_of_planar_data_is_a_rotation() {
    let v: Vec<Vec<f64>> = (0..50)
        .map(|i| {
            let t = i as f64 * 0.37;
            vec![3.0 * t.cos() + 0.2, 1.0 * t.sin() - 0.1 + 0.3 * t.cos()]
        })
        .collect();
    let proj = project_unit_2d(&v).unwrap();
    let mean = [v.iter().map(|p| p[0]).sum::<f64>() / 50.0, v.iter().map(|p| p[1]).sum::<f64>() / 50.0];
    let unit: Vec<[f64; 2]> = v
        .iter()
        .map(|p| {
            let (a, b) = (p[0] - mean[0], p[1] - mean[1]);
            let r = a.hypot(b);
            [a / r, b / r]
        })
        .collect();
    // Pairwise angles preserved up to reflection.
    for i in 0..50 {
        for j in 0..50 {
            let dot_in = unit[i][0] * unit[j][0] + unit[i][1] * unit[j][1];
            let q = (proj.points[i], proj.points[j]);
            let dot_out = q.0[0] * q.1[0] + q.0[1] * q.1[1];
            assert!((dot_in - dot_out).abs() < 1e-9);
        }
    }
}

/// True conditional of unit-variance Gaussians with correlation `rho`.
struct TrueConditional(f64);

impl cci_core::nn::ConditionalGaussian for TrueConditional {
    fn dim(&self) -> usize {
        1
    }

    fn mean_var(&self, inputs: &[f64], _rows: usize) -> (Vec<f64>, Vec<f64>) {
        let r = self.0;
        (inputs.iter().map(|x| r * x).collect(), vec![1.0 - r * r; inputs.len()])
    }
}

#[test]
fn true_conditional_upper_bounds_mi() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(30);
    for rho in [0.5f64, 0.8, 0.95] {
        let truth = -0.5 * (1.0 - rho * rho).ln();
        let mut mean = 0.0;
        for _ in 0..30 {
            let (mut z, mut z_do) = (Vec::new(), Vec::new());
            for _ in 0..2048 {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                z_do.push(a);
                z.push(rho * a + (1.0 - rho * rho).sqrt() * b);
            }
            let pairs = cci_core::objective::PairBatch::new(2048, 1, 1, z, z_do).unwrap();
            mean += cci_core::objective::vcci(&TrueConditional(rho), &pairs, &mut rng) / 30.0;
        }
        assert!(mean >= truth - 0.05, "rho {rho}: {mean} vs {truth}");
    }
}
