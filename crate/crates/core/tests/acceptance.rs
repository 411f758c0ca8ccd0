//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gesturemeta::eval::{
    cross_validate, feature_search, fit_fold, make_folds, notation_tokens, polarity, Dataset, ReportFile,
    SearchConfig,
};
use gesturemeta::features::{overall_features, sample_features, FeatureMatrix, TrackAnalysis, UnitAnalysis};
use gesturemeta::gestures::{detect_window_spans, MovementSeries, WindowSpan};
use gesturemeta::ingest::LabelSchema;
use gesturemeta::learn::{
    fit_forest, fit_logistic, lbfgs, loss_and_gradient, primal_objective, solve_svm, ClassifierConfig,
    ClassifierKind, ForestParams, LogisticParams, SvmParams,
};
use gesturemeta::pipeline::{analyse_tracks, prepare_sample, prepared_features, PipelineConfig};
use gesturemeta::prepare::{recover_partial_detections, smooth_series};
use gesturemeta::synth::{synthesize, SynthConfig};
use gesturemeta::{FeatureMask, GestureSpan, Matrix, PoseFrame, PoseTrack, SmoothingConfig, UnitKind};
use gesturemeta::pose::{Point, TOTAL_POINTS};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn analysis_with_spans(frames: usize, spans: Vec<GestureSpan>) -> TrackAnalysis {
    let movement = MovementSeries {
        values: vec![0.25; frames],
        empty: false,
    };
    TrackAnalysis {
        frames,
        body_movement: movement.clone(),
        units: vec![UnitAnalysis {
            unit: UnitKind::Head,
            movement,
            spans,
        }],
    }
}

fn head_span(start: usize, end: usize) -> GestureSpan {
    GestureSpan {
        unit: UnitKind::Head,
        track: 0,
        start_frame: start,
        end_frame: end,
    }
}

fn criterion_1() -> Outcome {
    let two = analysis_with_spans(1000, vec![head_span(400, 499), head_span(900, 999)]);
    let gs_two = overall_features(&[two])[2];
    ensure((gs_two - 0.40).abs() <= 1e-9, || format!("two-gesture O-GS = {gs_two}"))?;
    let many = analysis_with_spans(1000, (0..100).map(|i| head_span(10 * i + 8, 10 * i + 9)).collect());
    let gs_many = overall_features(&[many])[2];
    ensure((gs_many - 0.008).abs() <= 1e-9, || format!("100-gesture O-GS = {gs_many}"))?;
    Ok(format!("O-GS = {gs_two:.12} and {gs_many:.12}"))
}

// ---------------------------------------------------------------- 2

/// Reference detector: look for the next opening window, then for the first
/// run of `patience` windows strictly below the threshold after it.
fn detector_oracle(w: &[f64], m: f64, patience: usize, min_windows: usize) -> Vec<WindowSpan> {
    let mut spans = Vec::new();
    let mut from = 0;
    while let Some(start) = (from..w.len()).find(|&i| w[i] >= m) {
        let close = (start + patience..w.len()).find(|&j| w[j + 1 - patience..=j].iter().all(|&v| v < m));
        let (end, next) = match close {
            Some(j) => (j - patience, j + 1),
            None => (w.len() - 1, w.len()),
        };
        if end - start >= min_windows {
            spans.push(WindowSpan { start, end });
        }
        from = next;
    }
    spans
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let began = Instant::now();
    for case in 0..1000 {
        let len = rng.random_range(0..300);
        let activity: f64 = rng.random_range(0.1..0.9);
        let w: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(activity) { rng.random_range(0.5..3.0) } else { rng.random_range(0.0..0.5) })
            .collect();
        let patience = rng.random_range(1..6);
        let min_windows = rng.random_range(0..6);
        let got = detect_window_spans(&w, 0.5, patience, min_windows);
        let want = detector_oracle(&w, 0.5, patience, min_windows);
        ensure(got == want, || format!("case {case}: {got:?} != {want:?}"))?;
    }
    let secs = began.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("1000 series identical in {secs:.3} s"))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let cfg = SmoothingConfig::default();
    let n = 64 * 4;
    let constant = vec![3.25; n + 17];
    let out = smooth_series(&constant, cfg).unwrap();
    let worst = out.iter().zip(&constant).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(worst < 1e-9, || format!("constant changed by {worst}"))?;

    let wave = |bin: f64| -> Vec<f64> { (0..n).map(|t| (2.0 * std::f64::consts::PI * bin * t as f64 / 64.0).sin()).collect() };
    let low = wave(2.0);
    let out = smooth_series(&low, cfg).unwrap();
    let err: f64 = out.iter().zip(&low).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = low.iter().map(|v| v * v).sum::<f64>().sqrt();
    ensure(err / norm < 1e-9, || format!("bin-2 relative error {}", err / norm))?;

    let high = wave(10.0);
    let out = smooth_series(&high, cfg).unwrap();
    let residual = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(residual < 1e-9, || format!("bin-10 residual {residual}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noisy: Vec<f64> = (0..n + 30).map(|_| rng.random_range(-5.0..5.0)).collect();
    let out = smooth_series(&noisy, cfg).unwrap();
    let mut drift = 0.0f64;
    for (a, b) in noisy.chunks(64).zip(out.chunks(64)) {
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        drift = drift.max((ma - mb).abs());
    }
    ensure(drift < 1e-9, || format!("window mean moved by {drift}"))?;
    Ok(format!("constant {worst:.1e}, bin-2 {:.1e}, bin-10 {residual:.1e}, mean {drift:.1e}", err / norm))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut filled = 0usize;
    for case in 0..100 {
        let len = rng.random_range(10..120);
        let points = 3;
        let truth: Vec<Vec<(f64, f64)>> = (0..len)
            .map(|_| (0..points).map(|_| (rng.random_range(1.0..500.0), rng.random_range(1.0..500.0))).collect())
            .collect();
        let mut mask: Vec<Vec<bool>> = (0..len).map(|_| (0..points).map(|_| rng.random_bool(0.6)).collect()).collect();
        for p in 0..points {
            mask[rng.random_range(0..len)][p] = true;
        }
        let frames = (0..len)
            .map(|t| {
                let coords = (0..points)
                    .map(|p| if mask[t][p] { Point::new(truth[t][p].0, truth[t][p].1) } else { Point::new(0.0, 0.0) })
                    .collect();
                PoseFrame::new(coords, mask[t].clone())
            })
            .collect();
        let track = PoseTrack::new(frames, 30.0, (0, len - 1));
        let recovered = recover_partial_detections(&track);
        for p in 0..points {
            let known: Vec<usize> = (0..len).filter(|&t| mask[t][p]).collect();
            for t in 0..len {
                if mask[t][p] {
                    continue;
                }
                let before = known.iter().rev().find(|&&k| k < t);
                let after = known.iter().find(|&&k| k > t);
                let expected = match (before, after) {
                    (Some(&a), Some(&b)) => {
                        let frac = (t - a) as f64 / (b - a) as f64;
                        let (xa, ya) = truth[a][p];
                        let (xb, yb) = truth[b][p];
                        (xa * (1.0 - frac) + xb * frac, ya * (1.0 - frac) + yb * frac)
                    }
                    (Some(&a), None) => truth[a][p],
                    (None, Some(&b)) => truth[b][p],
                    (None, None) => unreachable!(),
                };
                let got = recovered.frames[t].coords[p];
                let err = (got.x - expected.0).abs().max((got.y - expected.1).abs());
                worst = worst.max(err);
                filled += 1;
                ensure(err <= 1e-9, || format!("case {case}, point {p}, frame {t}: error {err}"))?;
            }
        }
    }
    Ok(format!("{filled} filled values, max error {worst:.1e}"))
}

// ---------------------------------------------------------------- 5

/// A clean track whose last frame equals its first, so tiles join without a
/// jump. Head and hands gesture once and fall quiet well before the end.
fn tile_base() -> Vec<PoseFrame> {
    let t_len = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rest: Vec<Point> = (0..TOTAL_POINTS).map(|p| Point::new(100.0 + p as f64 * 3.0, 200.0 + (p % 7) as f64 * 9.0)).collect();
    let moving = |unit: UnitKind, start: usize, end: usize, amp: f64, t: usize| -> Option<(Vec<usize>, f64, f64)> {
        (start..=end).contains(&t).then(|| {
            let phase = 2.0 * std::f64::consts::PI * (t - start + 1) as f64 / 20.0;
            (unit.point_indices(), amp * (1.0 - phase.cos()), amp * phase.sin())
        })
    };
    let mut frames: Vec<PoseFrame> = (0..t_len)
        .map(|t| {
            let mut coords: Vec<Point> = rest
                .iter()
                .map(|p| Point::new(p.x + rng.random_range(-0.01..0.01), p.y + rng.random_range(-0.01..0.01)))
                .collect();
            for g in [
                moving(UnitKind::Head, 50, 149, 5.0, t),
                moving(UnitKind::LeftHand, 180, 239, 8.0, t),
                moving(UnitKind::RightKnee, 100, 199, 6.0, t),
            ]
            .into_iter()
            .flatten()
            {
                for p in g.0 {
                    coords[p].x += g.1;
                    coords[p].y += g.2;
                }
            }
            PoseFrame::new(coords, vec![true; TOTAL_POINTS])
        })
        .collect();
    frames[t_len - 1] = frames[0].clone();
    frames
}

fn criterion_5() -> Outcome {
    let cfg = PipelineConfig::default();
    let base = tile_base();
    let features = |k: usize| {
        let frames: Vec<PoseFrame> = (0..k).flat_map(|_| base.iter().cloned()).collect();
        let n = frames.len();
        let track = PoseTrack::new(frames, 30.0, (0, n - 1));
        let analysis = analyse_tracks(&[track], &cfg);
        sample_features("s", "p", &analysis, &cfg.localisations).unwrap()
    };
    let one = features(1);
    let names = one.names();
    let gestures = one.values[4] * base.len() as f64;
    ensure((gestures - 3.0).abs() < 1e-9, || format!("base tile has {gestures} gestures, expected 3"))?;
    let invariant: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| {
            ["O-FM", "O-GC", "O-GM"].contains(&n.as_str())
                || n.ends_with("-GC")
                || n.ends_with("-GA")
                || n.ends_with("-GT")
        })
        .map(|(i, _)| i)
        .collect();
    let mut worst = 0.0f64;
    for k in [2, 3] {
        let tiled = features(k);
        for &i in &invariant {
            let d = (tiled.values[i] - one.values[i]).abs();
            worst = worst.max(d);
            ensure(d <= 1e-9, || format!("k={k}: {} {} vs {}", names[i], tiled.values[i], one.values[i]))?;
        }
    }
    Ok(format!("{} features, k in {{2, 3}}, max deviation {worst:.1e}", invariant.len()))
}

// ---------------------------------------------------------------- 6

fn planted_dataset(n_features: usize, samples: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..samples {
        let row: Vec<f64> = (0..n_features).map(|_| rng.random_range(-1.0..1.0)).collect();
        let signal = row[0] + row[3] + rng.random_range(-0.3..0.3);
        y.push(if signal > 0.0 { 1.0 } else { 0.0 });
        rows.push(row);
    }
    let participants = (0..samples).map(|i| format!("p{:02}", i / 2)).collect();
    Dataset::new(
        (0..n_features).map(|i| format!("F{i}")).collect(),
        (0..samples).map(|i| format!("s{i}")).collect(),
        participants,
        Matrix::from_rows(&rows),
        y,
    )
    .unwrap()
}

fn plan_for(data: &Dataset, seed: u64) -> gesturemeta::eval::FoldPlan {
    let classes: Vec<bool> = data.y.iter().map(|&v| v == 1.0).collect();
    make_folds(&data.participant_ids, &classes, 3, seed).unwrap()
}

fn criterion_6() -> Outcome {
    let data = planted_dataset(10, 60, 6);
    let plan = plan_for(&data, 6);
    let cfg = SearchConfig {
        reevaluate: false,
        ..Default::default()
    };
    let outcome = feature_search(&data, &plan, &cfg).unwrap();
    let best = &outcome.best;
    ensure(outcome.masks_evaluated == 1023, || format!("{} masks", outcome.masks_evaluated))?;
    let lin = ClassifierConfig::default();
    let rescored = cross_validate(&lin, &data, &plan, &best.mask).unwrap();
    ensure((rescored.f1_mean - best.f1_mean).abs() <= 1e-12, || {
        format!("winner recorded {} but re-scores {}", best.f1_mean, rescored.f1_mean)
    })?;
    ensure(best.mask.contains(0) && best.mask.contains(3), || format!("winner {} misses a planted feature", best.mask.bit_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    for _ in 0..1000 {
        let mask = FeatureMask::new(rng.random_range(1..1024), 10);
        let r = cross_validate(&lin, &data, &plan, &mask).unwrap();
        ensure(r.f1_mean <= best.f1_mean, || format!("mask {} scores {} > {}", mask.bit_string(), r.f1_mean, best.f1_mean))?;
    }

    let big = planted_dataset(20, 60, 60);
    let plan = plan_for(&big, 60);
    let began = Instant::now();
    let outcome = feature_search(&big, &plan, &cfg).unwrap();
    let secs = began.elapsed().as_secs_f64();
    ensure(outcome.masks_evaluated == 1_048_575, || format!("{} masks", outcome.masks_evaluated))?;
    ensure(secs < 600.0, || format!("n=20 search took {secs:.1} s"))?;
    Ok(format!(
        "n=10 winner {} f1 {:.4} beats 1000 random masks; n=20 searched 1,048,575 masks in {secs:.1} s on {} thread(s)",
        best.mask.bit_string(),
        best.f1_mean,
        rayon::current_num_threads()
    ))
}

// ---------------------------------------------------------------- 7

fn synthetic_dataset(seed: u64) -> Dataset {
    let cfg = SynthConfig {
        seed,
        ..Default::default()
    };
    assert_eq!(cfg.participants_per_class, 20);
    let pipeline = PipelineConfig::default();
    let vectors: Vec<_> = synthesize(&cfg)
        .unwrap()
        .iter()
        .map(|s| prepared_features(&prepare_sample(&s.loaded(), &pipeline).unwrap(), &pipeline).unwrap())
        .collect();
    let matrix = FeatureMatrix::from_vectors(&vectors).unwrap();
    let records: Vec<_> = synthesize(&cfg).unwrap().into_iter().map(|s| s.record).collect();
    let schema = LabelSchema::builtin("phq8").unwrap();
    Dataset::from_features(&matrix, &records, &schema, schema.binarization_threshold).unwrap()
}

fn criterion_7() -> Outcome {
    let mut searched = Vec::new();
    let mut all = Vec::new();
    for seed in 1..=5u64 {
        let data = synthetic_dataset(seed);
        ensure(data.n_features() == 20, || format!("{} features", data.n_features()))?;
        let plan = plan_for(&data, seed);
        let cfg = SearchConfig {
            classifier: ClassifierConfig::new(ClassifierKind::Lin, seed),
            reevaluate: false,
            ..Default::default()
        };
        let best = feature_search(&data, &plan, &cfg).unwrap().best;
        let full = cross_validate(&cfg.classifier, &data, &plan, &FeatureMask::all(20)).unwrap();
        searched.push(best.f1_mean);
        all.push(full.f1_mean);
    }
    let show = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    ensure(searched.iter().all(|&f| f >= 0.90), || format!("search f1 {}", show(&searched)))?;
    ensure(all.iter().all(|&f| f >= 0.75), || format!("all-feature f1 {}", show(&all)))?;
    Ok(format!("search f1 [{}], all features [{}]", show(&searched), show(&all)))
}

// ---------------------------------------------------------------- 8

fn overlapping(n: usize, positive_share: f64, seed: u64) -> (Matrix, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let c = (i as f64) < positive_share * n as f64;
        let centre = if c { 1.0 } else { -0.5 };
        rows.push(vec![centre + rng.random_range(-1.5..1.5), 0.5 * centre + rng.random_range(-1.5..1.5)]);
        y.push(if c { 1.0 } else { 0.0 });
    }
    (Matrix::from_rows(&rows), y)
}

/// Primal optimum from a smoothed hinge driven to zero width by continuation.
fn smoothed_svm_reference(x: &Matrix, y: &[f64], bounds: &[f64]) -> f64 {
    let d = x.cols();
    let mut params = vec![0.0; d + 1];
    let opts = LogisticParams {
        max_iterations: 20_000,
        gradient_tolerance: 1e-10,
        ..Default::default()
    };
    for width in [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7] {
        let objective = |p: &[f64]| {
            let mut f = 0.5 * p[1..].iter().map(|w| w * w).sum::<f64>();
            let mut g: Vec<f64> = std::iter::once(0.0).chain(p[1..].iter().copied()).collect();
            for ((row, &t), &c) in x.iter_rows().zip(y).zip(bounds) {
                let s = if t > 0.5 { 1.0 } else { -1.0 };
                let z = s * (p[0] + row.iter().zip(&p[1..]).map(|(a, b)| a * b).sum::<f64>());
                let (loss, slope) = if z >= 1.0 {
                    (0.0, 0.0)
                } else if z > 1.0 - width {
                    ((1.0 - z).powi(2) / (2.0 * width), -(1.0 - z) / width)
                } else {
                    (1.0 - z - width / 2.0, -1.0)
                };
                f += c * loss;
                g[0] += c * slope * s;
                for (gj, xj) in g[1..].iter_mut().zip(row) {
                    *gj += c * slope * s * xj;
                }
            }
            (f, g)
        };
        params = lbfgs(objective, params, &opts).0;
    }
    let model = gesturemeta::learn::SvmModel {
        intercept: params[0],
        coefficients: params[1..].to_vec(),
    };
    primal_objective(x, y, bounds, &model)
}

fn criterion_8() -> Outcome {
    // logistic
    let (x, y) = overlapping(80, 0.5, 8);
    let params = LogisticParams::default();
    let model = fit_logistic(&x, &y, &params);
    let at: Vec<f64> = std::iter::once(model.intercept).chain(model.coefficients.iter().copied()).collect();
    let (_, grad) = loss_and_gradient(&x, &y, &at, 0.0);
    let gnorm = grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(model.converged && gnorm < 1e-6, || format!("logistic gradient {gnorm:e}, converged {}", model.converged))?;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut fd_worst = 0.0f64;
    for _ in 0..20 {
        let (xs, ys) = overlapping(30, 0.4, rng.random());
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, g) = loss_and_gradient(&xs, &ys, &p, 0.0);
        for j in 0..3 {
            let h = 1e-5;
            let mut hi = p.clone();
            hi[j] += h;
            let mut lo = p.clone();
            lo[j] -= h;
            let fd = (loss_and_gradient(&xs, &ys, &hi, 0.0).0 - loss_and_gradient(&xs, &ys, &lo, 0.0).0) / (2.0 * h);
            let rel = (fd - g[j]).abs() / g[j].abs().max(1e-8);
            fd_worst = fd_worst.max(rel);
            ensure(rel < 1e-4, || format!("finite difference {fd} vs analytic {}", g[j]))?;
        }
    }

    // svm
    let (x, y) = overlapping(100, 0.1, 18);
    let svm = SvmParams::default();
    let solution = solve_svm(&x, &y, &svm);
    let predicted: Vec<bool> = x.iter_rows().map(|r| solution.model.decision(r) > 0.0).collect();
    ensure(predicted.iter().any(|&p| p) && predicted.iter().any(|&p| !p), || "svm predicts a single class".into())?;
    let primal = primal_objective(&x, &y, &solution.bounds, &solution.model);
    let dual = *solution.dual_objective_trace.last().unwrap();
    let gap = primal + dual;
    ensure(gap >= -1e-9 && gap <= 1e-4 * primal, || format!("duality gap {gap} at primal {primal}"))?;
    ensure(solution.dual_objective_trace.windows(2).all(|w| w[1] <= w[0]), || "dual objective increased".into())?;
    let reference = smoothed_svm_reference(&x, &y, &solution.bounds);
    let rel = (primal - reference).abs() / reference;
    ensure(rel <= 1e-4, || format!("svm primal {primal} vs reference {reference}"))?;

    // rf
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<f64> = rows.iter().map(|r| if r[0] + r[5] * r[7] > 0.1 { 1.0 } else { 0.0 }).collect();
    let forest = fit_forest(&Matrix::from_rows(&rows), &labels, &ForestParams::default(), 28);
    ensure(forest.trees.len() == 40, || format!("{} trees", forest.trees.len()))?;
    for (i, tree) in forest.trees.iter().enumerate() {
        ensure(tree.depth() <= 5, || format!("tree {i} has depth {}", tree.depth()))?;
        ensure(tree.leaf_sizes().iter().all(|&s| s >= 3), || format!("tree {i} has a leaf below 3 samples"))?;
    }

    // determinism
    let data = planted_dataset(6, 48, 8);
    let plan = plan_for(&data, 8);
    let schema = LabelSchema::builtin("phq8").unwrap();
    let report = |kind: ClassifierKind| {
        let cfg = ClassifierConfig::new(kind, 42);
        let r = cross_validate(&cfg, &data, &plan, &FeatureMask::all(6)).unwrap();
        serde_json::to_string(&ReportFile::new(&schema, 7.0, &cfg, &r, &data, "0")).unwrap()
    };
    for kind in ClassifierKind::ALL {
        ensure(report(kind) == report(kind), || format!("{kind} report differs between runs"))?;
    }
    let search = || serde_json::to_string(&feature_search(&data, &plan, &SearchConfig::default()).unwrap()).unwrap();
    ensure(search() == search(), || "search outcome differs between runs".into())?;
    Ok(format!(
        "log |grad| {gnorm:.1e}, fd rel {fd_worst:.1e}; svm gap {gap:.1e}, ref rel {rel:.1e}; rf 40 trees ok; reports bit-identical"
    ))
}

// ---------------------------------------------------------------- 9

fn without_row(data: &Dataset, row: usize) -> Dataset {
    let keep: Vec<usize> = (0..data.y.len()).filter(|&i| i != row).collect();
    Dataset::new(
        data.names.clone(),
        keep.iter().map(|&i| data.sample_ids[i].clone()).collect(),
        keep.iter().map(|&i| data.participant_ids[i].clone()).collect(),
        data.x.select_rows(&keep),
        keep.iter().map(|&i| data.y[i]).collect(),
    )
    .unwrap()
}

fn criterion_9() -> Outcome {
    let data = planted_dataset(5, 36, 9);
    let plan = plan_for(&data, 9);
    let mask = FeatureMask::new(0b11011, 5);
    let mut checks = 0;
    for kind in ClassifierKind::ALL {
        let cfg = ClassifierConfig::new(kind, 9);
        for fold in 0..plan.k {
            let model = fit_fold(&cfg, &data, &plan, fold, &mask).unwrap();
            let (_, test) = plan.split(&data.participant_ids, fold);
            for &row in &test {
                let refit = fit_fold(&cfg, &without_row(&data, row), &plan, fold, &mask).unwrap();
                ensure(refit == model, || format!("{kind} fold {fold}: dropping test row {row} changed the model"))?;
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} refits identical"))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let folds = vec![
        vec![0.4, -0.9, 1e-9, 0.4],
        vec![0.3, -0.2, -1e-9, -0.2],
        vec![0.5, -0.4, 0.0, 0.1],
    ];
    let got = polarity(&folds);
    ensure(got == ["+", "¬", "/", "?"], || format!("{got:?}"))?;
    let names: Vec<String> = ["O-FM", "Hn-GC", "He-GA", "L-GS", "Hn-GL"].iter().map(|s| s.to_string()).collect();
    let tokens = notation_tokens(&names, &FeatureMask::from_indices(&[1, 2, 3, 4], 5), &folds);
    ensure(tokens == ["Hn-GC+", "He-GA¬", "L-GS/", "Hn-GL?"], || format!("{tokens:?}"))?;
    Ok(tokens.join(" "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("surprise footnote", criterion_1),
        ("detector oracle", criterion_2),
        ("smoothing spectra", criterion_3),
        ("recovery exactness", criterion_4),
        ("tiling invariance", criterion_5),
        ("feature search", criterion_6),
        ("end-to-end classification", criterion_7),
        ("classifier contracts", criterion_8),
        ("leakage guard", criterion_9),
        ("polarity notation", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {:>2} {name}", i + 1);
        let selected = filter.iter().any(|f| f.parse() == Ok(i + 1) || name.contains(f.as_str()));
        if !filter.is_empty() && !selected {
            continue;
        }
        let began = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = began.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {label}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {label}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
