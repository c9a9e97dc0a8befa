//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p loopgate --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use loopgate::config::PipelineConfig;
use loopgate::pipeline::{run_detect, search_region, select_areas, sweep, synth_states, truth_for, Mode};
use loopgate_core::dird::{descriptor_distance, similarity};
use loopgate_core::eval::{area_recall, compare_curves, ground_truth_loops, triangle_count};
use loopgate_core::geometry::min_eigenvalue;
use loopgate_core::nalgebra::{Matrix1, Matrix3, SMatrix, Vector3};
use loopgate_core::pose_filter::{kalman_gain, propagate_covariance};
use loopgate_core::pose_filter::{propagate, update};
use loopgate_core::retrieval::{detect_loops, post_process, NullClock, SearchRegion};
use loopgate_core::selector::pose_distance;
use loopgate_core::synth::{generate, AliasArc, Lighting, SynthConfig, SynthDataset};
use loopgate_core::{
    ControlInput, DirdConfig, DirdDescriptor, FilterState, NoiseConfig, PlaceRecord, PositionObservation,
    SimilarityMatrix,
};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vec3(r: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(r.random_range(-scale..scale), r.random_range(-scale..scale), r.random_range(-scale..scale))
}

fn psd3(r: &mut ChaCha8Rng, scale: f64) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| r.random_range(-1.0..1.0));
    a * a.transpose() * scale
}

fn c1_distance_reduction() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a = PlaceRecord::new(0, vec3(&mut r, 100.0), Matrix3::zeros());
        let b = PlaceRecord::new(1, vec3(&mut r, 100.0), Matrix3::zeros());
        let d = pose_distance(&a, &b).map_err(|e| e.to_string())?;
        worst = worst.max((d - (a.position - b.position).norm()).abs());
    }
    check!(worst <= 1e-12, "max |d - |dp|| = {worst:e}");
    Ok(format!("max deviation {worst:.1e} over 1000 pairs"))
}

fn c2_distance_monotonicity() -> Outcome {
    let mut r = rng(2);
    let mut cases = 0;
    for _ in 0..1000 {
        let dp = loop {
            let v = vec3(&mut r, 20.0);
            if v.norm() > 1e-6 {
                break v;
            }
        };
        let sa = r.random_range(0.0..5.0);
        let pa = psd3(&mut r, sa);
        let sb = r.random_range(0.0..5.0);
        let pb = psd3(&mut r, sb);
        let rec = |p: Vector3<f64>, c: Matrix3<f64>| PlaceRecord::new(0, p, c);
        let base = pose_distance(&rec(dp, pa), &rec(Vector3::zeros(), pb)).map_err(|e| e.to_string())?;
        for c in [0.1, 1.0, 10.0] {
            let add = Matrix3::identity() * c;
            let da = pose_distance(&rec(dp, pa + add), &rec(Vector3::zeros(), pb)).map_err(|e| e.to_string())?;
            let db = pose_distance(&rec(dp, pa), &rec(Vector3::zeros(), pb + add)).map_err(|e| e.to_string())?;
            check!(da < base && db < base, "dp {dp:?}, c {c}: {base} -> {da} / {db}");
            cases += 2;
        }
    }
    Ok(format!("{cases} strict decreases"))
}

fn c3_filter_correctness() -> Outcome {
    let predicted = propagate_covariance(&Matrix1::new(1.0), &Matrix1::new(1.0), &Matrix1::new(1.0), &Matrix1::new(0.5));
    check!((predicted[(0, 0)] - 1.5).abs() <= 1e-12, "predicted variance {}", predicted[(0, 0)]);
    let upd = kalman_gain(&Matrix1::new(1.0), &Matrix1::new(1.0), &Matrix1::new(1.0)).map_err(|e| e.to_string())?;
    check!((upd.gain[(0, 0)] - 0.5).abs() <= 1e-12, "gain {}", upd.gain[(0, 0)]);
    check!((upd.covariance[(0, 0)] - 0.5).abs() <= 1e-12, "posterior {}", upd.covariance[(0, 0)]);

    // the same numbers through the full filter: unit position variance, unit
    // observation noise
    let mut state = FilterState::at_rest();
    for i in 6..9 {
        state.covariance[(i, i)] = 1.0;
    }
    let noise = NoiseConfig::from_std(0.0, 0.0, 1.0).map_err(|e| e.to_string())?;
    let obs = PositionObservation::new(Vector3::new(2.0, -4.0, 1.0));
    let post = update(&state, &obs, &noise).map_err(|e| e.to_string())?;
    check!((post.position - Vector3::new(1.0, -2.0, 0.5)).abs().max() <= 1e-12, "posterior mean {:?}", post.position);
    check!(
        (post.position_covariance() - Matrix3::identity() * 0.5).abs().max() <= 1e-12,
        "posterior covariance {:?}",
        post.position_covariance()
    );

    let mut r = rng(3);
    let mut steps = 0;
    for seq in 0..1000 {
        let noise = NoiseConfig::from_std(r.random_range(0.0..0.1), r.random_range(0.0..1.0), r.random_range(0.05..5.0))
            .map_err(|e| e.to_string())?;
        let a = SMatrix::<f64, 9, 9>::from_fn(|_, _| r.random_range(-0.3..0.3));
        let mut state = FilterState::at_rest();
        state.covariance = a * a.transpose();
        for _ in 0..r.random_range(1..30) {
            let control = ControlInput::new(vec3(&mut r, 0.5), vec3(&mut r, 12.0), r.random_range(0.01..0.2));
            state = propagate(&state, &control, &noise).map_err(|e| format!("sequence {seq}: {e}"))?;
            if r.random_bool(0.3) {
                let obs = PositionObservation::new(state.position + vec3(&mut r, 3.0));
                state = update(&state, &obs, &noise).map_err(|e| format!("sequence {seq}: {e}"))?;
            }
            let asym = (state.covariance - state.covariance.transpose()).abs().max();
            check!(asym <= 1e-12, "sequence {seq}: asymmetry {asym:e}");
            let lo = min_eigenvalue(&state.covariance);
            check!(lo >= -1e-9, "sequence {seq}: eigenvalue {lo:e}");
            steps += 1;
        }
    }
    Ok(format!("scalar values exact; {steps} random steps symmetric and PSD"))
}

fn c4_descriptor_shape() -> Outcome {
    let cfg = DirdConfig::default();
    let ex = cfg.extractor().map_err(|e| e.to_string())?;
    let ds = generate(&SynthConfig { frame_count: 8, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    for k in 0..ds.frame_count() {
        let d = ex.extract(&ds.render(k));
        check!(d.len() == 3456, "dimension {}", d.len());
        check!(d.raw.as_ref().is_some_and(|r| r.len() == 3456 && r.iter().all(|v| v.is_finite())), "raw part");
        check!(d.quantized.iter().all(|&v| (1..=256).contains(&v)), "byte value out of [1, 256]");
    }
    Ok(format!("{} frames: 3456 dims, bytes in [1, 256]", ds.frame_count()))
}

fn c5_illumination() -> Outcome {
    let ds = generate(&SynthConfig { frame_count: 50, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
    let ex = DirdConfig::default().extractor().map_err(|e| e.to_string())?;
    let (mut raw_dev, mut byte_dev): (f64, u16) = (0.0, 0);
    for k in 0..50 {
        let base = ds.render_base(k);
        let reference = ex.extract(&base);
        let ref_raw = reference.raw.as_ref().unwrap();
        for gain in [0.5, 0.8] {
            for bias in [-20.0, 20.0] {
                let light = Lighting { gain, bias, gamma: 1.0 };
                let unclipped = base.pixels().iter().all(|&p| (0.0..=255.0).contains(&(gain * p as f64 + bias)));
                check!(unclipped, "frame {k}: gain {gain}, bias {bias} saturates");
                let d = ex.extract(&light.apply(&base));
                for (a, b) in ref_raw.iter().zip(d.raw.as_ref().unwrap()) {
                    raw_dev = raw_dev.max((a - b).abs());
                }
                for (a, b) in reference.quantized.iter().zip(&d.quantized) {
                    byte_dev = byte_dev.max(a.abs_diff(*b));
                }
            }
        }
    }
    check!(raw_dev < 1e-9, "raw deviation {raw_dev:e}");
    check!(byte_dev <= 1, "byte deviation {byte_dev}");
    Ok(format!("200 lit frames: raw dev {raw_dev:.1e}, byte dev {byte_dev}"))
}

/// Every triangle cell scored, then masked to `region`.
fn dense_reference(
    descriptors: &BTreeMap<usize, DirdDescriptor>,
    region: &SearchRegion,
    cfg: &PipelineConfig,
    threshold: f64,
) -> Result<SimilarityMatrix, String> {
    let n = region.frame_count;
    let block = cfg.dird.filter_count();
    let mut m = SimilarityMatrix::new(n);
    for i in region.margin..n {
        for j in 0..=i - region.margin {
            let (a, b) = (&descriptors[&i], &descriptors[&j]);
            let s = similarity(descriptor_distance(a, b, block).map_err(|e| e.to_string())?, &cfg.dird);
            if region.contains(i, j) {
                m.comparisons += 1;
                if s >= threshold {
                    m.entries.insert((i, j), s);
                }
            }
        }
    }
    Ok(m)
}

fn c6_oracle() -> Outcome {
    let mut total_loops = 0;
    let mut runs = 0;
    for margin in [10, loopgate_core::DEFAULT_MARGIN] {
        for seed in 0..5 {
            let mut cfg = PipelineConfig::default();
            cfg.selector.margin = margin;
            cfg.synth.frame_count = 50;
            cfg.synth.seed = seed;
            let ds = generate(&cfg.synth).map_err(|e| e.to_string())?;
            let states = synth_states(&ds, &cfg.filter).map_err(|e| format!("{e:#}"))?;
            let (_, areas) = select_areas(&states, &cfg).map_err(|e| format!("{e:#}"))?;
            let region = search_region(Mode::Constrained, &areas, 50, margin);
            let ex = cfg.dird.extractor().map_err(|e| e.to_string())?;
            let all: BTreeMap<usize, DirdDescriptor> = (0..50).map(|k| (k, ex.extract(&ds.render(k)))).collect();

            // core retrieval on full descriptors
            let expected = post_process(&dense_reference(&all, &region, &cfg, cfg.retrieval.similarity_threshold)?, &cfg.retrieval)
                .map_err(|e| e.to_string())?;
            let got = detect_loops(&region, &all, &cfg.dird, &cfg.retrieval, &NullClock).map_err(|e| e.to_string())?;
            check!(got.loops == expected, "margin {margin}, seed {seed}: core loops differ from reference");
            check!(got.comparisons == region.cell_count(), "margin {margin}, seed {seed}: comparison count");

            // the CLI path: lazy extraction, quantized descriptors, parallel rows
            let quantized: BTreeMap<usize, DirdDescriptor> = all
                .iter()
                .map(|(&k, d)| (k, DirdDescriptor::from_quantized(d.quantized.clone(), d.mode)))
                .collect();
            let reference_q = dense_reference(&quantized, &region, &cfg, cfg.similarity_floor())?;
            let expected_q = post_process(&reference_q.filtered(cfg.retrieval.similarity_threshold), &cfg.retrieval)
                .map_err(|e| e.to_string())?;
            let run = run_detect(&ds, states, 0.0, &cfg, Mode::Constrained, None).map_err(|e| format!("{e:#}"))?;
            check!(run.detection.loops == expected_q, "margin {margin}, seed {seed}: pipeline loops differ");
            check!(run.similarity == reference_q, "margin {margin}, seed {seed}: pipeline similarities differ");
            if margin == 10 {
                check!(!expected.is_empty(), "seed {seed}: reference found no loops");
            }
            total_loops += expected.len();
            runs += 1;
        }
    }
    Ok(format!("{runs} runs identical to the dense reference ({total_loops} loops)"))
}

fn default_run(seed: u64) -> Result<(PipelineConfig, SynthDataset, Vec<FilterState>), String> {
    let mut cfg = PipelineConfig::default();
    cfg.synth.seed = seed;
    let ds = generate(&cfg.synth).map_err(|e| e.to_string())?;
    let states = synth_states(&ds, &cfg.filter).map_err(|e| format!("{e:#}"))?;
    Ok((cfg, ds, states))
}

fn c7_area_recall() -> Outcome {
    let mut recalls = Vec::new();
    for seed in 0..20 {
        let (cfg, ds, states) = default_run(seed)?;
        check!(cfg.selector.beta == 1.0, "beta {}", cfg.selector.beta);
        let (_, areas) = select_areas(&states, &cfg).map_err(|e| format!("{e:#}"))?;
        let truth = ground_truth_loops(&ds.positions(), ds.truth_radius, cfg.selector.margin);
        check!(!truth.is_empty(), "seed {seed}: no true loops");
        recalls.push(area_recall(&truth, &areas));
    }
    let mean = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let min = recalls.iter().copied().fold(1.0, f64::min);
    check!(mean >= 0.95, "mean area recall {mean:.4} (min {min:.4})");
    Ok(format!("mean area recall {mean:.4}, min {min:.4} over 20 seeds"))
}

fn c8_work_reduction() -> Outcome {
    let mut worst = f64::INFINITY;
    for seed in 0..20 {
        let (cfg, _, states) = default_run(seed)?;
        let (_, areas) = select_areas(&states, &cfg).map_err(|e| format!("{e:#}"))?;
        let n = states.len();
        let constrained = search_region(Mode::Constrained, &areas, n, cfg.selector.margin).cell_count();
        let baseline = search_region(Mode::Baseline, &areas, n, cfg.selector.margin).cell_count();
        check!(baseline == triangle_count(n, cfg.selector.margin), "triangle count");
        check!(3 * constrained <= baseline, "seed {seed}: {constrained} vs {baseline} comparisons");
        worst = worst.min(baseline as f64 / constrained as f64);
    }
    // the counted cells are the comparisons actually made
    let (cfg, ds, states) = default_run(0)?;
    let (_, areas) = select_areas(&states, &cfg).map_err(|e| format!("{e:#}"))?;
    let expected = search_region(Mode::Constrained, &areas, ds.frame_count(), cfg.selector.margin).cell_count();
    let run = run_detect(&ds, states, 0.0, &cfg, Mode::Constrained, None).map_err(|e| format!("{e:#}"))?;
    check!(run.similarity.comparisons == expected, "executed {} vs counted {expected}", run.similarity.comparisons);
    Ok(format!("reduction >= {worst:.2}x on all 20 seeds (seed 0 executed {expected})"))
}

fn c9_precision_shape() -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.synth.alias = Some(AliasArc::default());
    let ds = generate(&cfg.synth).map_err(|e| e.to_string())?;
    let states = synth_states(&ds, &cfg.filter).map_err(|e| format!("{e:#}"))?;
    let truth = truth_for(&ds.positions(), ds.truth_radius, &cfg);
    let thresholds = cfg.eval.thresholds();
    check!(thresholds.len() == 10, "{} thresholds", thresholds.len());
    let curve = |mode| -> Result<_, String> {
        let run = run_detect(&ds, states.clone(), 0.0, &cfg, mode, None).map_err(|e| format!("{e:#}"))?;
        sweep(&run.similarity, &thresholds, &cfg, &truth).map_err(|e| format!("{e:#}"))
    };
    let constrained = curve(Mode::Constrained)?;
    let baseline = curve(Mode::Baseline)?;
    let cmp = compare_curves(&constrained, &baseline);
    check!(!cmp.recall_levels.is_empty(), "no common recall levels");
    let worst = cmp.precision.iter().map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    let best = cmp.precision.iter().map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    check!(cmp.never_worse(), "constrained precision below baseline by {:.4}", -worst);
    check!(cmp.strictly_better_somewhere(), "never strictly better");
    Ok(format!(
        "{} common recall levels; precision gain min {worst:.3}, max {best:.3}",
        cmp.recall_levels.len()
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_loopgate")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") && n != "timing.csv")
        .collect();
    names.sort();
    names
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    cli(&["--seed", "11", "synth", "--out", &p("ds")])?;
    let manifest = p("ds/manifest.json");
    for run in ["a", "b"] {
        cli(&["--seed", "11", "detect", "--manifest", &manifest, "--out", &p(&format!("{run}/detect"))])?;
        cli(&[
            "--seed",
            "11",
            "eval",
            "--manifest",
            &manifest,
            "--detect",
            &p(&format!("{run}/detect")),
            "--out",
            &p(&format!("{run}/eval")),
        ])?;
    }
    let mut compared = 0;
    for stage in ["detect", "eval"] {
        let a = dir.path().join("a").join(stage);
        let b = dir.path().join("b").join(stage);
        let names = csv_files(&a);
        check!(names == csv_files(&b), "{stage}: different file sets");
        for name in names {
            let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
            check!(x == y, "{stage}/{name} differs");
            compared += 1;
        }
    }
    check!(compared == 5, "expected 5 CSV files, compared {compared}");
    Ok(format!("{compared} CSV files byte-identical across runs"))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("1 distance reduction", Duration::from_secs(1), c1_distance_reduction),
        ("2 distance monotonicity", Duration::from_secs(1), c2_distance_monotonicity),
        ("3 filter correctness", Duration::from_secs(5), c3_filter_correctness),
        ("4 descriptor shape", Duration::from_secs(5), c4_descriptor_shape),
        ("5 illumination robustness", Duration::from_secs(30), c5_illumination),
        ("6 oracle equivalence", Duration::from_secs(120), c6_oracle),
        ("7 candidate-area recall", Duration::from_secs(600), c7_area_recall),
        ("8 work reduction", Duration::from_secs(600), c8_work_reduction),
        ("9 precision at equal recall", Duration::from_secs(900), c9_precision_shape),
        ("10 determinism", Duration::from_secs(300), c10_determinism),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > budget => Err(format!("{detail}; over the {}s budget", budget.as_secs())),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} criterion {name:<30} {:>8.2}s  {detail}", took.as_secs_f64());
        failed += outcome.is_err() as usize;
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
