//! Stage composition: filter → gate → areas → descriptors → retrieval, plus
//! the evaluation and benchmark drivers used by the CLI.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use loopgate_core::eval::{
    area_recall, comparison_reduction_ratio, ground_truth_loops, match_with_truth, max_recall_at_full_precision,
    triangle_count, GroundTruthLoops, PrPoint,
};
use loopgate_core::pose_filter::run_filter;
use loopgate_core::retrieval::{finish_detection, post_process, score_row, Clock, Detection, SearchRegion};
use loopgate_core::selector::{cluster_candidate_areas, find_preliminary_loops, GatedPair};
use loopgate_core::synth::SynthDataset;
use loopgate_core::{
    CandidateArea, DirdConfig, DirdDescriptor, FilterState, GrayImage, LoopPair, PlaceRecord, SimilarityMatrix,
};

use crate::config::{FilterSection, PipelineConfig};
use crate::dataset::Dataset;
use crate::formats::cache::{CacheLock, DescriptorCache};
use crate::formats::tables::{
    read_rows, similarity_rows, write_rows, AreaRow, GatedRow, LoopRow, PrRow, SimilarityRow, TimingRow,
};
use crate::formats::trajectory::{write_trajectory, TrajectoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Search only inside the candidate areas.
    Constrained,
    /// Search the whole triangle below the margin.
    Baseline,
    /// Constrained code path with one area spanning every frame.
    FullCoverage,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Constrained => "constrained",
            Mode::Baseline => "baseline",
            Mode::FullCoverage => "full_coverage",
        }
    }
}

/// Frames addressed by index.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn image(&self, frame: usize) -> anyhow::Result<GrayImage>;
    fn frame_time(&self, frame: usize) -> f64;
}

impl FrameSource for Dataset {
    fn frame_count(&self) -> usize {
        Dataset::frame_count(self)
    }

    fn image(&self, frame: usize) -> anyhow::Result<GrayImage> {
        Dataset::image(self, frame)
    }

    fn frame_time(&self, frame: usize) -> f64 {
        self.ground_truth[frame].t
    }
}

impl FrameSource for SynthDataset {
    fn frame_count(&self) -> usize {
        SynthDataset::frame_count(self)
    }

    fn image(&self, frame: usize) -> anyhow::Result<GrayImage> {
        Ok(self.render(frame))
    }

    fn frame_time(&self, frame: usize) -> f64 {
        self.config.frame_time(frame)
    }
}

/// Filtered states, or the reference poses when the dataset has no controls.
pub fn dataset_states(ds: &Dataset, filter: &FilterSection) -> anyhow::Result<Vec<FilterState>> {
    match &ds.controls {
        Some(log) => run_filter(&log.controls, &log.observations, &filter.noise()?, &ds.initial_state())
            .context("stage filter"),
        None => Ok(ds
            .ground_truth
            .iter()
            .map(|r| FilterState::new(r.position, r.rotation, Default::default(), Default::default()))
            .collect()),
    }
}

pub fn synth_states(ds: &SynthDataset, filter: &FilterSection) -> anyhow::Result<Vec<FilterState>> {
    run_filter(&ds.controls, &ds.observations, &filter.noise()?, &ds.trajectory.initial_state())
        .context("stage filter")
}

pub fn select_areas(
    states: &[FilterState],
    cfg: &PipelineConfig,
) -> anyhow::Result<(Vec<GatedPair>, Vec<CandidateArea>)> {
    let records: Vec<PlaceRecord> = states.iter().enumerate().map(|(k, s)| PlaceRecord::from_state(k, s)).collect();
    let gated = find_preliminary_loops(&records, &cfg.selector).context("stage gate")?;
    let pairs: Vec<LoopPair> = gated.iter().map(GatedPair::pair).collect();
    let areas = cluster_candidate_areas(&pairs, &cfg.selector, states.len());
    Ok((gated, areas))
}

pub fn search_region(mode: Mode, areas: &[CandidateArea], frame_count: usize, margin: usize) -> SearchRegion {
    match mode {
        Mode::Constrained => SearchRegion::areas(areas.to_vec(), frame_count, margin),
        Mode::Baseline => SearchRegion::triangle(frame_count, margin),
        Mode::FullCoverage => {
            let last = frame_count.saturating_sub(1);
            SearchRegion::areas(vec![CandidateArea::new((0, last), (0, last))], frame_count, margin)
        }
    }
}

/// Descriptors for `frames`, reusing and extending `cache` when given.
/// Only the quantized part is kept, so cached and fresh descriptors compare
/// identically.
pub fn extract_descriptors(
    source: &dyn FrameSource,
    frames: &[usize],
    dird: &DirdConfig,
    cache: Option<&mut DescriptorCache>,
) -> anyhow::Result<BTreeMap<usize, DirdDescriptor>> {
    let extractor = dird.extractor().context("stage extract")?;
    let mode = dird.quantization;
    let missing: Vec<usize> = frames
        .iter()
        .copied()
        .filter(|k| cache.as_ref().is_none_or(|c| !c.contains(*k)))
        .collect();
    let fresh = missing
        .par_iter()
        .map(|&k| {
            let img = source.image(k).with_context(|| format!("stage extract, frame {k}"))?;
            let d = extractor.extract(&img);
            Ok((k, DirdDescriptor::from_quantized(d.quantized, mode)))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut out: BTreeMap<usize, DirdDescriptor> = fresh.into_iter().collect();
    if let Some(c) = cache {
        for (k, d) in &out {
            c.insert(*k, d);
        }
        for &k in frames {
            if let Some(d) = c.descriptor(k) {
                out.entry(k).or_insert(d);
            }
        }
    }
    Ok(out)
}

/// Similarities at or above `floor` over `region`, rows scored in parallel.
pub fn build_similarity_parallel(
    region: &SearchRegion,
    descriptors: &BTreeMap<usize, DirdDescriptor>,
    dird: &DirdConfig,
    floor: f64,
) -> anyhow::Result<SimilarityMatrix> {
    let rows = (0..region.frame_count)
        .into_par_iter()
        .filter_map(|i| {
            let ranges = region.row_ranges(i);
            (!ranges.is_empty()).then(|| score_row(i, &ranges, descriptors, dird, floor).map(|r| (i, r)))
        })
        .collect::<Result<Vec<_>, _>>()
        .context("stage similarity")?;
    let mut m = SimilarityMatrix::new(region.frame_count);
    for (i, (kept, count)) in rows {
        m.comparisons += count;
        m.entries.extend(kept.into_iter().map(|(j, s)| ((i, j), s)));
    }
    Ok(m)
}

struct InstantClock(Instant);

impl Clock for InstantClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn thread_pool(threads: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

#[derive(Debug, Clone)]
pub struct DetectRun {
    pub mode: Mode,
    pub times: Vec<f64>,
    pub states: Vec<FilterState>,
    pub gated: Vec<GatedPair>,
    pub areas: Vec<CandidateArea>,
    pub region: SearchRegion,
    pub descriptor_frames: usize,
    /// Similarities at or above the sweep floor.
    pub similarity: SimilarityMatrix,
    pub similarity_floor: f64,
    /// Result at the configured similarity threshold.
    pub detection: Detection,
    pub timings: Vec<TimingRow>,
}

pub fn run_detect(
    source: &dyn FrameSource,
    states: Vec<FilterState>,
    filter_ms: f64,
    cfg: &PipelineConfig,
    mode: Mode,
    cache: Option<&mut DescriptorCache>,
) -> anyhow::Result<DetectRun> {
    let n = source.frame_count();
    ensure!(n > 0, "dataset has no frames");
    ensure!(states.len() == n, "{} filter states for {n} frames", states.len());
    cfg.retrieval.validate().context("stage retrieval")?;

    let t = Instant::now();
    let (gated, areas) = select_areas(&states, cfg)?;
    let gate_ms = ms_since(t);

    let region = search_region(mode, &areas, n, cfg.selector.margin);
    let frames = region.frames();
    let t = Instant::now();
    let descriptors = extract_descriptors(source, &frames, &cfg.dird, cache)?;
    let extract_ms = ms_since(t);

    let floor = cfg.similarity_floor();
    let t = Instant::now();
    let similarity = build_similarity_parallel(&region, &descriptors, &cfg.dird, floor)?;
    let similarity_ms = ms_since(t);

    let clock = InstantClock(Instant::now());
    let at_threshold = similarity.filtered(cfg.retrieval.similarity_threshold);
    let detection =
        finish_detection(at_threshold, &cfg.retrieval, &clock, similarity_ms).context("stage retrieval")?;

    let row = |stage: &str, frames: usize, total_ms: f64, comparisons: u64| TimingRow {
        stage: stage.into(),
        frames,
        total_ms,
        per_frame_ms: if frames == 0 { 0.0 } else { total_ms / frames as f64 },
        comparisons,
    };
    let tm = detection.times;
    let total = filter_ms + gate_ms + extract_ms + tm.similarity_ms + tm.sequence_ms + tm.nms_ms;
    let timings = vec![
        row("filter", n, filter_ms, 0),
        row("gate", n, gate_ms, 0),
        row("extract", frames.len(), extract_ms, 0),
        row("similarity", n, tm.similarity_ms, similarity.comparisons),
        row("sequence", n, tm.sequence_ms, 0),
        row("nms", n, tm.nms_ms, 0),
        row("total", n, total, similarity.comparisons),
    ];

    Ok(DetectRun {
        mode,
        times: (0..n).map(|k| source.frame_time(k)).collect(),
        states,
        gated,
        areas,
        region,
        descriptor_frames: frames.len(),
        similarity,
        similarity_floor: floor,
        detection,
        timings,
    })
}

/// Filter (timed) then detect.
pub fn detect_dataset(
    ds: &Dataset,
    cfg: &PipelineConfig,
    mode: Mode,
    cache: Option<&mut DescriptorCache>,
) -> anyhow::Result<DetectRun> {
    let t = Instant::now();
    let states = dataset_states(ds, &cfg.filter)?;
    run_detect(ds, states, ms_since(t), cfg, mode, cache)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub mode: Mode,
    pub frame_count: usize,
    pub margin: usize,
    pub similarity_threshold: f64,
    pub similarity_floor: f64,
    pub gated_pairs: usize,
    pub area_count: usize,
    pub descriptor_frames: usize,
    pub comparisons: u64,
    pub triangle_comparisons: u64,
    pub loop_count: usize,
}

impl DetectRun {
    pub fn summary(&self, cfg: &PipelineConfig) -> DetectSummary {
        let n = self.states.len();
        DetectSummary {
            mode: self.mode,
            frame_count: n,
            margin: cfg.selector.margin,
            similarity_threshold: cfg.retrieval.similarity_threshold,
            similarity_floor: self.similarity_floor,
            gated_pairs: self.gated.len(),
            area_count: self.areas.len(),
            descriptor_frames: self.descriptor_frames,
            comparisons: self.similarity.comparisons,
            triangle_comparisons: triangle_count(n, cfg.selector.margin),
            loop_count: self.detection.loops.len(),
        }
    }
}

pub const DETECT_SUMMARY: &str = "detect.json";

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_detect(run: &DetectRun, cfg: &PipelineConfig, out: &Path, plot_data: bool) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let areas: Vec<AreaRow> = run.areas.iter().map(AreaRow::from).collect();
    write_rows(&out.join("areas.csv"), &areas)?;
    let gated: Vec<GatedRow> = run.gated.iter().map(GatedRow::from).collect();
    write_rows(&out.join("gated.csv"), &gated)?;
    write_rows(&out.join("similarity.csv"), &similarity_rows(&run.similarity))?;
    let loops: Vec<LoopRow> = run.detection.loops.iter().map(LoopRow::from).collect();
    write_rows(&out.join("loops.csv"), &loops)?;
    write_rows(&out.join("timing.csv"), &run.timings)?;
    let traj: Vec<TrajectoryRow> = run
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| TrajectoryRow::from_state(k, run.times[k], s))
        .collect();
    write_trajectory(&out.join("trajectory.txt"), &traj)?;
    write_json(&out.join(DETECT_SUMMARY), &run.summary(cfg))?;
    if plot_data {
        write_json(&out.join("timing.json"), &run.timings)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: Mode,
    pub frame_count: usize,
    pub truth_pairs: usize,
    pub truth_radius_m: f64,
    pub match_tolerance: usize,
    pub comparisons: u64,
    pub baseline_comparisons: u64,
    /// Serialized as `null` when no comparisons were made.
    pub comparison_reduction_ratio: f64,
    pub max_recall_at_precision_1: f64,
    /// Fraction of true pairs inside the candidate areas.
    pub area_recall: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub curve: Vec<PrPoint>,
    pub summary: EvalSummary,
}

/// PR sweep over thresholds, one post-processing run per threshold.
pub fn sweep(
    similarity: &SimilarityMatrix,
    thresholds: &[f64],
    cfg: &PipelineConfig,
    truth: &GroundTruthLoops,
) -> anyhow::Result<Vec<PrPoint>> {
    let mut sorted = thresholds.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted
        .par_iter()
        .map(|&t| {
            let loops = post_process(&similarity.filtered(t), &cfg.retrieval)?;
            Ok(PrPoint::new(t, match_with_truth(&loops, truth, cfg.eval.match_tolerance)))
        })
        .collect()
}

pub fn truth_for(positions: &[loopgate_core::nalgebra::Vector3<f64>], default_radius: f64, cfg: &PipelineConfig) -> GroundTruthLoops {
    ground_truth_loops(positions, cfg.eval.truth_radius.unwrap_or(default_radius), cfg.selector.margin)
}

pub fn evaluate(
    similarity: &SimilarityMatrix,
    areas: &[CandidateArea],
    mode: Mode,
    truth: &GroundTruthLoops,
    cfg: &PipelineConfig,
) -> anyhow::Result<EvalReport> {
    let n = similarity.frame_count;
    let curve = sweep(similarity, &cfg.eval.thresholds(), cfg, truth)?;
    let baseline = triangle_count(n, cfg.selector.margin);
    let summary = EvalSummary {
        mode,
        frame_count: n,
        truth_pairs: truth.len(),
        truth_radius_m: truth.radius,
        match_tolerance: cfg.eval.match_tolerance,
        comparisons: similarity.comparisons,
        baseline_comparisons: baseline,
        comparison_reduction_ratio: comparison_reduction_ratio(similarity.comparisons, baseline),
        max_recall_at_precision_1: max_recall_at_full_precision(&curve),
        area_recall: area_recall(truth, areas),
    };
    Ok(EvalReport { curve, summary })
}

/// Evaluate the outputs of a `detect` run against the dataset's reference poses.
pub fn evaluate_detect_dir(ds: &Dataset, detect_dir: &Path, cfg: &PipelineConfig) -> anyhow::Result<EvalReport> {
    let summary: DetectSummary = read_json(&detect_dir.join(DETECT_SUMMARY))?;
    let n = ds.frame_count();
    ensure!(
        summary.frame_count == n,
        "detect outputs cover {} frames but the dataset has {n}",
        summary.frame_count
    );
    ensure!(
        cfg.eval.sweep_min >= summary.similarity_floor,
        "sweep_min {} is below the similarity floor {} stored by detect",
        cfg.eval.sweep_min,
        summary.similarity_floor
    );
    let mut similarity = SimilarityMatrix::new(n);
    similarity.comparisons = summary.comparisons;
    for r in read_rows::<SimilarityRow>(&detect_dir.join("similarity.csv"))? {
        ensure!(r.i < n && r.j < n, "similarity cell ({}, {}) outside {n} frames", r.i, r.j);
        similarity.entries.insert((r.i, r.j), r.similarity);
    }
    let areas: Vec<CandidateArea> =
        read_rows::<AreaRow>(&detect_dir.join("areas.csv"))?.into_iter().map(CandidateArea::from).collect();
    let truth = truth_for(&ds.positions(), ds.manifest.truth_radius_m, cfg);
    evaluate(&similarity, &areas, summary.mode, &truth, cfg)
}

pub fn write_eval(report: &EvalReport, out: &Path, plot_data: bool) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows: Vec<PrRow> = report.curve.iter().map(PrRow::from).collect();
    write_rows(&out.join("pr.csv"), &rows)?;
    write_json(&out.join("summary.json"), &report.summary)?;
    if plot_data {
        write_json(&out.join("pr.json"), &rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub frame_count: usize,
    pub threads: usize,
    pub constrained_comparisons: u64,
    pub baseline_comparisons: u64,
    pub comparison_reduction_ratio: f64,
    pub constrained_descriptor_frames: usize,
    pub baseline_descriptor_frames: usize,
    pub constrained_total_ms: f64,
    pub baseline_total_ms: f64,
}

/// Detect in both modes without a cache and collect per-stage timings.
pub fn bench(ds: &Dataset, cfg: &PipelineConfig) -> anyhow::Result<(Vec<TimingRow>, BenchSummary)> {
    let threads = if cfg.run.parallel_timing { cfg.run.threads } else { 1 };
    let pool = thread_pool(threads)?;
    let (constrained, baseline) = pool.install(|| -> anyhow::Result<_> {
        Ok((detect_dataset(ds, cfg, Mode::Constrained, None)?, detect_dataset(ds, cfg, Mode::Baseline, None)?))
    })?;
    let total = |r: &DetectRun| r.timings.last().map_or(0.0, |t| t.total_ms);
    let mut rows = Vec::new();
    for run in [&constrained, &baseline] {
        rows.extend(run.timings.iter().map(|t| TimingRow {
            stage: format!("{}.{}", run.mode.name(), t.stage),
            ..t.clone()
        }));
    }
    let summary = BenchSummary {
        frame_count: ds.frame_count(),
        threads: pool.current_num_threads(),
        constrained_comparisons: constrained.similarity.comparisons,
        baseline_comparisons: baseline.similarity.comparisons,
        comparison_reduction_ratio: comparison_reduction_ratio(
            constrained.similarity.comparisons,
            baseline.similarity.comparisons,
        ),
        constrained_descriptor_frames: constrained.descriptor_frames,
        baseline_descriptor_frames: baseline.descriptor_frames,
        constrained_total_ms: total(&constrained),
        baseline_total_ms: total(&baseline),
    };
    Ok((rows, summary))
}

pub fn write_bench(rows: &[TimingRow], summary: &BenchSummary, out: &Path, plot_data: bool) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_rows(&out.join("timing.csv"), rows)?;
    write_json(&out.join("bench.json"), summary)?;
    if plot_data {
        write_json(&out.join("timing.json"), &rows)?;
    }
    Ok(())
}

/// Open (or start) the cache at `path` for `dird`, holding its lock.
pub fn open_cache(path: &Path, dird: &DirdConfig) -> anyhow::Result<(CacheLock, DescriptorCache)> {
    let lock = CacheLock::acquire(path)?;
    let dimension = dird.dimension();
    let cache = match DescriptorCache::read(path)? {
        Some(c) => {
            ensure!(
                c.dimension == dimension && c.mode == dird.quantization,
                "{}: cache holds {}-dimensional {:?} descriptors, config needs {dimension}-dimensional {:?}",
                path.display(),
                c.dimension,
                c.mode,
                dird.quantization
            );
            c
        }
        None => DescriptorCache::new(dimension, dird.quantization),
    };
    Ok((lock, cache))
}

/// Add descriptors for `frames` to the cache at `path`; returns the record count.
pub fn extract_to_cache(
    source: &dyn FrameSource,
    frames: &[usize],
    dird: &DirdConfig,
    path: &Path,
) -> anyhow::Result<usize> {
    let n = source.frame_count();
    if let Some(&bad) = frames.iter().find(|&&k| k >= n) {
        anyhow::bail!("frame {bad} out of range for {n} frames");
    }
    let (_lock, mut cache) = open_cache(path, dird)?;
    let before = cache.len();
    extract_descriptors(source, frames, dird, Some(&mut cache))?;
    if cache.len() != before || !path.exists() {
        cache.write(path)?;
    }
    Ok(cache.len())
}

/// Parse `0-19,40,45-49` into sorted, distinct frame indices.
pub fn parse_frame_ranges(ranges: &str) -> anyhow::Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in ranges.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse::<usize>(), b.trim().parse::<usize>()),
            None => (part.parse(), part.parse()),
        };
        let (lo, hi) = match (lo, hi) {
            (Ok(lo), Ok(hi)) if lo <= hi => (lo, hi),
            _ => anyhow::bail!("bad frame range `{part}`"),
        };
        out.extend(lo..=hi);
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
