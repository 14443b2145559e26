//! Stage orchestration: every stage reads its inputs from and writes its
//! outputs to one directory, and a manifest records what was produced.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{delay_embed, estimate_lag, Trajectory};
use crate::error::{Error, Result};
use crate::fragments::{
    enumerate_fragments, place_markers, read_spans_csv, resample_fragment, write_spans_csv,
    FragmentSpan, LengthBounds,
};
use crate::geometry::{normalize, write_descriptors_csv, write_transforms_csv, HomMatrix};
use crate::model::{
    compare, fit_model, simulate, BasisFunction, ComparisonMetrics, IdentifiedModel,
};
use crate::selection::{fitness, pairwise_matrix, select_optimal, DistanceMatrix, GaConfig};
use crate::signal_io::{
    artifact_err, generate_rossler, load_series, write_series, write_series_table, LagSetting,
    PipelineConfig, TimeSeries,
};
use crate::spectral::{dft_points, write_signatures_csv, DistanceWeights};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const OUT_DIR_ENV: &str = "CHAOSYM_OUT";

pub const SERIES_FILE: &str = "series.csv";
pub const ROSSLER_FILE: &str = "rossler.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MARKERS_FILE: &str = "markers.csv";
pub const SPANS_FILE: &str = "fragments.csv";
pub const DESCRIPTORS_FILE: &str = "descriptors.csv";
pub const TRANSFORMS_FILE: &str = "transforms.csv";
pub const SIGNATURES_FILE: &str = "signatures.csv";
pub const DISTANCES_FILE: &str = "distances.csv";
pub const WINNER_FILE: &str = "winner.toml";
pub const GA_LOG_FILE: &str = "ga_log.csv";
pub const WINNER_TRANSFORMS_FILE: &str = "winner_transforms.csv";
pub const WINNER_DIR: &str = "winners";
pub const MODEL_FILE: &str = "model.toml";
pub const SIMULATED_FILE: &str = "simulated.csv";
pub const SERIES_COMPARE_FILE: &str = "series_compare.csv";
pub const COMPARISON_FILE: &str = "comparison.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Generate,
    Embed,
    Fragments,
    Normalize,
    Distances,
    Select,
    Identify,
    Simulate,
    Compare,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Generate,
        Stage::Embed,
        Stage::Fragments,
        Stage::Normalize,
        Stage::Distances,
        Stage::Select,
        Stage::Identify,
        Stage::Simulate,
        Stage::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Embed => "embed",
            Stage::Fragments => "fragments",
            Stage::Normalize => "normalize",
            Stage::Distances => "distances",
            Stage::Select => "select",
            Stage::Identify => "identify",
            Stage::Simulate => "simulate",
            Stage::Compare => "compare",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::PreconditionViolation(format!("unknown stage `{s}`")))
    }
}

/// Inclusive range of stages, written `A..B`, `A..`, `..B` or `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRange {
    pub first: Stage,
    pub last: Stage,
}

impl StageRange {
    pub fn all() -> Self {
        Self {
            first: Stage::Generate,
            last: Stage::Compare,
        }
    }

    pub fn single(s: Stage) -> Self {
        Self { first: s, last: s }
    }

    pub fn contains(&self, s: Stage) -> bool {
        self.first <= s && s <= self.last
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        Stage::ALL.into_iter().filter(|s| self.contains(*s))
    }
}

impl FromStr for StageRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let range = match s.split_once("..") {
            Some((a, b)) => {
                let first = if a.trim().is_empty() {
                    Stage::Generate
                } else {
                    a.parse()?
                };
                let last = if b.trim().is_empty() {
                    Stage::Compare
                } else {
                    b.parse()?
                };
                StageRange { first, last }
            }
            None => StageRange::single(s.parse()?),
        };
        if range.first > range.last {
            return Err(Error::PreconditionViolation(format!(
                "empty stage range `{s}`"
            )));
        }
        Ok(range)
    }
}

/// Source of the scalar series.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    File(PathBuf),
    Rossler,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub stages: StageRange,
    /// Overrides the input named in the config.
    pub input: Option<InputSpec>,
    /// Config file to digest into the manifest, if the config came from one.
    pub config_path: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            stages: StageRange::all(),
            input: None,
            config_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub stage: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
    pub status: String,
}

/// Headline numbers collected along the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lag: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markers: Option<usize>,
    /// Marker pairs before length filtering.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_pairs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winner_fitness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winner_raw_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ga_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ga_restarts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub stages_run: String,
    pub config: toml::Value,
    #[serde(default)]
    pub inputs: Vec<FileDigest>,
    #[serde(default)]
    pub timings: Vec<StageTiming>,
    #[serde(default)]
    pub outputs: Vec<OutputEntry>,
    #[serde(default)]
    pub stats: RunStats,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| artifact_err(path, e.message()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| artifact_err(path, e))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn output(&self, rel: &str) -> Option<&OutputEntry> {
        self.outputs.iter().find(|o| o.path == rel)
    }
}

/// Selected fragment set as written to `winner.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerReport {
    pub fitness: f64,
    pub generation_born: usize,
    pub total_raw_len: usize,
    pub contour_len: usize,
    pub max_pairwise_distance: f64,
    pub mean_pairwise_distance: f64,
    pub fragments: Vec<WinnerFragment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerFragment {
    pub id: usize,
    pub start: usize,
    pub end: usize,
    pub raw_len: usize,
    pub points_file: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    opts: &'a RunOptions,
    input: InputSpec,
    manifest: RunManifest,
    previous: Option<RunManifest>,
    written: BTreeSet<String>,
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.opts.out_dir.join(rel)
    }

    /// Writes an output through `write` and records it in the manifest.
    fn emit(
        &mut self,
        stage: Stage,
        rel: &str,
        write: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write(&path)?;
        let sha256 = sha256_file(&path)?;
        self.manifest.outputs.retain(|o| o.path != rel);
        self.manifest.outputs.push(OutputEntry {
            stage: stage.name().into(),
            path: rel.into(),
            sha256,
        });
        self.written.insert(rel.to_string());
        Ok(())
    }

    /// Path of an upstream artifact. Artifacts not produced in this run must
    /// match the digest recorded by the run that produced them.
    fn upstream(&self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        if self.written.contains(rel) {
            return Ok(path);
        }
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let recorded = self
            .previous
            .as_ref()
            .and_then(|m| m.output(rel))
            .ok_or_else(|| artifact_err(&path, "not listed in the previous manifest"))?;
        let actual = sha256_file(&path)?;
        if actual != recorded.sha256 {
            return Err(artifact_err(
                &path,
                format!(
                    "digest {actual} differs from manifest entry {}",
                    recorded.sha256
                ),
            ));
        }
        Ok(path)
    }

    fn record_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        let path = path.display().to_string();
        if !self.manifest.inputs.iter().any(|d| d.path == path) {
            self.manifest.inputs.push(FileDigest { path, sha256 });
        }
        Ok(())
    }

    fn trajectory(&self) -> Result<Trajectory> {
        Trajectory::read_csv(&self.upstream(TRAJECTORY_FILE)?)
    }

    fn spans(&self) -> Result<Vec<FragmentSpan>> {
        read_spans_csv(&self.upstream(SPANS_FILE)?)
    }

    fn execute(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Generate => self.generate(),
            Stage::Embed => self.embed(),
            Stage::Fragments => self.fragments(),
            Stage::Normalize => self.normalize(),
            Stage::Distances => self.distances(),
            Stage::Select => self.select(),
            Stage::Identify => self.identify(),
            Stage::Simulate => self.simulate(),
            Stage::Compare => self.compare(),
        }
    }

    fn generate(&mut self) -> Result<()> {
        let series = match self.input.clone() {
            InputSpec::File(path) => {
                self.record_input(&path)?;
                load_series(&path, &self.cfg.input.column.0)?
            }
            InputSpec::Rossler => {
                let coords = generate_rossler(&self.cfg.rossler)?;
                self.emit(Stage::Generate, ROSSLER_FILE, |p| {
                    write_series_table(&[&coords[0], &coords[1], &coords[2]], p)
                })?;
                let k = self.cfg.input.observable;
                let chosen = coords.get(k.wrapping_sub(1)).ok_or_else(|| {
                    Error::PreconditionViolation(format!("observable {k} outside 1..=3"))
                })?;
                chosen.clone()
            }
        };
        self.manifest.stats.series_len = Some(series.len());
        self.emit(Stage::Generate, SERIES_FILE, |p| write_series(&series, p))
    }

    fn embed(&mut self) -> Result<()> {
        let path = self.upstream(SERIES_FILE)?;
        let series: TimeSeries = load_series(&path, &1.into())?;
        let lag = match self.cfg.embedding.lag {
            LagSetting::Auto => estimate_lag(&series)?,
            LagSetting::Fixed(l) => l,
        };
        let traj = delay_embed(&series, self.cfg.embedding.dim, lag)?;
        self.manifest.stats.lag = Some(lag);
        self.manifest.stats.trajectory_len = Some(traj.len());
        self.emit(Stage::Embed, TRAJECTORY_FILE, |p| traj.write_csv(p))
    }

    fn fragments(&mut self) -> Result<()> {
        let traj = self.trajectory()?;
        let markers = place_markers(&traj, self.cfg.markers.prominence, self.cfg.markers.spacing)?;
        let bounds = LengthBounds::new(self.cfg.fragments.min_len, self.cfg.fragments.max_len)?;
        let spans = enumerate_fragments(&markers, Some(bounds));
        let n = markers.len();
        self.manifest.stats.markers = Some(n);
        self.manifest.stats.marker_pairs = Some(n * n.saturating_sub(1) / 2);
        self.manifest.stats.candidates = Some(spans.len());
        self.emit(Stage::Fragments, MARKERS_FILE, |p| {
            markers.write_csv(&traj, p)
        })?;
        self.emit(Stage::Fragments, SPANS_FILE, |p| write_spans_csv(&spans, p))?;
        if spans.is_empty() {
            return Err(Error::NoFragments);
        }
        Ok(())
    }

    fn normalize(&mut self) -> Result<()> {
        let traj = self.trajectory()?;
        let spans = self.spans()?;
        let m_pts = self.cfg.fragments.resample_points;
        let descriptors = spans
            .par_iter()
            .map(|s| normalize(&resample_fragment(&traj, s.start, s.end, m_pts)?))
            .collect::<Result<Vec<_>>>()?;
        self.emit(Stage::Normalize, DESCRIPTORS_FILE, |p| {
            write_descriptors_csv(&descriptors, p)
        })?;
        self.emit(Stage::Normalize, TRANSFORMS_FILE, |p| {
            write_transforms_csv(&descriptors, p)
        })
    }

    fn distances(&mut self) -> Result<()> {
        let points = read_descriptor_points(&self.upstream(DESCRIPTORS_FILE)?)?;
        let m_pts = points
            .first()
            .map(DMatrix::nrows)
            .ok_or(Error::NoFragments)?;
        let weights = DistanceWeights::new(self.cfg.spectral.resolved_betas(m_pts))?;
        weights.check(m_pts)?;
        let sigs: Vec<_> = points.par_iter().map(dft_points).collect();
        let dist = pairwise_matrix(&sigs, &weights)?;
        self.emit(Stage::Distances, SIGNATURES_FILE, |p| {
            write_signatures_csv(&sigs, p)
        })?;
        self.emit(Stage::Distances, DISTANCES_FILE, |p| dist.write_csv(p))
    }

    fn select(&mut self) -> Result<()> {
        let traj = self.trajectory()?;
        let spans = self.spans()?;
        let dist = DistanceMatrix::read_csv(&self.upstream(DISTANCES_FILE)?)?;
        if dist.len() != spans.len() {
            return Err(Error::DimensionMismatch {
                expected: spans.len(),
                actual: dist.len(),
            });
        }
        let transforms = read_transforms(&self.upstream(TRANSFORMS_FILE)?)?;
        let ga = &self.cfg.ga;
        let ga_cfg = GaConfig {
            population: ga.population,
            alpha: ga.alpha,
            beta: ga.beta,
            stall_limit: ga.stall_limit,
            max_iterations: ga.max_iterations,
            seed: self.cfg.seed,
            elitism_count: ga.elitism,
        };
        let contour_len = traj.len();
        let (best, log) = select_optimal(&spans, &dist, contour_len, &ga_cfg)?;
        // recomputed so the report never disagrees with the definition
        let fit = fitness(&best.fragment_ids, &dist, &spans, contour_len)?;

        let ids = &best.fragment_ids;
        let pair_d: Vec<f64> = ids
            .iter()
            .enumerate()
            .flat_map(|(k, &a)| ids[k + 1..].iter().map(move |&b| (a, b)))
            .map(|(a, b)| dist.get(a, b))
            .collect();
        let mut fragments = Vec::new();
        for &id in ids {
            let s = spans[id];
            let rel = format!("{WINNER_DIR}/fragment_{id}.csv");
            let rows: Vec<Vec<f64>> = (s.start..=s.end).map(|i| traj.point(i).to_vec()).collect();
            let piece = Trajectory::from_rows(&rows, format!("fragment {id}"))?;
            self.emit(Stage::Select, &rel, |p| piece.write_csv(p))?;
            fragments.push(WinnerFragment {
                id,
                start: s.start,
                end: s.end,
                raw_len: s.raw_len(),
                points_file: rel,
            });
        }
        let report = WinnerReport {
            fitness: fit,
            generation_born: best.generation_born,
            total_raw_len: fragments.iter().map(|f| f.raw_len).sum(),
            contour_len,
            max_pairwise_distance: pair_d.iter().copied().fold(0.0, f64::max),
            mean_pairwise_distance: if pair_d.is_empty() {
                0.0
            } else {
                pair_d.iter().sum::<f64>() / pair_d.len() as f64
            },
            fragments,
        };
        self.manifest.stats.winner_fitness = Some(report.fitness);
        self.manifest.stats.winner_raw_len = Some(report.total_raw_len);
        self.manifest.stats.ga_iterations = Some(log.total_iterations);
        self.manifest.stats.ga_restarts = Some(log.restarts.len());

        self.emit(Stage::Select, WINNER_FILE, |p| {
            let text = toml::to_string(&report).map_err(|e| artifact_err(p, e))?;
            Ok(std::fs::write(p, text)?)
        })?;
        self.emit(Stage::Select, GA_LOG_FILE, |p| log.write_csv(p))?;
        self.emit(Stage::Select, WINNER_TRANSFORMS_FILE, |p| {
            write_winner_transforms(ids, &transforms, p)
        })
    }

    fn identify(&mut self) -> Result<()> {
        let traj = self.trajectory()?;
        let basis = self
            .cfg
            .model
            .basis
            .iter()
            .map(|b| BasisFunction::parse(b))
            .collect::<Result<Vec<_>>>()?;
        let model = fit_model(&traj, &basis, self.cfg.model.ridge)?;
        self.emit(Stage::Identify, MODEL_FILE, |p| model.write_toml(p))
    }

    fn simulate(&mut self) -> Result<()> {
        let traj = self.trajectory()?;
        let model = IdentifiedModel::read_toml(&self.upstream(MODEL_FILE)?)?;
        let sim = simulate(&model, traj.point(0), traj.len() - 1)?;
        self.emit(Stage::Simulate, SIMULATED_FILE, |p| sim.states.write_csv(p))?;
        self.emit(Stage::Simulate, SERIES_COMPARE_FILE, |p| {
            let mut w = csv::Writer::from_path(p).map_err(|e| artifact_err(p, e))?;
            w.write_record(["index", "original", "simulated"])
                .map_err(|e| artifact_err(p, e))?;
            for (k, (o, s)) in traj.points().zip(sim.states.points()).enumerate() {
                w.write_record([k.to_string(), o[0].to_string(), s[0].to_string()])
                    .map_err(|e| artifact_err(p, e))?;
            }
            w.flush()?;
            Ok(())
        })
    }

    fn compare(&mut self) -> Result<()> {
        let traj = self.trajectory()?;
        let model = IdentifiedModel::read_toml(&self.upstream(MODEL_FILE)?)?;
        let sim = Trajectory::read_csv(&self.upstream(SIMULATED_FILE)?)?;
        let metrics: ComparisonMetrics = compare(&traj, &sim, Some(&model))?;
        self.emit(Stage::Compare, COMPARISON_FILE, |p| {
            let text = toml::to_string(&metrics).map_err(|e| artifact_err(p, e))?;
            Ok(std::fs::write(p, text)?)
        })
    }
}

/// Reads the long-format descriptor file back into one matrix per fragment.
pub fn read_descriptor_points(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
    let dim = r
        .headers()
        .map_err(|e| artifact_err(path, e))?
        .len()
        .saturating_sub(2);
    if dim == 0 {
        return Err(artifact_err(path, "no coordinate columns"));
    }
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        let nums: Vec<f64> = rec
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| artifact_err(path, e))?;
        if nums.len() != dim + 2 {
            return Err(artifact_err(path, "ragged descriptor row"));
        }
        let id = nums[0] as usize;
        if id == groups.len() {
            groups.push(Vec::new());
        } else if id + 1 != groups.len() {
            return Err(artifact_err(path, "descriptor rows out of order"));
        }
        groups[id].extend_from_slice(&nums[2..]);
    }
    let m_pts = groups.first().map(|g| g.len() / dim).unwrap_or(0);
    groups
        .into_iter()
        .map(|g| {
            if g.len() != m_pts * dim {
                return Err(artifact_err(path, "descriptors differ in point count"));
            }
            Ok(DMatrix::from_row_slice(m_pts, dim, &g))
        })
        .collect()
}

/// Reads per-fragment normalization matrices written by the normalize stage.
pub fn read_transforms(path: &Path) -> Result<Vec<HomMatrix>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(3)
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| artifact_err(path, e))?;
        let side = (vals.len() as f64).sqrt().round() as usize;
        if side * side != vals.len() {
            return Err(artifact_err(path, "transform is not square"));
        }
        out.push(HomMatrix::from_matrix(DMatrix::from_row_slice(
            side, side, &vals,
        ))?);
    }
    Ok(out)
}

/// `from,to,m00..`: the matrix carrying fragment `from` onto fragment `to`.
fn write_winner_transforms(ids: &[usize], transforms: &[HomMatrix], path: &Path) -> Result<()> {
    let get = |id: usize| {
        transforms.get(id).ok_or(Error::DimensionMismatch {
            expected: id + 1,
            actual: transforms.len(),
        })
    };
    let side = ids
        .first()
        .map(|&i| get(i).map(|m| m.dim() + 1))
        .transpose()?
        .unwrap_or(0);
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
    let mut header = vec!["from".to_string(), "to".to_string()];
    header.extend((0..side * side).map(|k| format!("m{}{}", k / side, k % side)));
    w.write_record(&header).map_err(|e| artifact_err(path, e))?;
    for &a in ids {
        for &b in ids {
            if a == b {
                continue;
            }
            let m = get(a)?.then(&get(b)?.inverse()?);
            let mut row = vec![a.to_string(), b.to_string()];
            row.extend(m.row_major().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(|e| artifact_err(path, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn resolve_input(cfg: &PipelineConfig, opts: &RunOptions) -> InputSpec {
    match (&opts.input, &cfg.input.path) {
        (Some(spec), _) => spec.clone(),
        (None, Some(p)) => InputSpec::File(p.clone()),
        (None, None) => InputSpec::Rossler,
    }
}

/// Runs the selected stages. Artifacts upstream of the first selected stage
/// are taken from the output directory and checked against its manifest.
/// On failure the manifest is still written, covering the outputs produced so far.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir)?;
    let manifest_path = opts.out_dir.join(MANIFEST_FILE);
    let previous = if opts.stages.first > Stage::Generate && manifest_path.is_file() {
        Some(RunManifest::read(&manifest_path)?)
    } else {
        None
    };
    let config = toml::Value::try_from(cfg).map_err(|e| artifact_err(&manifest_path, e))?;
    let mut manifest = RunManifest {
        seed: cfg.seed,
        stages_run: format!("{}..{}", opts.stages.first, opts.stages.last),
        config,
        inputs: Vec::new(),
        timings: Vec::new(),
        outputs: Vec::new(),
        stats: RunStats::default(),
    };
    if let Some(prev) = &previous {
        // keep the record of untouched upstream stages
        let upstream: BTreeSet<&str> = Stage::ALL
            .iter()
            .filter(|s| **s < opts.stages.first)
            .map(|s| s.name())
            .collect();
        manifest.outputs = prev
            .outputs
            .iter()
            .filter(|o| upstream.contains(o.stage.as_str()))
            .cloned()
            .collect();
        manifest.inputs = prev.inputs.clone();
        manifest.stats = prev.stats.clone();
    }
    if let Some(p) = &opts.config_path {
        let sha256 = sha256_file(p)?;
        manifest
            .inputs
            .retain(|d| d.path != p.display().to_string());
        manifest.inputs.push(FileDigest {
            path: p.display().to_string(),
            sha256,
        });
    }

    let mut run = Run {
        cfg,
        opts,
        input: resolve_input(cfg, opts),
        manifest,
        previous,
        written: BTreeSet::new(),
    };
    let mut failure = None;
    for stage in opts.stages.stages() {
        let started = Instant::now();
        let outcome = run.execute(stage);
        let status = if outcome.is_ok() { "ok" } else { "failed" };
        run.manifest.timings.push(StageTiming {
            stage: stage.name().into(),
            seconds: started.elapsed().as_secs_f64(),
            status: status.into(),
        });
        if let Err(e) = outcome {
            failure = Some(e.in_stage(stage.name()));
            break;
        }
    }
    run.manifest.write(&manifest_path)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(run.manifest),
    }
}
