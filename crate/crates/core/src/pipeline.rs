//! Staged mesh -> diffusion -> polycube -> hex workflow with a hashed run
//! manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{decode_frame, encode_frame_with, FrameMeta};
use crate::dataset::{context_vector, grid_transform, ConfigurationType, ContextVector, DatasetManifest, DeformParams};
use crate::diffusion::{sample_polycube, Denoiser, DiffusionSchedule, ScheduleSpec};
use crate::error::{Error, Result};
use crate::geom::{load_surface_mesh, mesh_genus, read_hexmesh_vtk, write_hexmesh_vtk, write_obj, Aabb, NormalizationTransform, TriMesh, Vec3};
use crate::hex::{
    generate_hex_lattice, harmonic_parameterize, improve_quality, map_to_physical, pillow_boundary, segment_surface, ImproveConfig,
    SegmentationLabels,
};
use crate::nn::{load_weights, save_weights, train, EpochStats, NetDenoiser, TrainConfig, UNet, UNetSpec, WEIGHTS_VERSION};
use crate::polycube::{
    snap_to_polycube, validate_polycube, volume_preserving_smooth, PolycubeComplex, ValidationReport, VertexFacetAssignment,
    DEFAULT_SMOOTH_ITERATIONS, DEFAULT_SNAP_TOL,
};

pub const DATASET_FILE: &str = "dataset.json";
pub const WEIGHTS_FILE: &str = "weights.dpcw";
pub const TRAINING_LOG_FILE: &str = "training.json";
pub const DIFFUSED_FILE: &str = "diffused.obj";
pub const FRAME_META_FILE: &str = "frame_meta.json";
pub const SMOOTHED_FILE: &str = "smoothed.obj";
pub const POLYCUBE_FILE: &str = "polycube.json";
pub const ASSIGNMENT_FILE: &str = "assignment.json";
pub const VALIDATION_FILE: &str = "validation.json";
pub const SEGMENTATION_FILE: &str = "segmentation.json";
pub const PILLOWED_FILE: &str = "hex_pillowed.vtk";
pub const HEX_FILE: &str = "hex.vtk";
pub const QUALITY_FILE: &str = "quality.json";
pub const HISTOGRAM_FILE: &str = "histogram.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

const MAX_DEPTH: u32 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenData,
    Train,
    Sample,
    Polycube,
    Hexmesh,
    Quality,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::Polycube => "polycube",
            Stage::Hexmesh => "hexmesh",
            Stage::Quality => "quality",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub types: Vec<ConfigurationType>,
    pub pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub deform: Option<DeformParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_width")]
    pub width: usize,
    /// Seed of the weight initialization.
    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub optimizer: TrainConfig,
}

fn default_width() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolycubeConfig {
    pub smoothing_iterations: usize,
    /// Plane clustering tolerance in frame units.
    pub snap_tol: f64,
}

impl Default for PolycubeConfig {
    fn default() -> Self {
        PolycubeConfig {
            smoothing_iterations: DEFAULT_SMOOTH_ITERATIONS,
            snap_tol: DEFAULT_SNAP_TOL,
        }
    }
}

/// One JSON document describing a run. Relative paths resolve against the
/// working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    /// Configuration id (`0..=8`) or raw mask (`0x...`, `0b...`).
    #[serde(default)]
    pub context: Option<String>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub training: Option<TrainingConfig>,
    /// Precomputed weights; ignored when the run trains its own.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default)]
    pub polycube: PolycubeConfig,
    #[serde(default = "default_depth")]
    pub depth: u32,
    #[serde(default)]
    pub quality: ImproveConfig,
    /// Sampling seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub deterministic: bool,
    /// Subset of stages to run, e.g. to resume from artifacts already in
    /// the output directory. Defaults to every configured stage.
    #[serde(default)]
    pub stages: Option<Vec<Stage>>,
}

fn default_depth() -> u32 {
    2
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: None,
            context: None,
            schedule: ScheduleSpec::default(),
            dataset: None,
            training: None,
            weights: None,
            polycube: PolycubeConfig::default(),
            depth: default_depth(),
            quality: ImproveConfig::default(),
            seed: 0,
            out_dir: default_out_dir(),
            deterministic: false,
            stages: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Stages a full run executes, in order.
    pub fn stages(&self) -> Vec<Stage> {
        if let Some(s) = &self.stages {
            let mut s = s.clone();
            s.sort_unstable();
            s.dedup();
            return s;
        }
        let mut out = Vec::new();
        if self.dataset.is_some() {
            out.push(Stage::GenData);
        }
        if self.training.is_some() {
            out.push(Stage::Train);
        }
        out.extend([Stage::Sample, Stage::Polycube, Stage::Hexmesh, Stage::Quality]);
        out
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn input_path(&self) -> Result<&Path> {
        self.input.as_deref().ok_or_else(|| Error::Config("no input mesh configured".into()))
    }

    fn weights_path(&self) -> Result<PathBuf> {
        if self.training.is_some() {
            return Ok(self.artifact(WEIGHTS_FILE));
        }
        self.weights
            .clone()
            .ok_or_else(|| Error::Config("sampling needs `weights` or a `training` section".into()))
    }

    pub fn context_vector(&self) -> Result<ContextVector> {
        let spec = self.context.as_deref().ok_or_else(|| Error::Config("no context configured".into()))?;
        ContextVector::parse(spec)
    }

    /// Declared inputs and outputs of one stage.
    pub fn stage_io(&self, stage: Stage) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
        let a = |n: &str| self.artifact(n);
        Ok(match stage {
            Stage::GenData => (vec![], vec![a(DATASET_FILE)]),
            Stage::Train => (vec![a(DATASET_FILE)], vec![a(WEIGHTS_FILE), a(TRAINING_LOG_FILE)]),
            Stage::Sample => (
                vec![self.input_path()?.to_path_buf(), self.weights_path()?],
                vec![a(DIFFUSED_FILE), a(FRAME_META_FILE)],
            ),
            Stage::Polycube => (
                vec![self.input_path()?.to_path_buf(), a(DIFFUSED_FILE), a(FRAME_META_FILE)],
                vec![a(SMOOTHED_FILE), a(POLYCUBE_FILE), a(ASSIGNMENT_FILE), a(VALIDATION_FILE)],
            ),
            Stage::Hexmesh => (
                vec![self.input_path()?.to_path_buf(), a(POLYCUBE_FILE), a(ASSIGNMENT_FILE)],
                vec![a(SEGMENTATION_FILE), a(PILLOWED_FILE)],
            ),
            Stage::Quality => (
                vec![self.input_path()?.to_path_buf(), a(PILLOWED_FILE)],
                vec![a(HEX_FILE), a(QUALITY_FILE), a(HISTOGRAM_FILE)],
            ),
        })
    }

    /// Static checks of the fields a stage needs.
    fn check(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::GenData => {
                let d = self.dataset.as_ref().ok_or_else(|| Error::Config("no `dataset` section".into()))?;
                if d.types.is_empty() || d.pairs == 0 {
                    return Err(Error::Config("dataset needs at least one type and one pair".into()));
                }
            }
            Stage::Train => {
                let t = self.training.as_ref().ok_or_else(|| Error::Config("no `training` section".into()))?;
                if t.width == 0 {
                    return Err(Error::Config("network width must be positive".into()));
                }
                self.schedule.build::<f64>()?;
            }
            Stage::Sample => {
                self.input_path()?;
                self.weights_path()?;
                self.context_vector()?;
                self.schedule.build::<f64>()?;
            }
            Stage::Polycube => {
                self.input_path()?;
                if !(self.polycube.snap_tol > 0.0) {
                    return Err(Error::Config("snap_tol must be positive".into()));
                }
            }
            Stage::Hexmesh => {
                self.input_path()?;
                if self.depth > MAX_DEPTH {
                    return Err(Error::Config(format!("depth {} exceeds {MAX_DEPTH}", self.depth)));
                }
            }
            Stage::Quality => {
                self.input_path()?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub inputs: Vec<ArtifactHash>,
    pub outputs: Vec<ArtifactHash>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub crate_version: String,
    pub weights_format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            weights_format: WEIGHTS_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub versions: Versions,
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    /// Output hashes of every stage, in run order.
    pub fn output_hashes(&self) -> Vec<(Stage, String)> {
        self.stages
            .iter()
            .flat_map(|r| r.outputs.iter().map(move |o| (r.stage, o.sha256.clone())))
            .collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    Ok(s)
}

fn hash_all(paths: &[PathBuf]) -> Result<Vec<ArtifactHash>> {
    paths
        .iter()
        .map(|p| {
            Ok(ArtifactHash {
                path: p.clone(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Grid region the network expects for `context`: the region of the
/// matching configuration type, or the first unit for unknown masks.
pub fn context_region(context: ContextVector) -> Aabb {
    ConfigurationType::all()
        .find(|&t| context_vector(t) == context)
        .unwrap_or(ConfigurationType::all().next().expect("at least one type"))
        .region()
}

/// Encodes the mesh vertices into the context's grid region, runs the
/// reverse chain and decodes the result into model units.
pub fn diffuse_surface(
    denoiser: &mut dyn Denoiser<f32>,
    mesh: &TriMesh,
    context: ContextVector,
    schedule: &DiffusionSchedule<f32>,
    seed: u64,
) -> Result<(Vec<Vec3>, FrameMeta)> {
    let transform = NormalizationTransform::fit_into_region(&mesh.bbox(), &context_region(context), &grid_transform())?;
    let (frame, meta) = encode_frame_with::<f32>(&mesh.vertices, &transform)?;
    let out = sample_polycube(denoiser, &frame, &context, schedule, seed, meta.live)?;
    Ok((decode_frame(&out, &meta)?, meta))
}

#[derive(Clone, Debug)]
pub struct Regularized {
    pub smoothed: Vec<Vec3>,
    pub complex: PolycubeComplex,
    pub assignment: VertexFacetAssignment,
    pub report: ValidationReport,
}

/// Smooths the diffused vertices, snaps them to a polycube and validates it
/// against the genus of `mesh`. `frame_scale` converts the frame-unit
/// tolerance into model units.
pub fn regularize(mesh: &TriMesh, diffused: &[Vec3], frame_scale: f64, cfg: &PolycubeConfig) -> Result<Regularized> {
    let smoothed = volume_preserving_smooth(diffused, mesh, cfg.smoothing_iterations)?;
    let (complex, assignment) = snap_to_polycube(&smoothed, mesh, cfg.snap_tol * frame_scale)?;
    let report = validate_polycube(&complex, Some(mesh_genus(mesh)?));
    Ok(Regularized {
        smoothed,
        complex,
        assignment,
        report,
    })
}

fn load_denoiser(path: &Path) -> Result<NetDenoiser<f32>> {
    let (net, _) = load_weights::<f32>(path)?;
    Ok(NetDenoiser::new(net))
}

fn gen_data(cfg: &PipelineConfig) -> Result<()> {
    let d = cfg.dataset.as_ref().expect("checked");
    let mut manifest = DatasetManifest::generate(&d.types, d.pairs, d.seed);
    manifest.deform = d.deform;
    manifest.save(cfg.artifact(DATASET_FILE))
}

fn train_stage(cfg: &PipelineConfig) -> Result<()> {
    let t = cfg.training.as_ref().expect("checked");
    let manifest = DatasetManifest::load(cfg.artifact(DATASET_FILE))?;
    let items = manifest.build::<f32>(&cfg.schedule.build::<f64>()?)?;
    let net = UNet::<f32>::new(UNetSpec::with_width(t.width), t.init_seed)?;
    let mut model = NetDenoiser::new(net);
    let history: Vec<EpochStats> = train(&mut model, &items, &cfg.schedule.build::<f32>()?, &t.optimizer, |e| {
        info!("epoch {} lr {:.3e} loss {:.5}", e.epoch, e.learning_rate, e.mean_loss)
    })?;
    save_weights(&model.net, None, cfg.artifact(WEIGHTS_FILE))?;
    write_json(&history, &cfg.artifact(TRAINING_LOG_FILE))
}

fn sample_stage(cfg: &PipelineConfig) -> Result<()> {
    let mesh = load_surface_mesh(cfg.input_path()?)?;
    let mut model = load_denoiser(&cfg.weights_path()?)?;
    let (points, meta) = diffuse_surface(&mut model, &mesh, cfg.context_vector()?, &cfg.schedule.build::<f32>()?, cfg.seed)?;
    write_obj(&mesh.with_vertices(points), cfg.artifact(DIFFUSED_FILE))?;
    meta.save_json(cfg.artifact(FRAME_META_FILE))
}

fn polycube_stage(cfg: &PipelineConfig) -> Result<()> {
    let mesh = load_surface_mesh(cfg.input_path()?)?;
    let diffused = load_surface_mesh(cfg.artifact(DIFFUSED_FILE))?;
    if diffused.triangles != mesh.triangles {
        return Err(Error::MetaMismatch("diffused surface does not share the input connectivity".into()));
    }
    let meta = FrameMeta::load_json(cfg.artifact(FRAME_META_FILE))?;
    let reg = regularize(&mesh, &diffused.vertices, meta.transform.scale(), &cfg.polycube)?;
    write_obj(&mesh.with_vertices(reg.smoothed.clone()), cfg.artifact(SMOOTHED_FILE))?;
    reg.complex.save_json(cfg.artifact(POLYCUBE_FILE))?;
    write_json(&reg.assignment, &cfg.artifact(ASSIGNMENT_FILE))?;
    write_json(&reg.report, &cfg.artifact(VALIDATION_FILE))?;
    if !reg.report.is_valid() {
        let v: Vec<String> = reg.report.violations.iter().map(|v| v.to_string()).collect();
        return Err(Error::Snap(format!("invalid polycube: {}", v.join("; "))));
    }
    Ok(())
}

fn hexmesh_stage(cfg: &PipelineConfig) -> Result<()> {
    let mesh = load_surface_mesh(cfg.input_path()?)?;
    let complex = PolycubeComplex::load_json(cfg.artifact(POLYCUBE_FILE))?;
    let assignment: VertexFacetAssignment = read_json(&cfg.artifact(ASSIGNMENT_FILE))?;
    let labels: SegmentationLabels = segment_surface(&mesh, &assignment, &complex)?;
    write_json(&labels, &cfg.artifact(SEGMENTATION_FILE))?;
    let params = (0..labels.facets.len())
        .into_par_iter()
        .map(|f| harmonic_parameterize(&mesh, &labels, f))
        .collect::<Result<Vec<_>>>()?;
    let lattice = generate_hex_lattice(&complex, cfg.depth);
    let mapped = map_to_physical(&lattice, &params, &mesh, &complex)?;
    let pillowed = pillow_boundary(&mapped)?;
    write_hexmesh_vtk(&pillowed, None, cfg.artifact(PILLOWED_FILE))
}

fn quality_stage(cfg: &PipelineConfig) -> Result<()> {
    let surface = load_surface_mesh(cfg.input_path()?)?;
    let hex = read_hexmesh_vtk(cfg.artifact(PILLOWED_FILE))?;
    let out = improve_quality(&hex, &surface, &cfg.quality)?;
    write_hexmesh_vtk(&out.mesh, Some(&out.report.per_hex), cfg.artifact(HEX_FILE))?;
    #[derive(Serialize)]
    struct QualityArtifact<'a> {
        #[serde(flatten)]
        report: &'a crate::hex::QualityReport,
        history: &'a [f64],
        reached_target: bool,
    }
    write_json(
        &QualityArtifact {
            report: &out.report,
            history: &out.history,
            reached_target: out.reached_target,
        },
        &cfg.artifact(QUALITY_FILE),
    )?;
    let path = cfg.artifact(HISTOGRAM_FILE);
    std::fs::write(&path, out.report.render_histogram()).map_err(|e| Error::io(&path, e))
}

fn missing(paths: &[PathBuf]) -> Result<()> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Error::MissingInput(p.clone())),
        None => Ok(()),
    }
}

/// Runs one stage after checking its configuration and declared inputs.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageRecord> {
    cfg.check(stage)?;
    let (inputs, outputs) = cfg.stage_io(stage)?;
    missing(&inputs)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let wrap = |e: Error| Error::Stage {
        stage: stage.name().to_string(),
        artifacts: inputs.iter().chain(&outputs).cloned().collect(),
        source: Box::new(e),
    };
    let input_hashes = hash_all(&inputs).map_err(wrap)?;
    let start = Instant::now();
    info!("stage {stage}");
    let body = match stage {
        Stage::GenData => gen_data(cfg),
        Stage::Train => train_stage(cfg),
        Stage::Sample => sample_stage(cfg),
        Stage::Polycube => polycube_stage(cfg),
        Stage::Hexmesh => hexmesh_stage(cfg),
        Stage::Quality => quality_stage(cfg),
    };
    body.map_err(wrap)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(StageRecord {
        stage,
        inputs: input_hashes,
        outputs: hash_all(&outputs).map_err(wrap)?,
        seconds,
    })
}

fn run_all(cfg: &PipelineConfig) -> Result<RunManifest> {
    let stages = cfg.stages();
    for &s in &stages {
        cfg.check(s)?;
    }
    // external inputs are everything not produced by an earlier stage
    let mut produced: Vec<PathBuf> = Vec::new();
    for &s in &stages {
        let (inputs, outputs) = cfg.stage_io(s)?;
        let external: Vec<PathBuf> = inputs.into_iter().filter(|p| !produced.contains(p)).collect();
        missing(&external)?;
        produced.extend(outputs);
    }
    let mut manifest = RunManifest {
        config: cfg.clone(),
        stages: Vec::with_capacity(stages.len()),
        versions: Versions::default(),
    };
    for s in stages {
        manifest.stages.push(run_stage(cfg, s)?);
    }
    manifest.save(cfg.artifact(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Runs every configured stage and writes `manifest.json` into the output
/// directory. Deterministic mode runs on a single worker thread.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    with_threads(cfg.deterministic, || run_all(cfg))
}

/// Runs `f` on a one-thread pool when `deterministic` is set.
pub fn with_threads<T: Send>(deterministic: bool, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if !deterministic {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}
