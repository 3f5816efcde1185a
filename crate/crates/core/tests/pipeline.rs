mod shapes;

use std::path::{Path, PathBuf};

use ddpm_polycube::codec::encode_frame_with;
use ddpm_polycube::dataset::{grid_transform, ConfigurationType, ContextVector};
use ddpm_polycube::diffusion::ScheduleSpec;
use ddpm_polycube::geom::{read_hexmesh_vtk, write_obj, NormalizationTransform, TriMesh};
use ddpm_polycube::nn::TrainConfig;
use ddpm_polycube::pipeline::*;
use ddpm_polycube::polycube::PolycubeComplex;
use ddpm_polycube::Error;

const SUBDIV: usize = 6;

fn tiny_training_config(dir: &Path, input: PathBuf) -> PipelineConfig {
    PipelineConfig {
        input: Some(input),
        context: Some("0".into()),
        schedule: ScheduleSpec {
            steps: 10,
            ..ScheduleSpec::default()
        },
        dataset: Some(DatasetConfig {
            types: vec![ConfigurationType::new(0).unwrap()],
            pairs: 4,
            seed: 5,
            deform: None,
        }),
        training: Some(TrainingConfig {
            width: 4,
            init_seed: 2,
            optimizer: TrainConfig {
                batch_size: 2,
                epochs: 2,
                learning_rate: 1e-3,
                seed: 9,
            },
        }),
        seed: 11,
        out_dir: dir.to_path_buf(),
        deterministic: true,
        stages: Some(vec![Stage::GenData, Stage::Train, Stage::Sample]),
        ..PipelineConfig::default()
    }
}

fn write_input(dir: &Path) -> PathBuf {
    let path = dir.join("input.obj");
    write_obj(&shapes::deformed_cube(SUBDIV), &path).unwrap();
    path
}

/// Places the surface a well-trained model would return for the deformed
/// cube (the undeformed cube, same connectivity) where the sample stage
/// writes its outputs.
fn place_ideal_sample(cfg: &PipelineConfig) {
    let input = shapes::deformed_cube(SUBDIV);
    let cube = PolycubeComplex::unit_cube().boundary_mesh(SUBDIV);
    let ctx = ContextVector::parse(cfg.context.as_deref().unwrap()).unwrap();
    let t = NormalizationTransform::fit_into_region(&input.bbox(), &context_region(ctx), &grid_transform()).unwrap();
    let (_, meta) = encode_frame_with::<f64>(&cube.vertices, &t).unwrap();
    std::fs::create_dir_all(&cfg.out_dir).unwrap();
    write_obj(&TriMesh::new(cube.vertices, input.triangles).unwrap(), cfg.out_dir.join(DIFFUSED_FILE)).unwrap();
    meta.save_json(cfg.out_dir.join(FRAME_META_FILE)).unwrap();
}

fn downstream_config(dir: &Path, input: PathBuf) -> PipelineConfig {
    PipelineConfig {
        input: Some(input),
        context: Some("0".into()),
        depth: 1,
        out_dir: dir.to_path_buf(),
        deterministic: true,
        stages: Some(vec![Stage::Polycube, Stage::Hexmesh, Stage::Quality]),
        ..PipelineConfig::default()
    }
}

#[test]
fn config_rejects_unknown_keys() {
    let err = serde_json::from_str::<PipelineConfig>(r#"{"input": "a.obj", "depht": 3}"#).unwrap_err();
    assert!(err.to_string().contains("depht"), "{err}");
    let cfg: PipelineConfig = serde_json::from_str(r#"{"input": "a.obj", "context": "0x10"}"#).unwrap();
    assert_eq!(cfg.depth, 2);
    assert_eq!(cfg.context_vector().unwrap(), ContextVector::for_type(1).unwrap());
    assert_eq!(cfg.stages(), vec![Stage::Sample, Stage::Polycube, Stage::Hexmesh, Stage::Quality]);
}

#[test]
fn config_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_training_config(dir.path(), dir.path().join("x.obj"));
    let path = dir.path().join("cfg.json");
    cfg.save(&path).unwrap();
    assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);
}

#[test]
fn missing_input_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = PipelineConfig {
        input: Some(dir.path().join("nope.obj")),
        context: Some("0".into()),
        weights: Some(dir.path().join("w.dpcw")),
        out_dir: out.clone(),
        ..PipelineConfig::default()
    };
    match run_pipeline(&cfg) {
        Err(Error::MissingInput(p)) => assert!(p.ends_with("nope.obj")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(!out.exists());
}

#[test]
fn missing_weights_fail_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let cfg = PipelineConfig {
        input: Some(input),
        context: Some("0".into()),
        weights: Some(dir.path().join("w.dpcw")),
        out_dir: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    assert!(matches!(run_pipeline(&cfg), Err(Error::MissingInput(p)) if p.ends_with("w.dpcw")));
}

#[test]
fn sampling_without_weights_is_a_config_error() {
    let cfg = PipelineConfig {
        input: Some("a.obj".into()),
        context: Some("0".into()),
        ..PipelineConfig::default()
    };
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
}

#[test]
fn training_run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let input = write_input(a.path());
    let ma = run_pipeline(&tiny_training_config(&a.path().join("out"), input.clone())).unwrap();
    let mb = run_pipeline(&tiny_training_config(&b.path().join("out"), input)).unwrap();
    let stages: Vec<Stage> = ma.stages.iter().map(|r| r.stage).collect();
    assert_eq!(stages, vec![Stage::GenData, Stage::Train, Stage::Sample]);
    assert_eq!(ma.output_hashes(), mb.output_hashes());
    let train = ma.stage(Stage::Train).unwrap();
    assert_eq!(train.inputs[0].sha256, ma.stage(Stage::GenData).unwrap().outputs[0].sha256);
    let saved = RunManifest::load(a.path().join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(saved.output_hashes(), ma.output_hashes());
    assert_eq!(saved.config.seed, 11);
}

#[test]
fn sample_stage_consumes_precomputed_weights() {
    let a = tempfile::tempdir().unwrap();
    let input = write_input(a.path());
    let train_dir = a.path().join("train");
    run_pipeline(&tiny_training_config(&train_dir, input.clone())).unwrap();
    let cfg = PipelineConfig {
        input: Some(input),
        context: Some("0".into()),
        schedule: ScheduleSpec {
            steps: 10,
            ..ScheduleSpec::default()
        },
        weights: Some(train_dir.join(WEIGHTS_FILE)),
        out_dir: a.path().join("sample"),
        stages: Some(vec![Stage::Sample]),
        ..PipelineConfig::default()
    };
    let record = run_stage(&cfg, Stage::Sample).unwrap();
    assert_eq!(record.inputs.len(), 2);
    assert_eq!(record.inputs[1].sha256, sha256_file(&train_dir.join(WEIGHTS_FILE)).unwrap());
    let names: Vec<String> = record
        .outputs
        .iter()
        .map(|o| o.path.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec![DIFFUSED_FILE, FRAME_META_FILE]);
}

#[test]
fn downstream_stages_record_hashes_and_reproduce() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let input = write_input(a.path());
    let ca = downstream_config(&a.path().join("out"), input.clone());
    let cb = downstream_config(&b.path().join("out"), input);
    place_ideal_sample(&ca);
    place_ideal_sample(&cb);
    let ma = run_pipeline(&ca).unwrap();
    let mb = run_pipeline(&cb).unwrap();
    let stages: Vec<Stage> = ma.stages.iter().map(|r| r.stage).collect();
    assert_eq!(stages, vec![Stage::Polycube, Stage::Hexmesh, Stage::Quality]);
    for r in &ma.stages {
        assert!(!r.outputs.is_empty());
        assert!(r.outputs.iter().all(|o| o.sha256.len() == 64));
    }
    assert_eq!(ma.output_hashes(), mb.output_hashes());
    let pc = PolycubeComplex::load_json(a.path().join("out").join(POLYCUBE_FILE)).unwrap();
    assert_eq!(pc.cuboids.len(), 1);
    let hex = read_hexmesh_vtk(a.path().join("out").join(HEX_FILE)).unwrap();
    let pillowed = read_hexmesh_vtk(a.path().join("out").join(PILLOWED_FILE)).unwrap();
    assert_eq!(hex.hexes, pillowed.hexes);
    assert_eq!(hex.hexes.len(), 8 + 24);
}

#[test]
fn stage_failure_names_stage_and_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let input = write_input(a.path());
    let mut cfg = downstream_config(&a.path().join("out"), input);
    place_ideal_sample(&cfg);
    cfg.stages = Some(vec![Stage::Polycube]);
    run_pipeline(&cfg).unwrap();
    std::fs::write(a.path().join("out").join(ASSIGNMENT_FILE), "{ not json").unwrap();
    cfg.stages = Some(vec![Stage::Hexmesh]);
    match run_pipeline(&cfg) {
        Err(Error::Stage { stage, artifacts, .. }) => {
            assert_eq!(stage, "hexmesh");
            assert!(artifacts.iter().any(|p| p.ends_with(ASSIGNMENT_FILE)));
            assert!(artifacts.iter().any(|p| p.ends_with(PILLOWED_FILE)));
        }
        other => panic!("unexpected {other:?}"),
    }
}
