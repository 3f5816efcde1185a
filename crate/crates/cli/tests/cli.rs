use std::path::Path;
use std::process::{Command, Output};

use ddpm_polycube::codec::encode_frame_with;
use ddpm_polycube::dataset::{grid_transform, ContextVector};
use ddpm_polycube::geom::{write_obj, NormalizationTransform, TriMesh, Vec3};
use ddpm_polycube::pipeline::{context_region, DIFFUSED_FILE, FRAME_META_FILE, HEX_FILE, MANIFEST_FILE};
use ddpm_polycube::polycube::PolycubeComplex;

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddpm-polycube"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn bulged_cube(subdiv: usize) -> (TriMesh, TriMesh) {
    let cube = PolycubeComplex::unit_cube().boundary_mesh(subdiv);
    let c = Vec3::new(0.5, 0.5, 0.5);
    let verts = cube
        .vertices
        .iter()
        .map(|p| {
            let d = p - c;
            c + d * (1.0 + 0.05 * (1.0 - 4.0 * d.x * d.x) * (1.0 - 4.0 * d.y * d.y) * (1.0 - 4.0 * d.z * d.z))
        })
        .collect();
    (TriMesh::new(verts, cube.triangles.clone()).unwrap(), cube)
}

/// Input mesh plus the diffused surface a trained model would give it.
fn prepare(dir: &Path) {
    let (input, cube) = bulged_cube(5);
    write_obj(&input, dir.join("input.obj")).unwrap();
    let out = dir.join("out");
    std::fs::create_dir_all(&out).unwrap();
    let region = context_region(ContextVector::for_type(0).unwrap());
    let t = NormalizationTransform::fit_into_region(&input.bbox(), &region, &grid_transform()).unwrap();
    let (_, meta) = encode_frame_with::<f64>(&cube.vertices, &t).unwrap();
    write_obj(&cube, out.join(DIFFUSED_FILE)).unwrap();
    meta.save_json(out.join(FRAME_META_FILE)).unwrap();
    std::fs::write(
        dir.join("config.json"),
        r#"{"input": "input.obj", "context": "0", "depth": 1, "stages": ["polycube", "hexmesh", "quality"]}"#,
    )
    .unwrap();
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["--help"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen-data", "train", "sample", "polycube", "hexmesh", "quality", "pipeline"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn unknown_config_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"inptu": "a.obj"}"#).unwrap();
    let out = cli(&["pipeline", "--config", "c.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["sample", "--input", "nope.obj", "--weights", "w.dpcw", "--context", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing input"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn gen_data_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"dataset": {"types": [0, 8], "pairs": 6, "seed": 1}}"#).unwrap();
    let out = cli(&["gen-data", "--config", "c.json", "--out", "data"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("data/dataset.json")).unwrap();
    assert_eq!(text.matches("deform_seed").count(), 6);
}

#[test]
fn broken_artifact_exits_with_stage_failure() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    std::fs::write(dir.path().join("out").join(FRAME_META_FILE), "{}").unwrap();
    let out = cli(&["polycube", "--config", "config.json"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("polycube") && err.contains(FRAME_META_FILE), "{err}");
}

#[test]
fn deterministic_pipeline_reproduces_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut meshes = Vec::new();
    for dir in [a.path(), b.path()] {
        prepare(dir);
        let out = cli(&["pipeline", "--config", "config.json", "--deterministic", "--seed", "4"], dir);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("scaled Jacobian histogram"), "{text}");
        assert!(dir.join("out").join(MANIFEST_FILE).exists());
        meshes.push(std::fs::read(dir.join("out").join(HEX_FILE)).unwrap());
    }
    assert_eq!(meshes[0], meshes[1]);
}

#[test]
fn hexmesh_depth_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    assert!(cli(&["polycube", "--config", "config.json"], dir.path()).status.success());
    let out = cli(&["hexmesh", "--config", "config.json", "--depth", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let vtk = std::fs::read_to_string(dir.path().join("out/hex_pillowed.vtk")).unwrap();
    // 64 lattice hexes plus one pillow hex per boundary quad
    assert!(vtk.contains("CELLS 160 "), "{}", &vtk[..200]);
}
