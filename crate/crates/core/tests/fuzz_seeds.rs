//! Replays the checked-in fuzz corpus through the same checks as the fuzz
//! targets, so seeds stay meaningful as formats evolve.

use std::path::PathBuf;

use eikonal::bench::BenchConfig;
use eikonal::dataset::Dataset;
use eikonal::field::DistanceField;
use eikonal::grid::SourceSet;
use eikonal::mesh::{load_mesh, MeshFormat};
use eikonal::nn::NetworkWeights;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn source_seeds() {
    let mut accepted = 0;
    for (name, data) in seeds("parse_sources") {
        if let Ok(set) = SourceSet::parse(text(&data)) {
            assert_eq!(SourceSet::parse(&set.to_text()).unwrap(), set, "{name}");
            accepted += 1;
        }
    }
    assert_eq!(accepted, 2);
}

#[test]
fn field_seeds() {
    for (name, data) in seeds("parse_field") {
        let t = text(&data);
        if name.ends_with(".csv") {
            let (domain, field) = DistanceField::parse_grid_csv(t).unwrap();
            assert_eq!(field.to_grid_csv(&domain).unwrap(), t, "{name}");
        } else {
            let field = DistanceField::parse_text(t).unwrap();
            assert_eq!(DistanceField::parse_text(&field.to_text()).unwrap(), field);
        }
    }
}

#[test]
fn mesh_seeds() {
    for (name, data) in seeds("load_mesh") {
        let format = if name.ends_with(".obj") { MeshFormat::Obj } else { MeshFormat::Off };
        let mesh = load_mesh(&data, format).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(mesh.num_vertices() >= 3);
    }
}

#[test]
fn weight_seeds() {
    for (name, data) in seeds("decode_weights") {
        match NetworkWeights::from_bytes(&data) {
            Ok(w) => assert_eq!(w.to_bytes(), data, "{name}"),
            Err(_) => assert!(name.contains("truncated"), "{name}"),
        }
    }
}

#[test]
fn dataset_seeds() {
    for (name, data) in seeds("parse_dataset") {
        let ds = Dataset::parse_jsonl(text(&data)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ds.to_jsonl(), text(&data), "{name}");
    }
}

#[test]
fn bench_config_seeds() {
    for (name, data) in seeds("parse_bench_config") {
        let cfg = BenchConfig::parse(text(&data)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(BenchConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
