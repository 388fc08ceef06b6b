use std::path::PathBuf;

use gridclear_core::harness::config::{parse_config, ConfigError, Mode, OUT_DIR_ENV};
use gridclear_core::harness::load_config;
use gridclear_core::CostModel;

fn shipped() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    files
}

#[test]
fn shipped_configs_parse() {
    let files = shipped();
    assert!(files.len() >= 5);
    for f in files {
        let spec = load_config(&f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        assert_eq!(spec.sweep.is_some(), spec.mode == Mode::Sweep);
    }
}

#[test]
fn unknown_cost_field_is_reported_with_its_path() {
    let text = r#"{"M": 2, "topology": "line", "demands": [1, 2],
        "gen_costs": [{"kind": "cubic", "lin": 1, "cub": 1}, {"kind": "cubic", "lin": 1, "cubb": 1}]}"#;
    match parse_config(text) {
        Err(ConfigError::Parse { path, message }) => {
            assert!(path.starts_with("gen_costs"), "{path}");
            assert!(message.contains("cub"), "{message}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn per_node_costs_keep_their_order() {
    let text = r#"{"M": 2, "topology": "full", "demands": [1, 2],
        "gen_costs": [{"kind": "cubic", "lin": 40, "cub": 1}, {"kind": "soft_capped_quadratic", "a": 1, "b": 50, "c": 0.5, "e_max": 12}]}"#;
    let spec = parse_config(text).unwrap();
    assert!(matches!(spec.scenario.gen_costs[0], CostModel::Cubic(_)));
    assert!(matches!(spec.scenario.gen_costs[1], CostModel::SoftCappedQuadratic(_)));
}

#[test]
fn env_overrides_output_directory() {
    let mut spec = parse_config(r#"{"M": 1, "topology": "full", "demands": [3], "out_dir": "a"}"#).unwrap();
    std::env::set_var(OUT_DIR_ENV, "/tmp/elsewhere");
    spec.apply_env();
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(spec.out_dir, PathBuf::from("/tmp/elsewhere"));
}
