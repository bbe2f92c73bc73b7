// Runs every pipeline stage over the bundled fixtures with stub providers:
// ingest, index, build-kg, generate and evaluate. Outputs go to a temporary
// directory unless NOTEGEN_OUT names one to keep.
//
//     NOTEGEN_OUT=demo-out cargo run --example end_to_end

use std::path::{Path, PathBuf};

use notegen::config::PipelineConfig;
use notegen::pipeline;

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut cfg = PipelineConfig::load(&fixtures.join("notegen.toml")).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let out = std::env::var_os("NOTEGEN_OUT").map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    cfg.paths.work_dir = out.clone();
    cfg.run.n_calls = 5;

    println!("ingest:   {}", pipeline::cmd_ingest(&cfg, false).unwrap());
    println!("index:    {}", pipeline::cmd_index(&cfg, false).unwrap());
    println!("build-kg: {}", pipeline::cmd_build_kg(&cfg, false).unwrap());
    println!("generate: {}", pipeline::cmd_generate(&cfg, false).unwrap());
    let eval = pipeline::cmd_evaluate(&cfg, false).unwrap();
    println!("evaluate: {eval}");

    let summary = std::fs::read_to_string(eval.report_dir.join("summary.csv")).unwrap();
    print!("{summary}");
}
