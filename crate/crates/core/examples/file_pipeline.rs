//! End to end through files: write a synthetic corpus in the ingestion
//! formats, run every metric from a run configuration, and save the JSON
//! report and text table. The `capbias` binary does the same thing with
//! `capbias synth` followed by `capbias report`.
//!
//!     cargo run --release --example file_pipeline [output_dir]

use std::path::PathBuf;

use capbias::cli::{compute_report, Metric, RunConfig};
use capbias::lic::ProtocolConfig;
use capbias::report::text_table;
use capbias::synth::{self, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("capbias_file_pipeline"));
    let mut spec = SynthSpec::default().with_images(4000).with_thetas(0.6, 0.9);
    spec.mention_error_generated = 0.05;
    let oracle = synth::write_pair(&spec, &dir)?;

    std::fs::write(dir.join("task_words.txt"), oracle.task_words.join("\n") + "\n")?;
    let config = RunConfig {
        human_captions: Some(dir.join(synth::HUMAN_FILE)),
        generated_captions: Some(dir.join(synth::GENERATED_FILE)),
        annotations: Some(dir.join(synth::ANNOTATIONS_FILE)),
        objects: Some(dir.join(synth::OBJECTS_FILE)),
        object_lexicon: Some(dir.join(synth::LEXICON_FILE)),
        task_words: Some(dir.join("task_words.txt")),
        metrics: vec![
            Metric::Ba,
            Metric::DbaG,
            Metric::DbaO,
            Metric::Ratio,
            Metric::Error,
            Metric::Leakage,
            Metric::Lic,
        ],
        protocol: ProtocolConfig {
            n_seeds: 3,
            ..ProtocolConfig::default()
        },
        label: "synthetic".to_string(),
        ..RunConfig::default()
    };
    let report = compute_report(&config)?;
    report.write_json(&dir.join("report.json"))?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;

    print!("{}", text_table(std::slice::from_ref(&report)));
    println!("\nfiles in {}", dir.display());
    Ok(())
}
