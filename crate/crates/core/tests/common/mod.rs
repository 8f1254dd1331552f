//! Synthetic workspace shared by the integration tests.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use lithoroute::config::PipelineConfig;
use lithoroute::synth::{write_synthetic_facies, SynthSpec};

pub const COLUMNS: &str = include_str!("../../../../configs/facies_columns.toml");
pub const KB: &str = include_str!("../../../../kb/facies.kb");

/// Writes a four-well synthetic table (unless one exists), the column mapping and the knowledge
/// base into `dir` and returns a config using all of them. `extra` is
/// appended to the config text.
pub fn synthetic_config(dir: &Path, samples: usize, extra: &str) -> PipelineConfig {
    let table = dir.join("table.csv");
    if !table.exists() {
        let spec = SynthSpec {
            wells: 4,
            samples_per_well: samples,
            seed: 11,
        };
        write_synthetic_facies(fs::File::create(&table).unwrap(), &spec).unwrap();
    }
    fs::write(dir.join("columns.toml"), COLUMNS).unwrap();
    fs::write(dir.join("facies.kb"), KB).unwrap();
    let text = format!(
        "seed = 17\noutput_root = \"runs\"\nparallelism = 2\n\
         [data]\ntable = \"table.csv\"\ncolumns = \"columns.toml\"\nknowledge = \"facies.kb\"\n\
         [split]\nval = [\"SYN-C0\"]\ntest = [\"SYN-D0\"]\n\
         [base]\nhidden = 16\nepochs = 4\npatience = 4\n{extra}"
    );
    let path = dir.join("pipeline.toml");
    fs::write(&path, text).unwrap();
    PipelineConfig::load(&path).unwrap()
}

pub fn audits(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    lithoroute::pipeline::audit_files(dir)
        .unwrap()
        .into_iter()
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p.file_name().unwrap().into(), bytes)
        })
        .collect()
}
