//! Synthetic well logs shaped like the public nine-facies benchmark table:
//! same column names, class codes 1..=9, half-foot sampling. Labels follow a
//! sticky Markov chain over neighbouring facies; each log is a class mean
//! plus smooth AR(1) noise. Useful for demos and tests, not for benchmarking.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

pub const FACIES_NAMES: [&str; 9] = ["SS", "CSiS", "FSiS", "SiSh", "MS", "WS", "D", "PS", "BS"];

pub const LOG_COLUMNS: [&str; 5] = ["GR", "ILD_log10", "DeltaPHI", "PHIND", "PE"];

/// Per-class means of the five continuous logs.
const MEANS: [[f64; 5]; 9] = [
    [77.0, 0.60, 9.0, 19.0, 3.0],
    [72.0, 0.53, 6.5, 16.0, 3.1],
    [66.0, 0.60, 4.5, 13.5, 3.2],
    [85.0, 0.68, 3.0, 14.0, 3.4],
    [70.0, 0.72, 2.0, 12.5, 3.7],
    [60.0, 0.82, 1.5, 11.5, 4.0],
    [45.0, 0.92, 1.0, 9.5, 5.0],
    [50.0, 0.97, 1.5, 10.5, 4.3],
    [40.0, 1.10, 0.5, 8.0, 4.8],
];

const NOISE: [f64; 5] = [11.0, 0.13, 3.0, 4.0, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub wells: usize,
    pub samples_per_well: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            wells: 6,
            samples_per_well: 400,
            seed: 7,
        }
    }
}

pub fn well_name(i: usize) -> String {
    let letter = (b'A' + (i % 26) as u8) as char;
    format!("SYN-{letter}{}", i / 26)
}

fn next_class(rng: &mut ChaCha8Rng, current: usize) -> usize {
    if rng.gen_bool(0.88) {
        return current;
    }
    let step: i64 = match rng.gen_range(0..10) {
        0..=3 => 1,
        4..=7 => -1,
        8 => 2,
        _ => -2,
    };
    (current as i64 + step).clamp(0, 8) as usize
}

/// Writes the table with header
/// `Facies,Formation,Well Name,Depth,GR,ILD_log10,DeltaPHI,PHIND,PE,NM_M,RELPOS`.
/// The last well has a stretch of blank `PE` cells.
pub fn write_synthetic_facies<W: Write>(out: W, spec: &SynthSpec) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "Facies", "Formation", "Well Name", "Depth", "GR", "ILD_log10", "DeltaPHI", "PHIND", "PE", "NM_M",
        "RELPOS",
    ])?;
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    for well in 0..spec.wells {
        let name = well_name(well);
        let top = 2800.0 + 37.5 * well as f64;
        let mut class = rng.gen_range(0..9);
        let mut drift = [0.0f64; 5];
        let gap = (well + 1 == spec.wells).then(|| spec.samples_per_well / 3..spec.samples_per_well / 3 + 12);
        for t in 0..spec.samples_per_well {
            class = next_class(&mut rng, class);
            let mut fields = vec![
                (class + 1).to_string(),
                format!("U{}", 1 + t * 4 / spec.samples_per_well.max(1)),
                name.clone(),
                format!("{:.1}", top + 0.5 * t as f64),
            ];
            for c in 0..5 {
                drift[c] = 0.7 * drift[c] + 0.71 * unit.sample(&mut rng);
                let v = MEANS[class][c] + NOISE[c] * drift[c];
                let blank = c == 4 && gap.as_ref().is_some_and(|g| g.contains(&t));
                fields.push(if blank { String::new() } else { format!("{v:.4}") });
            }
            fields.push(if class < 3 { "1" } else { "2" }.to_string());
            fields.push(format!("{:.3}", 1.0 - t as f64 / spec.samples_per_well as f64));
            w.write_record(&fields)?;
        }
    }
    w.flush().map_err(|e| crate::error::Error::io("<synthetic table>", e))?;
    Ok(())
}
