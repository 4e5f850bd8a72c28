use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgdlab::diagnostics::{
    autocorrelation, detect_limit_cycle, increment_fft, write_autocorr_csv, write_spectrum_report_csv, CycleReport,
};
use sgdlab::formats::{read_trajectory_bin, read_trajectory_csv};
use sgdlab::sde::{Trajectory, TrajectoryMeta};

use crate::config::CommandConfig;
use crate::error::CliError;
use crate::output::OutputDir;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Trajectory file; `.csv` is read as CSV, anything else as binary.
    pub input: String,
    /// Snapshots skipped at the start.
    pub burnin: usize,
    pub max_lag: usize,
    /// Center for the winding measurement of planar trajectories.
    pub center: [f64; 2],
    /// Upper edge, in cycles per snapshot, of the low-frequency band.
    pub low_band: f64,
}

impl CommandConfig for DiagnoseConfig {
    fn defaults() -> Value {
        json!({ "burnin": 0, "max_lag": 200, "center": [0.0, 0.0], "low_band": 0.02 })
    }

    fn seed_paths(_: &Value) -> Vec<&'static str> {
        Vec::new()
    }

    fn seed(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Serialize)]
struct SpectrumStats {
    median: f64,
    max_over_median: f64,
    peak_frequency: f64,
    low_band_mean: f64,
    low_band_over_median: f64,
}

#[derive(Debug, Serialize)]
struct AutocorrStats {
    band: f64,
    fraction_inside_band: f64,
    skipped: usize,
}

#[derive(Debug, Serialize)]
struct Summary {
    dim: usize,
    snapshots: usize,
    burnin: usize,
    spectrum: SpectrumStats,
    autocorrelation: AutocorrStats,
    /// Present for planar trajectories with enough snapshots.
    cycle: Option<CycleReport>,
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let meta = TrajectoryMeta::new(path.display().to_string(), 0);
    let file = File::open(path)?;
    if path.extension().is_some_and(|e| e == "csv") {
        return Ok(read_trajectory_csv(BufReader::new(file), meta)?);
    }
    let raw = read_trajectory_bin(BufReader::new(file))?;
    let times = (0..raw.steps).map(|k| k as f64).collect();
    Ok(Trajectory::from_rows(raw.dim, times, raw.data, meta)?)
}

pub fn run(cfg: &DiagnoseConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let traj = load_trajectory(Path::new(&cfg.input))?;
    let spec = increment_fft(&traj, cfg.burnin)?;
    let ac = autocorrelation(&traj, cfg.burnin, cfg.max_lag)?;
    let cycle = if traj.dim() == 2 { detect_limit_cycle(&traj, cfg.center, cfg.burnin).ok() } else { None };

    out.write("increment_spectrum.csv", |w| write_spectrum_report_csv(w, &spec))?;
    out.write("autocorrelation.csv", |w| write_autocorr_csv(w, &ac))?;
    let median = spec.median_amplitude();
    let max = spec.amplitude.iter().skip(1).cloned().fold(0.0, f64::max);
    let low = spec.band_mean(cfg.low_band);
    let summary = Summary {
        dim: traj.dim(),
        snapshots: traj.len(),
        burnin: cfg.burnin,
        spectrum: SpectrumStats {
            median,
            max_over_median: max / median,
            peak_frequency: spec.peak_frequency(),
            low_band_mean: low,
            low_band_over_median: low / median,
        },
        autocorrelation: AutocorrStats {
            band: ac.band,
            fraction_inside_band: ac.fraction_inside_band(),
            skipped: ac.skipped,
        },
        cycle,
    };
    out.write_json("summary.json", &summary)
}
