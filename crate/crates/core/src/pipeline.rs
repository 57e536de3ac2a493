//! End-to-end orchestration: experiment synthesis (rate model → dead time
//! → Poisson noise), leading-edge extraction, T1 fits, file formats and
//! reproducible run reports.
//!
//! A pump-probe run is described declaratively by [`ExperimentConfig`]:
//! for every delay τ the populations evolve through P1 – gap – P2 from
//! thermal equilibrium (the repump between runs is modeled as exactly
//! this reset), the PLE trace is formed from p3, pushed through the
//! dead-time model and optionally Poisson noise, and the two leading
//! edges become one [`PulsePairRecord`]. Identical config + seed gives
//! byte-identical outputs.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::deadtime::{measured_rate, DetectorSpec, RateFunction, DEFAULT_CELLS_PER_DEAD_TIME};
use crate::parallel::{map_indexed, mix_seed, Parallelism};
use crate::ratemodel::{
    evolve, Drive, DriveSchedule, FieldConfig, Populations, RateParams, Segment,
};
use crate::t1fit::{fit_t1, fit_t1_corrected, leading_edge_height, PulsePairRecord, T1FitResult};
use crate::tempfit::RelaxationPoint;
use crate::trace::{TimeTrace, TraceUnit};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Pulse-pair timing: two probe pulses separated by each delay in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    /// First (pump) pulse length, s.
    pub p1_duration: f64,
    /// Second (probe) pulse length, s.
    pub p2_duration: f64,
    /// Strictly increasing pulse delays τ, s.
    pub delays: Vec<f64>,
}

/// Per-bin noise applied to synthesized traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Poisson { seed: u64 },
}

impl NoiseModel {
    pub fn seed(&self) -> Option<u64> {
        match self {
            NoiseModel::None => None,
            NoiseModel::Poisson { seed } => Some(*seed),
        }
    }
}

/// Declarative description of one pump-probe experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub rate: RateParams,
    pub pulse: PulseSequence,
    pub field: FieldConfig,
    pub detector: DetectorSpec,
    pub noise: NoiseModel,
    /// PLE collection scale, counts/s at p3 = 1.
    pub scale: f64,
    /// Output bin width, s. Pulse durations and delays must be integer
    /// multiples (within 1e-6 of a bin); they are snapped exactly.
    pub bin_width: f64,
    /// Bins averaged per leading edge.
    #[serde(default = "default_leading_bins")]
    pub leading_bins: usize,
}

fn default_leading_bins() -> usize {
    crate::t1fit::DEFAULT_LEADING_BINS
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.rate.validate()?;
        self.field.validate()?;
        self.detector.validate()?;
        if !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if !self.bin_width.is_finite() || self.bin_width <= 0.0 {
            return Err(Error::InvalidParameters(format!(
                "bin width must be positive, got {}",
                self.bin_width
            )));
        }
        if self.leading_bins == 0 {
            return Err(Error::InvalidParameters("leading_bins must be >= 1".into()));
        }
        if self.pulse.delays.is_empty() {
            return Err(Error::InvalidScenario("no pulse delays given".into()));
        }
        if self.pulse.delays.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidScenario(
                "delays must be strictly increasing".into(),
            ));
        }
        for (name, v) in [
            ("p1_duration", self.pulse.p1_duration),
            ("p2_duration", self.pulse.p2_duration),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidScenario(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for &tau in &self.pulse.delays {
            if !tau.is_finite() || tau <= 0.0 {
                return Err(Error::InvalidScenario(format!(
                    "delays must be positive, got {tau}"
                )));
            }
            if self.detector.dead_time > 0.0 && tau < 50.0 * self.detector.dead_time {
                return Err(Error::InvalidScenario(format!(
                    "delay {tau} s shorter than 50 dead times; pulses would overlap in the detector"
                )));
            }
        }
        let window = self.leading_bins as f64 * self.bin_width;
        if window > self.pulse.p1_duration || window > self.pulse.p2_duration {
            return Err(Error::InvalidScenario(
                "leading-edge window longer than a pulse".into(),
            ));
        }
        for (name, v) in [
            ("p1_duration", self.pulse.p1_duration),
            ("p2_duration", self.pulse.p2_duration),
        ]
        .into_iter()
        .chain(self.pulse.delays.iter().map(|t| ("delay", *t)))
        {
            let bins = v / self.bin_width;
            if (bins - bins.round()).abs() > 1e-6 || bins.round() < 1.0 {
                return Err(Error::InvalidScenario(format!(
                    "{name} = {v} s is not a positive multiple of the bin width {}",
                    self.bin_width
                )));
            }
        }
        Ok(())
    }

    /// Snap a duration to its exact bin count (validated beforehand).
    fn bins_of(&self, duration: f64) -> usize {
        (duration / self.bin_width).round() as usize
    }

    /// SHA-free stable content hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

// ---------------------------------------------------------------------------
// Scenario builders
// ---------------------------------------------------------------------------

impl ExperimentConfig {
    /// In-field pump-probe T1 scenario: only the bright sublevel is
    /// driven, the thermal back-rate is switched off (zero temperature),
    /// so the recovery time constant is exactly 1/gamma21. Delays are
    /// snapped to the bin grid.
    pub fn spin_t1_scenario(gamma21: f64, delays: &[f64], bin_width: f64) -> ExperimentConfig {
        let field = FieldConfig {
            b: 0.1,
            theta: 57f64.to_radians(),
            g_parallel: 1.6,
        };
        let pulse_len = (0.4f64 / bin_width).round().max(25.0) * bin_width;
        ExperimentConfig {
            rate: RateParams {
                gamma31: 20e6,
                gamma32: 0.003 * 20e6,
                gamma21,
                delta_mev: field.zeeman_delta_mev(),
                temperature: 0.0,
                rabi: 300e3,
            },
            pulse: PulseSequence {
                p1_duration: pulse_len,
                p2_duration: pulse_len,
                delays: snap_delays(delays, bin_width),
            },
            field,
            detector: DetectorSpec::new(0.0),
            noise: NoiseModel::None,
            scale: 1e9,
            bin_width,
            leading_bins: default_leading_bins(),
        }
    }

    /// Zero-field scenario: degenerate sublevels both addressed by the
    /// laser, so no spin pumping occurs and pulses are flat-topped.
    pub fn zero_field_scenario(delays: &[f64], bin_width: f64) -> ExperimentConfig {
        let pulse_len = (0.2f64 / bin_width).round().max(25.0) * bin_width;
        ExperimentConfig {
            rate: RateParams {
                gamma31: 20e6,
                gamma32: 0.003 * 20e6,
                gamma21: 10.0,
                delta_mev: 0.0,
                temperature: 4.0,
                rabi: 100e3,
            },
            pulse: PulseSequence {
                p1_duration: pulse_len,
                p2_duration: pulse_len,
                delays: snap_delays(delays, bin_width),
            },
            field: FieldConfig {
                b: 0.0,
                theta: 57f64.to_radians(),
                g_parallel: 1.6,
            },
            detector: DetectorSpec::new(0.0),
            noise: NoiseModel::None,
            scale: 1e9,
            bin_width,
            leading_bins: default_leading_bins(),
        }
    }

    /// Finite-temperature in-field scenario (4 K): thermal back-rate
    /// active, strong drive, used for qualitative pulse-shape checks.
    pub fn thermal_in_field_scenario() -> ExperimentConfig {
        let field = FieldConfig {
            b: 0.1,
            theta: 57f64.to_radians(),
            g_parallel: 1.6,
        };
        let bin_width = 5e-5;
        ExperimentConfig {
            rate: RateParams {
                gamma31: 20e6,
                gamma32: 0.003 * 20e6,
                gamma21: 100.0,
                delta_mev: field.zeeman_delta_mev(),
                temperature: 4.0,
                rabi: 2e6,
            },
            pulse: PulseSequence {
                p1_duration: 0.02,
                p2_duration: 0.02,
                delays: vec![0.005, 0.01, 0.02, 0.04],
            },
            field,
            detector: DetectorSpec::new(0.0),
            noise: NoiseModel::None,
            scale: 1e7,
            bin_width,
            leading_bins: default_leading_bins(),
        }
    }
}

fn snap_delays(delays: &[f64], bin_width: f64) -> Vec<f64> {
    delays
        .iter()
        .map(|t| (t / bin_width).round().max(1.0) * bin_width)
        .collect()
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

/// Synthesis output for one delay.
#[derive(Debug, Clone)]
pub struct TauRun {
    pub tau: f64,
    /// Full P1-gap-P2 trace at the output bin width.
    pub trace: TimeTrace,
    /// Start time of the second pulse within the trace, s.
    pub p2_start: f64,
    pub record: PulsePairRecord,
}

/// All per-delay runs of one synthesized experiment.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub runs: Vec<TauRun>,
}

impl Synthesis {
    pub fn records(&self) -> Vec<PulsePairRecord> {
        self.runs.iter().map(|r| r.record).collect()
    }
}

/// Rate-model pulse on a fine grid: p3-proportional rates per fine cell,
/// sampled at cell centers so the switch-on instant does not leave an
/// artificial dip in the first bin, plus the exact end state.
fn pulse_rates(
    params: &RateParams,
    drive: Drive,
    init: Populations,
    n_bins: usize,
    bin_width: f64,
    sub: usize,
    scale: f64,
) -> Result<(Vec<f64>, Populations)> {
    let fine = bin_width / sub as f64;
    let duration = n_bins as f64 * bin_width;
    let n_fine = n_bins * sub;
    // Advance half a cell, then sample every cell: values land on cell
    // centers of the unshifted grid.
    let half = DriveSchedule::new(vec![Segment::with_drive(fine / 2.0, drive)])?;
    let half_state = evolve(params, &half, init, fine / 2.0)?.last();
    let rest = DriveSchedule::new(vec![Segment::with_drive(duration - fine / 2.0, drive)])?;
    let traj = evolve(params, &rest, half_state, fine)?;
    if traj.len() < n_fine {
        return Err(Error::InvalidScenario(format!(
            "pulse sampling produced {} cells, expected {}",
            traj.len(),
            n_fine
        )));
    }
    let rates: Vec<f64> = traj.samples[..n_fine]
        .iter()
        .map(|p| (scale * p.p3).max(0.0))
        .collect();
    let full = DriveSchedule::new(vec![Segment::with_drive(duration, drive)])?;
    let end_state = evolve(params, &full, init, duration)?.last();
    Ok((rates, end_state))
}

/// Mean-aggregate fine cells into output bins.
fn aggregate(fine: &[f64], sub: usize) -> Vec<f64> {
    fine.chunks(sub)
        .map(|chunk| chunk.iter().sum::<f64>() / chunk.len() as f64)
        .collect()
}

/// Synthesize every delay of the experiment. Deterministic per seed; runs
/// the delays in parallel under the default feature.
pub fn synthesize(config: &ExperimentConfig) -> Result<Synthesis> {
    synthesize_with(config, Parallelism::Auto)
}

/// [`synthesize`] with an explicit execution mode.
pub fn synthesize_with(config: &ExperimentConfig, mode: Parallelism) -> Result<Synthesis> {
    config.validate()?;
    let pump = config.rate.pump_rate()?;
    if pump == 0.0 {
        return Err(Error::InvalidScenario(
            "rabi = 0 gives no optical drive and no PLE response".into(),
        ));
    }
    let drive = if config.field.b == 0.0 {
        Drive::both(pump)
    } else {
        Drive::single(pump)
    };
    let init = config.rate.thermal_populations();
    let dead_time = config.detector.dead_time;
    let sub = if dead_time > 0.0 {
        (config.bin_width / (dead_time / DEFAULT_CELLS_PER_DEAD_TIME as f64))
            .ceil()
            .max(1.0) as usize
    } else {
        1
    };
    let n1 = config.bins_of(config.pulse.p1_duration);
    let n2 = config.bins_of(config.pulse.p2_duration);
    let seed = config.noise.seed();

    let results: Vec<Result<TauRun>> = map_indexed(config.pulse.delays.len(), mode, |idx| {
        let tau = config.pulse.delays[idx];
        let n_gap = config.bins_of(tau);
        let w = config.bin_width;
        let fine = w / sub as f64;

        let (p1_fine, after_p1) = pulse_rates(&config.rate, drive, init, n1, w, sub, config.scale)?;
        // Gap: laser off; one exact step to the state at P2 start.
        let gap = DriveSchedule::new(vec![Segment::dark(n_gap as f64 * w)])?;
        let after_gap = evolve(&config.rate, &gap, after_p1, n_gap as f64 * w)?.last();
        let (p2_fine, _) = pulse_rates(&config.rate, drive, after_gap, n2, w, sub, config.scale)?;

        let transform = |fine_rates: Vec<f64>| -> Result<Vec<f64>> {
            if dead_time == 0.0 {
                return Ok(aggregate(&fine_rates, sub));
            }
            let rf = RateFunction::new(0.0, fine, fine_rates)?;
            let measured = measured_rate(&rf, &config.detector)?;
            Ok(aggregate(&measured.counts, sub))
        };
        let mut counts = transform(p1_fine)?;
        counts.extend(std::iter::repeat_n(0.0, n_gap));
        counts.extend(transform(p2_fine)?);

        if let Some(seed) = seed {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, idx as u64));
            for c in &mut counts {
                let lambda = *c * w;
                *c = if lambda > 0.0 {
                    let draw: f64 = rand_distr::Poisson::new(lambda)
                        .expect("lambda > 0")
                        .sample(&mut rng);
                    draw / w
                } else {
                    0.0
                };
            }
        }

        let trace = TimeTrace::with_unit(0.0, w, counts, TraceUnit::RateHz)?;
        let p2_start = (n1 + n_gap) as f64 * w;
        let h1 = leading_edge_height(&trace, 0.0, config.leading_bins)?;
        let h2 = leading_edge_height(&trace, p2_start, config.leading_bins)?;
        if h1 <= 0.0 || h2 <= 0.0 || h1.is_nan() || h2.is_nan() {
            return Err(Error::InvalidScenario(format!(
                "synthesis produced a non-positive leading edge (h1={h1}, h2={h2})"
            )));
        }
        Ok(TauRun {
            tau,
            trace,
            p2_start,
            record: PulsePairRecord { tau, h1, h2 },
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Synthesis { runs })
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

/// Reproducible record of one pipeline run. Serializes with the stable
/// keys `config_hash`, `seed`, `version`, `records`, `fit` (plus the
/// embedded config); no timestamps, so identical inputs give identical
/// bytes.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub records: Vec<PulsePairRecord>,
    /// Plain recovery fit; `None` when the fit failed (see `fit_error`).
    pub fit: Option<T1FitResult>,
    /// Pile-up-corrected fit, present when the config has a dead time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrected_fit: Option<T1FitResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    pub config: ExperimentConfig,
}

/// Synthesize, extract leading edges and fit; partial results survive fit
/// failures. With a nonzero dead time the pile-up-corrected fit runs as
/// well, with ε1/ε2 taken from a noise-free resynthesis with and without
/// the detector model.
pub fn run_t1_pipeline(config: &ExperimentConfig) -> Result<RunReport> {
    run_t1_pipeline_with(config, Parallelism::Auto)
}

/// [`run_t1_pipeline`] with an explicit execution mode.
pub fn run_t1_pipeline_with(config: &ExperimentConfig, mode: Parallelism) -> Result<RunReport> {
    let synthesis = synthesize_with(config, mode)?;
    let records = synthesis.records();
    let (fit, fit_error) = match fit_t1(&records) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let corrected_fit = if config.detector.dead_time > 0.0 && fit.is_some() {
        let mut clean = config.clone();
        clean.noise = NoiseModel::None;
        let mut ideal = clean.clone();
        ideal.detector = DetectorSpec::new(0.0);
        let with_dt = synthesize_with(&clean, mode)?;
        let without_dt = synthesize_with(&ideal, mode)?;
        let eps: Vec<(f64, f64, f64)> = with_dt
            .runs
            .iter()
            .zip(&without_dt.runs)
            .map(|(m, t)| (m.tau, t.record.h1 - m.record.h1, t.record.h2 - m.record.h2))
            .collect();
        let epsilon1 = eps.iter().map(|(_, e1, _)| *e1).sum::<f64>() / eps.len() as f64;
        let eps2_of = move |tau: f64| -> f64 {
            eps.iter()
                .min_by(|a, b| (a.0 - tau).abs().total_cmp(&(b.0 - tau).abs()))
                .map(|(_, _, e2)| *e2)
                .unwrap_or(0.0)
        };
        fit_t1_corrected(&records, epsilon1, eps2_of).ok()
    } else {
        None
    };

    Ok(RunReport {
        config_hash: config.hash(),
        seed: config.noise.seed(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        records,
        fit,
        corrected_fit,
        fit_error,
        config: config.clone(),
    })
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Write `report.json`, `records.csv` and one `trace_<k>.csv` per delay
/// into `dir`; returns the paths written.
pub fn save_report(dir: &Path, report: &RunReport, synthesis: &Synthesis) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let report_path = dir.join("report.json");
    fs::write(&report_path, report.to_json())?;
    paths.push(report_path);
    let records_path = dir.join("records.csv");
    save_pulse_pairs(&records_path, &report.records)?;
    paths.push(records_path);
    for (k, run) in synthesis.runs.iter().enumerate() {
        let path = dir.join(format!("trace_{k:03}.csv"));
        save_trace(&path, &run.trace)?;
        paths.push(path);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// CSV formats
// ---------------------------------------------------------------------------

const TRACE_HEADER: &str = "t0_s,bin_width_s";
const PAIR_HEADER: &str = "tau_s,h1_hz,h2_hz";
const RELAX_HEADER_2: &str = "temperature_K,rate_hz";
const RELAX_HEADER_3: &str = "temperature_K,rate_hz,sigma_hz";

/// Write a trace as CSV: the header line, one line with `t0,bin_width`,
/// then one counts value per line.
pub fn write_trace<W: Write>(mut w: W, trace: &TimeTrace) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    writeln!(w, "{},{}", trace.t0, trace.bin_width)?;
    for c in &trace.counts {
        writeln!(w, "{c}")?;
    }
    Ok(())
}

pub fn save_trace(path: &Path, trace: &TimeTrace) -> Result<()> {
    let mut out = Vec::new();
    write_trace(&mut out, trace)?;
    fs::write(path, out)?;
    Ok(())
}

fn parse_float(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("expected a number, got '{}'", field.trim()),
    })
}

/// Iterate lines with 1-based numbering, tolerating CRLF and skipping a
/// single trailing empty line.
fn csv_lines<R: Read>(reader: R) -> Result<Vec<(usize, String)>> {
    let buf = BufReader::new(reader);
    let mut lines = Vec::new();
    for (idx, line) in buf.lines().enumerate() {
        let line = line?;
        lines.push((idx + 1, line.trim_end_matches('\r').to_string()));
    }
    while lines.last().is_some_and(|(_, l)| l.trim().is_empty()) {
        lines.pop();
    }
    Ok(lines)
}

pub fn read_trace<R: Read>(reader: R) -> Result<TimeTrace> {
    let lines = csv_lines(reader)?;
    let mut iter = lines.into_iter();
    let (line_no, header) = iter.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    if header.trim() != TRACE_HEADER {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected header '{TRACE_HEADER}', got '{header}'"),
        });
    }
    let (meta_no, meta) = iter.next().ok_or(Error::Parse {
        line: 2,
        message: "missing t0,bin_width line".into(),
    })?;
    let fields: Vec<&str> = meta.split(',').collect();
    if fields.len() != 2 {
        return Err(Error::Parse {
            line: meta_no,
            message: format!("expected two comma-separated floats, got '{meta}'"),
        });
    }
    let t0 = parse_float(fields[0], meta_no)?;
    let bin_width = parse_float(fields[1], meta_no)?;
    let mut counts = Vec::new();
    for (no, line) in iter {
        counts.push(parse_float(&line, no)?);
    }
    TimeTrace::new(t0, bin_width, counts)
}

pub fn load_trace(path: &Path) -> Result<TimeTrace> {
    read_trace(fs::File::open(path)?)
}

pub fn write_pulse_pairs<W: Write>(mut w: W, records: &[PulsePairRecord]) -> Result<()> {
    writeln!(w, "{PAIR_HEADER}")?;
    for r in records {
        writeln!(w, "{},{},{}", r.tau, r.h1, r.h2)?;
    }
    Ok(())
}

pub fn save_pulse_pairs(path: &Path, records: &[PulsePairRecord]) -> Result<()> {
    let mut out = Vec::new();
    write_pulse_pairs(&mut out, records)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pulse_pairs<R: Read>(reader: R) -> Result<Vec<PulsePairRecord>> {
    let lines = csv_lines(reader)?;
    let mut iter = lines.into_iter();
    let (line_no, header) = iter.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    if header.trim() != PAIR_HEADER {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected header '{PAIR_HEADER}', got '{header}'"),
        });
    }
    let mut records = Vec::new();
    for (no, line) in iter {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: no,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        records.push(PulsePairRecord {
            tau: parse_float(fields[0], no)?,
            h1: parse_float(fields[1], no)?,
            h2: parse_float(fields[2], no)?,
        });
    }
    Ok(records)
}

pub fn load_pulse_pairs(path: &Path) -> Result<Vec<PulsePairRecord>> {
    read_pulse_pairs(fs::File::open(path)?)
}

pub fn read_relaxation<R: Read>(reader: R) -> Result<Vec<RelaxationPoint>> {
    let lines = csv_lines(reader)?;
    let mut iter = lines.into_iter();
    let (line_no, header) = iter.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let with_sigma = match header.trim() {
        RELAX_HEADER_2 => false,
        RELAX_HEADER_3 => true,
        other => {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected header '{RELAX_HEADER_2}[,sigma_hz]', got '{other}'"),
            })
        }
    };
    let mut points = Vec::new();
    for (no, line) in iter {
        let fields: Vec<&str> = line.split(',').collect();
        let expected = if with_sigma { 3 } else { 2 };
        if fields.len() != expected {
            return Err(Error::Parse {
                line: no,
                message: format!("expected {expected} fields, got {}", fields.len()),
            });
        }
        points.push(RelaxationPoint {
            temperature: parse_float(fields[0], no)?,
            rate: parse_float(fields[1], no)?,
            sigma: if with_sigma {
                Some(parse_float(fields[2], no)?)
            } else {
                None
            },
        });
    }
    Ok(points)
}

pub fn load_relaxation(path: &Path) -> Result<Vec<RelaxationPoint>> {
    read_relaxation(fs::File::open(path)?)
}

pub fn write_relaxation<W: Write>(mut w: W, points: &[RelaxationPoint]) -> Result<()> {
    let with_sigma = points.iter().all(|p| p.sigma.is_some()) && !points.is_empty();
    writeln!(
        w,
        "{}",
        if with_sigma {
            RELAX_HEADER_3
        } else {
            RELAX_HEADER_2
        }
    )?;
    for p in points {
        if with_sigma {
            writeln!(w, "{},{},{}", p.temperature, p.rate, p.sigma.unwrap())?;
        } else {
            writeln!(w, "{},{}", p.temperature, p.rate)?;
        }
    }
    Ok(())
}

/// Population trajectory CSV (`t_s,p1,p2,p3`) for the CLI's simulate
/// command.
pub fn write_populations<W: Write>(mut w: W, traj: &crate::ratemodel::Trajectory) -> Result<()> {
    writeln!(w, "t_s,p1,p2,p3")?;
    for (k, p) in traj.samples.iter().enumerate() {
        writeln!(w, "{},{},{},{}", traj.time(k), p.p1, p.p2, p.p3)?;
    }
    Ok(())
}
