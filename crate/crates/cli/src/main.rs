//! `plekit` — synthesize and analyze pump-probe PLE experiments from the
//! command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use plekit::deadtime::{measured_rate, monte_carlo_counts, DetectorSpec, RateFunction};
use plekit::grouptheory::{
    character_table, decompose, kd_field_profile, product, selection_rule, CouplingStatus,
    FieldOperator, Irrep, KramersDoublet,
};
use plekit::pipeline::{
    load_pulse_pairs, load_relaxation, load_trace, run_t1_pipeline, save_report, save_trace,
    synthesize, write_populations, write_trace, ExperimentConfig, NoiseModel,
};
use plekit::ratemodel::{evolve, Drive, DriveSchedule, Segment};
use plekit::tempfit::{
    compare_models, fit_power_law, fit_temp_model, FitDiagnostics, FitSummary, PowerLawParams,
    TempModelParams,
};
use plekit::{t1fit, TimeTrace};

#[derive(Debug, Parser)]
#[command(
    name = "plekit",
    version,
    about = "Pump-probe PLE simulation and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum Format {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output rendering.
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

/// Output options for the `rules` queries, which render aligned text by
/// default (`csv` selects the text form, `json` the structured one).
#[derive(Debug, Args)]
struct RulesOutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

impl RulesOutputArgs {
    fn as_output(&self) -> OutputArgs {
        OutputArgs {
            out: self.out.clone(),
            format: self.format,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a pump-probe experiment from a JSON config and write
    /// traces, records and the run report.
    Synth {
        /// Experiment config (JSON, see README for the schema).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default `plekit-out`).
        #[arg(long, default_value = "plekit-out")]
        out: PathBuf,
        /// Override the Poisson noise seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the full report to stdout as well.
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Evolve the populations for one pulse sequence and emit `t_s,p1,p2,p3`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Delay to use for the P1-gap-P2 sequence (default: first delay).
        #[arg(long)]
        delay: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the two-parameter recovery model to a pulse-pair CSV.
    FitT1 {
        /// Pulse-pair CSV (`tau_s,h1_hz,h2_hz`).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Fit relaxation-rate temperature models to a relaxation CSV.
    FitTemp {
        /// Relaxation CSV (`temperature_K,rate_hz[,sigma_hz]`).
        #[arg(long)]
        input: PathBuf,
        /// Raman exponent: 5, 9 or both.
        #[arg(long, value_enum, default_value_t = NChoice::N5)]
        n: NChoice,
        /// Also fit the power-law alternative and rank the models.
        #[arg(long)]
        power_law: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Apply the dead-time pile-up model to a rate profile.
    Deadtime {
        /// Input rate profile as a trace CSV (values in Hz).
        #[arg(long)]
        input: PathBuf,
        /// Detector dead time, s.
        #[arg(long)]
        dead_time: f64,
        /// Use the Monte-Carlo detector with this many trials instead of
        /// the integral-equation solver.
        #[arg(long)]
        mc: Option<u64>,
        /// Seed for the Monte-Carlo detector.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Character table, product decompositions and selection rules of the
    /// double group.
    Rules {
        #[command(subcommand)]
        query: RulesQuery,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NChoice {
    #[value(name = "5")]
    N5,
    #[value(name = "9")]
    N9,
    Both,
}

#[derive(Debug, Subcommand)]
enum RulesQuery {
    /// Print the character table.
    Table {
        #[command(flatten)]
        output: RulesOutputArgs,
    },
    /// Decompose a* ⊗ b (pass --conjugate=false for a plain product).
    Product {
        a: String,
        b: String,
        /// Conjugate the first factor (the bra side); on by default.
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        conjugate: bool,
        #[command(flatten)]
        output: RulesOutputArgs,
    },
    /// Selection-rule matrix for all double-irrep pairs and field
    /// operators, plus the Kramers-doublet profiles.
    Selection {
        #[command(flatten)]
        output: RulesOutputArgs,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth {
            config,
            out,
            seed,
            format,
        } => cmd_synth(&config, &out, seed, format),
        Command::Simulate { config, delay, out } => cmd_simulate(&config, delay, out.as_deref()),
        Command::FitT1 { input, output } => cmd_fit_t1(&input, &output),
        Command::FitTemp {
            input,
            n,
            power_law,
            output,
        } => cmd_fit_temp(&input, n, power_law, &output),
        Command::Deadtime {
            input,
            dead_time,
            mc,
            seed,
            output,
        } => cmd_deadtime(&input, dead_time, mc, seed, &output),
        Command::Rules { query } => cmd_rules(query),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn emit(output: &OutputArgs, text: &str) -> Result<()> {
    match &output.out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_synth(config_path: &Path, out: &Path, seed: Option<u64>, format: Format) -> Result<()> {
    let mut config = load_config(config_path)?;
    if let Some(seed) = seed {
        config.noise = NoiseModel::Poisson { seed };
    }
    let synthesis = synthesize(&config)?;
    let report = run_t1_pipeline(&config)?;
    let paths = save_report(out, &report, &synthesis)?;
    match format {
        Format::Json => println!("{}", report.to_json()),
        Format::Csv => {
            for p in &paths {
                println!("{}", p.display());
            }
            if let Some(fit) = &report.fit {
                println!(
                    "fit: t1_s={} q={} rss={} converged={}",
                    fit.t1, fit.q, fit.rss, fit.converged
                );
            }
            if let Some(err) = &report.fit_error {
                println!("fit failed: {err}");
            }
        }
    }
    Ok(())
}

fn cmd_simulate(config_path: &Path, delay: Option<f64>, out: Option<&Path>) -> Result<()> {
    let config = load_config(config_path)?;
    let tau = delay.unwrap_or(config.pulse.delays[0]);
    let pump = config.rate.pump_rate()?;
    let drive = if config.field.b == 0.0 {
        Drive::both(pump)
    } else {
        Drive::single(pump)
    };
    let schedule = DriveSchedule::new(vec![
        Segment::with_drive(config.pulse.p1_duration, drive),
        Segment::dark(tau),
        Segment::with_drive(config.pulse.p2_duration, drive),
    ])?;
    let init = config.rate.thermal_populations();
    let traj = evolve(&config.rate, &schedule, init, config.bin_width)?;
    let mut buf = Vec::new();
    write_populations(&mut buf, &traj)?;
    match out {
        Some(path) => fs::write(path, buf)?,
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    Ok(())
}

fn cmd_fit_t1(input: &Path, output: &OutputArgs) -> Result<()> {
    let records = load_pulse_pairs(input)?;
    let fit = t1fit::fit_t1(&records)?;
    let text = match output.format {
        Format::Json => format!("{}\n", serde_json::to_string_pretty(&fit)?),
        Format::Csv => format!(
            "t1_s,q,stderr_t1_s,stderr_q,rss,converged\n{},{},{},{},{},{}\n",
            fit.t1, fit.q, fit.stderr_t1, fit.stderr_q, fit.rss, fit.converged
        ),
    };
    emit(output, &text)
}

fn temp_fit_json(params: &TempModelParams, diag: &FitDiagnostics) -> serde_json::Value {
    serde_json::json!({
        "params": params,
        "rss": diag.rss,
        "stderr": diag.stderr,
        "converged": diag.converged,
        "ill_conditioned": diag.ill_conditioned,
    })
}

fn power_fit_json(params: &PowerLawParams, diag: &FitDiagnostics) -> serde_json::Value {
    serde_json::json!({
        "params": params,
        "rss": diag.rss,
        "stderr": diag.stderr,
        "converged": diag.converged,
        "degenerate": diag.degenerate,
    })
}

fn cmd_fit_temp(input: &Path, n: NChoice, power_law: bool, output: &OutputArgs) -> Result<()> {
    let data = load_relaxation(input)?;
    let exponents: Vec<u32> = match n {
        NChoice::N5 => vec![5],
        NChoice::N9 => vec![9],
        NChoice::Both => vec![5, 9],
    };
    let mut fits = serde_json::Map::new();
    let mut summaries = Vec::new();
    let mut csv = String::from("model,param,value,stderr\n");
    for &exponent in &exponents {
        let (params, diag) = fit_temp_model(&data, exponent)?;
        let label = format!("orbach_n{exponent}");
        summaries.push(FitSummary {
            label: label.clone(),
            rss: diag.rss,
            n_params: 5,
            n_points: diag.n_points,
        });
        for (name, value, err) in [
            ("c_direct_hz_per_k", params.c_direct, diag.stderr[0]),
            ("c_raman_hz_per_kn", params.c_raman, diag.stderr[1]),
            ("c_orbach_hz", params.c_orbach, diag.stderr[2]),
            ("delta_mev", params.delta_mev, diag.stderr[3]),
            ("gamma0_hz", params.gamma0, diag.stderr[4]),
        ] {
            csv.push_str(&format!("{label},{name},{value},{err}\n"));
        }
        fits.insert(label, temp_fit_json(&params, &diag));
    }
    if power_law {
        let (params, diag) = fit_power_law(&data)?;
        summaries.push(FitSummary {
            label: "power_law".into(),
            rss: diag.rss,
            n_params: 3,
            n_points: diag.n_points,
        });
        for (name, value, err) in [
            ("alpha_hz_per_k", params.alpha, diag.stderr[0]),
            ("beta_hz_per_kgamma", params.beta, diag.stderr[1]),
            ("gamma", params.gamma, diag.stderr[2]),
        ] {
            csv.push_str(&format!("power_law,{name},{value},{err}\n"));
        }
        fits.insert("power_law".into(), power_fit_json(&params, &diag));
    }
    if summaries.len() >= 2 {
        let ranking = compare_models(&summaries)?;
        fits.insert("ranking".into(), serde_json::to_value(&ranking)?);
        for r in &ranking {
            csv.push_str(&format!("ranking,{},{},{}\n", r.label, r.rss, r.aicc));
        }
    }
    let text = match output.format {
        Format::Json => format!(
            "{}\n",
            serde_json::to_string_pretty(&serde_json::Value::Object(fits))?
        ),
        Format::Csv => csv,
    };
    emit(output, &text)
}

fn cmd_deadtime(
    input: &Path,
    dead_time: f64,
    mc: Option<u64>,
    seed: u64,
    output: &OutputArgs,
) -> Result<()> {
    let profile_trace = load_trace(input)?;
    let profile = RateFunction::from_trace(&profile_trace)?;
    let det = DetectorSpec::new(dead_time);
    let measured: TimeTrace = match mc {
        Some(trials) => monte_carlo_counts(&profile, &det, trials, seed)?,
        None => measured_rate(&profile, &det)?,
    };
    match output.format {
        Format::Csv => match &output.out {
            Some(path) => save_trace(path, &measured)?,
            None => {
                let mut buf = Vec::new();
                write_trace(&mut buf, &measured)?;
                print!("{}", String::from_utf8_lossy(&buf));
            }
        },
        Format::Json => {
            let text = format!("{}\n", serde_json::to_string_pretty(&measured)?);
            emit(output, &text)?;
        }
    }
    Ok(())
}

fn rules_selection_json() -> serde_json::Value {
    let mut matrix = Vec::new();
    for bra in Irrep::DOUBLE {
        for ket in Irrep::DOUBLE {
            for op in FieldOperator::ALL {
                let rule = selection_rule(bra, ket, op);
                matrix.push(serde_json::json!({
                    "bra": bra.label(),
                    "ket": ket.label(),
                    "operator": op.label(),
                    "allowed": rule.allowed,
                    "decomposition": rule.decomposition.to_string(),
                }));
            }
        }
    }
    let profiles: Vec<serde_json::Value> = [KramersDoublet::G56, KramersDoublet::G4]
        .iter()
        .map(|&kd| {
            let profile = kd_field_profile(kd);
            serde_json::json!({
                "doublet": kd.label(),
                "couplings": profile
                    .couplings
                    .iter()
                    .map(|(op, status)| {
                        serde_json::json!({
                            "operator": op.label(),
                            "status": match status {
                                CouplingStatus::Allowed => "allowed",
                                CouplingStatus::ForbiddenBySymmetry => "forbidden",
                                CouplingStatus::ForbiddenByKramers => "forbidden_by_kramers",
                            },
                        })
                    })
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    serde_json::json!({ "matrix": matrix, "kramers_profiles": profiles })
}

fn rules_selection_text() -> String {
    let mut out = String::new();
    out.push_str(&format!("{:>4} {:>4} |", "bra", "ket"));
    for op in FieldOperator::ALL {
        out.push_str(&format!(" {:>9}", op.label()));
    }
    out.push('\n');
    out.push_str(&"-".repeat(11 + 10 * FieldOperator::ALL.len()));
    out.push('\n');
    for bra in Irrep::DOUBLE {
        for ket in Irrep::DOUBLE {
            out.push_str(&format!("{:>4} {:>4} |", bra.label(), ket.label()));
            for op in FieldOperator::ALL {
                let rule = selection_rule(bra, ket, op);
                out.push_str(&format!(
                    " {:>9}",
                    if rule.allowed { "allowed" } else { "-" }
                ));
            }
            out.push('\n');
        }
    }
    out.push('\n');
    for kd in [KramersDoublet::G56, KramersDoublet::G4] {
        let profile = kd_field_profile(kd);
        out.push_str(&format!("doublet {}:", kd.label()));
        for (op, status) in &profile.couplings {
            let tag = match status {
                CouplingStatus::Allowed => "allowed",
                CouplingStatus::ForbiddenBySymmetry => "forbidden",
                CouplingStatus::ForbiddenByKramers => "forbidden (Kramers)",
            };
            out.push_str(&format!(" {}={tag}", op.label()));
        }
        out.push('\n');
    }
    out
}

fn cmd_rules(query: RulesQuery) -> Result<()> {
    match query {
        RulesQuery::Table { output } => {
            let output = output.as_output();
            let table = character_table();
            let text = match output.format {
                Format::Json => format!("{}\n", serde_json::to_string_pretty(&table)?),
                Format::Csv => table.render_text(),
            };
            emit(&output, &text)
        }
        RulesQuery::Product {
            a,
            b,
            conjugate,
            output,
        } => {
            let output = output.as_output();
            let ia = Irrep::parse(&a)?;
            let ib = Irrep::parse(&b)?;
            let rep = product(ia, conjugate, ib);
            let dec = decompose(&rep)?;
            let text = match output.format {
                Format::Json => format!(
                    "{}\n",
                    serde_json::to_string_pretty(&serde_json::json!({
                        "a": ia.label(),
                        "conjugate_a": conjugate,
                        "b": ib.label(),
                        "characters": rep.to_string(),
                        "decomposition": dec.to_string(),
                    }))?
                ),
                Format::Csv => format!(
                    "{}{} x {} = {}  characters {}\n",
                    ia.label(),
                    if conjugate { "*" } else { "" },
                    ib.label(),
                    dec,
                    rep
                ),
            };
            emit(&output, &text)
        }
        RulesQuery::Selection { output } => {
            let output = output.as_output();
            let text = match output.format {
                Format::Json => format!(
                    "{}\n",
                    serde_json::to_string_pretty(&rules_selection_json())?
                ),
                Format::Csv => rules_selection_text(),
            };
            emit(&output, &text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
