//! `odmr`: simulate ODMR spectra of V2 silicon vacancies and make sense of them.
//!
//! Flags use laboratory units (MHz, gauss, degrees, mW, dBm); files and JSON
//! carry SI values, with `_display` fields in laboratory units for reading.
//!
//! Exit status: 0 on success, 1 for I/O or data errors, 2 for usage errors.

mod config;
mod svg;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use odmr_core::estimation::{fit_lorentzian_multi, fit_saturation, FitResult};
use odmr_core::format::{
    parse_saturation_csv, parse_spectrum_csv, spectrum_metadata, write_spectrum_csv,
    write_sweep_csv,
};
use odmr_core::inversion::{
    angle_sweep, axial_invert, field_sweep, InversionOptions, Inverter, SweepRow,
};
use odmr_core::sensitivity::{
    estimate_sensitivity, laser_sweep_sensitivity, mw_optimum_dbm, mw_sweep_sensitivity,
};
use odmr_core::synth::{photon_rate, synthesize_spectrum, AcquisitionConfig};
use odmr_core::units::{GAUSS, MCPS, MHZ, MICROTESLA};
use odmr_core::FieldVector;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "odmr",
    version,
    about = "ODMR toolkit for V2 silicon vacancies in 4H-SiC"
)]
struct Cli {
    /// Run configuration (flat `key = value` file). Overrides $ODMR_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a two-line ODMR spectrum as CSV.
    Simulate(SimulateArgs),
    /// Fit a spectrum or a saturation curve and print the result as JSON.
    Fit(FitArgs),
    /// Recover (B0, theta) from a pair of resonance frequencies.
    Invert(InvertArgs),
    /// Tabulate resonances or sensitivity against one swept quantity.
    Sweep(SweepArgs),
    /// Shot-noise sensitivity of a measured resonance at a given photon rate.
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, allow_hyphen_values = true)]
    b0_gauss: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_deg: f64,
    #[arg(long)]
    laser_mw: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mw_dbm: Option<f64>,
    #[arg(long)]
    fmin_mhz: Option<f64>,
    #[arg(long)]
    fmax_mhz: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    dwell_ms: Option<f64>,
    /// Add seeded shot noise. Without a seed the spectrum is noiseless.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; standard output when omitted.
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Also write an SVG plot.
    #[arg(long, value_name = "PATH")]
    svg: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    /// Lorentzian lines of an `odmr-csv v1` spectrum.
    Odmr,
    /// I(P) = I_s / (1 + P0 / P) from `power_mw,counts_cps` rows.
    Saturation,
}

#[derive(Args)]
struct FitArgs {
    kind: FitKind,
    input: PathBuf,
    /// Number of Lorentzian lines (odmr only).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    peaks: u8,
}

#[derive(Args)]
struct InvertArgs {
    #[arg(long)]
    nu1_mhz: f64,
    #[arg(long)]
    nu2_mhz: f64,
    /// Closed-form inversion for a field along the c-axis.
    #[arg(long)]
    axial: bool,
    /// Upper end of the field search; defaults to the config value.
    #[arg(long)]
    b_max_gauss: Option<f64>,
    /// Uncertainty of each measured frequency.
    #[arg(long, default_value_t = 0.0)]
    sigma_mhz: f64,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum SweepKind {
    /// Resonances against |B0| (gauss) at fixed angle.
    Field,
    /// Resonances against theta (degrees) at fixed |B0|.
    Angle,
    /// Photon rate and sensitivity against laser power (mW).
    Laser,
    /// Resonance response and sensitivity against microwave power (dBm).
    Mw,
}

#[derive(Args)]
struct SweepArgs {
    kind: SweepKind,
    /// Start of the swept range, in the kind's unit.
    #[arg(long, allow_hyphen_values = true)]
    from: Option<f64>,
    /// End of the swept range, in the kind's unit.
    #[arg(long, allow_hyphen_values = true)]
    to: Option<f64>,
    #[arg(long)]
    points: Option<usize>,
    /// Field magnitude for an angle sweep.
    #[arg(long, default_value_t = 60.0)]
    b0_gauss: f64,
    /// Field angle for a field sweep.
    #[arg(long, default_value_t = 0.0)]
    theta_deg: f64,
    /// Contrast held fixed in a laser sweep.
    #[arg(long, default_value_t = 1.8e-3)]
    contrast: f64,
    /// Linewidth held fixed in a laser sweep.
    #[arg(long, default_value_t = 13.0)]
    fwhm_mhz: f64,
    /// Photon rate for a microwave sweep; defaults to the rate at the
    /// configured laser power.
    #[arg(long)]
    rate_cps: Option<f64>,
    #[arg(short, long, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct SensitivityArgs {
    /// Fractional contrast, e.g. 1.8e-3.
    #[arg(long)]
    contrast: f64,
    #[arg(long)]
    fwhm_mhz: f64,
    /// Detected photon rate.
    #[arg(
        long,
        required_unless_present = "laser_mw",
        conflicts_with = "laser_mw"
    )]
    rate_cps: Option<f64>,
    /// Derive the photon rate from the saturation model instead.
    #[arg(long)]
    laser_mw: Option<f64>,
}

/// An error in what the user asked for, as opposed to a failure doing it.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Fit(a) => fit(a),
        Command::Invert(a) => invert(&cfg, a),
        Command::Sweep(a) => sweep(&cfg, a),
        Command::Sensitivity(a) => sensitivity(&cfg, a),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_svg(path: &Path, plot: svg::Plot<'_>) -> Result<()> {
    std::fs::write(path, plot.render()).with_context(|| format!("writing {}", path.display()))
}

fn print_json(v: Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, &v)?;
    writeln!(out)?;
    Ok(())
}

fn simulate(cfg: &RunConfig, a: SimulateArgs) -> Result<()> {
    let field =
        FieldVector::from_gauss_deg(a.b0_gauss, a.theta_deg).map_err(|e| usage(e.to_string()))?;
    let acq = AcquisitionConfig {
        laser_mw: a.laser_mw.unwrap_or(cfg.laser_mw),
        mw_dbm: a.mw_dbm.unwrap_or(cfg.mw_dbm),
        f_start_hz: a.fmin_mhz.unwrap_or(cfg.fmin_mhz) * MHZ,
        f_stop_hz: a.fmax_mhz.unwrap_or(cfg.fmax_mhz) * MHZ,
        n_points: a.points.unwrap_or(cfg.points),
        dwell_s: a.dwell_ms.unwrap_or(cfg.dwell_ms) * 1e-3,
        seed: a.seed,
    };
    acq.validate().map_err(|e| usage(e.to_string()))?;
    let spec = synthesize_spectrum(&acq, &field, &cfg.consts()?, &cfg.saturation()?, &cfg.mw()?)?;
    if let Some(meta) = &spec.meta {
        for w in &meta.warnings {
            eprintln!("warning: {w:?}: a model resonance lies outside the sweep");
        }
    }

    let mut out = open_output(a.output.as_deref())?;
    write_spectrum_csv(&mut out, &spec, &spectrum_metadata(&spec)).context("writing spectrum")?;
    drop(out);

    if let Some(path) = &a.svg {
        let f_mhz: Vec<f64> = spec.freq_hz.iter().map(|f| f / MHZ).collect();
        write_svg(
            path,
            svg::Plot {
                title: "ODMR spectrum",
                x_label: "frequency (MHz)",
                y_label: "PL change",
                series: vec![svg::Series {
                    name: "signal",
                    xs: &f_mhz,
                    ys: &spec.signal,
                }],
            },
        )?;
    }
    Ok(())
}

/// Unit label and scale of each fitted parameter in laboratory units.
fn display_unit(name: &str) -> (&'static str, f64) {
    if name.ends_with("_hz") {
        ("MHz", MHZ)
    } else if name.ends_with("_cps") {
        ("Mcps", MCPS)
    } else if name.ends_with("_mw") {
        ("mW", 1.0)
    } else {
        ("permille", 1e-3)
    }
}

fn fit_json(kind: &str, fit: &FitResult) -> Value {
    let mut m = Map::new();
    m.insert("kind".into(), json!(kind));
    m.insert("converged".into(), json!(fit.converged));
    m.insert("residual_rms".into(), json!(fit.residual_rms));
    m.insert("iterations".into(), json!(fit.iterations));
    for p in &fit.params {
        let (unit, scale) = display_unit(&p.name);
        m.insert(p.name.clone(), json!(p.value));
        m.insert(format!("{}_sigma", p.name), json!(p.sigma));
        let stem = p
            .name
            .trim_end_matches("_hz")
            .trim_end_matches("_cps")
            .trim_end_matches("_mw");
        m.insert(
            format!("{stem}_display"),
            json!(format!(
                "{:.6} ± {:.6} {unit}",
                p.value / scale,
                p.sigma / scale
            )),
        );
    }
    Value::Object(m)
}

fn fit(a: FitArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?;
    let name = a.input.display().to_string();
    let (kind, result) = match a.kind {
        FitKind::Odmr => {
            let (spec, _) = parse_spectrum_csv(&text).with_context(|| name.clone())?;
            ("odmr", fit_lorentzian_multi(&spec, a.peaks as usize, None)?)
        }
        FitKind::Saturation => {
            let (p, c) = parse_saturation_csv(&text).with_context(|| name.clone())?;
            ("saturation", fit_saturation(&p, &c)?)
        }
    };
    if !result.converged {
        eprintln!("warning: fit did not converge; treat the parameters with suspicion");
    }
    print_json(fit_json(kind, &result))
}

fn invert(cfg: &RunConfig, a: InvertArgs) -> Result<()> {
    let consts = cfg.consts()?;
    let (nu1, nu2) = (a.nu1_mhz * MHZ, a.nu2_mhz * MHZ);
    if !(nu1 > 0.0 && nu2 > 0.0) {
        return Err(usage("--nu1-mhz and --nu2-mhz must be positive"));
    }
    if a.axial {
        let r = axial_invert(nu1, nu2, &consts)?;
        return print_json(json!({
            "method": "axial",
            "b0_t": r.b0_t,
            "theta_rad": 0.0,
            "consistency_residual_hz": r.consistency_residual_hz,
            "b0_display": format!("{:.4} G", r.b0_t / GAUSS),
            "consistency_residual_display": format!("{:.4} MHz", r.consistency_residual_hz / MHZ),
        }));
    }

    let b_max = a.b_max_gauss.unwrap_or(cfg.b_max_gauss);
    if b_max.is_nan() || b_max <= 0.0 {
        return Err(usage("--b-max-gauss must be positive"));
    }
    if a.sigma_mhz.is_nan() || a.sigma_mhz < 0.0 {
        return Err(usage("--sigma-mhz must be non-negative"));
    }
    let opts = InversionOptions {
        sigma_hz: a.sigma_mhz * MHZ,
        ..InversionOptions::default()
    };
    let r = Inverter::new(consts, b_max * GAUSS, opts)?.invert(nu1, nu2)?;
    let reasons: Vec<&str> = r.reasons.iter().map(|x| x.as_str()).collect();
    if r.degenerate {
        eprintln!(
            "warning: DEGENERATE solution ({}); the field is not uniquely determined",
            reasons.join(", ")
        );
    }
    let alternatives: Vec<String> = r
        .alternatives
        .iter()
        .map(|x| {
            format!(
                "{:.3} G at {:.2} deg",
                x.b0_t / GAUSS,
                x.theta_rad.to_degrees()
            )
        })
        .collect();
    print_json(json!({
        "method": "grid_gauss_newton",
        "degenerate": r.degenerate,
        "degeneracy_reasons": reasons.join(","),
        "b0_t": r.b0_t,
        "theta_rad": r.theta_rad,
        "residual_hz": r.residual_hz,
        "condition": if r.condition.is_finite() { json!(r.condition) } else { Value::Null },
        "alternative_count": r.alternatives.len(),
        "b0_display": format!("{:.4} G", r.b0_t / GAUSS),
        "theta_display": format!("{:.3} deg", r.theta_rad.to_degrees()),
        "residual_display": format!("{:.3} kHz", r.residual_hz / 1e3),
        "alternatives_display": alternatives.join("; "),
    }))
}

fn linspace(from: f64, to: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                to
            } else {
                from + (to - from) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

fn sweep(cfg: &RunConfig, a: SweepArgs) -> Result<()> {
    let (lo, hi, n_default) = match a.kind {
        SweepKind::Field => (0.0, 120.0, 241),
        SweepKind::Angle => (0.0, 90.0, 181),
        SweepKind::Laser => (1.0, 85.0, 85),
        SweepKind::Mw => (0.0, 30.0, 301),
    };
    let from = a.from.unwrap_or(lo);
    let to = a.to.unwrap_or(hi);
    let n = a.points.unwrap_or(n_default);
    if !(from.is_finite() && to.is_finite() && to > from) {
        return Err(usage(format!("need --from < --to, got {from} and {to}")));
    }
    if n < 2 {
        return Err(usage("--points must be at least 2"));
    }
    let valid = match a.kind {
        SweepKind::Field => from >= 0.0,
        SweepKind::Angle => from >= 0.0 && to <= 90.0 && a.b0_gauss > 0.0,
        SweepKind::Laser => from > 0.0,
        SweepKind::Mw => true,
    };
    if !valid {
        return Err(usage(
            "range out of bounds: field needs B >= 0, angle needs 0..90 deg and B0 > 0, laser needs P > 0",
        ));
    }
    let xs = linspace(from, to, n);
    let consts = cfg.consts()?;

    let mut out = open_output(a.output.as_deref())?;
    let mut meta: Vec<(String, String)> = vec![("kind".into(), sweep_name(a.kind).into())];
    let (columns, rows, plot): (Vec<&str>, Vec<Vec<f64>>, PlotData) = match a.kind {
        SweepKind::Field | SweepKind::Angle => {
            let table: Vec<SweepRow> = if a.kind == SweepKind::Field {
                let theta = a.theta_deg.to_radians();
                meta.push(("theta_rad".into(), theta.to_string()));
                let bs: Vec<f64> = xs.iter().map(|b| b * GAUSS).collect();
                field_sweep(&bs, theta, &consts).map_err(|e| usage(e.to_string()))?
            } else {
                let b0 = a.b0_gauss * GAUSS;
                meta.push(("b0_t".into(), b0.to_string()));
                let ts: Vec<f64> = xs.iter().map(|t| t.to_radians()).collect();
                let table = angle_sweep(b0, &ts, &consts)?;
                let min = table
                    .iter()
                    .min_by(|p, q| {
                        (p.nu1_hz - p.nu2_hz)
                            .abs()
                            .total_cmp(&(q.nu1_hz - q.nu2_hz).abs())
                    })
                    .expect("at least two rows");
                meta.push(("min_gap_theta_rad".into(), min.x.to_string()));
                eprintln!(
                    "closest approach of the lines at {:.2} deg",
                    min.x.to_degrees()
                );
                table
            };
            let head = if a.kind == SweepKind::Field {
                "b0_t"
            } else {
                "theta_rad"
            };
            let rows = table
                .iter()
                .map(|r| vec![r.x, r.nu1_hz, r.nu2_hz])
                .collect();
            let plot = PlotData {
                ys: vec![
                    ("nu1", table.iter().map(|r| r.nu1_hz / MHZ).collect()),
                    ("nu2", table.iter().map(|r| r.nu2_hz / MHZ).collect()),
                ],
                y_label: "resonance (MHz)",
            };
            (vec![head, "nu1_hz", "nu2_hz"], rows, plot)
        }
        SweepKind::Laser => {
            let table = laser_sweep_sensitivity(
                &xs,
                a.contrast,
                a.fwhm_mhz * MHZ,
                &cfg.saturation()?,
                &consts,
            )
            .map_err(|e| usage(e.to_string()))?;
            let rows = table
                .iter()
                .map(|r| vec![r.laser_mw, r.rate_cps, r.eta_t_per_sqrt_hz])
                .collect();
            let plot = PlotData {
                ys: vec![(
                    "eta",
                    table
                        .iter()
                        .map(|r| r.eta_t_per_sqrt_hz / MICROTESLA)
                        .collect(),
                )],
                y_label: "sensitivity (uT/sqrt(Hz))",
            };
            (
                vec!["laser_mw", "rate_cps", "eta_t_per_sqrt_hz"],
                rows,
                plot,
            )
        }
        SweepKind::Mw => {
            let rate = match a.rate_cps {
                Some(r) => r,
                None => photon_rate(cfg.laser_mw, &cfg.saturation()?)?,
            };
            let mw = cfg.mw()?;
            let sweep =
                mw_sweep_sensitivity(&xs, &mw, rate, &consts).map_err(|e| usage(e.to_string()))?;
            meta.push(("rate_cps".into(), rate.to_string()));
            meta.push(("argmin_mw_dbm".into(), sweep.optimum().mw_dbm.to_string()));
            meta.push((
                "analytic_optimum_mw_dbm".into(),
                mw_optimum_dbm(&mw).to_string(),
            ));
            eprintln!("best sensitivity at {:.2} dBm", sweep.optimum().mw_dbm);
            let rows = sweep
                .rows
                .iter()
                .map(|r| vec![r.mw_dbm, r.contrast, r.fwhm_hz, r.eta_t_per_sqrt_hz])
                .collect();
            let plot = PlotData {
                ys: vec![(
                    "eta",
                    sweep
                        .rows
                        .iter()
                        .map(|r| r.eta_t_per_sqrt_hz / MICROTESLA)
                        .collect(),
                )],
                y_label: "sensitivity (uT/sqrt(Hz))",
            };
            (
                vec!["mw_dbm", "contrast", "fwhm_hz", "eta_t_per_sqrt_hz"],
                rows,
                plot,
            )
        }
    };
    write_sweep_csv(&mut out, &meta, &columns, &rows).context("writing sweep")?;
    drop(out);

    if let Some(path) = &a.svg {
        let x_label = match a.kind {
            SweepKind::Field => "B0 (G)",
            SweepKind::Angle => "theta (deg)",
            SweepKind::Laser => "laser power (mW)",
            SweepKind::Mw => "microwave power (dBm)",
        };
        let series = plot
            .ys
            .iter()
            .map(|(name, ys)| svg::Series { name, xs: &xs, ys })
            .collect();
        write_svg(
            path,
            svg::Plot {
                title: sweep_name(a.kind),
                x_label,
                y_label: plot.y_label,
                series,
            },
        )?;
    }
    Ok(())
}

struct PlotData {
    ys: Vec<(&'static str, Vec<f64>)>,
    y_label: &'static str,
}

fn sweep_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Field => "field",
        SweepKind::Angle => "angle",
        SweepKind::Laser => "laser",
        SweepKind::Mw => "mw",
    }
}

fn sensitivity(cfg: &RunConfig, a: SensitivityArgs) -> Result<()> {
    let consts = cfg.consts()?;
    let rate = match (a.rate_cps, a.laser_mw) {
        (Some(r), _) => r,
        (None, Some(p)) => photon_rate(p, &cfg.saturation()?).map_err(|e| usage(e.to_string()))?,
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let fwhm = a.fwhm_mhz * MHZ;
    let eta =
        estimate_sensitivity(a.contrast, fwhm, rate, &consts).map_err(|e| usage(e.to_string()))?;
    print_json(json!({
        "contrast": a.contrast,
        "fwhm_hz": fwhm,
        "rate_cps": rate,
        "eta_t_per_sqrt_hz": eta,
        "contrast_display": format!("{:.3} permille", a.contrast * 1e3),
        "fwhm_display": format!("{:.3} MHz", a.fwhm_mhz),
        "rate_display": format!("{:.2} Mcps", rate / MCPS),
        "eta_display": format!("{:.3} uT/sqrt(Hz)", eta / MICROTESLA),
    }))
}
