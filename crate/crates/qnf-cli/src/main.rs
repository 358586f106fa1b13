//! Command line surface over the normal form engine.
//!
//! Exit codes: 0 when every executed check passed, 1 when a check failed,
//! 2 on input or usage errors.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand};

use qnf::models::{
    anharmonic, anharmonic_default_nmax, henon_heiles, henon_heiles_default_cutoff, load_model,
    Model,
};
use qnf::oracle::{exact_eigen, fit_slope_above_floor, log_grid, match_states, SlopeOutcome};
use qnf::verify::{
    expansion_checks, rs_equivalence_check, run_suite, SuiteConfig, AT_FLOOR_CEILING,
};
use qnf::{Expansion, MAX_ORDER, NOISE_FLOOR};

use report::{render, CoefficientRow, Format, ModelMeta, Param, Report, SlopeRow, SpectrumRow};

#[derive(Parser, Debug)]
#[command(
    name = "qnf",
    version,
    about = "Normal forms of perturbed self-adjoint operators by quantum averaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a bundled model end to end.
    Example(ExampleArgs),
    /// Expand a model file and report spectra plus internal invariants.
    Expand(ExpandArgs),
    /// Run the randomized certification suite on seeded models.
    Verify(VerifyArgs),
    /// Fit eigenvalue-error slopes across orders against exact spectra.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Write the report to this file instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report rendering.
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Args, Debug)]
struct ExampleArgs {
    /// Bundled model: anharmonic | henon-heiles.
    name: String,
    /// Expansion order N.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Evaluation points, comma separated. Default: none for anharmonic
    /// (coefficient table only), 1.0 for henon-heiles.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    epsilon: Option<Vec<f64>>,
    /// Report oscillator states j = 0..=jmax (anharmonic only).
    #[arg(long)]
    jmax: Option<usize>,
    /// Report levels k = 0..=kmax (henon-heiles only).
    #[arg(long)]
    kmax: Option<usize>,
    /// Oscillator basis truncation (anharmonic only).
    #[arg(long)]
    nmax: Option<usize>,
    /// Total-quanta basis cutoff (henon-heiles only).
    #[arg(long)]
    cutoff: Option<usize>,
    /// Coupling of x1^2 x2 (henon-heiles only).
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Coupling of x2^3 (henon-heiles only).
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ExpandArgs {
    /// Model file (JSON, see the model format in the documentation).
    model: PathBuf,
    /// Expansion order N.
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Evaluation points, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true,
          default_values_t = [0.1])]
    epsilon: Vec<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Root seed for the model family.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of random models.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Hilbert space dimension of each model.
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Number of unperturbed levels (degeneracies are drawn randomly).
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Expansion order N.
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// Slope-fit grid, comma separated. Default: 7 log-spaced points in
    /// [1e-3, 1e-1].
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    epsilon: Option<Vec<f64>>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// "anharmonic", "henon-heiles", or a model file path.
    target: String,
    /// Expansion orders to fit, comma separated.
    #[arg(long, visible_alias = "order", value_delimiter = ',', num_args = 1..,
          default_values_t = [1usize, 2, 3, 4])]
    orders: Vec<usize>,
    /// Error-fit grid, comma separated; needs at least 3 positive points.
    /// Default: 11 log-spaced points in [1e-3, 1e-1].
    #[arg(long, visible_alias = "epsilons", value_delimiter = ',', num_args = 1..)]
    epsilon: Option<Vec<f64>>,
    /// How many of the lowest states to track.
    #[arg(long, default_value_t = 3)]
    states: usize,
    #[command(flatten)]
    output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, output) = match &cli.command {
        Command::Example(args) => (cmd_example(args), &args.output),
        Command::Expand(args) => (cmd_expand(args), &args.output),
        Command::Verify(args) => (cmd_verify(args), &args.output),
        Command::Compare(args) => (cmd_compare(args), &args.output),
    };
    let report = match result {
        Ok(report) => report,
        Err(err) => {
            eprintln!("error: {err:#}");
            return ExitCode::from(2);
        }
    };
    let text = render(&report, output.format);
    if let Some(path) = &output.out {
        if let Err(err) = std::fs::write(path, &text) {
            eprintln!("error: writing {}: {err}", path.display());
            return ExitCode::from(2);
        }
    } else {
        print!("{text}");
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn check_order(order: usize) -> Result<usize> {
    if order < 1 || order > MAX_ORDER {
        bail!("--order must be between 1 and {MAX_ORDER}, got {order}");
    }
    Ok(order)
}

fn check_epsilons(eps: &[f64]) -> Result<()> {
    if let Some(bad) = eps.iter().find(|e| !e.is_finite()) {
        bail!("--epsilon values must be finite, got {bad}");
    }
    Ok(())
}

fn meta(model: &Model) -> ModelMeta {
    ModelMeta {
        name: model.name.clone(),
        dim: model.dim(),
        levels: model.basis.level_count(),
        hbar: model.hamiltonian.hbar(),
        parameters: model
            .parameters
            .iter()
            .map(|(key, value)| Param {
                key: key.clone(),
                value: *value,
            })
            .collect(),
    }
}

/// Coefficient rows, spectra, and invariant checks for levels 0..=cap.
fn fill_spectral_sections(
    report: &mut Report,
    exp: &Expansion,
    epsilons: &[f64],
    cap: usize,
) -> Result<()> {
    for level in 0..=cap {
        if let Some(coefficients) = exp.eigenvalue_coefficients(level) {
            report.coefficients.push(CoefficientRow {
                level,
                energy0: exp.basis().energy(level),
                coefficients,
            });
        }
    }
    for &eps in epsilons {
        let er = exp.eigen_report(eps)?;
        for level in 0..=cap {
            let block = &er.levels[level];
            for (state, (&value, &residual)) in
                block.values.iter().zip(&block.residuals).enumerate()
            {
                report.spectra.push(SpectrumRow {
                    epsilon: eps,
                    level,
                    state,
                    value,
                    residual,
                });
            }
        }
    }
    report.checks = expansion_checks(exp)?;
    Ok(())
}

fn cmd_example(args: &ExampleArgs) -> Result<Report> {
    let order = check_order(args.order)?;
    let reject = |given: bool, flag: &str, model: &str| -> Result<()> {
        if given {
            bail!("{flag} does not apply to the {model} model");
        }
        Ok(())
    };

    let (model, epsilons, cap) = match args.name.as_str() {
        "anharmonic" => {
            reject(args.kmax.is_some(), "--kmax", "anharmonic")?;
            reject(args.cutoff.is_some(), "--cutoff", "anharmonic")?;
            reject(args.alpha.is_some(), "--alpha", "anharmonic")?;
            reject(args.beta.is_some(), "--beta", "anharmonic")?;
            let jmax = args.jmax.unwrap_or(10);
            let nmax = args
                .nmax
                .unwrap_or_else(|| anharmonic_default_nmax(jmax, order));
            if nmax < 12 {
                bail!("--nmax must be at least 12, got {nmax}");
            }
            if jmax > nmax {
                bail!("--jmax {jmax} exceeds the basis truncation --nmax {nmax}");
            }
            let epsilons = args.epsilon.clone().unwrap_or_default();
            (anharmonic(nmax), epsilons, jmax)
        }
        "henon-heiles" => {
            reject(args.jmax.is_some(), "--jmax", "henon-heiles")?;
            reject(args.nmax.is_some(), "--nmax", "henon-heiles")?;
            let kmax = args.kmax.unwrap_or(2);
            let cutoff = args
                .cutoff
                .unwrap_or_else(|| henon_heiles_default_cutoff(kmax, order));
            if cutoff < 8 {
                bail!("--cutoff must be at least 8, got {cutoff}");
            }
            if kmax > cutoff {
                bail!("--kmax {kmax} exceeds the basis cutoff --cutoff {cutoff}");
            }
            let alpha = args.alpha.unwrap_or(0.1);
            let beta = args.beta.unwrap_or(0.1);
            if !alpha.is_finite() || !beta.is_finite() {
                bail!("--alpha and --beta must be finite");
            }
            let epsilons = args.epsilon.clone().unwrap_or_else(|| vec![1.0]);
            (henon_heiles(cutoff, alpha, beta), epsilons, kmax)
        }
        other => bail!("unknown model {other:?}; expected \"anharmonic\" or \"henon-heiles\""),
    };
    check_epsilons(&epsilons)?;

    let exp = model.expand(order).map_err(anyhow::Error::new)?;
    let mut report = Report::new("example", meta(&model), order);
    report.epsilons = epsilons.clone();
    fill_spectral_sections(&mut report, &exp, &epsilons, cap)?;
    Ok(report.finish())
}

fn cmd_expand(args: &ExpandArgs) -> Result<Report> {
    let order = check_order(args.order)?;
    check_epsilons(&args.epsilon)?;
    let model = load_model(&args.model).map_err(anyhow::Error::new)?;
    let exp = model.expand(order).map_err(anyhow::Error::new)?;

    let mut report = Report::new("expand", meta(&model), order);
    report.epsilons = args.epsilon.clone();
    let h = &model.hamiltonian;
    report.exact = Some(
        (1..=h.max_order()).all(|p| h.coefficient(p).expect("p in range").max_norm() == 0.0),
    );
    let cap = model.basis.level_count() - 1;
    fill_spectral_sections(&mut report, &exp, &args.epsilon, cap)?;
    Ok(report.finish())
}

fn cmd_verify(args: &VerifyArgs) -> Result<Report> {
    let order = check_order(args.order)?;
    if args.levels < 2 {
        bail!("--levels must be at least 2, got {}", args.levels);
    }
    if args.dim < args.levels {
        bail!(
            "--dim must be at least --levels, got dim {} < levels {}",
            args.dim,
            args.levels
        );
    }
    let epsilons = match &args.epsilon {
        Some(eps) => {
            check_epsilons(eps)?;
            eps.clone()
        }
        None => log_grid(1e-3, 1e-1, 7).expect("static grid"),
    };
    let config = SuiteConfig {
        seed: args.seed,
        trials: args.trials,
        dim: args.dim,
        levels: args.levels,
        order,
        epsilons,
    };
    let suite = run_suite(&config).map_err(anyhow::Error::new)?;

    let mut report = Report::new(
        "verify",
        ModelMeta {
            name: "seeded-random".to_string(),
            dim: config.dim,
            levels: config.levels,
            hbar: 1.0,
            parameters: vec![
                Param {
                    key: "seed".to_string(),
                    value: config.seed as f64,
                },
                Param {
                    key: "trials".to_string(),
                    value: config.trials as f64,
                },
            ],
        },
        order,
    );
    report.epsilons = config.epsilons;
    report.checks = suite.checks;
    Ok(report.finish())
}

fn cmd_compare(args: &CompareArgs) -> Result<Report> {
    let model = match args.target.as_str() {
        "anharmonic" => anharmonic(60),
        "henon-heiles" => henon_heiles(14, 0.1, 0.1),
        path => load_model(path).map_err(|e| anyhow!("target {path:?}: {e}"))?,
    };
    let epsilons = match &args.epsilon {
        Some(eps) => eps.clone(),
        None => log_grid(1e-3, 1e-1, 11).expect("static grid"),
    };
    if epsilons.len() < 3 {
        bail!("--epsilon needs at least 3 grid points for a slope fit");
    }
    if let Some(bad) = epsilons.iter().find(|e| !e.is_finite() || **e <= 0.0) {
        bail!("--epsilon grid must be positive and finite, got {bad}");
    }
    if args.orders.is_empty() {
        bail!("--orders needs at least one entry");
    }
    for &order in &args.orders {
        check_order(order)?;
    }
    let tracked = args.states.clamp(1, model.dim());

    let exacts = epsilons
        .iter()
        .map(|&eps| exact_eigen(&model.hamiltonian, eps))
        .collect::<qnf::Result<Vec<_>>>()
        .map_err(anyhow::Error::new)?;

    let mut report = Report::new("compare", meta(&model), *args.orders.iter().max().unwrap());
    report.epsilons = epsilons.clone();

    for &order in &args.orders {
        let exp = model.expand(order).map_err(anyhow::Error::new)?;
        let mut errs = Vec::with_capacity(epsilons.len());
        for (exact, &eps) in exacts.iter().zip(&epsilons) {
            let er = exp.eigen_report(eps).map_err(anyhow::Error::new)?;
            let pairing = match_states(exact, &er).map_err(anyhow::Error::new)?;
            for j in 0..tracked {
                if pairing.overlaps[j] * pairing.overlaps[j] < 0.5 {
                    bail!(
                        "pairing ambiguity at eps = {eps}, order {order}: state {j} \
                         overlaps its exact partner at only {:.4}",
                        pairing.overlaps[j]
                    );
                }
            }
            let approx = er.flat_values();
            let worst = (0..tracked)
                .map(|j| (approx[j] - exact.values[pairing.assignment[j]]).abs())
                .fold(0.0f64, f64::max);
            errs.push(worst);
        }
        let max_error = errs.iter().copied().fold(0.0f64, f64::max);
        let (band_lo, band_hi) = (order as f64 + 0.75, order as f64 + 1.25);
        let row = match fit_slope_above_floor(&epsilons, &errs, NOISE_FLOOR)
            .map_err(anyhow::Error::new)?
        {
            SlopeOutcome::Fit(fit) => SlopeRow {
                order,
                outcome: "fit".to_string(),
                slope: Some(fit.slope),
                r_squared: Some(fit.r_squared),
                points_used: fit.points_used,
                band_lo,
                band_hi,
                max_error,
                passed: fit.slope >= band_lo && fit.slope <= band_hi,
            },
            SlopeOutcome::AtFloor {
                max_norm,
                above_floor,
            } => SlopeRow {
                order,
                outcome: "at_floor".to_string(),
                slope: None,
                r_squared: None,
                points_used: above_floor,
                band_lo,
                band_hi,
                max_error: max_norm,
                passed: max_norm <= AT_FLOOR_CEILING,
            },
        };
        report.slopes.push(row);
    }

    // The order-2 block construction must agree with the direct
    // perturbation sums down at the rounding floor, independent of the
    // orders requested for the slope table.
    let exp2 = model.expand(2).map_err(anyhow::Error::new)?;
    let mut rs = rs_equivalence_check(&exp2).map_err(anyhow::Error::new)?;
    if rs.passed {
        rs.detail.push_str("; exact at the 1e-12 floor");
    }
    report.checks.push(rs);

    Ok(report.finish())
}
