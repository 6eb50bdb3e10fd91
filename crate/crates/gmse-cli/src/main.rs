//! `gmse`: fit a multinomial imputation model on a register, attach
//! linearised GMSE / CV accuracy estimates to census-style totals, validate
//! them by bootstrap and Monte Carlo, and run simulation studies.
//!
//! Exit codes: 0 ok, 2 input error, 3 numerical fallback (unless
//! `--allow-fallback`), 4 nonconvergence.

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gmse_core::kronecker::KroneckerWorkspace;
use gmse_core::linear::{CacheOptions, PluginCache};
use gmse_core::model::{
    fit_with_categories, probabilities, Coefficients, FitOptions, FittedModel, ProbabilityMatrix,
};
use gmse_core::register::DomainSpec;
use gmse_core::report::{
    attach_bootstrap, attach_mc, build_report, write_plot_data_csv, write_report_csv,
    write_study_csv, write_study_summary_csv, ReportRow,
};
use gmse_core::resampling::{bootstrap_gmse, mc_oracle, BootstrapCentre, ResamplingPlan};
use gmse_core::sim::{generate_register, run_comparison, StudySelection};
use gmse_core::{build_design_matrix, CovariateSchema, Reduction, Register, SimulationScenario};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

const EXIT_INPUT: i32 = 2;
const EXIT_FALLBACK: i32 = 3;
const EXIT_NONCONVERGENCE: i32 = 4;

#[derive(Parser)]
#[command(name = "gmse", version, about = "Register totals with linearised GMSE accuracy estimates")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Serial reductions for bit-identical runs regardless of chunking
    #[arg(long, global = true)]
    deterministic: bool,
    /// Exit 0 even when a numerical fallback (ridge / pseudo-inverse) fired
    #[arg(long, global = true)]
    allow_fallback: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the multinomial model and write the coefficient table
    Fit(FitCmd),
    /// Linearised GMSE / CV report for requested domains
    Gmse(GmseCmd),
    /// Bootstrap- and optionally MC-augmented report
    Validate(ValidateCmd),
    /// Run a simulation scenario end to end
    Simulate(SimulateCmd),
    /// Formulation-equivalence and finite-difference self-tests
    Check(CheckCmd),
}

#[derive(Args)]
struct ModelInputs {
    /// Register CSV (unit_id, covariates, sampled, pi, outcome)
    #[arg(long)]
    register: PathBuf,
    /// Covariate schema TOML
    #[arg(long)]
    schema: PathBuf,
    /// Skip fitting and use this coefficient table instead
    #[arg(long)]
    coefficients: Option<PathBuf>,
    /// Score max-norm convergence tolerance, scaled by n
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Ridge added to a singular Hessian
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    inputs: ModelInputs,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Standard,
    Kronecker,
    Both,
}

#[derive(Args)]
struct GmseCmd {
    #[command(flatten)]
    inputs: ModelInputs,
    /// `full`, `column=level`, or `column=*` for a whole partition
    #[arg(long, value_delimiter = ',', default_value = "full")]
    domains: Vec<String>,
    #[arg(long, value_enum, default_value_t = Engine::Standard)]
    engine: Engine,
    /// Also report the multinomial-draw GMSE variant
    #[arg(long)]
    draw_variant: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateCmd {
    #[command(flatten)]
    inputs: ModelInputs,
    #[arg(long, value_delimiter = ',', default_value = "full")]
    domains: Vec<String>,
    /// Bootstrap replicates (B)
    #[arg(long, short = 'B', default_value_t = 1000)]
    bootstrap_replicates: usize,
    /// MC design replicates (G); requires --truth
    #[arg(long, short = 'G')]
    design_replicates: Option<usize>,
    /// MC model replicates per design replicate (M); requires --truth
    #[arg(long, short = 'M')]
    model_replicates: Option<usize>,
    /// Truth table written by `simulate --emit-register`
    #[arg(long)]
    truth: Option<PathBuf>,
    /// True coefficient table for the MC warm start
    #[arg(long)]
    true_coefficients: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Centre bootstrap deviations on the replicate mean instead of the
    /// original estimate
    #[arg(long)]
    centre_replicate_mean: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateCmd {
    /// Scenario TOML
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's replicate count (S)
    #[arg(long, short = 'S')]
    populations: Option<usize>,
    #[arg(long, short = 'B')]
    bootstrap_replicates: Option<usize>,
    #[arg(long, short = 'G')]
    design_replicates: Option<usize>,
    #[arg(long, short = 'M')]
    model_replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list of estimators to run: lin, boot, mc
    #[arg(long, value_delimiter = ',', default_value = "lin,boot,mc")]
    estimators: Vec<String>,
    /// Also write one generated register (+ truth table and schema)
    #[arg(long)]
    emit_register: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckCmd {
    /// Random instances for the formulation-equivalence check
    #[arg(long, default_value_t = 5)]
    instances: usize,
    #[arg(long, default_value_t = 20250801)]
    seed: u64,
}

#[derive(Default)]
struct Flags {
    fallback: bool,
    nonconverged: bool,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("gmse: could not configure {t} threads: {e}");
        }
    }
    let mut flags = Flags::default();
    let code = match run(&cli, &mut flags) {
        Ok(()) => {
            if flags.nonconverged {
                eprintln!("gmse: model did not converge (exit 4)");
                EXIT_NONCONVERGENCE
            } else if flags.fallback && !cli.allow_fallback {
                eprintln!(
                    "gmse: numerical fallback was applied; rerun with --allow-fallback to accept (exit 3)"
                );
                EXIT_FALLBACK
            } else {
                0
            }
        }
        Err(err) => {
            eprintln!("gmse: {err:#}");
            classify(&err)
        }
    };
    std::process::exit(code);
}

fn classify(err: &anyhow::Error) -> i32 {
    use gmse_core::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        return match core {
            E::NonConvergence { .. } | E::NonConvergedModel => EXIT_NONCONVERGENCE,
            E::NotPositiveDefinite | E::NegativeGmse { .. } | E::TooManyDropped { .. } => 1,
            _ => EXIT_INPUT,
        };
    }
    EXIT_INPUT
}

fn run(cli: &Cli, flags: &mut Flags) -> anyhow::Result<()> {
    match &cli.command {
        Command::Fit(cmd) => cmd_fit(cmd, cli, flags),
        Command::Gmse(cmd) => cmd_gmse(cmd, cli, flags),
        Command::Validate(cmd) => cmd_validate(cmd, cli, flags),
        Command::Simulate(cmd) => cmd_simulate(cmd, cli),
        Command::Check(cmd) => cmd_check(cmd),
    }
}

fn fit_options(inputs: &ModelInputs, cli: &Cli) -> FitOptions {
    FitOptions {
        tol: inputs.tol,
        max_iter: inputs.max_iter,
        ridge: inputs.ridge,
        reduction: Reduction::serial_if(cli.deterministic),
    }
}

struct LoadedModel {
    register: Register,
    design: gmse_core::DesignMatrix,
    model: FittedModel,
}

fn load_and_fit(inputs: &ModelInputs, cli: &Cli, flags: &mut Flags) -> anyhow::Result<LoadedModel> {
    let schema = CovariateSchema::from_file(&inputs.schema)
        .with_context(|| format!("reading schema {}", inputs.schema.display()))?;
    let register = Register::from_csv_file(&inputs.register, &schema)
        .with_context(|| format!("reading register {}", inputs.register.display()))?;
    let design = build_design_matrix(&register)?;
    let k = schema.outcome_categories();
    let model = match &inputs.coefficients {
        Some(path) => {
            let (beta, _terms) = Coefficients::from_csv(
                std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
            )?;
            if beta.design_width() != design.n_cols() || beta.categories() != k {
                bail!(
                    "coefficient table is {} terms x {} categories but the design needs {} x {k}",
                    beta.design_width(),
                    beta.categories(),
                    design.n_cols()
                );
            }
            let fitted_probabilities = probabilities(&design, &beta)?;
            FittedModel {
                coefficients: beta,
                fitted_probabilities,
                iterations: 0,
                final_score_norm: f64::NAN,
                ridge_used: 0.0,
                converged: true,
            }
        }
        None => {
            let opts = fit_options(inputs, cli);
            let model = fit_with_categories(
                &design,
                register.observed_outcome(),
                &register.lambda_weights(),
                &opts,
                None,
                k,
            )?;
            if model.ridge_used > 0.0 {
                flags.fallback = true;
            }
            if !model.converged {
                flags.nonconverged = true;
            }
            model
        }
    };
    Ok(LoadedModel { register, design, model })
}

fn parse_domains(register: &Register, specs: &[String]) -> anyhow::Result<Vec<DomainSpec>> {
    let mut out = Vec::new();
    for spec in specs {
        let spec = spec.trim();
        if spec.is_empty() {
            continue;
        }
        if spec == "full" {
            out.push(register.full_domain());
        } else if let Some((col, level)) = spec.split_once('=') {
            if level == "*" {
                out.extend(register.domain_partition(col)?);
            } else {
                let d = register.domain_vector(col, level)?;
                if let Some(w) = &d.warning {
                    eprintln!("gmse: warning: {w}");
                }
                out.push(d);
            }
        } else {
            bail!("domain '{spec}' is not 'full', 'column=level' or 'column=*'");
        }
    }
    if out.is_empty() {
        bail!("no domains requested");
    }
    Ok(out)
}

fn ensure_out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_fit(cmd: &FitCmd, cli: &Cli, flags: &mut Flags) -> anyhow::Result<()> {
    let t0 = Instant::now();
    let loaded = load_and_fit(&cmd.inputs, cli, flags)?;
    ensure_out_dir(&cmd.out)?;
    let coeff_path = cmd.out.join("coefficients.csv");
    let mut f = std::fs::File::create(&coeff_path)?;
    loaded.model.coefficients.to_csv(loaded.design.column_names(), &mut f)?;
    let diag_path = cmd.out.join("fit_diagnostics.json");
    let diag = serde_json::json!({
        "n_units": loaded.register.n_units(),
        "n_sampled": loaded.register.n_sampled(),
        "design_columns": loaded.design.n_cols(),
        "categories": loaded.register.schema().outcome_categories(),
        "iterations": loaded.model.iterations,
        "final_score_norm": loaded.model.final_score_norm,
        "ridge_used": loaded.model.ridge_used,
        "converged": loaded.model.converged,
        "seconds": t0.elapsed().as_secs_f64(),
    });
    std::fs::write(&diag_path, serde_json::to_string_pretty(&diag)?)?;
    println!(
        "fitted {} categories x {} terms in {} iterations ({:.2} s); wrote {} and {}",
        loaded.register.schema().outcome_categories(),
        loaded.design.n_cols(),
        loaded.model.iterations,
        t0.elapsed().as_secs_f64(),
        coeff_path.display(),
        diag_path.display()
    );
    Ok(())
}

fn cmd_gmse(cmd: &GmseCmd, cli: &Cli, flags: &mut Flags) -> anyhow::Result<()> {
    let loaded = load_and_fit(&cmd.inputs, cli, flags)?;
    if flags.nonconverged {
        return Err(anyhow!(gmse_core::Error::NonConvergedModel));
    }
    let domains = parse_domains(&loaded.register, &cmd.domains)?;
    ensure_out_dir(&cmd.out)?;

    let cache_opts = CacheOptions {
        ridge: cmd.inputs.ridge,
        allow_nonconverged: false,
        reduction: Reduction::serial_if(cli.deterministic),
    };

    let mut rows: Option<Vec<ReportRow>> = None;
    let mut kf_values = None;

    if matches!(cmd.engine, Engine::Standard | Engine::Both) {
        let t_cache = Instant::now();
        let cache = PluginCache::build(&loaded.model, &loaded.register, &loaded.design, &cache_opts)?;
        let cache_secs = t_cache.elapsed().as_secs_f64();
        if cache.flags.any() {
            flags.fallback = true;
        }
        let t_q = Instant::now();
        let built = build_report(&loaded.register, &cache, &domains, cmd.draw_variant)?;
        let query_secs = t_q.elapsed().as_secs_f64();
        println!(
            "standard engine: cache build {:.3} s; {} domain quer{} took {:.3} s ({:.1} ms each)",
            cache_secs,
            domains.len(),
            if domains.len() == 1 { "y" } else { "ies" },
            query_secs,
            1e3 * query_secs / domains.len() as f64
        );
        rows = Some(built);
    }
    if matches!(cmd.engine, Engine::Kronecker | Engine::Both) {
        let t_kf = Instant::now();
        let ws = KroneckerWorkspace::build(
            &loaded.design,
            &loaded.model.coefficients,
            loaded.register.inclusion_prob(),
            None,
        )?;
        let values = ws.gmse(&domains)?;
        println!(
            "kronecker engine: {} (domain, category) results in {:.3} s",
            values.len(),
            t_kf.elapsed().as_secs_f64()
        );
        kf_values = Some(values);
    }

    let rows = match (rows, &kf_values) {
        (Some(rows), Some(kf)) => {
            // engine=both: assert the two formulations agree
            let k = loaded.register.schema().outcome_categories();
            for (d, dom) in domains.iter().enumerate() {
                for kk in 0..k {
                    let std_v = rows[d * k + kk].gmse_lin;
                    let kf_v = kf[[d, kk]];
                    let denom = std_v.abs().max(kf_v.abs()).max(1e-300);
                    if (std_v - kf_v).abs() / denom > 1e-8 {
                        bail!(
                            "engine disagreement at domain '{}' category {}: standard {std_v} vs kronecker {kf_v}",
                            dom.name,
                            kk + 1
                        );
                    }
                }
            }
            println!("engines agree within 1e-8 on every (domain, category)");
            rows
        }
        (Some(rows), None) => rows,
        (None, Some(kf)) => kf_rows(&loaded, &domains, kf)?,
        (None, None) => unreachable!("at least one engine always runs"),
    };

    let report_path = cmd.out.join("report.csv");
    write_report_csv(&rows, std::fs::File::create(&report_path)?)?;
    let plot_path = cmd.out.join("plot_data.csv");
    write_plot_data_csv(&rows, std::fs::File::create(&plot_path)?)?;
    print_console_summary(&rows);
    println!("wrote {} and {}", report_path.display(), plot_path.display());
    Ok(())
}

fn kf_rows(
    loaded: &LoadedModel,
    domains: &[DomainSpec],
    kf: &ndarray::Array2<f64>,
) -> anyhow::Result<Vec<ReportRow>> {
    let k = loaded.register.schema().outcome_categories();
    let mut rows = Vec::new();
    for (d, dom) in domains.iter().enumerate() {
        let theta = gmse_core::predict_totals(&loaded.model, dom);
        let n_kd = loaded.register.sampled_category_counts(dom);
        for kk in 0..k {
            let g = kf[[d, kk]];
            rows.push(ReportRow {
                domain: dom.name.clone(),
                category: kk + 1,
                theta_hat: theta[kk],
                n_kd: n_kd[kk],
                gmse_lin: g,
                cv: gmse_core::cv(theta[kk], g).ok(),
                gmse_draw: None,
                gmse_boot: None,
                cv_boot: None,
                gmse_mc: None,
                cv_mc: None,
                warning: dom.warning.clone(),
            });
        }
    }
    Ok(rows)
}

fn print_console_summary(rows: &[ReportRow]) {
    println!(
        "{:<22} {:>3} {:>14} {:>8} {:>16} {:>9}",
        "domain", "k", "theta_hat", "n_kd", "gmse_lin", "cv"
    );
    for r in rows {
        println!(
            "{:<22} {:>3} {:>14.1} {:>8} {:>16.1} {:>9}",
            r.domain,
            r.category,
            r.theta_hat,
            r.n_kd,
            r.gmse_lin,
            r.cv.map(|c| format!("{:.2}%", c * 100.0)).unwrap_or_else(|| "-".into()),
        );
    }
}

fn read_truth(path: &Path, register: &Register) -> anyhow::Result<(ProbabilityMatrix, Vec<u16>)> {
    let k = register.schema().outcome_categories();
    let n = register.n_units();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut probs = ndarray::Array2::<f64>::zeros((n, k));
    let mut outcomes = vec![0u16; n];
    let mut seen = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if i >= n {
            bail!("truth table has more rows than the register");
        }
        for kk in 0..k {
            let cell = rec
                .get(1 + kk)
                .ok_or_else(|| anyhow!("truth table row {} too short", i + 1))?;
            probs[[i, kk]] = cell.parse().with_context(|| format!("truth row {}", i + 1))?;
        }
        let y: usize = rec
            .get(1 + k)
            .ok_or_else(|| anyhow!("truth table row {} missing outcome", i + 1))?
            .parse()?;
        if y < 1 || y > k {
            bail!("truth outcome {y} out of 1..{k} at row {}", i + 1);
        }
        outcomes[i] = (y - 1) as u16;
        seen += 1;
    }
    if seen != n {
        bail!("truth table has {seen} rows, register has {n}");
    }
    Ok((ProbabilityMatrix::from_array(probs)?, outcomes))
}

fn write_truth(
    path: &Path,
    truth: &gmse_core::SimulationTruth,
    register: &Register,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = truth.probabilities.categories();
    let mut header = vec!["unit_id".to_string()];
    header.extend((1..=k).map(|kk| format!("p_{kk}")));
    header.push("outcome".into());
    w.write_record(&header)?;
    for i in 0..register.n_units() {
        let mut rec = vec![register.unit_ids()[i].clone()];
        for &p in truth.probabilities.row(i) {
            rec.push(format!("{p}"));
        }
        rec.push((truth.outcomes[i] + 1).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_validate(cmd: &ValidateCmd, cli: &Cli, flags: &mut Flags) -> anyhow::Result<()> {
    let mc_requested = cmd.design_replicates.is_some() || cmd.model_replicates.is_some();
    if mc_requested && cmd.truth.is_none() {
        return Err(anyhow!(gmse_core::Error::TruthRequired));
    }
    let loaded = load_and_fit(&cmd.inputs, cli, flags)?;
    if flags.nonconverged {
        return Err(anyhow!(gmse_core::Error::NonConvergedModel));
    }
    let domains = parse_domains(&loaded.register, &cmd.domains)?;
    ensure_out_dir(&cmd.out)?;
    let fit_opts = fit_options(&cmd.inputs, cli);
    let cache_opts = CacheOptions {
        ridge: cmd.inputs.ridge,
        allow_nonconverged: false,
        reduction: Reduction::serial_if(cli.deterministic),
    };
    let cache = PluginCache::build(&loaded.model, &loaded.register, &loaded.design, &cache_opts)?;
    if cache.flags.any() {
        flags.fallback = true;
    }
    let mut rows = build_report(&loaded.register, &cache, &domains, false)?;

    let plan = ResamplingPlan {
        bootstrap_replicates: cmd.bootstrap_replicates,
        design_replicates: cmd.design_replicates.unwrap_or(0),
        model_replicates: cmd.model_replicates.unwrap_or(0),
        seed: cmd.seed,
        workers: cli.threads,
    };

    if plan.bootstrap_replicates > 0 {
        let t0 = Instant::now();
        let centre = if cmd.centre_replicate_mean {
            BootstrapCentre::ReplicateMean
        } else {
            BootstrapCentre::OriginalEstimate
        };
        let boot = bootstrap_gmse(
            &loaded.register,
            &loaded.design,
            &loaded.model,
            &fit_opts,
            &domains,
            &plan,
            centre,
        )?;
        println!(
            "bootstrap: {} replicates ({} dropped) in {:.1} s",
            boot.replicates.requested,
            boot.replicates.dropped,
            t0.elapsed().as_secs_f64()
        );
        attach_bootstrap(&mut rows, &domains, &boot);
    }

    if mc_requested {
        let truth_path = cmd.truth.as_ref().expect("presence checked above");
        let (true_p, _true_y) = read_truth(truth_path, &loaded.register)?;
        let true_beta = match &cmd.true_coefficients {
            Some(path) => Coefficients::from_csv(std::fs::File::open(path)?)?.0,
            None => loaded.model.coefficients.clone(),
        };
        let t0 = Instant::now();
        let mc = mc_oracle(
            &loaded.design,
            loaded.register.inclusion_prob(),
            &true_p,
            &true_beta,
            &domains,
            &plan,
            &fit_opts,
        )?;
        println!(
            "monte carlo: {} replicates ({} dropped) in {:.1} s",
            mc.replicates.requested,
            mc.replicates.dropped,
            t0.elapsed().as_secs_f64()
        );
        attach_mc(&mut rows, &domains, &mc);
    }

    let path = cmd.out.join("report.csv");
    write_report_csv(&rows, std::fs::File::create(&path)?)?;
    print_console_summary(&rows);
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_simulate(cmd: &SimulateCmd, cli: &Cli) -> anyhow::Result<()> {
    let mut scenario = SimulationScenario::from_file(&cmd.scenario)
        .with_context(|| format!("reading scenario {}", cmd.scenario.display()))?;
    if let Some(s) = cmd.populations {
        scenario.replication.populations = s;
    }
    if let Some(b) = cmd.bootstrap_replicates {
        scenario.replication.plan.bootstrap_replicates = b;
    }
    if let Some(g) = cmd.design_replicates {
        scenario.replication.plan.design_replicates = g;
    }
    if let Some(m) = cmd.model_replicates {
        scenario.replication.plan.model_replicates = m;
    }
    if let Some(seed) = cmd.seed {
        scenario.seed = seed;
        scenario.replication.plan.seed = seed;
    }
    let mut selection = StudySelection { linearised: false, bootstrap: false, monte_carlo: false };
    for e in &cmd.estimators {
        match e.trim() {
            "lin" => selection.linearised = true,
            "boot" => selection.bootstrap = true,
            "mc" => selection.monte_carlo = true,
            "" => {}
            other => bail!("unknown estimator '{other}' (expected lin, boot, mc)"),
        }
    }
    ensure_out_dir(&cmd.out)?;
    let fit_opts =
        FitOptions { reduction: Reduction::serial_if(cli.deterministic), ..Default::default() };

    if cmd.emit_register {
        let (register, truth) = generate_register(&scenario, scenario.seed)?;
        let reg_path = cmd.out.join("register.csv");
        register.to_csv(std::fs::File::create(&reg_path)?)?;
        let truth_path = cmd.out.join("truth.csv");
        write_truth(&truth_path, &truth, &register)?;
        let schema_path = cmd.out.join("schema.toml");
        std::fs::write(&schema_path, register.schema().to_toml_string())?;
        println!(
            "wrote {}, {} and {}",
            reg_path.display(),
            truth_path.display(),
            schema_path.display()
        );
    }

    if selection.linearised || selection.bootstrap || selection.monte_carlo {
        let t0 = Instant::now();
        let report = run_comparison(&scenario, selection, &fit_opts)?;
        let study_path = cmd.out.join("study.csv");
        write_study_csv(&report, std::fs::File::create(&study_path)?)?;
        let summary_path = cmd.out.join("study_summary.csv");
        write_study_summary_csv(&report, std::fs::File::create(&summary_path)?)?;
        println!(
            "scenario '{}': {} replicate(s) in {:.1} s; wrote {} and {}",
            scenario.name,
            scenario.replication.populations,
            t0.elapsed().as_secs_f64(),
            study_path.display(),
            summary_path.display()
        );
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "{:<6} {:>3} {:>12} {:>12} {:>12}", "est", "k", "cv_q25", "cv_median", "cv_q75")?;
        for s in &report.summary {
            writeln!(
                stdout,
                "{:<6} {:>3} {:>11.3}% {:>11.3}% {:>11.3}%",
                s.estimator.label(),
                s.category,
                s.q25 * 100.0,
                s.median * 100.0,
                s.q75 * 100.0
            )?;
        }
    }
    Ok(())
}

fn cmd_check(cmd: &CheckCmd) -> anyhow::Result<()> {
    let mut failures = 0usize;
    gmse_core::selfcheck::run(cmd.instances, cmd.seed, &mut |name, ok, detail| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    })?;
    if failures > 0 {
        bail!("{failures} self-check(s) failed");
    }
    Ok(())
}
