use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use pccnmf::clustering::{export_cluster_montage, natural_clusters};
use pccnmf::dataset::{
    apply_flip_noise, binarize, generate_swimmer, load_matrix, rescale, save_csv, write_sidecar,
    MatrixFormat, Sidecar, SwimmerSpec,
};
use pccnmf::denoising::{find_r_range, DenoiseConfig};
use pccnmf::pcc_analysis::analyze;
use pccnmf::prob_model::marginal_residuals;
use pccnmf::rank_scan::{estimate_rc, estimate_rc_dual, local_minima, BicVariant, ScanConfig};
use pccnmf::report::{RunReport, Timestamps};
use pccnmf::stability::{histogram_csv, stability_experiment, StabilityConfig, StabilityMode};
use pccnmf::{derive_pcc, factorize, DataMatrix, Factorization, Scale, SolverOptions};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{
    AnalyzeArgs, Baseline, Cli, ClusterArgs, Command, DenoiseArgs, FactorizeArgs, InputArgs,
    InputFormat, Mode, PerturbArgs, RankScanArgs, ReportArgs, SolverArgs, StabilityArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let started = now();
    let report = match &cli.command {
        Command::SwimmerGen { output } => swimmer_gen(output)?,
        Command::Perturb(args) => perturb(cli, args)?,
        Command::Factorize(args) => factorize_cmd(cli, args)?,
        Command::RankScan(args) => rank_scan(cli, args)?,
        Command::Stability(args) => stability(cli, args)?,
        Command::Analyze(args) => analyze_cmd(args)?,
        Command::Cluster(args) => cluster(args)?,
        Command::Denoise(args) => denoise(cli, args)?,
        Command::Report(args) => return bundle(args),
    };
    let Some((mut report, dest)) = report else {
        return Ok(());
    };
    if cli.timestamps {
        report.timestamps = Some(Timestamps {
            started,
            finished: now(),
        });
    }
    match dest {
        Some(path) => report.save(&path)?,
        None => print!("{}", report.to_json()?),
    }
    Ok(())
}

/// Machine-readable class of a failure, for the JSON error body.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    match err.downcast_ref::<pccnmf::Error>() {
        Some(pccnmf::Error::Parameter(_)) => "parameter",
        Some(pccnmf::Error::Degenerate(_)) => "degenerate",
        Some(pccnmf::Error::Config(_)) => "config",
        Some(pccnmf::Error::Format { .. }) => "format",
        Some(pccnmf::Error::UndefinedCorrelation(_)) => "undefined_correlation",
        Some(pccnmf::Error::Io { .. }) => "io",
        Some(pccnmf::Error::Json(_)) => "json",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "other",
    }
}

type Outcome = Option<(RunReport, Option<std::path::PathBuf>)>;

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn load(input: &InputArgs) -> Result<DataMatrix> {
    let format = match input.format {
        InputFormat::Csv => MatrixFormat::Csv,
        InputFormat::PgmDir => MatrixFormat::PgmDir,
    };
    load_matrix(&input.input, format).with_context(|| format!("loading {}", input.input.display()))
}

fn digest(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for entry in entries.iter().filter(|p| p.is_file()) {
            hasher.update(entry.file_name().unwrap_or_default().as_encoded_bytes());
            hasher.update(fs::read(entry)?);
        }
    } else {
        hasher.update(fs::read(path)?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn solver_options(solver: &SolverArgs) -> SolverOptions {
    SolverOptions {
        max_iters: solver.max_iters,
        rel_tol: solver.tol,
        ..SolverOptions::default()
    }
}

fn solver_json(solver: &SolverArgs) -> Value {
    json!({
        "loss": solver.loss,
        "max_iters": solver.max_iters,
        "tol": solver.tol,
    })
}

fn input_json(input: &InputArgs) -> Value {
    json!({
        "input": input.input,
        "format": match input.format {
            InputFormat::Csv => "csv",
            InputFormat::PgmDir => "pgm-dir",
        },
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(a), Value::Object(b)) = (&mut base, extra) {
        a.extend(b);
    }
    base
}

fn with_digest(mut report: RunReport, name: &str, path: &Path) -> Result<RunReport> {
    report.input_digests.insert(name.to_string(), digest(path)?);
    Ok(report)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn seed_range(start: u64, count: u64) -> Vec<u64> {
    (start..start + count).collect()
}

fn unit_scaled(m: DataMatrix) -> DataMatrix {
    match m.scale() {
        Scale::Unit => m,
        Scale::Raw255 => rescale(&m),
    }
}

fn swimmer_gen(output: &Path) -> Result<Outcome> {
    let m = generate_swimmer(&SwimmerSpec::default())?;
    save_csv(output, &m)?;
    write_sidecar(output, &Sidecar::for_matrix(&m, "swimmer"))?;
    Ok(None)
}

fn perturb(cli: &Cli, args: &PerturbArgs) -> Result<Outcome> {
    let m = unit_scaled(load(&args.input)?);
    let mut sidecar;
    let out = if args.binarize {
        let out = binarize(&m)?;
        sidecar = Sidecar::for_matrix(&out, "binarize");
        out
    } else {
        let xi = args.xi.expect("clap requires --xi without --binarize");
        let out = apply_flip_noise(&m, xi, cli.seed)?;
        sidecar = Sidecar::for_matrix(&out, "flip_noise");
        sidecar.seed = Some(cli.seed);
        sidecar.xi = Some(xi);
        out
    };
    save_csv(&args.output, &out)?;
    write_sidecar(&args.output, &sidecar)?;
    Ok(None)
}

fn factorize_cmd(cli: &Cli, args: &FactorizeArgs) -> Result<Outcome> {
    let m = load(&args.input)?;
    let f = factorize(&m, args.rank, args.solver.loss, cli.seed, &solver_options(&args.solver))?;
    f.save(&args.output)?;
    let residuals = marginal_residuals(&m, &f)?;
    let params = merge(
        merge(input_json(&args.input), solver_json(&args.solver)),
        json!({ "rank": args.rank, "output": args.output }),
    );
    let report = RunReport::new("factorize", params, vec![cli.seed])
        .with_output(
            "nmf_engine",
            &json!({
                "rank": f.rank(),
                "iterations": f.iterations(),
                "final_loss": f.final_loss(),
                "converged": f.converged,
            }),
        )?
        .with_output("marginal_residuals", &residuals)?;
    let report = with_digest(report, "input", &args.input.input)?;
    Ok(Some((report, Some(args.output.join("report.json")))))
}

fn rank_scan(cli: &Cli, args: &RankScanArgs) -> Result<Outcome> {
    let m = load(&args.input)?;
    let seeds = seed_range(cli.seed, args.seeds);
    let cfg = ScanConfig {
        loss: args.solver.loss,
        opts: solver_options(&args.solver),
        threads: cli.threads,
        ..ScanConfig::new(args.r_min, args.r_max, args.tau, seeds.clone())
    };
    let scan = if args.dual {
        estimate_rc_dual(&m, &cfg)?
    } else {
        estimate_rc(&m, &cfg)?
    };
    let bic_minima: BTreeMap<String, Vec<usize>> = BicVariant::ALL
        .iter()
        .map(|&v| (format!("{v:?}").to_lowercase(), local_minima(&scan.bic_curve(v))))
        .collect();
    let params = merge(
        merge(input_json(&args.input), solver_json(&args.solver)),
        json!({
            "r_min": args.r_min,
            "r_max": args.r_max,
            "tau": args.tau,
            "seeds": args.seeds,
            "dual": args.dual,
        }),
    );
    let report = RunReport::new("rank-scan", params, seeds)
        .with_output("rank_scan", &scan)?
        .with_output("bic_local_minima", &bic_minima)?;
    let report = with_digest(report, "input", &args.input.input)?;
    let dest = match &args.output {
        Some(dir) => {
            create_dir(dir)?;
            write_text(&dir.join("curves.csv"), &scan.to_csv())?;
            Some(dir.join("report.json"))
        }
        None => None,
    };
    Ok(Some((report, dest)))
}

fn stability(cli: &Cli, args: &StabilityArgs) -> Result<Outcome> {
    let m = load(&args.input)?;
    let (mode, m) = match args.mode {
        Mode::NoiseSplit => (StabilityMode::NoiseSplit, unit_scaled(m)),
        Mode::SeedPair => (StabilityMode::SeedPair, m),
    };
    let seed_a = args.seed_a.unwrap_or(cli.seed);
    let seed_b = args.seed_b.unwrap_or(cli.seed.wrapping_add(1));
    let cfg = StabilityConfig {
        rank: args.rank,
        mode,
        xi: args.xi,
        seed_a,
        seed_b,
        loss: args.solver.loss,
        opts: solver_options(&args.solver),
    };
    let outcome = stability_experiment(&m, &cfg)?;
    let params = merge(
        merge(input_json(&args.input), solver_json(&args.solver)),
        json!({
            "mode": mode,
            "rank": args.rank,
            "xi": args.xi,
            "seed_a": seed_a,
            "seed_b": seed_b,
        }),
    );
    let report = RunReport::new("stability", params, vec![seed_a, seed_b])
        .with_output("stability", &outcome)?;
    let report = with_digest(report, "input", &args.input.input)?;
    let dest = match &args.output {
        Some(dir) => {
            create_dir(dir)?;
            write_text(&dir.join("histogram.csv"), &histogram_csv(&outcome.histogram))?;
            Some(dir.join("report.json"))
        }
        None => None,
    };
    Ok(Some((report, dest)))
}

fn load_factorization(m: &DataMatrix, dir: &Path) -> Result<Factorization> {
    let f = Factorization::load(dir).with_context(|| format!("loading factorization {}", dir.display()))?;
    if f.basis.nrows() != m.rows() || f.weights.ncols() != m.cols() {
        bail!(pccnmf::Error::Parameter(format!(
            "factorization is {}x{} but data is {}x{}",
            f.basis.nrows(),
            f.weights.ncols(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(f)
}

fn factorization_digests(report: RunReport, input: &Path, dir: &Path) -> Result<RunReport> {
    let report = with_digest(report, "input", input)?;
    let report = with_digest(report, "basis", &dir.join("B.csv"))?;
    with_digest(report, "weights", &dir.join("W.csv"))
}

fn analyze_cmd(args: &AnalyzeArgs) -> Result<Outcome> {
    let m = load(&args.input)?;
    let f = load_factorization(&m, &args.factorization)?;
    let pcc = derive_pcc(&m, &f)?;
    let analysis = analyze(&pcc);
    let params = merge(
        input_json(&args.input),
        json!({ "factorization": args.factorization }),
    );
    let report = RunReport::new("analyze", params, vec![f.seed]).with_output("pcc_analysis", &analysis)?;
    let report = factorization_digests(report, &args.input.input, &args.factorization)?;
    Ok(Some((report, args.output.clone())))
}

fn cluster(args: &ClusterArgs) -> Result<Outcome> {
    let m = load(&args.input)?;
    let f = load_factorization(&m, &args.factorization)?;
    let pcc = derive_pcc(&m, &f)?;
    let clusters = natural_clusters(&pcc, args.k, args.require_positive)?;
    if let Some(dir) = &args.montage {
        export_cluster_montage(&clusters, &m, &f, dir)?;
    }
    let params = merge(
        input_json(&args.input),
        json!({
            "factorization": args.factorization,
            "k": args.k,
            "require_positive": args.require_positive,
            "montage": args.montage,
        }),
    );
    let report = RunReport::new("cluster", params, vec![f.seed]).with_output("clustering", &clusters)?;
    let report = factorization_digests(report, &args.input.input, &args.factorization)?;
    Ok(Some((report, args.output.clone())))
}

fn denoise(cli: &Cli, args: &DenoiseArgs) -> Result<Outcome> {
    let clean = unit_scaled(load(&args.input)?);
    let noise_seed = args.noise_seed.unwrap_or(cli.seed);
    let noisy = match (&args.noisy, args.xi) {
        (Some(path), _) => unit_scaled(load(&InputArgs {
            input: path.clone(),
            format: args.input.format,
        })?),
        (None, Some(xi)) => apply_flip_noise(&clean, xi, noise_seed)?,
        (None, None) => unreachable!("clap requires --noisy or --xi"),
    };
    let seeds = seed_range(cli.seed, args.seeds);
    let cfg = DenoiseConfig {
        loss: args.solver.loss,
        opts: solver_options(&args.solver),
        svd_baseline: matches!(args.baseline, Baseline::Svd),
        threads: cli.threads,
        ..DenoiseConfig::new(args.exclusions, seeds.clone())
    };
    let result = find_r_range(&clean, &noisy, args.r_lo, args.r_hi, &cfg)?;
    let params = merge(
        merge(input_json(&args.input), solver_json(&args.solver)),
        json!({
            "noisy": args.noisy,
            "xi": args.xi,
            "noise_seed": args.xi.map(|_| noise_seed),
            "r_lo": args.r_lo,
            "r_hi": args.r_hi,
            "exclusions": args.exclusions,
            "baseline": match args.baseline {
                Baseline::None => "none",
                Baseline::Svd => "svd",
            },
            "seeds": args.seeds,
        }),
    );
    let report = RunReport::new("denoise", params, seeds).with_output("denoising", &result)?;
    let mut report = with_digest(report, "clean", &args.input.input)?;
    if let Some(path) = &args.noisy {
        report = with_digest(report, "noisy", path)?;
    }
    let dest = match &args.output {
        Some(dir) => {
            create_dir(dir)?;
            write_text(&dir.join("denoise.csv"), &result.to_csv())?;
            Some(dir.join("report.json"))
        }
        None => None,
    };
    Ok(Some((report, dest)))
}

fn bundle(args: &ReportArgs) -> Result<()> {
    let mut reports = Vec::with_capacity(args.reports.len());
    let mut index = String::from("file,command,schema,software_version\n");
    for path in &args.reports {
        let report = RunReport::load(path)?;
        index.push_str(&format!(
            "{},{},{},{}\n",
            path.display(),
            report.command,
            report.schema,
            report.software_version
        ));
        reports.push(json!({ "file": path, "report": report }));
    }
    let body = json!({
        "schema": pccnmf::report::SCHEMA_VERSION,
        "reports": reports,
    });
    write_text(&args.output, &(serde_json::to_string_pretty(&body)? + "\n"))?;
    write_text(&args.output.with_extension("csv"), &index)?;
    Ok(())
}
