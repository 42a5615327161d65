use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use trajsim::alignment::Side;
use trajsim::cohort::{parse_cohort, write_cohort, DEFAULT_HORIZON};
use trajsim::datagen::{generate_patients, summarize, GeneratorConfig, PetMode};
use trajsim::evaluation::{evaluate_with, method_distances, EvalConfig};
use trajsim::similarity::pairwise_distances;
use trajsim::{align, Cohort, Method, Modality, Series, Variant};

mod cache;

use cache::{cohort_key, DistanceCache};

/// Patient similarity by subsequence alignment of visit histories.
#[derive(Parser, Debug)]
#[command(name = "trajsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort file.
    Simulate(SimulateArgs),
    /// Align two series files and print the distance and warping path.
    Align(AlignArgs),
    /// Write the pairwise distance matrix of a cohort's labelled instances.
    Distances(DistancesArgs),
    /// Leave-one-patient-out evaluation of one or more methods.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output cohort file (line-delimited JSON visits).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    patients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Biomarker drop per unit of disease stage; 0 gives a null cohort.
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long, value_enum, default_value_t = PetArg::PerPatient)]
    pet_mode: PetArg,
    #[arg(long)]
    pet_probability: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PetArg {
    PerPatient,
    PerVisit,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// Series file: one time step per line, values separated by spaces or commas.
    a: PathBuf,
    b: PathBuf,
    /// subsequence, prefix, suffix, global, or all.
    #[arg(long, default_value = "subsequence")]
    variant: String,
}

#[derive(Args, Debug)]
struct DistancesArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// snapshot, global, prefix, suffix or subsequence.
    #[arg(long, alias = "variant", default_value = "subsequence")]
    method: Method,
    #[arg(long, default_value = "MRI")]
    modality: String,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Comma-separated methods; defaults to all five.
    #[arg(long, alias = "variant", value_delimiter = ',')]
    methods: Vec<Method>,
    /// Comma-separated modalities; defaults to every modality in the cohort.
    #[arg(long, value_delimiter = ',')]
    modalities: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, value_delimiter = ',')]
    grid_c: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    grid_rank: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_lambda: Vec<f64>,
    #[arg(long)]
    inner_folds: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// Leave the intercept out of the L2 penalty.
    #[arg(long)]
    free_bias: bool,
    /// Directory for report.txt and records.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of cached distance matrices.
    #[arg(long)]
    cache: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("trajsim: error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Align(args) => align_files(args),
        Command::Distances(args) => distances(args),
        Command::Evaluate(args) => evaluate_cohort(args),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker threads")
}

fn load_cohort(path: &Path, horizon: u32) -> Result<(Vec<u8>, Cohort)> {
    let bytes = fs::read(path).with_context(|| format!("reading cohort {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).with_context(|| format!("cohort {} is not UTF-8", path.display()))?;
    let cohort = parse_cohort(text, horizon).with_context(|| format!("parsing cohort {}", path.display()))?;
    Ok((bytes, cohort))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut config = GeneratorConfig {
        n_patients: args.patients,
        seed: args.seed,
        horizon: args.horizon,
        pet_mode: match args.pet_mode {
            PetArg::PerPatient => PetMode::PerPatient,
            PetArg::PerVisit => PetMode::PerVisit,
        },
        ..GeneratorConfig::default()
    };
    if let Some(s) = args.separation {
        config.slope_separation = s;
    }
    if let Some(p) = args.pet_probability {
        config.pet_probability = p;
    }
    let patients = generate_patients(&config)?;
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = BufWriter::new(file);
    write_cohort(&mut writer, &patients)?;
    writer.flush()?;

    let cohort = Cohort::new(patients, config.horizon)?;
    let summary = summarize(&cohort);
    let mut out = io::stdout().lock();
    writeln!(out, "{}", json!({ "record": "generator", "config": config }))?;
    writeln!(out, "{}", json!({ "record": "summary", "summary": summary }))?;
    Ok(())
}

fn align_files(args: AlignArgs) -> Result<()> {
    let read = |p: &Path| -> Result<Series> {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        Series::parse_text(&text).with_context(|| format!("parsing series {}", p.display()))
    };
    let (a, b) = (read(&args.a)?, read(&args.b)?);
    let variants = if args.variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![args.variant.parse::<Variant>()?]
    };
    let mut out = io::stdout().lock();
    for variant in variants {
        let result = align(&a, &b, variant)?;
        // Indices are printed 1-based, matching visit numbering.
        let path: Vec<String> = result.path.iter().map(|(i, j)| format!("({},{})", i + 1, j + 1)).collect();
        let reference = match result.reference {
            Side::A => "a",
            Side::B => "b",
        };
        writeln!(out, "variant\t{variant}")?;
        writeln!(out, "distance\t{}", result.distance)?;
        writeln!(
            out,
            "matched\t{}[{}..{}]",
            reference,
            result.matched_span.start() + 1,
            result.matched_span.end() + 1
        )?;
        writeln!(out, "path\t{}", path.join(" "))?;
    }
    Ok(())
}

fn distances(args: DistancesArgs) -> Result<()> {
    let (_, cohort) = load_cohort(&args.cohort, args.horizon)?;
    let modality = Modality::new(args.modality);
    let labeled = cohort.labeled_instances();
    let matrix = thread_pool(args.jobs)?.install(|| pairwise_distances(&labeled, &modality, args.method))?;
    match args.out {
        Some(path) => fs::write(&path, matrix.to_text()).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().lock().write_all(matrix.to_text().as_bytes())?,
    }
    Ok(())
}

fn evaluate_cohort(args: EvaluateArgs) -> Result<()> {
    let (bytes, cohort) = load_cohort(&args.cohort, args.horizon)?;
    let mut config = EvalConfig {
        seed: args.seed,
        penalize_bias: !args.free_bias,
        ..EvalConfig::default()
    };
    if !args.methods.is_empty() {
        config.methods = args.methods;
    }
    if !args.modalities.is_empty() {
        config.modalities = Some(args.modalities.into_iter().map(Modality::new).collect());
    }
    if !args.grid_c.is_empty() {
        config.grid_c = args.grid_c;
    }
    if !args.grid_rank.is_empty() {
        config.grid_rank = args.grid_rank;
    }
    if !args.grid_lambda.is_empty() {
        config.grid_lambda = args.grid_lambda;
    }
    if let Some(k) = args.inner_folds {
        config.inner_folds = k;
    }
    if let Some(k) = args.top_k {
        config.top_k = k;
    }
    if cohort.labeled_instances().is_empty() {
        bail!("cohort {} has no labelled instances", args.cohort.display());
    }

    let key = cohort_key(&bytes, args.horizon);
    let cache = args.cache.as_deref().map(|dir| DistanceCache::open(dir, key.clone())).transpose()?;
    let ids: Vec<_> = cohort.labeled_instances().iter().map(|i| i.id.clone()).collect();
    let report = thread_pool(args.jobs)?.install(|| {
        evaluate_with(&cohort, &config, |method, modalities| {
            let Some(cache) = &cache else {
                return method_distances(&cohort, method, modalities);
            };
            let mut out = Vec::with_capacity(modalities.len());
            for modality in modalities {
                let matrix = match cache.load(method, modality, &ids) {
                    Some(m) => m,
                    None => {
                        let m = method_distances(&cohort, method, std::slice::from_ref(modality))?.remove(0);
                        // A cache that cannot be written only costs time.
                        if let Err(err) = cache.store(&m) {
                            eprintln!("trajsim: warning: {err:#}");
                        }
                        m
                    }
                };
                out.push(matrix);
            }
            Ok(out)
        })
    })?;

    let text = report.to_text();
    let mut records = Vec::new();
    serde_json::to_writer(
        &mut records,
        &json!({ "record": "run", "cohort_sha256": key, "horizon": args.horizon }),
    )?;
    records.push(b'\n');
    report.write_records(&mut records)?;

    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("report.txt"), &text).context("writing report.txt")?;
        fs::write(dir.join("records.jsonl"), &records).context("writing records.jsonl")?;
    }
    io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}
