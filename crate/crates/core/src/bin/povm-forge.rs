//! `povm-forge` command-line frontend.
//!
//! Exit codes: 0 success, 2 usage, 3 incomplete probe set, 4 I/O,
//! 5 reconstruction did not converge (the best iterate is still written).

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use povm_forge::detector::{DetectorModel, DetectorSpec};
use povm_forge::fock::default_truncation;
use povm_forge::probe::{spanning_check, ProbeGridSpec, DEFAULT_REP_RATE, DEFAULT_WAVELENGTH};
use povm_forge::reconstruction::{build_problem_with, reconstruct_with};
use povm_forge::wigner::cross_section;
use povm_forge::{io as pio, povm_wigner, radial_nodes, Error, SolverOptions, TailHandling, WignerGrid};
use povm_forge::{completeness_check, exact_dataset, sample_dataset};

const SEED_ENV: &str = "POVM_FORGE_SEED";

#[derive(Parser, Debug)]
#[command(name = "povm-forge", version, about = "Detector tomography: model, simulate and reconstruct diagonal POVMs")]
#[command(after_help = "Detector specs: apd:<eff> | tmd:<p1,...,pB>[/<loss>] | builtin:paper-tmd-8bin[,<loss>]\n\
Probe grids:    linspace:<lo>,<hi>,<count> | const:<value>,<count> | list:<m1>,<m2>,...")]
struct Cli {
    /// Worker threads for library-level parallel loops.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Run the command described in a TOML file instead of the flags.
    #[arg(long)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

/// One run, as given on the command line or in a `--config` file.
#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
enum Command {
    /// Write the loss matrix, convolution matrix and POVM of a detector.
    Model(ModelArgs),
    /// Check whether a probe grid is tomographically complete.
    Completeness(CompletenessArgs),
    /// Simulate click statistics for a probe grid.
    Simulate(SimulateArgs),
    /// Reconstruct a POVM from a dataset.
    Reconstruct(ReconstructArgs),
    /// Phase-space data for one POVM element.
    Wigner(WignerArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Tail {
    #[default]
    Truncate,
    Lump,
}

fn default_truncation_flag() -> usize {
    60
}
fn default_probes() -> String {
    "linspace:0,40,400".into()
}
fn default_dim() -> usize {
    30
}
fn default_wavelength() -> f64 {
    DEFAULT_WAVELENGTH
}
fn default_rep_rate() -> f64 {
    DEFAULT_REP_RATE
}
fn default_max_iterations() -> usize {
    SolverOptions::default().max_iterations
}
fn default_half_width() -> f64 {
    6.0
}
fn default_points() -> usize {
    301
}
fn default_hbar() -> f64 {
    1.0
}
fn default_r_max() -> f64 {
    8.0
}
fn default_samples() -> usize {
    4000
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectorArgs {
    /// Detector spec, e.g. `apd:0.5` or `builtin:paper-tmd-8bin`.
    #[arg(long)]
    detector: String,
    /// Loss fraction applied before the bins (TMD only).
    #[arg(long)]
    #[serde(default)]
    loss: Option<f64>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelArgs {
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    /// Highest photon number kept.
    #[arg(long, default_value_t = default_truncation_flag())]
    #[serde(default = "default_truncation_flag")]
    truncation: usize,
    #[arg(long, value_enum, default_value_t)]
    #[serde(default)]
    format: Format,
    /// Output directory (CSV) or file (JSON); stdout gets the POVM if absent.
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CompletenessArgs {
    /// Probe grid, e.g. `linspace:1,10,10`.
    #[arg(long, default_value_t = default_probes())]
    #[serde(default = "default_probes")]
    probes: String,
    /// Number of photon-number columns to resolve.
    #[arg(long)]
    dim: usize,
    #[arg(long, value_enum, default_value_t)]
    #[serde(default)]
    format: Format,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    /// Highest photon number kept; chosen from the largest probe if absent.
    #[arg(long)]
    #[serde(default)]
    truncation: Option<usize>,
    #[arg(long, default_value_t = default_probes())]
    #[serde(default = "default_probes")]
    probes: String,
    /// Shots per probe; 0 writes exact probabilities.
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    shots: u64,
    /// Master seed; POVM_FORGE_SEED takes precedence when set.
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    seed: u64,
    #[arg(long, default_value_t = default_wavelength())]
    #[serde(default = "default_wavelength")]
    wavelength: f64,
    #[arg(long, default_value_t = default_rep_rate())]
    #[serde(default = "default_rep_rate")]
    rep_rate: f64,
    #[arg(long, value_enum, default_value_t)]
    #[serde(default)]
    format: Format,
    /// Dataset destination; stdout if absent.
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
    /// Also write the probe table as CSV.
    #[arg(long)]
    #[serde(default)]
    probes_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReconstructArgs {
    /// Dataset file (`.json` is read as JSON, anything else as CSV).
    #[arg(long)]
    input: PathBuf,
    /// Photon-number entries per reconstructed element.
    #[arg(long, default_value_t = default_dim())]
    #[serde(default = "default_dim")]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    #[serde(default)]
    smoothing: f64,
    #[arg(long, value_enum, default_value_t)]
    #[serde(default)]
    tail: Tail,
    #[arg(long, default_value_t = default_max_iterations())]
    #[serde(default = "default_max_iterations")]
    max_iterations: usize,
    /// Skip the active-set refinement.
    #[arg(long)]
    #[serde(default)]
    no_polish: bool,
    /// Laser wavelength for CSV datasets, which do not record it.
    #[arg(long, default_value_t = default_wavelength())]
    #[serde(default = "default_wavelength")]
    wavelength: f64,
    #[arg(long, default_value_t = default_rep_rate())]
    #[serde(default = "default_rep_rate")]
    rep_rate: f64,
    #[arg(long, value_enum, default_value_t)]
    #[serde(default)]
    format: Format,
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WignerArgs {
    #[command(flatten)]
    #[serde(flatten)]
    detector: DetectorArgs,
    #[arg(long, default_value_t = default_truncation_flag())]
    #[serde(default = "default_truncation_flag")]
    truncation: usize,
    /// Click count of the element to transform.
    #[arg(long)]
    outcome: usize,
    /// The grid spans [-half_width, half_width] on both axes.
    #[arg(long, default_value_t = default_half_width())]
    #[serde(default = "default_half_width")]
    half_width: f64,
    #[arg(long, default_value_t = default_points())]
    #[serde(default = "default_points")]
    points: usize,
    #[arg(long, default_value_t = default_hbar())]
    #[serde(default = "default_hbar")]
    hbar: f64,
    /// Extent of the radial cross-section.
    #[arg(long, default_value_t = default_r_max())]
    #[serde(default = "default_r_max")]
    r_max: f64,
    #[arg(long, default_value_t = default_samples())]
    #[serde(default = "default_samples")]
    samples: usize,
    #[arg(long, value_enum, default_value_t)]
    #[serde(default)]
    format: Format,
    /// Output directory; the cross-section goes to stdout if absent.
    #[arg(long)]
    #[serde(default)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Self {
            code: 4,
            message: message.to_string(),
        }
    }
}

/// Library errors raised while interpreting flags are usage errors, except
/// for I/O.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) => Failure::io(e),
            other => Failure::usage(other),
        }
    }
}

type CliResult = Result<u8, Failure>;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Runs `write` against `path`, or stdout when `path` is `None`.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> povm_forge::Result<()>) -> Result<(), Failure> {
    let result = match path {
        Some(p) => {
            let mut file = create(p)?;
            write(&mut file)
        }
        None => write(&mut io::stdout().lock()),
    };
    result.map_err(|e| Failure::io(format!("writing output: {e}")))
}

fn make_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))
}

fn build_detector(args: &DetectorArgs, truncation: usize) -> Result<DetectorModel, Failure> {
    let spec: DetectorSpec = args.detector.parse()?;
    Ok(spec.build(truncation, args.loss)?)
}

fn cmd_model(args: &ModelArgs) -> CliResult {
    let model = build_detector(&args.detector, args.truncation)?;
    let deviation = model.povm.completeness_error();
    eprintln!(
        "{} outcomes, N = {}, max |sum_j diag_j[n] - 1| = {:e}",
        model.povm.outcomes(),
        model.povm.truncation(),
        deviation
    );
    match (args.format, &args.out) {
        (Format::Json, out) => emit(out.as_deref(), |w| pio::write_model_json(w, &args.detector.detector, &model))?,
        (Format::Csv, None) => emit(None, |w| pio::write_povm_csv(w, &model.povm))?,
        (Format::Csv, Some(dir)) => {
            make_dir(dir)?;
            emit(Some(&dir.join("povm.csv")), |w| pio::write_povm_csv(w, &model.povm))?;
            if let Some(loss) = &model.loss {
                emit(Some(&dir.join("loss.csv")), |w| pio::write_matrix_csv(w, loss.entries(), "n_out"))?;
            }
            if let Some(conv) = &model.conv {
                emit(Some(&dir.join("convolution.csv")), |w| {
                    pio::write_matrix_csv(w, conv.entries(), "clicks")
                })?;
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct CompletenessOutput {
    probes: usize,
    dim: usize,
    determinant: f64,
    condition_number: f64,
    complete: bool,
}

fn cmd_completeness(args: &CompletenessArgs) -> CliResult {
    let grid: ProbeGridSpec = args.probes.parse()?;
    let probes = grid.build(DEFAULT_WAVELENGTH, DEFAULT_REP_RATE)?;
    if args.dim == 0 {
        return Err(Failure::usage("--dim must be at least 1"));
    }
    let report = if probes.len() == args.dim {
        completeness_check(&probes)?
    } else {
        spanning_check(&probes, args.dim)?
    };
    let out = CompletenessOutput {
        probes: probes.len(),
        dim: args.dim,
        determinant: report.determinant,
        condition_number: report.condition_number,
        complete: report.complete,
    };
    let mut stdout = io::stdout().lock();
    let written = match args.format {
        Format::Csv => writeln!(
            stdout,
            "probes,dim,determinant,condition_number,complete\n{},{},{},{},{}",
            out.probes,
            out.dim,
            pio::format_float(out.determinant),
            pio::format_float(out.condition_number),
            out.complete
        ),
        Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(&out).expect("plain struct")),
    };
    written.map_err(Failure::io)?;
    Ok(if report.complete { 0 } else { 3 })
}

/// `POVM_FORGE_SEED` overrides the flag.
fn effective_seed(flag: u64) -> Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult {
    let grid: ProbeGridSpec = args.probes.parse()?;
    let probes = grid.build(args.wavelength, args.rep_rate)?;
    let truncation = args.truncation.unwrap_or_else(|| default_truncation(probes.max_mean_photon()));
    let model = build_detector(&args.detector, truncation)?;
    let seed = effective_seed(args.seed)?;
    let dataset = if args.shots == 0 {
        exact_dataset(&model.povm, &probes)?
    } else {
        sample_dataset(&model.povm, &probes, args.shots, seed)?
    };
    if let Some(path) = &args.probes_out {
        emit(Some(path), |w| pio::write_probes_csv(w, &probes))?;
    }
    emit(args.out.as_deref(), |w| match args.format {
        Format::Csv => pio::write_dataset_csv(w, &dataset),
        Format::Json => pio::write_dataset_json(w, &dataset),
    })?;
    Ok(0)
}

fn cmd_reconstruct(args: &ReconstructArgs) -> CliResult {
    let file = File::open(&args.input).map_err(|e| Failure::io(format!("{}: {e}", args.input.display())))?;
    let reader = BufReader::new(file);
    let is_json = args.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let dataset = if is_json {
        pio::read_dataset_json(reader)
    } else {
        pio::read_dataset_csv(reader, args.wavelength, args.rep_rate)
    }
    .map_err(|e| Failure::io(format!("{}: {e}", args.input.display())))?;

    let tail = match args.tail {
        Tail::Truncate => TailHandling::Truncate,
        Tail::Lump => TailHandling::Lump,
    };
    let problem = build_problem_with(&dataset, args.dim, args.smoothing, tail)?;
    let options = SolverOptions {
        max_iterations: args.max_iterations,
        polish: !args.no_polish,
        ..SolverOptions::default()
    };
    let rec = reconstruct_with(&problem, &options)?;
    eprintln!(
        "residual = {:e}, iterations = {}, stationarity = {:e}, converged = {}",
        rec.residual, rec.iterations, rec.stationarity, rec.converged
    );
    emit(args.out.as_deref(), |w| match args.format {
        Format::Csv => pio::write_povm_csv(w, &rec.povm),
        Format::Json => pio::write_reconstruction_json(w, &rec),
    })?;
    if rec.converged {
        Ok(0)
    } else {
        eprintln!("error: solver did not converge; best iterate written");
        Ok(5)
    }
}

#[derive(Serialize)]
struct WignerJson<'a> {
    outcome: usize,
    hbar: f64,
    xs: Vec<f64>,
    ps: Vec<f64>,
    /// `values[i][k] = W(xs[i], ps[k])`.
    values: Vec<Vec<f64>>,
    cross_section: &'a [(f64, f64)],
    radial_nodes: usize,
}

fn cmd_wigner(args: &WignerArgs) -> CliResult {
    let model = build_detector(&args.detector, args.truncation)?;
    let element = model.povm.element(args.outcome)?;
    let section = cross_section(element, args.r_max, args.samples, args.hbar)?;
    let nodes = radial_nodes(element, args.r_max, args.samples.max(100), args.hbar)?;
    eprintln!("W(0, 0) = {:e}, radial nodes on (0, {}] = {nodes}", section[0].1, args.r_max);

    let Some(dir) = &args.out else {
        emit(None, |w| pio::write_cross_section_csv(w, &section))?;
        return Ok(0);
    };
    make_dir(dir)?;
    let grid = WignerGrid::square(args.half_width, args.points, args.hbar)?;
    let field = povm_wigner(element, &grid)?;
    match args.format {
        Format::Csv => {
            emit(Some(&dir.join("wigner.csv")), |w| pio::write_wigner_csv(w, &field))?;
            emit(Some(&dir.join("wigner.gp")), |w| pio::write_wigner_gnuplot(w, &field))?;
            emit(Some(&dir.join("cross_section.csv")), |w| pio::write_cross_section_csv(w, &section))?;
        }
        Format::Json => {
            let doc = WignerJson {
                outcome: args.outcome,
                hbar: args.hbar,
                xs: grid.xs(),
                ps: grid.ps(),
                values: field.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
                cross_section: &section,
                radial_nodes: nodes,
            };
            emit(Some(&dir.join("wigner.json")), |w| {
                serde_json::to_writer_pretty(&mut *w, &doc)?;
                writeln!(w)?;
                Ok(())
            })?;
        }
    }
    Ok(0)
}

fn load_config(path: &Path) -> Result<Command, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> CliResult {
    let command = match (&cli.config, cli.command) {
        (Some(_), Some(_)) => return Err(Failure::usage("--config cannot be combined with a command")),
        (Some(path), None) => load_config(path)?,
        (None, Some(c)) => c,
        (None, None) => return Err(Failure::usage("no command given; see --help")),
    };
    if cli.threads == 0 {
        return Err(Failure::usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
    match &command {
        Command::Model(a) => cmd_model(a),
        Command::Completeness(a) => cmd_completeness(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Wigner(a) => cmd_wigner(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_trip(cmd: Command) {
        let text = toml::to_string(&cmd).unwrap();
        let back: Command = toml::from_str(&text).unwrap();
        assert_eq!(back, cmd, "{text}");
    }

    #[test]
    fn configs_round_trip() {
        for argv in [
            vec!["x", "model", "--detector", "builtin:paper-tmd-8bin", "--loss", "0.48", "--format", "json"],
            vec!["x", "completeness", "--probes", "linspace:1,10,10", "--dim", "10"],
            vec!["x", "simulate", "--detector", "apd:0.5", "--shots", "100", "--seed", "3", "--out", "d.csv"],
            vec!["x", "reconstruct", "--input", "d.json", "--dim", "8", "--tail", "lump", "--no-polish"],
            vec!["x", "wigner", "--detector", "apd:0.5", "--outcome", "1", "--r-max", "5"],
        ] {
            round_trip(Cli::try_parse_from(argv).unwrap().command.unwrap());
        }
    }

    #[test]
    fn config_defaults_match_flags() {
        let from_flags = Cli::try_parse_from(["x", "simulate", "--detector", "apd:0.5"]).unwrap().command.unwrap();
        let from_toml: Command = toml::from_str("command = \"simulate\"\ndetector = \"apd:0.5\"\n").unwrap();
        assert_eq!(from_flags, from_toml);
    }
}
