use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use symchar_core::cyclic::{CyclicSymmetry, SymmetryJson};
use symchar_core::index::{omega_index, p_omega_index, p_splitting_numbers, splitting_numbers};
use symchar_core::model::{HypersurfaceModel, ModelConfig};
use symchar_core::path::{SampledPath, SampledPathJson};
use symchar_core::solver::{find_orbits, SearchOptions};
use symchar_core::verify::{path_index_data, run_scenario, ScenarioConfig};

/// Environment variable holding the worker thread count.
const THREADS_ENV: &str = "SYMCHAR_THREADS";

#[derive(Parser)]
#[command(name = "symchar", version, about = "Closed characteristics and index checks on symmetric convex hypersurfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and report check verdicts.
    Verify {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Comma-separated subset of checks, overriding the scenario file.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
    /// Search for closed characteristics of a model.
    FindOrbits {
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        starts: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        n_fourier: usize,
    },
    /// Index data of a sampled convex symplectic path.
    Index {
        #[arg(long)]
        path: PathBuf,
        /// Unit complex number written as `a+bi`.
        #[arg(long, allow_hyphen_values = true)]
        omega: Option<String>,
        /// `rotation:k` or `file:<symmetry.json>`.
        #[arg(long)]
        symmetry: Option<String>,
        #[arg(long, default_value_t = 12)]
        m_max: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Verify { scenario, out, format, checks } => verify(&scenario, out.as_deref(), format, checks),
        Command::FindOrbits { model, starts, seed, n_fourier } => orbits(&model, starts, seed, n_fourier),
        Command::Index { path, omega, symmetry, m_max } => index(&path, omega.as_deref(), symmetry.as_deref(), m_max),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verify(scenario: &Path, out: Option<&Path>, format: Format, checks: Option<Vec<String>>) -> Result<ExitCode> {
    let mut cfg: ScenarioConfig = read_json(scenario)?;
    if let Some(c) = checks {
        cfg.checks = c;
    }
    let report = run_scenario(&cfg)?;
    let text = match format {
        Format::Json => report.to_canonical_json()?,
        Format::Table => report.to_table(),
    };
    emit(&text, out)?;
    if out.is_some() && format == Format::Json {
        eprint!("{}", report.to_table());
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn orbits(model: &Path, starts: usize, seed: u64, n_fourier: usize) -> Result<ExitCode> {
    let cfg: ModelConfig = read_json(model)?;
    let model = Arc::new(HypersurfaceModel::from_config(&cfg)?);
    let opts = SearchOptions { starts, seed, modes: n_fourier, ..SearchOptions::default() };
    let search = find_orbits(&model, &opts)?;
    let orbits: Vec<Value> = search
        .orbits
        .iter()
        .map(|f| {
            let o = &f.orbit;
            json!({
                "tau": o.tau(),
                "residual": o.residual(),
                "multiplicity": o.multiplicity(),
                "action": f.value,
                "samples": o.samples().iter().map(|y| y.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let found = orbits.len();
    let doc = json!({"model": cfg, "orbits": orbits, "starts": search.starts});
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(if found > 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Parses `a+bi`, `a-bi`, `a`, `bi` and `i`.
fn parse_complex(s: &str) -> Result<Complex64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || anyhow!("cannot parse {s:?} as a+bi");
    let Some(body) = t.strip_suffix('i') else {
        return Ok(Complex64::new(t.parse().map_err(|_| bad())?, 0.0));
    };
    let split = body
        .char_indices()
        .skip(1)
        .filter(|&(i, c)| (c == '+' || c == '-') && !body[..i].ends_with(['e', 'E']))
        .map(|(i, _)| i)
        .last();
    let (re, im) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        v => v.parse().map_err(|_| bad())?,
    };
    Ok(Complex64::new(re.parse().map_err(|_| bad())?, im))
}

fn parse_symmetry(spec: &str, n: usize) -> Result<CyclicSymmetry> {
    if let Some(k) = spec.strip_prefix("rotation:") {
        let k: u32 = k.parse().with_context(|| format!("bad rotation order in {spec:?}"))?;
        return Ok(CyclicSymmetry::rotation(n, k)?);
    }
    if let Some(p) = spec.strip_prefix("file:") {
        let json: SymmetryJson = read_json(Path::new(p))?;
        let sym = json.decompose()?;
        if sym.n() != n {
            bail!("symmetry acts on dimension {} but the path has n = {n}", 2 * sym.n());
        }
        return Ok(sym);
    }
    bail!("symmetry must be rotation:k or file:<path>, got {spec:?}")
}

fn index(path: &Path, omega: Option<&str>, symmetry: Option<&str>, m_max: usize) -> Result<ExitCode> {
    let json: SampledPathJson = read_json(path)?;
    let path = Arc::new(SampledPath::from_json(&json)?);
    let n = path.n();
    let data = path_index_data(&path, m_max.max(1), None)?;
    let omega = omega.map(parse_complex).transpose()?;
    let mut doc = json!({"n": n, "tau": path.tau(), "index_data": data});
    if let Some(w) = omega {
        let oi = omega_index(&path, w)?;
        let (sp, sm) = splitting_numbers(&path, w)?;
        doc["omega"] = json!({"re": w.re, "im": w.im, "index": oi.index, "nullity": oi.nullity, "s_plus": sp, "s_minus": sm});
    }
    if let Some(spec) = symmetry {
        let sym = parse_symmetry(spec, n)?;
        let w = omega.unwrap_or(Complex64::new(1.0, 0.0));
        let pi = p_omega_index(&path, sym.matrix(), w)?;
        let (sp, sm) = p_splitting_numbers(&path, sym.matrix(), w)?;
        doc["p_index"] = json!({
            "k": sym.order(),
            "re": w.re,
            "im": w.im,
            "index": pi.index,
            "nullity": pi.nullity,
            "s_plus": sp,
            "s_minus": sm,
        });
    }
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(ExitCode::SUCCESS)
}
