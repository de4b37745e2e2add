//! Command-line front end.

use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use derplace::control::{assemble_b, gain_bounds, sample_gains, structural_identity};
use derplace::placement::{
    AutoTrialStats, Heatmap, Mode, Session, SessionConfig, DEFAULT_MIN_BRANCH_LEN,
    DEFAULT_THRESHOLD,
};
use derplace::simulator::simulate;
use derplace::stability::{check_sisl, evaluate_sample};
use derplace::{
    build_rx, check_pd, Configuration, ControlError, DisturbanceSchedule, Feeder, GainSample,
    SamplingParams, SamplingScheme, SensitivityMatrices, SensitivityMode, StateSpace, Tolerances,
};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

use crate::store::{self, SessionDocument, SessionStore};

/// Exit code for `check` when no sampled gain stabilizes the configuration.
pub const EXIT_POOR: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "derplace", version, about = "Stability-driven DER placement on radial feeders")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Global {
    /// Gain samples per evaluation (grids round up to a square).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Gain sampling scheme: grid or random.
    #[arg(long, global = true)]
    pub scheme: Option<SamplingScheme>,
    /// Seed for random sampling and for OCPP/Auto-OCPP node draws.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Stable fraction at or above which a node is blue.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Sensitivity model: sp (single-phase equivalent) or mp (multiphase).
    #[arg(long, global = true, alias = "mode")]
    pub sensitivity: Option<SensitivityMode>,
    /// Slack on |λ| ≤ 1.
    #[arg(long = "tol-lambda", global = true)]
    pub tol_lambda: Option<f64>,
    /// Half-width of the unit-circle band.
    #[arg(long = "tol-unit", global = true)]
    pub tol_unit: Option<f64>,
    /// Eigenvalue clustering distance.
    #[arg(long = "tol-cluster", global = true)]
    pub tol_cluster: Option<f64>,
    /// Relative singular-value threshold for nullity.
    #[arg(long = "tol-rank", global = true)]
    pub tol_rank: Option<f64>,
}

impl Global {
    pub fn tolerances(&self) -> Tolerances {
        let d = Tolerances::default();
        Tolerances {
            lambda: self.tol_lambda.unwrap_or(d.lambda),
            unit: self.tol_unit.unwrap_or(d.unit),
            cluster: self.tol_cluster.unwrap_or(d.cluster),
            rank: self.tol_rank.or(d.rank),
        }
    }

    pub fn sampling(&self) -> SamplingParams {
        let d = SamplingParams::default();
        SamplingParams {
            scheme: self.scheme.unwrap_or(d.scheme),
            count: self.samples.unwrap_or(d.count),
            seed: self.seed.unwrap_or(d.seed),
        }
    }

    pub fn session_config(&self, mode: Mode) -> SessionConfig {
        SessionConfig {
            mode,
            sampling: self.sampling(),
            threshold: self.threshold.unwrap_or(DEFAULT_THRESHOLD),
            seed: self.seed.unwrap_or(0),
            sensitivity: self.sensitivity.unwrap_or_default(),
            tolerances: self.tolerances(),
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a feeder file and print its topology summary.
    Validate { feeder: PathBuf },
    /// Print the active R and X sensitivity matrices with their index map.
    Matrices {
        feeder: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a configuration: exit 0 if some gain stabilizes it, 2 if none does.
    Check {
        feeder: PathBuf,
        config: PathBuf,
        /// Evaluate this single gain pair instead of sampling.
        #[arg(long, value_name = "FQ,FP")]
        gains: Option<GainArg>,
    },
    /// Simulate the closed loop and write the trajectory as CSV.
    Simulate {
        feeder: PathBuf,
        config: PathBuf,
        #[arg(long, value_name = "FQ,FP")]
        gains: GainArg,
        /// Disturbance schedule JSON.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        steps: usize,
        /// Initial state: one value for every entry, or a comma list of 2m values.
        #[arg(long, value_name = "V[,V...]")]
        x0: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Non-colocated placement step: heatmap for a performance node, optionally place.
    Npp {
        feeder: PathBuf,
        #[arg(long)]
        perf: String,
        /// Session file, created if missing and updated in place.
        #[arg(long)]
        session: Option<PathBuf>,
        /// Accept a placement after the heatmap: a node id, or `best`.
        #[arg(long)]
        place: Option<String>,
        /// Write the heatmap as SVG.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Overload co-located placement with seeded random draws.
    Ocpp {
        feeder: PathBuf,
        #[arg(long)]
        session: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Automatic co-located placement over one or more seeds.
    AutoOcpp {
        feeder: PathBuf,
        /// Comma-separated seeds; defaults to --seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-branch success rates of the NPP evaluations in a session.
    Branches {
        #[arg(long)]
        session: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_BRANCH_LEN)]
        min_length: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Store directory for feeders and sessions.
        #[arg(long, default_value = "derplace-store")]
        store: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainArg(pub GainSample<f64>);

impl FromStr for GainArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [q, p] = parts[..] else {
            return Err(format!("expected FQ,FP, got {s:?}"));
        };
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(GainArg(GainSample {
            f_q: num(q)?,
            f_p: num(p)?,
        }))
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    let g = &cli.global;
    match cli.command {
        Command::Validate { feeder } => validate(&feeder),
        Command::Matrices { feeder, out } => matrices(g, &feeder, out.as_deref()),
        Command::Check {
            feeder,
            config,
            gains,
        } => check(g, &feeder, &config, gains),
        Command::Simulate {
            feeder,
            config,
            gains,
            schedule,
            steps,
            x0,
            out,
        } => simulate_cmd(g, &feeder, &config, gains, schedule.as_deref(), steps, x0.as_deref(), out.as_deref()),
        Command::Npp {
            feeder,
            perf,
            session,
            place,
            svg,
        } => npp(g, &feeder, &perf, session.as_deref(), place.as_deref(), svg.as_deref()),
        Command::Ocpp {
            feeder,
            session,
            out,
        } => ocpp(g, &feeder, session.as_deref(), out.as_deref()),
        Command::AutoOcpp { feeder, seeds, out } => auto_ocpp(g, &feeder, &seeds, out.as_deref()),
        Command::Branches {
            session,
            min_length,
            format,
        } => branches(&session, min_length, format),
        Command::Serve { host, port, store } => serve(&host, port, &store),
    }
}

fn read_feeder(path: &Path) -> Result<Feeder> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Feeder::parse(&text).with_context(|| format!("invalid feeder {}", path.display()))
}

fn read_config(path: &Path) -> Result<Configuration> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid configuration {}", path.display()))
}

/// Pretty JSON plus newline, to `out` or stdout.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().write_all(text.as_bytes())?),
    }
}

fn validate(path: &Path) -> Result<u8> {
    let f = read_feeder(path)?;
    let branches: Vec<_> = f
        .branches()
        .into_iter()
        .map(|b| json!({"start": b.start, "end": b.end, "length": b.len()}))
        .collect();
    emit(
        &json!({
            "valid": true,
            "substation": f.substation,
            "n_nodes": f.nodes.len(),
            "n_lines": f.lines.len(),
            "sha256": store::feeder_hash(&f),
            "main_branch": f.main_branch(),
            "branches": branches,
        }),
        None,
    )?;
    Ok(0)
}

fn active_labels(s: &SensitivityMatrices) -> Vec<String> {
    s.active
        .iter()
        .map(|&i| {
            let (node, p) = s.label(i);
            format!("{node}.{}", p.letter())
        })
        .collect()
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrices(g: &Global, path: &Path, out: Option<&Path>) -> Result<u8> {
    let f = read_feeder(path)?;
    let s: SensitivityMatrices = build_rx(&f, g.sensitivity.unwrap_or_default());
    let index: Vec<_> = s
        .active
        .iter()
        .map(|&i| {
            let (node, p) = s.label(i);
            json!({"node": node, "phase": p.letter().to_string(), "full_index": i})
        })
        .collect();
    emit(
        &json!({
            "mode": s.mode.to_string(),
            "labels": active_labels(&s),
            "index": index,
            "r": rows(&s.r_active()),
            "x": rows(&s.x_active()),
            "pd": check_pd(&s),
        }),
        out,
    )?;
    Ok(0)
}

fn check(g: &Global, feeder: &Path, config: &Path, gains: Option<GainArg>) -> Result<u8> {
    let f = read_feeder(feeder)?;
    let cfg = read_config(config)?;
    let s: SensitivityMatrices = build_rx(&f, g.sensitivity.unwrap_or_default());
    let tol = g.tolerances();
    let iw = structural_identity(&cfg, &f, &s)?;
    let b = assemble_b(&s);
    let bounds = match gain_bounds(&cfg, &s) {
        Ok(b) => Some(b),
        Err(e @ ControlError::NonPositiveSensitivity { .. }) if gains.is_none() => {
            // No positive gain box exists; report as poor rather than failing.
            emit(
                &json!({"sisl": false, "fraction": 0.0, "n_stable": 0, "n_samples": 0,
                        "eigenvalues": [], "witnesses": [], "note": e.to_string()}),
                None,
            )?;
            return Ok(EXIT_POOR);
        }
        Err(ControlError::NonPositiveSensitivity { .. }) | Err(ControlError::EmptyConfiguration) => None,
        Err(e) => return Err(e.into()),
    };
    let (fraction, n_stable, n_samples, witnesses, representative) = match gains {
        Some(GainArg(gs)) => {
            let o = evaluate_sample(&b, &iw, gs, &tol)?;
            let hit = usize::from(o.stable);
            let w = if o.stable { vec![gs] } else { vec![] };
            (hit as f64, hit, 1, w, Some(gs))
        }
        None => {
            let sf = derplace::stability::stable_fraction(&cfg, &f, &s, g.sampling(), &tol)
                .map_err(|e| anyhow::anyhow!(e))
                .context("evaluating configuration")?;
            let first = bounds.and_then(|bd| sample_gains(bd, g.sampling()).first().copied());
            let rep = sf.witnesses.first().copied().or(first);
            (sf.fraction, sf.n_stable, sf.n_samples, sf.witnesses, rep)
        }
    };
    let verdict = match representative {
        Some(gs) => Some(check_sisl(&StateSpace::new(&s, &iw, gs).a_cl, &tol)?),
        None => None,
    };
    let eigen: Vec<[f64; 2]> = verdict
        .as_ref()
        .map(|v| v.eigenvalues.iter().map(|z| [z.re, z.im]).collect())
        .unwrap_or_default();
    emit(
        &json!({
            "sisl": verdict.as_ref().is_some_and(|v| v.sisl),
            "fraction": fraction,
            "n_stable": n_stable,
            "n_samples": n_samples,
            "bounds": bounds,
            "gains": representative,
            "max_abs": verdict.as_ref().map(|v| v.max_abs),
            "eigenvalues": eigen,
            "witnesses": witnesses,
            "diagnostic": verdict.as_ref().and_then(|v| v.diagnostic.clone()),
        }),
        None,
    )?;
    Ok(if n_stable > 0 { 0 } else { EXIT_POOR })
}

fn parse_x0(spec: Option<&str>, dim: usize) -> Result<DVector<f64>> {
    let Some(spec) = spec else {
        return Ok(DVector::zeros(dim));
    };
    let vals = spec
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad x0 value {v:?}")))
        .collect::<Result<Vec<_>>>()?;
    match vals.len() {
        1 => Ok(DVector::from_element(dim, vals[0])),
        n if n == dim => Ok(DVector::from_vec(vals)),
        n => bail!("x0 has {n} values, expected 1 or {dim}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_cmd(
    g: &Global,
    feeder: &Path,
    config: &Path,
    gains: GainArg,
    schedule: Option<&Path>,
    steps: usize,
    x0: Option<&str>,
    out: Option<&Path>,
) -> Result<u8> {
    let f = read_feeder(feeder)?;
    let cfg = read_config(config)?;
    let s: SensitivityMatrices = build_rx(&f, g.sensitivity.unwrap_or_default());
    let iw = structural_identity(&cfg, &f, &s)?;
    let ss = StateSpace::new(&s, &iw, gains.0);
    let sched: DisturbanceSchedule = match schedule {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid schedule {}", p.display()))?
        }
        None => DisturbanceSchedule::default(),
    };
    let offsets = sched.offsets(&s)?;
    let x0 = parse_x0(x0, ss.a_cl.nrows())?;
    let traj = simulate(&ss.a_cl, &ss.f, &offsets, &x0, steps)?;
    let labels = active_labels(&s);
    let states: Vec<String> = ["dv", "dd"]
        .iter()
        .flat_map(|k| labels.iter().map(move |l| format!("{k}_{l}")))
        .collect();
    let inputs: Vec<String> = ["q", "p"]
        .iter()
        .flat_map(|k| labels.iter().map(move |l| format!("{k}_{l}")))
        .collect();
    match out {
        Some(p) => {
            let file = fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            traj.write_csv(io::BufWriter::new(file), &states, &inputs)?;
        }
        None => traj.write_csv(io::stdout().lock(), &states, &inputs)?,
    }
    if let Some(k) = traj.diverged_at {
        eprintln!("diverged at step {k}");
    }
    Ok(0)
}

/// Loads the session at `path`, or starts a new one when the file is absent.
/// A stored session keeps its own configuration; flags only shape new ones.
fn open_session(g: &Global, feeder: &Path, path: Option<&Path>, mode: Mode) -> Result<Session> {
    let f = Arc::new(read_feeder(feeder)?);
    match path {
        Some(p) if p.exists() => {
            let doc = store::read_document(p)?;
            if doc.config.mode != mode {
                bail!("session {} is in {} mode, not {mode}", p.display(), doc.config.mode);
            }
            Ok(doc.restore(f)?)
        }
        _ => Ok(Session::new(f, g.session_config(mode))),
    }
}

fn save_session(path: Option<&Path>, s: &Session) -> Result<()> {
    match path {
        Some(p) => Ok(store::write_document(p, &SessionDocument::of(s))?),
        None => Ok(()),
    }
}

fn npp(
    g: &Global,
    feeder: &Path,
    perf: &str,
    session: Option<&Path>,
    place: Option<&str>,
    svg: Option<&Path>,
) -> Result<u8> {
    let mut s = open_session(g, feeder, session, Mode::Npp)?;
    let h: Heatmap = s.heatmap_npp(perf, None)?;
    if let Some(p) = svg {
        let doc = derplace::svg::export_heatmap_svg(&h, s.feeder(), s.config().threshold);
        fs::write(p, doc).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(choice) = place {
        let actuator = if choice == "best" {
            h.best()
                .filter(|e| e.n_stable > 0)
                .map(|e| e.node.clone())
                .context("no candidate has a stable gain")?
        } else {
            choice.to_string()
        };
        s.accept_placement(&actuator, perf)?;
        eprintln!("placed {actuator} -> {perf}; core has {} pairs", s.core().len());
    }
    save_session(session, &s)?;
    emit(&h, None)?;
    Ok(0)
}

fn ocpp(g: &Global, feeder: &Path, session: Option<&Path>, out: Option<&Path>) -> Result<u8> {
    let mut s = open_session(g, feeder, session, Mode::Ocpp)?;
    let run = s.run_ocpp()?;
    save_session(session, &s)?;
    emit(&run, out)?;
    Ok(0)
}

#[derive(Serialize)]
struct AutoReport {
    trials: Vec<AutoTrialStats>,
    mean_total_placed: f64,
    mean_percent_edge: f64,
}

fn auto_ocpp(g: &Global, feeder: &Path, seeds: &[u64], out: Option<&Path>) -> Result<u8> {
    let f = Arc::new(read_feeder(feeder)?);
    let config = g.session_config(Mode::AutoOcpp);
    let seeds = if seeds.is_empty() {
        vec![config.seed]
    } else {
        seeds.to_vec()
    };
    let matrices = Arc::new(build_rx(&f, config.sensitivity));
    let trials = seeds
        .iter()
        .map(|&seed| {
            let mut s = Session::with_matrices(f.clone(), matrices.clone(), config);
            s.run_auto_ocpp(seed)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = trials.len() as f64;
    let report = AutoReport {
        mean_total_placed: trials.iter().map(|t| t.total_placed as f64).sum::<f64>() / n,
        mean_percent_edge: trials.iter().map(|t| t.percent_edge).sum::<f64>() / n,
        trials,
    };
    emit(&report, out)?;
    Ok(0)
}

fn branches(path: &Path, min_length: usize, format: Format) -> Result<u8> {
    let doc = store::read_document(path)?;
    let f = Arc::new(doc.embedded_feeder()?);
    let s = doc.restore(f)?;
    let stats = s.branch_stats(min_length);
    match format {
        Format::Json => emit(&stats, None)?,
        Format::Table => {
            let mut w = io::stdout().lock();
            writeln!(w, "{:<10} {:<10} {:>6} {:>9} {:>7}", "start", "end", "length", "% stable", "used")?;
            for b in &stats.branches {
                writeln!(
                    w,
                    "{:<10} {:<10} {:>6} {:>9.1} {:>3}/{:<3}",
                    b.start, b.end, b.length, b.percent_stable, b.n_used, b.n_involving
                )?;
            }
            writeln!(w, "{} configurations evaluated, {} stable", stats.n_evaluated, stats.n_stable)?;
        }
    }
    Ok(0)
}

fn serve(host: &str, port: u16, root: &Path) -> Result<u8> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad address {host}:{port}"))?;
    let store = SessionStore::open(root)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::server::serve(addr, store, |bound| {
        println!("listening on http://{bound}");
        let _ = io::stdout().flush();
    }))
    .with_context(|| format!("serving on {addr}"))?;
    Ok(0)
}
