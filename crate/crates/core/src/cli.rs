//! Command-line interface and file formats.
//!
//! # Files
//!
//! **Descriptor CSV** (UTF-8): header `id,z,f0,f1,...,f{C-1}`, one object per
//! row, `z > 0` in meters. Floats are written in shortest round-trip form so
//! a written file reads back to identical values. Parsing is strict; any
//! malformed row is reported with its line number.
//!
//! **Report JSON**: an object with keys, in this order, `params`
//! (`k,b,epsilon,tau,p,mode`), `counts`
//! (`objects,total_pairs,eligible_pairs,pos,neg`), `ratio`, `loss`,
//! `worst_violations` (at most 10 pairs, largest margin first) and, with
//! `--theorem`, `theorem` (`premise_ok,b_prime,global_ok,worst_margin`).
//! Infinite ε is written as the string `"inf"`.
//!
//! **Metrics CSV**: `epoch,baseline_loss,qi_loss,obj_loss,total,violation_ratio,e_z`.
//! **Sweep CSV**: `lambda|epsilon,final_ratio,final_e_z`.
//!
//! Every float in reports, metrics and sweep tables is rounded to 9
//! significant digits and then printed in shortest round-trip form.
//!
//! # Exit codes
//!
//! `0` success, `1` invalid parameters or a failed validation (e.g. a path
//! whose partition is too coarse), `2` usage, I/O or parse errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::error::Error;
use crate::geodesic::{build_path, verify_theorem};
use crate::losses::{qi_loss, qi_pair_diagnostics, LossMode};
use crate::metric::Norm;
use crate::quasi_iso::{find_violating_pairs, DescriptorSet, QiParams, Side};
use crate::synth::{gen_arc, gen_collinear, gen_noisy_scene, SynthConfig, SynthKind, GEOMETRIC_DIMS};
use crate::trainer::{sweep_epsilon, sweep_lambda, train, Experiment, MetricsLog, SweepRow, TrainConfig};

/// λ values of the reference loss-scale sweep, preceded by 0.
pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 1e-5, 1e-3, 1e-2, 1e-1, 0.5];
/// ε values of the reference ablation.
pub const DEFAULT_EPSILONS: [f64; 5] = [1.0, 5.0, 10.0, 20.0, f64::INFINITY];

const WORST_LIMIT: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "qimetric", version, about = "Quasi-isometric metric learning audits, losses and toy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find pairs violating the quasi-isometric corridor.
    Audit(AuditArgs),
    /// Evaluate the quasi-isometric loss and write per-pair margins.
    Loss(LossArgs),
    /// Build the pseudo-geodesic path between two objects.
    Geodesic(GeodesicArgs),
    /// Train the toy encoder and write per-epoch metrics.
    Train(TrainArgs),
    /// Train once per λ_qi or ε and write final metrics.
    Sweep(SweepArgs),
    /// Generate a synthetic descriptor file.
    Synth(SynthArgs),
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        other => other.parse::<f64>().map_err(|e| e.to_string()),
    }
}

fn parse_norm(s: &str) -> Result<Norm, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<LossMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args, Clone)]
struct QiArgs {
    #[arg(long, default_value_t = 1.5)]
    k: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    b: f64,
    /// Neighborhood radius in meters, or `inf`.
    #[arg(long, default_value = "10.0", value_parser = parse_epsilon, allow_negative_numbers = true)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    tau: f64,
    /// Feature norm order: 1, 2 or inf.
    #[arg(long, default_value = "2", value_parser = parse_norm)]
    p: Norm,
    /// eq6 or alg1_literal.
    #[arg(long, default_value = "eq6", value_parser = parse_mode)]
    mode: LossMode,
}

impl QiArgs {
    fn params(&self) -> Result<QiParams, CliError> {
        let p = QiParams {
            k: self.k,
            b: self.b,
            epsilon: self.epsilon,
            tau: self.tau,
            p_feat: self.p,
            ..QiParams::default()
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Descriptor CSV.
    file: PathBuf,
    #[command(flatten)]
    qi: QiArgs,
    /// Also check the local-to-global pseudo-geodesic bound.
    #[arg(long)]
    theorem: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    file: PathBuf,
    #[command(flatten)]
    qi: QiArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-pair margin CSV; defaults to `<out>.margins.csv` when `--out` is set.
    #[arg(long)]
    margins_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GeodesicArgs {
    file: PathBuf,
    #[arg(long)]
    from: usize,
    #[arg(long)]
    to: usize,
    #[command(flatten)]
    qi: QiArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Descriptor,
    Map,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    qi: QiArgs,
    #[arg(long, default_value_t = 0.5)]
    lambda_qi: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_obj: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Number of synthetic objects.
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    nuisance_dims: usize,
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    out_dim: usize,
    #[arg(long, value_enum, default_value = "descriptor")]
    experiment: ExperimentArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            synth: SynthConfig {
                n: self.n,
                dim: GEOMETRIC_DIMS + self.nuisance_dims,
                nuisance_dims: self.nuisance_dims,
                noise_sigma: self.noise_sigma,
                ..SynthConfig::training_scene()
            },
            hidden: self.hidden,
            out_dim: self.out_dim,
            lambda_qi: self.lambda_qi,
            lambda_obj: self.lambda_obj,
            qi: self.qi.params()?,
            qi_mode: self.qi.mode,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed: self.seed,
            experiment: match self.experiment {
                ExperimentArg::Descriptor => Experiment::DescriptorLevel,
                ExperimentArg::Map => Experiment::MapLevel,
            },
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepOver {
    Lambda,
    Epsilon,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "lambda")]
    over: SweepOver,
    /// Comma-separated values; defaults to the reference λ or ε list.
    #[arg(long, value_delimiter = ',', value_parser = parse_epsilon)]
    values: Vec<f64>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Collinear,
    Arc,
    NoisyScene,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "noisy-scene")]
    kind: KindArg,
    #[arg(long)]
    n: Option<usize>,
    /// Feature dimension (collinear only; arcs are 2-D, noisy scenes use 2 + nuisance dims).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 6)]
    nuisance_dims: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    #[arg(long)]
    z_min: Option<f64>,
    #[arg(long)]
    z_max: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit code 1.
    Validation(String),
    /// Exit code 2.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Rounds to 9 significant digits.
pub fn round9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn fmt9(x: f64) -> String {
    let r = round9(x);
    if r.is_infinite() {
        if r > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{r}")
    }
}

fn json_num(x: f64) -> Value {
    if x.is_finite() {
        Value::from(round9(x))
    } else if x > 0.0 {
        Value::from("inf")
    } else if x < 0.0 {
        Value::from("-inf")
    } else {
        Value::Null
    }
}

/// Reads a descriptor CSV.
pub fn read_descriptor_csv(path: &Path) -> Result<DescriptorSet, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_descriptor_csv(file).map_err(|e| match e {
        CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses descriptor CSV from any reader.
pub fn parse_descriptor_csv<R: io::Read>(reader: R) -> Result<DescriptorSet, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(CliError::Io("line 1: missing header".into())),
    };
    if header.len() < 2 || &header[0] != "id" || &header[1] != "z" {
        return Err(CliError::Io("line 1: header must start with id,z".into()));
    }
    let dim = header.len() - 2;
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{k}") {
            return Err(CliError::Io(format!("line 1: expected column f{k}, found {name:?}")));
        }
    }
    let mut ids = Vec::new();
    let mut depths = Vec::new();
    let mut features = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != dim + 2 {
            return Err(CliError::Io(format!(
                "line {line}: expected {} columns, found {}",
                dim + 2,
                rec.len()
            )));
        }
        let num = |s: &str, what: &str| -> Result<f64, CliError> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| CliError::Io(format!("line {line}: invalid {what} {s:?}")))?;
            if !v.is_finite() {
                return Err(CliError::Io(format!("line {line}: non-finite {what}")));
            }
            Ok(v)
        };
        let z = num(&rec[1], "depth")?;
        if !(z > 0.0) {
            return Err(CliError::Io(format!("line {line}: depth must be > 0, got {z}")));
        }
        let f = (0..dim).map(|k| num(&rec[k + 2], "feature")).collect::<Result<Vec<_>, _>>()?;
        ids.push(rec[0].to_string());
        depths.push(z);
        features.push(f);
    }
    Ok(DescriptorSet::new(ids, depths, features)?)
}

/// Writes a descriptor CSV with round-trip float formatting.
pub fn write_descriptor_csv<W: Write>(ds: &DescriptorSet, writer: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "z".to_string()];
    header.extend((0..ds.dim()).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut row = vec![ds.ids()[i].clone(), format!("{}", ds.depths()[i])];
        row.extend(ds.feature(i).iter().map(|x| format!("{x}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a metrics CSV.
pub fn write_metrics_csv<W: Write>(log: &MetricsLog, writer: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "baseline_loss", "qi_loss", "obj_loss", "total", "violation_ratio", "e_z"])?;
    for r in &log.rows {
        w.write_record([
            r.epoch.to_string(),
            fmt9(r.baseline_loss),
            fmt9(r.qi_loss),
            fmt9(r.obj_loss),
            fmt9(r.total),
            fmt9(r.violation_ratio),
            fmt9(r.e_z),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a sweep CSV whose first column is named `column`.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], column: &str, writer: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([column, "final_ratio", "final_e_z"])?;
    for r in rows {
        w.write_record([fmt9(r.value), fmt9(r.final_ratio), fmt9(r.final_e_z)])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ParamsOut {
    k: Value,
    b: Value,
    epsilon: Value,
    tau: Value,
    p: String,
    mode: String,
}

#[derive(Serialize)]
struct CountsOut {
    objects: usize,
    total_pairs: usize,
    eligible_pairs: usize,
    pos: usize,
    neg: usize,
}

#[derive(Serialize)]
struct PairOut {
    i: usize,
    j: usize,
    id_i: String,
    id_j: String,
    side: Side,
    d_depth: Value,
    d_feat: Value,
    margin: Value,
}

#[derive(Serialize)]
struct TheoremOut {
    premise_ok: bool,
    b_prime: Value,
    global_ok: bool,
    worst_margin: Value,
}

#[derive(Serialize)]
struct ReportOut {
    params: ParamsOut,
    counts: CountsOut,
    ratio: Value,
    loss: Value,
    worst_violations: Vec<PairOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theorem: Option<TheoremOut>,
}

/// Builds the JSON report for a descriptor set.
pub fn build_report(ds: &DescriptorSet, params: &QiParams, mode: LossMode, theorem: bool) -> Result<String, CliError> {
    let report = find_violating_pairs(ds, params);
    let loss = qi_loss(ds, params, mode)?;
    let theorem = theorem.then(|| {
        let t = verify_theorem(ds, params);
        TheoremOut {
            premise_ok: t.premise_ok,
            b_prime: json_num(t.b_prime),
            global_ok: t.global_ok,
            worst_margin: t.worst.map_or(Value::Null, |w| json_num(w.margin)),
        }
    });
    let out = ReportOut {
        params: ParamsOut {
            k: json_num(params.k),
            b: json_num(params.b),
            epsilon: json_num(params.epsilon),
            tau: json_num(params.tau),
            p: params.p_feat.to_string(),
            mode: mode.to_string(),
        },
        counts: CountsOut {
            objects: ds.len(),
            total_pairs: report.total_pairs,
            eligible_pairs: report.eligible_count,
            pos: report.pos_pairs.len(),
            neg: report.neg_pairs.len(),
        },
        ratio: json_num(report.ratio),
        loss: json_num(loss.value),
        worst_violations: report
            .worst(WORST_LIMIT)
            .into_iter()
            .map(|(side, p)| PairOut {
                i: p.i,
                j: p.j,
                id_i: ds.ids()[p.i].clone(),
                id_j: ds.ids()[p.j].clone(),
                side,
                d_depth: json_num(p.d_depth),
                d_feat: json_num(p.d_feat),
                margin: json_num(p.margin),
            })
            .collect(),
        theorem,
    };
    let mut s = serde_json::to_string_pretty(&out)?;
    s.push('\n');
    Ok(s)
}

fn write_margins_csv<W: Write>(ds: &DescriptorSet, params: &QiParams, writer: W) -> Result<(), CliError> {
    let diag = qi_pair_diagnostics(ds, params)?;
    let report = find_violating_pairs(ds, params);
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["i", "j", "id_i", "id_j", "side", "d_depth", "d_feat", "margin", "d_loss_d_dist"])?;
    let sides = report
        .pos_pairs
        .iter()
        .map(|p| (Side::Upper, p))
        .chain(report.neg_pairs.iter().map(|p| (Side::Lower, p)));
    for (side, p) in sides {
        let g = diag
            .iter()
            .find(|g| g.side == side && g.i == p.i && g.j == p.j)
            .map_or(0.0, |g| g.d_loss_d_dist);
        w.write_record([
            p.i.to_string(),
            p.j.to_string(),
            ds.ids()[p.i].clone(),
            ds.ids()[p.j].clone(),
            match side {
                Side::Upper => "upper".to_string(),
                Side::Lower => "lower".to_string(),
            },
            fmt9(p.d_depth),
            fmt9(p.d_feat),
            fmt9(p.margin),
            fmt9(g),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn emit(out: Option<&Path>, stdout: &mut dyn Write, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            write(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => write(stdout),
    }
}

#[derive(Serialize)]
struct PathOut {
    source: usize,
    target: usize,
    source_id: String,
    target_id: String,
    partition: Vec<usize>,
    partition_ids: Vec<String>,
    segment_lengths: Vec<Value>,
    total: Value,
    mesh: Value,
    direct: Value,
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Audit(a) => {
            let params = a.qi.params()?;
            let ds = read_descriptor_csv(&a.file)?;
            let json = build_report(&ds, &params, a.qi.mode, a.theorem)?;
            emit(a.out.as_deref(), stdout, |w| Ok(w.write_all(json.as_bytes())?))
        }
        Command::Loss(a) => {
            let params = a.qi.params()?;
            let ds = read_descriptor_csv(&a.file)?;
            let json = build_report(&ds, &params, a.qi.mode, false)?;
            emit(a.out.as_deref(), stdout, |w| Ok(w.write_all(json.as_bytes())?))?;
            let margins = a.margins_out.clone().or_else(|| {
                a.out.as_ref().map(|o| {
                    let mut s = o.clone().into_os_string();
                    s.push(".margins.csv");
                    PathBuf::from(s)
                })
            });
            if let Some(path) = margins {
                emit(Some(&path), stdout, |w| write_margins_csv(&ds, &params, w))?;
            }
            Ok(())
        }
        Command::Geodesic(a) => {
            let params = a.qi.params()?;
            let ds = read_descriptor_csv(&a.file)?;
            let path = build_path(&ds, a.from, a.to, &params)?;
            let out = PathOut {
                source: path.source,
                target: path.target,
                source_id: ds.ids()[path.source].clone(),
                target_id: ds.ids()[path.target].clone(),
                partition_ids: path.partition.iter().map(|&i| ds.ids()[i].clone()).collect(),
                partition: path.partition.clone(),
                segment_lengths: path.segment_lengths.iter().map(|&x| json_num(x)).collect(),
                total: json_num(path.total),
                mesh: json_num(path.mesh),
                direct: json_num(params.p_feat.dist(ds.feature(path.source), ds.feature(path.target))),
            };
            let mut json = serde_json::to_string_pretty(&out)?;
            json.push('\n');
            emit(a.out.as_deref(), stdout, |w| Ok(w.write_all(json.as_bytes())?))
        }
        Command::Train(a) => {
            let cfg = a.config()?;
            let log = train(&cfg)?;
            emit(a.out.as_deref(), stdout, |w| write_metrics_csv(&log, w))
        }
        Command::Sweep(a) => {
            let cfg = a.train.config()?;
            let (rows, column) = match a.over {
                SweepOver::Lambda => {
                    let values = if a.values.is_empty() { DEFAULT_LAMBDAS.to_vec() } else { a.values.clone() };
                    (sweep_lambda(&cfg, &values)?, "lambda")
                }
                SweepOver::Epsilon => {
                    let values = if a.values.is_empty() { DEFAULT_EPSILONS.to_vec() } else { a.values.clone() };
                    (sweep_epsilon(&cfg, &values)?, "epsilon")
                }
            };
            emit(a.train.out.as_deref(), stdout, |w| write_sweep_csv(&rows, column, w))
        }
        Command::Synth(a) => {
            let ds = synth_from_args(&a)?;
            emit(a.out.as_deref(), stdout, |w| write_descriptor_csv(&ds, w))
        }
    }
}

fn synth_from_args(a: &SynthArgs) -> Result<DescriptorSet, CliError> {
    let ds = match a.kind {
        KindArg::Collinear => {
            let base = SynthConfig::collinear(a.n.unwrap_or(64), a.dim, (1.0, 60.0));
            let cfg = SynthConfig {
                depth_range: (a.z_min.unwrap_or(base.depth_range.0), a.z_max.unwrap_or(base.depth_range.1)),
                seed: a.seed,
                ..base
            };
            gen_collinear(&cfg)?
        }
        KindArg::Arc => {
            let base = SynthConfig::arc();
            let z_min = a.z_min.unwrap_or(base.depth_range.0);
            let z_max = a.z_max.unwrap_or(z_min + 1.8 * std::f64::consts::PI * a.radius);
            let cfg = SynthConfig {
                n: a.n.unwrap_or(base.n),
                depth_range: (z_min, z_max),
                arc_radius: a.radius,
                seed: a.seed,
                ..base
            };
            gen_arc(&cfg)?
        }
        KindArg::NoisyScene => {
            let base = SynthConfig::default();
            let cfg = SynthConfig {
                kind: SynthKind::NoisyScene,
                n: a.n.unwrap_or(base.n),
                dim: GEOMETRIC_DIMS + a.nuisance_dims,
                nuisance_dims: a.nuisance_dims,
                noise_sigma: a.noise_sigma,
                depth_range: (a.z_min.unwrap_or(base.depth_range.0), a.z_max.unwrap_or(base.depth_range.1)),
                seed: a.seed,
                ..base
            };
            gen_noisy_scene(&cfg)?.descriptor_set()
        }
    };
    Ok(ds)
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code. Primary output goes to `stdout` unless `--out` is
/// given; diagnostics go to `stderr`.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message());
            e.exit_code()
        }
    }
}
