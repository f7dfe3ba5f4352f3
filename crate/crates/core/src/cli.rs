//! Command-line front end.
//!
//! Every file written starts with a config echo: CSV and weight files get a
//! `# ssofqr <command> <json>` comment line, JSON files a `"command"` field.
//! Readers skip `#` lines. Exit codes: 0 success, 2 invalid input,
//! 3 numerical failure, 4 I/O.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimators::{self, EstimatorConfig, Method, SsofqrmFit, Stage1, Stage1Diagnostics};
use crate::funcspace::{bspline_smooth, center, fpca, FunctionalDataset};
use crate::simlab::{self, BetaSpec, DgpConfig, GpSampler, McConfig};
use crate::spatial::{self, Coordinates, SpatialWeights};

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 4,
            e if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssofqr", version, about = "Spatial scalar-on-function quantile regression")]
pub struct Cli {
    /// Master seed for stochastic subcommands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for Monte Carlo runs (defaults to available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Report RMSE with the standard deviation in place of the variance.
    #[arg(long, global = true)]
    pub paper_literal_rmse: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated dataset.
    Simulate(SimulateArgs),
    /// Fit a model at one quantile level.
    Fit(FitArgs),
    /// Predict new responses from a fit artifact.
    Predict(PredictArgs),
    /// Run a Monte Carlo study.
    Mc(McArgs),
    /// Build a spatial weight matrix.
    Weights(WeightsArgs),
    /// Local Moran's I of a response.
    Moran(MoranArgs),
    /// Functional principal components of a curve file.
    Fpca(FpcaArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub rho0: Option<f64>,
    /// Contamination level in [0, 1).
    #[arg(long)]
    pub cl: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
}

/// Where a weight matrix comes from.
#[derive(Debug, Args, Clone)]
pub struct WeightSource {
    /// Weight triplet file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Build inverse-distance weights on a regular line of units.
    #[arg(long)]
    pub grid_weights: bool,
    /// Build adaptive bi-square weights with this many neighbours, using
    /// the coordinates in the curve file or `--coords`.
    #[arg(long)]
    pub knn: Option<usize>,
    #[arg(long)]
    pub coords: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum MethodArg {
    Km,
    Ch,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Km => Method::Km,
            MethodArg::Ch => Method::Ch,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Stage1Arg {
    Ols,
    Qr,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub response: PathBuf,
    #[command(flatten)]
    pub source: WeightSource,
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// KM reconstruction weight in (0, 1).
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub lag_order: Option<usize>,
    /// CH candidates: `lo:step:hi` or a comma-separated list.
    #[arg(long)]
    pub rho_grid: Option<String>,
    #[arg(long, value_enum)]
    pub stage1: Option<Stage1Arg>,
    /// Fit without a constant term.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, default_value_t = 0.95)]
    pub variance_target: f64,
    /// Pre-smooth curves with this many cubic B-splines.
    #[arg(long)]
    pub smooth_basis: Option<usize>,
    /// Output file name inside the output directory.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub curves: PathBuf,
    #[command(flatten)]
    pub source: WeightSource,
    #[arg(long, requires = "upper_fit")]
    pub lower_fit: Option<PathBuf>,
    #[arg(long, requires = "lower_fit")]
    pub upper_fit: Option<PathBuf>,
    /// Observed responses (`id,value`) for MSPE and R².
    #[arg(long)]
    pub actuals: Option<PathBuf>,
    #[arg(long, default_value = "predictions.csv")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long, default_value = "mc_report")]
    pub out: String,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum WeightKind {
    Grid,
    Knn,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long, value_enum)]
    pub kind: WeightKind,
    /// Number of units for grid weights.
    #[arg(long)]
    pub n: Option<usize>,
    /// Coordinate file (`id,lat,lon` or `id,x`) for KNN weights.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    #[arg(long)]
    pub h: Option<usize>,
    /// Candidate neighbour counts chosen by cross-validation (`3,5,8`).
    #[arg(long, requires_all = ["curves", "response"])]
    pub h_grid: Option<String>,
    #[arg(long)]
    pub curves: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value = "weights.txt")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct MoranArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub response: PathBuf,
    #[arg(long, default_value = "moran.csv")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct FpcaArgs {
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub variance_target: f64,
    #[arg(long)]
    pub smooth_basis: Option<usize>,
    #[arg(long, default_value = "fpca")]
    pub out: String,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    fs::create_dir_all(&cli.out_dir)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a, out),
        Command::Fit(a) => cmd_fit(cli, a, out),
        Command::Predict(a) => cmd_predict(cli, a, out),
        Command::Mc(a) => cmd_mc(cli, a, out),
        Command::Weights(a) => cmd_weights(cli, a, out),
        Command::Moran(a) => cmd_moran(cli, a, out),
        Command::Fpca(a) => cmd_fpca(cli, a, out),
    }
}

// ---------------------------------------------------------------- file I/O

fn echo_line(command: &str, echo: &Value) -> String {
    format!("# ssofqr {command} {echo}\n")
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse {what} `{s}`")))
}

/// Curves with row ids and optional station coordinates.
#[derive(Debug, Clone)]
pub struct CurveTable {
    pub ids: Vec<String>,
    pub coords: Option<Vec<(f64, f64)>>,
    pub data: FunctionalDataset,
}

/// Reads `id,<grid>...` or station files `id,lat,lon,day_1,...`.
///
/// Numeric column names are the grid; names of the form `prefix_k` are
/// mapped to a uniform grid on [0, 1].
pub fn read_curves(path: &Path) -> Result<CurveTable> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::Parse(format!(
            "{}: curve file needs an id column and at least 2 grid columns",
            path.display()
        )));
    }
    let names: Vec<&str> = headers.iter().collect();
    let station = names.len() > 4
        && names[1].eq_ignore_ascii_case("lat")
        && names[2].eq_ignore_ascii_case("lon");
    let first = if station { 3 } else { 1 };
    let grid_names = &names[first..];
    let grid: Vec<f64> = match grid_names.iter().map(|s| s.parse::<f64>()).collect() {
        Ok(g) => g,
        Err(_) => {
            for (k, name) in grid_names.iter().enumerate() {
                let ok = name
                    .rsplit_once('_')
                    .is_some_and(|(_, d)| d.parse::<usize>().is_ok());
                if !ok {
                    return Err(Error::Parse(format!(
                        "{}: column {} header `{name}` is neither a grid value nor `name_k`",
                        path.display(),
                        first + k + 1
                    )));
                }
            }
            simlab::uniform_grid(grid_names.len())?
        }
    };
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() {
            return Err(Error::Parse(format!(
                "{}: line {line}: expected {} fields, found {}",
                path.display(),
                names.len(),
                rec.len()
            )));
        }
        ids.push(rec[0].to_string());
        if station {
            coords.push((parse_f64(&rec[1], line, "latitude")?, parse_f64(&rec[2], line, "longitude")?));
        }
        let row = rec
            .iter()
            .skip(first)
            .map(|s| parse_f64(s, line, "curve value"))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no curves", path.display())));
    }
    let data = FunctionalDataset::from_rows(grid, &rows)?;
    Ok(CurveTable {
        ids,
        coords: station.then_some(coords),
        data,
    })
}

pub fn curves_csv(echo: &str, ids: &[String], data: &FunctionalDataset) -> String {
    let mut s = String::from(echo);
    s.push_str("id");
    for u in data.grid() {
        s.push_str(&format!(",{u}"));
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for v in data.values().row(i).iter() {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

/// Reads `id,value` pairs.
pub fn read_response(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 2 {
            return Err(Error::Parse(format!("{}: line {line}: expected `id,value`", path.display())));
        }
        out.push((rec[0].to_string(), parse_f64(&rec[1], line, "response")?));
    }
    Ok(out)
}

fn response_csv(echo: &str, ids: &[String], y: &[f64]) -> String {
    let mut s = String::from(echo);
    s.push_str("id,value\n");
    for (id, v) in ids.iter().zip(y) {
        s.push_str(&format!("{id},{v}\n"));
    }
    s
}

/// Reads `id,lat,lon` (geographic) or `id,x` (line) coordinates.
pub fn read_coords(path: &Path) -> Result<(Vec<String>, Coordinates)> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let width = rdr.headers()?.len();
    let mut ids = Vec::new();
    let mut geo = Vec::new();
    let mut line_pos = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        ids.push(rec[0].to_string());
        match width {
            3 => geo.push((parse_f64(&rec[1], line, "latitude")?, parse_f64(&rec[2], line, "longitude")?)),
            2 => line_pos.push(parse_f64(&rec[1], line, "position")?),
            _ => {
                return Err(Error::Parse(format!(
                    "{}: coordinates must be `id,lat,lon` or `id,x`",
                    path.display()
                )))
            }
        }
    }
    let coords = if width == 3 {
        Coordinates::Geographic(geo)
    } else {
        Coordinates::Line(line_pos)
    };
    Ok((ids, coords))
}

pub fn read_weights(path: &Path) -> Result<SpatialWeights> {
    SpatialWeights::from_triplets(&read_text(path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn weights_text(echo: &str, w: &SpatialWeights) -> String {
    format!("{echo}{}", w.to_triplets())
}

fn load_config(cli: &Cli) -> Result<Option<Value>> {
    match &cli.config {
        None => Ok(None),
        Some(p) => {
            let text = read_text(p)?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("config {}: {e}", p.display())))?;
            Ok(Some(v))
        }
    }
}

fn config_as<T: for<'de> Deserialize<'de> + Default>(cli: &Cli, v: &Option<Value>) -> Result<T> {
    match v {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| {
            Error::Parse(format!(
                "config {}: {e}",
                cli.config.as_deref().unwrap_or(Path::new("?")).display()
            ))
        }),
    }
}

fn require_seed(cli: &Cli, cfg: &Option<Value>) -> Result<u64> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    cfg.as_ref()
        .and_then(|v| v.get("seed"))
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::InvalidInput("a seed is required (--seed or `seed` in the config)".into()))
}

/// Sort order of ids: numeric when every id is an integer, else lexicographic.
fn canonical_order(ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    let numeric: Option<Vec<i64>> = ids.iter().map(|s| s.parse().ok()).collect();
    match numeric {
        Some(k) => order.sort_by_key(|&i| k[i]),
        None => order.sort_by(|&a, &b| ids[a].cmp(&ids[b])),
    }
    order
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidInput(format!("duplicate id `{id}` in {what}")));
        }
    }
    Ok(())
}

/// Orders `values` (keyed by id) like `ids`.
fn align(ids: &[String], values: &[(String, f64)], what: &str) -> Result<Vec<f64>> {
    let map: HashMap<&str, f64> = values.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    if map.len() != values.len() {
        return Err(Error::InvalidInput(format!("duplicate ids in {what}")));
    }
    if values.len() != ids.len() {
        return Err(Error::DimensionMismatch {
            what: "rows in response file vs curves",
            expected: ids.len(),
            got: values.len(),
        });
    }
    ids.iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("id `{id}` missing from {what}")))
        })
        .collect()
}

/// Weights for the units of `table`, in file order.
fn resolve_weights(src: &WeightSource, table: &CurveTable) -> Result<SpatialWeights> {
    let n = table.data.n_curves();
    let chosen = [src.weights.is_some(), src.grid_weights, src.knn.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if chosen != 1 {
        return Err(Error::InvalidInput(
            "give exactly one of --weights, --grid-weights, --knn".into(),
        ));
    }
    let w = if let Some(p) = &src.weights {
        read_weights(p)?
    } else if src.grid_weights {
        spatial::grid_inverse_distance_weights(n)?
    } else {
        let h = src.knn.unwrap_or_default();
        let coords = match (&src.coords, &table.coords) {
            (Some(p), _) => {
                let (ids, c) = read_coords(p)?;
                if ids != table.ids {
                    return Err(Error::InvalidInput(
                        "coordinate ids must match the curve ids in order".into(),
                    ));
                }
                c
            }
            (None, Some(c)) => Coordinates::Geographic(c.clone()),
            (None, None) => {
                return Err(Error::InvalidInput(
                    "--knn needs coordinates (station curve file or --coords)".into(),
                ))
            }
        };
        spatial::knn_bisquare_weights(&coords, h)?
    };
    if w.n() != n {
        return Err(Error::DimensionMismatch {
            what: "weight matrix size vs number of curves",
            expected: n,
            got: w.n(),
        });
    }
    Ok(w)
}

fn maybe_smooth(data: FunctionalDataset, basis: Option<usize>) -> Result<FunctionalDataset> {
    match basis {
        Some(k) => bspline_smooth(&data, k),
        None => Ok(data),
    }
}

fn parse_rho_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidInput(format!("cannot parse rho grid `{text}`"));
    if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [lo, step, hi] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        Ok((0..=count).map(|k| lo + k as f64 * step).collect())
    } else {
        text.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect()
    }
}

fn fmt_tau(tau: f64) -> String {
    format!("{tau}").replace('.', "p")
}

// ------------------------------------------------------------ subcommands

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
struct SimulateConfig {
    #[serde(flatten)]
    dgp: DgpConfig,
    beta_true: BetaSpec,
    contaminate_test: Option<bool>,
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let raw = load_config(cli)?;
    let mut cfg: SimulateConfig = config_as(cli, &raw)?;
    cfg.dgp.seed = require_seed(cli, &raw)?;
    if let Some(n) = a.n {
        cfg.dgp.n = n;
    }
    if let Some(n) = a.n_test {
        cfg.dgp.n_test = n;
    }
    if let Some(r) = a.rho0 {
        cfg.dgp.rho0 = r;
    }
    if let Some(c) = a.cl {
        cfg.dgp.contamination_level = c;
    }
    if let Some(t) = a.grid_size {
        cfg.dgp.grid_size = t;
    }
    let d = &cfg.dgp;
    d.validate()?;
    let contaminate_test = cfg.contaminate_test.unwrap_or(true);
    let echo = echo_line("simulate", &serde_json::to_value(&cfg)?);

    let sampler = GpSampler::for_config(d)?;
    let beta = cfg.beta_true.on_grid(sampler.grid())?;
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let dir = &cli.out_dir;

    let mut sample = |n: usize, prefix: &str, contaminated: bool| -> Result<usize> {
        let x = sampler.sample(n, &mut rng)?;
        let w = spatial::grid_inverse_distance_weights(n)?;
        let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let draw = simlab::gen_response_with_noise(&x, &beta, &w, d.rho0, &noise)?;
        let level = if contaminated { d.contamination_level } else { 0.0 };
        let (y, idx) = simlab::contaminate(&draw, &w, level, d.outlier_mean, d.outlier_sd, &mut rng)?;
        let ids: Vec<String> = (1..=n).map(|i| i.to_string()).collect();
        write_file(&dir.join(format!("{prefix}curves.csv")), &curves_csv(&echo, &ids, &x))?;
        write_file(&dir.join(format!("{prefix}response.csv")), &response_csv(&echo, &ids, &y))?;
        write_file(&dir.join(format!("{prefix}weights.txt")), &weights_text(&echo, &w))?;
        let mut list = format!("{echo}id\n");
        for i in &idx {
            list.push_str(&format!("{}\n", ids[*i]));
        }
        write_file(&dir.join(format!("{prefix}outliers.csv")), &list)?;
        Ok(idx.len())
    };
    let n_out = sample(d.n, "", true)?;
    let n_test_out = if d.n_test >= 2 {
        Some(sample(d.n_test, "test_", contaminate_test)?)
    } else {
        None
    };
    let truth = json!({
        "command": "simulate",
        "config": cfg,
        "rho0": d.rho0,
        "beta_true": beta,
    });
    write_file(&dir.join("truth.json"), &serde_json::to_string_pretty(&truth)?)?;
    writeln!(
        out,
        "simulated n={} (outliers {n_out}){} into {}",
        d.n,
        n_test_out.map_or(String::new(), |k| format!(", n_test={} (outliers {k})", d.n_test)),
        dir.display()
    )?;
    Ok(())
}

/// Loads a training set in canonical (id-sorted) order.
fn load_training(a: &FitArgs) -> Result<(CurveTable, Vec<f64>, SpatialWeights)> {
    let table = read_curves(&a.curves)?;
    check_unique(&table.ids, "curve file")?;
    let w = resolve_weights(&a.source, &table)?;
    let y = align(&table.ids, &read_response(&a.response)?, "response file")?;
    let order = canonical_order(&table.ids);
    let data = table.data.select_rows(&order);
    let canon = CurveTable {
        ids: order.iter().map(|&i| table.ids[i].clone()).collect(),
        coords: table.coords.map(|c| order.iter().map(|&i| c[i]).collect()),
        data,
    };
    let y: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    Ok((canon, y, w.permuted(&order)?))
}

fn estimator_config(cli: &Cli, a: &FitArgs) -> Result<EstimatorConfig> {
    let raw = load_config(cli)?;
    let mut cfg: EstimatorConfig = config_as(cli, &raw)?;
    if let Some(v) = a.a {
        cfg.a = v;
    }
    if let Some(p) = a.lag_order {
        cfg.lag_order = p;
    }
    if let Some(g) = &a.rho_grid {
        cfg.rho_grid = parse_rho_grid(g)?;
    }
    if let Some(s) = a.stage1 {
        cfg.stage1 = match s {
            Stage1Arg::Ols => Stage1::Ols,
            Stage1Arg::Qr => Stage1::Qr,
        };
    }
    if a.no_intercept {
        cfg.intercept = false;
    }
    Ok(cfg)
}

fn cmd_fit(cli: &Cli, a: &FitArgs, out: &mut dyn Write) -> Result<()> {
    let method: Method = a.method.into();
    let cfg = estimator_config(cli, a)?;
    // reject bad hyperparameters before touching the data
    if method == Method::Km && !(cfg.a > 0.0 && cfg.a < 1.0) {
        return Err(Error::InvalidInput(format!(
            "reconstruction weight a must lie strictly inside (0, 1), got {}",
            cfg.a
        )));
    }
    if !(a.tau > 0.0 && a.tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau must lie in (0, 1), got {}", a.tau)));
    }
    let (table, y, w) = load_training(a)?;
    let data = maybe_smooth(table.data, a.smooth_basis)?;
    let basis = fpca(&center(&data)?, a.variance_target)?;
    let fit = estimators::fit(method, &y, &basis, &w, a.tau, &cfg)?;

    let stem = a
        .out
        .clone()
        .unwrap_or_else(|| format!("fit_{}_tau{}.json", method.as_str(), fmt_tau(a.tau)));
    let mut artifact = serde_json::to_value(&fit)?;
    artifact["command"] = json!({
        "name": "fit",
        "curves": a.curves,
        "response": a.response,
        "variance_target": a.variance_target,
        "smooth_basis": a.smooth_basis,
        "weights": weight_echo(&a.source),
    });
    let dir = &cli.out_dir;
    write_file(&dir.join(&stem), &serde_json::to_string_pretty(&artifact)?)?;

    let echo = echo_line("fit", &artifact["command"]);
    let base = stem.trim_end_matches(".json");
    let mut beta = format!("{echo}method,tau,u,beta\n");
    for (u, b) in fit.beta_fn.grid.iter().zip(&fit.beta_fn.values) {
        beta.push_str(&format!("{},{},{u},{b}\n", method.as_str(), a.tau));
    }
    write_file(&dir.join(format!("{base}_beta.csv")), &beta)?;
    if let Stage1Diagnostics::Ch { rho_grid, varsigma, .. } = &fit.stage1 {
        let mut path = format!("{echo}tau,rho,varsigma\n");
        for (r, v) in rho_grid.iter().zip(varsigma) {
            path.push_str(&format!("{},{r},{v}\n", a.tau));
        }
        write_file(&dir.join(format!("{base}_varsigma.csv")), &path)?;
    }
    writeln!(
        out,
        "{} tau={} rho_hat={}{} M={} objective={} converged={}",
        method.as_str(),
        a.tau,
        fit.rho_hat,
        if fit.rho_valid { "" } else { " (outside (-1, 1))" },
        basis.order(),
        fit.final_objective,
        fit.converged
    )?;
    Ok(())
}

fn weight_echo(src: &WeightSource) -> Value {
    json!({
        "weights": src.weights,
        "grid_weights": src.grid_weights,
        "knn": src.knn,
        "coords": src.coords,
    })
}

fn read_fit(path: &Path) -> Result<SsofqrmFit> {
    SsofqrmFit::from_json(&read_text(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn cmd_predict(cli: &Cli, a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let fit = read_fit(&a.fit)?;
    let table = read_curves(&a.curves)?;
    check_unique(&table.ids, "curve file")?;
    let w = resolve_weights(&a.source, &table)?;
    let pred = estimators::predict(&fit, &table.data, &w)?;
    let interval = match (&a.lower_fit, &a.upper_fit) {
        (Some(lo), Some(hi)) => Some(estimators::prediction_interval(&read_fit(lo)?, &read_fit(hi)?, &table.data, &w)?),
        _ => None,
    };
    let echo_v = json!({
        "fit": a.fit,
        "curves": a.curves,
        "lower_fit": a.lower_fit,
        "upper_fit": a.upper_fit,
        "weights": weight_echo(&a.source),
    });
    let echo = echo_line("predict", &echo_v);
    let mut csv = echo.clone();
    csv.push_str(if interval.is_some() { "id,pred,lower,upper\n" } else { "id,pred\n" });
    for (i, id) in table.ids.iter().enumerate() {
        match &interval {
            Some(pi) => csv.push_str(&format!("{id},{},{},{}\n", pred[i], pi.lower[i], pi.upper[i])),
            None => csv.push_str(&format!("{id},{}\n", pred[i])),
        }
    }
    write_file(&cli.out_dir.join(&a.out), &csv)?;
    writeln!(out, "predicted {} responses", pred.len())?;
    if let Some(pi) = &interval {
        let crossed = pi.crossed.iter().filter(|c| **c).count();
        writeln!(out, "interval nominal {} ({crossed} crossed quantiles swapped)", pi.nominal)?;
    }
    if let Some(p) = &a.actuals {
        let y = align(&table.ids, &read_response(p)?, "actuals file")?;
        let mspe = simlab::mspe(&pred, &y)?;
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let sse: f64 = y.iter().zip(&pred).map(|(v, p)| (v - p).powi(2)).sum();
        let r2 = 1.0 - sse / sst;
        let mut summary = json!({"command": echo_v, "n": y.len(), "mspe": mspe, "r2": r2});
        if let Some(pi) = &interval {
            summary["coverage"] = json!(simlab::coverage(&pi.lower, &pi.upper, &y)?);
            summary["cpd"] = json!(simlab::cpd(&pi.lower, &pi.upper, &y, pi.nominal)?);
            summary["interval_score"] = json!(simlab::interval_score(&pi.lower, &pi.upper, &y, 1.0 - pi.nominal)?);
        }
        let name = format!("{}_summary.json", a.out.trim_end_matches(".csv"));
        write_file(&cli.out_dir.join(name), &serde_json::to_string_pretty(&summary)?)?;
        writeln!(out, "MSPE={mspe} R2={r2}")?;
    }
    Ok(())
}

/// Resolved Monte Carlo configuration for the given CLI state.
pub fn mc_config(cli: &Cli, a: &McArgs) -> Result<McConfig> {
    let raw = load_config(cli)?;
    let mut cfg: McConfig = config_as(cli, &raw)?;
    cfg.seed = require_seed(cli, &raw)?;
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if cli.paper_literal_rmse {
        cfg.paper_literal_rmse = true;
    }
    Ok(cfg)
}

fn cmd_mc(cli: &Cli, a: &McArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = mc_config(cli, a)?;
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = simlab::run_mc(&cfg, workers)?;
    let echo = echo_line("mc", &serde_json::to_value(&cfg)?);
    let csv_path = cli.out_dir.join(format!("{}.csv", a.out));
    write_file(&csv_path, &format!("{echo}{}", report.to_csv()))?;
    let mut sidecar = serde_json::to_value(&report)?;
    sidecar["command"] = json!("mc");
    write_file(
        &cli.out_dir.join(format!("{}.json", a.out)),
        &serde_json::to_string_pretty(&sidecar)?,
    )?;
    writeln!(
        out,
        "{} scenario rows written to {}",
        report.rows.len(),
        csv_path.display()
    )?;
    Ok(())
}

fn cmd_weights(cli: &Cli, a: &WeightsArgs, out: &mut dyn Write) -> Result<()> {
    let mut echo_v = json!({"kind": format!("{:?}", a.kind).to_lowercase(), "n": a.n, "coords": a.coords, "h": a.h});
    let w = match a.kind {
        WeightKind::Grid => {
            let n = a.n.ok_or_else(|| Error::InvalidInput("grid weights need --n".into()))?;
            spatial::grid_inverse_distance_weights(n)?
        }
        WeightKind::Knn => {
            let path = a
                .coords
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("knn weights need --coords".into()))?;
            let (ids, coords) = read_coords(path)?;
            let h = match (&a.h_grid, a.h) {
                (Some(grid), _) => {
                    let hs: Vec<usize> = grid
                        .split(',')
                        .map(|s| s.trim().parse().map_err(|_| Error::InvalidInput(format!("bad neighbour grid `{grid}`"))))
                        .collect::<Result<_>>()?;
                    let table = read_curves(a.curves.as_ref().expect("clap requires curves"))?;
                    if table.ids != ids {
                        return Err(Error::InvalidInput("coordinate ids must match the curve ids in order".into()));
                    }
                    let y = align(&table.ids, &read_response(a.response.as_ref().expect("clap requires response"))?, "response file")?;
                    let (h, curve) = estimators::select_knn_neighbors(
                        &coords,
                        &table.data,
                        &y,
                        &hs,
                        a.folds,
                        0.95,
                        &EstimatorConfig::default(),
                    )?;
                    for (hk, v) in hs.iter().zip(&curve) {
                        writeln!(out, "h={hk} cv_mspe={v}")?;
                    }
                    echo_v["h_grid"] = json!(hs);
                    echo_v["cv_mspe"] = json!(curve);
                    h
                }
                (None, Some(h)) => h,
                (None, None) => return Err(Error::InvalidInput("knn weights need --h or --h-grid".into())),
            };
            echo_v["h"] = json!(h);
            spatial::knn_bisquare_weights(&coords, h)?
        }
    };
    let path = cli.out_dir.join(&a.out);
    write_file(&path, &weights_text(&echo_line("weights", &echo_v), &w))?;
    writeln!(out, "{}x{} weights written to {}", w.n(), w.n(), path.display())?;
    Ok(())
}

fn cmd_moran(cli: &Cli, a: &MoranArgs, out: &mut dyn Write) -> Result<()> {
    let w = read_weights(&a.weights)?;
    let pairs = read_response(&a.response)?;
    if pairs.len() != w.n() {
        return Err(Error::DimensionMismatch {
            what: "response length vs weight matrix size",
            expected: w.n(),
            got: pairs.len(),
        });
    }
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let stat = spatial::local_morans_i(&w, &y)?;
    let echo = echo_line("moran", &json!({"weights": a.weights, "response": a.response}));
    let mut csv = format!("{echo}id,local_i\n");
    for ((id, _), v) in pairs.iter().zip(&stat) {
        csv.push_str(&format!("{id},{v}\n"));
    }
    write_file(&cli.out_dir.join(&a.out), &csv)?;
    writeln!(out, "local Moran's I for {} units", stat.len())?;
    Ok(())
}

fn cmd_fpca(cli: &Cli, a: &FpcaArgs, out: &mut dyn Write) -> Result<()> {
    let table = read_curves(&a.curves)?;
    let data = maybe_smooth(table.data, a.smooth_basis)?;
    let basis = fpca(&center(&data)?, a.variance_target)?;
    let echo_v = json!({
        "curves": a.curves,
        "variance_target": a.variance_target,
        "smooth_basis": a.smooth_basis,
    });
    let mut export = serde_json::to_value(basis.export())?;
    export["command"] = echo_v.clone();
    export["ids"] = json!(table.ids);
    write_file(
        &cli.out_dir.join(format!("{}.json", a.out)),
        &serde_json::to_string_pretty(&export)?,
    )?;
    let phi: &DMatrix<f64> = basis.eigenfunctions();
    let mut csv = format!("{}component,u,value\n", echo_line("fpca", &echo_v));
    for m in 0..basis.order() {
        for (k, u) in basis.grid().iter().enumerate() {
            csv.push_str(&format!("{},{u},{}\n", m + 1, phi[(m, k)]));
        }
    }
    write_file(&cli.out_dir.join(format!("{}_eigenfunctions.csv", a.out)), &csv)?;
    writeln!(
        out,
        "M={} explained={:.4} leading eigenvalue={}",
        basis.order(),
        basis.explained_fraction(),
        basis.eigenvalues()[0]
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_grid_parsing() {
        let g = parse_rho_grid("-0.5:0.25:0.5").unwrap();
        assert_eq!(g, vec![-0.5, -0.25, 0.0, 0.25, 0.5]);
        assert_eq!(parse_rho_grid("0.3").unwrap(), vec![0.3]);
        assert_eq!(parse_rho_grid("0.1, 0.2").unwrap(), vec![0.1, 0.2]);
        assert!(parse_rho_grid("a:b").is_err());
        assert!(parse_rho_grid("0:0:1").is_err());
        assert_eq!(parse_rho_grid("-0.99:0.01:0.99").unwrap().len(), 199);
    }

    #[test]
    fn id_ordering() {
        let ids: Vec<String> = ["10", "2", "1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(canonical_order(&ids), vec![2, 1, 0]);
        let ids: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(canonical_order(&ids), vec![1, 0, 2]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Error::InvalidInput("x".into()).exit_code(), 2);
        assert_eq!(Error::Parse("x".into()).exit_code(), 2);
        assert_eq!(Error::Singular("x".into()).exit_code(), 3);
        assert_eq!(Error::RankDeficient { ratio: 0.0 }.exit_code(), 3);
        assert_eq!(Error::Io(std::io::Error::other("x")).exit_code(), 4);
    }
}
