//! Command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::graph_io::{
    load_graph, load_matrix_csv, sample_neighbors, synthetic, Graph, SampledAdjacency,
};
use crate::matrix::Matrix;
use crate::noo::{detect_regions, run_noo, simulated_conflicts, NodeOrder};
use crate::packing::SlotLayout;
use crate::pipeline::{chain, dry_run, infer, sweep_t, InferOptions, LayerSpec, ModeChoice};
use crate::report::{add_timing, dry_run_report, inference_report, Report, Section};
use crate::slotvm::CostModel;
use crate::spintra::{build_schedule, compute_shifts, ScheduleOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_VERIFY: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hegcn",
    version,
    about = "Schedule and simulate homomorphic GCN inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Packing width, per-layer modes and symbolic operation counts.
    Plan {
        #[command(flatten)]
        common: CommonArgs,
        /// Also evaluate every feasible packing width.
        #[arg(long)]
        sweep_t: bool,
    },
    /// Writes the optimized node order, one ring position per line.
    Reorder {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Simulated inference verified against the plaintext model.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "PATH")]
        dump_schedule: Option<PathBuf>,
        /// Adds preprocessing wall time to the report.
        #[arg(long)]
        timing: bool,
    },
    /// Ablation grid over the scheduling optimizations and a CPOO threshold sweep.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(Debug, Args, Default)]
struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    graph: Option<PathBuf>,
    /// Power-law synthetic graph with this many nodes instead of `--graph`.
    #[arg(long, value_name = "NODES")]
    synthetic: Option<usize>,
    #[arg(long, value_name = "PATH")]
    features: Option<PathBuf>,
    /// Comma-separated CSV paths, one per layer.
    #[arg(long, value_name = "PATHS")]
    weights: Option<String>,
    /// Feature dimensions, e.g. `1433-32-16`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    slots: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    /// `auto` or a power of two.
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    th: Option<String>,
    #[arg(long)]
    cpoo_threshold: Option<String>,
    #[arg(long)]
    rot_weight: Option<String>,
    #[arg(long)]
    no_aoo: bool,
    #[arg(long)]
    no_cpoo: bool,
    #[arg(long)]
    no_noo: bool,
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

/// Fully resolved settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub features: Option<PathBuf>,
    pub weights: Vec<PathBuf>,
    pub dims: Option<Vec<usize>>,
    pub slots: usize,
    pub levels: u32,
    pub t: Option<usize>,
    pub n: usize,
    pub seed: u64,
    pub th: usize,
    pub cpoo_threshold: f64,
    pub rot_weight: f64,
    pub aoo: bool,
    pub cpoo: bool,
    pub noo: bool,
    /// Overrides keyed by 0-based layer index.
    pub modes: BTreeMap<usize, ModeChoice>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            graph: None,
            synthetic: None,
            features: None,
            weights: Vec::new(),
            dims: None,
            slots: 4096,
            levels: 6,
            t: None,
            n: 4,
            seed: 1,
            th: 1024,
            cpoo_threshold: 0.25,
            rot_weight: 20.0,
            aoo: true,
            cpoo: true,
            noo: true,
            modes: BTreeMap::new(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value `{value}` for `{key}`"
        ))),
    }
}

pub fn parse_dims(text: &str) -> Result<Vec<usize>> {
    let dims = text
        .split('-')
        .map(|d| parse_value::<usize>("dims", d))
        .collect::<Result<Vec<_>>>()?;
    chain(&dims)?;
    Ok(dims)
}

impl RunConfig {
    /// Applies one `key=value` setting; keys match the long flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "graph" => self.graph = Some(PathBuf::from(v)),
            "synthetic" => self.synthetic = Some(parse_value(key, v)?),
            "features" => self.features = Some(PathBuf::from(v)),
            "weights" => self.weights = v.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            "dims" => self.dims = Some(parse_dims(v)?),
            "slots" => self.slots = parse_value(key, v)?,
            "levels" => self.levels = parse_value(key, v)?,
            "t" => {
                self.t = match v {
                    "auto" => None,
                    k => Some(parse_value(key, k)?),
                }
            }
            "n" => self.n = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "th" => self.th = parse_value(key, v)?,
            "cpoo-threshold" => self.cpoo_threshold = parse_value(key, v)?,
            "rot-weight" => self.rot_weight = parse_value(key, v)?,
            "aoo" => self.aoo = parse_bool(key, v)?,
            "cpoo" => self.cpoo = parse_bool(key, v)?,
            "noo" => self.noo = parse_bool(key, v)?,
            _ => match key.strip_prefix("mode-layer").map(str::parse::<usize>) {
                Some(Ok(layer)) => {
                    self.modes.insert(layer, v.parse()?);
                }
                _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
            },
        }
        Ok(())
    }

    /// Flat `key=value` text; blank lines and `#` comments are skipped.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {}: expected key=value, got `{line}`",
                    i + 1
                ))
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.slots.is_power_of_two() || self.slots < 2 {
            return Err(Error::Config(format!(
                "slots={} is not a power of two",
                self.slots
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.th == 0 {
            return Err(Error::Config("th must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.cpoo_threshold) {
            return Err(Error::Config(format!(
                "cpoo-threshold={} must lie in [0, 1]",
                self.cpoo_threshold
            )));
        }
        if self.rot_weight <= 0.0 {
            return Err(Error::Config("rot-weight must be positive".into()));
        }
        Ok(())
    }

    pub fn infer_options(&self) -> InferOptions {
        InferOptions {
            slots: self.slots,
            levels: self.levels,
            t: self.t,
            cost: CostModel::with_rot_ratio(self.rot_weight),
            aoo: self.aoo,
            cpoo_threshold: if self.cpoo { self.cpoo_threshold } else { 0.0 },
            noo: self.noo,
            th: self.th,
            ..InferOptions::default()
        }
    }

    fn graph(&self) -> Result<Graph> {
        match (&self.graph, self.synthetic) {
            (Some(path), _) => load_graph(path),
            (None, Some(nodes)) => Ok(synthetic::power_law(nodes, 2, self.seed)),
            (None, None) => Err(Error::Config(
                "no input graph: pass --graph <path> or --synthetic <nodes>".into(),
            )),
        }
    }
}

/// Flags win over the config file, which wins over defaults.
fn resolve(common: &CommonArgs, mode_flags: &[(usize, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        cfg.apply_file_text(&text)?;
    }
    let string_flags = [
        (
            "graph",
            common.graph.as_ref().map(|p| p.display().to_string()),
        ),
        ("synthetic", common.synthetic.map(|s| s.to_string())),
        (
            "features",
            common.features.as_ref().map(|p| p.display().to_string()),
        ),
        ("weights", common.weights.clone()),
        ("dims", common.dims.clone()),
        ("slots", common.slots.clone()),
        ("levels", common.levels.clone()),
        ("t", common.t.clone()),
        ("n", common.n.clone()),
        ("seed", common.seed.clone()),
        ("th", common.th.clone()),
        ("cpoo-threshold", common.cpoo_threshold.clone()),
        ("rot-weight", common.rot_weight.clone()),
    ];
    for (key, value) in string_flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    cfg.aoo &= !common.no_aoo;
    cfg.cpoo &= !common.no_cpoo;
    cfg.noo &= !common.no_noo;
    for (layer, mode) in mode_flags {
        cfg.modes.insert(*layer, mode.parse()?);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Graph, features, weights and layer chain of a configuration.
pub struct Model {
    pub graph: Graph,
    pub adj: SampledAdjacency,
    pub x: Matrix,
    pub weights: Vec<Matrix>,
    pub layers: Vec<LayerSpec>,
}

const DEFAULT_HIDDEN: [usize; 2] = [16, 8];

pub fn load_model(cfg: &RunConfig) -> Result<Model> {
    let graph = cfg.graph()?;
    let adj = sample_neighbors(&graph, cfg.n, cfg.seed)?;
    let num_nodes = graph.num_nodes();
    let features = cfg.features.as_deref().map(load_matrix_csv).transpose()?;
    let loaded: Vec<Matrix> = cfg
        .weights
        .iter()
        .map(|p| load_matrix_csv(p))
        .collect::<Result<_>>()?;

    let dims = match (&cfg.dims, loaded.is_empty()) {
        (Some(d), _) => d.clone(),
        (None, false) => std::iter::once(loaded[0].rows())
            .chain(loaded.iter().map(Matrix::cols))
            .collect(),
        (None, true) => {
            let f = features.as_ref().map_or(32, Matrix::cols);
            std::iter::once(f).chain(DEFAULT_HIDDEN).collect()
        }
    };
    let mut layers = chain(&dims)?;
    for (&l, &mode) in &cfg.modes {
        let spec = layers.get_mut(l).ok_or_else(|| {
            Error::Config(format!(
                "mode-layer{l} names a layer beyond the {} configured",
                dims.len() - 1
            ))
        })?;
        spec.mode = mode;
    }

    let x = match features {
        Some(x) => {
            if x.rows() != num_nodes || x.cols() != dims[0] {
                return Err(Error::Dimension(format!(
                    "features are {}x{}, expected {num_nodes}x{}",
                    x.rows(),
                    x.cols(),
                    dims[0]
                )));
            }
            x
        }
        None => Matrix::random(num_nodes, dims[0], cfg.seed),
    };
    let weights = if loaded.is_empty() {
        dims.windows(2)
            .enumerate()
            .map(|(i, w)| {
                let s = 1.0 / (w[0] as f64).sqrt();
                Matrix::random(w[0], w[1], cfg.seed.wrapping_add(1000 + i as u64)).map(|v| v * s)
            })
            .collect()
    } else {
        loaded
    };
    Ok(Model {
        graph,
        adj,
        x,
        weights,
        layers,
    })
}

fn emit(report: &Report, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let text = report.to_string();
    match path {
        Some(p) => fs::write(p, text).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => out.write_all(text.as_bytes()).map_err(|source| Error::Io {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn put_config(r: &mut Report, cfg: &RunConfig, model: &Model) {
    let mut s = Section::new("config");
    match (&cfg.graph, cfg.synthetic) {
        (Some(p), _) => s.put("graph", p.display()),
        (None, Some(nodes)) => s.put("graph", format!("synthetic:{nodes}")),
        (None, None) => s.put("graph", "none"),
    };
    let dims: Vec<String> = std::iter::once(model.layers[0].f_in)
        .chain(model.layers.iter().map(|l| l.f_out))
        .map(|d| d.to_string())
        .collect();
    s.put("nodes", model.graph.num_nodes())
        .put("edges", model.graph.edges().len())
        .put("dims", dims.join("-"))
        .put("slots", cfg.slots)
        .put("levels", cfg.levels)
        .put("t", cfg.t.map_or("auto".to_string(), |t| t.to_string()))
        .put("n", cfg.n)
        .put("seed", cfg.seed)
        .put("th", cfg.th)
        .put("cpoo_threshold", cfg.cpoo_threshold)
        .put("rot_weight", cfg.rot_weight)
        .put("aoo", cfg.aoo)
        .put("cpoo", cfg.cpoo)
        .put("noo", cfg.noo);
    r.sections.insert(0, s);
}

fn cmd_plan(
    cfg: &RunConfig,
    sweep: bool,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let model = load_model(cfg)?;
    let opts = cfg.infer_options();
    let run = dry_run(&model.adj, &model.layers, &opts)?;
    let mut r = dry_run_report(&run, &opts.cost);
    put_config(&mut r, cfg, &model);
    if sweep {
        let points = sweep_t(&model.adj, &model.layers, &opts)?;
        let s = r.section("sweep");
        for p in &points {
            s.put(format!("t{}.objective", p.t), p.objective)
                .put(format!("t{}.rot", p.t), p.hoc.total.rot)
                .put(format!("t{}.latency", p.t), p.hoc.latency);
        }
        if let Some(best) = points
            .iter()
            .min_by(|a, b| a.hoc.latency.total_cmp(&b.hoc.latency))
        {
            s.put("best_t", best.t);
        }
    }
    emit(&r, report_path, out)?;
    Ok(EXIT_OK)
}

fn cmd_reorder(
    cfg: &RunConfig,
    out_path: Option<&Path>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    let model = load_model(cfg)?;
    let opts = cfg.infer_options();
    let plan = crate::pipeline::prepare(
        &model.adj,
        &model.layers[..1],
        &InferOptions {
            noo: false,
            ..opts.clone()
        },
    )?;
    let ring = plan.layout.ring();
    let partition = detect_regions(&model.adj, cfg.th)?;
    let order = run_noo(&model.adj, ring, cfg.th)?;
    let identity = NodeOrder::identity(model.graph.num_nodes(), ring)?;
    let mut r = Report::new("reorder");
    put_config(&mut r, cfg, &model);
    r.section("metrics")
        .put("ring", ring)
        .put("regions", partition.regions().len())
        .put(
            "conflicts.identity",
            simulated_conflicts(&partition, &model.adj, &identity),
        )
        .put(
            "conflicts.noo",
            simulated_conflicts(&partition, &model.adj, &order),
        );
    match out_path {
        Some(p) => {
            write_file(p, &order.to_text())?;
            emit(&r, report_path, out)?;
        }
        None => {
            out.write_all(order.to_text().as_bytes())
                .map_err(|source| Error::Io {
                    path: PathBuf::from("<stdout>"),
                    source,
                })?;
            if let Some(p) = report_path {
                emit(&r, Some(p), out)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn cmd_run(
    cfg: &RunConfig,
    dump: Option<&Path>,
    timing: bool,
    report_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let model = load_model(cfg)?;
    let opts = cfg.infer_options();
    let run = infer(&model.adj, &model.x, &model.weights, &model.layers, &opts)?;
    let mut r = inference_report(&run, &opts.cost);
    put_config(&mut r, cfg, &model);
    if timing {
        add_timing(&mut r, &run.plan, &run.hoc, &opts.cost);
    }
    if let Some(path) = dump {
        let text = run
            .plan
            .schedule
            .as_ref()
            .map_or_else(String::new, |s| s.dump());
        write_file(path, &text)?;
    }
    emit(&r, report_path, out)?;
    if run.verify.passed() {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(
            err,
            "verification failed: max relative error {:e} exceeds {:e}",
            run.verify.max_rel_error, run.verify.tolerance
        );
        Ok(EXIT_VERIFY)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const SWEEP_THRESHOLDS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

/// One bench instance: graph, sampled adjacency and layer chain for a seed.
fn bench_instance(cfg: &RunConfig, seed: u64) -> Result<Model> {
    let mut c = cfg.clone();
    c.seed = seed;
    if c.graph.is_none() && c.synthetic.is_none() {
        c.synthetic = Some(1024);
    }
    let mut model = load_model(&c)?;
    for (l, spec) in model.layers.iter_mut().enumerate().skip(1) {
        if !cfg.modes.contains_key(&l) {
            spec.mode = ModeChoice::SpIntra;
        }
    }
    Ok(model)
}

fn cmd_bench(
    cfg: &RunConfig,
    seeds: usize,
    report_path: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    if seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let instances = (0..seeds as u64)
        .map(|i| bench_instance(cfg, cfg.seed + i))
        .collect::<Result<Vec<_>>>()?;
    let mut r = Report::new("bench");
    put_config(&mut r, cfg, &instances[0]);
    r.section("config").put("seeds", seeds);

    let mut table = Vec::new();
    for aoo in [false, true] {
        for cpoo in [false, true] {
            for noo in [false, true] {
                let mut rots = Vec::new();
                let mut lats = Vec::new();
                for m in &instances {
                    let mut c = cfg.clone();
                    c.aoo = aoo;
                    c.cpoo = cpoo;
                    c.noo = noo;
                    let run = dry_run(&m.adj, &m.layers, &c.infer_options())?;
                    rots.push(run.plan.schedule.as_ref().map_or(0, |s| s.rot_count()) as f64);
                    lats.push(run.hoc.latency);
                }
                table.push(((aoo, cpoo, noo), mean_std(&rots), mean_std(&lats)));
            }
        }
    }
    let sign = |b: bool| if b { '+' } else { '-' };
    let grid = r.section("grid");
    for ((a, c, n), (rm, rs), (lm, ls)) in &table {
        grid.put(
            format!("{}aoo {}cpoo {}noo", sign(*a), sign(*c), sign(*n)),
            format!("rot {rm:.2} ± {rs:.2}, latency {lm:.1} ± {ls:.1}"),
        );
    }

    let mut sweep = Vec::new();
    for &th in &SWEEP_THRESHOLDS {
        let mut rots = Vec::new();
        for m in &instances {
            let mut c = cfg.clone();
            c.cpoo = th > 0.0;
            c.cpoo_threshold = th;
            let opts = c.infer_options();
            let plan = crate::pipeline::prepare(
                &m.adj,
                &m.layers[..1],
                &InferOptions {
                    noo: cfg.noo,
                    ..opts.clone()
                },
            )?;
            let layout: &SlotLayout = &plan.layout;
            let mut tokens = compute_shifts(&m.adj, layout)?;
            tokens.retain(|t| t.weight != 0.0);
            let sched = build_schedule(
                &tokens,
                layout,
                &ScheduleOptions {
                    aoo: cfg.aoo,
                    cpoo_threshold: opts.cpoo_threshold,
                },
            );
            rots.push(sched.rot_count() as f64);
        }
        sweep.push((th, mean_std(&rots)));
    }
    let s = r.section("sweep");
    for (th, (m, sd)) in &sweep {
        s.put(
            format!("threshold {th:.1}"),
            format!("rot {m:.2} ± {sd:.2}"),
        );
    }
    let best = sweep
        .iter()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .map(|(th, _)| *th)
        .unwrap_or(0.0);

    let metrics = r.section("metrics");
    for ((a, c, n), (rm, rs), (lm, ls)) in &table {
        let key = format!(
            "grid.aoo{}.cpoo{}.noo{}",
            u8::from(*a),
            u8::from(*c),
            u8::from(*n)
        );
        metrics
            .put(format!("{key}.rot_mean"), format!("{rm:.4}"))
            .put(format!("{key}.rot_std"), format!("{rs:.4}"))
            .put(format!("{key}.latency_mean"), format!("{lm:.4}"))
            .put(format!("{key}.latency_std"), format!("{ls:.4}"));
    }
    for (th, (m, sd)) in &sweep {
        metrics
            .put(format!("sweep.{th:.1}.rot_mean"), format!("{m:.4}"))
            .put(format!("sweep.{th:.1}.rot_std"), format!("{sd:.4}"));
    }
    metrics.put("sweep.best_threshold", format!("{best:.1}"));
    emit(&r, report_path, out)?;
    Ok(EXIT_OK)
}

/// Pulls `--mode-layer<i> <mode>` and `--mode-layer<i>=<mode>` out of the
/// argument list, since clap cannot declare flags with numeric suffixes.
type ModeFlags = Vec<(usize, String)>;

fn split_mode_flags(args: Vec<String>) -> Result<(Vec<String>, ModeFlags)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut modes = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(tail) = arg.strip_prefix("--mode-layer") else {
            rest.push(arg);
            continue;
        };
        let (index, value) = match tail.split_once('=') {
            Some((i, v)) => (i.to_string(), v.to_string()),
            None => {
                let v = iter.next().ok_or_else(|| {
                    Error::Config(format!("{arg} expects a mode (inter|spintra|auto)"))
                })?;
                (tail.to_string(), v)
            }
        };
        let layer = index
            .parse()
            .map_err(|_| Error::Config(format!("unknown flag `{arg}`")))?;
        modes.push((layer, value));
    }
    Ok((rest, modes))
}

/// Entry point shared by the binary and tests; returns the process exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let (args, mode_flags) = match split_mode_flags(args) {
        Ok(v) => v,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_CONFIG,
            };
        }
    };
    let result = match &cli.command {
        Command::Plan { common, sweep_t } => resolve(common, &mode_flags)
            .and_then(|cfg| cmd_plan(&cfg, *sweep_t, common.report.as_deref(), out)),
        Command::Reorder { common, out: path } => resolve(common, &mode_flags)
            .and_then(|cfg| cmd_reorder(&cfg, path.as_deref(), common.report.as_deref(), out)),
        Command::Run {
            common,
            dump_schedule,
            timing,
        } => resolve(common, &mode_flags).and_then(|cfg| {
            cmd_run(
                &cfg,
                dump_schedule.as_deref(),
                *timing,
                common.report.as_deref(),
                out,
                err,
            )
        }),
        Command::Bench { common, seeds } => resolve(common, &mode_flags)
            .and_then(|cfg| cmd_bench(&cfg, seeds.unwrap_or(5), common.report.as_deref(), out)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_CONFIG
        }
    }
}
