//! Subcommand arguments and implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use bgret::harness::bench::{
    default_offsets, image_benchmark, location_bias_study, noise_benchmark, ImageAggregate, ImageBenchConfig,
};
use bgret::harness::generate::{add_noise, gen_background, gen_signal, phantom, NoiseSpec, SignalKind};
use bgret::harness::pool::Pool;
use bgret::harness::sweep::{sweep_phase_transition, SweepConfig};
use bgret::harness::trial::{solve, Placement};
use bgret::harness::verify::{
    minimal_background_2d, verify_frip, verify_lmatrix, verify_robustness, verify_stability, verify_uniqueness,
};
use bgret::io::{self, ExperimentConfig, RunManifest};
use bgret::metrics::{psnr, relative_error, ssim, success, SsimParams};
use bgret::solvers::Problem;
use bgret::spectral::intensity_on;
use bgret::{assemble, Dims, Error, Field, IntensityMeasurements, Method, Result, Shape, SolverConfig};

use crate::{Cli, Command, PlacementArg, Preset, Status};

// Aliases keep clap from treating parsed lists as repeated arguments.
type Sizes = Vec<usize>;
type Ratios = Vec<f64>;
type Offsets = Vec<Vec<usize>>;
type Methods = Vec<Method>;

fn parse_sizes(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(|c| c == 'x' || c == ',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad size {t:?}")))
        .collect()
}

/// `2,2.5,3` or `start:stop:step`.
fn parse_ratios(s: &str) -> std::result::Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad ratio {t:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, b, c] => {
            let (a, b, c) = (num(a)?, num(b)?, num(c)?);
            if !(c > 0.0 && b >= a) {
                return Err(format!("bad range {s:?}"));
            }
            Ok(SweepConfig::ratio_range(a, b, c))
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("bad ratio list {s:?}")),
    }
}

/// `0,0;3,3;6,6`.
fn parse_offsets(s: &str) -> std::result::Result<Vec<Vec<usize>>, String> {
    s.split(';').map(parse_sizes).collect()
}

fn parse_methods(s: &str) -> std::result::Result<Vec<Method>, String> {
    s.split(',').map(|t| t.trim().parse::<Method>().map_err(|e| e.to_string())).collect()
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

#[derive(Args, Debug)]
pub struct PlacementOpts {
    /// Support position inside the background.
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    /// Explicit support offset, e.g. `3,3`; overrides --placement.
    #[arg(long, value_parser = parse_sizes)]
    pub offset: Option<Sizes>,
}

impl PlacementOpts {
    fn resolve(&self, default: Placement) -> Placement {
        match (&self.offset, self.placement) {
            (Some(o), _) => Placement::Offset(o.clone()),
            (None, Some(PlacementArg::Leading)) => Placement::Leading,
            (None, Some(PlacementArg::Centered)) => Placement::Centered,
            (None, None) => default,
        }
    }
}

#[derive(Args, Debug)]
pub struct SolverOpts {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Relaxation for BDR1 and HIO.
    #[arg(long)]
    pub beta: Option<f64>,
    /// PGD step size.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenSignalArgs {
    /// gaussian (type1), chirp (type2) or file (type3).
    #[arg(long, default_value = "gaussian")]
    pub kind: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// Source CSV for the file kind.
    #[arg(long)]
    pub path: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenBackgroundArgs {
    /// Sample size, `100` or `64x64`.
    #[arg(long, value_parser = parse_sizes)]
    pub n: Option<Sizes>,
    /// Background size per axis.
    #[arg(long, value_parser = parse_sizes, conflicts_with = "k_ratio")]
    pub k: Option<Sizes>,
    #[arg(long)]
    pub k_ratio: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[command(flatten)]
    pub place: PlacementOpts,
}

#[derive(Args, Debug)]
pub struct ForwardArgs {
    /// Sample values (signal CSV, CSV matrix or PGM).
    #[arg(long)]
    pub sample: PathBuf,
    /// Full background grid with zeros on the support.
    #[arg(long)]
    pub background: PathBuf,
    #[command(flatten)]
    pub place: PlacementOpts,
    /// Gaussian noise on the root intensities (normalised units).
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub intensity: PathBuf,
    /// Known background grid; required except for HIO.
    #[arg(long)]
    pub background: Option<PathBuf>,
    /// Sample size on the support.
    #[arg(long, value_parser = parse_sizes)]
    pub n: Sizes,
    #[arg(long, value_parser = parse_method, default_value = "BDR")]
    pub method: Method,
    #[command(flatten)]
    pub place: PlacementOpts,
    #[command(flatten)]
    pub solver: SolverOpts,
    /// Ground truth, for error reporting only.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// Sample lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// `2,3` or `1:7:0.1`.
    #[arg(long, value_parser = parse_ratios)]
    pub k_ratios: Option<Ratios>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// gaussian, chirp or file.
    #[arg(long)]
    pub signal: Option<String>,
    #[arg(long)]
    pub signal_path: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[command(flatten)]
    pub solver: SolverOpts,
}

#[derive(Args, Debug)]
pub struct ImageOpts {
    /// PGM or CSV image; a built-in phantom when absent.
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub k_ratio: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[command(flatten)]
    pub place: PlacementOpts,
    #[command(flatten)]
    pub solver: SolverOpts,
}

#[derive(Args, Debug)]
pub struct ImageBenchArgs {
    #[command(flatten)]
    pub image: ImageOpts,
    #[arg(long, value_parser = parse_methods)]
    pub methods: Option<Methods>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct LocationArgs {
    #[command(flatten)]
    pub image: ImageOpts,
    #[arg(long, value_parser = parse_method)]
    pub method: Option<Method>,
    /// `0,0;3,3`; defaults to {0, k/4, k/2} on each axis.
    #[arg(long, value_parser = parse_offsets)]
    pub offsets: Option<Offsets>,
}

#[derive(Args, Debug)]
pub struct NoiseBenchArgs {
    #[command(flatten)]
    pub image: ImageOpts,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Half-width of the uniform background bias.
    #[arg(long, default_value_t = 0.0)]
    pub bias: f64,
    #[arg(long, value_parser = parse_methods)]
    pub methods: Option<Methods>,
}

#[derive(Subcommand, Debug)]
pub enum VerifyCommand {
    /// Rank of M and least-squares recovery from exact data.
    Uniqueness {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 12)]
        k: usize,
        /// Dimension (1 or 2).
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 100)]
        draws: usize,
    },
    /// Stability inequality on random pairs sharing a background.
    Stability {
        #[arg(long, default_value_t = 6)]
        n: usize,
        /// Defaults to the smallest k satisfying the dimension count.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 100)]
        pairs: usize,
    },
    /// Robustness bound under bounded noise and background bias.
    Robustness {
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        c1: f64,
        #[arg(long, default_value_t = 1e-3)]
        c2: f64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Conditioning of the circulant matrix L.
    Lmatrix {
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 24)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        draws: usize,
    },
    /// Expectation identity behind the F-RIP bound.
    Frip {
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        draws: usize,
        /// Number of vectors h drawn from C₂.
        #[arg(long, default_value_t = 5)]
        h: usize,
    },
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// PSNR peak; defaults to the dynamic range of the truth.
    #[arg(long)]
    pub peak: Option<f64>,
}

/// Resolved global state shared by the commands.
struct Ctx {
    cfg: Option<ExperimentConfig>,
    cfg_path: Option<PathBuf>,
    seed: u64,
    out: PathBuf,
    workers: usize,
    preset: Preset,
    timing: bool,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self> {
        let g = &cli.global;
        let cfg = g.config.as_ref().map(io::read_config).transpose()?;
        let seed = g.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
        let out = g
            .out
            .clone()
            .or_else(|| cfg.as_ref().and_then(|c| c.paths.out.clone()))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Ctx {
            cfg,
            cfg_path: g.config.clone(),
            seed,
            out,
            workers: g.workers.unwrap_or(0),
            preset: g.preset,
            timing: !g.no_timing,
        })
    }

    fn pool(&self) -> Result<Pool> {
        Pool::new(self.workers)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, command: &str, config: Value) -> RunManifest {
        RunManifest::new(command, self.seed, self.workers, config)
    }

    fn image_side(&self) -> usize {
        match self.preset {
            Preset::Desk => 64,
            Preset::Paper => 256,
        }
    }

    fn trials(&self, explicit: Option<usize>, desk: usize) -> usize {
        explicit.or(self.cfg.as_ref().map(|c| c.trials)).unwrap_or(match self.preset {
            Preset::Desk => desk,
            Preset::Paper => 100,
        })
    }

    fn solver(&self, method: Method, opts: &SolverOpts) -> SolverConfig<f64> {
        let mut s = self.cfg.as_ref().map_or_else(|| SolverConfig::new(method), |c| c.solver_config());
        s.method = method;
        if self.cfg.as_ref().is_some_and(|c| c.method != method) {
            s.beta = SolverConfig::<f64>::new(method).beta;
        }
        if let Some(v) = opts.max_iter {
            s.max_iter = v;
        }
        if let Some(v) = opts.eps {
            s.eps = v;
        }
        if let Some(v) = opts.beta {
            s.beta = v;
        }
        if let Some(v) = opts.lambda {
            s.lambda = v;
        }
        s.seed = self.seed;
        s
    }
}

fn finish(m: RunManifest, ctx: &Ctx, command: &str, outputs: &[PathBuf]) -> Result<()> {
    let mut m = m;
    for p in outputs {
        m.add_output(p)?;
    }
    if let Some(cfg) = &ctx.cfg_path {
        m.add_input(cfg)?;
    }
    m.finish(ctx.path(&format!("{command}.manifest.json")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::InvalidConfig(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    std::fs::write(path, text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Reads a 1-D signal (single column) or a 2-D array.
fn read_array(path: &Path) -> Result<Field<f64>> {
    let f = io::read_image(path)?;
    let ext = f.shape().extents().to_vec();
    if ext.len() == 2 && ext[1] == 1 {
        return Field::new(Shape::line(ext[0]), f.into_vec());
    }
    Ok(f)
}

fn write_array(path: &Path, f: &Field<f64>) -> Result<()> {
    if f.shape().ndim() == 1 {
        io::write_signal_csv(path, f.as_slice())
    } else {
        io::write_image(path, f)
    }
}

fn signal_kind(name: &str, path: Option<&PathBuf>) -> Result<SignalKind> {
    match name.to_ascii_lowercase().as_str() {
        "gaussian" | "type1" => Ok(SignalKind::Gaussian),
        "chirp" | "type2" => Ok(SignalKind::Chirp),
        "file" | "type3" => path
            .cloned()
            .map(SignalKind::File)
            .ok_or_else(|| Error::InvalidConfig("the file signal needs --path".into())),
        other => Err(Error::InvalidConfig(format!("unknown signal kind {other:?}"))),
    }
}

pub fn dispatch(cli: &Cli) -> Result<Status> {
    let ctx = Ctx::new(cli)?;
    match &cli.command {
        Command::GenSignal(a) => gen_signal_cmd(&ctx, a),
        Command::GenBackground(a) => gen_background_cmd(&ctx, a),
        Command::Forward(a) => forward_cmd(&ctx, a),
        Command::Solve(a) => solve_cmd(&ctx, a),
        Command::Sweep(a) => sweep_cmd(&ctx, a),
        Command::ImageBench(a) => image_bench_cmd(&ctx, a),
        Command::LocationBias(a) => location_cmd(&ctx, a),
        Command::NoiseBench(a) => noise_bench_cmd(&ctx, a),
        Command::Verify(v) => verify_cmd(&ctx, v),
        Command::Metrics(a) => metrics_cmd(a),
    }
}

fn gen_signal_cmd(ctx: &Ctx, a: &GenSignalArgs) -> Result<Status> {
    let kind = signal_kind(&a.kind, a.path.as_ref())?;
    let n = a.n.or(ctx.cfg.as_ref().map(|c| c.sizes()[0])).unwrap_or(100);
    let v = gen_signal(&kind, n, ctx.seed)?;
    let out = ctx.path("signal.csv");
    io::write_signal_csv(&out, &v)?;
    let mut m = ctx.manifest("gen-signal", json!({"kind": kind.label(), "n": n}));
    if let Some(p) = &a.path {
        m.add_input(p)?;
    }
    finish(m, ctx, "gen-signal", &[out])?;
    Ok(Status::Ok)
}

fn sample_and_background(ctx: &Ctx, n: Option<&Vec<usize>>, k: Option<&Vec<usize>>, ratio: Option<f64>) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = n.cloned().or(ctx.cfg.as_ref().map(|c| c.sizes())).unwrap_or_else(|| vec![100]);
    let k = match (k, ratio) {
        (Some(k), _) => k.clone(),
        (None, Some(r)) => n.iter().map(|&v| (r * v as f64).round() as usize).collect(),
        (None, None) => match &ctx.cfg {
            Some(c) if c.sizes() == n => c.background_sizes(),
            _ => n.iter().map(|&v| 3 * v).collect(),
        },
    };
    Ok((n, k))
}

fn gen_background_cmd(ctx: &Ctx, a: &GenBackgroundArgs) -> Result<Status> {
    let (n, k) = sample_and_background(ctx, a.n.as_ref(), a.k.as_ref(), a.k_ratio)?;
    let dims = Dims::unpadded(&n, &k)?;
    let mask = a.place.resolve(Placement::Leading).mask(&dims)?;
    let y = gen_background(&mask, a.mu, a.sigma, ctx.seed)?;
    let out = ctx.path("background.csv");
    write_array(&out, &y)?;
    let m = ctx.manifest("gen-background", json!({"n": n, "k": k, "mu": a.mu, "sigma": a.sigma}));
    finish(m, ctx, "gen-background", &[out])?;
    Ok(Status::Ok)
}

fn layout(sample: &Shape, object: &Shape, place: &PlacementOpts) -> Result<(Dims, bgret::SupportMask)> {
    if sample.ndim() != object.ndim() {
        return Err(Error::ShapeMismatch {
            expected: object.extents().to_vec(),
            actual: sample.extents().to_vec(),
        });
    }
    let k: Vec<usize> = object
        .extents()
        .iter()
        .zip(sample.extents())
        .map(|(&m, &n)| m.checked_sub(n))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidDims(format!("sample {sample} does not fit in {object}")))?;
    let dims = Dims::unpadded(sample.extents(), &k)?;
    let mask = place.resolve(Placement::Leading).mask(&dims)?;
    Ok((dims, mask))
}

fn forward_cmd(ctx: &Ctx, a: &ForwardArgs) -> Result<Status> {
    let x = read_array(&a.sample)?;
    let y = read_array(&a.background)?;
    let (dims, mask) = layout(x.shape(), y.shape(), &a.place)?;
    let z = assemble(x.as_slice(), &y, &mask)?;
    let mut b = intensity_on(z.values(), &dims.measurement_shape())?;
    if a.sigma > 0.0 {
        b = add_noise(&b, &NoiseSpec::new(a.sigma, 0.0)?, ctx.seed);
    }
    let out = ctx.path("intensity.csv");
    write_array(&out, b.values())?;
    let mut m = ctx.manifest("forward", json!({"sigma": a.sigma, "shape": dims.measurement_shape().to_string()}));
    m.add_input(&a.sample)?;
    m.add_input(&a.background)?;
    finish(m, ctx, "forward", &[out])?;
    Ok(Status::Ok)
}

fn read_intensity(path: &Path) -> Result<IntensityMeasurements<f64>> {
    let f = read_array(path)?;
    IntensityMeasurements::new(f.clone(), true).or_else(|_| IntensityMeasurements::new(f, false))
}

fn solve_cmd(ctx: &Ctx, a: &SolveArgs) -> Result<Status> {
    let b = read_intensity(&a.intensity)?;
    let sample = Shape::new(&a.n)?;
    let config = ctx.solver(a.method, &a.solver);
    let (problem, mut inputs) = match (&a.background, a.method) {
        (Some(path), _) => {
            let y = read_array(path)?;
            let (_, mask) = layout(&sample, y.shape(), &a.place)?;
            (Problem::new(b, y, mask)?, vec![path.clone()])
        }
        (None, Method::Hio) => {
            let (_, mask) = layout(&sample, b.shape(), &a.place)?;
            (Problem::support_only(b, mask)?, Vec::new())
        }
        (None, m) => return Err(Error::InvalidConfig(format!("{m} needs --background"))),
    };
    inputs.push(a.intensity.clone());
    let truth = a.truth.as_ref().map(|p| read_array(p)).transpose()?;
    let run = solve(&problem, &config, truth.as_ref().map(|t| t.as_slice()))?;
    let estimate = Field::new(sample, run.estimate.clone())?;
    let est_path = ctx.path("estimate.csv");
    write_array(&est_path, &estimate)?;
    let trace_path = ctx.path("trace.csv");
    #[derive(Serialize)]
    struct TraceRow {
        iteration: usize,
        relative_error: Option<f64>,
        measurement_error: f64,
        step_norm: f64,
    }
    let rows: Vec<TraceRow> = run
        .trace
        .iter()
        .enumerate()
        .map(|(i, t)| TraceRow {
            iteration: i + 1,
            relative_error: t.relative_error,
            measurement_error: t.measurement_error,
            step_norm: t.step_norm,
        })
        .collect();
    io::write_table(&trace_path, &rows)?;
    let summary = json!({
        "method": a.method,
        "iterations": run.iterations_used,
        "converged": run.converged,
        "measurement_error": run.final_measurement_error(),
        "relative_error": run.trace.last().and_then(|t| t.relative_error),
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
    let mut m = ctx.manifest(
        "solve",
        json!({"method": a.method, "n": a.n, "max_iter": config.max_iter, "eps": config.eps, "beta": config.beta, "lambda": config.lambda}),
    );
    for p in inputs.iter().chain(a.truth.iter()) {
        m.add_input(p)?;
    }
    finish(m, ctx, "solve", &[est_path, trace_path])?;
    Ok(Status::Ok)
}

fn sweep_cmd(ctx: &Ctx, a: &SweepArgs) -> Result<Status> {
    let cfg = ctx.cfg.as_ref();
    let method = a.method.or(cfg.map(|c| c.method)).unwrap_or(Method::Bdr);
    let ns = a.n.clone().or(cfg.map(|c| vec![c.sizes()[0]])).unwrap_or_else(|| vec![100]);
    let ratios = a
        .k_ratios
        .clone()
        .or(cfg.and_then(|c| c.k_ratios.clone()))
        .or(cfg.and_then(|c| match c.background {
            io::BackgroundSize::Ratio(r) => Some(vec![r]),
            io::BackgroundSize::Explicit(_) => None,
        }))
        .unwrap_or_else(|| SweepConfig::ratio_range(1.0, 7.0, 0.1));
    let trials = ctx.trials(a.trials, 100);
    let mut sc = SweepConfig::new(method, &ns, &ratios, trials, ctx.seed);
    sc.solver = ctx.solver(method, &a.solver);
    sc.signal = match &a.signal {
        Some(s) => signal_kind(s, a.signal_path.as_ref())?,
        None => cfg.map_or(SignalKind::Gaussian, |c| c.signal_type.clone()),
    };
    sc.noise = NoiseSpec::new(a.sigma.or(cfg.map(|c| c.noise_sigma)).unwrap_or(0.0), 0.0)?;
    sc.record_timing = ctx.timing;
    let grid = sweep_phase_transition(&sc, &ctx.pool()?)?;
    let results = ctx.path("results.csv");
    io::write_results(&results, &grid.rows())?;
    let cells = ctx.path("cells.csv");
    io::write_table(&cells, &grid.cells)?;
    let trans = ctx.path("transitions.csv");
    io::write_table(&trans, &grid.transitions)?;
    for t in &grid.transitions {
        println!("n={} k90={:?} k99={:?}", t.n, t.k90, t.k99);
    }
    let m = ctx.manifest(
        "sweep",
        json!({
            "method": method, "n": ns, "k_ratios": ratios, "trials": trials, "signal": sc.signal.label(),
            "noise_sigma": sc.noise.sigma, "max_iter": sc.solver.max_iter, "eps": sc.solver.eps,
            "beta": sc.solver.beta, "lambda": sc.solver.lambda,
        }),
    );
    finish(m, ctx, "sweep", &[results, cells, trans])?;
    Ok(Status::Ok)
}

fn bench_config(ctx: &Ctx, o: &ImageOpts, default_ratio: f64, default_trials: usize) -> Result<(ImageBenchConfig, Vec<PathBuf>)> {
    let cfg = ctx.cfg.as_ref();
    let path = o.image.clone().or(cfg.and_then(|c| c.paths.image.clone()));
    let image = match &path {
        Some(p) => io::read_image(p)?,
        None => phantom(ctx.image_side(), ctx.image_side()),
    };
    let ratio = o
        .k_ratio
        .or(cfg.and_then(|c| match c.background {
            io::BackgroundSize::Ratio(r) => Some(r),
            io::BackgroundSize::Explicit(_) => None,
        }))
        .unwrap_or(default_ratio);
    let mut bc = ImageBenchConfig::new(image, ratio, ctx.trials(o.trials, default_trials), ctx.seed);
    let s = ctx.solver(Method::Bdr1, &o.solver);
    bc.max_iter = s.max_iter;
    bc.eps = s.eps;
    bc.beta = o.solver.beta.or(cfg.map(|c| c.beta).filter(|&b| b != 1.0)).unwrap_or(0.9);
    bc.lambda = s.lambda;
    bc.placement = o.place.resolve(Placement::Centered);
    bc.record_timing = ctx.timing;
    Ok((bc, path.into_iter().collect()))
}

fn bench_echo(bc: &ImageBenchConfig) -> Value {
    json!({
        "image": bc.image.shape().to_string(), "k_ratio": bc.k_ratio, "trials": bc.trials, "methods": bc.methods,
        "max_iter": bc.max_iter, "eps": bc.eps, "beta": bc.beta, "lambda": bc.lambda,
        "placement": bc.placement, "noise_sigma": bc.noise.sigma, "background_bias": bc.noise.background_bias,
    })
}

/// Flat CSV view of [`ImageAggregate`].
#[derive(Serialize)]
struct AggregateRow {
    method: Method,
    trials: usize,
    successes: usize,
    psnr_q25: f64,
    psnr_median: f64,
    psnr_q75: f64,
    ssim_q25: f64,
    ssim_median: f64,
    ssim_q75: f64,
    relative_error_q25: f64,
    relative_error_median: f64,
    relative_error_q75: f64,
    wall_ms_median: f64,
}

fn aggregate_rows(aggs: &[ImageAggregate]) -> Vec<AggregateRow> {
    aggs.iter()
        .map(|a| AggregateRow {
            method: a.method,
            trials: a.trials,
            successes: a.successes,
            psnr_q25: a.psnr.q25,
            psnr_median: a.psnr.median,
            psnr_q75: a.psnr.q75,
            ssim_q25: a.ssim.q25,
            ssim_median: a.ssim.median,
            ssim_q75: a.ssim.q75,
            relative_error_q25: a.relative_error.q25,
            relative_error_median: a.relative_error.median,
            relative_error_q75: a.relative_error.q75,
            wall_ms_median: a.wall_ms.median,
        })
        .collect()
}

fn print_aggregates(aggs: &[ImageAggregate]) {
    for a in aggs {
        println!(
            "{:<5} psnr median {:.2} dB [{:.2}, {:.2}]  ssim median {:.4}  rel. error median {:.3e}  successes {}/{}",
            a.method.name(),
            a.psnr.median,
            a.psnr.q25,
            a.psnr.q75,
            a.ssim.median,
            a.relative_error.median,
            a.successes,
            a.trials
        );
    }
}

fn image_bench_cmd(ctx: &Ctx, a: &ImageBenchArgs) -> Result<Status> {
    let (mut bc, inputs) = bench_config(ctx, &a.image, 0.6, 10)?;
    if let Some(m) = &a.methods {
        bc.methods = m.clone();
    }
    bc.noise = NoiseSpec::new(a.sigma.or(ctx.cfg.as_ref().map(|c| c.noise_sigma)).unwrap_or(0.0), 0.0)?;
    let r = image_benchmark(&bc, &ctx.pool()?)?;
    print_aggregates(&r.aggregates);
    let results = ctx.path("results.csv");
    io::write_results(&results, &r.rows())?;
    let aggs = ctx.path("aggregates.csv");
    io::write_table(&aggs, &aggregate_rows(&r.aggregates))?;
    let mut m = ctx.manifest("image-bench", bench_echo(&bc));
    for p in &inputs {
        m.add_input(p)?;
    }
    finish(m, ctx, "image-bench", &[results, aggs])?;
    Ok(Status::Ok)
}

fn location_cmd(ctx: &Ctx, a: &LocationArgs) -> Result<Status> {
    let (mut bc, inputs) = bench_config(ctx, &a.image, 1.0, 10)?;
    bc.methods = vec![a.method.or(ctx.cfg.as_ref().map(|c| c.method)).unwrap_or(Method::Bdr)];
    let offsets = a.offsets.clone().unwrap_or_else(|| default_offsets(&bc.background_sizes()));
    let r = location_bias_study(&bc, &offsets, &ctx.pool()?)?;
    for p in &r.positions {
        println!(
            "offset {:<8} success {:.2}  psnr {:.2} dB  ssim {:.4}  rel. error {:.3e}",
            p.offset, p.success_rate, p.mean_psnr, p.mean_ssim, p.mean_relative_error
        );
    }
    let results = ctx.path("results.csv");
    io::write_results(&results, &r.outcomes.iter().map(|o| o.row.clone()).collect::<Vec<_>>())?;
    let positions = ctx.path("positions.csv");
    io::write_table(&positions, &r.positions)?;
    let mut echo = bench_echo(&bc);
    echo["offsets"] = json!(offsets);
    let mut m = ctx.manifest("location-bias", echo);
    for p in &inputs {
        m.add_input(p)?;
    }
    finish(m, ctx, "location-bias", &[results, positions])?;
    Ok(Status::Ok)
}

fn noise_bench_cmd(ctx: &Ctx, a: &NoiseBenchArgs) -> Result<Status> {
    let (mut bc, inputs) = bench_config(ctx, &a.image, 3.0, 20)?;
    bc.methods = a.methods.clone().unwrap_or_else(|| vec![Method::Pgd, Method::Bdr, Method::Bdr1]);
    let sigma = a.sigma.or(ctx.cfg.as_ref().map(|c| c.noise_sigma).filter(|&s| s > 0.0)).unwrap_or(1e-3);
    bc.noise = NoiseSpec::new(sigma, a.bias)?;
    let r = noise_benchmark(&bc, &ctx.pool()?)?;
    print_aggregates(&r.aggregates);
    println!("BDR1 beats BDR in {}/{} trials", r.bdr1_beats_bdr, r.trials);
    let results = ctx.path("results.csv");
    io::write_results(&results, &r.rows())?;
    let aggs = ctx.path("aggregates.csv");
    io::write_table(&aggs, &aggregate_rows(&r.aggregates))?;
    let summary = ctx.path("noise.json");
    write_json(&summary, &json!({"trials": r.trials, "bdr1_beats_bdr": r.bdr1_beats_bdr, "aggregates": r.aggregates}))?;
    let mut m = ctx.manifest("noise-bench", bench_echo(&bc));
    for p in &inputs {
        m.add_input(p)?;
    }
    finish(m, ctx, "noise-bench", &[results, aggs, summary])?;
    Ok(Status::Ok)
}

fn verify_cmd(ctx: &Ctx, v: &VerifyCommand) -> Result<Status> {
    let pool = ctx.pool()?;
    let square = |n: usize, k: Option<usize>| -> Result<usize> { k.map_or_else(|| minimal_background_2d([n, n]), Ok) };
    let (name, report, pass) = match *v {
        VerifyCommand::Uniqueness { n, k, d, draws } => {
            if !(1..=2).contains(&d) {
                return Err(Error::UnsupportedDimension(d));
            }
            let r = verify_uniqueness(&vec![n; d], &vec![k; d], draws, ctx.seed, &pool)?;
            ("uniqueness", json!(r), r.pass)
        }
        VerifyCommand::Stability { n, k, pairs } => {
            let k = square(n, k)?;
            let r = verify_stability([n, n], [k, k], pairs, ctx.seed, &pool)?;
            ("stability", json!(r), r.pass)
        }
        VerifyCommand::Robustness { n, k, c1, c2, instances } => {
            let k = square(n, k)?;
            let r = verify_robustness([n, n], [k, k], c1, c2, instances, ctx.seed, &pool)?;
            ("robustness", json!(r), r.pass)
        }
        VerifyCommand::Lmatrix { n, k, draws } => {
            let r = verify_lmatrix(n, k, draws, ctx.seed)?;
            ("lmatrix", json!(r), r.pass)
        }
        VerifyCommand::Frip { n, k, draws, h } => {
            let r = verify_frip(n, k, h, draws, ctx.seed)?;
            ("frip", json!(r), r.pass)
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    let path = ctx.path(&format!("verify-{name}.json"));
    write_json(&path, &report)?;
    finish(ctx.manifest(&format!("verify-{name}"), report), ctx, &format!("verify-{name}"), &[path])?;
    Ok(if pass { Status::Ok } else { Status::CheckFailed })
}

fn metrics_cmd(a: &MetricsArgs) -> Result<Status> {
    let est = read_array(&a.estimate)?;
    let truth = read_array(&a.truth)?;
    if est.shape() != truth.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape().extents().to_vec(),
            actual: est.shape().extents().to_vec(),
        });
    }
    let (lo, hi) = truth.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let peak = a.peak.unwrap_or(if hi > lo { hi - lo } else { 1.0 });
    let rel = relative_error(est.as_slice(), truth.as_slice())?;
    let s = ssim(&est, &truth, &SsimParams::standard(peak))?;
    let report = json!({
        "relative_error": rel,
        "psnr": psnr(est.as_slice(), truth.as_slice(), peak)?,
        "ssim": s.value,
        "ssim_global_fallback": s.global_fallback,
        "success": success(rel),
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(Status::Ok)
}
