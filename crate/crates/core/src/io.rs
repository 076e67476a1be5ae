//! File formats: signal and image text files, experiment configs, result
//! tables and their manifests.
//!
//! Floats are written with 17 significant digits (`{:.16e}`) so binary64
//! values survive a text round trip unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::generate::SignalKind;
use crate::types::{Field, Method, Shape};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// One value per line; blank lines and `#` comments are skipped.
pub fn parse_signal(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let v = t
            .parse::<f64>()
            .map_err(|_| Error::parse(path, i + 1, format!("not a number: {t:?}")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_signal_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    parse_signal(&read_text(path)?, path)
}

pub fn write_signal_csv(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let mut text = String::with_capacity(values.len() * 24);
    for &v in values {
        text.push_str(&format_float(v));
        text.push('\n');
    }
    write_text(path.as_ref(), &text)
}

/// Comma-separated matrix; every row must have the same length.
pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<Field<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split(',')
            .map(|c| {
                let c = c.trim();
                c.parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("not a number: {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("row {} has {} columns, expected {}", rows.len() + 1, row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "empty matrix"));
    }
    let shape = Shape::grid(rows.len(), rows[0].len());
    Field::new(shape, rows.concat())
}

/// ASCII PGM (`P2`), normalised to `[0, 1]` by the declared maximum.
pub fn parse_pgm(text: &str, path: &Path) -> Result<Field<f64>> {
    let mut tokens = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        tokens.extend(body.split_whitespace().map(|t| (i + 1, t)));
    }
    let mut it = tokens.into_iter();
    match it.next() {
        Some((_, "P2")) => {}
        Some((l, other)) => return Err(Error::parse(path, l, format!("expected P2 magic, found {other:?}"))),
        None => return Err(Error::parse(path, 1, "empty file")),
    }
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let (l, t) = it.next().ok_or_else(|| Error::parse(path, 1, format!("missing {name}")))?;
        *slot = t
            .parse()
            .ok()
            .filter(|&v: &usize| v > 0)
            .ok_or_else(|| Error::parse(path, l, format!("bad {name}: {t:?}")))?;
    }
    let [w, h, maxval] = header;
    let mut data = Vec::with_capacity(w * h);
    for (l, t) in it {
        let v: usize = t.parse().map_err(|_| Error::parse(path, l, format!("bad pixel {t:?}")))?;
        if v > maxval {
            return Err(Error::parse(path, l, format!("pixel {v} exceeds maxval {maxval}")));
        }
        data.push(v as f64 / maxval as f64);
    }
    if data.len() != w * h {
        return Err(Error::parse(path, 1, format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Field::new(Shape::grid(h, w), data)
}

fn is_pgm(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Reads `.pgm` (P2) or a CSV matrix, chosen by extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<Field<f64>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    if is_pgm(path) {
        parse_pgm(&text, path)
    } else {
        parse_matrix_csv(&text, path)
    }
}

/// Writes a 2-D field as `.pgm` (values in `[0, 1]`, maxval 255) or CSV.
pub fn write_image(path: impl AsRef<Path>, img: &Field<f64>) -> Result<()> {
    let path = path.as_ref();
    let ext = img.shape().extents();
    let (rows, cols) = if ext.len() == 2 { (ext[0], ext[1]) } else { (1, ext[0]) };
    let mut text = String::new();
    if is_pgm(path) {
        text.push_str(&format!("P2\n{cols} {rows}\n255\n"));
        for r in 0..rows {
            let line: Vec<String> = (0..cols)
                .map(|c| ((img.as_slice()[r * cols + c].clamp(0.0, 1.0) * 255.0).round() as u32).to_string())
                .collect();
            text.push_str(&line.join(" "));
            text.push('\n');
        }
    } else {
        for r in 0..rows {
            let line: Vec<String> = (0..cols).map(|c| format_float(img.as_slice()[r * cols + c])).collect();
            text.push_str(&line.join(","));
            text.push('\n');
        }
    }
    write_text(path, &text)
}

/// Input and output locations named in a config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub signal: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    method: Method,
    n: Option<usize>,
    n1: Option<usize>,
    n2: Option<usize>,
    k_ratio: Option<f64>,
    k1: Option<usize>,
    k2: Option<usize>,
    k_ratios: Option<Vec<f64>>,
    trials: usize,
    seed: u64,
    eps: Option<f64>,
    max_iter: Option<usize>,
    beta: Option<f64>,
    lambda: Option<f64>,
    noise_sigma: Option<f64>,
    signal_type: Option<String>,
    #[serde(default)]
    paths: Paths,
}

/// Sample extent: a line of `n` values or an `n1 × n2` image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSize {
    Line(usize),
    Grid(usize, usize),
}

/// Background extent: a ratio applied per axis, or explicit sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundSize {
    Ratio(f64),
    Explicit(Vec<usize>),
}

/// Validated experiment configuration with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub method: Method,
    pub size: SampleSize,
    pub background: BackgroundSize,
    /// Optional sweep grid of background ratios.
    pub k_ratios: Option<Vec<f64>>,
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    pub max_iter: usize,
    pub beta: f64,
    pub lambda: f64,
    pub noise_sigma: f64,
    pub signal_type: SignalKind,
    pub paths: Paths,
}

impl ExperimentConfig {
    pub fn sizes(&self) -> Vec<usize> {
        match self.size {
            SampleSize::Line(n) => vec![n],
            SampleSize::Grid(a, b) => vec![a, b],
        }
    }

    /// Background extent per axis, `round(ratio·n)` for ratios.
    pub fn background_sizes(&self) -> Vec<usize> {
        match &self.background {
            BackgroundSize::Ratio(r) => self.sizes().iter().map(|&n| (r * n as f64).round() as usize).collect(),
            BackgroundSize::Explicit(k) => k.clone(),
        }
    }

    pub fn solver_config(&self) -> crate::types::SolverConfig<f64> {
        crate::types::SolverConfig {
            method: self.method,
            eps: self.eps,
            max_iter: self.max_iter,
            beta: self.beta,
            lambda: self.lambda,
            seed: self.seed,
        }
    }
}

fn parse_signal_kind(s: &str, paths: &Paths) -> Result<SignalKind> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" | "type1" => Ok(SignalKind::Gaussian),
        "chirp" | "type2" => Ok(SignalKind::Chirp),
        "file" | "type3" => paths
            .signal
            .clone()
            .map(SignalKind::File)
            .ok_or_else(|| Error::InvalidConfig("signal_type file needs paths.signal".into())),
        other => Err(Error::InvalidConfig(format!("unknown signal_type {other:?}"))),
    }
}

/// Parses and validates a TOML experiment config.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
            .unwrap_or(1);
        Error::parse(path, line, e.message().to_string())
    })?;
    let size = match (raw.n, raw.n1, raw.n2) {
        (Some(n), None, None) => SampleSize::Line(n),
        (None, Some(a), Some(b)) => SampleSize::Grid(a, b),
        _ => return Err(Error::InvalidConfig("give either n or both n1 and n2".into())),
    };
    let background = match (raw.k_ratio, raw.k1, raw.k2) {
        (Some(r), None, None) => BackgroundSize::Ratio(r),
        (None, Some(a), None) if matches!(size, SampleSize::Line(_)) => BackgroundSize::Explicit(vec![a]),
        (None, Some(a), Some(b)) if matches!(size, SampleSize::Grid(..)) => BackgroundSize::Explicit(vec![a, b]),
        (None, None, None) if raw.k_ratios.is_some() => BackgroundSize::Ratio(raw.k_ratios.as_ref().unwrap()[0]),
        _ => return Err(Error::InvalidConfig("give k_ratio, or k1 (and k2 for images)".into())),
    };
    let defaults = crate::types::SolverConfig::<f64>::new(raw.method);
    let cfg = ExperimentConfig {
        method: raw.method,
        size,
        background,
        k_ratios: raw.k_ratios,
        trials: raw.trials,
        seed: raw.seed,
        eps: raw.eps.unwrap_or(defaults.eps),
        max_iter: raw.max_iter.unwrap_or(defaults.max_iter),
        beta: raw.beta.unwrap_or(defaults.beta),
        lambda: raw.lambda.unwrap_or(defaults.lambda),
        noise_sigma: raw.noise_sigma.unwrap_or(0.0),
        signal_type: parse_signal_kind(raw.signal_type.as_deref().unwrap_or("gaussian"), &raw.paths)?,
        paths: raw.paths,
    };
    cfg.solver_config().validate()?;
    if cfg.sizes().contains(&0) {
        return Err(Error::InvalidConfig("sample sizes must be positive".into()));
    }
    if let BackgroundSize::Ratio(r) = cfg.background {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidConfig("k_ratio must be finite and nonnegative".into()));
        }
    }
    if !(cfg.noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig("noise_sigma must be nonnegative".into()));
    }
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    parse_config(&read_text(path)?, path)
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub method: Method,
    pub n: String,
    pub k: String,
    pub iterations: usize,
    pub relative_error: f64,
    pub measurement_error: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub success: bool,
    pub wall_ms: f64,
}

pub const RESULTS_HEADER: [&str; 12] = [
    "trial",
    "seed",
    "method",
    "n",
    "k",
    "iterations",
    "relative_error",
    "measurement_error",
    "psnr",
    "ssim",
    "success",
    "wall_ms",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

fn float_cell(v: f64) -> String {
    if v.is_finite() {
        format_float(v)
    } else {
        v.to_string()
    }
}

/// Serialises rows with the fixed header and 17-digit floats.
pub fn results_to_string(rows: &[TrialResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.trial.to_string(),
            r.seed.to_string(),
            r.method.to_string(),
            r.n.clone(),
            r.k.clone(),
            r.iterations.to_string(),
            float_cell(r.relative_error),
            float_cell(r.measurement_error),
            float_cell(r.psnr),
            float_cell(r.ssim),
            r.success.to_string(),
            float_cell(r.wall_ms),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn write_results(path: impl AsRef<Path>, rows: &[TrialResult]) -> Result<()> {
    write_text(path.as_ref(), &results_to_string(rows))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<TrialResult>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(Error::parse(path, 1, "unexpected results header"));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Writes any serialisable table with a header derived from the row type.
pub fn write_table<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse(path, 0, e.to_string()))?;
    write_text(path, &String::from_utf8_lossy(&bytes))
}

/// Provenance sidecar written next to every result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub workers: usize,
    pub config: serde_json::Value,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// SHA-256 of each input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file, keyed by path.
    pub outputs: BTreeMap<String, String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, workers: usize, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            workers,
            config,
            started_unix: unix_now(),
            finished_unix: 0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Stamps the finish time and writes pretty JSON.
    pub fn finish(mut self, path: impl AsRef<Path>) -> Result<()> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serialises");
        write_text(path.as_ref(), &(text + "\n"))
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn signal_examples() {
        assert_eq!(parse_signal("1\n2\n3\n", p()).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_signal("# header\n1\n\n-2.5e3\n", p()).unwrap(), vec![1.0, -2500.0]);
        match parse_signal("1\nabc\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn signal_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut rng = crate::rng::Rng::new(4);
        let mut v = rng.gaussian_vec(500);
        v.extend([0.1, 1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0]);
        write_signal_csv(&path, &v).unwrap();
        let back = read_signal_csv(&path).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn image_examples() {
        let img = parse_pgm("P2\n2 2\n255\n255 255\n255 255\n", p()).unwrap();
        assert_eq!(img.as_slice(), &[1.0; 4]);
        let img = parse_pgm("P2\n# comment\n3 1 4\n0 2 4\n", p()).unwrap();
        assert_eq!(img.shape(), &Shape::grid(1, 3));
        assert_eq!(img.as_slice(), &[0.0, 0.5, 1.0]);
        assert!(parse_pgm("P5\n1 1\n255\n0\n", p()).is_err());
        assert!(parse_pgm("P2\n2 2\n255\n1 2 3\n", p()).is_err());
        let m = parse_matrix_csv("1,2\n3,4\n", p()).unwrap();
        assert_eq!(m.shape(), &Shape::grid(2, 2));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        match parse_matrix_csv("1,2\n3\n", p()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("row 2"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn image_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = crate::harness::generate::phantom(7, 5);
        let csv = dir.path().join("a.csv");
        write_image(&csv, &img).unwrap();
        assert_eq!(read_image(&csv).unwrap(), img);
        let pgm = dir.path().join("a.pgm");
        write_image(&pgm, &img).unwrap();
        let back = read_image(&pgm).unwrap();
        assert!(crate::scalar::dist2(back.as_slice(), img.as_slice()) < 0.5 / 255.0 * 6.0);
    }

    #[test]
    fn config_defaults_and_rejections() {
        let cfg = parse_config("method = \"BDR\"\nn = 100\nk_ratio = 3\ntrials = 10\nseed = 7\n", p()).unwrap();
        assert_eq!(cfg.eps, 1e-12);
        assert_eq!(cfg.max_iter, 300);
        assert_eq!(cfg.background_sizes(), vec![300]);
        assert_eq!(cfg.signal_type, SignalKind::Gaussian);
        let cfg = parse_config("method = \"BDR1\"\nn1 = 8\nn2 = 6\nk1 = 3\nk2 = 4\ntrials = 1\nseed = 0\n", p()).unwrap();
        assert_eq!(cfg.beta, 0.9);
        assert_eq!(cfg.background_sizes(), vec![3, 4]);
        let err = parse_config("method = \"BDR\"\nn = 1\nk_ratio = 3\ntrials = 1\nseed = 7\nfoo = 1\n", p()).unwrap_err();
        assert!(err.to_string().contains("foo"), "{err}");
        let err = parse_config("method = \"BDR\"\nk_ratio = 3\nseed = 7\n", p()).unwrap_err();
        assert!(err.to_string().contains("trials"), "{err}");
        let err = parse_config("method = \"BDR\"\nn = \"x\"\nk_ratio = 3\ntrials = 1\nseed = 7\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_config("method = \"BDR\"\nn = 1\nk_ratio = 3\ntrials = 1\nseed = 7\nsignal_type = \"file\"\n", p()).is_err());
        assert!(parse_config("method = \"BDR\"\nn = 1\nk_ratio = 3\ntrials = 1\nseed = 7\nbeta = 2.0\n", p()).is_err());
    }

    #[test]
    fn results_round_trip_preserves_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows: Vec<TrialResult> = (0..10)
            .map(|i| TrialResult {
                trial: i,
                seed: 1000 + i as u64,
                method: Method::Bdr,
                n: "100".into(),
                k: "300".into(),
                iterations: 50 + i,
                relative_error: if i % 3 == 0 { 0.2 } else { 1e-9 / (i + 1) as f64 },
                measurement_error: 1.0 / 3.0,
                psnr: if i == 0 { f64::INFINITY } else { 80.0 + i as f64 },
                ssim: 0.999,
                success: i % 3 != 0,
                wall_ms: 0.0,
            })
            .collect();
        write_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back, rows);
        let rate = |r: &[TrialResult]| r.iter().filter(|t| t.success).count();
        assert_eq!(rate(&back), rate(&rows));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("trial,seed,method,n,k,iterations,relative_error,measurement_error,psnr,ssim,success,wall_ms\n"));
    }

    #[test]
    fn manifest_records_digests() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.csv");
        write_signal_csv(&data, &[1.0]).unwrap();
        let mut m = RunManifest::new("test", 3, 1, serde_json::json!({"a": 1}));
        m.add_input(&data).unwrap();
        let mpath = dir.path().join("m.json");
        m.finish(&mpath).unwrap();
        let back = read_manifest(&mpath).unwrap();
        assert_eq!(back.seed, 3);
        assert_eq!(back.inputs.values().next().unwrap().len(), 64);
        assert!(back.finished_unix >= back.started_unix);
    }
}
