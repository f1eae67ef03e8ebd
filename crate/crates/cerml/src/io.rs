//! Text formats: `key = value` files, CSV features, dataset manifests,
//! representation files, model files, and metrics reports.
//!
//! Floats in model and representation files are written with `{:e}`, the
//! shortest form that parses back to the same bits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::config::{TrainConfig, ViewRole};
use crate::dataset::{validate_entries, Dataset, SetEntry};
use crate::error::{Error, Result};
use crate::model::{Bandwidths, LabeledPoints, ProjectionModel, TrainingData};
use crate::repr::{AffinePoint, GrassmannPoint, SetRepresentation, SpdPoint, Variation, VariationKind};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const REPR_FORMAT_VERSION: u32 = 1;

const MODEL_MAGIC: &str = "cerml-model";
const REPR_MAGIC: &str = "cerml-representations";

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

/// `key = value` pairs from text, skipping blank lines and `#` comments.
pub fn kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(i + 1, format!("expected 'key = value', got '{line}'")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(parse_err(i + 1, "empty key"));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render_pairs<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    pairs.iter().map(|(k, v)| format!("{} = {}\n", k.as_ref(), v.as_ref())).collect()
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

// ---------------------------------------------------------------- CSV

/// Parse CSV with one sample per row into a dim × samples matrix.
pub fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut values: Vec<f64> = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(format!("CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| parse_err(line, format!("bad number '{field}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, "non-finite value"));
            }
            values.push(v);
        }
        match dim {
            None => dim = Some(record.len()),
            Some(d) if d != record.len() => {
                return Err(parse_err(line, format!("expected {d} fields, got {}", record.len())))
            }
            _ => {}
        }
        n += 1;
    }
    let dim = dim.ok_or_else(|| Error::InvalidInput("CSV has no rows".into()))?;
    Ok(DMatrix::from_vec(dim, n, values))
}

pub fn render_csv(features: &DMatrix<f64>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for col in features.column_iter() {
        writer.write_record(col.iter().map(|v| v.to_string())).expect("writing to memory");
    }
    String::from_utf8(writer.into_inner().expect("writing to memory")).expect("CSV output is UTF-8")
}

pub fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    parse_csv(&read_to_string(path)?)
}

pub fn write_csv(path: &Path, features: &DMatrix<f64>) -> Result<()> {
    Ok(std::fs::write(path, render_csv(features))?)
}

// ----------------------------------------------------------- manifest

/// Sidecar describing which CSV rows form sets and stills.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Feature file, relative to the manifest's directory unless absolute.
    pub features: PathBuf,
    pub entries: Vec<SetEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut features = None;
        let mut entries = Vec::new();
        for (k, v) in kv_lines(text)? {
            match k.as_str() {
                "features" => features = Some(PathBuf::from(v)),
                "set" => {
                    let f: Vec<&str> = v.split_whitespace().collect();
                    if f.len() != 4 {
                        return Err(Error::Parse(format!("set needs 'start len label role', got '{v}'")));
                    }
                    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad index '{s}'")));
                    entries.push(SetEntry {
                        start: num(f[0])?,
                        len: num(f[1])?,
                        label: f[2].parse().map_err(|_| Error::Parse(format!("bad label '{}'", f[2])))?,
                        role: f[3].parse()?,
                    });
                }
                other => return Err(Error::Parse(format!("unknown manifest key '{other}'"))),
            }
        }
        let features = features.ok_or_else(|| Error::Parse("manifest lacks 'features'".into()))?;
        if entries.is_empty() {
            return Err(Error::Parse("manifest lists no sets".into()));
        }
        Ok(Self { features, entries })
    }

    pub fn render(&self) -> String {
        let mut out = format!("features = {}\n", self.features.display());
        for e in &self.entries {
            let _ = writeln!(out, "set = {} {} {} {}", e.start, e.len, e.label, e.role.name());
        }
        out
    }
}

/// Load a manifest and the feature file it points to.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let m = DatasetManifest::parse(&read_to_string(manifest_path)?)?;
    let csv = if m.features.is_absolute() {
        m.features.clone()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&m.features)
    };
    let features = read_csv(&csv)?;
    validate_entries(&m.entries, features.ncols())?;
    Dataset::new(features, m.entries)
}

// ------------------------------------------------------- block writer

fn fmt_f(v: f64) -> String {
    format!("{v:e}")
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix {name} {} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| fmt_f(m[(r, c)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    write_matrix(out, name, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
}

fn write_labels(out: &mut String, name: &str, labels: &[i64]) {
    let vals: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    let _ = writeln!(out, "labels {name} {}", labels.len());
    out.push_str(&vals.join(" "));
    out.push('\n');
}

fn write_sets(out: &mut String, sets: &[SetRepresentation]) {
    let _ = writeln!(out, "sets = {}", sets.len());
    for s in sets {
        let _ = writeln!(out, "set {} {}", s.label, s.variation.kind().name());
        write_vector(out, "mean", &s.mean);
        match &s.variation {
            Variation::Grassmann(g) => write_matrix(out, "basis", &g.basis),
            Variation::Affine(a) => {
                write_matrix(out, "basis", &a.basis);
                write_vector(out, "offset", &a.offset);
            }
            Variation::Spd(p) => {
                write_matrix(out, "cov", &p.cov);
                write_matrix(out, "log", &p.log);
            }
        }
    }
}

// ------------------------------------------------------- block reader

struct Reader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Self { lines, pos: 0 }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        let l = self.lines.get(self.pos).copied().ok_or_else(|| Error::Parse("unexpected end of file".into()))?;
        self.pos += 1;
        Ok(l)
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|(_, l)| *l)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.lines.len()
    }

    fn kv(&mut self, key: &str) -> Result<&'a str> {
        let (n, l) = self.next()?;
        match l.split_once('=') {
            Some((k, v)) if k.trim() == key => Ok(v.trim()),
            _ => Err(parse_err(n, format!("expected '{key} = ...', got '{l}'"))),
        }
    }

    fn kv_parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.kv(key)?;
        v.parse().map_err(|_| Error::Parse(format!("{key}: cannot parse '{v}'")))
    }

    /// Header line `<tag> <name> <dims...>`; returns the dims.
    fn header(&mut self, tag: &str, name: &str, ndims: usize) -> Result<Vec<usize>> {
        let (n, l) = self.next()?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 2 + ndims || f[0] != tag || f[1] != name {
            return Err(parse_err(n, format!("expected '{tag} {name}', got '{l}'")));
        }
        f[2..].iter().map(|s| s.parse().map_err(|_| parse_err(n, format!("bad size '{s}'")))).collect()
    }

    fn values<T: std::str::FromStr>(&mut self, count: usize) -> Result<Vec<T>> {
        let (n, l) = self.next()?;
        let vals: Vec<T> = l
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| parse_err(n, format!("bad value '{s}'"))))
            .collect::<Result<_>>()?;
        if vals.len() != count {
            return Err(parse_err(n, format!("expected {count} values, got {}", vals.len())));
        }
        Ok(vals)
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let d = self.header("matrix", name, 2)?;
        let (rows, cols) = (d[0], d[1]);
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            let vals: Vec<f64> = self.values(cols)?;
            for (c, v) in vals.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        Ok(m)
    }

    fn vector(&mut self, name: &str) -> Result<DVector<f64>> {
        let m = self.matrix(name)?;
        if m.ncols() != 1 {
            return Err(Error::Parse(format!("{name} must be a column")));
        }
        Ok(m.column(0).into_owned())
    }

    fn labels(&mut self, name: &str) -> Result<Vec<i64>> {
        let n = self.header("labels", name, 1)?[0];
        self.values(n)
    }

    fn sets(&mut self) -> Result<Vec<SetRepresentation>> {
        let count: usize = self.kv_parse("sets")?;
        (0..count)
            .map(|_| {
                let (n, l) = self.next()?;
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.len() != 3 || f[0] != "set" {
                    return Err(parse_err(n, format!("expected 'set <label> <kind>', got '{l}'")));
                }
                let label = f[1].parse().map_err(|_| parse_err(n, "bad label"))?;
                let kind: VariationKind = f[2].parse()?;
                let mean = self.vector("mean")?;
                let variation = match kind {
                    VariationKind::Subspace => Variation::Grassmann(GrassmannPoint { basis: self.matrix("basis")? }),
                    VariationKind::Affine => {
                        Variation::Affine(AffinePoint { basis: self.matrix("basis")?, offset: self.vector("offset")? })
                    }
                    VariationKind::Spd => Variation::Spd(SpdPoint { cov: self.matrix("cov")?, log: self.matrix("log")? }),
                };
                Ok(SetRepresentation { mean, variation, label })
            })
            .collect()
    }
}

fn check_magic(r: &mut Reader, magic: &str, supported: u32) -> Result<()> {
    let (n, l) = r.next()?;
    if l != magic {
        return Err(parse_err(n, format!("not a {magic} file")));
    }
    let v: u32 = r.kv_parse("format_version")?;
    if v != supported {
        return Err(Error::Parse(format!("unsupported format_version {v} (this build reads {supported})")));
    }
    Ok(())
}

// ------------------------------------------------------ representations

pub fn render_representations(sets: &[SetRepresentation]) -> String {
    let mut out = format!("{REPR_MAGIC}\nformat_version = {REPR_FORMAT_VERSION}\n");
    write_sets(&mut out, sets);
    out
}

pub fn parse_representations(text: &str) -> Result<Vec<SetRepresentation>> {
    let mut r = Reader::new(text);
    check_magic(&mut r, REPR_MAGIC, REPR_FORMAT_VERSION)?;
    let sets = r.sets()?;
    if !r.at_end() {
        return Err(Error::Parse("trailing content after sets".into()));
    }
    Ok(sets)
}

// ---------------------------------------------------------------- model

fn opt_f(v: Option<f64>) -> String {
    v.map_or("none".to_string(), fmt_f)
}

fn parse_opt_f(key: &str, v: &str) -> Result<Option<f64>> {
    if v == "none" {
        return Ok(None);
    }
    v.parse().map(Some).map_err(|_| Error::Parse(format!("{key}: cannot parse '{v}'")))
}

pub fn render_model(m: &ProjectionModel) -> String {
    let mut out = format!("{MODEL_MAGIC}\nformat_version = {MODEL_FORMAT_VERSION}\n");
    let _ = writeln!(out, "fingerprint = {}", m.fingerprint);
    let _ = writeln!(out, "dim = {}", m.data.dim());
    let _ = writeln!(out, "out_dim = {}", m.out_dim());
    let _ = writeln!(out, "converged = {}", m.converged);
    let _ = writeln!(out, "init_residual = {}", fmt_f(m.init_residual));
    let _ = writeln!(out, "bandwidth.still = {}", opt_f(m.bandwidths.still));
    let _ = writeln!(out, "bandwidth.mean = {}", fmt_f(m.bandwidths.mean));
    let _ = writeln!(out, "bandwidth.variation = {}", fmt_f(m.bandwidths.variation));
    let _ = writeln!(out, "bandwidth.cross = {}", opt_f(m.bandwidths.cross));
    let pairs = m.config.to_pairs();
    let _ = writeln!(out, "config = {}", pairs.len());
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    let trace: Vec<String> = m.trace.iter().map(|v| fmt_f(*v)).collect();
    let _ = writeln!(out, "trace = {}", m.trace.len());
    out.push_str(&trace.join(" "));
    out.push('\n');
    match &m.data.stills {
        Some(st) => {
            let _ = writeln!(out, "stills = yes");
            write_matrix(&mut out, "stills", &st.points);
            write_labels(&mut out, "stills", &st.labels);
        }
        None => {
            let _ = writeln!(out, "stills = no");
        }
    }
    write_sets(&mut out, &m.data.sets);
    for (role, w) in m.config.mode.roles().iter().zip(&m.weights) {
        write_matrix(&mut out, &format!("weights.{}", role.name()), w);
    }
    out
}

pub fn parse_model(text: &str) -> Result<ProjectionModel> {
    let mut r = Reader::new(text);
    check_magic(&mut r, MODEL_MAGIC, MODEL_FORMAT_VERSION)?;
    let fingerprint = r.kv("fingerprint")?.to_string();
    let dim: usize = r.kv_parse("dim")?;
    let out_dim: usize = r.kv_parse("out_dim")?;
    let converged: bool = r.kv_parse("converged")?;
    let init_residual: f64 = r.kv_parse("init_residual")?;
    let bandwidths = Bandwidths {
        still: parse_opt_f("bandwidth.still", r.kv("bandwidth.still")?)?,
        mean: r.kv_parse("bandwidth.mean")?,
        variation: r.kv_parse("bandwidth.variation")?,
        cross: parse_opt_f("bandwidth.cross", r.kv("bandwidth.cross")?)?,
    };
    let n_cfg: usize = r.kv_parse("config")?;
    let mut config = TrainConfig::default();
    for _ in 0..n_cfg {
        let (n, l) = r.next()?;
        let (k, v) = l.split_once('=').ok_or_else(|| parse_err(n, "expected config line"))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    let n_trace: usize = r.kv_parse("trace")?;
    let trace = if n_trace == 0 { Vec::new() } else { r.values(n_trace)? };
    let stills = match r.kv("stills")? {
        "yes" => Some(LabeledPoints::new(r.matrix("stills")?, r.labels("stills")?)?),
        "no" => None,
        other => return Err(Error::Parse(format!("stills: expected yes/no, got '{other}'"))),
    };
    let sets = r.sets()?;
    let roles: &[ViewRole] = config.mode.roles();
    let weights = roles
        .iter()
        .map(|role| r.matrix(&format!("weights.{}", role.name())))
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = r.peek() {
        return Err(Error::Parse(format!("trailing content: '{extra}'")));
    }
    let data = TrainingData { stills, sets };
    if data.dim() != dim {
        return Err(Error::Dimension(format!("model header says dim {dim}, data has {}", data.dim())));
    }
    if weights.iter().any(|w| w.ncols() != out_dim) {
        return Err(Error::Dimension("weight blocks disagree with out_dim".into()));
    }
    let recomputed = crate::model::fingerprint(&data, &config, &bandwidths);
    if recomputed != fingerprint {
        return Err(Error::InvalidInput("model fingerprint does not match its training data".into()));
    }
    Ok(ProjectionModel { config, data, bandwidths, weights, trace, converged, init_residual, fingerprint })
}

pub fn save_model(path: &Path, model: &ProjectionModel) -> Result<()> {
    Ok(std::fs::write(path, render_model(model))?)
}

pub fn load_model(path: &Path) -> Result<ProjectionModel> {
    parse_model(&read_to_string(path)?)
}

/// Square kernel matrix stored as CSV rows.
pub fn load_kernel(path: &Path) -> Result<DMatrix<f64>> {
    let k = read_csv(path)?.transpose();
    if !k.is_square() {
        return Err(Error::Dimension(format!("kernel is {}x{}, expected square", k.nrows(), k.ncols())));
    }
    Ok(k)
}
