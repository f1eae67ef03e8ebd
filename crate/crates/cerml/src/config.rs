//! Training configuration and its `key = value` text form.

use crate::error::{Error, Result};
use crate::graph::{DEFAULT_K1, DEFAULT_K2};
use crate::kernels::KernelKind;
use crate::repr::{VariationKind, DEFAULT_RIDGE, DEFAULT_SUBSPACE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Set means against set variation models (V2V).
    TwoView,
    /// Stills against set means and set variation models (V2S/S2V).
    ThreeView,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::TwoView => "two_view",
            Mode::ThreeView => "three_view",
        }
    }

    pub fn roles(self) -> &'static [ViewRole] {
        match self {
            Mode::TwoView => &[ViewRole::Mean, ViewRole::Variation],
            Mode::ThreeView => &[ViewRole::Still, ViewRole::Mean, ViewRole::Variation],
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_view" | "v2v" => Ok(Self::TwoView),
            "three_view" | "v2s" | "s2v" => Ok(Self::ThreeView),
            other => Err(Error::InvalidInput(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViewRole {
    Still,
    Mean,
    Variation,
}

impl ViewRole {
    pub fn name(self) -> &'static str {
        match self {
            ViewRole::Still => "still",
            ViewRole::Mean => "mean",
            ViewRole::Variation => "variation",
        }
    }
}

impl std::str::FromStr for ViewRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "still" | "x" => Ok(Self::Still),
            "mean" | "y" => Ok(Self::Mean),
            "variation" | "z" => Ok(Self::Variation),
            other => Err(Error::InvalidInput(format!("unknown view '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub k1: usize,
    pub k2: usize,
    /// Common-subspace dimension; `None` means classes − 1.
    pub out_dim: Option<usize>,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub mode: Mode,
    pub jitter: f64,
    pub cross_augment: bool,
    pub variation: VariationKind,
    pub subspace_dim: usize,
    pub ridge: f64,
    pub kernel: KernelKind,
    pub intra_normalize: bool,
    pub rescale: bool,
    /// Update order within a sweep; `None` follows the view order.
    pub update_order: Option<Vec<ViewRole>>,
    pub weight_mean: f64,
    pub weight_variation: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.1,
            k1: DEFAULT_K1,
            k2: DEFAULT_K2,
            out_dim: None,
            max_iters: 20,
            rel_tol: 1e-4,
            mode: Mode::ThreeView,
            jitter: 1e-8,
            cross_augment: false,
            variation: VariationKind::Subspace,
            subspace_dim: DEFAULT_SUBSPACE_DIM,
            ridge: DEFAULT_RIDGE,
            kernel: KernelKind::Rbf,
            intra_normalize: true,
            rescale: true,
            update_order: None,
            weight_mean: 1.0,
            weight_variation: 1.0,
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected on/off, got '{v}'"))),
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.to_string()
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lambda1",
        "lambda2",
        "k1",
        "k2",
        "out_dim",
        "max_iters",
        "rel_tol",
        "mode",
        "jitter",
        "cross_augment",
        "variation",
        "subspace_dim",
        "ridge",
        "kernel",
        "intra_normalize",
        "rescale",
        "update_order",
        "weight_mean",
        "weight_variation",
        "seed",
    ];

    /// Set one field from its text form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "lambda1" => self.lambda1 = parse_num(key, v)?,
            "lambda2" => self.lambda2 = parse_num(key, v)?,
            "k1" => self.k1 = parse_num(key, v)?,
            "k2" => self.k2 = parse_num(key, v)?,
            "out_dim" => {
                self.out_dim = if v == "auto" { None } else { Some(parse_num(key, v)?) };
            }
            "max_iters" => self.max_iters = parse_num(key, v)?,
            "rel_tol" => self.rel_tol = parse_num(key, v)?,
            "mode" => self.mode = v.parse()?,
            "jitter" => self.jitter = parse_num(key, v)?,
            "cross_augment" => self.cross_augment = parse_bool(key, v)?,
            "variation" => self.variation = v.parse()?,
            "subspace_dim" => self.subspace_dim = parse_num(key, v)?,
            "ridge" => self.ridge = parse_num(key, v)?,
            "kernel" => self.kernel = v.parse()?,
            "intra_normalize" => self.intra_normalize = parse_bool(key, v)?,
            "rescale" => self.rescale = parse_bool(key, v)?,
            "update_order" => {
                self.update_order = if v == "auto" {
                    None
                } else {
                    Some(v.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?)
                };
            }
            "weight_mean" => self.weight_mean = parse_num(key, v)?,
            "weight_variation" => self.weight_variation = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// All fields as `(key, value)` pairs in [`Self::KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let order = match &self.update_order {
            None => "auto".to_string(),
            Some(o) => o.iter().map(|r| r.name()).collect::<Vec<_>>().join(","),
        };
        vec![
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("k1", self.k1.to_string()),
            ("k2", self.k2.to_string()),
            ("out_dim", self.out_dim.map_or("auto".to_string(), |d| d.to_string())),
            ("max_iters", self.max_iters.to_string()),
            ("rel_tol", self.rel_tol.to_string()),
            ("mode", self.mode.name().to_string()),
            ("jitter", self.jitter.to_string()),
            ("cross_augment", on_off(self.cross_augment)),
            ("variation", self.variation.name().to_string()),
            ("subspace_dim", self.subspace_dim.to_string()),
            ("ridge", self.ridge.to_string()),
            ("kernel", self.kernel.name().to_string()),
            ("intra_normalize", on_off(self.intra_normalize)),
            ("rescale", on_off(self.rescale)),
            ("update_order", order),
            ("weight_mean", self.weight_mean.to_string()),
            ("weight_variation", self.weight_variation.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1 must be >= 0");
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2 must be > 0");
        }
        if self.out_dim == Some(0) {
            return bad("out_dim must be >= 1");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be > 0");
        }
        if !(self.jitter >= 0.0) {
            return bad("jitter must be >= 0");
        }
        if self.subspace_dim == 0 {
            return bad("subspace_dim must be >= 1");
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad("ridge must be >= 0");
        }
        if !(self.weight_mean >= 0.0 && self.weight_variation >= 0.0)
            || self.weight_mean + self.weight_variation <= 0.0
        {
            return bad("view weights must be >= 0 and not both zero");
        }
        if let Some(order) = &self.update_order {
            let roles = self.mode.roles();
            let complete = order.len() == roles.len()
                && roles.iter().all(|r| order.iter().filter(|o| *o == r).count() == 1);
            if !complete {
                return Err(Error::InvalidInput(format!(
                    "update_order must list each of {:?} once",
                    roles.iter().map(|r| r.name()).collect::<Vec<_>>()
                )));
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in crate::io::kv_lines(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
