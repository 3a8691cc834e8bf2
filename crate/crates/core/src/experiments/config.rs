//! Experiment config files.
//!
//! Line-oriented `key = value` pairs. `#` starts a comment, values may be
//! wrapped in double quotes. Top-level keys describe the base run; `[label]`
//! and `[train]` sections hold labeling and optimizer settings; each
//! `[variant NAME]` section overrides exactly one base key. Every variant
//! must override the same key with a different value, so the variants of
//! one experiment differ in a single factor.
//!
//! ```text
//! name = exp4_lookback
//! asset = data/btc.csv
//! encoding = candlestick
//! resolution = 224
//! max_samples = 500
//!
//! [train]
//! max_epochs = 100
//!
//! [variant lb14]
//! lookback = 14
//! [variant lb30]
//! lookback = 30
//! ```
//!
//! Variant sections may also use the dotted form (`train.lr = 0.0005`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::LabelParams;
use crate::model::TrainConfig;
use crate::render::{ChartSpec, Components};

pub const LOOKBACKS: [usize; 4] = [14, 30, 60, 90];
pub const RESOLUTIONS: [usize; 3] = [64, 128, 224];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Candlestick,
    Gasf,
    GafMultichannel,
}

impl Encoding {
    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_ascii_lowercase().as_str() {
            "candlestick" => Some(Self::Candlestick),
            "gasf" | "gaf" => Some(Self::Gasf),
            "gaf_multichannel" | "gaf-mc" | "gaf_mc" => Some(Self::GafMultichannel),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Candlestick => "candlestick",
            Self::Gasf => "gasf",
            Self::GafMultichannel => "gaf_multichannel",
        }
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub asset: PathBuf,
    pub encoding: Encoding,
    pub chart: ChartSpec,
    pub label: LabelParams,
    pub train: TrainConfig,
    pub stride: usize,
    /// Keep only the most recent samples when set.
    pub max_samples: Option<usize>,
}

impl RunSpec {
    fn with_asset(asset: PathBuf) -> Self {
        Self {
            asset,
            encoding: Encoding::Candlestick,
            chart: ChartSpec::new(30, 224, Components::PRICE_ONLY),
            label: LabelParams::default(),
            train: TrainConfig::default(),
            stride: 5,
            max_samples: None,
        }
    }

    pub fn lookback(&self) -> usize {
        self.chart.lookback
    }

    pub fn resolution(&self) -> usize {
        self.chart.resolution
    }

    pub fn validate(&self) -> Result<()> {
        if !LOOKBACKS.contains(&self.chart.lookback) {
            return Err(Error::param(format!(
                "lookback {} not one of {LOOKBACKS:?}",
                self.chart.lookback
            )));
        }
        if !RESOLUTIONS.contains(&self.chart.resolution) {
            return Err(Error::param(format!(
                "resolution {} not one of {RESOLUTIONS:?}",
                self.chart.resolution
            )));
        }
        if self.stride == 0 {
            return Err(Error::param("stride must be at least 1"));
        }
        if self.max_samples == Some(0) {
            return Err(Error::param("max_samples must be positive"));
        }
        self.label.validate()?;
        self.train.validate()?;
        if self.encoding == Encoding::Candlestick {
            self.chart.validate()?;
            self.chart.layout()?;
        }
        Ok(())
    }

    /// Applies one `key = value` setting. Keys are the dotted forms
    /// (`label.tau`, `train.lr`) or bare top-level names.
    fn apply(&mut self, key: &str, value: &str, base_dir: &Path) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
        }
        match key {
            "asset" => self.asset = base_dir.join(value),
            "encoding" => {
                self.encoding = Encoding::parse(value).ok_or_else(|| {
                    format!("invalid encoding `{value}` (candlestick | gasf | gaf_multichannel)")
                })?
            }
            "lookback" => {
                let v: usize = num(key, value)?;
                if !LOOKBACKS.contains(&v) {
                    return Err(format!("invalid lookback {v}, expected one of {LOOKBACKS:?}"));
                }
                self.chart.lookback = v;
            }
            "resolution" => {
                let v: usize = num(key, value)?;
                if !RESOLUTIONS.contains(&v) {
                    return Err(format!("invalid resolution {v}, expected one of {RESOLUTIONS:?}"));
                }
                self.chart.resolution = v;
            }
            "components" => {
                self.chart.components = Components::parse(value)
                    .ok_or_else(|| format!("invalid components `{value}`"))?
            }
            "stride" => self.stride = num(key, value)?,
            "max_samples" => {
                let v: usize = num(key, value)?;
                self.max_samples = (v > 0).then_some(v);
            }
            "label.horizon" => self.label.horizon = num(key, value)?,
            "label.tau" => self.label.tau = num(key, value)?,
            "train.lr" => self.train.lr = num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.plateau_factor" => self.train.plateau_factor = num(key, value)?,
            "train.plateau_patience" => self.train.plateau_patience = num(key, value)?,
            "train.early_stop_patience" => self.train.early_stop_patience = num(key, value)?,
            "train.max_epochs" => self.train.max_epochs = num(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Single-run config text that [`load_spec`] reads back to this spec.
    /// The asset path is written as given (absolute when loaded from a file).
    pub fn to_config_text(&self, name: &str, seed: u64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name = {name}");
        let _ = writeln!(out, "asset = \"{}\"", self.asset.display());
        let _ = writeln!(out, "encoding = {}", self.encoding.as_str());
        let _ = writeln!(out, "lookback = {}", self.chart.lookback);
        let _ = writeln!(out, "resolution = {}", self.chart.resolution);
        let _ = writeln!(out, "components = {}", self.chart.components.label());
        let _ = writeln!(out, "stride = {}", self.stride);
        let _ = writeln!(out, "max_samples = {}", self.max_samples.unwrap_or(0));
        let _ = writeln!(out, "repeats = 1");
        let _ = writeln!(out, "seed = {seed}");
        let _ = writeln!(out, "\n[label]");
        let _ = writeln!(out, "horizon = {}", self.label.horizon);
        let _ = writeln!(out, "tau = {}", self.label.tau);
        let t = &self.train;
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(out, "lr = {}", t.lr);
        let _ = writeln!(out, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "plateau_factor = {}", t.plateau_factor);
        let _ = writeln!(out, "plateau_patience = {}", t.plateau_patience);
        let _ = writeln!(out, "early_stop_patience = {}", t.early_stop_patience);
        let _ = writeln!(out, "max_epochs = {}", t.max_epochs);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub spec: RunSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub repeats: usize,
    /// Seed of the first repeat; repeat `r` uses `seed + r`.
    pub seed: u64,
    pub base: RunSpec,
    /// The key all variants override, if the file declares variants.
    pub factor: Option<String>,
    /// Declared variants, or the base run alone under the name `baseline`.
    pub variants: Vec<Variant>,
}

impl ExperimentSpec {
    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeats as u64).map(move |r| self.seed + r)
    }

    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }
}

const RUN_KEYS: [&str; 7] = [
    "asset",
    "encoding",
    "lookback",
    "resolution",
    "components",
    "stride",
    "max_samples",
];
const LABEL_KEYS: [&str; 2] = ["horizon", "tau"];
const TRAIN_KEYS: [&str; 7] = [
    "lr",
    "weight_decay",
    "batch_size",
    "plateau_factor",
    "plateau_patience",
    "early_stop_patience",
    "max_epochs",
];

fn is_run_key(key: &str) -> bool {
    match key.split_once('.') {
        Some(("label", k)) => LABEL_KEYS.contains(&k),
        Some(("train", k)) => TRAIN_KEYS.contains(&k),
        Some(_) => false,
        None => RUN_KEYS.contains(&key),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Section {
    Top,
    Label,
    Train,
    Variant(usize),
}

struct Setting {
    key: String,
    value: String,
    line: usize,
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    parse_spec(&text, path, base_dir)
}

/// Parses config text; relative asset paths resolve against `base_dir`.
pub fn parse_spec(text: &str, path: &Path, base_dir: &Path) -> Result<ExperimentSpec> {
    let err = |line: usize, message: String| Error::Config {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut section = Section::Top;
    let mut top: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut base: Vec<Setting> = Vec::new();
    let mut variants: Vec<(String, usize, Vec<Setting>)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header".into()))?
                .trim();
            section = match header.split_once(char::is_whitespace) {
                None if header == "label" => Section::Label,
                None if header == "train" => Section::Train,
                Some(("variant", name)) => {
                    let name = unquote(name.trim());
                    if name.is_empty()
                        || !name
                            .chars()
                            .all(|c| c.is_ascii_alphanumeric() || "_-.+".contains(c))
                    {
                        return Err(err(line, format!("invalid variant name `{name}`")));
                    }
                    if variants.iter().any(|(n, _, _)| n == name) {
                        return Err(err(line, format!("duplicate variant `{name}`")));
                    }
                    variants.push((name.to_string(), line, Vec::new()));
                    Section::Variant(variants.len() - 1)
                }
                _ => return Err(err(line, format!("unknown section `[{header}]`"))),
            };
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim().to_string();
        let value = unquote(value.trim()).to_string();
        let full_key = match section {
            Section::Label => format!("label.{key}"),
            Section::Train => format!("train.{key}"),
            _ => key.clone(),
        };
        let setting = Setting {
            key: full_key.clone(),
            value,
            line,
        };
        match section {
            Section::Top if matches!(key.as_str(), "name" | "repeats" | "seed") => {
                if top.insert(key.clone(), (setting.value, line)).is_some() {
                    return Err(err(line, format!("duplicate key `{key}`")));
                }
            }
            Section::Variant(v) => {
                if !is_run_key(&full_key) {
                    return Err(err(line, format!("unknown or non-overridable key `{key}`")));
                }
                variants[v].2.push(setting);
            }
            _ => {
                if !is_run_key(&full_key) {
                    return Err(err(line, format!("unknown key `{full_key}`")));
                }
                if base.iter().any(|s| s.key == full_key) {
                    return Err(err(line, format!("duplicate key `{full_key}`")));
                }
                base.push(setting);
            }
        }
    }

    let asset = base
        .iter()
        .find(|s| s.key == "asset")
        .ok_or_else(|| err(0, "missing required key `asset`".into()))?;
    let mut base_spec = RunSpec::with_asset(base_dir.join(&asset.value));
    for s in &base {
        base_spec
            .apply(&s.key, &s.value, base_dir)
            .map_err(|m| err(s.line, m))?;
    }

    let name = match top.get("name") {
        Some((v, _)) => v.clone(),
        None => path
            .file_stem()
            .map_or_else(|| "experiment".to_string(), |s| s.to_string_lossy().into_owned()),
    };
    let repeats = match top.get("repeats") {
        Some((v, line)) => match v.parse::<usize>() {
            Ok(r) if r >= 1 => r,
            _ => return Err(err(*line, format!("repeats must be a positive integer, got `{v}`"))),
        },
        None => 1,
    };
    let seed = match top.get("seed") {
        Some((v, line)) => v
            .parse::<u64>()
            .map_err(|_| err(*line, format!("seed must be a non-negative integer, got `{v}`")))?,
        None => 0,
    };

    let mut factor: Option<String> = None;
    let mut seen_values: Vec<(String, usize)> = Vec::new();
    let mut resolved = Vec::new();
    for (vname, vline, settings) in &variants {
        let [setting] = settings.as_slice() else {
            return Err(err(
                *vline,
                format!("variant `{vname}` must override exactly one key, found {}", settings.len()),
            ));
        };
        match &factor {
            None => factor = Some(setting.key.clone()),
            Some(f) if *f != setting.key => {
                return Err(err(
                    setting.line,
                    format!("variant `{vname}` overrides `{}` but other variants vary `{f}`", setting.key),
                ))
            }
            _ => {}
        }
        let mut spec = base_spec.clone();
        spec.apply(&setting.key, &setting.value, base_dir)
            .map_err(|m| err(setting.line, m))?;
        let canonical = canonical_value(&spec, &setting.key);
        if let Some((_, other)) = seen_values.iter().find(|(v, _)| *v == canonical) {
            return Err(err(
                setting.line,
                format!("variant `{vname}` repeats the value of the variant on line {other}"),
            ));
        }
        seen_values.push((canonical, setting.line));
        resolved.push(Variant {
            name: vname.clone(),
            spec,
        });
    }
    if resolved.is_empty() {
        resolved.push(Variant {
            name: "baseline".to_string(),
            spec: base_spec.clone(),
        });
    }
    for v in &resolved {
        v.spec
            .validate()
            .map_err(|e| err(0, format!("variant `{}`: {e}", v.name)))?;
        if !v.spec.asset.is_file() {
            return Err(err(
                0,
                format!("asset file {} does not exist", v.spec.asset.display()),
            ));
        }
    }
    Ok(ExperimentSpec {
        name,
        repeats,
        seed,
        base: base_spec,
        factor,
        variants: resolved,
    })
}

/// Normalized rendering of one field, so `0.5` and `0.50` compare equal.
fn canonical_value(spec: &RunSpec, key: &str) -> String {
    let full = spec.to_config_text("", 0);
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => (format!("[{s}]"), f),
        None => (String::new(), key),
    };
    let mut current = String::new();
    for line in full.lines() {
        if line.starts_with('[') {
            current = line.to_string();
        } else if current == section {
            if let Some((k, v)) = line.split_once(" = ") {
                if k == field {
                    return v.to_string();
                }
            }
        }
    }
    String::new()
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v)
}
