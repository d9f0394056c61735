//! Run configuration files.
//!
//! A flat, line-oriented format with three sections:
//!
//! ```text
//! # comment
//! [network]
//! kind = rr_segse
//! dilations = 3, 2, 1
//! [train]
//! lr = 5e-5
//! [data]
//! outer_radius = 20, 28
//! ```
//!
//! Keys not listed in [`KEYS`] are rejected, as are repeated keys. Missing
//! keys keep their defaults. [`RunConfig::to_text`] writes every key, and
//! parsing that text reproduces the configuration exactly.

use std::fmt::Write as _;
use std::path::Path;

use segse_core::blocks::{BlockConfig, BlockKind};
use segse_core::loss::LossKind;
use segse_core::net::NetworkConfig;
use segse_core::phantom::{PhantomSpec, RadiusRange};
use segse_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

/// Dataset sizes used when a command generates its own data.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub phantom: PhantomSpec,
    pub train_count: usize,
    pub eval_count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            train_count: 200,
            eval_count: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

/// Every accepted `section.key`.
pub const KEYS: &[&str] = &[
    "network.kind",
    "network.in_channels",
    "network.num_classes",
    "network.base_width",
    "network.width_multiplier",
    "network.scales",
    "network.width_scale",
    "network.expansion",
    "network.reduction",
    "network.dilations",
    "network.pools",
    "network.dropout",
    "train.seed",
    "train.loss",
    "train.flip",
    "train.rotate",
    "train.iterations",
    "train.batch_size",
    "train.checkpoint_every",
    "train.lr",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "train.patch_size",
    "train.min_foreground",
    "data.height",
    "data.width",
    "data.channels",
    "data.classes",
    "data.outer_radius",
    "data.middle_radius",
    "data.inner_radius",
    "data.class0_mean",
    "data.class1_mean",
    "data.class2_mean",
    "data.class3_mean",
    "data.noise_sigma",
    "data.seed",
    "data.train_count",
    "data.eval_count",
];

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::validation(format!("{key} = {value:?}: expected {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> CliResult<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> CliResult<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v.trim(), what)).collect()
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn list<T: std::fmt::Debug>(values: &[T]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ")
}

fn loss_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::CrossEntropy => "cross_entropy",
        LossKind::SoftDice => "soft_dice",
    }
}

impl RunConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        let n = &mut self.network;
        let t = &mut self.train;
        let d = &mut self.data;
        let p = &mut d.phantom;
        const UINT: &str = "a non-negative integer";
        const REAL: &str = "a number";
        match key {
            "network.kind" => n.block.kind = BlockKind::parse(value).map_err(|e| CliError::validation(format!("{key}: {e}")))?,
            "network.in_channels" => n.in_channels = parse_num(key, value, UINT)?,
            "network.num_classes" => n.num_classes = parse_num(key, value, UINT)?,
            "network.base_width" => n.base_width = parse_num(key, value, UINT)?,
            "network.width_multiplier" => n.width_multiplier = parse_num(key, value, UINT)?,
            "network.scales" => n.scales = parse_num(key, value, UINT)?,
            "network.width_scale" => n.width_scale = parse_num(key, value, REAL)?,
            "network.expansion" => n.block.expansion = parse_num(key, value, UINT)?,
            "network.reduction" => n.block.reduction = parse_num(key, value, UINT)?,
            "network.dilations" => n.per_scale_d = parse_list(key, value, "comma-separated integers")?,
            "network.pools" => n.per_scale_p = parse_list(key, value, "comma-separated integers")?,
            "network.dropout" => n.dropout = parse_num(key, value, REAL)?,
            "train.seed" => t.seed = parse_num(key, value, UINT)?,
            "train.loss" => {
                t.loss = match value {
                    "cross_entropy" => LossKind::CrossEntropy,
                    "soft_dice" => LossKind::SoftDice,
                    _ => return Err(bad(key, value, "cross_entropy or soft_dice")),
                }
            }
            "train.flip" => t.augment.flip = parse_bool(key, value)?,
            "train.rotate" => t.augment.rotate = parse_bool(key, value)?,
            "train.iterations" => t.iterations = parse_num(key, value, UINT)?,
            "train.batch_size" => t.batch_size = parse_num(key, value, UINT)?,
            "train.checkpoint_every" => t.checkpoint_every = parse_num(key, value, UINT)?,
            "train.lr" => t.adam.lr = parse_num(key, value, REAL)?,
            "train.beta1" => t.adam.beta1 = parse_num(key, value, REAL)?,
            "train.beta2" => t.adam.beta2 = parse_num(key, value, REAL)?,
            "train.eps" => t.adam.eps = parse_num(key, value, REAL)?,
            "train.weight_decay" => t.adam.weight_decay = parse_num(key, value, REAL)?,
            "train.patch_size" => {
                let v: usize = parse_num(key, value, UINT)?;
                t.patch_size = (v > 0).then_some(v);
            }
            "train.min_foreground" => t.min_foreground = parse_num(key, value, REAL)?,
            "data.height" => p.height = parse_num(key, value, UINT)?,
            "data.width" => p.width = parse_num(key, value, UINT)?,
            "data.channels" => p.channels = parse_num(key, value, UINT)?,
            "data.classes" => p.classes = parse_num(key, value, UINT)?,
            "data.outer_radius" | "data.middle_radius" | "data.inner_radius" => {
                let r: Vec<f64> = parse_list(key, value, "min, max")?;
                let [min, max] = r[..] else {
                    return Err(bad(key, value, "min, max"));
                };
                let k = match key {
                    "data.outer_radius" => 0,
                    "data.middle_radius" => 1,
                    _ => 2,
                };
                p.radii[k] = RadiusRange::new(min, max);
            }
            "data.class0_mean" | "data.class1_mean" | "data.class2_mean" | "data.class3_mean" => {
                let k = (key.as_bytes()[10] - b'0') as usize;
                if p.means.len() <= k {
                    p.means.resize(k + 1, Vec::new());
                }
                p.means[k] = parse_list(key, value, "one number per channel")?;
            }
            "data.noise_sigma" => p.noise_sigma = parse_num(key, value, REAL)?,
            "data.seed" => p.seed = parse_num(key, value, UINT)?,
            "data.train_count" => d.train_count = parse_num(key, value, UINT)?,
            "data.eval_count" => d.eval_count = parse_num(key, value, UINT)?,
            _ => return Err(CliError::validation(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults, then validates.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut config = RunConfig::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    fn apply_text(&mut self, text: &str) -> CliResult<()> {
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| CliError::validation(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["network", "train", "data"].contains(&name) {
                    return Err(at(format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(at(format!("expected key = value, got {line:?}")));
            };
            let Some(section) = &section else {
                return Err(at(format!("key {:?} outside any section", key.trim())));
            };
            let full = format!("{section}.{}", key.trim());
            if !seen.insert(full.clone()) {
                return Err(at(format!("{full} given twice")));
            }
            self.set(&full, value).map_err(|e| at(e.message))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::validation(format!("{}: {}", path.display(), e.message)))
    }

    /// Loads `path` (or the defaults) and applies `overrides` in order.
    pub fn resolve(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut config = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        for (key, value) in overrides {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.data.phantom.validate()?;
        let p = &self.data.phantom;
        if p.channels != self.network.in_channels {
            return Err(CliError::validation(format!(
                "data.channels {} differs from network.in_channels {}",
                p.channels, self.network.in_channels
            )));
        }
        if p.classes != self.network.num_classes {
            return Err(CliError::validation(format!(
                "data.classes {} differs from network.num_classes {}",
                p.classes, self.network.num_classes
            )));
        }
        let size = self.train.patch_size.unwrap_or(p.height);
        if self.train.patch_size.is_some_and(|s| s > p.height.min(p.width)) {
            return Err(CliError::validation(format!("train.patch_size {size} exceeds the image")));
        }
        if self.train.patch_size.is_none() && self.train.augment.rotate && p.height != p.width {
            return Err(CliError::validation("rotation augmentation needs square images or a patch size"));
        }
        self.network.check_input(size, self.train.patch_size.unwrap_or(p.width))?;
        self.network.check_input(p.height, p.width)?;
        Ok(())
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let (n, t, d) = (&self.network, &self.train, &self.data);
        let p = &d.phantom;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let block: BlockConfig = n.block;
        put("[network]\nkind", block.kind.as_str().into());
        put("in_channels", n.in_channels.to_string());
        put("num_classes", n.num_classes.to_string());
        put("base_width", n.base_width.to_string());
        put("width_multiplier", n.width_multiplier.to_string());
        put("scales", n.scales.to_string());
        put("width_scale", format!("{:?}", n.width_scale));
        put("expansion", block.expansion.to_string());
        put("reduction", block.reduction.to_string());
        put("dilations", list(&n.per_scale_d));
        put("pools", list(&n.per_scale_p));
        put("dropout", format!("{:?}", n.dropout));
        put("\n[train]\nseed", t.seed.to_string());
        put("loss", loss_name(t.loss).into());
        put("flip", t.augment.flip.to_string());
        put("rotate", t.augment.rotate.to_string());
        put("iterations", t.iterations.to_string());
        put("batch_size", t.batch_size.to_string());
        put("checkpoint_every", t.checkpoint_every.to_string());
        put("lr", format!("{:?}", t.adam.lr));
        put("beta1", format!("{:?}", t.adam.beta1));
        put("beta2", format!("{:?}", t.adam.beta2));
        put("eps", format!("{:?}", t.adam.eps));
        put("weight_decay", format!("{:?}", t.adam.weight_decay));
        put("patch_size", t.patch_size.unwrap_or(0).to_string());
        put("min_foreground", format!("{:?}", t.min_foreground));
        put("\n[data]\nheight", p.height.to_string());
        put("width", p.width.to_string());
        put("channels", p.channels.to_string());
        put("classes", p.classes.to_string());
        for (name, r) in ["outer_radius", "middle_radius", "inner_radius"].iter().zip(&p.radii) {
            put(name, list(&[r.min, r.max]));
        }
        for (k, m) in p.means.iter().enumerate() {
            put(&format!("class{k}_mean"), list(m));
        }
        put("noise_sigma", format!("{:?}", p.noise_sigma));
        put("seed", p.seed.to_string());
        put("train_count", d.train_count.to_string());
        put("eval_count", d.eval_count.to_string());
        s
    }
}

/// Splits `--section.key value` and `--section.key=value` overrides out of
/// an argument list, leaving everything else in order.
pub fn extract_overrides(args: Vec<String>) -> CliResult<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        let is_override = ["network.", "train.", "data."].iter().any(|p| key.starts_with(p));
        if !is_override {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| CliError::usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        for key in KEYS {
            let (section, name) = key.split_once('.').unwrap();
            let text = c.to_text();
            let in_section = text.split(&format!("[{section}]")).nth(1).unwrap();
            assert!(in_section.contains(&format!("\n{name} = ")), "{key} missing from resolved text");
        }
    }

    #[test]
    fn edits_round_trip_exactly() {
        let mut c = RunConfig::default();
        c.set("train.lr", "0.1").unwrap();
        c.set("network.kind", "rr_var2").unwrap();
        c.set("network.dilations", "1,1, 2").unwrap();
        c.set("data.noise_sigma", "0.30000000000000004").unwrap();
        c.set("train.patch_size", "32").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_repeated_keys() {
        assert!(RunConfig::parse("[train]\nlearning_rate = 1").is_err());
        assert!(RunConfig::parse("[optim]\nlr = 1").is_err());
        assert!(RunConfig::parse("lr = 1").is_err());
        assert!(RunConfig::parse("[train]\nlr = 1\nlr = 2").is_err());
        assert!(RunConfig::parse("[train]\nlr = fast").is_err());
        let err = RunConfig::parse("[train]\nbatch_size = 1").unwrap_err();
        assert!(err.message.contains("batch"), "{}", err.message);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# run\n\n[network]\nkind = none # baseline\n").unwrap();
        assert_eq!(c.network.block.kind, BlockKind::None);
    }

    #[test]
    fn override_extraction() {
        let args = ["train", "--config", "a.cfg", "--train.lr", "0", "--network.kind=rr_se", "--force"];
        let (rest, ov) = extract_overrides(args.iter().map(|s| s.to_string()).collect()).unwrap();
        assert_eq!(rest, ["train", "--config", "a.cfg", "--force"]);
        assert_eq!(ov, [("train.lr".into(), "0".into()), ("network.kind".into(), "rr_se".into())]);
        assert!(extract_overrides(vec!["--train.lr".into()]).is_err());
    }
}
