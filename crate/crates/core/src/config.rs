//! Flat `key=value` run configuration.
//!
//! One assignment per line; `#` starts a comment. Later assignments win, so
//! command-line overrides are applied with [`RunConfig::set`] after parsing.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{SyntheticConfig, TaskMode, KEYPOINT_DIM};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{HhMemory, KeypointInput, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    /// Generator settings; its dim, classes, mode and keypoint form follow `model`.
    pub data: SyntheticConfig,
    /// Manifest to load instead of generating data.
    pub dataset: Option<PathBuf>,
    /// Share of videos held out for evaluation.
    pub eval_fraction: f64,
    /// Repeats per ablation cell.
    pub seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            data: SyntheticConfig::default(),
            dataset: None,
            eval_fraction: 0.25,
            seeds: 3,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn kv(key: &str, value: impl Display) -> (String, String) {
    (key.to_string(), value.to_string())
}

impl RunConfig {
    /// Parse a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply every assignment in `text`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_assignment(line)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Apply one `key=value` string.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, d) = (&mut self.model, &mut self.data);
        let f = &mut m.flags;
        match key {
            "dim" => m.dim = parse(key, value)?,
            "classes" => m.classes = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "layers" => m.stack.layers = parse(key, value)?,
            "heads" => m.stack.heads = parse(key, value)?,
            "residual" => m.stack.residual = parse_bool(key, value)?,
            "layer_norm" => m.stack.layer_norm = parse_bool(key, value)?,
            "depth" => m.depth = parse(key, value)?,
            "share_channels" => m.share_channels = parse_bool(key, value)?,
            "w" => m.selection.w = parse(key, value)?,
            "k" => m.selection.k = parse(key, value)?,
            "mode" => m.mode = parse(key, value)?,
            "hh_memory" => {
                m.hh_memory = match value {
                    "visual" => HhMemory::Visual,
                    "matched" => HhMemory::Matched,
                    _ => return Err(Error::config(format!("{key}: expected visual or matched"))),
                }
            }
            "keypoints" => {
                m.keypoints = match value {
                    "embedded" => KeypointInput::Embedded,
                    "raw" => KeypointInput::Raw,
                    _ => return Err(Error::config(format!("{key}: expected embedded or raw"))),
                }
            }
            "keypoint_hidden" => m.keypoint_hidden = parse(key, value)?,
            "use_hierarchy" => f.use_hierarchy = parse_bool(key, value)?,
            "use_hh" => f.use_hh = parse_bool(key, value)?,
            "use_hc" => f.use_hc = parse_bool(key, value)?,
            "use_temporal" => f.use_temporal = parse_bool(key, value)?,
            "use_selection" => f.use_selection = parse_bool(key, value)?,
            "use_vis" => f.use_vis = parse_bool(key, value)?,
            "use_key" => f.use_key = parse_bool(key, value)?,
            "use_consistency" => f.use_consistency = parse_bool(key, value)?,
            "tau" => self.loss.tau = parse(key, value)?,
            "lambda" => self.loss.lambda = parse(key, value)?,
            "include_positive" => self.loss.include_positive = parse_bool(key, value)?,
            "bidirectional" => self.loss.bidirectional = parse_bool(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "adam_eps" => self.train.adam_eps = parse(key, value)?,
            "dataset" => self.dataset = (!value.is_empty()).then(|| PathBuf::from(value)),
            "eval_fraction" => self.eval_fraction = parse(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "data_seed" => d.seed = parse(key, value)?,
            "videos" => d.videos = parse(key, value)?,
            "clips" => d.clips = parse(key, value)?,
            "actors" => d.actors = parse(key, value)?,
            "tokens" => d.tokens = parse(key, value)?,
            "noise" => d.noise = parse(key, value)?,
            "temporal" => d.temporal = parse(key, value)?,
            "split" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|p| parse(key, p.trim()))
                    .collect::<Result<_>>()?;
                d.split = parts
                    .try_into()
                    .map_err(|_| Error::config(format!("{key}: expected three comma-separated shares")))?;
            }
            "positive_rate" => d.positive_rate = parse(key, value)?,
            "amplitude" => d.amplitude = parse(key, value)?,
            "joint_amplitude" => d.joint_amplitude = parse(key, value)?,
            "identity" => d.identity = parse(key, value)?,
            "scene" => d.scene = parse(key, value)?,
            "scene_step" => d.scene_step = parse(key, value)?,
            "actor_correlation" => d.actor_correlation = parse(key, value)?,
            "context_gain" => d.context_gain = parse(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in a fixed order that [`RunConfig::parse`] reads back.
    pub fn entries(&self) -> Vec<(String, String)> {
        let (m, d, f) = (&self.model, &self.data, &self.model.flags);
        vec![
            kv("dim", m.dim),
            kv("classes", m.classes),
            kv("hidden", m.hidden),
            kv("layers", m.stack.layers),
            kv("heads", m.stack.heads),
            kv("residual", m.stack.residual),
            kv("layer_norm", m.stack.layer_norm),
            kv("depth", m.depth),
            kv("share_channels", m.share_channels),
            kv("w", m.selection.w),
            kv("k", m.selection.k),
            kv("mode", m.mode),
            kv(
                "hh_memory",
                match m.hh_memory {
                    HhMemory::Visual => "visual",
                    HhMemory::Matched => "matched",
                },
            ),
            kv(
                "keypoints",
                match m.keypoints {
                    KeypointInput::Embedded => "embedded",
                    KeypointInput::Raw => "raw",
                },
            ),
            kv("keypoint_hidden", m.keypoint_hidden),
            kv("use_hierarchy", f.use_hierarchy),
            kv("use_hh", f.use_hh),
            kv("use_hc", f.use_hc),
            kv("use_temporal", f.use_temporal),
            kv("use_selection", f.use_selection),
            kv("use_vis", f.use_vis),
            kv("use_key", f.use_key),
            kv("use_consistency", f.use_consistency),
            kv("tau", self.loss.tau),
            kv("lambda", self.loss.lambda),
            kv("include_positive", self.loss.include_positive),
            kv("bidirectional", self.loss.bidirectional),
            kv("lr", self.train.lr),
            kv("epochs", self.train.epochs),
            kv("batch_size", self.train.batch_size),
            kv("seed", self.train.seed),
            kv("beta1", self.train.beta1),
            kv("beta2", self.train.beta2),
            kv("adam_eps", self.train.adam_eps),
            kv(
                "dataset",
                self.dataset.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            kv("eval_fraction", self.eval_fraction),
            kv("seeds", self.seeds),
            kv("data_seed", d.seed),
            kv("videos", d.videos),
            kv("clips", d.clips),
            kv("actors", d.actors),
            kv("tokens", d.tokens),
            kv("noise", d.noise),
            kv("temporal", d.temporal),
            kv("split", format!("{},{},{}", d.split[0], d.split[1], d.split[2])),
            kv("positive_rate", d.positive_rate),
            kv("amplitude", d.amplitude),
            kv("joint_amplitude", d.joint_amplitude),
            kv("identity", d.identity),
            kv("scene", d.scene),
            kv("scene_step", d.scene_step),
            kv("actor_correlation", d.actor_correlation),
            kv("context_gain", d.context_gain),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Generator settings with the shared fields taken from the model.
    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            dim: self.model.dim,
            classes: self.model.classes,
            mode: self.model.mode,
            raw_keypoints: self.model.keypoints == KeypointInput::Raw,
            ..self.data.clone()
        }
    }

    /// Check every section before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.dataset.is_none() {
            self.synthetic().validate()?;
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(Error::config("eval_fraction must lie in [0, 1)"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds must be at least 1"));
        }
        Ok(())
    }

    /// Trailing dims a loaded dataset must have.
    pub fn data_spec(&self) -> crate::data::DataSpec {
        crate::data::DataSpec {
            dim: self.model.dim,
            key_dim: self.model.key_dim(),
            classes: self.model.classes,
        }
    }

    /// The small configuration used for gradient checks.
    pub fn toy() -> Self {
        let mut cfg = RunConfig::default();
        cfg.model.dim = 4;
        cfg.model.classes = 3;
        cfg.model.hidden = 6;
        cfg.model.keypoints = KeypointInput::Raw;
        cfg.model.keypoint_hidden = 5;
        cfg.model.mode = TaskMode::Stal;
        cfg.train.batch_size = 3;
        cfg.data.videos = 3;
        cfg.data.clips = 4;
        cfg.data.actors = 2;
        cfg.data.tokens = 3;
        cfg.data.scene = 1.0;
        cfg.data.identity = 1.0;
        cfg.data.context_gain = 0.5;
        debug_assert_eq!(cfg.model.key_dim(), KEYPOINT_DIM);
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::toy();
        cfg.set("use_temporal", "false").unwrap();
        cfg.set("split", "0.5,0.25,0.25").unwrap();
        cfg.set("dataset", "/tmp/x/manifest.txt").unwrap();
        cfg.set("mode", "gar").unwrap();
        cfg.set("tau", "0.1").unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_overrides_and_errors() {
        let cfg = RunConfig::parse("# header\ndim = 8  # trailing\n\nk=2\nw=3\ndim=12\n").unwrap();
        assert_eq!((cfg.model.dim, cfg.model.selection.k, cfg.model.selection.w), (12, 2, 3));
        assert!(matches!(RunConfig::parse("nope=1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("dim=abc"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("use_hh"), Err(Error::Config(_))));
        let e = RunConfig::parse("dim=4\nsplit=1,2").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn validation_covers_every_section() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig::toy().validate().is_ok());
        for bad in ["k=3", "tau=0", "lr=-1", "use_vis=false", "split=0.5,0.5,0.5", "eval_fraction=1", "heads=3"] {
            let mut cfg = RunConfig::default();
            cfg.set_assignment(bad).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn synthetic_follows_model() {
        let cfg = RunConfig::toy();
        let s = cfg.synthetic();
        assert_eq!((s.dim, s.classes, s.raw_keypoints), (4, 3, true));
    }
}
