//! Flat run configuration shared by the command line and the tests.
//!
//! A config file is a JSON object. `preset` picks the defaults (`toy` when
//! absent); every other key overrides one field. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adapter::{parse_layer_set, AdapterConfig, AdapterPlan, Stage, Variant};
use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::tracker::{AdamWConfig, HeadConfig, LossConfig, ModelConfig, TrainConfig};

pub const PRESETS: [&str; 2] = ["toy", "full-shape"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,

    pub template_size: usize,
    pub search_size: usize,
    pub patch_size: usize,
    pub d_t: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub channels: usize,
    pub ln_eps: f64,

    pub variant: String,
    /// `all`, `none`, or a list such as `1,5-7`.
    pub adapter_layers: String,
    /// Comma list of `attn` and `mlp`.
    pub adapter_stages: String,
    pub d_e: usize,
    pub adapter_bias: bool,

    pub head_hidden: usize,
    pub template_factor: f64,
    pub search_factor: f64,

    pub lambda_iou: f64,
    pub lambda_l1: f64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub sigma_frac: f64,

    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,

    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub max_gap: usize,
    pub jitter_center: f64,
    pub jitter_scale: f64,
    pub freeze_head: bool,

    pub data_root: Option<String>,
    pub out_ckpt: Option<String>,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (backbone, d_e, batch_size) = match name {
            "toy" => (BackboneConfig::toy(), 4, 8),
            "full-shape" => (BackboneConfig::full_shape(), 8, 32),
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (expected toy or full-shape)"
                )))
            }
        };
        let loss = LossConfig::default();
        let opt = AdamWConfig::default();
        let train = TrainConfig::default();
        Ok(Self {
            preset: name.to_string(),
            template_size: backbone.image_size_template,
            search_size: backbone.image_size_search,
            patch_size: backbone.patch_size,
            d_t: backbone.d_t,
            num_layers: backbone.num_layers,
            num_heads: backbone.num_heads,
            mlp_ratio: backbone.mlp_ratio,
            channels: backbone.channels,
            ln_eps: backbone.ln_eps,
            variant: Variant::Bat.as_str().to_string(),
            adapter_layers: "all".into(),
            adapter_stages: "attn,mlp".into(),
            d_e,
            adapter_bias: true,
            head_hidden: HeadConfig::default().hidden,
            template_factor: 2.0,
            search_factor: 4.0,
            lambda_iou: loss.lambda_iou,
            lambda_l1: loss.lambda_l1,
            focal_alpha: loss.focal_alpha,
            focal_beta: loss.focal_beta,
            sigma_frac: loss.sigma_frac,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            batch_size,
            steps: train.steps,
            seed: train.seed,
            max_gap: train.max_gap,
            jitter_center: train.jitter_center,
            jitter_scale: train.jitter_scale,
            freeze_head: train.freeze_head,
            data_root: None,
            out_ckpt: None,
        })
    }

    /// Parses a config text: preset defaults overlaid with the given keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let Value::Object(keys) = value else {
            return Err(Error::Config("expected a JSON object".into()));
        };
        let preset = match keys.get("preset") {
            None => "toy",
            Some(Value::String(s)) => s.as_str(),
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
        };
        let Value::Object(mut merged) = serde_json::to_value(Self::preset(preset)?).expect("config serializes") else {
            unreachable!("config serializes to an object")
        };
        for (k, v) in keys {
            if !merged.contains_key(&k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
            merged.insert(k, v);
        }
        let cfg: Self = serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model_config()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Only the keys that differ from the preset, plus the preset name.
    pub fn overrides(&self) -> Map<String, Value> {
        let base = serde_json::to_value(Self::preset(&self.preset).expect("valid preset")).expect("serializes");
        let Value::Object(mine) = serde_json::to_value(self).expect("serializes") else {
            unreachable!()
        };
        mine.into_iter()
            .filter(|(k, v)| k == "preset" || base.get(k) != Some(v))
            .collect()
    }

    pub fn trainable(&self) -> bool {
        self.preset != "full-shape"
    }

    pub fn backbone(&self) -> BackboneConfig {
        BackboneConfig {
            image_size_template: self.template_size,
            image_size_search: self.search_size,
            patch_size: self.patch_size,
            d_t: self.d_t,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            mlp_ratio: self.mlp_ratio,
            channels: self.channels,
            ln_eps: self.ln_eps,
        }
    }

    pub fn stages(&self) -> Result<Vec<Stage>> {
        self.adapter_stages
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect()
    }

    pub fn plan(&self) -> Result<AdapterPlan> {
        let variant: Variant = self.variant.parse()?;
        let layers = parse_layer_set(&self.adapter_layers, self.num_layers)?;
        AdapterPlan::new(variant, layers, &self.stages()?, self.num_layers)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            backbone: self.backbone(),
            adapter: AdapterConfig {
                d_t: self.d_t,
                d_e: self.d_e,
                include_bias: self.adapter_bias,
            },
            plan: self.plan()?,
            head: HeadConfig {
                hidden: self.head_hidden,
            },
            template_factor: self.template_factor,
            search_factor: self.search_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            max_gap: self.max_gap,
            jitter_center: self.jitter_center,
            jitter_scale: self.jitter_scale,
            freeze_head: self.freeze_head,
            optimizer: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
            },
            loss: LossConfig {
                lambda_iou: self.lambda_iou,
                lambda_l1: self.lambda_l1,
                focal_alpha: self.focal_alpha,
                focal_beta: self.focal_beta,
                sigma_frac: self.sigma_frac,
            },
        };
        cfg.loss.validate()?;
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(cfg)
    }
}
