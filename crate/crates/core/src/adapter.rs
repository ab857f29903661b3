//! Hourglass adapters that carry feature prompts from one modality's stream
//! into the other's, and the planner that decides where they go.
//!
//! An adapter is three chained linear maps `d_t → d_e → d_e → d_t` with no
//! nonlinearity. Parameters live under
//! `adapter.{layer}.{stage}[.{direction}].{down|mid|up}.{w|b}`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{gaussian, ParamStore};
use crate::rng::Rng;
use crate::synthdata::Modality;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub d_t: usize,
    pub d_e: usize,
    pub include_bias: bool,
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_e == 0 || self.d_e >= self.d_t {
            return Err(Error::Config(format!(
                "bottleneck d_e = {} must satisfy 0 < d_e < d_t = {}",
                self.d_e, self.d_t
            )));
        }
        Ok(())
    }

    pub fn params_per_instance(&self) -> usize {
        let (t, e) = (self.d_t, self.d_e);
        let bias = usize::from(self.include_bias);
        (t * e + bias * e) + (e * e + bias * e) + (e * t + bias * t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One adapter per insertion point, applied in both directions.
    Bat,
    /// Prompts flow TIR → RGB only; the head reads the RGB stream.
    BatRgb,
    /// Prompts flow RGB → TIR only; the head reads the TIR stream.
    BatTir,
    /// Separate adapters per direction.
    BatDual,
    /// Two independent streams, no adapters.
    BaselineDual,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Bat,
        Variant::BatRgb,
        Variant::BatTir,
        Variant::BatDual,
        Variant::BaselineDual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bat => "BAT",
            Variant::BatRgb => "BAT-RGB",
            Variant::BatTir => "BAT-TIR",
            Variant::BatDual => "BAT-Dual",
            Variant::BaselineDual => "Baseline-Dual",
        }
    }

    /// Stable numeric code used in checkpoints.
    pub fn code(self) -> u32 {
        match self {
            Variant::Bat => 0,
            Variant::BatRgb => 1,
            Variant::BatTir => 2,
            Variant::BatDual => 3,
            Variant::BaselineDual => 4,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.code() == code)
            .ok_or_else(|| Error::invalid(format!("unknown variant code {code}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Attention,
    Mlp,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Attention => "attn",
            Stage::Mlp => "mlp",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "attn" | "attention" => Ok(Stage::Attention),
            "mlp" => Ok(Stage::Mlp),
            _ => Err(Error::Config(format!("unknown stage `{s}`"))),
        }
    }
}

/// Flow of a prompt between the streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    TirToRgb,
    RgbToTir,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::TirToRgb => "t2r",
            Direction::RgbToTir => "r2t",
        }
    }

    /// Direction whose prompts land in `target`.
    pub fn toward(target: Modality) -> Self {
        match target {
            Modality::Rgb => Direction::TirToRgb,
            Modality::Tir => Direction::RgbToTir,
        }
    }
}

/// One adapter instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdapterSlot {
    pub layer: usize,
    pub stage: Stage,
    /// `None` for an adapter used by every active direction.
    pub direction: Option<Direction>,
}

impl AdapterSlot {
    pub fn prefix(&self) -> String {
        match self.direction {
            Some(d) => format!("adapter.{}.{}.{}", self.layer, self.stage.as_str(), d.as_str()),
            None => format!("adapter.{}.{}", self.layer, self.stage.as_str()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdapterPlan {
    pub variant: Variant,
    pub layers: BTreeSet<usize>,
    pub stages: BTreeSet<Stage>,
    pub num_layers: usize,
}

impl AdapterPlan {
    pub fn new(
        variant: Variant,
        layers: impl IntoIterator<Item = usize>,
        stages: &[Stage],
        num_layers: usize,
    ) -> Result<Self> {
        let layers: BTreeSet<usize> = layers.into_iter().collect();
        if let Some(&bad) = layers.iter().find(|&&l| l == 0 || l > num_layers) {
            return Err(Error::Config(format!("adapter layer {bad} outside 1..={num_layers}")));
        }
        let (layers, stages) = if variant == Variant::BaselineDual {
            (BTreeSet::new(), BTreeSet::new())
        } else {
            (layers, stages.iter().copied().collect())
        };
        Ok(Self {
            variant,
            layers,
            stages,
            num_layers,
        })
    }

    pub fn all_layers(variant: Variant, num_layers: usize) -> Result<Self> {
        Self::new(variant, 1..=num_layers, &[Stage::Attention, Stage::Mlp], num_layers)
    }

    fn directions(&self) -> &'static [Option<Direction>] {
        match self.variant {
            Variant::Bat | Variant::BatRgb | Variant::BatTir => &[None],
            Variant::BatDual => &[Some(Direction::TirToRgb), Some(Direction::RgbToTir)],
            Variant::BaselineDual => &[],
        }
    }

    /// Every adapter instance, ordered by layer, stage, direction.
    pub fn slots(&self) -> Vec<AdapterSlot> {
        let mut out = Vec::new();
        for &layer in &self.layers {
            for &stage in &self.stages {
                for &direction in self.directions() {
                    out.push(AdapterSlot {
                        layer,
                        stage,
                        direction,
                    });
                }
            }
        }
        out
    }

    pub fn instance_count(&self) -> usize {
        self.layers.len() * self.stages.len() * self.directions().len()
    }

    /// Whether prompts may flow into `target` at all.
    pub fn feeds(&self, target: Modality) -> bool {
        match self.variant {
            Variant::Bat | Variant::BatDual => true,
            Variant::BatRgb => target == Modality::Rgb,
            Variant::BatTir => target == Modality::Tir,
            Variant::BaselineDual => false,
        }
    }

    /// Parameter prefix of the adapter that prompts `target` at this point.
    pub fn prompt_for(&self, layer: usize, stage: Stage, target: Modality) -> Option<String> {
        if !self.layers.contains(&layer) || !self.stages.contains(&stage) || !self.feeds(target) {
            return None;
        }
        let direction = (self.variant == Variant::BatDual).then(|| Direction::toward(target));
        Some(
            AdapterSlot {
                layer,
                stage,
                direction,
            }
            .prefix(),
        )
    }
}

/// Parses `all`, `none`, a single layer, a range `a-b`, or a comma list of
/// those.
pub fn parse_layer_set(s: &str, num_layers: usize) -> Result<BTreeSet<usize>> {
    let s = s.trim();
    match s {
        "all" => return Ok((1..=num_layers).collect()),
        "none" | "" => return Ok(BTreeSet::new()),
        _ => {}
    }
    let bad = |part: &str| Error::Config(format!("bad layer spec `{part}`"));
    let mut out = BTreeSet::new();
    for part in s.split(',') {
        let part = part.trim();
        if let Some((a, b)) = part.split_once('-') {
            let a: usize = a.trim().parse().map_err(|_| bad(part))?;
            let b: usize = b.trim().parse().map_err(|_| bad(part))?;
            if a > b {
                return Err(bad(part));
            }
            out.extend(a..=b);
        } else {
            out.insert(part.parse().map_err(|_| bad(part))?);
        }
    }
    Ok(out)
}

/// Plan plus freshly initialized, trainable adapter parameters: down and mid
/// Gaussian, up exactly zero.
pub fn build_adapter_plan(
    variant: Variant,
    layers: impl IntoIterator<Item = usize>,
    stages: &[Stage],
    num_layers: usize,
    cfg: &AdapterConfig,
    rng: &mut Rng,
) -> Result<(AdapterPlan, ParamStore)> {
    cfg.validate()?;
    let plan = AdapterPlan::new(variant, layers, stages, num_layers)?;
    let params = init_adapter_params(&plan, cfg, rng)?;
    Ok((plan, params))
}

pub fn init_adapter_params(plan: &AdapterPlan, cfg: &AdapterConfig, rng: &mut Rng) -> Result<ParamStore> {
    let (t, e) = (cfg.d_t, cfg.d_e);
    let mut p = ParamStore::new();
    for slot in plan.slots() {
        let pre = slot.prefix();
        p.insert(format!("{pre}.down.w"), gaussian(rng, &[t, e], INIT_STD).trainable())?;
        if cfg.include_bias {
            p.insert(format!("{pre}.down.b"), Tensor::zeros([e]).trainable())?;
        }
        p.insert(format!("{pre}.mid.w"), gaussian(rng, &[e, e], INIT_STD).trainable())?;
        if cfg.include_bias {
            p.insert(format!("{pre}.mid.b"), Tensor::zeros([e]).trainable())?;
        }
        p.insert(format!("{pre}.up.w"), Tensor::zeros([e, t]).trainable())?;
        if cfg.include_bias {
            p.insert(format!("{pre}.up.b"), Tensor::zeros([t]).trainable())?;
        }
    }
    Ok(p)
}

/// `up(mid(down(x)))` for the adapter stored under `prefix`.
pub fn adapter_forward(g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let down_w = params.bind(g, &format!("{prefix}.down.w"))?;
    let d_t = params.get(&format!("{prefix}.down.w"))?.shape()[0];
    let width = g.shape(x).last().copied().unwrap_or(0);
    if g.shape(x).len() != 2 || width != d_t {
        return Err(Error::Shape {
            op: "adapter",
            shapes: vec![g.shape(x).to_vec(), vec![d_t]],
        });
    }
    let mut h = x;
    for (part, w) in [("down", Some(down_w)), ("mid", None), ("up", None)] {
        let w = match w {
            Some(w) => w,
            None => params.bind(g, &format!("{prefix}.{part}.w"))?,
        };
        let bname = format!("{prefix}.{part}.b");
        let b = if params.contains(&bname) {
            Some(params.bind(g, &bname)?)
        } else {
            None
        };
        h = g.linear(h, w, b)?;
    }
    Ok(h)
}

/// Closed-form trainable adapter parameter count of `plan`.
pub fn count_trainable_params(plan: &AdapterPlan, cfg: &AdapterConfig) -> usize {
    plan.instance_count() * cfg.params_per_instance()
}
