//! Two encoder streams sharing one frozen backbone, cross-prompted by the
//! adapters of a plan, and the head routing of each variant.

use crate::adapter::{adapter_forward, init_adapter_params, AdapterConfig, AdapterPlan, Stage, Variant};
use crate::autodiff::{Graph, NodeId};
use crate::backbone::{self, attention_block, mlp_block, BackboneConfig, TokenState};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::rng::{derive_seed, Rng};
use crate::synthdata::{Image, Modality};

use super::head::{head_forward, init_head, HeadConfig, HeadMaps, HeadNodes};

/// Pixel normalization applied before patch embedding: `(v - mean) * gain`.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_GAIN: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub adapter: AdapterConfig,
    pub plan: AdapterPlan,
    pub head: HeadConfig,
    /// Template crop side relative to `sqrt(w·h)` of the box.
    pub template_factor: f64,
    pub search_factor: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.plan.variant != Variant::BaselineDual {
            self.adapter.validate()?;
        }
        if self.adapter.d_t != self.backbone.d_t {
            return Err(Error::Config(format!(
                "adapter d_t {} differs from backbone d_t {}",
                self.adapter.d_t, self.backbone.d_t
            )));
        }
        if self.plan.num_layers != self.backbone.num_layers {
            return Err(Error::Config("adapter plan and backbone disagree on depth".into()));
        }
        if !(self.template_factor > 0.0 && self.search_factor > 0.0) {
            return Err(Error::Config("crop factors must be positive".into()));
        }
        Ok(())
    }
}

/// Which stream(s) the head reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadRoute {
    /// Sum of both streams' search tokens.
    Fused,
    Single(Modality),
    /// Each stream separately; the higher peak score wins.
    MaxScore,
}

pub fn head_route(variant: Variant) -> HeadRoute {
    match variant {
        Variant::Bat | Variant::BatDual => HeadRoute::Fused,
        Variant::BatRgb => HeadRoute::Single(Modality::Rgb),
        Variant::BatTir => HeadRoute::Single(Modality::Tir),
        Variant::BaselineDual => HeadRoute::MaxScore,
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Backbone, adapters and head drawn from independent streams of `seed`,
    /// so the backbone does not depend on the variant.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = backbone::init_params(&cfg.backbone, &mut Rng::new(derive_seed(seed, 0)))?;
        params.extend(init_adapter_params(
            &cfg.plan,
            &cfg.adapter,
            &mut Rng::new(derive_seed(seed, 1)),
        )?)?;
        params.extend(init_head(
            &cfg.head,
            cfg.backbone.d_t,
            &mut Rng::new(derive_seed(seed, 2)),
        )?)?;
        Ok(Self { cfg, params })
    }

    pub fn variant(&self) -> Variant {
        self.cfg.plan.variant
    }

    pub fn set_head_trainable(&mut self, trainable: bool) {
        self.params.set_trainable("head.", trainable);
    }
}

/// Template and search crops of both modalities, pixel values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct DualInputs {
    pub rgb_template: Image,
    pub rgb_search: Image,
    pub tir_template: Image,
    pub tir_search: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DualState {
    pub rgb: TokenState,
    pub tir: TokenState,
    /// Number of encoder layers applied so far.
    pub layer: usize,
}

impl DualState {
    pub fn stream(&self, m: Modality) -> TokenState {
        match m {
            Modality::Rgb => self.rgb,
            Modality::Tir => self.tir,
        }
    }
}

fn model_image(image: &Image, channels: usize) -> Result<Image> {
    let mut out = image.replicate_channels(channels)?;
    for v in &mut out.data {
        *v = (*v - INPUT_MEAN) * INPUT_GAIN;
    }
    Ok(out)
}

pub fn embed_dual(g: &mut Graph, model: &Model, inputs: &DualInputs) -> Result<DualState> {
    let b = &model.cfg.backbone;
    let c = b.channels;
    let rgb = backbone::patchify_and_embed(
        g,
        &model.params,
        b,
        &model_image(&inputs.rgb_template, c)?,
        &model_image(&inputs.rgb_search, c)?,
    )?;
    let tir = backbone::patchify_and_embed(
        g,
        &model.params,
        b,
        &model_image(&inputs.tir_template, c)?,
        &model_image(&inputs.tir_search, c)?,
    )?;
    Ok(DualState { rgb, tir, layer: 0 })
}

#[allow(clippy::too_many_arguments)]
fn with_prompt(
    g: &mut Graph,
    params: &ParamStore,
    plan: &AdapterPlan,
    layer: usize,
    stage: Stage,
    target: Modality,
    base: NodeId,
    source: NodeId,
) -> Result<NodeId> {
    match plan.prompt_for(layer, stage, target) {
        Some(prefix) => {
            let prompt = adapter_forward(g, params, &prefix, source)?;
            g.add(base, prompt)
        }
        None => Ok(base),
    }
}

/// Layer `layer` applied to both streams. Each stage reads snapshots of
/// both streams taken before the stage, so the update is simultaneous:
///
/// ```text
/// x'  = x  + Att(LN(x))  + Ada(x_other)
/// out = x' + MLP(LN(x')) + Ada(x'_other)
/// ```
///
/// Prompt terms exist only where the plan places an adapter.
pub fn dual_stream_layer(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BackboneConfig,
    plan: &AdapterPlan,
    layer: usize,
    s: DualState,
) -> Result<DualState> {
    if layer != s.layer + 1 || layer > cfg.num_layers {
        return Err(Error::invalid(format!(
            "cannot apply layer {layer} to a state after layer {} of {}",
            s.layer, cfg.num_layers
        )));
    }
    let (r, t) = (s.rgb.tokens, s.tir.tokens);
    let att_r = attention_block(g, params, cfg, layer, r)?;
    let att_t = attention_block(g, params, cfg, layer, t)?;
    let mid_r = g.add(r, att_r)?;
    let mid_r = with_prompt(g, params, plan, layer, Stage::Attention, Modality::Rgb, mid_r, t)?;
    let mid_t = g.add(t, att_t)?;
    let mid_t = with_prompt(g, params, plan, layer, Stage::Attention, Modality::Tir, mid_t, r)?;

    let mlp_r = mlp_block(g, params, cfg, layer, mid_r)?;
    let mlp_t = mlp_block(g, params, cfg, layer, mid_t)?;
    let out_r = g.add(mid_r, mlp_r)?;
    let out_r = with_prompt(g, params, plan, layer, Stage::Mlp, Modality::Rgb, out_r, mid_t)?;
    let out_t = g.add(mid_t, mlp_t)?;
    let out_t = with_prompt(g, params, plan, layer, Stage::Mlp, Modality::Tir, out_t, mid_r)?;
    Ok(DualState {
        rgb: TokenState {
            tokens: out_r,
            split: s.rgb.split,
        },
        tir: TokenState {
            tokens: out_t,
            split: s.tir.split,
        },
        layer,
    })
}

/// Embedding followed by every layer; returns the state after each depth,
/// starting with the embedding.
pub fn dual_forward(g: &mut Graph, model: &Model, inputs: &DualInputs) -> Result<Vec<DualState>> {
    let mut s = embed_dual(g, model, inputs)?;
    let mut states = vec![s];
    for layer in 1..=model.cfg.backbone.num_layers {
        s = dual_stream_layer(g, &model.params, &model.cfg.backbone, &model.cfg.plan, layer, s)?;
        states.push(s);
    }
    Ok(states)
}

pub fn search_tokens(g: &mut Graph, s: TokenState) -> Result<NodeId> {
    let n = g.shape(s.tokens)[0];
    g.slice(s.tokens, 0, s.split, n - s.split)
}

/// Head input of the fused route: the two streams' search tokens added.
pub fn fused_head_input(g: &mut Graph, s: &DualState) -> Result<NodeId> {
    let r = search_tokens(g, s.rgb)?;
    let t = search_tokens(g, s.tir)?;
    g.add(r, t)
}

/// Head applications for `route`, tagged with the stream they read
/// (`None` for the fused input). Streams come RGB first.
pub fn apply_heads(
    g: &mut Graph,
    params: &ParamStore,
    route: HeadRoute,
    s: &DualState,
) -> Result<Vec<(Option<Modality>, HeadNodes)>> {
    let mut out = Vec::new();
    match route {
        HeadRoute::Fused => {
            let x = fused_head_input(g, s)?;
            out.push((None, head_forward(g, params, x)?));
        }
        HeadRoute::Single(m) => {
            let x = search_tokens(g, s.stream(m))?;
            out.push((Some(m), head_forward(g, params, x)?));
        }
        HeadRoute::MaxScore => {
            for m in [Modality::Rgb, Modality::Tir] {
                let x = search_tokens(g, s.stream(m))?;
                out.push((Some(m), head_forward(g, params, x)?));
            }
        }
    }
    Ok(out)
}

/// Picks the stream whose score map has the larger peak; RGB wins ties.
pub fn select_max_score(rgb: HeadMaps, tir: HeadMaps) -> (Modality, HeadMaps) {
    if tir.max_score() > rgb.max_score() {
        (Modality::Tir, tir)
    } else {
        (Modality::Rgb, rgb)
    }
}

/// Head maps of the variant's route for one input pair.
pub fn predict_maps(model: &Model, inputs: &DualInputs) -> Result<HeadMaps> {
    let mut g = Graph::new();
    let states = dual_forward(&mut g, model, inputs)?;
    let last = *states.last().expect("at least the embedding");
    let mut heads = apply_heads(&mut g, &model.params, head_route(model.variant()), &last)?
        .into_iter()
        .map(|(_, h)| HeadMaps::from_graph(&g, &h));
    let first = heads.next().expect("at least one head");
    Ok(match heads.next() {
        Some(second) => select_max_score(first, second).1,
        None => first,
    })
}
