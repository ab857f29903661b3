//! Frozen ViT-style joint encoder over concatenated template and search
//! tokens.
//!
//! Layers are pre-norm: `x' = x + Att(LN(x))`, `out = x' + MLP(LN(x'))`.
//! Parameter names follow `backbone.layer.{i}.{ln1|attn|ln2|mlp}.*` with
//! layers numbered from 1.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{gaussian, ParamStore};
use crate::rng::Rng;
use crate::synthdata::Image;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub image_size_template: usize,
    pub image_size_search: usize,
    pub patch_size: usize,
    pub d_t: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub channels: usize,
    pub ln_eps: f64,
}

impl BackboneConfig {
    /// Desk-scale encoder: 32² template, 64² search, 16-pixel patches.
    pub fn toy() -> Self {
        Self {
            image_size_template: 32,
            image_size_search: 64,
            patch_size: 16,
            d_t: 64,
            num_layers: 2,
            num_heads: 4,
            mlp_ratio: 4,
            channels: 3,
            ln_eps: 1e-6,
        }
    }

    /// ViT-B shapes, used for parameter accounting.
    pub fn full_shape() -> Self {
        Self {
            image_size_template: 128,
            image_size_search: 256,
            patch_size: 16,
            d_t: 768,
            num_layers: 12,
            num_heads: 12,
            mlp_ratio: 4,
            channels: 3,
            ln_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.d_t == 0 || self.num_heads == 0 || self.channels == 0 {
            return fail("patch_size, d_t, num_heads and channels must be positive".into());
        }
        if !self.image_size_template.is_multiple_of(self.patch_size)
            || !self.image_size_search.is_multiple_of(self.patch_size)
        {
            return fail(format!(
                "image sizes {} and {} must be multiples of patch_size {}",
                self.image_size_template, self.image_size_search, self.patch_size
            ));
        }
        if self.image_size_template == 0 || self.image_size_search == 0 {
            return fail("image sizes must be positive".into());
        }
        if !self.d_t.is_multiple_of(self.num_heads) {
            return fail(format!(
                "d_t {} is not divisible by num_heads {}",
                self.d_t, self.num_heads
            ));
        }
        if self.mlp_ratio == 0 || !(self.ln_eps > 0.0) {
            return fail("mlp_ratio and ln_eps must be positive".into());
        }
        Ok(())
    }

    pub fn template_grid(&self) -> usize {
        self.image_size_template / self.patch_size
    }

    pub fn search_grid(&self) -> usize {
        self.image_size_search / self.patch_size
    }

    pub fn template_tokens(&self) -> usize {
        self.template_grid().pow(2)
    }

    pub fn search_tokens(&self) -> usize {
        self.search_grid().pow(2)
    }

    /// t_n: template plus search tokens.
    pub fn num_tokens(&self) -> usize {
        self.template_tokens() + self.search_tokens()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.d_t / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        self.d_t * self.mlp_ratio
    }
}

/// Token matrix `(t_n, d_t)` living in a graph, template tokens first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenState {
    pub tokens: NodeId,
    /// Index of the first search token.
    pub split: usize,
}

pub fn layer_prefix(layer: usize) -> String {
    format!("backbone.layer.{layer}")
}

/// Seeded Gaussian initialization of every backbone tensor, all frozen.
pub fn init_params(cfg: &BackboneConfig, rng: &mut Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.d_t;
    let mut p = ParamStore::new();
    p.insert("backbone.embed.w", gaussian(rng, &[cfg.patch_dim(), d], INIT_STD))?;
    p.insert("backbone.embed.b", Tensor::zeros([d]))?;
    p.insert(
        "backbone.pos.template",
        gaussian(rng, &[cfg.template_tokens(), d], INIT_STD),
    )?;
    p.insert(
        "backbone.pos.search",
        gaussian(rng, &[cfg.search_tokens(), d], INIT_STD),
    )?;
    for layer in 1..=cfg.num_layers {
        let pre = layer_prefix(layer);
        p.insert(format!("{pre}.ln1.g"), Tensor::filled([d], 1.0))?;
        p.insert(format!("{pre}.ln1.b"), Tensor::zeros([d]))?;
        for proj in ["q", "k", "v", "o"] {
            p.insert(format!("{pre}.attn.{proj}.w"), gaussian(rng, &[d, d], INIT_STD))?;
            p.insert(format!("{pre}.attn.{proj}.b"), Tensor::zeros([d]))?;
        }
        p.insert(format!("{pre}.ln2.g"), Tensor::filled([d], 1.0))?;
        p.insert(format!("{pre}.ln2.b"), Tensor::zeros([d]))?;
        let hidden = cfg.mlp_hidden();
        p.insert(format!("{pre}.mlp.fc1.w"), gaussian(rng, &[d, hidden], INIT_STD))?;
        p.insert(format!("{pre}.mlp.fc1.b"), Tensor::zeros([hidden]))?;
        p.insert(format!("{pre}.mlp.fc2.w"), gaussian(rng, &[hidden, d], INIT_STD))?;
        p.insert(format!("{pre}.mlp.fc2.b"), Tensor::zeros([d]))?;
    }
    p.set_trainable("backbone.", false);
    Ok(p)
}

/// Rearranges an image into one row per patch, patches in row-major grid
/// order; each row is laid out channel-major as `(c, py, px)`.
pub fn patchify(image: &Image, patch: usize) -> Result<Tensor> {
    if patch == 0 || !image.width.is_multiple_of(patch) || !image.height.is_multiple_of(patch) {
        return Err(Error::invalid(format!(
            "{}x{} image does not tile into {patch}-pixel patches",
            image.width, image.height
        )));
    }
    let (gw, gh, c) = (image.width / patch, image.height / patch, image.channels);
    let dim = c * patch * patch;
    let mut out = Vec::with_capacity(gw * gh * dim);
    for gy in 0..gh {
        for gx in 0..gw {
            for ch in 0..c {
                for py in 0..patch {
                    let y = gy * patch + py;
                    for px in 0..patch {
                        let x = gx * patch + px;
                        out.push(image.data[(y * image.width + x) * c + ch]);
                    }
                }
            }
        }
    }
    Tensor::new([gw * gh, dim], out)
}

fn check_image(image: &Image, size: usize, channels: usize, what: &str) -> Result<()> {
    if image.width != size || image.height != size || image.channels != channels {
        return Err(Error::invalid(format!(
            "{what} image is {}x{}x{}, expected {size}x{size}x{channels}",
            image.width, image.height, image.channels
        )));
    }
    Ok(())
}

/// Patch and position embedding of one modality's template and search
/// images, concatenated template-first.
pub fn patchify_and_embed(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BackboneConfig,
    template: &Image,
    search: &Image,
) -> Result<TokenState> {
    check_image(template, cfg.image_size_template, cfg.channels, "template")?;
    check_image(search, cfg.image_size_search, cfg.channels, "search")?;
    let w = params.bind(g, "backbone.embed.w")?;
    let b = params.bind(g, "backbone.embed.b")?;
    let embed = |g: &mut Graph, image: &Image, pos: &str| -> Result<NodeId> {
        let patches = g.constant(patchify(image, cfg.patch_size)?);
        let x = g.linear(patches, w, Some(b))?;
        let pos = params.bind(g, pos)?;
        g.add(x, pos)
    };
    let t = embed(g, template, "backbone.pos.template")?;
    let s = embed(g, search, "backbone.pos.search")?;
    Ok(TokenState {
        tokens: g.concat(&[t, s], 0)?,
        split: cfg.template_tokens(),
    })
}

fn bind_linear(g: &mut Graph, params: &ParamStore, name: &str) -> Result<(NodeId, NodeId)> {
    Ok((
        params.bind(g, &format!("{name}.w"))?,
        params.bind(g, &format!("{name}.b"))?,
    ))
}

/// `Att(LN(x))` of layer `layer`, without the residual.
pub fn attention_block(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BackboneConfig,
    layer: usize,
    x: NodeId,
) -> Result<NodeId> {
    let pre = layer_prefix(layer);
    let gain = params.bind(g, &format!("{pre}.ln1.g"))?;
    let bias = params.bind(g, &format!("{pre}.ln1.b"))?;
    let h = g.layernorm(x, gain, bias, cfg.ln_eps)?;
    let (qw, qb) = bind_linear(g, params, &format!("{pre}.attn.q"))?;
    let (kw, kb) = bind_linear(g, params, &format!("{pre}.attn.k"))?;
    let (vw, vb) = bind_linear(g, params, &format!("{pre}.attn.v"))?;
    let (ow, ob) = bind_linear(g, params, &format!("{pre}.attn.o"))?;
    let q = g.linear(h, qw, Some(qb))?;
    let k = g.linear(h, kw, Some(kb))?;
    let v = g.linear(h, vw, Some(vb))?;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let qh = g.slice(q, 1, head * dh, dh)?;
        let kh = g.slice(k, 1, head * dh, dh)?;
        let vh = g.slice(v, 1, head * dh, dh)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores, 1)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat(&heads, 1)?;
    g.linear(merged, ow, Some(ob))
}

/// `MLP(LN(x))` of layer `layer`, without the residual.
pub fn mlp_block(g: &mut Graph, params: &ParamStore, cfg: &BackboneConfig, layer: usize, x: NodeId) -> Result<NodeId> {
    let pre = layer_prefix(layer);
    let gain = params.bind(g, &format!("{pre}.ln2.g"))?;
    let bias = params.bind(g, &format!("{pre}.ln2.b"))?;
    let h = g.layernorm(x, gain, bias, cfg.ln_eps)?;
    let (w1, b1) = bind_linear(g, params, &format!("{pre}.mlp.fc1"))?;
    let (w2, b2) = bind_linear(g, params, &format!("{pre}.mlp.fc2"))?;
    let h = g.linear(h, w1, Some(b1))?;
    let h = g.gelu(h)?;
    g.linear(h, w2, Some(b2))
}

pub fn encoder_layer(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BackboneConfig,
    layer: usize,
    x: TokenState,
) -> Result<TokenState> {
    if layer == 0 || layer > cfg.num_layers {
        return Err(Error::invalid(format!("layer {layer} outside 1..={}", cfg.num_layers)));
    }
    let att = attention_block(g, params, cfg, layer, x.tokens)?;
    let mid = g.add(x.tokens, att)?;
    let mlp = mlp_block(g, params, cfg, layer, mid)?;
    Ok(TokenState {
        tokens: g.add(mid, mlp)?,
        split: x.split,
    })
}

/// Embedding followed by all `num_layers` encoder layers.
pub fn backbone_forward(
    g: &mut Graph,
    params: &ParamStore,
    cfg: &BackboneConfig,
    template: &Image,
    search: &Image,
) -> Result<TokenState> {
    let mut x = patchify_and_embed(g, params, cfg, template, search)?;
    for layer in 1..=cfg.num_layers {
        x = encoder_layer(g, params, cfg, layer, x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(size: usize, channels: usize, v: f64) -> Image {
        Image::filled(size, size, channels, v)
    }

    fn zero_layer_weights(p: &mut ParamStore, layer: usize) {
        let pre = layer_prefix(layer);
        for name in [
            "attn.q.w",
            "attn.k.w",
            "attn.v.w",
            "attn.o.w",
            "attn.o.b",
            "mlp.fc1.w",
            "mlp.fc2.w",
            "mlp.fc2.b",
        ] {
            p.get_mut(&format!("{pre}.{name}")).unwrap().data_mut().fill(0.0);
        }
    }

    #[test]
    fn toy_token_count() {
        let cfg = BackboneConfig::toy();
        assert_eq!(cfg.num_tokens(), 4 + 16);
        let mut rng = Rng::new(1);
        let p = init_params(&cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = patchify_and_embed(
            &mut g,
            &p,
            &cfg,
            &constant_image(32, 3, 0.5),
            &constant_image(64, 3, 0.5),
        )
        .unwrap();
        assert_eq!(g.shape(x.tokens), &[20, 64]);
        assert_eq!(x.split, 4);
    }

    #[test]
    fn wrong_image_size_is_rejected() {
        let cfg = BackboneConfig::toy();
        let p = init_params(&cfg, &mut Rng::new(1)).unwrap();
        let mut g = Graph::new();
        let r = patchify_and_embed(
            &mut g,
            &p,
            &cfg,
            &constant_image(30, 3, 0.5),
            &constant_image(64, 3, 0.5),
        );
        assert!(r.is_err());
    }

    #[test]
    fn zero_embedding_yields_bias_tokens() {
        let cfg = BackboneConfig::toy();
        let mut p = init_params(&cfg, &mut Rng::new(3)).unwrap();
        p.get_mut("backbone.embed.w").unwrap().data_mut().fill(0.0);
        p.get_mut("backbone.pos.template").unwrap().data_mut().fill(0.0);
        p.get_mut("backbone.pos.search").unwrap().data_mut().fill(0.0);
        let bias: Vec<f64> = (0..64).map(|i| i as f64 * 0.01 - 0.3).collect();
        p.get_mut("backbone.embed.b").unwrap().data_mut().copy_from_slice(&bias);
        let mut g = Graph::new();
        let x = patchify_and_embed(
            &mut g,
            &p,
            &cfg,
            &constant_image(32, 3, 0.7),
            &constant_image(64, 3, 0.2),
        )
        .unwrap();
        for row in g.value(x.tokens).data().chunks(64) {
            assert_eq!(row, bias.as_slice());
        }
    }

    #[test]
    fn constant_image_embedding_matches_hand_product() {
        // 2x2 patches over a 4x4 single-channel image with value 0.5, d_t = 2.
        let cfg = BackboneConfig {
            image_size_template: 2,
            image_size_search: 4,
            patch_size: 2,
            d_t: 2,
            num_layers: 0,
            num_heads: 1,
            mlp_ratio: 1,
            channels: 1,
            ln_eps: 1e-6,
        };
        let mut p = init_params(&cfg, &mut Rng::new(0)).unwrap();
        // columns: (1, 2, 3, 4) and (-1, 0, 1, 0.5)
        let w = vec![1.0, -1.0, 2.0, 0.0, 3.0, 1.0, 4.0, 0.5];
        p.get_mut("backbone.embed.w").unwrap().data_mut().copy_from_slice(&w);
        p.get_mut("backbone.embed.b")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.1, -0.2]);
        p.get_mut("backbone.pos.template").unwrap().data_mut().fill(0.0);
        p.get_mut("backbone.pos.search").unwrap().data_mut().fill(0.0);
        let mut g = Graph::new();
        let x = patchify_and_embed(&mut g, &p, &cfg, &constant_image(2, 1, 0.5), &constant_image(4, 1, 0.5)).unwrap();
        // 0.5 * (1+2+3+4) + 0.1 = 5.1 ; 0.5 * (-1+0+1+0.5) - 0.2 = 0.05
        let out = g.value(x.tokens);
        assert_eq!(out.shape(), &[5, 2]);
        for row in out.data().chunks(2) {
            assert!((row[0] - 5.1).abs() < 1e-12 && (row[1] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weight_layer_is_identity() {
        let cfg = BackboneConfig::toy();
        let mut p = init_params(&cfg, &mut Rng::new(5)).unwrap();
        zero_layer_weights(&mut p, 1);
        let mut g = Graph::new();
        let mut rng = Rng::new(9);
        let x0 = gaussian(&mut rng, &[20, 64], 1.0);
        let x = g.leaf("x", x0.clone()).unwrap();
        let out = encoder_layer(&mut g, &p, &cfg, 1, TokenState { tokens: x, split: 4 }).unwrap();
        assert!(g.value(out.tokens).bit_eq(&x0));
    }

    #[test]
    fn single_token_layer_matches_hand_computation() {
        // d_t = 2, one head, mlp_ratio 1; one token x = (1, 3).
        let cfg = BackboneConfig {
            image_size_template: 1,
            image_size_search: 1,
            patch_size: 1,
            d_t: 2,
            num_layers: 1,
            num_heads: 1,
            mlp_ratio: 1,
            channels: 1,
            ln_eps: 1e-6,
        };
        let mut p = init_params(&cfg, &mut Rng::new(0)).unwrap();
        let set = |p: &mut ParamStore, n: &str, v: &[f64]| {
            p.get_mut(&format!("backbone.layer.1.{n}"))
                .unwrap()
                .data_mut()
                .copy_from_slice(v)
        };
        let eye = [1.0, 0.0, 0.0, 1.0];
        for n in ["attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"] {
            set(&mut p, n, &eye);
        }
        for n in ["attn.q.b", "attn.k.b", "attn.v.b", "attn.o.b", "mlp.fc1.b"] {
            set(&mut p, n, &[0.0, 0.0]);
        }
        set(&mut p, "mlp.fc1.w", &[2.0, 0.0, 0.0, 1.0]);
        set(&mut p, "mlp.fc2.w", &eye);
        set(&mut p, "mlp.fc2.b", &[0.5, 0.0]);

        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::new([1, 2], vec![1.0, 3.0]).unwrap()).unwrap();
        let out = encoder_layer(&mut g, &p, &cfg, 1, TokenState { tokens: x, split: 0 }).unwrap();

        // LN((1,3)) with eps: mean 2, var 1 → (-1, 1)/sqrt(1+1e-6).
        let r = 1.0 / (1.0 + 1e-6f64).sqrt();
        // Single token: softmax weight 1, so Att = V = LN(x).
        let mid = [1.0 - r, 3.0 + r];
        // LN(mid): mean 2, deviations ∓(1 + r), var (1+r)²
        let dev = 1.0 + r;
        let r2 = 1.0 / (dev * dev + 1e-6).sqrt();
        let h = [-dev * r2, dev * r2];
        let gelu = |v: f64| 0.5 * v * (1.0 + libm::erf(v / std::f64::consts::SQRT_2));
        let m = [gelu(2.0 * h[0]) + 0.5, gelu(h[1])];
        let expected = [mid[0] + m[0], mid[1] + m[1]];
        let got = g.value(out.tokens).data();
        assert!((got[0] - expected[0]).abs() < 1e-12, "{got:?} vs {expected:?}");
        assert!((got[1] - expected[1]).abs() < 1e-12, "{got:?} vs {expected:?}");
    }

    #[test]
    fn layer_input_gradient_matches_finite_differences() {
        let cfg = BackboneConfig {
            d_t: 8,
            num_heads: 2,
            ..BackboneConfig::toy()
        };
        let p = init_params(&cfg, &mut Rng::new(11)).unwrap();
        let mut g = Graph::new();
        let x = g
            .leaf("x", gaussian(&mut Rng::new(12), &[4, 8], 1.0).trainable())
            .unwrap();
        let out = encoder_layer(&mut g, &p, &cfg, 1, TokenState { tokens: x, split: 1 }).unwrap();
        let s = g.sum(out.tokens).unwrap();
        assert!(g.finite_diff_check(s, x, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn empty_stack_equals_embedding() {
        let cfg = BackboneConfig {
            num_layers: 0,
            ..BackboneConfig::toy()
        };
        let p = init_params(&cfg, &mut Rng::new(2)).unwrap();
        let (t, s) = (constant_image(32, 3, 0.3), constant_image(64, 3, 0.6));
        let mut g1 = Graph::new();
        let a = backbone_forward(&mut g1, &p, &cfg, &t, &s).unwrap();
        let mut g2 = Graph::new();
        let b = patchify_and_embed(&mut g2, &p, &cfg, &t, &s).unwrap();
        assert!(g1.value(a.tokens).bit_eq(g2.value(b.tokens)));
    }
}
