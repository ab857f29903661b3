//! Randomized finite-difference checks for each op in the closed set.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::{Graph, NodeId, OpKind};
use crate::error::Result;
use crate::tensor::Tensor;

/// One representative per [`OpKind`] variant, used to enumerate the set.
pub fn all_op_kinds() -> Vec<OpKind> {
    vec![
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Scale(0.0),
        OpKind::Concat { axis: 0 },
        OpKind::Slice {
            axis: 0,
            start: 0,
            len: 0,
        },
        OpKind::Reshape(Vec::new()),
        OpKind::Transpose,
        OpKind::LayerNorm { eps: 1e-6 },
        OpKind::Gelu,
        OpKind::Softmax { axis: 0 },
        OpKind::Conv2d { stride: 1, padding: 0 },
        OpKind::Relu,
        OpKind::Sigmoid,
    ]
}

fn random_tensor(rng: &mut SplitMix64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape, data).expect("shape and data agree").trainable()
}

fn random_shape(rng: &mut SplitMix64, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(1..=4)).collect()
}

/// Builds a random small instance of the op family of `kind` (its
/// parameters are re-drawn), reduces it to a scalar with a random
/// projection, and returns the worst relative finite-difference error over
/// all operand leaves.
pub fn check_random_instance(kind: &OpKind, seed: u64, h: f64) -> Result<f64> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut g = Graph::new();
    let leaf = |g: &mut Graph, name: &str, t: Tensor| g.leaf(name, t);

    let (out, leaves): (NodeId, Vec<NodeId>) = match kind {
        OpKind::MatMul => {
            let (m, k, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &[m, k]))?;
            let b = leaf(&mut g, "b", random_tensor(&mut rng, &[k, n]))?;
            (g.matmul(a, b)?, vec![a, b])
        }
        OpKind::Add => {
            let rank = rng.gen_range(1..=3);
            let shape = random_shape(&mut rng, rank);
            let cut = rng.gen_range(0..shape.len());
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &shape))?;
            let b = leaf(&mut g, "b", random_tensor(&mut rng, &shape[cut..]))?;
            (g.add(a, b)?, vec![a, b])
        }
        OpKind::Scale(_) => {
            let shape = random_shape(&mut rng, 2);
            let s = rng.gen_range(-2.0..2.0);
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &shape))?;
            (g.scale(a, s)?, vec![a])
        }
        OpKind::Concat { .. } => {
            let rank = rng.gen_range(1..=3);
            let axis = rng.gen_range(0..rank);
            let base = random_shape(&mut rng, rank);
            let parts = rng.gen_range(1..=3);
            let mut ids = Vec::new();
            for p in 0..parts {
                let mut s = base.clone();
                s[axis] = rng.gen_range(1..=3);
                ids.push(leaf(&mut g, &format!("p{p}"), random_tensor(&mut rng, &s))?);
            }
            (g.concat(&ids, axis)?, ids)
        }
        OpKind::Slice { .. } => {
            let rank = rng.gen_range(1..=3);
            let axis = rng.gen_range(0..rank);
            let mut shape = random_shape(&mut rng, rank);
            shape[axis] += 1;
            let start = rng.gen_range(0..shape[axis]);
            let len = rng.gen_range(1..=shape[axis] - start);
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &shape))?;
            (g.slice(a, axis, start, len)?, vec![a])
        }
        OpKind::Reshape(_) => {
            let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &[r, c]))?;
            (g.reshape(a, [c, r])?, vec![a])
        }
        OpKind::Transpose => {
            let (r, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &[r, c]))?;
            (g.transpose(a)?, vec![a])
        }
        OpKind::LayerNorm { eps } => {
            let (rows, d) = (rng.gen_range(1..=3), rng.gen_range(2..=5));
            let x = leaf(&mut g, "x", random_tensor(&mut rng, &[rows, d]))?;
            let gain = leaf(&mut g, "g", random_tensor(&mut rng, &[d]))?;
            let bias = leaf(&mut g, "b", random_tensor(&mut rng, &[d]))?;
            (g.layernorm(x, gain, bias, *eps)?, vec![x, gain, bias])
        }
        OpKind::Gelu => {
            let shape = random_shape(&mut rng, 2);
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &shape))?;
            (g.gelu(a)?, vec![a])
        }
        OpKind::Softmax { .. } => {
            let rank = rng.gen_range(1..=3);
            let axis = rng.gen_range(0..rank);
            let shape = random_shape(&mut rng, rank);
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &shape))?;
            (g.softmax(a, axis)?, vec![a])
        }
        OpKind::Conv2d { .. } => {
            let (c, o) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (k, stride, padding) = (rng.gen_range(1..=3), rng.gen_range(1..=2), rng.gen_range(0..=1));
            let (h, w) = (rng.gen_range(k..=k + 3), rng.gen_range(k..=k + 3));
            let x = leaf(&mut g, "x", random_tensor(&mut rng, &[c, h, w]))?;
            let wt = leaf(&mut g, "w", random_tensor(&mut rng, &[o, c, k, k]))?;
            if rng.gen_bool(0.5) {
                let b = leaf(&mut g, "b", random_tensor(&mut rng, &[o]))?;
                (g.conv2d(x, wt, Some(b), stride, padding)?, vec![x, wt, b])
            } else {
                (g.conv2d(x, wt, None, stride, padding)?, vec![x, wt])
            }
        }
        OpKind::Relu => {
            let shape = random_shape(&mut rng, 2);
            let n: usize = shape.iter().product();
            // keep clear of the kink at zero
            let data = (0..n)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..1.5);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            let a = leaf(&mut g, "a", Tensor::new(shape, data)?.trainable())?;
            (g.relu(a)?, vec![a])
        }
        OpKind::Sigmoid => {
            let shape = random_shape(&mut rng, 2);
            let a = leaf(&mut g, "a", random_tensor(&mut rng, &shape))?;
            (g.sigmoid(a)?, vec![a])
        }
    };

    let proj = {
        let shape = g.shape(out).to_vec();
        let mut t = random_tensor(&mut rng, &shape);
        t.set_requires_grad(false);
        t
    };
    let scalar = g.dot(out, &proj)?;
    let mut worst: f64 = 0.0;
    for l in leaves {
        worst = worst.max(g.finite_diff_check(scalar, l, h)?);
    }
    Ok(worst)
}

/// Finite-difference check of one randomized dual-stream layer with
/// adapters: small dimensions, random weights everywhere (up projections
/// included), random adapter variant and stage set. The error is the worst
/// over both input streams and every backbone and adapter tensor.
pub fn check_dual_layer_instance(seed: u64, h: f64) -> Result<f64> {
    use crate::adapter::{init_adapter_params, AdapterConfig, AdapterPlan, Stage, Variant};
    use crate::backbone::{init_params, BackboneConfig, TokenState};
    use crate::rng::Rng as Stream;
    use crate::tracker::{dual_stream_layer, DualState};

    let mut rng = SplitMix64::seed_from_u64(seed);
    let heads = rng.gen_range(1..=2);
    let d = heads * rng.gen_range(2..=4);
    let cfg = BackboneConfig {
        image_size_template: 16,
        image_size_search: 16,
        patch_size: 16,
        d_t: d,
        num_layers: 1,
        num_heads: heads,
        mlp_ratio: 2,
        channels: 3,
        ln_eps: 1e-6,
    };
    let variants = [Variant::Bat, Variant::BatRgb, Variant::BatTir, Variant::BatDual];
    let variant = variants[rng.gen_range(0..variants.len())];
    let stages: &[Stage] = match rng.gen_range(0..3) {
        0 => &[Stage::Attention],
        1 => &[Stage::Mlp],
        _ => &[Stage::Attention, Stage::Mlp],
    };
    let plan = AdapterPlan::new(variant, [1], stages, 1)?;
    let acfg = AdapterConfig {
        d_t: d,
        d_e: rng.gen_range(1..=3),
        include_bias: rng.gen_bool(0.5),
    };
    let mut params = init_params(&cfg, &mut Stream::new(rng.gen()))?;
    params.extend(init_adapter_params(&plan, &acfg, &mut Stream::new(rng.gen()))?)?;
    for (_, t) in params.iter_mut() {
        let shape = t.shape().to_vec();
        let trainable = t.requires_grad();
        let mut fresh = random_tensor(&mut rng, &shape);
        fresh.data_mut().iter_mut().for_each(|v| *v *= 0.5);
        fresh.set_requires_grad(trainable);
        *t = fresh;
    }

    let mut g = Graph::new();
    let tokens = rng.gen_range(2..=5);
    let split = rng.gen_range(1..tokens);
    let rgb = g.leaf("x.rgb", random_tensor(&mut rng, &[tokens, d]))?;
    let tir = g.leaf("x.tir", random_tensor(&mut rng, &[tokens, d]))?;
    let state = DualState {
        rgb: TokenState { tokens: rgb, split },
        tir: TokenState { tokens: tir, split },
        layer: 0,
    };
    let out = dual_stream_layer(&mut g, &params, &cfg, &plan, 1, state)?;
    let mut proj = |g: &mut Graph, x: NodeId| {
        let mut t = random_tensor(&mut rng, g.shape(x));
        t.set_requires_grad(false);
        g.dot(x, &t)
    };
    let a = proj(&mut g, out.rgb.tokens)?;
    let b = proj(&mut g, out.tir.tokens)?;
    let scalar = g.add(a, b)?;

    let mut leaves = vec![rgb, tir];
    leaves.extend(params.iter().filter_map(|(name, _)| g.get(name)));
    let mut worst: f64 = 0.0;
    for l in leaves {
        worst = worst.max(g.finite_diff_check(scalar, l, h)?);
    }
    Ok(worst)
}
