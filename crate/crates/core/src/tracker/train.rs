//! Training samples, the per-batch update and the training loop.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::HeadMaps;
use super::loss::{compute_loss, LossConfig};
use super::model::{apply_heads, dual_forward, head_route, DualInputs, Model};
use super::optim::{AdamW, AdamWConfig};
use crate::autodiff::Graph;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::synthdata::{crop_and_resize, resample, CropGeometry, SequenceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Largest template/search frame distance.
    pub max_gap: usize,
    /// Search-center jitter, as a fraction of `sqrt(w·h)` per axis.
    pub jitter_center: f64,
    /// Log-scale jitter of the search box.
    pub jitter_scale: f64,
    pub freeze_head: bool,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            seed: 0,
            max_gap: 30,
            jitter_center: 1.0,
            jitter_scale: 0.15,
            freeze_head: false,
            optimizer: AdamWConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

/// One template/search pair per modality and the ground truth in search-crop
/// pixels.
#[derive(Clone, Debug)]
pub struct Sample {
    pub inputs: DualInputs,
    pub gt: BBox,
}

/// Draws one training sample from `data`.
pub fn draw_sample(model: &Model, data: &[SequenceRecord], tcfg: &TrainConfig, rng: &mut Rng) -> Result<Sample> {
    let b = &model.cfg.backbone;
    let seq = &data[rng.below(data.len() as u64) as usize];
    let n = seq.len();
    let t = rng.below(n as u64) as usize;
    let lo = t.saturating_sub(tcfg.max_gap);
    let hi = (t + tcfg.max_gap).min(n - 1);
    let s = rng.int_in(lo as i64, hi as i64) as usize;

    let gt_t = seq.gt_rgb[t];
    let gt_s = seq.gt_rgb[s];
    let side = (gt_s.w * gt_s.h).sqrt();
    let (cx, cy) = gt_s.center();
    let jx = rng.uniform(-1.0, 1.0) * tcfg.jitter_center * side;
    let jy = rng.uniform(-1.0, 1.0) * tcfg.jitter_center * side;
    let js = rng.uniform(-tcfg.jitter_scale, tcfg.jitter_scale).exp();
    let jittered = BBox::from_center(cx + jx, cy + jy, gt_s.w * js, gt_s.h * js);
    let geom = CropGeometry::around(&jittered, model.cfg.search_factor, b.image_size_search)?;

    let (rgb_template, _) = crop_and_resize(
        &seq.rgb[t].to_image(),
        &gt_t,
        model.cfg.template_factor,
        b.image_size_template,
    )?;
    let (tir_template, _) = crop_and_resize(
        &seq.tir[t].to_image(),
        &seq.gt_tir[t],
        model.cfg.template_factor,
        b.image_size_template,
    )?;
    let rgb_search = resample(&seq.rgb[s].to_image(), &geom);
    let tir_search = resample(&seq.tir[s].to_image(), &geom);
    let size = b.image_size_search as f64;
    let gt = geom.to_crop(&gt_s).clip(size, size);
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::invalid("ground truth left the search region"));
    }
    Ok(Sample {
        inputs: DualInputs {
            rgb_template,
            rgb_search,
            tir_template,
            tir_search,
        },
        gt,
    })
}

/// Loss and parameter gradients of one sample. Routes with two heads
/// average their losses.
pub fn sample_gradients(
    model: &Model,
    sample: &Sample,
    loss: &LossConfig,
) -> Result<(f64, IndexMap<String, Vec<f64>>)> {
    let mut g = Graph::new();
    let states = dual_forward(&mut g, model, &sample.inputs)?;
    let last = *states.last().expect("embedding state");
    let heads = apply_heads(&mut g, &model.params, head_route(model.variant()), &last)?;
    let weight = 1.0 / heads.len() as f64;
    let size = model.cfg.backbone.image_size_search as f64;
    let mut total = 0.0;
    let mut seeds = Vec::new();
    for (_, h) in &heads {
        let maps = HeadMaps::from_graph(&g, h);
        let out = compute_loss(&maps, &sample.gt, size, loss)?;
        total += weight * out.total;
        let scaled = |v: Vec<f64>| v.into_iter().map(|x| x * weight).collect::<Vec<_>>();
        seeds.push((h.score_logits, scaled(out.d_score_logits)));
        seeds.push((h.offset, scaled(out.d_offset)));
        seeds.push((h.size, scaled(out.d_size)));
    }
    g.backward_seeded(seeds)?;
    let grads = g
        .leaf_grads()
        .map(|(name, grad)| (name.to_string(), grad.to_vec()))
        .collect();
    Ok((total, grads))
}

/// One optimizer update from the mean gradient of `batch`. Per-sample
/// passes run in parallel; their gradients are summed in batch order.
pub fn train_step(model: &mut Model, opt: &mut AdamW, batch: &[Sample], loss: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty training batch"));
    }
    let per_sample: Vec<(f64, IndexMap<String, Vec<f64>>)> = batch
        .par_iter()
        .map(|s| sample_gradients(model, s, loss))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut mean: IndexMap<String, Vec<f64>> = IndexMap::new();
    let mut total = 0.0;
    for (l, grads) in per_sample {
        total += l;
        for (name, grad) in grads {
            let acc = mean.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
            for (a, v) in acc.iter_mut().zip(&grad) {
                *a += v;
            }
        }
    }
    for acc in mean.values_mut() {
        acc.iter_mut().for_each(|a| *a *= scale);
    }
    opt.update(&mut model.params, &mean)?;
    Ok(total * scale)
}

/// Runs `tcfg.steps` updates on samples drawn from `data`. Batch `k` is drawn
/// from its own seed, so the run is reproducible for any thread count.
pub fn train(
    model: &mut Model,
    data: &[SequenceRecord],
    tcfg: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() || data.iter().any(SequenceRecord::is_empty) {
        return Err(Error::invalid("training needs at least one non-empty sequence"));
    }
    if tcfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    tcfg.loss.validate()?;
    model.set_head_trainable(!tcfg.freeze_head);
    let mut opt = AdamW::new(tcfg.optimizer, &model.params);
    let mut losses = Vec::with_capacity(tcfg.steps);
    for step in 0..tcfg.steps {
        let mut rng = Rng::new(derive_seed(tcfg.seed, step as u64));
        let batch = (0..tcfg.batch_size)
            .map(|_| draw_sample(model, data, tcfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let l = train_step(model, &mut opt, &batch, &tcfg.loss)?;
        on_step(step, l);
        losses.push(l);
    }
    Ok(losses)
}
