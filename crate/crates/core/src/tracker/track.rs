//! Sequence-level inference: fixed templates from the first frame, search
//! region re-centered on the previous prediction every frame.

use std::path::Path;

use super::head::{decode_box, HeadMaps};
use super::model::{predict_maps, DualInputs, Model};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::synthdata::{crop_and_resize, resample, write_gt, CropGeometry, SequenceRecord};

/// Crop sizes and context factors used by a predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropSpec {
    pub template_factor: f64,
    pub template_size: usize,
    pub search_factor: f64,
    pub search_size: usize,
}

/// Where the current search crop sits.
#[derive(Clone, Copy, Debug)]
pub struct SearchContext<'a> {
    pub record: &'a SequenceRecord,
    pub frame: usize,
    pub geom: CropGeometry,
}

/// Anything that turns crops into head maps.
pub trait Predictor: Sync {
    fn crops(&self) -> CropSpec;
    fn maps(&self, ctx: &SearchContext<'_>, inputs: &DualInputs) -> Result<HeadMaps>;
}

impl Predictor for Model {
    fn crops(&self) -> CropSpec {
        CropSpec {
            template_factor: self.cfg.template_factor,
            template_size: self.cfg.backbone.image_size_template,
            search_factor: self.cfg.search_factor,
            search_size: self.cfg.backbone.image_size_search,
        }
    }

    fn maps(&self, _ctx: &SearchContext<'_>, inputs: &DualInputs) -> Result<HeadMaps> {
        predict_maps(self, inputs)
    }
}

/// One box per frame; frame 0 is the given initial box.
pub fn track_sequence(predictor: &dyn Predictor, record: &SequenceRecord) -> Result<Vec<BBox>> {
    record.validate()?;
    if record.is_empty() {
        return Err(Error::invalid(format!("sequence {} has no frames", record.name)));
    }
    let spec = predictor.crops();
    let (b0_rgb, b0_tir) = (record.gt_rgb[0], record.gt_tir[0]);
    let (rgb_template, _) = crop_and_resize(
        &record.rgb[0].to_image(),
        &b0_rgb,
        spec.template_factor,
        spec.template_size,
    )?;
    let (tir_template, _) = crop_and_resize(
        &record.tir[0].to_image(),
        &b0_tir,
        spec.template_factor,
        spec.template_size,
    )?;
    let mut out = vec![b0_rgb];
    let mut prev = b0_rgb;
    for f in 1..record.len() {
        let rgb = record.rgb[f].to_image();
        let geom = CropGeometry::around(&prev, spec.search_factor, spec.search_size)?;
        let inputs = DualInputs {
            rgb_template: rgb_template.clone(),
            rgb_search: resample(&rgb, &geom),
            tir_template: tir_template.clone(),
            tir_search: resample(&record.tir[f].to_image(), &geom),
        };
        let ctx = SearchContext { record, frame: f, geom };
        let maps = predictor.maps(&ctx, &inputs)?;
        let b = decode_box(&maps, &geom, rgb.width, rgb.height);
        out.push(b);
        prev = b;
    }
    Ok(out)
}

/// Tracks every sequence (in parallel) and writes `{name}.txt` per sequence.
pub fn track_dataset(predictor: &dyn Predictor, records: &[SequenceRecord], out_dir: &Path) -> Result<Vec<Vec<BBox>>> {
    use rayon::prelude::*;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let results: Vec<Vec<BBox>> = records
        .par_iter()
        .map(|r| track_sequence(predictor, r))
        .collect::<Result<_>>()?;
    for (r, boxes) in records.iter().zip(&results) {
        write_gt(&out_dir.join(format!("{}.txt", r.name)), boxes)?;
    }
    Ok(results)
}
