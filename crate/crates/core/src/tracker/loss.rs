//! Training objective on head maps: focal classification against a Gaussian
//! bump, GIoU and L1 on the box read at the ground-truth peak cell.
//!
//! Gradients are computed analytically with respect to the score logits,
//! the offset map and the (post-sigmoid) size map, and fed back into the
//! graph as seeds.

use serde::{Deserialize, Serialize};

use super::head::HeadMaps;
use crate::bbox::BBox;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_iou: f64,
    pub lambda_l1: f64,
    /// Focusing exponent on the prediction.
    pub focal_alpha: f64,
    /// Exponent of the Gaussian down-weighting of negatives.
    pub focal_beta: f64,
    /// Gaussian sigma as a fraction of the search side.
    pub sigma_frac: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_iou: 2.0,
            lambda_l1: 5.0,
            focal_alpha: 2.0,
            focal_beta: 4.0,
            sigma_frac: 1.0 / 12.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_iou, self.lambda_l1, self.focal_alpha, self.focal_beta];
        if all.iter().any(|v| !(*v >= 0.0)) || !(self.sigma_frac > 0.0) {
            return Err(Error::Config(
                "loss weights must be non-negative and sigma positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub cls: f64,
    pub iou: f64,
    pub l1: f64,
    pub d_score_logits: Vec<f64>,
    pub d_offset: Vec<f64>,
    pub d_size: Vec<f64>,
}

/// `log(sigmoid(z))` without overflow.
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Peak cell for `gt` (search-crop pixels) and the Gaussian target map.
pub fn gaussian_target(gt: &BBox, grid: usize, search_size: f64, sigma_frac: f64) -> (usize, Vec<f64>) {
    let stride = search_size / grid as f64;
    let (cx, cy) = gt.center();
    let cell_of = |v: f64| ((v / stride).floor().max(0.0) as usize).min(grid - 1);
    let peak = cell_of(cy) * grid + cell_of(cx);
    let sigma = sigma_frac * search_size;
    let mut y = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        for col in 0..grid {
            let dx = (col as f64 + 0.5) * stride - cx;
            let dy = (row as f64 + 0.5) * stride - cy;
            y.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    y[peak] = 1.0;
    (peak, y)
}

/// Value and gradient of `1 - GIoU(pred, gt)` with respect to the corners
/// `(x0, y0, x1, y1)` of `pred`.
pub fn giou_loss(pred: [f64; 4], gt: [f64; 4]) -> (f64, [f64; 4]) {
    let [x0, y0, x1, y1] = pred;
    let [gx0, gy0, gx1, gy1] = gt;
    let (pw, ph) = (x1 - x0, y1 - y0);
    let ap = pw * ph;
    let ag = (gx1 - gx0) * (gy1 - gy0);
    let iw = x1.min(gx1) - x0.max(gx0);
    let ih = y1.min(gy1) - y0.max(gy0);
    let (iw_c, ih_c) = (iw.max(0.0), ih.max(0.0));
    let inter = iw_c * ih_c;
    let union = ap + ag - inter;
    let cw = x1.max(gx1) - x0.min(gx0);
    let ch = y1.max(gy1) - y0.min(gy0);
    let c = cw * ch;
    let loss = 2.0 - inter / union - union / c;

    let d_inter = -1.0 / union - inter / (union * union) + 1.0 / c;
    let d_ap = inter / (union * union) - 1.0 / c;
    let d_c = union / (c * c);

    // partials of inter, ap, c with respect to each corner
    let overlap = iw > 0.0 && ih > 0.0;
    let di_dx0 = if overlap && x0 > gx0 { -ih_c } else { 0.0 };
    let di_dx1 = if overlap && x1 < gx1 { ih_c } else { 0.0 };
    let di_dy0 = if overlap && y0 > gy0 { -iw_c } else { 0.0 };
    let di_dy1 = if overlap && y1 < gy1 { iw_c } else { 0.0 };
    let dc_dx0 = if x0 < gx0 { -ch } else { 0.0 };
    let dc_dx1 = if x1 > gx1 { ch } else { 0.0 };
    let dc_dy0 = if y0 < gy0 { -cw } else { 0.0 };
    let dc_dy1 = if y1 > gy1 { cw } else { 0.0 };
    let grad = [
        d_inter * di_dx0 - d_ap * ph + d_c * dc_dx0,
        d_inter * di_dy0 - d_ap * pw + d_c * dc_dy0,
        d_inter * di_dx1 + d_ap * ph + d_c * dc_dx1,
        d_inter * di_dy1 + d_ap * pw + d_c * dc_dy1,
    ];
    (loss, grad)
}

/// Total loss of `maps` against `gt` given in search-crop pixels.
pub fn compute_loss(maps: &HeadMaps, gt: &BBox, search_size: f64, cfg: &LossConfig) -> Result<LossOutput> {
    if !(gt.w > 0.0 && gt.h > 0.0) {
        return Err(Error::invalid(format!("degenerate ground-truth box {gt:?}")));
    }
    let grid = maps.grid;
    let n = grid * grid;
    let (peak, target) = gaussian_target(gt, grid, search_size, cfg.sigma_frac);
    let (a, b) = (cfg.focal_alpha, cfg.focal_beta);

    // focal loss, normalized by the single positive
    let mut cls = 0.0;
    let mut d_score_logits = vec![0.0; n];
    for i in 0..n {
        let z = maps.score_logits[i];
        let log_p = log_sigmoid(z);
        let log_q = log_sigmoid(-z);
        let p = log_p.exp();
        let q = log_q.exp();
        if i == peak {
            cls -= q.powf(a) * log_p;
            d_score_logits[i] = a * p * q.powf(a) * log_p - q.powf(a + 1.0);
        } else {
            let w = (1.0 - target[i]).powf(b);
            cls -= w * p.powf(a) * log_q;
            d_score_logits[i] = -w * (a * p.powf(a) * q * log_q - p.powf(a + 1.0));
        }
    }

    // box at the ground-truth peak, normalized by the search side
    let row = (peak / grid) as f64;
    let col = (peak % grid) as f64;
    let g = grid as f64;
    let cx = (col + 0.5 + maps.offset[peak]) / g;
    let cy = (row + 0.5 + maps.offset[n + peak]) / g;
    let (w, h) = (maps.size[peak], maps.size[n + peak]);
    let pred = [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0];
    let gtc = gt.corners().map(|v| v / search_size);

    let (iou, d_iou) = giou_loss(pred, gtc);
    let l1 = pred.iter().zip(&gtc).map(|(p, q)| (p - q).abs()).sum::<f64>() / 4.0;
    let d_l1: Vec<f64> = pred
        .iter()
        .zip(&gtc)
        .map(|(p, q)| {
            if p > q {
                0.25
            } else if p < q {
                -0.25
            } else {
                0.0
            }
        })
        .collect();

    // chain through corners: x0 = cx - w/2, x1 = cx + w/2, same for y
    let dc: Vec<f64> = (0..4)
        .map(|k| cfg.lambda_iou * d_iou[k] + cfg.lambda_l1 * d_l1[k])
        .collect();
    let mut d_offset = vec![0.0; 2 * n];
    let mut d_size = vec![0.0; 2 * n];
    d_offset[peak] = (dc[0] + dc[2]) / g;
    d_offset[n + peak] = (dc[1] + dc[3]) / g;
    d_size[peak] = (dc[2] - dc[0]) / 2.0;
    d_size[n + peak] = (dc[3] - dc[1]) / 2.0;

    Ok(LossOutput {
        total: cls + cfg.lambda_iou * iou + cfg.lambda_l1 * l1,
        cls,
        iou,
        l1,
        d_score_logits,
        d_offset,
        d_size,
    })
}
