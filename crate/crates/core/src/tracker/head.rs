//! Convolutional box head over the search-token grid.
//!
//! `(S, d)` search tokens are laid out as a `(d, G, G)` feature map, passed
//! through a shared 3×3 conv + ReLU, then three 3×3 convs give the score
//! logits (1 channel), center offsets (2, raw) and normalized sizes
//! (2, sigmoid).

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph, NodeId};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::params::{gaussian, ParamStore};
use crate::rng::Rng;
use crate::synthdata::CropGeometry;
use crate::tensor::Tensor;

/// Initial score bias: sigmoid(-2.19) ≈ 0.1.
pub const SCORE_BIAS_INIT: f64 = -2.19;
/// Initial size bias: sigmoid(-1.1) ≈ 0.25 of the search side.
pub const SIZE_BIAS_INIT: f64 = -1.1;
const OUT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Channels of the shared conv.
    pub hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden: 32 }
    }
}

pub fn init_head(cfg: &HeadConfig, d_t: usize, rng: &mut Rng) -> Result<ParamStore> {
    if cfg.hidden == 0 {
        return Err(Error::Config("head hidden width must be positive".into()));
    }
    let h = cfg.hidden;
    let mut p = ParamStore::new();
    let he = (2.0 / (d_t * 9) as f64).sqrt();
    p.insert("head.conv.w", gaussian(rng, &[h, d_t, 3, 3], he).trainable())?;
    p.insert("head.conv.b", Tensor::zeros([h]).trainable())?;
    p.insert("head.score.w", gaussian(rng, &[1, h, 3, 3], OUT_STD).trainable())?;
    p.insert("head.score.b", Tensor::filled([1], SCORE_BIAS_INIT).trainable())?;
    p.insert("head.offset.w", gaussian(rng, &[2, h, 3, 3], OUT_STD).trainable())?;
    p.insert("head.offset.b", Tensor::zeros([2]).trainable())?;
    p.insert("head.size.w", gaussian(rng, &[2, h, 3, 3], OUT_STD).trainable())?;
    p.insert("head.size.b", Tensor::filled([2], SIZE_BIAS_INIT).trainable())?;
    Ok(p)
}

/// Graph nodes of one head application.
#[derive(Clone, Copy, Debug)]
pub struct HeadNodes {
    pub input: NodeId,
    pub score_logits: NodeId,
    pub offset: NodeId,
    pub size: NodeId,
}

/// Runs the head on `(G·G, d)` search tokens.
pub fn head_forward(g: &mut Graph, params: &ParamStore, tokens: NodeId) -> Result<HeadNodes> {
    let shape = g.shape(tokens).to_vec();
    let grid = (shape[0] as f64).sqrt().round() as usize;
    if shape.len() != 2 || grid * grid != shape[0] {
        return Err(Error::Shape {
            op: "head",
            shapes: vec![shape],
        });
    }
    let d = shape[1];
    let t = g.transpose(tokens)?;
    let fmap = g.reshape(t, [d, grid, grid])?;
    let bind = |g: &mut Graph, n: &str| -> Result<(NodeId, NodeId)> {
        Ok((
            params.bind(g, &format!("head.{n}.w"))?,
            params.bind(g, &format!("head.{n}.b"))?,
        ))
    };
    let (w, b) = bind(g, "conv")?;
    let h = g.conv2d(fmap, w, Some(b), 1, 1)?;
    let h = g.relu(h)?;
    let (w, b) = bind(g, "score")?;
    let score_logits = g.conv2d(h, w, Some(b), 1, 1)?;
    let (w, b) = bind(g, "offset")?;
    let offset = g.conv2d(h, w, Some(b), 1, 1)?;
    let (w, b) = bind(g, "size")?;
    let size_logits = g.conv2d(h, w, Some(b), 1, 1)?;
    let size = g.sigmoid(size_logits)?;
    Ok(HeadNodes {
        input: tokens,
        score_logits,
        offset,
        size,
    })
}

/// Plain head outputs, channel-major over a `grid × grid` map.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadMaps {
    pub grid: usize,
    /// Pre-sigmoid scores, `grid²`.
    pub score_logits: Vec<f64>,
    /// `x` offsets then `y` offsets, in cells.
    pub offset: Vec<f64>,
    /// Widths then heights, as fractions of the search side.
    pub size: Vec<f64>,
}

impl HeadMaps {
    pub fn from_graph(g: &Graph, nodes: &HeadNodes) -> Self {
        let score_logits = g.value(nodes.score_logits).data().to_vec();
        let grid = g.shape(nodes.score_logits)[1];
        Self {
            grid,
            score_logits,
            offset: g.value(nodes.offset).data().to_vec(),
            size: g.value(nodes.size).data().to_vec(),
        }
    }

    pub fn score(&self, cell: usize) -> f64 {
        sigmoid(self.score_logits[cell])
    }

    /// Peak cell, lowest row-major index on ties.
    pub fn peak(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.score_logits.iter().enumerate() {
            if v > self.score_logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_score(&self) -> f64 {
        self.score(self.peak())
    }

    /// Box at `cell` in search-crop pixels.
    pub fn box_at(&self, cell: usize, search_size: f64) -> BBox {
        let n = self.grid * self.grid;
        let stride = search_size / self.grid as f64;
        let (row, col) = (cell / self.grid, cell % self.grid);
        let cx = (col as f64 + 0.5 + self.offset[cell]) * stride;
        let cy = (row as f64 + 0.5 + self.offset[n + cell]) * stride;
        BBox::from_center(cx, cy, self.size[cell] * search_size, self.size[n + cell] * search_size)
    }
}

/// Smallest side a decoded box may have, in frame pixels.
pub const MIN_BOX_SIDE: f64 = 1.0;

/// Box at the score peak, mapped from the search crop into the frame and
/// clipped to it.
pub fn decode_box(maps: &HeadMaps, geom: &CropGeometry, frame_w: usize, frame_h: usize) -> BBox {
    let crop_box = maps.box_at(maps.peak(), geom.out_size as f64);
    let b = geom.to_frame(&crop_box).clip(frame_w as f64, frame_h as f64);
    ensure_min_size(b, frame_w as f64, frame_h as f64)
}

fn ensure_min_size(b: BBox, fw: f64, fh: f64) -> BBox {
    let grow = |lo: f64, len: f64, limit: f64| -> (f64, f64) {
        if len >= MIN_BOX_SIDE {
            return (lo, len);
        }
        let side = MIN_BOX_SIDE.min(limit);
        let start = (lo + len / 2.0 - side / 2.0).clamp(0.0, limit - side);
        (start, side)
    };
    let (x, w) = grow(b.x, b.w, fw);
    let (y, h) = grow(b.y, b.h, fh);
    BBox::new(x, y, w, h)
}
