//! Synthetic RGB + thermal sequences whose dominant modality flips every
//! `switch_period` frames.
//!
//! A target rectangle random-walks over a sinusoidal background. Each
//! modality also carries its own distractor rectangles that look exactly like
//! the target in that modality, so only the location that is bright in both
//! modalities is unambiguous. The dominant modality renders everything at
//! full contrast; the auxiliary one at [`AUX_CONTRAST`] plus uniform noise.
//!
//! # Draw order
//!
//! One [`Rng`] seeded with `spec.seed`; every draw consumes one output.
//!
//! 1. target width, then height: `int_in(target_min, target_max)`
//! 2. target x in `[0, width - tw)`, then y in `[0, height - th)` (uniform)
//! 3. RGB background: 3 channel bases `uniform(0.15, 0.35)`, then for each of
//!    2 sinusoids `fx`, `fy` in `[0.5, 3)` and phase in `[0, 2π)`
//! 4. thermal background: 1 base, then the same 2 × 3 sinusoid draws
//! 5. RGB distractor positions (x then y each), then thermal distractors
//! 6. per frame `f`: if `f > 0`, target step `dx`, `dy` in
//!    `[-max_step, max_step)` followed by every distractor step in the same
//!    RGB-then-thermal order; then the auxiliary modality's noise, one draw
//!    per pixel per channel in row-major, channel-innermost order
//!
//! Positions that leave `[0, limit]` are reflected back.

mod dataset;
mod image;
pub mod pnm;

use std::fmt;
use std::str::FromStr;

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

pub use dataset::{read_dataset, read_gt, read_sequence, sequence_dir_name, write_dataset, write_gt, write_sequence};
pub use image::{crop_and_resize, resample, CropGeometry, Frame, Image};

/// Contrast of the auxiliary modality relative to the dominant one.
pub const AUX_CONTRAST: f64 = 0.35;
/// Peak amplitude of each background sinusoid.
pub const TEXTURE_AMPLITUDE: f64 = 0.06;
pub const TARGET_RGB: [f64; 3] = [0.95, 0.85, 0.30];
pub const TARGET_TIR: f64 = 0.95;
/// Low-illumination dimming of the RGB frames while thermal dominates.
pub const LOW_LIGHT_GAIN: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Attribute {
    /// Low illumination: RGB darkened while thermal dominates.
    LI,
    /// High illumination: RGB washed out while thermal dominates.
    HI,
    /// Abrupt illumination variation: dominance flips twice as often.
    AIV,
    /// No extra degradation.
    NO,
    /// Thermal crossover: one more thermal distractor.
    TC,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::LI,
        Attribute::HI,
        Attribute::AIV,
        Attribute::NO,
        Attribute::TC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::LI => "LI",
            Attribute::HI => "HI",
            Attribute::AIV => "AIV",
            Attribute::NO => "NO",
            Attribute::TC => "TC",
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown attribute `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Rgb,
    Tir,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Rgb => Modality::Tir,
            Modality::Tir => Modality::Rgb,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub target_min: usize,
    pub target_max: usize,
    /// Largest per-frame displacement along each axis, in pixels.
    pub max_step: f64,
    pub switch_period: usize,
    /// Auxiliary-modality noise level in `[0, 1]`.
    pub noise: f64,
    /// Distractors per modality.
    pub distractors: usize,
    pub attributes: Vec<Attribute>,
    pub seed: u64,
}

impl SequenceSpec {
    /// 64×64 frames, 8–14 px targets.
    pub fn benchmark(frames: usize, seed: u64) -> Self {
        Self {
            frames,
            width: 64,
            height: 64,
            target_min: 8,
            target_max: 14,
            max_step: 2.0,
            switch_period: 10,
            noise: 0.3,
            distractors: 2,
            attributes: vec![Attribute::NO],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("a sequence needs at least one frame"));
        }
        if self.switch_period == 0 {
            return Err(Error::invalid("switch period must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::invalid(format!("noise level {} outside [0, 1]", self.noise)));
        }
        if self.target_min == 0 || self.target_min > self.target_max {
            return Err(Error::invalid(format!(
                "bad target size range {}..={}",
                self.target_min, self.target_max
            )));
        }
        if self.target_max >= self.width.min(self.height) {
            return Err(Error::invalid(format!(
                "target size {} does not fit a {}x{} frame",
                self.target_max, self.width, self.height
            )));
        }
        if !(self.max_step >= 0.0 && self.max_step.is_finite()) {
            return Err(Error::invalid("max_step must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn has(&self, a: Attribute) -> bool {
        self.attributes.contains(&a)
    }

    pub fn effective_period(&self) -> usize {
        if self.has(Attribute::AIV) {
            (self.switch_period / 2).max(1)
        } else {
            self.switch_period
        }
    }

    /// Dominant modality of frame `f`: RGB in even blocks, thermal in odd.
    pub fn dominant_at(&self, f: usize) -> Modality {
        if (f / self.effective_period()).is_multiple_of(2) {
            Modality::Rgb
        } else {
            Modality::Tir
        }
    }
}

/// In-memory multi-modal sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRecord {
    pub name: String,
    pub rgb: Vec<Frame>,
    pub tir: Vec<Frame>,
    pub gt_rgb: Vec<BBox>,
    pub gt_tir: Vec<BBox>,
    pub attributes: Vec<Attribute>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rgb.len();
        if self.tir.len() != n || self.gt_rgb.len() != n || self.gt_tir.len() != n {
            return Err(Error::invalid(format!(
                "sequence {}: {} RGB frames, {} thermal frames, {} and {} boxes",
                self.name,
                n,
                self.tir.len(),
                self.gt_rgb.len(),
                self.gt_tir.len()
            )));
        }
        Ok(())
    }
}

struct Texture {
    base: Vec<f64>,
    waves: [(f64, f64, f64); 2],
}

impl Texture {
    fn draw(rng: &mut Rng, channels: usize) -> Self {
        let base = (0..channels).map(|_| rng.uniform(0.15, 0.35)).collect();
        let mut wave = || {
            let fx = rng.uniform(0.5, 3.0);
            let fy = rng.uniform(0.5, 3.0);
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            (fx, fy, phase)
        };
        let waves = [wave(), wave()];
        Self { base, waves }
    }

    fn render(&self, width: usize, height: usize) -> Vec<f64> {
        let c = self.base.len();
        let mut out = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 / width as f64;
                let v = y as f64 / height as f64;
                let t: f64 = self
                    .waves
                    .iter()
                    .map(|&(fx, fy, ph)| (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin())
                    .sum();
                for b in &self.base {
                    out.push(b + TEXTURE_AMPLITUDE * t);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
struct Walker {
    x: f64,
    y: f64,
}

fn reflect(v: f64, limit: f64) -> f64 {
    if limit <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * limit;
    let m = v.rem_euclid(period);
    let r = if m > limit { period - m } else { m };
    // keep the floor of the position strictly inside
    r.min(limit - 1e-9).max(0.0)
}

impl Walker {
    fn place(rng: &mut Rng, xmax: f64, ymax: f64) -> Self {
        Self {
            x: rng.uniform(0.0, xmax),
            y: rng.uniform(0.0, ymax),
        }
    }

    fn step(&mut self, rng: &mut Rng, max_step: f64, xmax: f64, ymax: f64) {
        let dx = rng.uniform(-max_step, max_step);
        let dy = rng.uniform(-max_step, max_step);
        self.x = reflect(self.x + dx, xmax);
        self.y = reflect(self.y + dy, ymax);
    }
}

#[allow(clippy::too_many_arguments)]
fn paint(
    buf: &mut [f64],
    width: usize,
    channels: usize,
    at: &Walker,
    w: usize,
    h: usize,
    color: &[f64],
    contrast: f64,
) {
    let (x0, y0) = (at.x.floor() as usize, at.y.floor() as usize);
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let px = &mut buf[(y * width + x) * channels..][..channels];
            for (p, c) in px.iter_mut().zip(color) {
                *p += contrast * (c - *p);
            }
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders `spec` following the documented draw order.
pub fn generate_sequence(spec: &SequenceSpec, name: impl Into<String>) -> Result<SequenceRecord> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let tw = rng.int_in(spec.target_min as i64, spec.target_max as i64) as usize;
    let th = rng.int_in(spec.target_min as i64, spec.target_max as i64) as usize;
    let (xmax, ymax) = ((w - tw) as f64, (h - th) as f64);
    let mut target = Walker::place(&mut rng, xmax, ymax);
    let tex_rgb = Texture::draw(&mut rng, 3);
    let tex_tir = Texture::draw(&mut rng, 1);
    let n_tir = spec.distractors + usize::from(spec.has(Attribute::TC));
    let mut clutter_rgb: Vec<Walker> = (0..spec.distractors)
        .map(|_| Walker::place(&mut rng, xmax, ymax))
        .collect();
    let mut clutter_tir: Vec<Walker> = (0..n_tir).map(|_| Walker::place(&mut rng, xmax, ymax)).collect();

    let bg_rgb = tex_rgb.render(w, h);
    let bg_tir = tex_tir.render(w, h);
    let mut record = SequenceRecord {
        name: name.into(),
        rgb: Vec::with_capacity(spec.frames),
        tir: Vec::with_capacity(spec.frames),
        gt_rgb: Vec::with_capacity(spec.frames),
        gt_tir: Vec::with_capacity(spec.frames),
        attributes: spec.attributes.clone(),
    };

    for f in 0..spec.frames {
        if f > 0 {
            target.step(&mut rng, spec.max_step, xmax, ymax);
            for c in clutter_rgb.iter_mut().chain(clutter_tir.iter_mut()) {
                c.step(&mut rng, spec.max_step, xmax, ymax);
            }
        }
        let dominant = spec.dominant_at(f);
        let contrast = |m: Modality| if m == dominant { 1.0 } else { AUX_CONTRAST };

        let mut rgb = bg_rgb.clone();
        for c in &clutter_rgb {
            paint(&mut rgb, w, 3, c, tw, th, &TARGET_RGB, contrast(Modality::Rgb));
        }
        paint(&mut rgb, w, 3, &target, tw, th, &TARGET_RGB, contrast(Modality::Rgb));
        if dominant == Modality::Tir {
            if spec.has(Attribute::LI) {
                rgb.iter_mut().for_each(|v| *v *= LOW_LIGHT_GAIN);
            }
            if spec.has(Attribute::HI) {
                rgb.iter_mut().for_each(|v| *v = 0.6 + 0.4 * *v);
            }
        }

        let mut tir = bg_tir.clone();
        for c in &clutter_tir {
            paint(&mut tir, w, 1, c, tw, th, &[TARGET_TIR], contrast(Modality::Tir));
        }
        paint(&mut tir, w, 1, &target, tw, th, &[TARGET_TIR], contrast(Modality::Tir));

        let aux = match dominant {
            Modality::Rgb => &mut tir,
            Modality::Tir => &mut rgb,
        };
        for v in aux.iter_mut() {
            *v += rng.uniform(-1.0, 1.0) * spec.noise * 0.5;
        }

        record.rgb.push(Frame {
            width: w,
            height: h,
            channels: 3,
            pixels: rgb.into_iter().map(quantize).collect(),
        });
        record.tir.push(Frame {
            width: w,
            height: h,
            channels: 1,
            pixels: tir.into_iter().map(quantize).collect(),
        });
        let gt = BBox::new(target.x.floor(), target.y.floor(), tw as f64, th as f64);
        record.gt_rgb.push(gt);
        record.gt_tir.push(gt);
    }
    Ok(record)
}

/// Attribute assigned to the `index`-th sequence of a generated benchmark.
pub fn benchmark_attribute(sequence_seed: u64) -> Attribute {
    Attribute::ALL[((sequence_seed >> 32) % Attribute::ALL.len() as u64) as usize]
}

/// Parameters shared by every sequence of a generated benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub sequences: usize,
    pub frames: usize,
    pub seed: u64,
    pub switch_period: usize,
    pub noise: f64,
}

/// Spec of sequence `i` of a benchmark: seed derived from the root seed and
/// one attribute drawn from that seed.
pub fn benchmark_sequence_spec(b: &BenchmarkSpec, i: usize) -> SequenceSpec {
    let seed = derive_seed(b.seed, i as u64);
    SequenceSpec {
        switch_period: b.switch_period,
        noise: b.noise,
        attributes: vec![benchmark_attribute(seed)],
        ..SequenceSpec::benchmark(b.frames, seed)
    }
}

/// Generates all sequences of `b`, in parallel, named `seq_NNNN`.
pub fn generate_benchmark(b: &BenchmarkSpec) -> Result<Vec<SequenceRecord>> {
    use rayon::prelude::*;
    (0..b.sequences)
        .into_par_iter()
        .map(|i| generate_sequence(&benchmark_sequence_spec(b, i), sequence_dir_name(i)))
        .collect()
}
