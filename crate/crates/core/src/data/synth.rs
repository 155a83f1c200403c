//! Procedural stand-in for labelled nucleus crops.
//!
//! Each image is a textured eosin-pink background with one nucleus at the
//! center whose outline encodes the shape class (axis ratio, or a lobed
//! boundary for irregular nuclei) and whose decorations encode the
//! attributes. Labels are exact by construction and every image is a pure
//! function of `(seed, index)`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{ensure, Error, Result};
use crate::seed::{rng_for, stream};

use super::image::save_ppm;
use super::labels::{LabelVector, ShapeClass, N_ATTRIBUTES, N_SHAPES};
use super::manifest::{DatasetManifest, ManifestRecord};

/// Positive counts per shape class in the reference 2078-image set.
pub const REFERENCE_SHAPE_COUNTS: [usize; N_SHAPES] = [325, 104, 296, 333, 475, 545];
/// Positive counts for the nine nucleus attributes in the same set.
pub const REFERENCE_ATTR_COUNTS: [usize; N_ATTRIBUTES - 1] = [78, 51, 77, 14, 505, 105, 43, 53, 20];
pub const REFERENCE_TOTAL: usize = 2078;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub count: usize,
    pub side: usize,
    /// Proportion of each shape class (sums to 1).
    pub shape_mix: [f64; N_SHAPES],
    /// Fraction of nucleus-bearing images carrying each of the nine
    /// attributes other than "no nucleus".
    pub attribute_rates: [f64; N_ATTRIBUTES - 1],
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let nucleus = (REFERENCE_TOTAL - REFERENCE_SHAPE_COUNTS[5]) as f64;
        SynthParams {
            seed: 0,
            count: REFERENCE_TOTAL,
            side: 50,
            shape_mix: REFERENCE_SHAPE_COUNTS.map(|c| c as f64 / REFERENCE_TOTAL as f64),
            attribute_rates: REFERENCE_ATTR_COUNTS.map(|c| c as f64 / nucleus),
            noise: 0.03,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.count > 0, Error::Config("synthetic count must be positive".into()));
        ensure!(
            self.side >= 32,
            Error::Config(format!("image side {} is below 32", self.side))
        );
        ensure!(
            self.shape_mix.iter().all(|&p| p >= 0.0)
                && (self.shape_mix.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            Error::Config(format!("shape proportions {:?} must sum to 1", self.shape_mix))
        );
        ensure!(
            self.attribute_rates.iter().all(|r| (0.0..=1.0).contains(r)),
            Error::Config("attribute rates must lie in [0, 1]".into())
        );
        ensure!(
            (0.0..=0.5).contains(&self.noise),
            Error::Config(format!("noise {} outside [0, 0.5]", self.noise))
        );
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` items.
pub fn allocate(total: usize, proportions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Labels for every image, before rendering.
pub fn generate_labels(params: &SynthParams) -> Result<Vec<LabelVector>> {
    params.validate()?;
    let counts = allocate(params.count, &params.shape_mix);
    let mut shapes: Vec<ShapeClass> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat(ShapeClass::ALL[c]).take(n))
        .collect();
    shapes.shuffle(&mut rng_for(params.seed, &[stream::SYNTH_SHAPES]));
    let mut labels: Vec<LabelVector> = shapes
        .into_iter()
        .map(|shape| {
            if shape == ShapeClass::NoNucleus {
                LabelVector::no_nucleus()
            } else {
                LabelVector {
                    attributes: [false; N_ATTRIBUTES],
                    shape,
                }
            }
        })
        .collect();
    let bearing: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i].shape != ShapeClass::NoNucleus)
        .collect();
    for (a, &rate) in params.attribute_rates.iter().enumerate() {
        let k = (rate * bearing.len() as f64).round() as usize;
        let mut pool = bearing.clone();
        pool.shuffle(&mut rng_for(params.seed, &[stream::SYNTH_ATTRS, a as u64]));
        for &i in &pool[..k.min(pool.len())] {
            labels[i].attributes[a] = true;
        }
    }
    debug_assert!(labels.iter().all(|l| l.validate().is_ok()));
    Ok(labels)
}

/// An ellipse with an optional lobed boundary `1 + sum amp_k sin(freq_k phi + phase_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    pub lobes: Vec<(f64, f64, f64)>,
}

impl Blob {
    fn ellipse(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Self {
        Blob {
            cx,
            cy,
            a,
            b,
            theta,
            lobes: Vec::new(),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.theta.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        let r2 = u * u + v * v;
        if self.lobes.is_empty() {
            return r2 <= 1.0;
        }
        let phi = v.atan2(u);
        let scale = 1.0 + self.lobes.iter().map(|&(amp, f, ph)| amp * (f * phi + ph).sin()).sum::<f64>();
        r2 <= scale * scale
    }

    fn reach(&self) -> f64 {
        self.a.max(self.b) * (1.0 + self.lobes.iter().map(|l| l.0.abs()).sum::<f64>()) + 1.0
    }

    fn grown(&self, by: f64) -> Self {
        Blob {
            a: self.a + by,
            b: self.b + by,
            ..self.clone()
        }
    }

    /// Fractional pixel coverage from 4x4 supersampling over a `side` grid.
    pub fn coverage(&self, side: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; side * side];
        let r = self.reach();
        let y0 = (self.cy - r).floor().max(0.0) as usize;
        let y1 = ((self.cy + r).ceil() as usize).min(side);
        let x0 = (self.cx - r).floor().max(0.0) as usize;
        let x1 = ((self.cx + r).ceil() as usize).min(side);
        for py in y0..y1 {
            for px in x0..x1 {
                let mut hits = 0;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let x = px as f64 + (sx as f64 + 0.5) / 4.0;
                        let y = py as f64 + (sy as f64 + 0.5) / 4.0;
                        if self.contains(x, y) {
                            hits += 1;
                        }
                    }
                }
                out[py * side + px] = hits as f32 / 16.0;
            }
        }
        out
    }
}

/// A rendered sample: interleaved RGB bytes plus the primary nucleus
/// coverage mask (all zero for "no nucleus").
#[derive(Clone, Debug)]
pub struct SynthImage {
    pub labels: LabelVector,
    pub rgb: Vec<u8>,
    pub nucleus_mask: Vec<f32>,
    /// Axis ratio drawn for the primary nucleus.
    pub axis_ratio: Option<f64>,
}

type Rgb = [f64; 3];

const BACKGROUND: Rgb = [0.93, 0.72, 0.82];
const NUCLEUS_T: Rgb = [0.50, 0.42, 0.74];
const HYPER_T: Rgb = [0.24, 0.15, 0.44];
const NEIGHBOR_T: Rgb = [0.56, 0.46, 0.78];
const HALO: Rgb = [0.99, 0.97, 0.99];
const CYTOPLASM: Rgb = [0.99, 0.88, 0.94];
const NUCLEOLUS: Rgb = [0.42, 0.02, 0.16];
const GROOVE: Rgb = [0.86, 0.76, 0.90];
const CHROMATIN: Rgb = [0.10, 0.04, 0.18];

struct Canvas {
    side: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    /// Alpha-blend `color` over the canvas with per-pixel `coverage`.
    fn paint(&mut self, coverage: &[f32], color: Rgb) {
        for (p, &c) in self.px.iter_mut().zip(coverage) {
            if c > 0.0 {
                let c = c as f64;
                for k in 0..3 {
                    p[k] = p[k] * (1.0 - c) + color[k] * c;
                }
            }
        }
    }

    /// Multiplicative absorption; overlapping stains compound.
    fn stain(&mut self, coverage: &[f32], transmission: Rgb) {
        for (p, &c) in self.px.iter_mut().zip(coverage) {
            if c > 0.0 {
                let c = c as f64;
                for k in 0..3 {
                    p[k] *= 1.0 - c * (1.0 - transmission[k]);
                }
            }
        }
    }
}

fn shape_geometry(shape: ShapeClass, rng: &mut ChaCha8Rng) -> Option<(f64, f64, bool)> {
    // (semi-major, axis ratio, lobed); ratio bands keep clear of class edges
    let (a_lo, a_hi, r_lo, r_hi, lobed) = match shape {
        ShapeClass::Round => (8.0, 10.0, 0.96, 1.0, false),
        ShapeClass::CloseRound => (8.0, 10.0, 0.76, 0.84, false),
        ShapeClass::Oval => (8.0, 10.0, 0.52, 0.62, false),
        ShapeClass::Elongated => (10.5, 12.5, 0.24, 0.34, false),
        ShapeClass::Irregular => (8.0, 9.5, 0.8, 1.0, true),
        ShapeClass::NoNucleus => return None,
    };
    Some((rng.random_range(a_lo..a_hi), rng.random_range(r_lo..=r_hi), lobed))
}

fn random_direction(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let t = rng.random_range(0.0..std::f64::consts::TAU);
    (t.cos(), t.sin())
}

/// Renders image `index` with the given labels.
pub fn render(params: &SynthParams, index: usize, labels: &LabelVector) -> SynthImage {
    let side = params.side;
    let mut rng = rng_for(params.seed, &[stream::SYNTH_IMAGE, index as u64]);
    let center = side as f64 / 2.0;

    // Background with low-frequency texture.
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let (dx, dy) = random_direction(&mut rng);
            let period = rng.random_range(8.0..20.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (dx / period, dy / period, phase, rng.random_range(0.015..0.035))
        })
        .collect();
    let mut canvas = Canvas {
        side,
        px: (0..side * side)
            .map(|i| {
                let (x, y) = ((i % side) as f64, (i / side) as f64);
                let shade: f64 = waves
                    .iter()
                    .map(|&(fx, fy, ph, amp)| amp * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
                    .sum();
                BACKGROUND.map(|c| c * (1.0 + shade))
            })
            .collect(),
    };

    let geometry = shape_geometry(labels.shape, &mut rng);
    let mut nucleus_mask = vec![0.0f32; side * side];
    let mut axis_ratio = None;
    if let Some((a, ratio, lobed)) = geometry {
        axis_ratio = Some(ratio);
        let cx = center + rng.random_range(-1.0..1.0);
        let cy = center + rng.random_range(-1.0..1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let mut nucleus = Blob::ellipse(cx, cy, a, a * ratio, theta);
        if lobed {
            let mut freqs = [3.0, 4.0, 5.0, 6.0, 7.0];
            freqs.shuffle(&mut rng);
            nucleus.lobes = freqs[..3]
                .iter()
                .map(|&f| {
                    (
                        rng.random_range(0.14..0.2),
                        f,
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
        }
        let has = |k: usize| labels.attributes[k];
        let (ux, uy) = (theta.cos(), theta.sin());

        // 1: gemistocyte, an enlarged pale cell body off to one side
        if has(1) {
            let (dx, dy) = random_direction(&mut rng);
            let off = rng.random_range(3.0..5.0);
            let body = Blob::ellipse(
                cx + dx * off,
                cy + dy * off,
                a + rng.random_range(6.0..8.0),
                a * 0.8 + rng.random_range(5.0..7.0),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            canvas.paint(&body.coverage(side), CYTOPLASM);
        }
        // 0: perinuclear halo, a bright rim around the nucleus
        if has(0) {
            let ring = nucleus.grown(rng.random_range(2.5..3.5)).coverage(side);
            canvas.paint(&ring, HALO);
        }
        // 5: overlapping neighbour, 6: second nucleus beside the first
        if has(5) {
            let (dx, dy) = random_direction(&mut rng);
            let a2 = rng.random_range(6.0..9.0);
            let dist = 0.6 * (a + a2);
            let other = Blob::ellipse(
                cx + dx * dist,
                cy + dy * dist,
                a2,
                a2 * rng.random_range(0.6..1.0),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            canvas.stain(&other.coverage(side), NEIGHBOR_T);
        }
        if has(6) {
            // along the minor axis so the twin stays inside a 32-pixel crop
            let (dx, dy) = if rng.random_bool(0.5) { (-uy, ux) } else { (uy, -ux) };
            let a2 = a * rng.random_range(0.5..0.65);
            let dist = a * ratio + a2 + 0.5;
            let twin = Blob::ellipse(
                cx + dx * dist,
                cy + dy * dist,
                a2,
                a2 * rng.random_range(0.8..1.0),
                rng.random_range(0.0..std::f64::consts::PI),
            );
            canvas.stain(&twin.coverage(side), if has(4) { HYPER_T } else { NUCLEUS_T });
        }

        nucleus_mask = nucleus.coverage(side);
        canvas.stain(&nucleus_mask, if has(4) { HYPER_T } else { NUCLEUS_T });

        // 2: nucleoli, one or two dark dots inside
        if has(2) {
            for _ in 0..rng.random_range(1..=2) {
                let (dx, dy) = random_direction(&mut rng);
                let r = rng.random_range(0.0..0.35) * a * ratio;
                let dot = Blob::ellipse(cx + dx * r, cy + dy * r, 1.5, 1.5, 0.0);
                canvas.paint(&dot.coverage(side), NUCLEOLUS);
            }
        }
        // 3: grooved, a pale crease along the major axis
        if has(3) {
            let half = 0.85 * a;
            let crease = Blob::ellipse(cx, cy, half, 0.8, theta);
            canvas.paint(&crease.coverage(side), GROOVE);
        }
        // 7: mitosis, a condensed chromatin plate across the minor axis
        if has(7) {
            let plate = Blob::ellipse(cx, cy, 1.6, (a * ratio).max(3.0) * 0.9, theta);
            canvas.paint(&plate.coverage(side), CHROMATIN);
        }
        // 8: apoptosis, scattered dark fragments
        if has(8) {
            for _ in 0..rng.random_range(4..=6) {
                let along = rng.random_range(-0.7..0.7) * a;
                let across = rng.random_range(-0.6..0.6) * a * ratio;
                let frag = Blob::ellipse(
                    cx + ux * along - uy * across,
                    cy + uy * along + ux * across,
                    1.3,
                    1.3,
                    0.0,
                );
                canvas.paint(&frag.coverage(side), CHROMATIN);
            }
        }
    }

    let noise = Normal::new(0.0, params.noise.max(1e-12)).expect("valid sigma");
    let mut rgb = Vec::with_capacity(side * side * 3);
    for p in &canvas.px {
        for &v in p {
            let v = if params.noise > 0.0 { v + noise.sample(&mut rng) } else { v };
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    debug_assert_eq!(canvas.side * canvas.side * 3, rgb.len());
    SynthImage {
        labels: *labels,
        rgb,
        nucleus_mask,
        axis_ratio,
    }
}

/// Minor/major axis ratio from the second moments of a coverage mask.
pub fn measured_axis_ratio(mask: &[f32], side: usize) -> Option<f64> {
    let mut m = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, &w) in mask.iter().enumerate() {
        let w = w as f64;
        m += w;
        sx += w * (i % side) as f64;
        sy += w * (i / side) as f64;
    }
    if m <= 0.0 {
        return None;
    }
    let (mx, my) = (sx / m, sy / m);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for (i, &w) in mask.iter().enumerate() {
        let w = w as f64;
        let (dx, dy) = ((i % side) as f64 - mx, (i / side) as f64 - my);
        cxx += w * dx * dx;
        cyy += w * dy * dy;
        cxy += w * dx * dy;
    }
    let (cxx, cyy, cxy) = (cxx / m, cyy / m, cxy / m);
    let tr = cxx + cyy;
    let disc = ((cxx - cyy).powi(2) / 4.0 + cxy * cxy).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    Some((l2.max(0.0) / l1).sqrt())
}

/// Shape class implied by an axis ratio, `None` in the unassigned band.
pub fn classify_axis_ratio(ratio: f64) -> Option<ShapeClass> {
    match ratio {
        r if r >= 0.9 => Some(ShapeClass::Round),
        r if r >= 0.69 => Some(ShapeClass::CloseRound),
        r if r >= 0.45 => Some(ShapeClass::Oval),
        r if r < 0.42 => Some(ShapeClass::Elongated),
        _ => None,
    }
}

/// Writes `count` images under `out_dir/img/` and `out_dir/manifest.csv`.
pub fn gen_synthetic(params: &SynthParams, out_dir: &Path) -> Result<DatasetManifest> {
    let labels = generate_labels(params)?;
    let img_dir = out_dir.join("img");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let width = params.count.saturating_sub(1).to_string().len().max(5);
    let mut records = Vec::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        let img = render(params, i, l);
        let rel = format!("img/{i:0width$}.ppm");
        save_ppm(&out_dir.join(&rel), params.side, params.side, &img.rgb)?;
        records.push(ManifestRecord {
            path: rel,
            labels: *l,
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        records,
        features: None,
    };
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels::NO_NUCLEUS_ATTR;

    #[test]
    fn allocation_preserves_total() {
        let c = allocate(2078, &SynthParams::default().shape_mix);
        assert_eq!(c, REFERENCE_SHAPE_COUNTS.to_vec());
        let c = allocate(2000, &SynthParams::default().shape_mix);
        assert_eq!(c.iter().sum::<usize>(), 2000);
    }

    #[test]
    fn labels_follow_the_mix() {
        let params = SynthParams {
            count: 500,
            ..Default::default()
        };
        let labels = generate_labels(&params).unwrap();
        let expected = allocate(500, &params.shape_mix);
        for (c, &n) in expected.iter().enumerate() {
            assert_eq!(labels.iter().filter(|l| l.shape.index() == c).count(), n);
        }
        assert!(labels.iter().all(|l| l.validate().is_ok()));
    }

    #[test]
    fn all_no_nucleus_mix() {
        let mut mix = [0.0; N_SHAPES];
        mix[5] = 1.0;
        let params = SynthParams {
            count: 20,
            shape_mix: mix,
            ..Default::default()
        };
        for l in generate_labels(&params).unwrap() {
            assert_eq!(l.shape, ShapeClass::NoNucleus);
            assert!(l.attributes[NO_NUCLEUS_ATTR]);
        }
    }

    #[test]
    fn rendering_is_pure() {
        let params = SynthParams {
            seed: 11,
            count: 4,
            ..Default::default()
        };
        let mut l = LabelVector {
            attributes: [true; N_ATTRIBUTES],
            shape: ShapeClass::Irregular,
        };
        l.attributes[NO_NUCLEUS_ATTR] = false;
        let a = render(&params, 3, &l);
        let b = render(&params, 3, &l);
        assert_eq!(a.rgb, b.rgb);
        assert_ne!(a.rgb, render(&params, 2, &l).rgb);
    }

    #[test]
    fn measured_ratio_of_rendered_ellipses() {
        for (ratio, class) in [(0.95, ShapeClass::Round), (0.3, ShapeClass::Elongated)] {
            let blob = Blob::ellipse(25.0, 25.0, 11.0, 11.0 * ratio, 0.4);
            let r = measured_axis_ratio(&blob.coverage(50), 50).unwrap();
            assert_eq!(classify_axis_ratio(r), Some(class), "{ratio} measured {r}");
        }
    }

    #[test]
    fn invalid_mix_is_rejected() {
        let params = SynthParams {
            shape_mix: [0.5; N_SHAPES],
            ..Default::default()
        };
        assert!(params.validate().is_err());
    }
}
