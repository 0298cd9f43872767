//! Slices and the image operations applied to them.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::d4::{self, OrientationLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    C0,
    #[serde(rename = "LGE")]
    Lge,
    T2,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::C0, Modality::Lge, Modality::T2];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::C0 => "C0",
            Modality::Lge => "LGE",
            Modality::T2 => "T2",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C0" => Ok(Modality::C0),
            "LGE" => Ok(Modality::Lge),
            "T2" => Ok(Modality::T2),
            other => Err(Error::Argument(format!(
                "unknown modality `{other}` (expected C0, LGE or T2)"
            ))),
        }
    }
}

/// A 2D image with `channels × height × width` samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pixels: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
    pub patient_id: String,
    pub modality: Modality,
    pub true_orientation: Option<OrientationLabel>,
}

impl Slice {
    pub fn new(
        pixels: Vec<f32>,
        channels: usize,
        height: usize,
        width: usize,
        patient_id: impl Into<String>,
        modality: Modality,
    ) -> Result<Self> {
        if height < 2 || width < 2 || channels < 1 {
            return Err(Error::Argument(format!(
                "slice dims {channels}x{height}x{width} below minimum 1x2x2"
            )));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::shape(
                "slice pixels",
                channels * height * width,
                pixels.len(),
            ));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite pixel at index {i}")));
        }
        Ok(Slice {
            pixels,
            channels,
            height,
            width,
            patient_id: patient_id.into(),
            modality,
            true_orientation: None,
        })
    }

    /// Single-channel slice from rows of values.
    pub fn from_rows(rows: &[Vec<f32>], patient_id: &str, modality: Modality) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Argument("ragged rows".into()));
        }
        let pixels = rows.iter().flatten().copied().collect();
        Slice::new(pixels, 1, height, width, patient_id, modality)
    }

    pub fn with_orientation(mut self, label: OrientationLabel) -> Self {
        self.true_orientation = Some(label);
        self
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Rows of channel `c`, handy for small fixtures.
    pub fn rows(&self, c: usize) -> Vec<Vec<f32>> {
        self.channel(c)
            .chunks(self.width)
            .map(<[f32]>::to_vec)
            .collect()
    }

    fn with_pixels(&self, pixels: Vec<f32>, height: usize, width: usize) -> Slice {
        debug_assert_eq!(pixels.len(), self.channels * height * width);
        Slice {
            pixels,
            channels: self.channels,
            height,
            width,
            patient_id: self.patient_id.clone(),
            modality: self.modality,
            true_orientation: self.true_orientation,
        }
    }

    /// Copies channel 0 into `channels` channels; no-op when already multi-channel.
    pub fn replicate_channels(&self, channels: usize) -> Slice {
        if self.channels == channels || self.channels != 1 {
            return self.clone();
        }
        let mut pixels = Vec::with_capacity(self.pixels.len() * channels);
        for _ in 0..channels {
            pixels.extend_from_slice(&self.pixels);
        }
        let mut out = self.with_pixels(pixels, self.height, self.width);
        out.channels = channels;
        out
    }
}

/// Returns the slice as seen after orientation `label` is applied. The
/// output's `true_orientation` is `compose(label, t)` when the input's is `t`.
pub fn apply_orientation(slice: &Slice, label: OrientationLabel) -> Slice {
    let (sx, sy) = (slice.width, slice.height);
    let (out_w, out_h) = d4::output_dims(label, sx, sy);
    let mut pixels = Vec::with_capacity(slice.pixels.len());
    for c in 0..slice.channels {
        let plane = slice.channel(c);
        for y in 0..out_h {
            for x in 0..out_w {
                let (src_x, src_y) = d4::map_unchecked(label, x, y, sx, sy);
                pixels.push(plane[src_y * sx + src_x]);
            }
        }
    }
    let mut out = slice.with_pixels(pixels, out_h, out_w);
    out.true_orientation = slice
        .true_orientation
        .map(|t| d4::tables().compose(label, t));
    out
}

/// Corner-aligned bilinear resampling.
pub fn resize_bilinear(slice: &Slice, out_h: usize, out_w: usize) -> Result<Slice> {
    if out_h < 2 || out_w < 2 {
        return Err(Error::Argument(format!(
            "resize target {out_h}x{out_w} below minimum 2x2"
        )));
    }
    if out_h == slice.height && out_w == slice.width {
        return Ok(slice.clone());
    }
    let (h, w) = (slice.height, slice.width);
    let scale_y = (h - 1) as f64 / (out_h - 1) as f64;
    let scale_x = (w - 1) as f64 / (out_w - 1) as f64;

    // (lower index, upper index, fraction) per output column/row
    let taps = |n_out: usize, n_in: usize, scale: f64| -> Vec<(usize, usize, f32)> {
        (0..n_out)
            .map(|o| {
                let pos = o as f64 * scale;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let xs = taps(out_w, w, scale_x);
    let ys = taps(out_h, h, scale_y);

    let mut pixels = Vec::with_capacity(slice.channels * out_h * out_w);
    for c in 0..slice.channels {
        let plane = slice.channel(c);
        for &(y0, y1, ty) in &ys {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, tx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * tx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * tx;
                pixels.push(top + (bottom - top) * ty);
            }
        }
    }
    Ok(slice.with_pixels(pixels, out_h, out_w))
}

/// Center crop along a dimension that is too large, symmetric pad with `fill`
/// along one that is too small. An odd remainder goes to the bottom/right.
pub fn crop_or_pad(slice: &Slice, out_h: usize, out_w: usize, fill: f32) -> Result<Slice> {
    if out_h < 2 || out_w < 2 {
        return Err(Error::Argument(format!(
            "crop/pad target {out_h}x{out_w} below minimum 2x2"
        )));
    }
    if out_h == slice.height && out_w == slice.width {
        return Ok(slice.clone());
    }
    // signed offset of output origin inside the source
    let offset = |n_in: usize, n_out: usize| -> isize {
        if n_out <= n_in {
            ((n_in - n_out) / 2) as isize
        } else {
            -(((n_out - n_in) / 2) as isize)
        }
    };
    let oy = offset(slice.height, out_h);
    let ox = offset(slice.width, out_w);
    let mut pixels = vec![fill; slice.channels * out_h * out_w];
    for c in 0..slice.channels {
        let plane = slice.channel(c);
        for y in 0..out_h {
            let sy = y as isize + oy;
            if sy < 0 || sy >= slice.height as isize {
                continue;
            }
            for x in 0..out_w {
                let sx = x as isize + ox;
                if sx < 0 || sx >= slice.width as isize {
                    continue;
                }
                pixels[(c * out_h + y) * out_w + x] =
                    plane[sy as usize * slice.width + sx as usize];
            }
        }
    }
    Ok(slice.with_pixels(pixels, out_h, out_w))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceRef {
    pub patient_id: String,
    pub modality: Modality,
}

/// A slice after per-channel z-scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSlice {
    pixels: Vec<f32>,
    channels: usize,
    height: usize,
    width: usize,
    pub source: SliceRef,
}

impl NormalizedSlice {
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

/// Channels whose standard deviation falls below this are treated as constant.
const CONSTANT_CHANNEL_STD: f64 = 1e-6;

pub fn normalize(slice: &Slice) -> NormalizedSlice {
    let n = slice.height * slice.width;
    let mut pixels = Vec::with_capacity(slice.pixels.len());
    for c in 0..slice.channels {
        let plane = slice.channel(c);
        let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = plane
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        if std < CONSTANT_CHANNEL_STD {
            pixels.extend(std::iter::repeat_n(0.0, n));
        } else {
            pixels.extend(plane.iter().map(|&v| ((v as f64 - mean) / std) as f32));
        }
    }
    NormalizedSlice {
        pixels,
        channels: slice.channels,
        height: slice.height,
        width: slice.width,
        source: SliceRef {
            patient_id: slice.patient_id.clone(),
            modality: slice.modality,
        },
    }
}

/// Label-preserving perturbations. Geometric symmetries are never part of
/// this catalog since they would change the orientation label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Intensity gain is drawn from `[1 - s, 1 + s]`; capped at 0.1.
    pub intensity_scale: f32,
    /// Gaussian noise sigma as a fraction of the dynamic range; capped at 0.05.
    pub noise_sigma: f32,
    /// Maximum shift as a fraction of each dimension; capped at 0.05.
    pub max_shift: f32,
}

impl AugmentConfig {
    pub const OFF: AugmentConfig = AugmentConfig {
        intensity_scale: 0.0,
        noise_sigma: 0.0,
        max_shift: 0.0,
    };

    fn clamped(self) -> AugmentConfig {
        AugmentConfig {
            intensity_scale: self.intensity_scale.clamp(0.0, 0.1),
            noise_sigma: self.noise_sigma.clamp(0.0, 0.05),
            max_shift: self.max_shift.clamp(0.0, 0.05),
        }
    }

    pub fn is_off(&self) -> bool {
        let c = self.clamped();
        c.intensity_scale == 0.0 && c.noise_sigma == 0.0 && c.max_shift == 0.0
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            intensity_scale: 0.1,
            noise_sigma: 0.02,
            max_shift: 0.05,
        }
    }
}

pub fn augment(slice: &Slice, rng_seed: u64, cfg: &AugmentConfig) -> Slice {
    let cfg = cfg.clamped();
    if cfg.is_off() {
        return slice.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = slice.clone();

    if cfg.intensity_scale > 0.0 {
        let gain = rng.gen_range(1.0 - cfg.intensity_scale..=1.0 + cfg.intensity_scale);
        out.pixels.iter_mut().for_each(|v| *v *= gain);
    }

    if cfg.noise_sigma > 0.0 {
        let (lo, hi) = out
            .pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let sigma = cfg.noise_sigma * (hi - lo);
        if sigma > 0.0 {
            let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
            out.pixels
                .iter_mut()
                .for_each(|v| *v += normal.sample(&mut rng));
        }
    }

    if cfg.max_shift > 0.0 {
        let max_dx = (cfg.max_shift * out.width as f32).floor() as isize;
        let max_dy = (cfg.max_shift * out.height as f32).floor() as isize;
        let dx = rng.gen_range(-max_dx..=max_dx);
        let dy = rng.gen_range(-max_dy..=max_dy);
        if dx != 0 || dy != 0 {
            out = translate(&out, dx, dy);
        }
    }
    out
}

/// Moves content by `(dx, dy)` pixels, filling uncovered area with zeros.
fn translate(slice: &Slice, dx: isize, dy: isize) -> Slice {
    let (h, w) = (slice.height as isize, slice.width as isize);
    let mut pixels = vec![0.0; slice.pixels.len()];
    for c in 0..slice.channels {
        let plane = slice.channel(c);
        let base = c * slice.height * slice.width;
        for y in 0..h {
            let sy = y - dy;
            if !(0..h).contains(&sy) {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if (0..w).contains(&sx) {
                    pixels[base + (y * w + x) as usize] = plane[(sy * w + sx) as usize];
                }
            }
        }
    }
    slice.with_pixels(pixels, slice.height, slice.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn l(v: u8) -> OrientationLabel {
        OrientationLabel::new(v).unwrap()
    }

    fn grid(rows: &[&[f32]]) -> Slice {
        let rows: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        Slice::from_rows(&rows, "p", Modality::C0).unwrap()
    }

    fn random_slice(seed: u64, c: usize, h: usize, w: usize) -> Slice {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..c * h * w).map(|_| rng.gen::<f32>()).collect();
        Slice::new(px, c, h, w, "r", Modality::T2).unwrap()
    }

    #[test]
    fn slice_validation() {
        assert!(Slice::new(vec![0.0; 2], 1, 1, 2, "p", Modality::C0).is_err());
        assert!(Slice::new(vec![0.0; 3], 1, 2, 2, "p", Modality::C0).is_err());
        assert!(Slice::new(vec![0.0, f32::NAN, 0.0, 0.0], 1, 2, 2, "p", Modality::C0).is_err());
    }

    #[test]
    fn orientation_examples() {
        let s = grid(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(apply_orientation(&s, l(0)), s);
        assert_eq!(apply_orientation(&s, l(2)).rows(0), vec![vec![3.0, 4.0], vec![1.0, 2.0]]);
        assert_eq!(apply_orientation(&s, l(7)).rows(0), vec![vec![4.0, 2.0], vec![3.0, 1.0]]);
    }

    #[test]
    fn orientation_tracks_label() {
        let s = random_slice(1, 1, 3, 5).with_orientation(l(5));
        let out = apply_orientation(&s, l(4));
        assert_eq!((out.height(), out.width()), (5, 3));
        assert_eq!(out.true_orientation, Some(d4::tables().compose(l(4), l(5))));
    }

    #[test]
    fn homomorphism_on_non_square() {
        let s = random_slice(7, 2, 3, 5);
        let t = d4::tables();
        for i in OrientationLabel::all() {
            for j in OrientationLabel::all() {
                let twice = apply_orientation(&apply_orientation(&s, j), i);
                let once = apply_orientation(&s, t.compose(i, j));
                assert_eq!(twice.pixels(), once.pixels(), "i={i} j={j}");
            }
        }
    }

    #[test]
    fn resize_examples() {
        let s = random_slice(3, 2, 5, 7);
        let same = resize_bilinear(&s, 5, 7).unwrap();
        assert_eq!(same.pixels(), s.pixels());

        let c = Slice::new(vec![0.37; 12], 1, 3, 4, "p", Modality::C0).unwrap();
        let r = resize_bilinear(&c, 9, 5).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-6));

        let s = grid(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let r = resize_bilinear(&s, 2, 3).unwrap();
        assert_eq!(r.rows(0), vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 1.0]]);

        assert!(resize_bilinear(&s, 1, 3).is_err());
    }

    #[test]
    fn crop_or_pad_examples() {
        let s = Slice::new((0..16).map(|v| v as f32).collect(), 1, 4, 4, "p", Modality::C0).unwrap();
        assert_eq!(crop_or_pad(&s, 4, 4, 0.0).unwrap(), s);
        assert_eq!(
            crop_or_pad(&s, 2, 2, 0.0).unwrap().rows(0),
            vec![vec![5.0, 6.0], vec![9.0, 10.0]]
        );

        let s = grid(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = crop_or_pad(&s, 4, 4, 0.0).unwrap();
        assert_eq!(
            p.rows(0),
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 2.0, 0.0],
                vec![0.0, 3.0, 4.0, 0.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ]
        );
        // odd remainder: one row before, two after
        let p = crop_or_pad(&s, 5, 2, -1.0).unwrap();
        assert_eq!(p.rows(0)[0], vec![-1.0, -1.0]);
        assert_eq!(p.rows(0)[1], vec![1.0, 2.0]);
        assert_eq!(p.rows(0)[4], vec![-1.0, -1.0]);
    }

    #[test]
    fn normalize_examples() {
        let c = Slice::new(vec![3.0; 8], 2, 2, 2, "p", Modality::C0).unwrap();
        assert!(normalize(&c).pixels().iter().all(|&v| v == 0.0));

        let s = grid(&[&[0.0, 2.0], &[2.0, 0.0]]);
        assert_eq!(normalize(&s).pixels(), &[-1.0, 1.0, 1.0, -1.0]);

        let r = random_slice(11, 3, 16, 16);
        let n = normalize(&r);
        for c in 0..3 {
            let plane = &n.pixels()[c * 256..(c + 1) * 256];
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / 256.0;
            let std = (plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 256.0).sqrt();
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-3, "std {std}");
        }
    }

    #[test]
    fn augment_off_and_determinism() {
        let s = random_slice(5, 1, 20, 20).with_orientation(l(3));
        assert_eq!(augment(&s, 9, &AugmentConfig::OFF), s);
        let cfg = AugmentConfig::default();
        let a = augment(&s, 9, &cfg);
        let b = augment(&s, 9, &cfg);
        assert_eq!(a, b);
        assert_ne!(a, augment(&s, 10, &cfg));
        assert_eq!(a.true_orientation, Some(l(3)));
    }

    #[test]
    fn augment_bounds_are_enforced() {
        let s = Slice::new(vec![1.0; 100], 1, 10, 10, "p", Modality::C0).unwrap();
        let cfg = AugmentConfig { intensity_scale: 5.0, noise_sigma: 0.0, max_shift: 0.0 };
        for seed in 0..50 {
            let v = augment(&s, seed, &cfg).pixels()[0];
            assert!((0.9..=1.1).contains(&v), "{v}");
        }
    }

    #[test]
    fn translate_fills_zero() {
        let s = grid(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let t = translate(&s, 1, 0);
        assert_eq!(t.rows(0), vec![vec![0.0, 1.0, 2.0], vec![0.0, 4.0, 5.0]]);
    }

    proptest! {
        #[test]
        fn round_trip_and_multiset(seed in any::<u64>(), h in 2usize..9, w in 2usize..9, label in 0u8..8) {
            let s = random_slice(seed, 2, h, w);
            let label = l(label);
            let there = apply_orientation(&s, label);
            let back = apply_orientation(&there, d4::tables().inverse(label));
            prop_assert_eq!(back.pixels(), s.pixels());

            let mut a: Vec<u32> = s.pixels().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = there.pixels().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn augment_keeps_label(seed in any::<u64>(), label in 0u8..8) {
            let s = random_slice(1, 1, 12, 12).with_orientation(l(label));
            let out = augment(&s, seed, &AugmentConfig::default());
            prop_assert_eq!(out.true_orientation, Some(l(label)));
            prop_assert_eq!((out.height(), out.width()), (12, 12));
        }
    }
}
