//! Synthetic short-axis cardiac phantoms.
//!
//! Each slice shows a body outline, a right ventricle, a left-ventricular
//! blood pool inside a myocardial ring, and a bright square marker placed in
//! the top-left quadrant closer to the top edge than to the left edge. The
//! marker alone breaks every symmetry of the square, so all 8 orientations of
//! a phantom are distinct images.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Volume;
use crate::d4::{self, OrientationLabel};
use crate::error::{Error, Result};
use crate::imgops::{Modality, Slice};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub n_patients: usize,
    pub slices_per_patient: usize,
    pub image_size: usize,
    pub modality: Modality,
    pub seed: u64,
    /// Multiplies the modality's noise level; 0 gives noiseless phantoms.
    pub noise_scale: f32,
}

impl PhantomSpec {
    pub fn new(n_patients: usize, slices_per_patient: usize, image_size: usize, modality: Modality, seed: u64) -> Self {
        PhantomSpec { n_patients, slices_per_patient, image_size, modality, seed, noise_scale: 1.0 }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_scale = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 1 {
            return Err(Error::Argument("phantom spec needs at least one patient".into()));
        }
        if self.slices_per_patient < 1 {
            return Err(Error::Argument("phantom spec needs at least one slice per patient".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Argument(format!("image_size {} below minimum 16", self.image_size)));
        }
        Ok(())
    }
}

/// Tissue intensities and noise of one acquisition style.
struct Contrast {
    body: f32,
    myocardium: f32,
    blood: f32,
    rv_blood: f32,
    noise: f32,
}

fn contrast(modality: Modality) -> Contrast {
    match modality {
        // bright blood, smooth mid contrast
        Modality::C0 => Contrast { body: 0.35, myocardium: 0.22, blood: 0.68, rv_blood: 0.62, noise: 0.02 },
        // enhanced myocardial rim, dark blood
        Modality::Lge => Contrast { body: 0.18, myocardium: 0.72, blood: 0.30, rv_blood: 0.26, noise: 0.04 },
        // flat contrast with heavy noise
        Modality::T2 => Contrast { body: 0.40, myocardium: 0.52, blood: 0.30, rv_blood: 0.34, noise: 0.10 },
    }
}

pub const MARKER_INTENSITY: f32 = 1.0;

/// Per-patient anatomy in units of the image side.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    body_center: (f32, f32),
    body_axes: (f32, f32),
    lv_center: (f32, f32),
    lv_outer: f32,
    wall: f32,
    rv_offset: (f32, f32),
    rv_axes: (f32, f32),
    marker_center: (f32, f32),
    marker_half: f32,
    bias_dir: f32,
    bias_amp: f32,
}

impl Geometry {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let mut j = |a: f32| rng.gen_range(-a..=a);
        Geometry {
            body_center: (0.5 + j(0.02), 0.54 + j(0.02)),
            body_axes: (0.40 + j(0.03), 0.32 + j(0.03)),
            lv_center: (0.56 + j(0.03), 0.54 + j(0.03)),
            lv_outer: 0.14 + j(0.015),
            wall: 0.045 + j(0.008),
            rv_offset: (-0.17 + j(0.015), -0.01 + j(0.02)),
            rv_axes: (0.09 + j(0.01), 0.13 + j(0.015)),
            marker_center: (0.30 + j(0.02), 0.12 + j(0.01)),
            marker_half: 0.065,
            bias_dir: j(std::f32::consts::PI),
            bias_amp: 0.06 + j(0.02),
        }
    }
}

fn inside_ellipse(u: f32, v: f32, c: (f32, f32), a: (f32, f32)) -> bool {
    let du = (u - c.0) / a.0;
    let dv = (v - c.1) / a.1;
    du * du + dv * dv <= 1.0
}

fn render(geom: &Geometry, c: &Contrast, n: usize, z: usize, sz: usize, noise: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    // ventricles taper toward the apex
    let taper = if sz > 1 { 1.0 - 0.35 * z as f32 / (sz - 1) as f32 } else { 1.0 };
    let outer = geom.lv_outer * taper;
    let inner = (outer - geom.wall).max(0.02);
    let rv_axes = (geom.rv_axes.0 * taper, geom.rv_axes.1 * taper);
    let rv_center = (geom.lv_center.0 + geom.rv_offset.0 * taper.sqrt(), geom.lv_center.1 + geom.rv_offset.1);
    let (bias_cos, bias_sin) = (geom.bias_dir.cos(), geom.bias_dir.sin());

    let normal = Normal::new(0.0f32, noise.max(f32::MIN_POSITIVE)).expect("finite noise");
    let mut px = Vec::with_capacity(n * n);
    for y in 0..n {
        let v = (y as f32 + 0.5) / n as f32;
        for x in 0..n {
            let u = (x as f32 + 0.5) / n as f32;
            let mk = geom.marker_center;
            let value = if (u - mk.0).abs() <= geom.marker_half && (v - mk.1).abs() <= geom.marker_half {
                MARKER_INTENSITY
            } else {
                let du = u - geom.lv_center.0;
                let dv = v - geom.lv_center.1;
                let r = (du * du + dv * dv).sqrt();
                let tissue = if r <= inner {
                    c.blood
                } else if r <= outer {
                    c.myocardium
                } else if inside_ellipse(u, v, rv_center, rv_axes) {
                    c.rv_blood
                } else if inside_ellipse(u, v, geom.body_center, geom.body_axes) {
                    c.body
                } else {
                    0.0
                };
                let bias = 1.0 + geom.bias_amp * ((u - 0.5) * bias_cos + (v - 0.5) * bias_sin);
                tissue * bias
            };
            let noisy = if noise > 0.0 { value + normal.sample(rng) } else { value };
            px.push(noisy.max(0.0));
        }
    }
    px
}

pub fn patient_id(index: usize) -> String {
    format!("P{:03}", index + 1)
}

/// Generates one volume per patient, every slice in orientation 0. Anatomy
/// depends only on `(seed, patient)`, so the same patient looks the same
/// across modalities apart from contrast and noise.
pub fn generate_phantoms(spec: &PhantomSpec) -> Result<Vec<Volume>> {
    spec.validate()?;
    let c = contrast(spec.modality);
    let noise = c.noise * spec.noise_scale.max(0.0);
    let n = spec.image_size;
    (0..spec.n_patients)
        .map(|p| {
            let mut geom_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ p as u64);
            let geom = Geometry::sample(&mut geom_rng);
            let mut noise_rng = ChaCha8Rng::seed_from_u64(
                spec.seed.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ ((p as u64) << 8) ^ spec.modality as u64,
            );
            let slices = (0..spec.slices_per_patient)
                .map(|z| {
                    let px = render(&geom, &c, n, z, spec.slices_per_patient, noise, &mut noise_rng);
                    Slice::new(px, 1, n, n, patient_id(p), spec.modality)
                        .map(|s| s.with_orientation(OrientationLabel::IDENTITY))
                })
                .collect::<Result<Vec<_>>>()?;
            Volume::new(slices)
        })
        .collect()
}

/// Quadrant-and-side signature of a point relative to the image center.
fn signature(dx: f32, dy: f32) -> (bool, bool, bool) {
    (dx < 0.0, dy < 0.0, dy.abs() > dx.abs())
}

fn signature_table() -> &'static [((bool, bool, bool), OrientationLabel); 8] {
    static TABLE: OnceLock<[((bool, bool, bool), OrientationLabel); 8]> = OnceLock::new();
    TABLE.get_or_init(|| {
        // canonical marker sits left of and well above the center: (-a, -b), b > a
        let side = 16usize;
        let (mx, my) = (5usize, 1usize);
        let center = (side as f32 - 1.0) / 2.0;
        let mut out = [((false, false, false), OrientationLabel::IDENTITY); 8];
        for label in OrientationLabel::all() {
            let hit = (0..side * side)
                .map(|i| (i % side, i / side))
                .find(|&(x, y)| d4::map_unchecked(label, x, y, side, side) == (mx, my))
                .expect("every label is a bijection");
            out[label.index()] = (signature(hit.0 as f32 - center, hit.1 as f32 - center), label);
        }
        out
    })
}

/// Rule-based orientation detector for phantoms: locates the marker as the
/// centroid of pixels at or above 90% of the maximum and reads the label off
/// its quadrant and dominant axis. Works without any learning.
pub fn detect_marker_orientation(slice: &Slice) -> Option<OrientationLabel> {
    let plane = slice.channel(0);
    let max = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max <= 0.0 {
        return None;
    }
    let threshold = 0.9 * max;
    let (mut sx, mut sy, mut count) = (0.0f64, 0.0f64, 0usize);
    for (i, &v) in plane.iter().enumerate() {
        if v >= threshold {
            sx += (i % slice.width()) as f64;
            sy += (i / slice.width()) as f64;
            count += 1;
        }
    }
    let cx = sx / count as f64 - (slice.width() as f64 - 1.0) / 2.0;
    let cy = sy / count as f64 - (slice.height() as f64 - 1.0) / 2.0;
    let sig = signature(cx as f32, cy as f32);
    signature_table().iter().find(|(s, _)| *s == sig).map(|&(_, l)| l)
}
