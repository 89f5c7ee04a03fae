//! Seeded synthetic "viseme clip" generator and multi-domain task assembly.
//!
//! Every clip is a short grayscale film of a parameterized mouth: each class
//! is a fixed sequence of four mouth shapes interpolated over the clip,
//! speakers jitter the geometry, and domains apply fixed photometric and
//! geometric nuisance transforms. Classes are shared across domains;
//! transforms are not. Output bytes are a pure function of
//! (generator version, seed, config).

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub use io::{read_dataset, write_dataset, DatasetManifest, LazyDataset, ManifestEntry};

/// Bump on any change that alters generated bytes.
pub const GENERATOR_VERSION: u32 = 1;

/// The viseme alphabet is indexed by 3-bit digits, and the class code packs
/// four of them, so this many distinct classes exist.
pub const MAX_CLASSES: usize = 4096;

pub const VISEMES_PER_CLASS: usize = 4;

/// (aperture, width, lip thickness, corner curvature) per canonical mouth
/// shape, all in normalized units. Curvature bends the lip line into a
/// smile (+) or frown (-). Shapes are left-right symmetric, which keeps
/// every class safe under horizontal flips.
const VISEMES: [[f64; 4]; 8] = [
    [0.05, 0.60, 0.30, 0.60],  // closed
    [0.85, 0.70, 0.18, -0.40], // wide open
    [0.55, 0.35, 0.22, 0.20],  // narrow open
    [0.35, 0.40, 0.35, -0.60], // small rounded
    [0.65, 0.55, 0.30, 0.50],  // large rounded
    [0.15, 0.90, 0.15, -0.20], // wide thin
    [0.45, 0.60, 0.25, 0.0],   // half open
    [0.25, 0.80, 0.40, 0.40],  // spread
];

/// The viseme sequence for a class. An odd multiplier makes the map from
/// class id to 12-bit code a bijection, so no two classes share a sequence;
/// this particular multiplier keeps the first few dozen classes far apart
/// in time-averaged mouth shape.
pub fn class_visemes(class_id: usize) -> Result<[usize; VISEMES_PER_CLASS]> {
    if class_id >= MAX_CLASSES {
        return Err(Error::invalid(
            "class_visemes",
            format!("unknown class {class_id}; generator defines {MAX_CLASSES}"),
        ));
    }
    let code = (class_id as u32).wrapping_mul(2373) % MAX_CLASSES as u32;
    Ok([
        ((code >> 9) & 7) as usize,
        ((code >> 6) & 7) as usize,
        ((code >> 3) & 7) as usize,
        (code & 7) as usize,
    ])
}

/// One domain's fixed nuisance transform plus its role in the task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: String,
    pub labeled: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub rotation_deg: f64,
    pub texture_amp: f64,
    pub texture_freq: [f64; 2],
    pub texture_phase: f64,
}

/// Fixed catalog of mutually distinct domain transforms. Index 0 is the
/// neutral target domain; the rest serve as unlabeled support domains.
pub fn domain_catalog(index: usize) -> Result<DomainSpec> {
    let spec = match index {
        0 => DomainSpec {
            name: "alpha".into(),
            labeled: true,
            brightness: 0.0,
            contrast: 1.0,
            rotation_deg: 0.0,
            texture_amp: 0.04,
            texture_freq: [0.8, 0.3],
            texture_phase: 0.0,
        },
        1 => DomainSpec {
            name: "beta".into(),
            labeled: false,
            brightness: 0.12,
            contrast: 0.85,
            rotation_deg: 5.0,
            texture_amp: 0.10,
            texture_freq: [0.25, 1.1],
            texture_phase: 1.0,
        },
        2 => DomainSpec {
            name: "gamma".into(),
            labeled: false,
            brightness: -0.10,
            contrast: 1.25,
            rotation_deg: -4.0,
            texture_amp: 0.08,
            texture_freq: [1.3, 0.7],
            texture_phase: 2.2,
        },
        3 => DomainSpec {
            name: "delta".into(),
            labeled: false,
            brightness: 0.05,
            contrast: 1.1,
            rotation_deg: 3.0,
            texture_amp: 0.12,
            texture_freq: [0.5, 0.5],
            texture_phase: 4.0,
        },
        _ => {
            return Err(Error::invalid(
                "domain_catalog",
                format!("domain index {index} outside the catalog (0..=3)"),
            ));
        }
    };
    Ok(spec)
}

/// Per-speaker geometric habits, stable across every clip of that speaker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeakerGeom {
    pub dy: f64,
    pub dx: f64,
    pub scale: f64,
}

/// One generated clip with its ground-truth metadata.
#[derive(Clone, Debug)]
pub struct Sample {
    /// (T, H, W), values in [0, 1].
    pub video: Tensor<f32>,
    /// Class id, or -1 for unlabeled support clips.
    pub label: i64,
    pub domain: usize,
    pub speaker: u64,
    pub sample_seed: u64,
    /// [y0, y1, x0, x1), the half-open pixel box covering the mouth across
    /// all frames. Ground truth for saliency checks.
    pub mouth_box: [usize; 4],
}

pub struct Generator {
    pub seed: u64,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Soft coverage of the implicit ellipse value e = (dy/b)^2 + (dx/a)^2;
/// roughly one pixel of anti-aliased edge at the e = 1 boundary.
fn coverage(e: f64) -> f64 {
    ((1.0 - e) * 6.0 + 0.5).clamp(0.0, 1.0)
}

fn blend(dst: f64, src: f64, alpha: f64) -> f64 {
    dst * (1.0 - alpha) + src * alpha
}

impl Generator {
    pub fn new(seed: u64, t: usize, h: usize, w: usize) -> Result<Self> {
        if t == 0 || h < 8 || w < 8 {
            return Err(Error::invalid(
                "generator",
                format!("clip geometry {t}x{h}x{w} too small; need T >= 1 and spatial dims >= 8"),
            ));
        }
        Ok(Generator { seed, t, h, w })
    }

    fn stream(&self, label: &str, index: u64) -> Rng {
        Rng::new(self.seed).derive_named(label, index)
    }

    /// Jitter is kept well under the mouth's own extent so per-speaker
    /// placement never outweighs the class signal.
    pub fn speaker_geometry(&self, speaker: u64) -> SpeakerGeom {
        let mut r = self.stream("speaker", speaker);
        SpeakerGeom {
            dy: r.uniform(-0.015, 0.015),
            dx: r.uniform(-0.015, 0.015),
            scale: r.uniform(0.96, 1.04),
        }
    }

    /// Interpolated (aperture, width, thickness, curvature) at frame `t`.
    fn mouth_at(&self, visemes: &[usize; VISEMES_PER_CLASS], t: usize) -> [f64; 4] {
        let u = if self.t > 1 {
            t as f64 / (self.t - 1) as f64 * (VISEMES_PER_CLASS - 1) as f64
        } else {
            0.0
        };
        let i = (u.floor() as usize).min(VISEMES_PER_CLASS - 2);
        let frac = u - i as f64;
        let a = VISEMES[visemes[i]];
        let b = VISEMES[visemes[i + 1]];
        std::array::from_fn(|k| lerp(a[k], b[k], frac))
    }

    pub fn clip(
        &self,
        class_id: usize,
        speaker: u64,
        domain_id: usize,
        domain: &DomainSpec,
        sample_index: u64,
    ) -> Result<Sample> {
        let visemes = class_visemes(class_id)?;
        let geom = self.speaker_geometry(speaker);
        let sample_seed = self.stream("sample", sample_index).next_u64();
        let mut noise = Rng::new(sample_seed);

        let (h, w) = (self.h as f64, self.w as f64);
        let unit = h.min(w) / 2.0;
        let cy0 = (0.58 + geom.dy) * h;
        let cx0 = (0.50 + geom.dx) * w;
        let theta = domain.rotation_deg.to_radians();
        let (sin_t, cos_t) = theta.sin_cos();

        let mut video = Tensor::<f32>::zeros(vec![self.t, self.h, self.w]);
        let mut max_a: f64 = 0.0;
        let mut max_b: f64 = 0.0;

        let mut min_cy = f64::INFINITY;
        let mut max_cy = f64::NEG_INFINITY;
        for frame in 0..self.t {
            let [aperture, width, thick, curve] = self.mouth_at(&visemes, frame);
            let a_out = (0.16 + 0.42 * width) * unit * geom.scale;
            let b_out = (0.08 + 0.30 * aperture + 0.12 * thick) * unit * geom.scale;
            let a_in = a_out * (0.80 - 0.55 * thick);
            let b_in = (b_out * 0.85 * aperture).max(1e-3);
            // The jaw drops as the mouth opens, so the aperture trajectory
            // leaves a vertical footprint as well as a radial one.
            let cy = cy0 + 0.50 * b_out * aperture;
            max_a = max_a.max(a_out);
            max_b = max_b.max(b_out + 0.5 * curve.abs() * a_out);
            min_cy = min_cy.min(cy);
            max_cy = max_cy.max(cy);

            let base = frame * self.h * self.w;
            let data = video.data_mut();
            for y in 0..self.h {
                for x in 0..self.w {
                    let py = y as f64 + 0.5 - h / 2.0;
                    let px = x as f64 + 0.5 - w / 2.0;
                    // Sample the scene in rotated coordinates; the camera
                    // texture below stays in image coordinates.
                    let gy = cos_t * py + sin_t * px + h / 2.0;
                    let gx = -sin_t * py + cos_t * px + w / 2.0;

                    let tex = (domain.texture_freq[0] * y as f64
                        + domain.texture_freq[1] * x as f64
                        + domain.texture_phase)
                        .sin();
                    let mut v = 0.32 + domain.texture_amp * tex;

                    let fy = (gy - 0.52 * h) / (0.46 * h);
                    let fx = (gx - 0.50 * w) / (0.40 * w);
                    v = blend(v, 0.55, coverage(fy * fy + fx * fx));

                    // Corners bend up (smile) or down (frown) with the
                    // frame's curvature. The bend scales with the mouth's
                    // width, not its opening, so it stays visible even for
                    // closed shapes; both lip ellipses shift together so the
                    // interior stays enclosed.
                    let ox = (gx - cx0) / a_out;
                    let bend = 0.5 * curve * ox * ox * a_out;
                    let oy = (gy - cy - bend) / b_out;
                    v = blend(v, 0.88, coverage(oy * oy + ox * ox));

                    let iy = (gy - cy - bend) / b_in;
                    let ix = (gx - cx0) / a_in;
                    v = blend(v, 0.10, coverage(iy * iy + ix * ix));

                    v = (v - 0.5) * domain.contrast + 0.5 + domain.brightness;
                    v += noise.uniform(-0.02, 0.02);
                    data[base + y * self.w + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }

        // The mouth's bounding box in image coordinates: rotate the two
        // extreme jaw positions around the image center, then pad by the
        // axis-aligned extent of the rotated worst-case ellipse.
        let gxc = cx0 - w / 2.0;
        let mut py_lo = f64::INFINITY;
        let mut py_hi = f64::NEG_INFINITY;
        let mut px_lo = f64::INFINITY;
        let mut px_hi = f64::NEG_INFINITY;
        for cy in [min_cy, max_cy] {
            let gyc = cy - h / 2.0;
            let py = cos_t * gyc - sin_t * gxc + h / 2.0;
            let px = sin_t * gyc + cos_t * gxc + w / 2.0;
            py_lo = py_lo.min(py);
            py_hi = py_hi.max(py);
            px_lo = px_lo.min(px);
            px_hi = px_hi.max(px);
        }
        let half_h = (max_b * max_b * cos_t * cos_t + max_a * max_a * sin_t * sin_t).sqrt();
        let half_w = (max_b * max_b * sin_t * sin_t + max_a * max_a * cos_t * cos_t).sqrt();
        let y0 = (py_lo - half_h - 1.0).floor().max(0.0) as usize;
        let y1 = ((py_hi + half_h + 1.0).ceil() as usize).min(self.h);
        let x0 = (px_lo - half_w - 1.0).floor().max(0.0) as usize;
        let x1 = ((px_hi + half_w + 1.0).ceil() as usize).min(self.w);

        Ok(Sample {
            video,
            label: class_id as i64,
            domain: domain_id,
            speaker,
            sample_seed,
            mouth_box: [y0, y1, x0, x1],
        })
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Labeled target-domain training clips; each support domain contributes
    /// the same number of unlabeled clips.
    #[serde(default = "default_train")]
    pub train_per_domain: usize,
    #[serde(default = "default_eval")]
    pub val_size: usize,
    #[serde(default = "default_eval")]
    pub test_size: usize,
    /// Unlabeled support domains (0..=3 from the catalog).
    #[serde(default = "default_support")]
    pub support_domains: usize,
    /// (T, H, W) clip geometry.
    #[serde(default = "default_clip")]
    pub clip: [usize; 3],
}

fn default_classes() -> usize {
    10
}
fn default_train() -> usize {
    200
}
fn default_eval() -> usize {
    60
}
fn default_support() -> usize {
    1
}
fn default_clip() -> [usize; 3] {
    [16, 32, 32]
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            num_classes: default_classes(),
            train_per_domain: default_train(),
            val_size: default_eval(),
            test_size: default_eval(),
            support_domains: default_support(),
            clip: default_clip(),
        }
    }
}

impl TaskConfig {
    /// Full-scale variant: 846/120/121 splits over 21 classes at 29x64x64.
    pub fn paper() -> Self {
        TaskConfig {
            num_classes: 21,
            train_per_domain: 846,
            val_size: 120,
            test_size: 121,
            support_domains: 1,
            clip: [29, 64, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return Err(Error::invalid(
                "task_config",
                format!("num_classes must lie in 2..={MAX_CLASSES}, got {}", self.num_classes),
            ));
        }
        if self.train_per_domain == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::invalid("task_config", "split sizes must be positive"));
        }
        if self.support_domains > 3 {
            return Err(Error::invalid(
                "task_config",
                format!("at most 3 support domains exist, got {}", self.support_domains),
            ));
        }
        let [t, h, w] = self.clip;
        if t == 0 || h < 8 || w < 8 {
            return Err(Error::invalid(
                "task_config",
                format!("clip geometry {t}x{h}x{w} too small"),
            ));
        }
        Ok(())
    }
}

/// A fully generated dataset: the manifest plus clips aligned with the
/// manifest's train, val, test order.
pub struct GeneratedDataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<Tensor<f32>>,
}

/// Class ids for a balanced split: per-class counts differ by at most one,
/// order shuffled by `rng`.
fn balanced_classes(n: usize, num_classes: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    rng.shuffle(&mut out);
    out
}

/// Speaker pools are disjoint across splits (and across support domains) so
/// no identity leaks between train, val, and test.
fn speaker_pool(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}

pub fn make_clda_task(seed: u64, cfg: &TaskConfig) -> Result<GeneratedDataset> {
    cfg.validate()?;
    let [t, h, w] = cfg.clip;
    let gen = Generator::new(seed, t, h, w)?;
    let mut domains = Vec::with_capacity(1 + cfg.support_domains);
    for d in 0..=cfg.support_domains {
        domains.push(domain_catalog(d)?);
    }

    let mut clips = Vec::new();
    let mut index: u64 = 0;
    let build = |split: &str,
                     n: usize,
                     domain_id: usize,
                     labeled: bool,
                     speakers: &[u64],
                     clips: &mut Vec<Tensor<f32>>,
                     index: &mut u64|
     -> Result<Vec<ManifestEntry>> {
        let mut order_rng = gen.stream(split, domain_id as u64);
        let classes = balanced_classes(n, cfg.num_classes, &mut order_rng);
        let mut entries = Vec::with_capacity(n);
        for (i, &class) in classes.iter().enumerate() {
            let speaker = speakers[i % speakers.len()];
            let domain = &domains[domain_id];
            let sample = gen.clip(class, speaker, domain_id, domain, *index)?;
            let path = format!("clips/{split}_d{domain_id}_{i:05}.vtns");
            entries.push(ManifestEntry {
                path,
                label: if labeled { sample.label } else { -1 },
                domain: domain_id,
                speaker,
                sample_seed: sample.sample_seed,
                mouth_box: sample.mouth_box,
            });
            clips.push(sample.video);
            *index += 1;
        }
        Ok(entries)
    };

    let mut train = build("train", cfg.train_per_domain, 0, true, &speaker_pool(0, 10), &mut clips, &mut index)?;
    for d in 1..=cfg.support_domains {
        let pool = speaker_pool(3_000 + d as u64 * 100, 10);
        train.extend(build("train", cfg.train_per_domain, d, false, &pool, &mut clips, &mut index)?);
    }
    let val = build("val", cfg.val_size, 0, true, &speaker_pool(1_000, 4), &mut clips, &mut index)?;
    let test = build("test", cfg.test_size, 0, true, &speaker_pool(2_000, 4), &mut clips, &mut index)?;

    let manifest = DatasetManifest {
        version: GENERATOR_VERSION,
        seed,
        num_classes: cfg.num_classes,
        clip_shape: cfg.clip,
        domains,
        train,
        val,
        test,
    };
    Ok(GeneratedDataset { manifest, clips })
}

#[cfg(test)]
mod tests;
