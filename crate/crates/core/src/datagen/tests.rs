use std::collections::{HashMap, HashSet};
use std::fs;

use super::*;

fn small_cfg() -> TaskConfig {
    TaskConfig {
        num_classes: 4,
        train_per_domain: 12,
        val_size: 8,
        test_size: 8,
        support_domains: 1,
        clip: [4, 16, 16],
    }
}

fn clip_bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn class_viseme_codes_are_distinct_with_known_values() {
    assert_eq!(class_visemes(1).unwrap(), [4, 5, 0, 5]);
    assert_eq!(class_visemes(0).unwrap(), [0, 0, 0, 0]);
    let mut seen = HashSet::new();
    for c in 0..MAX_CLASSES {
        assert!(seen.insert(class_visemes(c).unwrap()), "class {c} repeats a sequence");
    }
    let err = class_visemes(MAX_CLASSES).unwrap_err();
    assert!(err.to_string().contains("unknown class"), "{err}");
}

#[test]
fn same_seed_and_config_regenerate_identical_bytes() {
    let cfg = small_cfg();
    let a = make_clda_task(77, &cfg).unwrap();
    let b = make_clda_task(77, &cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a.manifest).unwrap(),
        serde_json::to_string(&b.manifest).unwrap()
    );
    assert_eq!(a.clips.len(), b.clips.len());
    for (x, y) in a.clips.iter().zip(&b.clips) {
        assert_eq!(clip_bits(x), clip_bits(y));
    }
    let c = make_clda_task(78, &cfg).unwrap();
    assert_ne!(clip_bits(&a.clips[0]), clip_bits(&c.clips[0]), "seed must matter");
}

#[test]
fn dataset_roundtrip_through_disk_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_clda_task(5, &small_cfg()).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    let mut i = 0;
    for (_, entries) in back.manifest.splits() {
        for entry in entries {
            let clip = back.load_clip(entry).unwrap();
            assert_eq!(clip_bits(&clip), clip_bits(&ds.clips[i]), "clip {} differs", entry.path);
            i += 1;
        }
    }
    assert_eq!(i, ds.clips.len());
}

#[test]
fn clips_are_clamped_and_shaped() {
    let ds = make_clda_task(11, &small_cfg()).unwrap();
    for clip in &ds.clips {
        assert_eq!(clip.shape(), &[4, 16, 16]);
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in clip.data() {
            assert!((0.0..=1.0).contains(&v));
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(hi - lo > 0.3, "clip is nearly flat ({lo}..{hi})");
    }
}

#[test]
fn unknown_manifest_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_clda_task(3, &small_cfg()).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let doctored = fs::read_to_string(&path)
        .unwrap()
        .replacen(&format!("\"version\": {GENERATOR_VERSION}"), "\"version\": 999", 1);
    fs::write(&path, doctored).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert_eq!(err.kind(), "manifest");
    assert!(err.to_string().contains("999"), "{err}");
}

#[test]
fn truncated_clip_file_reports_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = make_clda_task(3, &small_cfg()).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    let entry = &back.manifest.train[0];
    let path = dir.path().join(&entry.path);
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    let err = back.load_clip(entry).unwrap_err();
    assert_eq!(err.kind(), "tensor_parse");
}

#[test]
fn splits_are_class_balanced_within_one() {
    let cfg = TaskConfig { num_classes: 7, ..small_cfg() };
    let ds = make_clda_task(21, &cfg).unwrap();
    let labeled_counts = |entries: &[ManifestEntry]| {
        let mut counts = HashMap::new();
        for e in entries.iter().filter(|e| e.domain == 0) {
            assert!((0..cfg.num_classes as i64).contains(&e.label));
            *counts.entry(e.label).or_insert(0usize) += 1;
        }
        counts
    };
    for entries in [&ds.manifest.train, &ds.manifest.val, &ds.manifest.test] {
        let counts = labeled_counts(entries);
        let min = counts.values().min().copied().unwrap_or(0);
        let max = counts.values().max().copied().unwrap_or(0);
        assert!(max - min <= 1, "per-class counts spread {min}..{max}");
    }
    let support: Vec<_> = ds.manifest.train.iter().filter(|e| e.domain != 0).collect();
    assert_eq!(support.len(), cfg.train_per_domain);
    assert!(support.iter().all(|e| e.label == -1), "support clips must be unlabeled");
}

#[test]
fn speakers_are_disjoint_across_splits() {
    let ds = make_clda_task(9, &small_cfg()).unwrap();
    let speakers = |entries: &[ManifestEntry], domain: usize| -> HashSet<u64> {
        entries.iter().filter(|e| e.domain == domain).map(|e| e.speaker).collect()
    };
    let groups = [
        speakers(&ds.manifest.train, 0),
        speakers(&ds.manifest.train, 1),
        speakers(&ds.manifest.val, 0),
        speakers(&ds.manifest.test, 0),
    ];
    for (i, a) in groups.iter().enumerate() {
        assert!(!a.is_empty());
        for b in &groups[i + 1..] {
            assert!(a.is_disjoint(b), "speaker identity leaks between splits");
        }
    }
}

#[test]
fn domains_change_photometry_but_not_geometry() {
    let gen = Generator::new(42, 6, 32, 32).unwrap();
    let base = domain_catalog(0).unwrap();
    let mut tinted = base.clone();
    tinted.name = "tinted".into();
    tinted.brightness = 0.1;
    tinted.contrast = 0.8;
    tinted.texture_amp = 0.09;
    let a = gen.clip(3, 17, 0, &base, 5).unwrap();
    let b = gen.clip(3, 17, 1, &tinted, 5).unwrap();
    assert_eq!(a.mouth_box, b.mouth_box, "photometry must not move the mouth");
    assert_eq!(a.sample_seed, b.sample_seed);
    assert_ne!(clip_bits(&a.video), clip_bits(&b.video));
}

#[test]
fn mouth_box_frames_the_lips() {
    let gen = Generator::new(1, 8, 32, 32).unwrap();
    let domain = domain_catalog(0).unwrap();
    for speaker in [0u64, 3, 9] {
        let s = gen.clip(1, speaker, 0, &domain, speaker).unwrap();
        let [y0, y1, x0, x1] = s.mouth_box;
        assert!(y0 < y1 && y1 <= 32 && x0 < x1 && x1 <= 32);
        let (mut bright_in, mut dark_in) = (false, false);
        for t in 0..8 {
            for y in 0..32 {
                for x in 0..32 {
                    let v = s.video.data()[(t * 32 + y) * 32 + x];
                    let inside = (y0..y1).contains(&y) && (x0..x1).contains(&x);
                    if inside {
                        bright_in |= v > 0.8;
                        dark_in |= v < 0.2;
                    } else {
                        assert!(v < 0.7, "lip-bright pixel at ({t},{y},{x}) escapes the box");
                    }
                }
            }
        }
        assert!(bright_in, "no lip pixel inside the box");
        assert!(dark_in, "no mouth-interior pixel inside the box");
    }
}

/// Mean frame of a clip, flattened to H*W.
fn mean_frame(clip: &Tensor<f32>) -> Vec<f64> {
    let (t, hw) = (clip.shape()[0], clip.shape()[1] * clip.shape()[2]);
    let mut out = vec![0.0; hw];
    for frame in 0..t {
        for (o, &v) in out.iter_mut().zip(&clip.data()[frame * hw..(frame + 1) * hw]) {
            *o += v as f64 / t as f64;
        }
    }
    out
}

fn centroid_accuracy(gen: &Generator, domain_id: usize, per_class: usize) -> f64 {
    let domain = domain_catalog(domain_id).unwrap();
    let classes = 10;
    let mut index = 0u64;
    let mut render = |class: usize, speaker: u64| {
        let s = gen.clip(class, speaker, domain_id, &domain, index).unwrap();
        index += 1;
        mean_frame(&s.video)
    };

    let mut centroids = vec![vec![0.0; gen.h * gen.w]; classes];
    for (class, centroid) in centroids.iter_mut().enumerate() {
        for speaker in 0..per_class as u64 {
            for (c, v) in centroid.iter_mut().zip(render(class, speaker)) {
                *c += v / per_class as f64;
            }
        }
    }

    let mut hits = 0;
    let total = classes * per_class;
    for class in 0..classes {
        for speaker in 0..per_class as u64 {
            let frame = render(class, 100 + speaker);
            let best = centroids
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(&frame).map(|(x, y)| (x - y) * (x - y)).sum();
                    let db: f64 = b.iter().zip(&frame).map(|(x, y)| (x - y) * (x - y)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(i, _)| i)
                .unwrap();
            hits += (best == class) as usize;
        }
    }
    hits as f64 / total as f64
}

#[test]
fn centroid_oracle_separates_target_domain_classes() {
    let gen = Generator::new(123, 16, 32, 32).unwrap();
    let acc = centroid_accuracy(&gen, 0, 8);
    assert!(acc > 0.8, "nearest-centroid accuracy {acc} on the target domain");
}

#[test]
fn centroid_oracle_survives_every_domain_transform() {
    let gen = Generator::new(321, 16, 32, 32).unwrap();
    for domain in 0..4 {
        let acc = centroid_accuracy(&gen, domain, 4);
        assert!(acc >= 0.7, "nearest-centroid accuracy {acc} within domain {domain}");
    }
}

#[test]
fn config_validation_rejects_bad_setups() {
    assert!(TaskConfig { num_classes: 1, ..small_cfg() }.validate().is_err());
    assert!(TaskConfig { support_domains: 4, ..small_cfg() }.validate().is_err());
    assert!(TaskConfig { val_size: 0, ..small_cfg() }.validate().is_err());
    assert!(TaskConfig { clip: [0, 32, 32], ..small_cfg() }.validate().is_err());
    assert!(TaskConfig { clip: [4, 4, 32], ..small_cfg() }.validate().is_err());
    assert!(TaskConfig::default().validate().is_ok());
    assert!(TaskConfig::paper().validate().is_ok());
    assert!(domain_catalog(4).is_err());
    assert!(Generator::new(0, 0, 32, 32).is_err());

    let parsed: TaskConfig = serde_json::from_str(r#"{"num_classes": 6}"#).unwrap();
    assert_eq!(parsed.num_classes, 6);
    assert_eq!(parsed.clip, [16, 32, 32]);
    assert!(serde_json::from_str::<TaskConfig>(r#"{"classes": 6}"#).is_err());
}
