use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::rng;

fn tiny() -> Dataset {
    synth_generate(3, 10, 30, 16).unwrap()
}

#[test]
fn synth_is_deterministic_and_counted() {
    let a = synth_generate(1, 40, 50, 32).unwrap();
    let b = synth_generate(1, 40, 50, 32).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_classes(), 40);
    assert_eq!(a.len(), 2000);
    let by = a.indices_by_class();
    assert!(by.iter().all(|c| c.len() == 50));
    let ids: BTreeSet<u64> = a.samples().iter().map(|s| s.source_id).collect();
    assert_eq!(ids.len(), 2000);
}

#[test]
fn synth_depends_on_seed_and_domain() {
    let a = synth_generate(1, 10, 30, 16).unwrap();
    let b = synth_generate(2, 10, 30, 16).unwrap();
    assert_ne!(a, b);
    let mut cfg = SynthConfig::new(1, 10, 30, 16);
    cfg.domain = Domain::Shifted;
    let c = synth_generate_with(&cfg).unwrap();
    assert_ne!(a, c);
}

#[test]
fn synth_rejects_out_of_range_parameters() {
    assert!(matches!(
        synth_generate(1, 9, 50, 32),
        Err(Error::Parameter { name: "n_classes", .. })
    ));
    assert!(matches!(
        synth_generate(1, 40, 29, 32),
        Err(Error::Parameter { name: "per_class", .. })
    ));
    assert!(matches!(synth_generate(1, 40, 50, 8), Err(Error::Parameter { .. })));
    assert!(matches!(synth_generate(1, 40, 50, 65), Err(Error::Parameter { .. })));
}

#[test]
fn synth_images_are_not_blank() {
    let d = tiny();
    for s in d.samples() {
        let min = *s.pixels.iter().min().unwrap();
        let max = *s.pixels.iter().max().unwrap();
        assert!(max - min > 40, "sample {} has no contrast", s.source_id);
    }
}

#[test]
fn disabled_policy_is_deterministic() {
    let d = tiny();
    let s = &d.samples()[7];
    let p = AugmentPolicy::disabled();
    let a = augment(s, d.dims(), &p, &mut rng::stream(1, "a", 0));
    let b = augment(s, d.dims(), &p, &mut rng::stream(2, "b", 9));
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[1, 16, 16]);
}

#[test]
fn degenerate_policy_matches_disabled() {
    let d = tiny();
    let p = AugmentPolicy {
        crop_fraction_range: (1.0, 1.0),
        color_jitter_strength: 0.0,
        noise_std: 0.0,
        enabled: true,
    };
    for s in d.samples().iter().take(20) {
        let a = augment(s, d.dims(), &p, &mut rng::stream(5, "aug", s.source_id));
        let b = augment(s, d.dims(), &AugmentPolicy::disabled(), &mut rng::stream(5, "aug", 0));
        assert_eq!(a, b);
    }
}

#[test]
fn distinct_streams_give_distinct_views() {
    let d = tiny();
    let p = AugmentPolicy::default();
    for trial in 0..100u64 {
        let s = &d.samples()[(trial as usize * 3) % d.len()];
        let a = augment(s, d.dims(), &p, &mut rng::stream(trial, "aug", 0));
        let b = augment(s, d.dims(), &p, &mut rng::stream(trial, "aug", 1));
        let differing = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
        assert!(
            differing * 100 >= a.len(),
            "trial {trial}: only {differing} entries differ"
        );
    }
}

#[test]
fn augmentation_respects_value_range() {
    let d = tiny();
    let p = AugmentPolicy {
        crop_fraction_range: (0.5, 1.0),
        color_jitter_strength: 0.5,
        noise_std: 0.5,
        enabled: true,
    };
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for s in d.samples().iter().take(50) {
        let t = augment(s, d.dims(), &p, &mut r);
        assert_eq!(t.shape(), &[1, 16, 16]);
        assert!(t.data().iter().all(|v| (-3.0..=3.0).contains(v)));
    }
}

#[test]
fn policy_validation() {
    assert!(AugmentPolicy::default().validate().is_ok());
    let mut p = AugmentPolicy {
        crop_fraction_range: (0.9, 0.8),
        ..AugmentPolicy::default()
    };
    assert!(p.validate().is_err());
    p.crop_fraction_range = (0.0, 0.8);
    assert!(p.validate().is_err());
    p = AugmentPolicy::default();
    p.noise_std = f64::NAN;
    assert!(p.validate().is_err());
}

#[test]
fn batches_partition_the_epoch() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let b = make_batches(10, 4, &mut r).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    let all: BTreeSet<usize> = b.iter().flatten().copied().collect();
    assert_eq!(all.len(), 10);
    assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 10);

    let again = make_batches(10, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(b, again);
}

#[test]
fn batching_errors() {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(make_batches(0, 4, &mut r), Err(Error::State(_))));
    assert!(matches!(make_batches(5, 0, &mut r), Err(Error::Parameter { .. })));
}

#[test]
fn standard_split_ratio_and_validation() {
    let s = ClassSplit::standard(40).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (24, 8, 8));
    s.validate(40, 5).unwrap();
    assert!(s.validate(40, 9).is_err());

    let overlap = ClassSplit {
        train: vec![0, 1],
        val: vec![1],
        test: vec![2, 3],
    };
    assert!(overlap.validate(4, 2).is_err());
    let empty = ClassSplit {
        train: vec![0],
        val: vec![],
        test: vec![2, 3],
    };
    assert!(empty.validate(4, 2).is_err());
}

#[test]
fn select_and_hold_out() {
    let d = tiny();
    let sub = d.select_classes(&[7, 2]).unwrap();
    assert_eq!(sub.n_classes(), 2);
    assert_eq!(sub.len(), 60);
    let original_7: Vec<u64> = d
        .samples()
        .iter()
        .filter(|s| s.label == 7)
        .map(|s| s.source_id)
        .collect();
    let new_0: Vec<u64> = sub
        .samples()
        .iter()
        .filter(|s| s.label == 0)
        .map(|s| s.source_id)
        .collect();
    assert_eq!(original_7, new_0);

    let (keep, held) = sub.hold_out_per_class(10);
    assert_eq!((keep.len(), held.len()), (40, 20));
    let k: BTreeSet<u64> = keep.samples().iter().map(|s| s.source_id).collect();
    assert!(held.samples().iter().all(|s| !k.contains(&s.source_id)));
}

#[test]
fn dataset_rejects_bad_samples() {
    let dims = ImageDims::new(16, 16, 1).unwrap();
    let bad = ImageSample {
        pixels: vec![0; 10],
        label: 0,
        source_id: 0,
    };
    assert!(Dataset::new(dims, 2, vec![bad]).is_err());
    let bad_label = ImageSample {
        pixels: vec![0; 256],
        label: 2,
        source_id: 0,
    };
    assert!(Dataset::new(dims, 2, vec![bad_label]).is_err());
}
