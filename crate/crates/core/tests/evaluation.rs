mod common;

use common::{div_standard_normal, expected_normal_distance, fid_unit_shift};
use motion_ddgan::evaluation::{
    accuracy, argmax_rows, diversity, fid, gaussianity_score, gaussianity_sweep, multimodality, physical_metrics,
    train_feature_extractor, ExtractorConfig, GridPosterior, Prior, FEATURE_DIM,
};
use motion_ddgan::motion::{synth_dataset, Dataset, SynthConfig};
use motion_ddgan::schedule::{Schedule, ScheduleKind};
use motion_ddgan::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn normal_distance_oracle() {
    // d = 1: 2/sqrt(pi); d = 2: sqrt(pi)
    assert!((expected_normal_distance(1) - 2.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
    assert!((expected_normal_distance(2) - std::f64::consts::PI.sqrt()).abs() < 1e-15);
    assert!((expected_normal_distance(32) - 7.937_753_587_657_922).abs() < 1e-12);
}

#[test]
fn fid_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::randn(&[300, 8], &mut rng);
    assert!(fid(&a, &a).unwrap() < 1e-8);
    let b = Tensor::randn(&[200, 8], &mut rng).map(|v| 0.7 * v - 0.2);
    assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-9);
    assert!((fid_unit_shift(20_000, 1).unwrap() - 1.0).abs() < 0.05);
    assert!(fid(&a, &Tensor::zeros(&[4, 3])).is_err());
}

#[test]
fn fid_of_scaled_gaussians_matches_closed_form() {
    // 1-D: (m1 - m2)^2 + (s1 - s2)^2 for the fitted moments
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = Tensor::randn(&[500, 1], &mut rng);
    let b = a.map(|v| 2.0 * v + 3.0);
    let m = a.mean();
    let s = (a.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / 499.0).sqrt();
    let want = (3.0 + m).powi(2) + s * s;
    assert!((fid(&a, &b).unwrap() - want).abs() < 1e-9);
}

#[test]
fn diversity_of_standard_normal_features() {
    let d = div_standard_normal(2000, 20_000, 3).unwrap();
    assert!((d - 7.98).abs() < 0.3, "{}", d);
    assert!((d - expected_normal_distance(32)).abs() < 0.05, "{}", d);
}

#[test]
fn multimodality_is_below_diversity_for_clustered_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
    let f = Tensor::from_fn(&[300, 4], |i| {
        let (r, c) = (i / 4, i % 4);
        if c == labels[r] { 5.0 } else { 0.0 }
    });
    let noise = Tensor::randn(&[300, 4], &mut rng);
    let f = f.zip_map(&noise, |a, b| a + 0.3 * b).unwrap();
    let div = diversity(&f, 500, &mut rng).unwrap();
    let mm = multimodality(&f, &labels, 500, &mut rng).unwrap();
    assert!(mm < div);
    assert!(multimodality(&f, &labels[..10], 5, &mut rng).is_err());
}

#[test]
fn accuracy_and_argmax() {
    let logits = Tensor::new(vec![3, 2], vec![0.1, 0.9, 2.0, -1.0, 0.0, 0.0]).unwrap();
    assert_eq!(argmax_rows(&logits), vec![1, 0, 1]);
    assert_eq!(accuracy(&[1, 0, 1], &[1, 1, 1]).unwrap(), 2.0 / 3.0);
    assert!(accuracy(&[], &[]).is_err());
}

fn small_set() -> Dataset {
    synth_dataset(&SynthConfig { clips_per_class: 40, frames: 32, ..Default::default() }).unwrap()
}

#[test]
fn extractor_separates_classes_and_not_shuffled_labels() {
    let data = small_set();
    let (a, b) = data.split_alternate();
    let cfg = ExtractorConfig::default();
    let ex = train_feature_extractor(&a, &cfg, 0).unwrap();
    let acc = accuracy(&ex.predict(&b).unwrap(), &b.labels()).unwrap();
    assert!(acc >= 0.95, "held-out accuracy {}", acc);
    let (feat, logits) = ex.dataset_features(&b).unwrap();
    assert_eq!(feat.shape(), &[b.len(), FEATURE_DIM]);
    assert_eq!(logits.shape(), &[b.len(), 6]);

    let mut shuffled = a.clone();
    let mut labels = shuffled.labels();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
    for (s, l) in shuffled.samples.iter_mut().zip(labels) {
        s.label = l;
    }
    let ex = train_feature_extractor(&shuffled, &cfg, 0).unwrap();
    let acc = accuracy(&ex.predict(&b).unwrap(), &b.labels()).unwrap();
    assert!(acc < 0.45, "shuffled-label accuracy {}", acc);
}

#[test]
fn real_halves_have_small_fid() {
    let data = small_set();
    let ex = train_feature_extractor(&data, &ExtractorConfig::default(), 0).unwrap();
    let (a, b) = data.split_alternate();
    let fa = ex.dataset_features(&a).unwrap().0;
    let fb = ex.dataset_features(&b).unwrap().0;
    let floor = fid(&fa, &fb).unwrap();
    let noise = Tensor::randn(fa.shape(), &mut ChaCha8Rng::seed_from_u64(1));
    assert!(floor < fid(&fa, &noise).unwrap());
}

#[test]
fn synthetic_clips_are_physically_plausible() {
    let data = small_set();
    let clips: Vec<_> = data
        .samples
        .iter()
        .take(12)
        .map(|s| motion_ddgan::motion::decode(&s.data, &data.skeleton, data.fps, s.label).unwrap())
        .collect();
    let m = physical_metrics(&clips, &data.skeleton, 0.0).unwrap();
    assert!(m.penetration < 0.02, "{:?}", m);
    assert!(m.skate < 0.05, "{:?}", m);
    // sinking everything by 10 cm shows up as penetration on grounded
    // frames, capped at the sink depth
    let sunk: Vec<_> = clips
        .iter()
        .cloned()
        .map(|mut c| {
            for p in &mut c.frames {
                p.root[2] -= 0.1;
            }
            c
        })
        .collect();
    let deep = physical_metrics(&sunk, &data.skeleton, 0.0).unwrap();
    assert!(deep.penetration > 0.05 && deep.penetration <= 0.1 + 1e-12, "{:?}", deep);
}

#[test]
fn two_delta_sweep_grows_with_step_size() {
    let sched = Schedule::for_analysis(1000, ScheduleKind::Linear).unwrap();
    let rows = gaussianity_sweep(&Prior::two_delta(), &sched, 130, 0.0, &[1, 5, 25, 125]).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].gaussianity >= w[0].gaussianity);
    }
    assert!(rows.last().unwrap().gaussianity > 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gaussianity_is_affine_invariant(scale in 0.2f64..5.0, shift in -3.0f64..3.0, sep in 0.5f64..3.0) {
        let x: Vec<f64> = (0..801).map(|i| -8.0 + 16.0 * i as f64 / 800.0).collect();
        let p: Vec<f64> = x.iter().map(|&v| (-(v - sep).powi(2) / 0.5).exp() + 0.6 * (-(v + sep).powi(2) / 0.8).exp()).collect();
        let base = gaussianity_score(&GridPosterior::new(x.clone(), p.clone()).unwrap());
        let moved = GridPosterior::new(x.iter().map(|v| scale * v + shift).collect(), p).unwrap();
        prop_assert!((gaussianity_score(&moved) - base).abs() < 1e-9);
    }
}

#[test]
fn toy_denoiser_is_bimodal() {
    use motion_ddgan::evaluation::{evaluate_toy, train_toy, ToyConfig};
    let cfg = ToyConfig::default();
    let toy = train_toy(&cfg).unwrap();
    let r = evaluate_toy(&toy, &cfg).unwrap();
    assert!(r.is_bimodal(0.25), "{} {}", r.mass_negative, r.mass_positive);
    assert_eq!(r.samples.len(), cfg.samples);
}
