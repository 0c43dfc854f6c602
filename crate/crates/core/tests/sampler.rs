mod common;

use common::{guidance_endpoint_errors, manual_chain, tiny_config, tiny_data};
use motion_ddgan::sampler::{clips_to_dataset, positions_csv, Guidance, SampleRequest, Sampler};
use motion_ddgan::tensor::Tensor;
use motion_ddgan::training::{train, TrainConfig, TrainState};
use motion_ddgan::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trained() -> TrainState {
    train(&tiny_data(), TrainConfig { epochs: 2, ..tiny_config() }).unwrap().0
}

const LABELS: [Option<usize>; 3] = [Some(0), Some(4), None];

#[test]
fn guidance_endpoints_are_the_single_branch_chains() {
    let state = trained();
    let (u, c) = guidance_endpoint_errors(&state, &LABELS, 11).unwrap();
    assert_eq!(u, 0.0);
    assert_eq!(c, 0.0);
}

#[test]
fn guided_output_is_the_affine_mix_of_branches() {
    let state = trained();
    let sampler = Sampler::from_state(&state, true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = &state.model;
    let x = Tensor::randn(&[3, m.frames(), m.frame_dim()], &mut rng);
    let z = Tensor::randn(&[3, m.generator.config.z_dim], &mut rng);
    let c = sampler.guided(&x, &z, &LABELS, 2, Guidance::Conditional).unwrap();
    let u = sampler.guided(&x, &z, &LABELS, 2, Guidance::Unconditional).unwrap();
    for s in [0.5, 2.0, 2.5, 7.0] {
        let g = sampler.guided(&x, &z, &LABELS, 2, Guidance::Scale(s)).unwrap();
        let want = u.zip_map(&c, |u, c| u + s * (c - u)).unwrap();
        assert!(g.max_abs_diff(&want).unwrap() < 1e-12, "s = {}", s);
    }
}

#[test]
fn scale_parsing() {
    assert_eq!(Guidance::from_scale(1.0).unwrap(), Guidance::Conditional);
    assert_eq!(Guidance::from_scale(0.0).unwrap(), Guidance::Unconditional);
    assert_eq!(Guidance::from_scale(2.5).unwrap(), Guidance::Scale(2.5));
    assert!(Guidance::from_scale(-0.1).is_err());
    assert!(Guidance::from_scale(f64::NAN).is_err());
}

#[test]
fn one_step_model_calls_the_generator_once() {
    let data = tiny_data();
    let state = TrainState::new(TrainConfig { steps: 1, ..tiny_config() }, &data).unwrap();
    for g in [Guidance::Conditional, Guidance::Unconditional, Guidance::Scale(2.5)] {
        let sampler = Sampler::from_state(&state, true);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sampler.sample(&LABELS, g, &mut rng).unwrap();
        assert_eq!(sampler.generator_calls(), 1);
    }
    let state = TrainState::new(TrainConfig { steps: 4, ..tiny_config() }, &data).unwrap();
    let sampler = Sampler::from_state(&state, true);
    sampler.sample(&LABELS, Guidance::Scale(2.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(sampler.generator_calls(), 4);
}

#[test]
fn chain_has_t_plus_one_states_ending_at_the_sample() {
    let state = trained();
    let sampler = Sampler::from_state(&state, true);
    let chain = sampler.chain(&LABELS, Guidance::Scale(2.5), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(chain.len(), 4);
    assert_eq!(chain[0].step, None);
    assert!(chain[0].x0_hat.is_none());
    let steps: Vec<_> = chain[1..].iter().map(|s| s.step).collect();
    assert_eq!(steps, vec![Some(2), Some(1), Some(0)]);
    let out = sampler.sample(&LABELS, Guidance::Scale(2.5), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(chain.last().unwrap().x, out.x0);
    assert_eq!(out.timing.per_step_ms.len(), 3);
}

#[test]
fn final_step_is_noise_free() {
    // With the last posterior step deterministic, the output equals
    // coef1·x0_hat + coef2·x_1 exactly.
    let state = trained();
    let sampler = Sampler::from_state(&state, true);
    let chain = sampler.chain(&LABELS, Guidance::Conditional, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let c = state.model.schedule.posterior_coeffs(1).unwrap();
    let x1 = &chain[2].x;
    let last = chain.last().unwrap();
    let want = last.x0_hat.as_ref().unwrap().zip_map(x1, |a, b| c.coef1 * a + c.coef2 * b).unwrap();
    assert!(last.x.max_abs_diff(&want).unwrap() < 1e-15);
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let state = trained();
    let sampler = Sampler::from_state(&state, true);
    let req = SampleRequest { count: 4, seed: 9, ..Default::default() };
    let a = sampler.sample_request(&req).unwrap();
    let b = sampler.sample_request(&req).unwrap();
    assert_eq!(a.x0, b.x0);
    assert_eq!(a.clips, b.clips);
    let c = sampler.sample_request(&SampleRequest { seed: 10, ..req }).unwrap();
    assert!(a.x0.max_abs_diff(&c.x0).unwrap() > 0.0);
}

#[test]
fn critic_parameters_are_never_read() {
    let state = trained();
    let mut poisoned = state.clone();
    for i in 0..poisoned.disc.len() {
        let shape = poisoned.disc.get(i).shape().to_vec();
        *poisoned.disc.get_mut(i) = Tensor::full(&shape, f64::NAN);
    }
    let run = |s: &TrainState| {
        Sampler::from_state(s, true).sample(&LABELS, Guidance::Scale(2.5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap().x0
    };
    assert_eq!(run(&state), run(&poisoned));
}

#[test]
fn ema_and_raw_weights_differ() {
    let state = trained();
    let ema = manual_chain(&state.model, &state.ema, &LABELS, 2).unwrap();
    let raw = manual_chain(&state.model, &state.gen, &LABELS, 2).unwrap();
    let via = Sampler::from_state(&state, false)
        .sample_tensor(&LABELS, Guidance::Conditional, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .0;
    assert_eq!(via, raw);
    assert!(ema.max_abs_diff(&raw).unwrap() > 0.0);
}

#[test]
fn decoded_clips_are_well_formed() {
    let state = trained();
    let sampler = Sampler::from_state(&state, true);
    let out = sampler.sample_request(&SampleRequest { label: Some(2), count: 3, ..Default::default() }).unwrap();
    assert_eq!(out.clips.len(), 3);
    for clip in &out.clips {
        assert_eq!(clip.label, 2);
        assert_eq!(clip.frames.len(), state.model.frames());
        for pose in &clip.frames {
            assert_eq!(pose.rotations.len(), state.model.skeleton.joints());
            for q in &pose.rotations {
                let n: f64 = q.iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }
    let ds = clips_to_dataset(&state.model, &out.clips).unwrap();
    assert_eq!(ds.samples.len(), 3);
    let csv = positions_csv(&state.model, &out.clips).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * state.model.frames() * state.model.skeleton.joints());
}

#[test]
fn out_of_range_label_is_rejected() {
    let state = trained();
    let sampler = Sampler::from_state(&state, true);
    let err = sampler.sample_request(&SampleRequest { label: Some(99), ..Default::default() });
    assert!(matches!(err, Err(Error::InvalidArgument(_))));
}
