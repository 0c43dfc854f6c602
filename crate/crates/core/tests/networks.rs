mod common;

use common::{desk_discriminator, desk_generator, net_inputs, CLASSES, FRAMES, FRAME_DIM};
use motion_ddgan::networks::{condition_onehot, positional_table, sinusoidal_batch, sinusoidal_embed};
use motion_ddgan::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn step_embedding_at_zero_and_norm() {
    let e = sinusoidal_embed(0.0, 32).unwrap();
    assert!(e.data()[..16].iter().all(|&v| v == 0.0));
    assert!(e.data()[16..].iter().all(|&v| v == 1.0));
    for t in [1.0, 7.0, 49.0] {
        let n: f64 = sinusoidal_embed(t, 32).unwrap().data().iter().map(|v| v * v).sum();
        assert!((n - 16.0).abs() < 1e-12);
    }
    assert!(sinusoidal_embed(1.0, 7).is_err());
    // first frequency is 1, so the first entry is sin(t)
    assert_eq!(sinusoidal_embed(2.0, 8).unwrap().data()[0], 2f64.sin());
    let b = sinusoidal_batch(&[0, 3], 8).unwrap();
    assert_eq!(b.shape(), &[2, 8]);
    assert_eq!(b.index_first(1).unwrap(), sinusoidal_embed(3.0, 8).unwrap());
    assert_eq!(positional_table(5, 8).unwrap().index_first(4).unwrap(), sinusoidal_embed(4.0, 8).unwrap());
}

#[test]
fn onehot_rows_and_null_slot() {
    let t = condition_onehot(&[Some(0), None, Some(5)], 6).unwrap();
    assert_eq!(t.shape(), &[3, 7]);
    let rows: Vec<Vec<f64>> = t.data().chunks(7).map(|r| r.to_vec()).collect();
    assert_eq!(rows[0], vec![1., 0., 0., 0., 0., 0., 0.]);
    assert_eq!(rows[1], vec![0., 0., 0., 0., 0., 0., 1.]);
    assert_eq!(rows[2], vec![0., 0., 0., 0., 0., 1., 0.]);
    assert!(condition_onehot(&[Some(6)], 6).is_err());
}

#[test]
fn generator_shapes_and_token_count() {
    let gen = desk_generator();
    assert_eq!(gen.tokens(), FRAMES + 3);
    let p = gen.init(&mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(p.numel(), gen.param_count());
    let inp = net_inputs(32, 1);
    let g = Graph::new();
    let vars = p.bind(&g);
    let out = gen.forward(&vars, g.leaf(inp.x_t.clone()), g.leaf(inp.z.clone()), &inp.labels, &inp.steps, None).unwrap();
    assert_eq!(out.shape(), vec![2, FRAMES, FRAME_DIM]);
    let bad = gen.forward(&vars, g.leaf(inp.x_t), g.leaf(inp.z), &inp.labels, &[1], None);
    assert!(bad.is_err());
}

#[test]
fn generator_output_depends_on_latent_and_label() {
    let gen = desk_generator();
    let p = gen.init(&mut ChaCha8Rng::seed_from_u64(0));
    let inp = net_inputs(32, 2);
    let run = |z: &Tensor, labels: &[Option<usize>]| {
        let g = Graph::new();
        let vars = p.bind(&g);
        gen.forward(&vars, g.leaf(inp.x_t.clone()), g.leaf(z.clone()), labels, &inp.steps, None).unwrap().value()
    };
    let base = run(&inp.z, &inp.labels);
    let z2 = Tensor::randn(&[2, 32], &mut ChaCha8Rng::seed_from_u64(9));
    assert!(base.max_abs_diff(&run(&z2, &inp.labels)).unwrap() > 1e-6);
    assert!(base.max_abs_diff(&run(&inp.z, &[Some(4), None])).unwrap() > 1e-6);
}

#[test]
fn dropout_masks_make_training_forward_reproducible() {
    let gen = desk_generator();
    let p = gen.init(&mut ChaCha8Rng::seed_from_u64(0));
    let inp = net_inputs(32, 3);
    let run = |mask_seed: u64| {
        let masks = gen.sample_masks(2, &mut ChaCha8Rng::seed_from_u64(mask_seed));
        let g = Graph::new();
        let vars = p.bind(&g);
        gen.forward(&vars, g.leaf(inp.x_t.clone()), g.leaf(inp.z.clone()), &inp.labels, &inp.steps, Some(&masks))
            .unwrap()
            .value()
    };
    assert_eq!(run(4), run(4));
    assert!(run(4).max_abs_diff(&run(5)).unwrap() > 0.0);
}

#[test]
fn critic_scores_per_item_and_reads_the_condition() {
    let disc = desk_discriminator();
    let p = disc.init(&mut ChaCha8Rng::seed_from_u64(0));
    let inp = net_inputs(32, 4);
    let score = |labels: &[Option<usize>], steps: &[usize]| {
        let g = Graph::new();
        let vars = p.bind(&g);
        disc.forward(&vars, g.leaf(inp.x_prev.clone()), g.leaf(inp.x_t.clone()), labels, steps).unwrap().value()
    };
    let s = score(&inp.labels, &inp.steps);
    assert_eq!(s.shape(), &[2]);
    assert!(s.max_abs_diff(&score(&[Some(0), Some(1)], &inp.steps)).unwrap() > 0.0);
    assert!(s.max_abs_diff(&score(&inp.labels, &[4, 1])).unwrap() > 0.0);
    assert_eq!(disc.input_dim(), 2 * FRAMES * FRAME_DIM + 32 + CLASSES + 1);
    assert_eq!(p.numel(), disc.param_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generator_stays_finite_on_wide_inputs(seed in 0u64..1000, t in 1usize..50) {
        let gen = desk_generator();
        let p = gen.init(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let x = Tensor::randn(&[2, FRAMES, FRAME_DIM], &mut rng).map(|v| 3.0 * v);
        let z = Tensor::randn(&[2, 32], &mut rng).map(|v| 3.0 * v);
        let g = Graph::new();
        let vars = p.bind(&g);
        let out = gen.forward(&vars, g.leaf(x), g.leaf(z), &[Some(1), None], &[t, t], None).unwrap().value();
        prop_assert!(out.is_finite());
    }
}
