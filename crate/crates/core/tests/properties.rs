mod common;

use std::io::Write;

use collapse_lab::autograd::{all_coords, backward, compare_with_finite_diff, loss_logit_grad, Tolerance};
use collapse_lab::cli::{check_instance, train, ExperimentConfig, Preset};
use collapse_lab::closedform::{fm_grad, random_instance, span_check, OracleKind};
use collapse_lab::data::{batch_iter, gen_synthetic, load_csv, Dataset, FieldSchema, SyntheticSpec};
use collapse_lab::diagnostics::{auc, embedding_spectrum, grad_rank_timeline, rankme, GradSnapshot};
use collapse_lab::linalg::{matmul, Matrix};
use collapse_lab::model::{
    bi_interaction, cross_forward, fm_logit, fm_logit_squared_sum, model_forward, Backbone, CrossParams, Head,
    ModelParams, ModelSpec,
};
use collapse_lab::scalar::sigmoid;
use common::{gaussian, random_orthogonal};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(m: &Matrix<f64>) -> Vec<&[f64]> {
    (0..m.rows()).map(|i| m.row(i)).collect()
}

fn toy_dataset(n: usize, fields: usize) -> Dataset {
    let schemas = (0..fields)
        .map(|f| {
            let mut s = FieldSchema::new(format!("f{f}"));
            for t in 0..5 {
                s.intern(&format!("t{t}"));
            }
            s
        })
        .collect();
    let labels = (0..n).map(|i| (i % 2) as u8).collect();
    let indices = (0..n * fields).map(|i| (i % 6) as u32).collect();
    Dataset::new(schemas, labels, indices).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // data

    #[test]
    fn every_sample_once_per_epoch(n in 1usize..300, bs in 1usize..64, seed in any::<u64>()) {
        let ds = toy_dataset(n, 2);
        let it = batch_iter(&ds, bs, seed).unwrap();
        let mut seen = it.order().to_vec();
        let sizes: Vec<usize> = it.map(|b| b.len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes[..sizes.len() - 1].iter().all(|&s| s == bs));
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn indices_stay_below_vocab(
        cells in prop::collection::vec(prop::collection::vec("[a-e]{1,2}", 3), 1..40),
        labels in prop::collection::vec(0u8..2, 40),
        buckets in prop::option::of(2usize..7),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "a,label,b,c").unwrap();
        for (row, y) in cells.iter().zip(&labels) {
            writeln!(f, "{},{},{},{}", row[0], y, row[1], row[2]).unwrap();
        }
        drop(f);
        let ds = load_csv(&path, "label", buckets).unwrap();
        prop_assert_eq!(ds.len(), cells.len());
        let vocab = ds.vocab_sizes();
        for i in 0..ds.len() {
            for (&ix, &v) in ds.sample(i).iter().zip(&vocab) {
                prop_assert!((ix as usize) < v);
            }
        }
    }

    #[test]
    fn synthetic_generation_is_pure(seed in any::<u64>(), r in 1usize..4) {
        let spec = SyntheticSpec {
            num_fields: 3,
            vocab_sizes: vec![4, 5, 6],
            latent_dim: r,
            noise_std: 0.3,
            num_samples: 50,
            seed,
        };
        prop_assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    }

    // model

    #[test]
    fn fm_logit_forms_agree(seed in any::<u64>(), f in 2usize..9, k in 1usize..9) {
        let e = gaussian(&mut ChaCha8Rng::seed_from_u64(seed), f, k);
        let a = fm_logit(&rows(&e)).unwrap();
        let b = fm_logit_squared_sum(&rows(&e)).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
        let bi: f64 = bi_interaction(&rows(&e)).unwrap().iter().sum();
        prop_assert!((bi - a).abs() <= 1e-10);
    }

    #[test]
    fn field_permutation_invariance(seed in any::<u64>(), f in 2usize..7, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = gaussian(&mut rng, f, k);
        let mut perm: Vec<usize> = (0..f).collect();
        perm.shuffle(&mut rng);
        let permuted = Matrix::from_fn(f, k, |i, j| e[(perm[i], j)]);
        let (a, b) = (fm_logit(&rows(&e)).unwrap(), fm_logit(&rows(&permuted)).unwrap());
        prop_assert!((a - b).abs() <= 1e-12);
        let (x, y) = (bi_interaction(&rows(&e)).unwrap(), bi_interaction(&rows(&permuted)).unwrap());
        for (p, q) in x.iter().zip(&y) {
            prop_assert!((p - q).abs() <= 1e-12);
        }

        // cross layers: permute the concat and conjugate the weights by the
        // same block permutation; the output is permuted the same way
        let d = f * k;
        let sigma: Vec<usize> = (0..d).map(|c| perm[c / k] * k + c % k).collect();
        let x0: Vec<f64> = e.as_slice().to_vec();
        let x0p: Vec<f64> = sigma.iter().map(|&s| x0[s]).collect();
        let mut cross = CrossParams::<f64>::zeros(d, 2);
        for layer in &mut cross.layers {
            layer.weight = gaussian(&mut rng, d, d).scale(0.3);
            layer.bias = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
        }
        let mut crossp = cross.clone();
        for (lp, l) in crossp.layers.iter_mut().zip(&cross.layers) {
            lp.weight = Matrix::from_fn(d, d, |i, j| l.weight[(sigma[i], sigma[j])]);
            lp.bias = sigma.iter().map(|&s| l.bias[s]).collect();
        }
        let out = cross_forward(&x0, &cross).unwrap();
        let outp = cross_forward(&x0p, &crossp).unwrap();
        for (i, &s) in sigma.iter().enumerate() {
            prop_assert!((outp[i] - out[s]).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_head_matches_relu_head_when_all_units_active(seed in any::<u64>()) {
        let relu = ModelSpec { embedding_dim: 3, hidden: vec![5, 4], init_std: 0.3, seed, ..ModelSpec::new(Backbone::Fm, Head::PDnn) };
        let linear = ModelSpec { head: Head::LinearPDnn, ..relu.clone() };
        let mut p = ModelParams::<f64>::init(&relu, &[4, 4, 4]).unwrap();
        for layer in &mut p.mlp_mut().unwrap().layers {
            layer.bias.iter_mut().for_each(|b| *b = 50.0);
            let w = layer.weight.clone();
            layer.weight = Matrix::from_fn(w.rows(), w.cols(), |i, j| w[(i, j)].abs());
        }
        let mut q = ModelParams::<f64>::zeros(&linear, &[4, 4, 4]).unwrap();
        for (dst, src) in q.tensors_mut().into_iter().zip(p.tensors()) {
            dst.copy_from_slice(src.data);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<u32> = (0..18).map(|_| rng.random_range(0..4)).collect();
        let batch = collapse_lab::data::Batch::new(vec![0; 6], idx, 3).unwrap();
        let a = model_forward(&relu, &p, &batch).unwrap();
        prop_assert!(a.relu_masks().iter().all(|&m| m));
        let b = model_forward(&linear, &q, &batch).unwrap();
        prop_assert_eq!(a.logits(), b.logits());
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), variant in 0usize..10) {
        let (b, h) = ModelSpec::variants().nth(variant).unwrap();
        let (spec, params, batch) = check_instance(b, h, seed).unwrap();
        let t1 = model_forward(&spec, &params, &batch).unwrap();
        let t2 = model_forward(&spec, &params, &batch).unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        prop_assert_eq!(bits(t1.logits()), bits(t2.logits()));
        prop_assert_eq!(t1.relu_masks(), t2.relu_masks());
    }

    // autograd

    #[test]
    fn logit_gradient_of_bce(phi in -30.0f64..30.0, y in 0u8..2) {
        let p = sigmoid(phi);
        let y_f = y as f64;
        // chain rule through dL/dp and dp/dΦ, before simplification
        let chained = (-y_f / p + (1.0 - y_f) / (1.0 - p)) * p * (1.0 - p);
        prop_assert!((loss_logit_grad(p, y) - chained).abs() <= 1e-12);
        prop_assert_eq!(loss_logit_grad(p, y), p - y_f);
    }

    #[test]
    fn backward_matches_finite_differences(seed in any::<u64>(), variant in 0usize..10) {
        let (b, h) = ModelSpec::variants().nth(variant).unwrap();
        let (spec, params, batch) = check_instance(b, h, seed).unwrap();
        let trace = model_forward(&spec, &params, &batch).unwrap();
        let exact = backward(&params, &trace, batch.labels()).unwrap();
        let mut coords = all_coords(&params);
        coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        coords.truncate(40);
        let r = compare_with_finite_diff(&spec, &params, &batch, &exact, &coords, 1e-4, Tolerance::default()).unwrap();
        prop_assert!(r.passed(), "{}: {:?}", spec.name(), r.failures);
    }

    // closed forms

    #[test]
    fn fm_grad_is_linear_and_confined(seed in any::<u64>(), f in 2usize..7, k in 1usize..9, c in -5.0f64..5.0) {
        let e = gaussian(&mut ChaCha8Rng::seed_from_u64(seed), f, k);
        let scaled = e.scale(c);
        for i in 0..f {
            let g = fm_grad(&rows(&e), i).unwrap();
            let gs = fm_grad(&rows(&scaled), i).unwrap();
            for (a, b) in g.iter().zip(&gs) {
                prop_assert!((c * a - b).abs() <= 1e-12);
            }
            let basis: Vec<&[f64]> = (0..f).filter(|&j| j != i).map(|j| e.row(j)).collect();
            prop_assert!(span_check(&g, &basis).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn closed_forms_match_backward(seed in any::<u64>(), kind in 0usize..3) {
        let kind = OracleKind::ALL[kind];
        let (inst, _) = random_instance(kind, &mut ChaCha8Rng::seed_from_u64(seed), 1e-6);
        prop_assert!(inst.max_rel_error().unwrap() <= 1e-10);
    }

    // diagnostics

    #[test]
    fn rankme_invariances(seed in any::<u64>(), n in 2usize..30, k in 2usize..12, c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, n, k);
        let base = rankme(&z).unwrap();
        prop_assert!(base.value >= 1.0 && base.value <= n.min(k) as f64 + 1e-9);
        for c in [c, -c] {
            prop_assert!((rankme(&z.scale(c)).unwrap().value - base.value).abs() <= 1e-12);
        }
        let q = random_orthogonal(&mut rng, k);
        prop_assert!((rankme(&matmul(&z, &q).unwrap()).unwrap().value - base.value).abs() <= 1e-8);
    }

    #[test]
    fn rankme_counts_equal_singular_values(seed in any::<u64>(), n in 2usize..16, r_frac in 0.0f64..1.0, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 1 + ((n - 1) as f64 * r_frac) as usize;
        let u = random_orthogonal(&mut rng, n);
        let v = random_orthogonal(&mut rng, n);
        let d = Matrix::diag(&(0..n).map(|i| if i < r { s } else { 0.0 }).collect::<Vec<_>>());
        let z = matmul(&matmul(&u, &d).unwrap(), &v.transpose()).unwrap();
        prop_assert!((rankme(&z).unwrap().value - r as f64).abs() <= 1e-6);
    }

    #[test]
    fn auc_antisymmetry(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auc(&labels, &scores).unwrap() + auc(&labels, &neg).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn spectrum_ignores_row_offsets(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, 20, d);
        let shifted = Matrix::from_fn(20, d, |i, j| z[(i, j)] + 2.0 + j as f64);
        let (a, b) = (embedding_spectrum(&z).unwrap(), embedding_spectrum(&shifted).unwrap());
        for (x, y) in a.sigma.iter().zip(&b.sigma) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn gaussian_covariance_spectrum_is_flat() {
    // B = 50·D. Eigenvalues of the sample covariance fill the
    // Marchenko–Pastur support (1 ± √(D/B))², blurred by per-component
    // fluctuations of order √(2/B); their mean is trace/D ≈ 1.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in [2, 3, 5, 10, 24, 40] {
        let b = 50 * d;
        let s = embedding_spectrum(&gaussian(&mut rng, b, d)).unwrap();
        let q = (d as f64 / b as f64).sqrt();
        let blur = 3.0 * (2.0 / b as f64).sqrt();
        let (lo, hi) = ((1.0 - q).powi(2) - blur, (1.0 + q).powi(2) + blur);
        assert!(s.sigma.iter().all(|&x| x >= lo && x <= hi), "D={d}: {:?}", s.sigma);
        let mean = s.sigma.iter().sum::<f64>() / d as f64;
        assert!((mean - 1.0).abs() <= 3.0 * (2.0 / (b * d) as f64).sqrt(), "D={d}: mean {mean}");
    }
}

#[test]
fn gaussian_snapshot_has_high_rankme() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = 16;
    let snaps = vec![GradSnapshot { step: 0, matrix: gaussian(&mut rng, 50 * k, k) }];
    let t = grad_rank_timeline(&snaps).unwrap();
    assert!(t[0].1.value >= 0.9 * k as f64, "{}", t[0].1.value);
}

#[test]
fn training_is_bitwise_deterministic() {
    let text = "seed = 5\nsynth.samples = 600\nsynth.fields = 4\nmodel.head = s_dnn\nmodel.hidden = 8\ntrain.epochs = 2\ntrain.batch_size = 32\ndiag.spectrum_samples = 64\n";
    let cfg = ExperimentConfig::resolve(Preset::Desk, Some(text), None).unwrap();
    let a = train(&cfg, |_| Ok(())).unwrap();
    let b = train(&cfg, |_| Ok(())).unwrap();
    let bits = |p: &ModelParams<f64>| -> Vec<u64> {
        p.tensors().iter().flat_map(|t| t.data.iter().map(|x| x.to_bits())).collect()
    };
    assert_eq!(bits(&a.params), bits(&b.params));
    assert_eq!(a.epochs, b.epochs);
    let other = ExperimentConfig::resolve(Preset::Desk, Some(text), Some(6)).unwrap();
    assert_ne!(bits(&train(&other, |_| Ok(())).unwrap().params), bits(&a.params));
}
