use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use pulab::data::{make_gaussian_mixture, make_pu_split, make_two_moons, GaussianComponent, Label, LabeledPool};
use pulab::metrics::{frechet_distance, GaussianFit};
use pulab::nn::{init_params, reinit, AdamConfig, Graph, Mode, NetworkSpec, ParamStore, Tracking};
use pulab::seed::SeededRng;
use pulab::Tensor;

fn rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

fn adam_steps(spec: &NetworkSpec, params: &mut ParamStore, x: &Tensor, targets: &[f64], steps: usize) {
    let cfg = AdamConfig {
        lr: 1e-2,
        ..AdamConfig::default()
    };
    let mut drop = rng(99);
    for _ in 0..steps {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = pulab::nn::forward(&mut g, spec, params, xv, Mode::Train, Tracking::Trainable, &mut drop).unwrap();
        let loss = g.bce(y, targets).unwrap();
        let grads = g.backward(loss).unwrap();
        params.load_grads(&grads).unwrap();
        params.adam_step(&cfg).unwrap();
    }
}

#[test]
fn reinit_then_train_matches_fresh_training() {
    let spec = NetworkSpec::classifier(2, &[8, 8], Some(0.5)).unwrap();
    let x = Tensor::new(vec![6, 2], (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let t = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];

    let mut reused = init_params(&spec, &mut rng(1)).unwrap();
    adam_steps(&spec, &mut reused, &x, &t, 10);
    reinit(&spec, &mut reused, &mut rng(2)).unwrap();
    assert!(reused.params().iter().all(|p| p.step_count == 0
        && p.adam_m.data().iter().all(|&v| v == 0.0)
        && p.adam_v.data().iter().all(|&v| v == 0.0)));
    adam_steps(&spec, &mut reused, &x, &t, 10);

    let mut fresh = init_params(&spec, &mut rng(2)).unwrap();
    adam_steps(&spec, &mut fresh, &x, &t, 10);
    assert_eq!(reused, fresh);
}

#[test]
fn labeled_positives_are_uniform_over_seeds() {
    let n_pos = 20;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n_pos {
        data.extend([i as f64, 0.0]);
        labels.push(if i < n_pos { Label::Positive } else { Label::Negative });
    }
    let pool = LabeledPool::new(Tensor::new(vec![2 * n_pos, 2], data).unwrap(), labels).unwrap();
    let (n_p, seeds) = (5, 1000);
    let mut hits = vec![0usize; n_pos];
    for seed in 0..seeds {
        let ds = make_pu_split(&pool, 0.5, n_p, 10, 4, &mut rng(seed)).unwrap();
        for &i in &ds.provenance().positive {
            hits[i] += 1;
        }
    }
    let p = n_p as f64 / n_pos as f64;
    let se = (p * (1.0 - p) / seeds as f64).sqrt();
    for (i, &h) in hits.iter().enumerate() {
        let freq = h as f64 / seeds as f64;
        assert!((freq - p).abs() < 4.0 * se, "positive {i}: frequency {freq}");
    }
}

fn centroid(pool: &LabeledPool, label: Label) -> [f64; 2] {
    let idx = pool.indices_of(label);
    let mut c = [0.0; 2];
    for &i in &idx {
        c[0] += pool.features.row(i)[0];
        c[1] += pool.features.row(i)[1];
    }
    c.map(|v| v / idx.len() as f64)
}

// Population accuracy of the centroid rule on these moons, from a 10^6-point
// numpy simulation: 0.787.
const MOONS_CENTROID_ACCURACY: f64 = 0.787;

#[test]
fn nearest_centroid_matches_simulated_accuracy() {
    let train = make_two_moons(2000, 0.05, &mut rng(3)).unwrap();
    let test = make_two_moons(2000, 0.05, &mut rng(4)).unwrap();
    let (cp, cn) = (centroid(&train, Label::Positive), centroid(&train, Label::Negative));
    let d2 = |a: [f64; 2], x: f64, y: f64| (a[0] - x).powi(2) + (a[1] - y).powi(2);
    let correct = (0..test.len())
        .filter(|&i| {
            let (x, y) = (test.features.row(i)[0], test.features.row(i)[1]);
            let guess = if d2(cp, x, y) < d2(cn, x, y) { Label::Positive } else { Label::Negative };
            guess == test.labels[i]
        })
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!((acc - MOONS_CENTROID_ACCURACY).abs() < 0.03, "{acc}");
}

#[test]
fn distant_gaussians_are_linearly_separable() {
    let comp = |mean: Vec<f64>, label| GaussianComponent {
        mean,
        cov: vec![1.0, 0.0, 0.0, 1.0],
        count: 5000,
        label,
    };
    let pool = make_gaussian_mixture(
        &[comp(vec![0.0, 0.0], Label::Positive), comp(vec![10.0, 0.0], Label::Negative)],
        &mut rng(5),
    )
    .unwrap();
    let correct = (0..pool.len())
        .filter(|&i| {
            let guess = if pool.features.row(i)[0] < 5.0 { Label::Positive } else { Label::Negative };
            guess == pool.labels[i]
        })
        .count();
    assert!(correct as f64 / pool.len() as f64 >= 0.999);
}

fn random_spd(d: usize, r: &mut SeededRng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    &b * b.transpose() + DMatrix::identity(d, d) * 0.1
}

// Denman-Beavers iteration for the principal square root of a matrix with
// positive real spectrum.
fn sqrtm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut y = a.clone();
    let mut z = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..100 {
        let yi = y.clone().try_inverse().unwrap();
        let zi = z.clone().try_inverse().unwrap();
        y = (&y + zi) * 0.5;
        z = (&z + yi) * 0.5;
    }
    y
}

#[test]
fn frechet_matches_product_square_root_oracle() {
    let mut r = rng(6);
    for _ in 0..20 {
        let (sa, sb) = (random_spd(4, &mut r), random_spd(4, &mut r));
        let ma: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
        let mb: Vec<f64> = (0..4).map(|_| r.sample(StandardNormal)).collect();
        let mean_term: f64 = ma.iter().zip(&mb).map(|(a, b)| (a - b).powi(2)).sum();
        let oracle = mean_term + (&sa + &sb).trace() - 2.0 * sqrtm(&(&sa * &sb)).trace();
        let fit = |m: Vec<f64>, s: DMatrix<f64>| GaussianFit {
            mean: m.into(),
            cov: s,
        };
        let got = frechet_distance(&fit(ma, sa), &fit(mb, sb)).unwrap();
        assert!((got - oracle).abs() < 1e-8, "{got} vs {oracle}");
    }
}
