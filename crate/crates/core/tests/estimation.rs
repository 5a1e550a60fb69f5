use approx::assert_relative_eq;
use choicekit::estimation::{hessian, StopReason};
use choicekit::nested::{joint, NestStructure};
use choicekit::{
    fit, standard_errors, ChoiceDataset, ConditionalLogit, EarlyStop, Estimable, FitOptions, NestedLogit, Norm,
    Observable, Optimizer, Regularization,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lbfgs() -> FitOptions {
    FitOptions {
        optimizer: Optimizer::Lbfgs,
        learning_rate: 0.1,
        num_epochs: 500,
        early_stop: None,
        grad_tol: 1e-9,
        ..FitOptions::default()
    }
}

fn shares_data() -> (ChoiceDataset, Vec<f64>) {
    let counts = [13usize, 7, 25, 5];
    let mut items = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        items.extend(std::iter::repeat_n(i, c));
    }
    let n = items.len() as f64;
    let shares = counts.iter().map(|&c| c as f64 / n).collect();
    (ChoiceDataset::builder(items).build().unwrap(), shares)
}

#[test]
fn saturated_intercepts_reproduce_shares() {
    let (d, shares) = shares_data();
    for opt in [Optimizer::Lbfgs, Optimizer::Adam] {
        let mut m = ConditionalLogit::from_formula("(1|item-full)", &d, 4, None).unwrap();
        let opts = FitOptions {
            optimizer: opt,
            learning_rate: if opt == Optimizer::Lbfgs { 0.1 } else { 0.05 },
            num_epochs: 20000,
            early_stop: None,
            grad_tol: 1e-9,
            ..FitOptions::default()
        };
        let r = fit(&mut m, &d, &opts).unwrap();
        assert!(r.converged, "{opt}: {:?}", r.stop_reason);
        let sub = d.subset(&[0]).unwrap();
        let (lp, _) = m.log_prob(&sub).unwrap();
        for i in 0..4 {
            assert!((lp[[0, i]].exp() - shares[i]).abs() < 1e-6, "{opt} item {i}");
        }
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let (d, _) = shares_data();
    let mut m = ConditionalLogit::from_formula("(1|item)", &d, 4, None).unwrap();
    let r = fit(&mut m, &d, &FitOptions { num_epochs: 0, ..FitOptions::default() }).unwrap();
    assert_eq!(r.epochs, 0);
    assert!(r.trace.is_empty());
    assert!(!r.converged);
    assert_eq!(r.theta, vec![0.0; 3]);
    assert_relative_eq!(r.nll, 50.0 * 4f64.ln(), max_relative = 1e-12);
}

fn random_clm_data(n: usize, seed: u64) -> ChoiceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 40;
    let items: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
    let sessions: Vec<usize> = (0..n).map(|_| rng.random_range(0..s)).collect();
    let users: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
    let x = Array3::from_shape_fn((s, 5, 2), |_| rng.random_range(-1.0..1.0));
    let z = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
    ChoiceDataset::builder(items)
        .session_index(sessions)
        .user_index(users)
        .observable(Observable::from_tensor("itemsession_x", x).unwrap())
        .observable(Observable::from_matrix("user_z", z).unwrap())
        .build()
        .unwrap()
}

#[test]
fn full_batch_runs_are_bit_identical() {
    let d = random_clm_data(3000, 1);
    let f = "(itemsession_x|constant) + (user_z|item) + (1|item)";
    for opt in [Optimizer::Lbfgs, Optimizer::Adam, Optimizer::Gd] {
        let opts = FitOptions {
            optimizer: opt,
            num_epochs: 60,
            ..FitOptions::default()
        };
        let mut a = ConditionalLogit::from_formula(f, &d, 5, None).unwrap();
        let mut b = a.clone();
        let ra = fit(&mut a, &d, &opts).unwrap();
        let rb = fit(&mut b, &d, &opts).unwrap();
        let bits = |r: &choicekit::FitResult| -> Vec<(u64, u64)> {
            r.trace.iter().map(|t| (t.nll.to_bits(), t.grad_norm.to_bits())).collect()
        };
        assert_eq!(bits(&ra), bits(&rb));
        assert_eq!(ra.theta, rb.theta);
    }
}

#[test]
fn mini_batch_runs_are_reproducible() {
    let d = random_clm_data(500, 2);
    let opts = FitOptions {
        batch_size: 64,
        num_epochs: 5,
        seed: 11,
        ..FitOptions::default()
    };
    let run = || {
        let mut m = ConditionalLogit::from_formula("(itemsession_x|constant)", &d, 5, None).unwrap();
        fit(&mut m, &d, &opts).unwrap().theta
    };
    assert_eq!(run(), run());
    let other = {
        let mut m = ConditionalLogit::from_formula("(itemsession_x|constant)", &d, 5, None).unwrap();
        fit(&mut m, &d, &FitOptions { seed: 12, ..opts.clone() }).unwrap().theta
    };
    assert_ne!(run(), other);
}

#[test]
fn lbfgs_trace_is_monotone() {
    let d = random_clm_data(2000, 3);
    let mut m =
        ConditionalLogit::from_formula("(itemsession_x|constant) + (user_z|item) + (1|item)", &d, 5, None).unwrap();
    let r = fit(&mut m, &d, &lbfgs()).unwrap();
    assert!(r.epochs > 5);
    for w in r.trace.windows(2) {
        assert!(w[1].nll <= w[0].nll + 1e-9 * w[0].nll.abs(), "{} -> {}", w[0].nll, w[1].nll);
    }
}

#[test]
fn early_stop_ends_flat_runs() {
    let (d, _) = shares_data();
    let mut m = ConditionalLogit::from_formula("(1|item-full)", &d, 4, None).unwrap();
    let opts = FitOptions {
        optimizer: Optimizer::Adam,
        learning_rate: 0.05,
        num_epochs: 30000,
        grad_tol: 0.0,
        early_stop: Some(EarlyStop::default()),
        ..FitOptions::default()
    };
    let r = fit(&mut m, &d, &opts).unwrap();
    assert_eq!(r.stop_reason, StopReason::EarlyStop);
    assert!(r.converged);
    assert!(r.epochs < 30000 && r.epochs > 50);
    assert_eq!(r.trace.len(), r.epochs);
}

#[test]
fn zero_weight_regularization_is_a_no_op() {
    let d = random_clm_data(800, 4);
    let f = "(itemsession_x|constant) + (1|item)";
    let opts = FitOptions {
        num_epochs: 40,
        ..FitOptions::default()
    };
    let mut a = ConditionalLogit::from_formula(f, &d, 5, None).unwrap();
    let mut b = a
        .clone()
        .with_regularization(Some(Regularization::new(Norm::L1, 0.0).unwrap()));
    let ra = fit(&mut a, &d, &opts).unwrap();
    let rb = fit(&mut b, &d, &opts).unwrap();
    assert_eq!(ra.trace, rb.trace);
}

/// Binary choice: item 1 has covariate `x_s`, item 0 has 0.
fn binary_data(n: usize, beta: f64, seed: u64) -> (ChoiceDataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let items = x
        .iter()
        .map(|&xs| {
            let p1 = 1.0 / (1.0 + (-beta * xs).exp());
            usize::from(rng.random::<f64>() < p1)
        })
        .collect();
    let mut obs = Array3::zeros((n, 2, 1));
    for (s, &xs) in x.iter().enumerate() {
        obs[[s, 1, 0]] = xs;
    }
    let d = ChoiceDataset::builder(items)
        .observable(Observable::from_tensor("itemsession_x", obs).unwrap())
        .build()
        .unwrap();
    (d, x)
}

#[test]
fn standard_error_matches_fisher_information() {
    let (d, x) = binary_data(20000, 0.8, 5);
    let mut m = ConditionalLogit::from_formula("(itemsession_x|constant)", &d, 2, None).unwrap();
    let r = fit(&mut m, &d, &FitOptions { compute_se: true, ..lbfgs() }).unwrap();
    let b = r.theta[0];
    assert!((b - 0.8).abs() < 0.05);
    let info: f64 = x
        .iter()
        .map(|&xs| {
            let p = 1.0 / (1.0 + (-b * xs).exp());
            p * (1.0 - p) * xs * xs
        })
        .sum();
    let se = r.se.unwrap()[0];
    assert_relative_eq!(se, 1.0 / info.sqrt(), max_relative = 1e-4);
}

#[test]
fn regularized_models_refuse_standard_errors() {
    let (d, _) = binary_data(100, 0.8, 6);
    let m = ConditionalLogit::from_formula("(itemsession_x|constant)", &d, 2, None)
        .unwrap()
        .with_regularization(Some(Regularization::new(Norm::L2, 0.5).unwrap()));
    assert_eq!(standard_errors(&m, &d).unwrap_err().name(), "RegularizedModel");
}

#[test]
fn separation_is_flagged() {
    // Item 1 chosen exactly when x > 0.
    let x = [-1.5, -0.5, 0.7, 1.2];
    let mut obs = Array3::zeros((4, 2, 1));
    for (s, &xs) in x.iter().enumerate() {
        obs[[s, 1, 0]] = xs;
    }
    let d = ChoiceDataset::builder(vec![0, 0, 1, 1])
        .observable(Observable::from_tensor("itemsession_x", obs).unwrap())
        .build()
        .unwrap();
    let mut m = ConditionalLogit::from_formula("(itemsession_x|constant)", &d, 2, None).unwrap();
    let r = fit(&mut m, &d, &FitOptions { compute_se: true, ..lbfgs() }).unwrap();
    let se_failed = standard_errors(&m, &d).map_err(|e| e.name());
    let flagged = se_failed == Err("SingularHessian") || r.warnings.iter().any(|w| w.contains("separable"));
    assert!(flagged, "warnings: {:?}, se: {:?}", r.warnings, se_failed);
}

#[test]
fn lambda_standard_error_uses_delta_method() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 4000;
    let sessions = 200;
    let x = Array3::from_shape_fn((sessions, 4, 1), |_| rng.random_range(-1.0..1.0));
    let nests = NestStructure::new(vec![vec![0, 1], vec![2, 3]], true).unwrap();
    // Draw choices from a nested logit with lambda = 0.6, beta = 1.2.
    let sess: Vec<usize> = (0..n).map(|_| rng.random_range(0..sessions)).collect();
    let lam: f64 = 0.6;
    let items: Vec<usize> = sess
        .iter()
        .map(|&s| {
            let t: Vec<f64> = (0..4).map(|i| 1.2 * x[[s, i, 0]]).collect();
            let iv: Vec<f64> = [[0, 1], [2, 3]]
                .iter()
                .map(|nest| nest.iter().map(|&j| (t[j] / lam).exp()).sum::<f64>().ln())
                .collect();
            let denom: f64 = iv.iter().map(|v| (lam * v).exp()).sum();
            let p: Vec<f64> = (0..4)
                .map(|i| {
                    let k = i / 2;
                    (t[i] / lam - iv[k]).exp() * (lam * iv[k]).exp() / denom
                })
                .collect();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    return i;
                }
            }
            3
        })
        .collect();
    let ds = ChoiceDataset::builder(items)
        .session_index(sess)
        .observable(Observable::from_tensor("itemsession_x", x).unwrap())
        .build()
        .unwrap();
    let data = joint(ds, None).unwrap();
    let mut m = NestedLogit::from_formulas("", "(itemsession_x|constant)", &data, nests, None).unwrap();
    let r = fit(&mut m, &data, &FitOptions { compute_se: true, ..lbfgs() }).unwrap();
    assert!(r.converged, "{:?}", r.stop_reason);
    let rows = m.coefficient_rows(r.se.as_deref());
    let lam_row = rows.iter().find(|r| r.coefficient == "lambda").unwrap();
    assert!((lam_row.value - 0.6).abs() < 0.1, "lambda {}", lam_row.value);

    // Direct oracle: Hessian of the NLL in (beta, lambda) by second differences of values.
    let nll = |beta: f64, l: f64| -> f64 {
        let mut mm = m.clone();
        mm.set_theta(&[beta, l.ln()]).unwrap();
        mm.neg_log_likelihood(&data).unwrap()
    };
    let (b0, l0) = (r.theta[0], r.theta[1].exp());
    let h = 1e-4;
    let hbb = (nll(b0 + h, l0) - 2.0 * nll(b0, l0) + nll(b0 - h, l0)) / (h * h);
    let hll = (nll(b0, l0 + h) - 2.0 * nll(b0, l0) + nll(b0, l0 - h)) / (h * h);
    let hbl = (nll(b0 + h, l0 + h) - nll(b0 + h, l0 - h) - nll(b0 - h, l0 + h) + nll(b0 - h, l0 - h)) / (4.0 * h * h);
    let det = hbb * hll - hbl * hbl;
    let se_direct = (hbb / det).sqrt();
    assert_relative_eq!(lam_row.se.unwrap(), se_direct, max_relative = 1e-3);
    let _ = hessian(&m, &data, 1e-5).unwrap();
}

#[test]
fn divergence_guard_halves_learning_rate() {
    let (d, _) = shares_data();
    let mut m = ConditionalLogit::from_formula("(1|item-full)", &d, 4, None).unwrap();
    let opts = FitOptions {
        optimizer: Optimizer::Gd,
        learning_rate: 1e308,
        num_epochs: 3,
        ..FitOptions::default()
    };
    match fit(&mut m, &d, &opts) {
        Ok(r) => assert!(r.learning_rate < 1e308 && r.warnings.iter().any(|w| w.contains("halved"))),
        Err(e) => assert_eq!(e.name(), "Diverged"),
    }
}
