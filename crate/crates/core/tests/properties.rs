use choicekit::formula::parse_formula;
use choicekit::nested::{joint, NestStructure};
use choicekit::{
    Availability, CategoryPartition, ChoiceDataset, ConditionalLogit, EarlyStop, FitOptions, NestedLogit, Observable,
    Optimizer,
};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random dataset with every observable kind and optional two-category split.
fn dataset(seed: u64, n: usize, items: usize, categories: bool) -> ChoiceDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (users, sessions) = (rng.random_range(1..4), rng.random_range(1..5));
    let cat: Vec<usize> = (0..items).map(|i| usize::from(categories && i >= items / 2)).collect();
    let mut avail = vec![vec![false; items]; sessions];
    for row in &mut avail {
        for a in row.iter_mut() {
            *a = rng.random_bool(0.7);
        }
        for c in 0..=cat[items - 1] {
            let first = cat.iter().position(|&x| x == c).unwrap();
            row[first] = true;
        }
    }
    let session: Vec<usize> = (0..n).map(|_| rng.random_range(0..sessions)).collect();
    let chosen: Vec<usize> = session
        .iter()
        .map(|&s| loop {
            let i = rng.random_range(0..items);
            if avail[s][i] {
                break i;
            }
        })
        .collect();
    let mut u = || rng.random_range(-1.0..1.0);
    let obs = [
        Observable::from_matrix("user_a", Array2::from_shape_fn((users, 2), |_| u())).unwrap(),
        Observable::from_matrix("item_b", Array2::from_shape_fn((items, 1), |_| u())).unwrap(),
        Observable::from_matrix("session_c", Array2::from_shape_fn((sessions, 1), |_| u())).unwrap(),
        Observable::from_tensor("itemsession_d", Array3::from_shape_fn((sessions, items, 2), |_| u())).unwrap(),
    ];
    let users_of: Vec<usize> = (0..n).map(|r| (r * 7 + seed as usize) % users).collect();
    let mut b = ChoiceDataset::builder(chosen)
        .user_index(users_of)
        .session_index(session)
        .num_users(users)
        .num_sessions(sessions)
        .num_items(items)
        .availability(Availability::from_rows(&avail).unwrap())
        .observables(obs);
    if categories {
        b = b.categories(CategoryPartition::new(cat).unwrap());
    }
    b.build().unwrap()
}

const FORMULA: &str = "(user_a|item) + (item_b|user) + (session_c|item-full) + (itemsession_d|constant) + (1|item-full)";

fn model(data: &ChoiceDataset, seed: u64) -> ConditionalLogit {
    let mut m = ConditionalLogit::from_formula(FORMULA, data, data.num_items(), Some(data.num_users())).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let theta: Vec<f64> = (0..m.num_params()).map(|_| rng.random_range(-2.0..2.0)).collect();
    m.set_theta(&theta).unwrap();
    m
}

/// Offset of the `(1|item-full)` block, the last one in [`FORMULA`].
fn intercept_offset(m: &ConditionalLogit) -> usize {
    m.num_params() - m.num_items()
}

fn category_of(data: &ChoiceDataset, i: usize) -> usize {
    data.categories().map_or(0, |c| c.category_of(i))
}

prop_compose! {
    fn instance()(seed in any::<u64>(), n in 1usize..60, items in 2usize..7, cats in any::<bool>()) -> ChoiceDataset {
        dataset(seed, n, items, cats && items >= 4)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mutating_a_subset_leaves_the_parent_alone(d in instance(), pick in proptest::collection::vec(any::<prop::sample::Index>(), 1..20)) {
        let ix: Vec<usize> = pick.iter().map(|p| p.index(d.len())).collect();
        let before = d.clone();
        let mut sub = d.subset(&ix).unwrap();
        sub.observable_mut("user_a").unwrap().values_mut().fill(9.0);
        sub.item_index_mut().fill(0);
        prop_assert_eq!(&d, &before);
    }

    #[test]
    fn subsets_compose(d in instance(), a in proptest::collection::vec(any::<prop::sample::Index>(), 1..20),
                       b in proptest::collection::vec(any::<prop::sample::Index>(), 1..20)) {
        let a: Vec<usize> = a.iter().map(|p| p.index(d.len())).collect();
        let b: Vec<usize> = b.iter().map(|p| p.index(a.len())).collect();
        let ab: Vec<usize> = b.iter().map(|&j| a[j]).collect();
        prop_assert_eq!(d.subset(&a).unwrap().subset(&b).unwrap(), d.subset(&ab).unwrap());
    }

    #[test]
    fn unshuffled_batches_concatenate_to_the_whole(d in instance(), size in 1i64..25) {
        let all: Vec<usize> = (0..d.len()).collect();
        let mut items = Vec::new();
        for batch in d.iterate_batches(size, false, 0).unwrap() {
            prop_assert!(batch.len() as i64 <= size);
            items.extend_from_slice(batch.item_index());
        }
        let whole = d.subset(&all).unwrap();
        prop_assert_eq!(items.as_slice(), whole.item_index());
    }

    #[test]
    fn expanded_slices_depend_on_user_and_session_only(d in instance()) {
        let all: Vec<usize> = (0..d.len()).collect();
        let x = d.expand_observables(&all).unwrap();
        for a in 0..d.len() {
            for b in 0..d.len() {
                if d.user_of(a) == d.user_of(b) && d.session_of(a) == d.session_of(b) {
                    for arr in x.values() {
                        prop_assert_eq!(arr.index_axis(ndarray::Axis(0), a), arr.index_axis(ndarray::Axis(0), b));
                    }
                }
            }
        }
    }

    #[test]
    fn printed_formula_reparses_to_the_same_terms(
        terms in proptest::collection::btree_set(("[a-z][a-z0-9_]{0,6}", 0usize..4), 1..6)
    ) {
        let vars = ["constant", "user", "item", "item-full"];
        let text: Vec<String> = terms.iter().map(|(o, v)| format!("( {o} | {} )", vars[*v])).collect();
        match parse_formula(&text.join("+")) {
            Ok(parsed) => {
                let printed: Vec<String> = parsed.iter().map(ToString::to_string).collect();
                prop_assert_eq!(parse_formula(&printed.join(" + ")).unwrap(), parsed);
            }
            // `intercept` aliases `1`, so random names can collide with it.
            Err(e) => prop_assert!(terms.iter().any(|(o, _)| o == "intercept"), "{e}"),
        }
    }

    #[test]
    fn item_and_item_full_differ_by_the_feature_dim(d in instance()) {
        let m = |v: &str| ConditionalLogit::from_formula(&format!("(itemsession_d|{v})"), &d, d.num_items(), None)
            .unwrap()
            .num_params();
        prop_assert_eq!(m("item-full") - m("item"), 2);
    }

    #[test]
    fn probabilities_normalize_within_categories(d in instance(), seed in any::<u64>()) {
        let (lp, _) = model(&d, seed).log_prob(&d).unwrap();
        let ncat = d.categories().map_or(1, |c| c.num_categories());
        for r in 0..d.len() {
            let s = d.session_of(r);
            for c in 0..ncat {
                let total: f64 = (0..d.num_items())
                    .filter(|&i| category_of(&d, i) == c && d.is_available(s, i))
                    .map(|i| lp[[r, i]].exp())
                    .sum();
                prop_assert!((total - 1.0).abs() <= 1e-12, "category {} sums to {}", c, total);
            }
            for i in (0..d.num_items()).filter(|&i| !d.is_available(s, i)) {
                prop_assert_eq!(lp[[r, i]].exp(), 0.0);
            }
        }
    }

    #[test]
    fn shifting_every_utility_changes_nothing(d in instance(), seed in any::<u64>(), c in -50.0f64..50.0) {
        let m = model(&d, seed);
        let mut theta = m.theta().to_vec();
        for t in &mut theta[intercept_offset(&m)..] {
            *t += c;
        }
        let mut shifted = m.clone();
        shifted.set_theta(&theta).unwrap();
        let (a, b) = (m.log_prob(&d).unwrap().0, shifted.log_prob(&d).unwrap().0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.exp() - y.exp()).abs() <= 1e-12);
        }
    }

    #[test]
    fn odds_ignore_a_third_items_utility(d in instance(), seed in any::<u64>(), k in any::<prop::sample::Index>(), delta in -3.0f64..3.0) {
        let m = model(&d, seed);
        let k = k.index(d.num_items());
        let mut theta = m.theta().to_vec();
        theta[intercept_offset(&m) + k] += delta;
        let mut moved = m.clone();
        moved.set_theta(&theta).unwrap();
        let (a, b) = (m.log_prob(&d).unwrap().0, moved.log_prob(&d).unwrap().0);
        for r in 0..d.len() {
            let s = d.session_of(r);
            let on: Vec<usize> = (0..d.num_items()).filter(|&i| i != k && d.is_available(s, i)).collect();
            for &i in &on {
                for &j in on.iter().filter(|&&j| category_of(&d, j) == category_of(&d, i)) {
                    let drift = (a[[r, i]] - a[[r, j]]) - (b[[r, i]] - b[[r, j]]);
                    prop_assert!(drift.abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn categories_match_separate_models(seed in any::<u64>(), n in 1usize..40, items in 4usize..7) {
        let d = dataset(seed, n, items, true);
        let formula = "(itemsession_d|constant) + (item_b|user)";
        let mut m = ConditionalLogit::from_formula(formula, &d, items, Some(d.num_users()))
            .unwrap()
            .with_categories(d.categories().unwrap().clone())
            .unwrap();
        let theta: Vec<f64> = (0..m.num_params()).map(|j| (j as f64 * 0.37).sin()).collect();
        m.set_theta(&theta).unwrap();
        let (joint_lp, _) = m.log_prob(&d).unwrap();
        let cats = d.categories().unwrap();
        for c in 0..cats.num_categories() {
            // The same records, with only this category's items on offer.
            let rows: Vec<Vec<bool>> = (0..d.num_sessions())
                .map(|s| (0..items).map(|i| cats.category_of(i) == c && d.is_available(s, i)).collect())
                .collect();
            let chosen: Vec<usize> = (0..n)
                .map(|r| (0..items).find(|&i| rows[d.session_of(r)][i]).unwrap())
                .collect();
            let single = ChoiceDataset::builder(chosen)
                .user_index(d.user_index().unwrap().to_vec())
                .session_index(d.session_index().to_vec())
                .num_users(d.num_users())
                .num_items(items)
                .availability(Availability::from_rows(&rows).unwrap())
                .observables(d.observables().cloned())
                .build()
                .unwrap();
            let mut alone = ConditionalLogit::from_formula(formula, &single, items, Some(d.num_users())).unwrap();
            alone.set_theta(&theta).unwrap();
            let (lp, _) = alone.log_prob(&single).unwrap();
            for r in 0..n {
                for i in cats.items(c) {
                    prop_assert!((lp[[r, *i]].exp() - joint_lp[[r, *i]].exp()).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn nested_probabilities_normalize(seed in any::<u64>(), n in 1usize..40, items in 2usize..7,
                                      cut in any::<prop::sample::Index>(), shared in any::<bool>(),
                                      rho in proptest::collection::vec(-1.5f64..0.5, 2)) {
        let d = dataset(seed, n, items, false);
        let c = 1 + cut.index(items - 1);
        let nests = NestStructure::new(vec![(0..c).collect(), (c..items).collect()], shared).unwrap();
        let data = joint(d, None).unwrap();
        let mut m = NestedLogit::from_formulas("", "(itemsession_d|constant) + (1|item)", &data, nests, None).unwrap();
        let mut theta: Vec<f64> = (0..m.num_coefficients()).map(|j| (j as f64 * 1.3).cos()).collect();
        theta.extend_from_slice(&rho[..if shared { 1 } else { 2 }]);
        m.set_theta(&theta).unwrap();
        let (lp, _) = m.log_prob(&data).unwrap();
        let item = data.get("item").unwrap();
        for r in 0..n {
            let s = item.session_of(r);
            let total: f64 = (0..items).filter(|&i| item.is_available(s, i)).map(|i| lp[[r, i]].exp()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
        prop_assert!(m.lambda().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn fitted_lambdas_stay_positive(seed in any::<u64>()) {
        let d = dataset(seed, 80, 4, false);
        let nests = NestStructure::new(vec![vec![0, 1], vec![2, 3]], false).unwrap();
        let data = joint(d, None).unwrap();
        let mut m = NestedLogit::from_formulas("", "(itemsession_d|constant)", &data, nests, None).unwrap();
        let opts = FitOptions {
            optimizer: Optimizer::Adam,
            learning_rate: 0.5,
            num_epochs: 60,
            early_stop: Some(EarlyStop::default()),
            ..FitOptions::default()
        };
        choicekit::fit(&mut m, &data, &opts).unwrap();
        prop_assert!(m.lambda().iter().all(|&l| l > 0.0 && l.is_finite()));
    }
}
