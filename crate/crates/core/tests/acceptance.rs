//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` reads as a
//! checklist.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use datamin::attacks::{
    masked_distance, match_ranks, mir_auc, reconstruction_risk, reidentification_risk,
};
use datamin::data::{
    apply_minmax, fit_minmax, synth_gaussian, write_csv, Dataset, LabelRule, MinimizationMask,
    MinimizedDataset, DEFAULT_JITTER,
};
use datamin::defense::{apply_privacy_scores, uniqueness_scores};
use datamin::impute::{fit_gaussian_stats, fit_mean, impute, Imputer};
use datamin::learner::{
    gradient_theta, hessian, loss, train, training_gradient, ImplicitModel, ModelParams,
    TrainOptions,
};
use datamin::minimize::{
    evolutionary_mask, feature_selection_mask, individualized_random_mask,
    linearized_delta, metamodel_mask, overlap, taylor_mask, taylor_scores, EvoConfig,
    InfluenceTable, Problem, UnestimatedPolicy,
};
use datamin::rng::rng_from_seed;
use datamin::theory::{
    check_feature_selection_thm, check_sampling_bound, check_taylor_residual,
    check_utility_bound, random_logistic_instance, GaussianLinearSetup,
};

const TIGHT: TrainOptions = TrainOptions {
    tol: 1e-12,
    max_iter: 200,
};

fn report(id: u32, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) {
    let ok = pass && elapsed <= limit;
    println!(
        "criterion {id:>2} [{}] {name}: {detail} ({:.2}s, limit {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "criterion {id} failed: {detail}");
    assert!(elapsed <= limit, "criterion {id} exceeded its time limit");
}

fn multiclass_instance(n: usize, p: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = rng_from_seed(seed);
    let w = DMatrix::from_fn(classes, p, |_, _| rng.random_range(-2.0..2.0));
    let x = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>());
    let mut labels: Vec<usize> = (0..n)
        .map(|i| {
            let scores: Vec<f64> = (0..classes)
                .map(|c| (0..p).map(|j| w[(c, j)] * x[(i, j)]).sum::<f64>() + rng.random::<f64>())
                .collect();
            (0..classes)
                .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
                .unwrap()
        })
        .collect();
    for c in 0..classes {
        labels[c] = c;
    }
    Dataset::new(x, labels, classes).unwrap()
}

fn perturbed(d: &Dataset, i: usize, j: usize, h: f64) -> Dataset {
    let mut x = d.features().clone();
    x[(i, j)] += h;
    d.with_features(x).unwrap()
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

#[test]
fn criterion_01_implicit_function() {
    let start = Instant::now();
    let lambdas = [0.1, 0.5, 1.0, 2.0, 0.3];
    let mut worst_param = 0.0f64;
    let mut worst_util = 0.0f64;
    for inst in 0..10u64 {
        let d = if inst % 3 == 2 {
            multiclass_instance(12, 3, 3, inst)
        } else {
            random_logistic_instance(8 + 2 * inst as usize % 12, 2 + inst as usize % 4, inst).unwrap()
        };
        let lambda = lambdas[inst as usize % lambdas.len()];
        let model = ImplicitModel::fit(&d, lambda, TIGHT).unwrap();
        let sens = model.sensitivity().entries;
        let h = 1e-5;
        let mut fd_sens = DMatrix::zeros(d.n(), d.p());
        for i in 0..d.n() {
            for j in 0..d.p() {
                let plus = train(&perturbed(&d, i, j, h), lambda, TIGHT).unwrap();
                let minus = train(&perturbed(&d, i, j, -h), lambda, TIGHT).unwrap();
                let fd_theta = (plus.to_flat() - minus.to_flat()) / (2.0 * h);
                worst_param = worst_param.max(rel_err(&fd_theta, &model.param_derivative(i, j)));
                // utility is measured on the unperturbed data
                fd_sens[(i, j)] = (loss(&plus, &d).unwrap() - loss(&minus, &d).unwrap()) / (2.0 * h);
            }
        }
        worst_util = worst_util.max((&fd_sens - &sens).norm() / sens.norm());
    }
    report(
        1,
        "implicit-function derivatives vs retraining",
        worst_param <= 1e-3 && worst_util <= 1e-3,
        format!("worst rel. error dθ/dX {worst_param:.2e}, dJ/dX {worst_util:.2e}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

#[test]
fn criterion_02_gradient_hessian() {
    let start = Instant::now();
    let mut worst_g = 0.0f64;
    let mut worst_h = 0.0f64;
    for pair in 0..20u64 {
        let classes = 2 + (pair % 3) as usize;
        let d = multiclass_instance(15, 3, classes, 100 + pair);
        let lambda = 0.5;
        let mut rng = rng_from_seed(pair);
        let dim = (classes - 1) * 4;
        let flat = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let theta = ModelParams::from_flat(&flat, classes, 3, lambda);
        let g = gradient_theta(&theta, &d).unwrap();
        let hm = hessian(&theta, &d, lambda).unwrap();
        let eps = 1e-6;
        let mut fd_g = DVector::zeros(dim);
        let mut fd_h = DMatrix::zeros(dim, dim);
        for a in 0..dim {
            let mut up = flat.clone();
            up[a] += eps;
            let mut dn = flat.clone();
            dn[a] -= eps;
            let tu = ModelParams::from_flat(&up, classes, 3, lambda);
            let td = ModelParams::from_flat(&dn, classes, 3, lambda);
            fd_g[a] = (loss(&tu, &d).unwrap() - loss(&td, &d).unwrap()) / (2.0 * eps);
            let col = (training_gradient(&tu, &d).unwrap() - training_gradient(&td, &d).unwrap())
                / (2.0 * eps);
            fd_h.set_column(a, &col);
        }
        worst_g = worst_g.max(rel_err(&fd_g, &g));
        worst_h = worst_h.max((&fd_h - &hm).norm() / hm.norm());
    }
    report(
        2,
        "gradient / Hessian vs central differences",
        worst_g <= 1e-4 && worst_h <= 1e-3,
        format!("worst rel. error gradient {worst_g:.2e}, Hessian {worst_h:.2e}"),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_03_taylor_residual() {
    let start = Instant::now();
    let mut worst = 1.0f64;
    let mut all = true;
    for inst in 0..5u64 {
        let d = if inst == 4 {
            multiclass_instance(12, 3, 3, 9)
        } else {
            random_logistic_instance(10, 3, inst).unwrap()
        };
        let r = check_taylor_residual(&d, 1.0, &[1e-2, 1e-3, 1e-4], inst).unwrap();
        worst = worst.max(r.worst_factor());
        all &= r.holds;
    }
    report(
        3,
        "Taylor residual is second order",
        all && worst <= 8.0,
        format!("worst successive residual/ε² factor {worst:.4}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

fn combinations(total: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, total: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..total {
            cur.push(i);
            rec(i + 1, total, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, total, k, &mut Vec::new(), &mut out);
    out
}

fn mask_of(n: usize, p: usize, keep: &[usize]) -> MinimizationMask {
    let mut v = vec![false; n * p];
    for &i in keep {
        v[i] = true;
    }
    MinimizationMask::from_retained(n, p, v).unwrap()
}

#[test]
fn criterion_04_exhaustive_oracles() {
    // Taylor: brute-force minimum of the linearized change over all masks
    let start = Instant::now();
    let mut taylor_ok = true;
    for inst in 0..4u64 {
        let d = random_logistic_instance(6, 2, 40 + inst).unwrap();
        let scores = taylor_scores(&d, 1.0, TIGHT).unwrap();
        for k in [0usize, 3, 6, 9, 12] {
            let chosen = taylor_mask(&d, 1.0, k, TIGHT).unwrap();
            let removed_sum = |keep: &[usize]| -> f64 {
                (0..12)
                    .filter(|i| !keep.contains(i))
                    .map(|i| scores[(i / 2, i % 2)])
                    .sum()
            };
            let best = combinations(12, k)
                .iter()
                .map(|c| removed_sum(c))
                .fold(f64::INFINITY, f64::min);
            taylor_ok &= chosen.k() == k && (linearized_delta(&scores, &chosen) - best).abs() <= 1e-12;
        }
    }
    let t_taylor = start.elapsed();

    // evolutionary: best fitness over all C(8,4) masks of a 4×2 instance
    let start = Instant::now();
    let d = random_logistic_instance(4, 2, 77).unwrap();
    let fitness = |m: &MinimizationMask| {
        datamin::learner::target_utility(&d, m, 1.0, &Imputer::Zero, TrainOptions::default())
            .unwrap()
            .loss
    };
    let exhaustive = combinations(8, 4)
        .iter()
        .map(|c| fitness(&mask_of(4, 2, c)))
        .fold(f64::INFINITY, f64::min);
    let cfg = EvoConfig {
        population: 8,
        generations: 30,
        elitism: 8,
        ..EvoConfig::default()
    };
    let evo = evolutionary_mask(&d, 1.0, 4, &Imputer::Zero, &cfg, TrainOptions::default()).unwrap();
    let evo_ok = evo.mask.k() == 4 && (evo.fitness - exhaustive).abs() <= 1e-6;
    let t_evo = start.elapsed();

    // metamodel: exact averages over all 2^6 masks of a 3×2 instance
    let start = Instant::now();
    let d = random_logistic_instance(3, 2, 5).unwrap();
    let mut samples = Vec::new();
    for bits in 0u32..64 {
        let keep: Vec<usize> = (0..6).filter(|b| bits >> b & 1 == 1).collect();
        let m = mask_of(3, 2, &keep);
        let l = datamin::learner::target_utility(&d, &m, 1.0, &Imputer::Zero, TrainOptions::default())
            .unwrap()
            .loss;
        samples.push((keep, l));
    }
    let mut oracle = [0.0f64; 6];
    for (e, slot) in oracle.iter_mut().enumerate() {
        let with: Vec<f64> = samples.iter().filter(|(k, _)| k.contains(&e)).map(|s| s.1).collect();
        let without: Vec<f64> = samples.iter().filter(|(k, _)| !k.contains(&e)).map(|s| s.1).collect();
        *slot = without.iter().sum::<f64>() / 32.0 - with.iter().sum::<f64>() / 32.0;
    }
    let table = InfluenceTable::from_samples(
        3,
        2,
        &samples
            .iter()
            .map(|(k, l)| (mask_of(3, 2, k), *l))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let mut meta_ok = table.unestimated() == 0;
    for k in 0..=6 {
        let chosen = metamodel_mask(&table, k, UnestimatedPolicy::Strict).unwrap();
        let best = combinations(6, k)
            .iter()
            .map(|c| c.iter().map(|&e| oracle[e]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let got: f64 = chosen.retained_indices().map(|e| oracle[e]).sum();
        meta_ok &= chosen.k() == k && (got - best).abs() <= 1e-12;
    }
    let t_meta = start.elapsed();

    let limit = Duration::from_secs(120);
    report(
        4,
        "exhaustive-oracle equivalence",
        taylor_ok && evo_ok && meta_ok && t_taylor <= limit && t_evo <= limit,
        format!(
            "taylor {taylor_ok} ({:.2}s), evolutionary {evo_ok} (fitness {:.6} vs {:.6}, {:.2}s), metamodel {meta_ok}",
            t_taylor.as_secs_f64(),
            evo.fitness,
            exhaustive,
            t_evo.as_secs_f64()
        ),
        t_meta,
        limit,
    );
}

#[test]
fn criterion_05_theorem_suite() {
    let start = Instant::now();
    let setups = [
        GaussianLinearSetup {
            var_x: vec![1.0, 2.0, 0.5],
            coef: vec![1.5, -0.5, 2.0],
            noise_var: 1.0,
        },
        GaussianLinearSetup {
            var_x: vec![0.3, 1.0, 4.0, 1.0],
            coef: vec![2.0, 1.0, -0.25, 0.0],
            noise_var: 0.5,
        },
    ];
    let mut fs_ok = true;
    for (s, setup) in setups.iter().enumerate() {
        for removed in [vec![], vec![0], vec![1, 2]] {
            let r = check_feature_selection_thm(setup, &removed, 100_000, s as u64).unwrap();
            fs_ok &= r.holds;
        }
    }

    // bound regime: λ small relative to the curvature of the data term
    let mut sampling_pass = 0;
    for inst in 0..20u64 {
        let d = random_logistic_instance(20, 3, 100 + inst).unwrap();
        if check_sampling_bound(&d, 0.02, 20, 30, inst, 1.1).unwrap().holds {
            sampling_pass += 1;
        }
    }

    let mut util_ok = true;
    for (inst, lambda) in [(0u64, 1.0), (1, 0.1)] {
        let d = random_logistic_instance(20, 3, 200 + inst).unwrap();
        for s in [1usize, 5] {
            util_ok &= check_utility_bound(&d, lambda, s, 50, inst).unwrap().holds;
        }
    }
    report(
        5,
        "theorem suite",
        fs_ok && sampling_pass >= 19 && util_ok,
        format!("feature-selection MSE {fs_ok}, sampling bound {sampling_pass}/20, utility bound {util_ok}"),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

/// 40×6 logistic data with equicorrelated features and equal weights.
fn fig2_data() -> Dataset {
    let cov = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else { 0.8 });
    let rule = LabelRule::Logistic {
        weights: vec![1.0; 6],
        bias: 0.0,
    };
    synth_gaussian(40, &[0.0; 6], &cov, &rule, 10)
        .unwrap()
        .into_dataset()
        .unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_06_optimizer_beats_baseline() {
    let start = Instant::now();
    let d = fig2_data();
    let all: Vec<usize> = (0..d.n()).collect();
    let imputer = Imputer::Mean(fit_mean(&d, &all).unwrap());
    let problem = Problem {
        dataset: &d,
        lambda: 1.0,
        imputer: imputer.clone(),
        opts: TrainOptions::default(),
    };
    let (_, full_acc) = problem.full_utility().unwrap();
    let k = 60;
    let mut evo = Vec::new();
    let mut rnd = Vec::new();
    for seed in 0..10u64 {
        let cfg = EvoConfig::default().with_seed(seed);
        let m = evolutionary_mask(&d, 1.0, k, &imputer, &cfg, TrainOptions::default()).unwrap().mask;
        evo.push(full_acc - problem.evaluate(&m).unwrap().1);
        let r = individualized_random_mask(40, 6, k, seed).unwrap();
        rnd.push(full_acc - problem.evaluate(&r).unwrap().1);
    }
    report(
        6,
        "evolutionary vs individualized random at 25% retained",
        mean(&evo) <= mean(&rnd),
        format!("mean accuracy drop {:.4} vs {:.4}", mean(&evo), mean(&rnd)),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_07_multiplicity() {
    let start = Instant::now();
    let d = fig2_data();
    let all: Vec<usize> = (0..d.n()).collect();
    let imputer = Imputer::Mean(fit_mean(&d, &all).unwrap());
    let problem = Problem {
        dataset: &d,
        lambda: 1.0,
        imputer: imputer.clone(),
        opts: TrainOptions::default(),
    };
    let mut masks = Vec::new();
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let cfg = EvoConfig::default().with_seed(seed);
        let m = evolutionary_mask(&d, 1.0, 60, &imputer, &cfg, TrainOptions::default()).unwrap().mask;
        accs.push(problem.evaluate(&m).unwrap().1);
        masks.push(m);
    }
    let spread = accs.iter().copied().fold(f64::MIN, f64::max) - accs.iter().copied().fold(f64::MAX, f64::min);
    let mut max_overlap = 0.0f64;
    for a in 0..5 {
        for b in a + 1..5 {
            max_overlap = max_overlap.max(overlap(&masks[a], &masks[b]).unwrap());
        }
    }
    report(
        7,
        "multiplicity of evolutionary solutions",
        spread < 0.05 && max_overlap < 60.0,
        format!("accuracy spread {spread:.3}, max pairwise overlap {max_overlap:.1}%"),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

/// Two label-relevant continuous features, one unique identifier, and three
/// irrelevant binary features, min-max scaled.
fn identifier_instance(seed: u64) -> Dataset {
    let n = 40;
    let mut rng = rng_from_seed(seed);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);
    let mut x = DMatrix::zeros(n, 6);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x[(i, 0)] = a;
        x[(i, 1)] = b;
        x[(i, 2)] = ids[i] as f64;
        for j in 3..6 {
            x[(i, j)] = (rng.random::<f64>() < 0.5) as u8 as f64;
        }
        let z = 3.0 * a - 3.0 * b;
        labels.push((rng.random::<f64>() < 1.0 / (1.0 + (-z).exp())) as usize);
    }
    labels[0] = 0;
    labels[1] = 1;
    let d = Dataset::new(x, labels, 2).unwrap();
    let all: Vec<usize> = (0..n).collect();
    apply_minmax(&d, &fit_minmax(&d, &all).unwrap()).unwrap()
}

fn rir_of(d: &Dataset, m: &MinimizationMask) -> f64 {
    reidentification_risk(d.features(), &MinimizedDataset::new(d.features(), m).unwrap()).unwrap()
}

#[test]
fn criterion_08_privacy_misalignment() {
    let start = Instant::now();
    let mut fs = Vec::new();
    let mut rnd = Vec::new();
    for seed in 0..10u64 {
        let d = identifier_instance(seed);
        let m = feature_selection_mask(&d, 3).unwrap();
        fs.push(rir_of(&d, &m));
        let r = individualized_random_mask(d.n(), d.p(), m.k(), seed).unwrap();
        rnd.push(rir_of(&d, &r));
    }
    report(
        8,
        "feature selection leaks identity, random entries less so",
        mean(&fs) >= 0.9 && mean(&rnd) < mean(&fs),
        format!("mean RIR feature selection {:.3}, individualized random {:.3}", mean(&fs), mean(&rnd)),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_09_defense_effect() {
    let start = Instant::now();
    let mut before = Vec::new();
    let mut after = Vec::new();
    for seed in 0..10u64 {
        let d = identifier_instance(seed);
        let all: Vec<usize> = (0..d.n()).collect();
        let imputer = Imputer::Mean(fit_mean(&d, &all).unwrap());
        let k = 3 * d.n();
        let cfg = EvoConfig::default().with_seed(seed);
        let base = evolutionary_mask(&d, 1.0, k, &imputer, &cfg, TrainOptions::default()).unwrap().mask;
        let scores = uniqueness_scores(&d);
        let plain = apply_privacy_scores(&base, &scores, 0.0, k).unwrap();
        let defended = apply_privacy_scores(&base, &scores, 1.5, k).unwrap();
        assert_eq!(defended.k(), k);
        before.push(rir_of(&d, &plain));
        after.push(rir_of(&d, &defended));
    }
    report(
        9,
        "uniqueness-score defense lowers re-identification",
        mean(&after) < mean(&before),
        format!("mean RIR β=0 {:.3}, β=1.5 {:.3}", mean(&before), mean(&after)),
        start.elapsed(),
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_10_metric_hand_cases() {
    let start = Instant::now();
    let md = |x: &DMatrix<f64>, keep: Vec<bool>| {
        let m = MinimizationMask::from_retained(x.nrows(), x.ncols(), keep).unwrap();
        MinimizedDataset::new(x, &m).unwrap()
    };
    let mut ok = Vec::new();
    let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    ok.push(reidentification_risk(&x, &md(&x, vec![true; 6])).unwrap() == 1.0);
    ok.push(reconstruction_risk(&x, &md(&x, vec![true; 6]), &Imputer::Zero).unwrap() == 1.0);
    // rows 0 and 1 tie on their only observed coordinate
    let y = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 1.0, 5.0, 5.0]);
    let m = md(&y, vec![true, false, true, false, true, true]);
    ok.push(match_ranks(&y, &m).unwrap() == vec![1, 2, 1]);
    ok.push(reidentification_risk(&y, &m).unwrap() == 2.5 / 3.0);
    let x2 = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    ok.push(reidentification_risk(&x2, &md(&x2, vec![false; 2])).unwrap() == 0.75);
    ok.push(masked_distance(&[0.0, 0.0], &[Some(3.0), Some(4.0)]) == 5.0);
    ok.push(masked_distance(&[1.0], &[None]) == f64::INFINITY);
    let one = DMatrix::from_row_slice(1, 1, &[2f64.ln()]);
    let rcr = reconstruction_risk(&one, &md(&one, vec![false]), &Imputer::Zero).unwrap();
    ok.push((rcr - 0.5).abs() <= f64::EPSILON);
    ok.push(mir_auc(&[0.9, 0.4], &[0.5, 0.1]).unwrap() == 0.75);
    ok.push(mir_auc(&[1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap() == 1.0);
    ok.push(mir_auc(&[0.2, 0.7, 0.7], &[0.7, 0.2, 0.7]).unwrap() == 0.5);
    let passed = ok.iter().filter(|b| **b).count();
    report(
        10,
        "attack metric hand cases",
        passed == ok.len(),
        format!("{passed}/{} exact cases", ok.len()),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

fn imputation_mse(rho: f64, seed: u64) -> (f64, f64) {
    let p = 4;
    let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    let rule = LabelRule::Regression {
        coef: vec![0.0; p],
        noise_std: 1.0,
    };
    let sample = |n: usize, s: u64| {
        let raw = synth_gaussian(n, &[0.5, -1.0, 0.0, 2.0], &cov, &rule, s).unwrap();
        Dataset::new(raw.features, vec![0; n], 2).unwrap()
    };
    let public = sample(5000, seed);
    let private = sample(5000, seed + 1);
    let idx: Vec<usize> = (0..public.n()).collect();
    let gaussian = Imputer::Gaussian(fit_gaussian_stats(&public, &idx, DEFAULT_JITTER).unwrap());
    let mean_imp = Imputer::Mean(fit_mean(&public, &idx).unwrap());
    // two removed entries per row: 10^4 masked entries
    let mut rng = rng_from_seed(seed + 2);
    let mut keep = vec![true; private.n() * p];
    for i in 0..private.n() {
        for j in rand::seq::index::sample(&mut rng, p, 2) {
            keep[i * p + j] = false;
        }
    }
    let mask = MinimizationMask::from_retained(private.n(), p, keep).unwrap();
    let md = MinimizedDataset::new(private.features(), &mask).unwrap();
    let mse = |imp: &Imputer| {
        let filled = impute(&md, imp).unwrap();
        let removed: Vec<usize> = mask.removed_indices().collect();
        removed
            .iter()
            .map(|&e| (filled[(e / p, e % p)] - private.features()[(e / p, e % p)]).powi(2))
            .sum::<f64>()
            / removed.len() as f64
    };
    (mse(&gaussian), mse(&mean_imp))
}

#[test]
fn criterion_11_imputation_optimality() {
    let start = Instant::now();
    let (g3, m3) = imputation_mse(0.3, 1);
    let (g8, m8) = imputation_mse(0.8, 4);
    report(
        11,
        "conditional-Gaussian imputation beats mean imputation",
        g3 <= m3 && g8 < m8,
        format!("MSE ρ=0.3: {g3:.4} vs {m3:.4}; ρ=0.8: {g8:.4} vs {m8:.4}"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

fn strip_wall_time(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("wall_time");
            for child in map.values_mut() {
                strip_wall_time(child);
            }
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_wall_time),
        _ => {}
    }
}

/// Every file under `dir` plus stdout, with `wall_time` removed from JSON.
fn snapshot(dir: &Path, stdout: &[u8]) -> BTreeMap<String, Vec<u8>> {
    let normalize = |name: &str, bytes: Vec<u8>| -> Vec<u8> {
        if name.ends_with(".json") || name == "<stdout>" {
            match serde_json::from_slice::<serde_json::Value>(&bytes) {
                Ok(mut v) => {
                    strip_wall_time(&mut v);
                    serde_json::to_vec(&v).unwrap()
                }
                Err(_) => bytes,
            }
        } else {
            bytes
        }
    };
    let mut out = BTreeMap::new();
    out.insert("<stdout>".to_string(), normalize("<stdout>", stdout.to_vec()));
    if let Ok(entries) = std::fs::read_dir(dir) {
        for e in entries {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            out.insert(name.clone(), normalize(&name, std::fs::read(&path).unwrap()));
        }
    }
    out
}

#[test]
fn criterion_12_cli_determinism() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data.csv");
    write_csv(&fig2_data(), &data).unwrap();
    let bin = env!("CARGO_BIN_EXE_datamin");
    let out = tmp.path().join("out");
    let mask = out.join("mask.txt");
    let d = data.to_str().unwrap();
    let o = out.to_str().unwrap();
    let m = mask.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["minimize", "--data", d, "--k", "30", "--out", o],
        vec!["sweep", "--data", d, "--algorithm", "taylor", "--grid", "10,30,60", "--alpha", "0.1", "--out", o],
        vec!["attack", "--data", d, "--mask", m, "--out", o],
        vec!["defend", "--data", d, "--mask", m, "--beta", "1.5", "--out", o],
        vec!["impute", "--data", d, "--mask", m, "--out", o],
        vec!["multiplicity", "--data", d, "--no-splits", "--k", "60", "--runs", "3", "--out", o],
        vec!["verify", "--seed", "3", "--out", o],
    ];
    let mut failures = Vec::new();
    for args in &commands {
        let mut snaps = Vec::new();
        for _ in 0..2 {
            let run = Command::new(bin).args(args).output().unwrap();
            if !run.status.success() {
                failures.push(format!(
                    "{} exited {:?}: {}",
                    args[0],
                    run.status.code(),
                    String::from_utf8_lossy(&run.stderr).trim()
                ));
            }
            snaps.push(snapshot(&out, &run.stdout));
        }
        if snaps[0] != snaps[1] {
            failures.push(format!("{} output differs between runs", args[0]));
        }
    }
    report(
        12,
        "CLI reruns are byte-identical",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} commands", commands.len())
        } else {
            failures.join("; ")
        },
        start.elapsed(),
        Duration::from_secs(120),
    );
}
