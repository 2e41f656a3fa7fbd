//! Acceptance gate: every shipped guarantee is re-verified here against
//! independent oracles, one criterion per numbered check, with one printed
//! PASS / SKIP / FAIL line each (run with `--nocapture` to see them).

mod common;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pacbound::bounds::{
    self, catoni_fast_rate, catoni_gap, compose_delta_budget, heavy_tail_factor, hellinger_gap,
    kl_wass_gap, mc_f_factor, mcallester_gap, reverse_kl_gap, student_bound, supermartingale_gap,
    tv_gap, BoundFamily, LedgerPurpose,
};
use pacbound::data::{self, Dataset};
use pacbound::lipschitz::{
    brute_force_surrogate, lipschitz_constant, maximize_surrogate, sample_rademacher,
    AscentConfig, AscentInit,
};
use pacbound::measures::{
    kl_gaussian, squared_hellinger, tv_upper, w1_dirac_to_gaussian, w2_gaussian, DiracMeasure,
    GaussianMeasure, PosteriorKind,
};
use pacbound::models::{self, ModelParams, ModelShape};
use pacbound::trainer::{objective_and_grad_at, train, TrainConfig, TrainableState};

enum Outcome {
    Pass(String),
    Skip(String),
}

type Criterion = fn() -> Result<Outcome, String>;

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, Criterion); 9] = [
        ("divergence oracle suite", criterion_divergence_oracles),
        ("gradient correctness", criterion_gradient_correctness),
        ("bound arithmetic", criterion_bound_arithmetic),
        ("lipschitz surrogate", criterion_lipschitz_surrogate),
        ("monte-carlo factors", criterion_mc_factors),
        ("bound validity simulation", criterion_bound_validity),
        ("desk-scale benchmark rows", criterion_benchmark_rows),
        ("interpolation dominance", criterion_interpolation_dominance),
        ("delta-ledger audit", criterion_delta_ledger),
    ];
    let mut failures = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let line = match run() {
            Ok(Outcome::Pass(detail)) => format!("criterion {} ({name}): PASS — {detail}", i + 1),
            Ok(Outcome::Skip(reason)) => format!("criterion {} ({name}): SKIP — {reason}", i + 1),
            Err(msg) => {
                failures.push(format!("criterion {} ({name}): {msg}", i + 1));
                format!("criterion {} ({name}): FAIL — {msg}", i + 1)
            }
        };
        println!("{line}");
    }
    assert!(
        failures.is_empty(),
        "acceptance criteria failed:\n{}",
        failures.join("\n")
    );
}

fn fail(msg: String) -> Result<Outcome, String> {
    Err(msg)
}

// ---------------------------------------------------------------------------
// Criterion 1: closed-form divergences vs quadrature and Monte-Carlo.
// ---------------------------------------------------------------------------

fn criterion_divergence_oracles() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1);
    let mut max_kl_err: f64 = 0.0;
    let mut max_h2_err: f64 = 0.0;
    for trial in 0..50 {
        let d = rng.random_range(1..=5usize);
        let mq: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mp: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sq = rng.random_range(0.3..3.0);
        let sp = rng.random_range(0.3..3.0);
        let q = GaussianMeasure::new(mq.clone(), sq).unwrap();
        let p = GaussianMeasure::new(mp.clone(), sp).unwrap();

        let kl = kl_gaussian(&q, &p).unwrap();
        let kl_quad: f64 = (0..d)
            .map(|i| common::kl_1d_quadrature(mq[i], sq, mp[i], sp))
            .sum();
        let kl_err = (kl - kl_quad).abs();
        max_kl_err = max_kl_err.max(kl_err);
        if kl_err > 1e-6 {
            return fail(format!(
                "trial {trial}: kl_gaussian {kl} vs quadrature {kl_quad}, err {kl_err} > 1e-6"
            ));
        }

        let h2 = squared_hellinger(&q, &p).unwrap();
        let bc: f64 = (0..d)
            .map(|i| common::bhattacharyya_1d_quadrature(mq[i], sq, mp[i], sp))
            .product();
        let h2_err = (h2 - (1.0 - bc)).abs();
        max_h2_err = max_h2_err.max(h2_err);
        if h2_err > 1e-6 {
            return fail(format!(
                "trial {trial}: squared_hellinger {h2} vs quadrature {}, err {h2_err} > 1e-6",
                1.0 - bc
            ));
        }
    }

    let mq = vec![0.0, 0.0, 0.0];
    let mp = vec![0.9, -0.4, 0.2];
    let std = 0.7;
    let tv = tv_upper(
        &GaussianMeasure::new(mq.clone(), std).unwrap(),
        &GaussianMeasure::new(mp.clone(), std).unwrap(),
    )
    .unwrap();
    let tv_mc = common::mc_tv_equal_std(&mq, &mp, std, 1_000_000, 0xD2);
    let tv_err = (tv - tv_mc).abs();
    if tv_err > 2e-3 {
        return fail(format!(
            "tv_upper exact branch {tv} vs Monte-Carlo {tv_mc}, err {tv_err} > 2e-3"
        ));
    }

    let center = vec![0.3; 600];
    let eta = GaussianMeasure::new(center.clone(), 0.04).unwrap();
    let w1 = w1_dirac_to_gaussian(&DiracMeasure::new(center.clone()).unwrap(), &eta).unwrap();
    let w1_mc = common::mc_w1_dirac(&center, &center, 0.04, 100_000, 0xD3);
    let w1_rel = (w1 - w1_mc).abs() / w1_mc;
    if w1_rel > 1e-2 {
        return fail(format!(
            "w1_dirac_to_gaussian {w1} vs Monte-Carlo {w1_mc}, rel err {w1_rel} > 1e-2"
        ));
    }
    // Separated means: the closed form is an upper bound on the exact W1.
    let point = vec![0.5, -0.3, 0.2, 0.1];
    let eta_mean = vec![-0.2, 0.4, 0.0, -0.1];
    let eta4 = GaussianMeasure::new(eta_mean.clone(), 0.5).unwrap();
    let upper = w1_dirac_to_gaussian(&DiracMeasure::new(point.clone()).unwrap(), &eta4).unwrap();
    let exact_mc = common::mc_w1_dirac(&point, &eta_mean, 0.5, 100_000, 0xD4);
    if upper < exact_mc {
        return fail(format!(
            "w1 closed form {upper} fell below the Monte-Carlo exact value {exact_mc}"
        ));
    }

    let m1 = vec![0.0, 0.0];
    let m2 = vec![3.0, 0.0];
    let w2 = w2_gaussian(
        &GaussianMeasure::new(m1.clone(), 1.0).unwrap(),
        &GaussianMeasure::new(m2.clone(), 2.0).unwrap(),
    )
    .unwrap();
    let w2_mc = common::mc_w2_common_noise(&m1, 1.0, &m2, 2.0, 2_000_000, 0xD5);
    let w2_rel = (w2 - w2_mc).abs() / w2_mc;
    if w2_rel > 1e-2 {
        return fail(format!(
            "w2_gaussian {w2} vs common-noise coupling {w2_mc}, rel err {w2_rel} > 1e-2"
        ));
    }

    Ok(Outcome::Pass(format!(
        "50 KL/Hellinger pairs (max err {max_kl_err:.2e}/{max_h2_err:.2e}), TV err {tv_err:.2e}, \
         W1 rel {w1_rel:.2e}, W2 rel {w2_rel:.2e}"
    )))
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic gradients vs central finite differences.
// ---------------------------------------------------------------------------

fn criterion_gradient_correctness() -> Result<Outcome, String> {
    let loss_points = check_loss_gradients()?;
    let objective_points = check_objective_gradients()?;
    Ok(Outcome::Pass(format!(
        "loss_gradient at {loss_points} smooth points, objective_and_grad at \
         {objective_points} smooth points, rel err < 1e-4"
    )))
}

fn check_loss_gradients() -> Result<usize, String> {
    let shapes = [
        ModelShape::linear(4, 3, 2.0).unwrap(),
        ModelShape::mlp(4, 3, 6, 1, 2.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < 100 {
        attempts += 1;
        if attempts > 1200 {
            return Err(format!(
                "only {accepted}/100 smooth loss points found in {attempts} attempts"
            ));
        }
        let shape = &shapes[attempts % 2];
        let alpha = shape.margin_scale();
        let theta: Vec<f64> = (0..shape.param_count())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.5 * z
            })
            .collect();
        let raw: Vec<f64> = (0..4)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect();
        let scale = rng.random_range(0.2..0.95) / common::norm(&raw).max(1e-9);
        let x: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        let y = rng.random_range(0..3usize);

        let f = |t: &[f64]| -> f64 {
            let params = ModelParams::new(shape.clone(), t.to_vec()).unwrap();
            let scores = models::predict(&params, &x).unwrap();
            models::margin_loss(&scores, y, alpha).unwrap()
        };
        let fd_coarse = common::finite_difference_gradient(&f, &theta, 1e-6);
        let fd_fine = common::finite_difference_gradient(&f, &theta, 5e-7);
        let disagreement: Vec<f64> =
            fd_coarse.iter().zip(&fd_fine).map(|(a, b)| a - b).collect();
        // Hinge and clamp kinks make finite differences unreliable; keep
        // only trials where the two step sizes agree and the slope is live.
        if common::norm(&disagreement) > 1e-6 * common::norm(&fd_fine).max(1.0)
            || common::norm(&fd_fine) < 1e-8
        {
            continue;
        }
        accepted += 1;

        let params = ModelParams::new(shape.clone(), theta.clone()).unwrap();
        let analytic = models::loss_gradient(&params, &x, y, alpha).unwrap();
        let err: Vec<f64> = analytic.iter().zip(&fd_fine).map(|(a, b)| a - b).collect();
        let rel = common::norm(&err) / common::norm(&fd_fine);
        if rel >= 1e-4 {
            return Err(format!(
                "loss_gradient rel err {rel} at smooth point {accepted} ({:?})",
                shape.kind()
            ));
        }
    }
    Ok(accepted)
}

fn check_objective_gradients() -> Result<usize, String> {
    let data = data::synth_gaussian_blobs(40, 3, 2, 0.8, 9).unwrap();
    let shape = ModelShape::linear(3, 2, 5.0).unwrap();
    let dim = shape.param_count();
    let prior = GaussianMeasure::isotropic(dim, 0.0, 1.0).unwrap();
    let est = lipschitz_constant(0.25, models::loss_lipschitz_const(&shape), 40, 0.5).unwrap();
    let combos = [
        (PosteriorKind::Dirac, BoundFamily::KlWasserstein, true),
        (PosteriorKind::Gaussian, BoundFamily::KlWasserstein, true),
        (PosteriorKind::Gaussian, BoundFamily::McAllester, false),
    ];
    let batch: Vec<usize> = (0..16).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1);
    let mut accepted = 0;
    let mut attempts = 0;
    while accepted < 100 {
        attempts += 1;
        if attempts > 1200 {
            return Err(format!(
                "only {accepted}/100 smooth objective points found in {attempts} attempts"
            ));
        }
        let (kind, family, needs_lip) = combos[attempts % combos.len()];
        let mut cfg = TrainConfig::new(kind, family, shape.clone(), 0.05, 1, prior.clone());
        cfg.lipschitz = needs_lip.then(|| est.clone());

        let theta: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                0.15 * z
            })
            .collect();
        let jitter: f64 = StandardNormal.sample(&mut rng);
        let tilt: f64 = StandardNormal.sample(&mut rng);
        let state = TrainableState {
            theta,
            log_sigma: (0.1f64).ln() + 0.3 * jitter,
            lambda_logit: 0.5 * tilt,
        };
        let noise: Option<Vec<f64>> = match kind {
            PosteriorKind::Gaussian => Some(
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z
                    })
                    .collect(),
            ),
            PosteriorKind::Dirac => None,
        };

        let f = |flat: &[f64]| -> f64 {
            objective_and_grad_at(
                &TrainableState::from_flat(flat).unwrap(),
                &data,
                &batch,
                &cfg,
                noise.as_deref(),
            )
            .unwrap()
            .value
        };
        let flat = state.to_flat();
        let fd_coarse = common::finite_difference_gradient(&f, &flat, 1e-5);
        let fd_fine = common::finite_difference_gradient(&f, &flat, 5e-6);
        let disagreement: Vec<f64> =
            fd_coarse.iter().zip(&fd_fine).map(|(a, b)| a - b).collect();
        if common::norm(&disagreement) > 1e-5 * common::norm(&fd_fine).max(1.0)
            || common::norm(&fd_fine) < 1e-8
        {
            continue;
        }
        accepted += 1;

        let eval = objective_and_grad_at(&state, &data, &batch, &cfg, noise.as_deref()).unwrap();
        let err: Vec<f64> = eval.grad.iter().zip(&fd_fine).map(|(a, b)| a - b).collect();
        let rel = common::norm(&err) / common::norm(&fd_fine);
        if rel >= 1e-4 {
            return Err(format!(
                "objective gradient rel err {rel} at smooth point {accepted} \
                 ({kind:?}, {family})"
            ));
        }
    }
    Ok(accepted)
}

// ---------------------------------------------------------------------------
// Criterion 3: frozen arithmetic oracles and monotonicity grids.
// ---------------------------------------------------------------------------

fn criterion_bound_arithmetic() -> Result<Outcome, String> {
    let lambda_star = (2.0 * (2.0f64 / 0.05).ln()).sqrt();
    let frozen: [(&str, f64, f64); 10] = [
        ("mcallester_gap", mcallester_gap(0.0, 100, 0.05).unwrap(), 0.17308183826022852),
        ("kl_wass_gap", kl_wass_gap(1.0, 0.0, 0.0, 100, 0.05).unwrap(), 0.18281974356819242),
        ("reverse_kl_gap", reverse_kl_gap(0.0, 0.0, 100, 0.05).unwrap(), 0.3435589081006774),
        ("hellinger_gap", hellinger_gap(0.0, 0.0, 100, 0.05).unwrap(), 0.5847023427090725),
        ("tv_gap", tv_gap(0.0, 0.0, 100, 0.05).unwrap(), 0.17238734153404084),
        ("catoni_gap", catoni_gap(0.0, 0.0, 1.0, 50.0, 100, 0.05).unwrap(), 0.34377758908227873),
        (
            "supermartingale_gap",
            supermartingale_gap(0.0, 0.0, 0.0, lambda_star, 100, 0.05, 1.0).unwrap(),
            2.716203031481239,
        ),
        (
            "catoni_fast_rate",
            catoni_fast_rate(0.0, 0.0, 0.0, 0.0, 1.0, 100, 0.05).unwrap(),
            0.07377758908227873,
        ),
        (
            "student_bound",
            student_bound(1.0, 1.0, 0.5, 0.0, 100, 0.05).unwrap(),
            0.7303581714736541,
        ),
        ("heavy_tail_factor", heavy_tail_factor(1.5, 2).unwrap(), 0.4804530139182014),
    ];
    for (name, got, want) in frozen {
        if (got - want).abs() > 1e-10 {
            return fail(format!("{name} frozen value: got {got}, want {want}"));
        }
    }

    // Decreasing in m at fixed complexity.
    let ms = [50usize, 100, 200, 400, 800];
    let in_m: [(&str, Box<dyn Fn(usize) -> f64>); 8] = [
        ("mcallester_gap", Box::new(|m| mcallester_gap(1.0, m, 0.05).unwrap())),
        ("kl_wass_gap", Box::new(|m| kl_wass_gap(1.0, 0.0, 1.0, m, 0.05).unwrap())),
        ("reverse_kl_gap", Box::new(|m| reverse_kl_gap(0.1, 0.5, m, 0.05).unwrap())),
        ("hellinger_gap", Box::new(|m| hellinger_gap(0.1, 0.2, m, 0.05).unwrap())),
        ("tv_gap", Box::new(|m| tv_gap(0.1, 0.3, m, 0.05).unwrap())),
        ("catoni_gap", Box::new(|m| catoni_gap(0.5, 0.1, 1.0, 10.0, m, 0.05).unwrap())),
        (
            "catoni_fast_rate",
            Box::new(|m| catoni_fast_rate(0.1, 0.5, 0.1, 1.0, 1.0, m, 0.05).unwrap()),
        ),
        ("student_bound", Box::new(|m| student_bound(1.0, 0.1, 0.5, 0.3, m, 0.05).unwrap())),
    ];
    for (name, eval) in &in_m {
        for pair in ms.windows(2) {
            if eval(pair[0]) <= eval(pair[1]) {
                return fail(format!("{name} must decrease from m={} to m={}", pair[0], pair[1]));
            }
        }
    }

    // Increasing in the leading complexity ingredient at fixed m.
    let grid = [0.0, 0.5, 1.0, 2.0, 4.0];
    let in_complexity: [(&str, Box<dyn Fn(f64) -> f64>); 9] = [
        ("mcallester_gap", Box::new(|c| mcallester_gap(c, 100, 0.05).unwrap())),
        ("kl_wass_gap w1", Box::new(|c| kl_wass_gap(1.0, c, 0.0, 100, 0.05).unwrap())),
        ("kl_wass_gap kl", Box::new(|c| kl_wass_gap(1.0, 0.0, c, 100, 0.05).unwrap())),
        ("reverse_kl_gap", Box::new(|c| reverse_kl_gap(0.1, c, 100, 0.05).unwrap())),
        ("hellinger_gap", Box::new(|c| hellinger_gap(0.1, c / 4.0, 100, 0.05).unwrap())),
        ("tv_gap", Box::new(|c| tv_gap(0.1, c / 4.0, 100, 0.05).unwrap())),
        ("catoni_gap", Box::new(|c| catoni_gap(0.5, 0.1, c, 10.0, 100, 0.05).unwrap())),
        (
            "supermartingale_gap",
            Box::new(|c| supermartingale_gap(0.5, 0.1, c, 4.0, 100, 0.05, 1.0).unwrap()),
        ),
        (
            "catoni_fast_rate",
            Box::new(|c| catoni_fast_rate(c / 8.0, 0.5, 0.1, 1.0, 1.0, 100, 0.05).unwrap()),
        ),
    ];
    for (name, eval) in &in_complexity {
        for pair in grid.windows(2) {
            if eval(pair[0]) >= eval(pair[1]) {
                return fail(format!(
                    "{name} must increase from complexity {} to {}",
                    pair[0], pair[1]
                ));
            }
        }
    }

    Ok(Outcome::Pass(
        "10 frozen oracle values to 1e-10, monotone in m (8 evaluators) and in complexity (9 \
         slots)"
            .to_string(),
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4: surrogate ascent vs brute force on a finite candidate set.
// ---------------------------------------------------------------------------

fn criterion_lipschitz_surrogate() -> Result<Outcome, String> {
    let data = data::synth_gaussian_blobs(20, 3, 2, 0.9, 5).unwrap();
    let shape = ModelShape::linear(3, 2, 5.0).unwrap();
    let eps = sample_rademacher(20, 123).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA);
    let candidates: Vec<ModelParams> = (0..5)
        .map(|_| {
            let theta: Vec<f64> = (0..shape.param_count())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.3 * z
                })
                .collect();
            ModelParams::new(shape.clone(), theta).unwrap()
        })
        .collect();

    let brute = brute_force_surrogate(&candidates, &data, &eps).unwrap();
    let cfg = AscentConfig {
        restarts: 1,
        ..AscentConfig::default()
    };
    let enumerated = maximize_surrogate(
        &data,
        &eps,
        &shape,
        &cfg,
        0,
        20,
        99,
        AscentInit::Candidates(&candidates),
    )
    .unwrap();
    if enumerated.value.to_bits() != brute.to_bits() {
        return fail(format!(
            "candidate enumeration {} must equal brute force {brute} exactly",
            enumerated.value
        ));
    }

    let run_a =
        maximize_surrogate(&data, &eps, &shape, &cfg, 150, 20, 31, AscentInit::Random).unwrap();
    let run_b =
        maximize_surrogate(&data, &eps, &shape, &cfg, 150, 20, 31, AscentInit::Random).unwrap();
    if !(run_a.value.is_finite() && run_a.value >= 0.0) {
        return fail(format!("continuous ascent value {} must be finite and >= 0", run_a.value));
    }
    if run_a.value.to_bits() != run_b.value.to_bits() || run_a.trace != run_b.trace {
        return fail("continuous ascent must be reproducible per seed".to_string());
    }

    Ok(Outcome::Pass(format!(
        "enumeration equals brute force ({brute:.6}), seeded ascent reproducible \
         ({:.6})",
        run_a.value
    )))
}

// ---------------------------------------------------------------------------
// Criterion 5: Monte-Carlo transport factors vs quadrature.
// ---------------------------------------------------------------------------

fn criterion_mc_factors() -> Result<Outcome, String> {
    let quad = common::f_factor_quadrature(2.0);
    let mc = mc_f_factor(2.0, 1, 1_000_000, 42).unwrap();
    let diff = (mc.value - quad).abs();
    let tol = (3.0 * mc.std_error).max(1e-3);
    if diff > tol {
        return fail(format!(
            "mc_f_factor(2,1) = {} vs quadrature {quad}, diff {diff} > tol {tol}",
            mc.value
        ));
    }

    let concentrated = mc_f_factor(1_000_000.0, 1, 100_000, 7).unwrap();
    if concentrated.value >= 0.01 {
        return fail(format!(
            "mc_f_factor(1e6, 1) = {} must collapse below 0.01",
            concentrated.value
        ));
    }

    for d in [2usize, 3, 10, 100] {
        let at_two = heavy_tail_factor(2.0, d).unwrap();
        if at_two != 0.0 {
            return fail(format!("heavy_tail_factor(2, {d}) = {at_two}, want exactly 0"));
        }
        for alpha in [1.05, 1.2, 1.5, 1.8, 1.95, 2.0] {
            let factor = heavy_tail_factor(alpha, d).unwrap();
            let cap = (alpha - 1.0) * d as f64 * (d as f64).ln();
            if factor > cap + 1e-12 {
                return fail(format!(
                    "heavy_tail_factor({alpha}, {d}) = {factor} exceeds the cap {cap}"
                ));
            }
        }
    }

    Ok(Outcome::Pass(format!(
        "f(2,1): MC {:.6} vs quadrature {quad:.6} (diff {diff:.2e}, 3se {:.2e}); f(1e6,1) = \
         {:.2e}; heavy-tail grid capped",
        mc.value,
        3.0 * mc.std_error,
        concentrated.value
    )))
}

// ---------------------------------------------------------------------------
// Criterion 6: certified bounds hold on fresh data across 20 seeds.
// ---------------------------------------------------------------------------

fn criterion_bound_validity() -> Result<Outcome, String> {
    let shape = ModelShape::linear(10, 2, 25.0).unwrap();
    let dim = shape.param_count();
    let mut holds = 0;
    let mut worst_margin = f64::INFINITY;
    let train_rows: Vec<usize> = (0..500).collect();
    let fresh_rows: Vec<usize> = (500..100_500).collect();
    for s in 0..20u64 {
        // One generator call per seed so the training and fresh splits share
        // the same class centres (the blob centres are seed-dependent).
        let full = data::synth_gaussian_blobs(100_500, 10, 2, 0.8, 1000 + s).unwrap();
        let data = full.subset(&train_rows, data::SplitTag::Cert).unwrap();
        let fresh = full.subset(&fresh_rows, data::SplitTag::Test).unwrap();
        let eps = sample_rademacher(500, s + 101).unwrap();
        let ascent_cfg = AscentConfig {
            restarts: 1,
            ..AscentConfig::default()
        };
        let run = maximize_surrogate(
            &data,
            &eps,
            &shape,
            &ascent_cfg,
            300,
            250,
            s + 211,
            AscentInit::Random,
        )
        .map_err(|e| format!("seed {s}: surrogate ascent failed: {e}"))?;
        let est = lipschitz_constant(
            run.value,
            models::loss_lipschitz_const(&shape),
            500,
            0.025,
        )
        .unwrap();

        let mut cfg = TrainConfig::new(
            PosteriorKind::Dirac,
            BoundFamily::KlWasserstein,
            shape.clone(),
            0.05,
            s,
            GaussianMeasure::isotropic(dim, 0.0, 1.0).unwrap(),
        );
        cfg.min_iterations = 1000;
        cfg.lipschitz = Some(est);
        let outcome = train(&data, &cfg).map_err(|e| format!("seed {s}: training failed: {e}"))?;

        let params =
            ModelParams::new(shape.clone(), outcome.posterior.center().to_vec()).unwrap();
        let test_risk = models::empirical_risk(&params, &fresh, shape.margin_scale()).unwrap();
        let margin = outcome.report.value - test_risk;
        worst_margin = worst_margin.min(margin);
        if margin >= 0.0 {
            holds += 1;
        }
    }
    if holds < 19 {
        return fail(format!(
            "certificate held in only {holds}/20 runs (worst margin {worst_margin:.4})"
        ));
    }
    Ok(Outcome::Pass(format!(
        "certificate held in {holds}/20 runs, worst margin {worst_margin:.4}"
    )))
}

// ---------------------------------------------------------------------------
// Criterion 7: desk-scale benchmark rows (needs the fetched datasets).
// ---------------------------------------------------------------------------

fn benchmark_data_dir() -> PathBuf {
    std::env::var_os("DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn criterion_benchmark_rows() -> Result<Outcome, String> {
    let dir = benchmark_data_dir();
    let mushrooms_path = dir.join("mushrooms");
    let yeast_path = dir.join("yeast");
    if !mushrooms_path.is_file() || !yeast_path.is_file() {
        return Ok(Outcome::Skip(format!(
            "benchmark files not found under {}; run scripts/fetch_data.sh and set DATA_DIR to \
             enable this criterion",
            dir.display()
        )));
    }

    let run_row = |dataset: &Dataset, kind: PosteriorKind| -> Result<(f64, f64, f64), String> {
        let (train_split, test_split) = data::split_half(dataset, 0).unwrap();
        let shape =
            ModelShape::linear(train_split.feature_dim(), train_split.class_count(), 25.0)
                .unwrap();
        let m = train_split.len();
        let eps = sample_rademacher(m, 101).unwrap();
        let ascent_cfg = AscentConfig {
            restarts: 2,
            ..AscentConfig::default()
        };
        let run = maximize_surrogate(
            &train_split,
            &eps,
            &shape,
            &ascent_cfg,
            1000,
            256,
            211,
            AscentInit::Random,
        )
        .map_err(|e| format!("surrogate ascent failed: {e}"))?;
        let est =
            lipschitz_constant(run.value, models::loss_lipschitz_const(&shape), m, 0.025).unwrap();

        let mut cfg = TrainConfig::new(
            kind,
            BoundFamily::KlWasserstein,
            shape.clone(),
            0.05,
            0,
            GaussianMeasure::isotropic(shape.param_count(), 0.0, 1.0).unwrap(),
        );
        cfg.lipschitz = Some(est);
        let outcome = train(&train_split, &cfg).map_err(|e| format!("training failed: {e}"))?;
        let params =
            ModelParams::new(shape.clone(), outcome.posterior.center().to_vec()).unwrap();
        let test_risk =
            models::empirical_risk(&params, &test_split, shape.margin_scale()).unwrap();
        let get = |key: &str| outcome.report.terms.get(key).copied().unwrap_or(0.0);
        let wass_term = get(bounds::term::LIP_GAP_SQ) * get(bounds::term::W1);
        Ok((test_risk, outcome.report.value, wass_term))
    };

    let mushrooms = data::load_sparse_text(&mushrooms_path, 112)
        .and_then(|d| d.minmax_scale())
        .map_err(|e| format!("mushrooms load failed: {e}"))?;
    let (mush_test, mush_bound, _) = run_row(&mushrooms, PosteriorKind::Dirac)?;
    if mush_test > 0.10 {
        return fail(format!("mushrooms test risk {mush_test:.4} exceeds 0.10"));
    }
    if (mush_bound - 0.190).abs() > 0.15 {
        return fail(format!("mushrooms bound {mush_bound:.4} outside 0.190 +/- 0.15"));
    }

    let yeast = data::load_sparse_text(&yeast_path, 8)
        .and_then(|d| d.minmax_scale())
        .map_err(|e| format!("yeast load failed: {e}"))?;
    let (_, yeast_bound, yeast_wass) = run_row(&yeast, PosteriorKind::Gaussian)?;
    if (yeast_bound - 0.644).abs() > 0.15 {
        return fail(format!("yeast bound {yeast_bound:.4} outside 0.644 +/- 0.15"));
    }
    if yeast_wass >= 0.01 {
        return fail(format!("yeast transport term {yeast_wass:.4} must stay below 0.01"));
    }

    Ok(Outcome::Pass(format!(
        "mushrooms test {mush_test:.3} bound {mush_bound:.3}; yeast bound {yeast_bound:.3} \
         transport {yeast_wass:.2e}"
    )))
}

// ---------------------------------------------------------------------------
// Criterion 8: interpolating eta never loses to the endpoint instantiations.
// ---------------------------------------------------------------------------

struct EtaDraw {
    rho: GaussianMeasure,
    prior: GaussianMeasure,
    lip: f64,
    m: usize,
}

/// Best gap over the eta grid interpolating posterior and prior in (mean,
/// variance), together with the better of the two endpoint instantiations.
fn eta_grid_best(draw: &EtaDraw) -> (f64, f64) {
    let gap_at = |lambda: f64| -> f64 {
        let mean: Vec<f64> = draw
            .rho
            .mean()
            .iter()
            .zip(draw.prior.mean())
            .map(|(r, p)| lambda * r + (1.0 - lambda) * p)
            .collect();
        let var = lambda * draw.rho.variance() + (1.0 - lambda) * draw.prior.variance();
        let eta = GaussianMeasure::new(mean, var.sqrt()).unwrap();
        let w = w2_gaussian(&draw.rho, &eta).unwrap();
        let kl = kl_gaussian(&eta, &draw.prior).unwrap();
        kl_wass_gap(draw.lip, w, kl, draw.m, 0.05).unwrap()
    };
    let endpoints = gap_at(1.0).min(gap_at(0.0));
    let best = (0..=20)
        .map(|i| gap_at(i as f64 / 20.0))
        .fold(f64::INFINITY, f64::min);
    (best, endpoints)
}

fn criterion_interpolation_dominance() -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D);
    let mut strict = 0;
    for trial in 0..200 {
        let d = rng.random_range(1..=6usize);
        let rho_mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let prior_mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rho_std = rng.random_range(0.1..1.5);
        let prior_std = rng.random_range(0.2..2.0);
        let draw = EtaDraw {
            rho: GaussianMeasure::new(rho_mean, rho_std).unwrap(),
            prior: GaussianMeasure::new(prior_mean, prior_std).unwrap(),
            // Log-uniform: cheap-transport draws are where an interior eta
            // can out-price the full KL endpoint.
            lip: 10f64.powf(rng.random_range(-2.5..0.6)),
            m: rng.random_range(30..500usize),
        };
        let (best, endpoints) = eta_grid_best(&draw);
        if best > endpoints + 1e-12 {
            return fail(format!(
                "trial {trial}: optimised gap {best} exceeds endpoint minimum {endpoints}"
            ));
        }
        if best < endpoints - 1e-9 {
            strict += 1;
        }
    }

    // Deterministic witness that the interior of the grid actually matters:
    // cheap transport, expensive KL, small sample.
    let witness = EtaDraw {
        rho: GaussianMeasure::new(vec![1.5, 1.5], 0.3).unwrap(),
        prior: GaussianMeasure::new(vec![0.0, 0.0], 0.4).unwrap(),
        lip: 0.01,
        m: 50,
    };
    let (best, endpoints) = eta_grid_best(&witness);
    if best >= endpoints - 1e-9 {
        return fail(format!(
            "witness draw: interior eta ({best}) should strictly beat the endpoints ({endpoints})"
        ));
    }

    Ok(Outcome::Pass(format!(
        "200 draws dominated the endpoints ({strict} strictly); witness improves by {:.2e}",
        endpoints - best
    )))
}

// ---------------------------------------------------------------------------
// Criterion 9: confidence ledgers match the budgeting rules exactly.
// ---------------------------------------------------------------------------

fn criterion_delta_ledger() -> Result<Outcome, String> {
    let delta = 0.05;
    let mut audited = 0;
    let check = |family: BoundFamily,
                 kind: PosteriorKind,
                 uses_w: bool,
                 uses_mc: bool,
                 expected: &[(LedgerPurpose, f64)]|
     -> Result<(), String> {
        let ledger = compose_delta_budget(family, kind, uses_w, uses_mc, delta)
            .map_err(|e| format!("{family} {kind:?}: {e}"))?;
        ledger
            .check_sums_to(delta)
            .map_err(|e| format!("{family} {kind:?}: {e}"))?;
        if ledger.entries().len() != expected.len() {
            return Err(format!(
                "{family} {kind:?}: {} entries, want {}",
                ledger.entries().len(),
                expected.len()
            ));
        }
        for &(purpose, share) in expected {
            if ledger.share(purpose) != Some(share) {
                return Err(format!(
                    "{family} {kind:?}: share for {purpose:?} is {:?}, want {share}",
                    ledger.share(purpose)
                ));
            }
        }
        Ok(())
    };

    let half = delta / 2.0;
    let third = delta / 3.0;
    for family in BoundFamily::ALL {
        match family {
            BoundFamily::McAllester => {
                check(
                    family,
                    PosteriorKind::Gaussian,
                    false,
                    true,
                    &[(LedgerPurpose::Bound, half), (LedgerPurpose::Hoeffding, half)],
                )?;
                audited += 1;
                if compose_delta_budget(family, PosteriorKind::Dirac, false, false, delta).is_ok()
                {
                    return fail("divergence-only family must reject a Dirac posterior".into());
                }
            }
            BoundFamily::Student => {
                for kind in [PosteriorKind::Dirac, PosteriorKind::Gaussian] {
                    check(
                        family,
                        kind,
                        true,
                        false,
                        &[(LedgerPurpose::Bound, half), (LedgerPurpose::Lipschitz, half)],
                    )?;
                    audited += 1;
                }
                if compose_delta_budget(family, PosteriorKind::Gaussian, true, true, delta).is_ok()
                {
                    return fail("student ledger must reject a Monte-Carlo share".into());
                }
            }
            _ => {
                check(
                    family,
                    PosteriorKind::Dirac,
                    true,
                    false,
                    &[(LedgerPurpose::Bound, half), (LedgerPurpose::Lipschitz, half)],
                )?;
                check(
                    family,
                    PosteriorKind::Gaussian,
                    true,
                    true,
                    &[
                        (LedgerPurpose::Bound, third),
                        (LedgerPurpose::Lipschitz, third),
                        (LedgerPurpose::Hoeffding, third),
                    ],
                )?;
                check(
                    family,
                    PosteriorKind::Gaussian,
                    false,
                    true,
                    &[(LedgerPurpose::Bound, half), (LedgerPurpose::Hoeffding, half)],
                )?;
                audited += 3;
                if compose_delta_budget(family, PosteriorKind::Dirac, true, true, delta).is_ok() {
                    return fail(format!("{family}: Dirac posterior must reject an MC share"));
                }
                if compose_delta_budget(family, PosteriorKind::Gaussian, true, false, delta)
                    .is_ok()
                {
                    return fail(format!("{family}: Gaussian posterior requires an MC share"));
                }
            }
        }
    }
    Ok(Outcome::Pass(format!(
        "{audited} (family x posterior) ledgers match the budgeting rules and sum to delta"
    )))
}
