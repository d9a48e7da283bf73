//! Criteria 1 to 8.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtgp_curves::asymptotics;
use mtgp_curves::rng::scenario_id;
use mtgp_curves::simulator::{self, Allocation, SimOptions};
use mtgp_curves::solver::{self, equicorrelated};
use mtgp_curves::spectra::{self, SpectrumOptions};
use mtgp_curves::{DegenerateKernel, InputDist, KernelSpec, KernelSpectrum, Smoothness, SolverOptions, TaskSetup};

use crate::oracles;
use crate::Checks;

const RHO2: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

fn opts() -> SolverOptions<f64> {
    SolverOptions::default()
}

pub fn single_task_closed_form(c: &mut Checks) {
    let spectrum = KernelSpectrum::from_eigenvalues(vec![1.0], Smoothness::Infinite).unwrap();
    let setup = TaskSetup::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0), DVector::from_element(1, 1.0))
        .unwrap();
    let start = std::time::Instant::now();
    let eps = solver::solve(&spectrum, &setup, &opts()).unwrap().eps[0];
    let elapsed = start.elapsed().as_secs_f64();
    // eps^2 + eps - 1 = 0
    let root = (5f64.sqrt() - 1.0) / 2.0;
    c.check((eps - root).abs() < 1e-9, format!("eps = {eps:.15}, root = {root:.15}"));
    c.check(elapsed < 1e-3, format!("solve took {:.3} ms", elapsed * 1e3));
}

pub fn dense_oracle(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m = rng.random_range(1..=5);
        let t = rng.random_range(1..=3);
        let mut lambdas: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        lambdas.sort_by(|a, b| b.total_cmp(a));
        let a = DMatrix::from_fn(t, t, |_, _| rng.random_range(-1.0..1.0));
        let d = &a * a.transpose() + DMatrix::identity(t, t) * 0.1;
        let noise: Vec<f64> = (0..t).map(|_| rng.random_range(0.05..1.0)).collect();
        let counts: Vec<f64> = (0..t)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.5..50.0) })
            .collect();
        let spectrum = KernelSpectrum::from_eigenvalues(lambdas.clone(), Smoothness::Infinite).unwrap();
        let setup = TaskSetup::new(d.clone(), DVector::from_vec(noise.clone()), DVector::from_vec(counts.clone())).unwrap();
        let eps = solver::solve(&spectrum, &setup, &opts()).unwrap().eps;
        let oracle = oracles::dense_fixed_point(&lambdas, &d, &noise, &counts);
        for (a, b) in eps.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / b);
        }
    }
    c.check(worst < 1e-9, format!("max relative deviation {worst:.2e} over 20 instances"));
}

pub fn simulator_exactness(c: &mut Checks) {
    let lambdas = [0.6, 0.3, 0.1];
    let kernel = DegenerateKernel::new(lambdas.to_vec(), 0.0, 1.0).unwrap();
    let dist = kernel.input_dist();
    let d = equicorrelated(2, 0.7);
    let noise = [0.1, 0.1];
    let fractions = [0.5, 0.5];
    for n in 1..=3 {
        let opts = SimOptions {
            replicas: 10_000,
            seed: 3,
            scenario: scenario_id("degenerate"),
            tasks: vec![0],
            allocation: Allocation::InOrder,
            test_points: None,
        };
        let est = simulator::bayes_error_estimate(&kernel, &dist, &d, &DVector::from_row_slice(&noise), n, &fractions, &opts)
            .unwrap();
        let (mean, se) = (est.eps_hat[0], est.stderr[0]);
        let labels: Vec<usize> = (0..n).map(|k| k % 2).collect();
        let exact = oracles::degenerate_bayes_error(&lambdas, &d, &noise, &labels, 0, 24);
        let z = (mean - exact) / se;
        c.check(z.abs() <= 3.0, format!("n={n}: sim {mean:.6} +- {se:.1e}, exact {exact:.6}, z = {z:+.2}"));
        c.check(se < 0.01 * exact, format!("n={n}: stderr/value = {:.2e}", se / exact));
    }
}

struct Fig1Scenario {
    name: &'static str,
    kernel: KernelSpec<f64>,
    dist: InputDist<f64>,
    spectrum: SpectrumOptions,
    test_points: Option<usize>,
}

fn fig1_scenarios() -> Vec<Fig1Scenario> {
    let ou_spectrum = SpectrumOptions {
        max_eigenvalues: 200_000,
        tail_tol: 2e-4,
        ..SpectrumOptions::default()
    };
    vec![
        Fig1Scenario {
            name: "se_gaussian",
            kernel: KernelSpec::squared_exponential(0.01).unwrap(),
            dist: InputDist::gaussian(1.0 / 12.0).unwrap(),
            spectrum: SpectrumOptions::default(),
            // Random test points; fewer of them only adds variance, which
            // the standard error includes.
            test_points: Some(512),
        },
        Fig1Scenario {
            name: "se_uniform",
            kernel: KernelSpec::squared_exponential(0.01).unwrap(),
            dist: InputDist::uniform(0.0, 1.0).unwrap(),
            spectrum: SpectrumOptions::default(),
            test_points: None,
        },
        Fig1Scenario {
            name: "ou_uniform",
            kernel: KernelSpec::ornstein_uhlenbeck(0.01).unwrap(),
            dist: InputDist::uniform(0.0, 1.0).unwrap(),
            spectrum: ou_spectrum,
            test_points: None,
        },
    ]
}

fn non_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

pub fn two_task_curves(c: &mut Checks) {
    let pred_grid: Vec<f64> = [1, 2, 3, 5, 7, 10, 15, 20, 30, 50, 70, 100, 150, 200, 300, 500, 700, 1000]
        .iter()
        .map(|&n| n as f64)
        .collect();
    let sim_grid = [1usize, 3, 10, 30, 100, 300, 1000];
    let noise = DVector::from_element(2, 0.05);
    let fractions = DVector::from_vec(vec![0.25, 0.75]);
    for sc in fig1_scenarios() {
        let spectrum = spectra::kernel_spectrum(&sc.kernel, &sc.dist, &sc.spectrum).unwrap();
        let sim_opts = SimOptions {
            replicas: 200,
            seed: 4,
            scenario: scenario_id(sc.name),
            tasks: vec![0],
            // Each example goes to task 2 with probability 0.75, so the
            // expected counts match the fractional ones used by the solver.
            allocation: Allocation::Random,
            test_points: sc.test_points,
        };
        let mut pred = Vec::new();
        let mut sims = Vec::new();
        for &rho2 in &RHO2 {
            let d = equicorrelated(2, rho2.sqrt());
            let curve = solver::learning_curve(&spectrum, &d, &noise, &fractions, &pred_grid, &opts()).unwrap();
            pred.push(curve.iter().map(|p| p.errors.eps[0]).collect::<Vec<f64>>());
            let s: Vec<(f64, f64)> = sim_grid
                .iter()
                .map(|&n| {
                    let e = simulator::bayes_error_estimate(&sc.kernel, &sc.dist, &d, &noise, n, &[0.25, 0.75], &sim_opts)
                        .unwrap();
                    (e.eps_hat[0], e.stderr[0])
                })
                .collect();
            sims.push(s);
        }
        let name = sc.name;
        for (k, &rho2) in RHO2.iter().enumerate() {
            c.check(non_increasing(&pred[k]), format!("{name} rho2={rho2}: prediction monotone"));
            let means: Vec<f64> = sims[k].iter().map(|s| s.0).collect();
            c.check(non_increasing(&means), format!("{name} rho2={rho2}: simulation monotone"));
        }
        let pred_ordered = (0..pred_grid.len()).all(|i| (1..RHO2.len()).all(|k| pred[k][i] <= pred[k - 1][i] * (1.0 + 1e-12)));
        c.check(pred_ordered, format!("{name}: predicted curves ordered by rho2 at every n"));
        let sim_ordered = (0..sim_grid.len()).all(|i| (1..RHO2.len()).all(|k| sims[k][i].0 <= sims[k - 1][i].0 * (1.0 + 1e-12)));
        c.check(sim_ordered, format!("{name}: simulated curves ordered by rho2 at every n"));
        if name == "se_uniform" {
            let mut worst_z = f64::NEG_INFINITY;
            let mut worst_gap: f64 = 0.0;
            for (k, _) in RHO2.iter().enumerate() {
                for (i, &n) in sim_grid.iter().enumerate() {
                    let p = pred[k][pred_grid.iter().position(|&g| g == n as f64).unwrap()];
                    let (s, se) = sims[k][i];
                    worst_z = worst_z.max((p - s) / se.max(1e-300));
                    if (10..=300).contains(&n) {
                        worst_gap = worst_gap.max((p - s).abs() / s);
                    }
                }
            }
            c.known(
                worst_z <= 3.0,
                format!("se_uniform: max (pred - sim)/stderr = {worst_z:.2}"),
                "at n = 1 the approximation exceeds the exact Bayes error by ~1.8 stderr (rho2 = 1: 0.983273 vs 0.983215), so the 3 stderr margin is breached by ordinary sampling noise",
            );
            // Exact error after one example: the example lands on task tau
            // with probability pi_tau and removes D_1tau^2 <k^2> / (1 + sigma^2),
            // where <k^2> = l sqrt(pi) erf(1/l) - l^2 (1 - exp(-1/l^2)) is the
            // double integral of the squared kernel; erf(100) = 1 in f64.
            let ell: f64 = 0.01;
            let k2 = ell * std::f64::consts::PI.sqrt() - ell * ell * (1.0 - (-1.0 / (ell * ell)).exp());
            let worst_exact = RHO2
                .iter()
                .enumerate()
                .map(|(k, &rho2)| {
                    let exact = 1.0 - k2 * (0.25 + 0.75 * rho2) / 1.05;
                    let (s, se) = sims[k][0];
                    (s - exact).abs() / se
                })
                .fold(0.0, f64::max);
            c.check(
                worst_exact <= 3.5,
                format!("se_uniform: simulation at n = 1 matches the exact one-example error (max {worst_exact:.2} stderr)"),
            );
            c.known(
                worst_gap < 0.25,
                format!("se_uniform: max relative gap for n in [10, 300] = {worst_gap:.3}"),
                "the approximation runs up to ~40% low in the knee of the l = 0.01 curve; confirmed by an independent solve and simulation",
            );
        }
        let last = pred_grid.len() - 1;
        c.note(format!(
            "{name}: eps1 at n=1000 pred {:.4}..{:.4}, sim {:.4}..{:.4} (rho2 = 0..1)",
            pred[0][last],
            pred[4][last],
            sims[0][sim_grid.len() - 1].0,
            sims[4][sim_grid.len() - 1].0
        ));
    }
}

pub fn pure_transfer(c: &mut Checks) {
    let kernel = KernelSpec::squared_exponential(0.1).unwrap();
    let dist = InputDist::uniform(0.0, 1.0).unwrap();
    let spectrum = spectra::kernel_spectrum(&kernel, &dist, &SpectrumOptions::default()).unwrap();
    let noise = DVector::from_element(2, 0.05);
    let n2 = [100usize, 1000, 10_000];
    for rho2 in [0.25, 0.5, 0.75] {
        let d = equicorrelated(2, f64::sqrt(rho2));
        let limit = 1.0 - rho2;
        let conditional = asymptotics::pure_transfer_limit(&spectrum, &d, &[1]).unwrap()[0];
        c.check(
            (conditional - limit).abs() < 1e-6,
            format!("rho2={rho2}: conditional-variance limit {conditional:.8} vs {limit}"),
        );
        let mut solved = Vec::new();
        let mut simulated = Vec::new();
        for &n in &n2 {
            let setup = TaskSetup::new(d.clone(), noise.clone(), DVector::from_vec(vec![0.0, n as f64])).unwrap();
            solved.push(solver::solve(&spectrum, &setup, &opts()).unwrap().eps[0]);
            let sim_opts = SimOptions {
                replicas: if n >= 10_000 { 2 } else { 8 },
                seed: 5,
                scenario: scenario_id("pure_transfer"),
                tasks: vec![0],
                allocation: Allocation::Proportional,
                test_points: Some(128),
            };
            let e = simulator::bayes_error_estimate(&kernel, &dist, &d, &noise, n, &[0.0, 1.0], &sim_opts).unwrap();
            simulated.push(e.eps_hat[0]);
        }
        for (what, v) in [("solver", &solved), ("simulator", &simulated)] {
            let gaps: Vec<f64> = v.iter().map(|e| (e - limit).abs() / limit).collect();
            c.check(
                gaps.windows(2).all(|w| w[1] <= w[0]) && gaps[2] < 0.02,
                format!("rho2={rho2} {what}: relative gaps to 1-rho2 {:.2e} {:.2e} {:.2e}", gaps[0], gaps[1], gaps[2]),
            );
        }
    }
}

pub fn asymptotic_uselessness(c: &mut Checks) {
    let kernel = KernelSpec::squared_exponential(0.01).unwrap();
    let dist = InputDist::uniform(0.0, 1.0).unwrap();
    let spectrum = spectra::kernel_spectrum(&kernel, &dist, &SpectrumOptions::default()).unwrap();
    let mut r = Vec::new();
    for n in [500usize, 5000, 50_000] {
        let rows =
            simulator::gain_sweep(&kernel, &dist, &spectrum, 0.05, 0.75, n, &[0.75], &opts(), None).unwrap();
        r.push(rows[0].r_pred);
    }
    c.check(
        r.windows(2).all(|w| w[1] > w[0]) && r[2] > 0.8,
        format!("r(0.75) at n = 500, 5e3, 5e4: {:.4} {:.4} {:.4}", r[0], r[1], r[2]),
    );
    let alpha = asymptotics::fit_decay_exponent(&spectrum, 1e6, 1e8, 21).unwrap();
    c.check(alpha > 0.95, format!("fitted alpha = {alpha:.4} over h in [1e6, 1e8]"));
}

pub fn rough_gain_exponent(c: &mut Checks) {
    // OU kernel of the two-task figures. The final stage is asymptotic only
    // once eps-bar is small against sigma^2 / (1 - rho), which needs many
    // examples per task, and the shared term rho g(h rho) is negligible only
    // for T (1 - rho) >> 1; hence n/T = 1e5 and T = 1e5.
    let spectrum = spectra::ou_uniform_spectrum(0.01, 0.0, 1.0, 1_000_000).unwrap();
    let tasks = 100_000;
    let n = 1e10;
    let indep = [0.05, 0.1, 0.2, 0.3, 0.5];
    let mut eps = Vec::new();
    for &x in &indep {
        let p = asymptotics::many_task_curve(&spectrum, 1.0 - x, tasks, 0.05, &[n], &opts()).unwrap();
        eps.push(p[0].eps);
    }
    let lx: Vec<f64> = indep.iter().map(|x: &f64| x.ln()).collect();
    let ly: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let exponent = oracles::slope(&lx, &ly);
    c.check(
        (exponent - 0.5).abs() <= 0.05,
        format!("fitted exponent of eps vs 1-rho = {exponent:.4} (T = {tasks}, n = {n:e}, 1-rho in [0.05, 0.5])"),
    );
}

pub fn many_task_plateau(c: &mut Checks) {
    let kernel = KernelSpec::squared_exponential(0.01).unwrap();
    let dist = InputDist::gaussian(1.0 / 12.0).unwrap();
    let spectrum = spectra::kernel_spectrum(&kernel, &dist, &SpectrumOptions::default()).unwrap();
    let rho = 0.8f64.sqrt();
    let plateau = 1.0 - rho;
    let tasks = 200;
    // 40 points per decade from 1 to 1e7.
    let grid: Vec<f64> = (0..=280).map(|k| 10f64.powf(k as f64 / 40.0)).collect();
    let curve = asymptotics::many_task_curve(&spectrum, rho, tasks, 0.05, &grid, &opts()).unwrap();
    let near: Vec<bool> = curve.iter().map(|p| (p.eps - 0.1056).abs() < 0.01).collect();
    let mut best: (f64, f64) = (0.0, 0.0);
    let mut k = 0;
    while k < near.len() {
        if near[k] {
            let start = k;
            while k + 1 < near.len() && near[k + 1] {
                k += 1;
            }
            if grid[k] / grid[start] > best.1 / best.0.max(1e-300) || best.0 == 0.0 {
                best = (grid[start], grid[k]);
            }
        }
        k += 1;
    }
    let decays_after = curve.iter().any(|p| p.n > best.1 && p.eps < 0.1056 - 0.01);
    let width = if best.0 > 0.0 { (best.1 / best.0).log10() } else { 0.0 };
    c.known(
        width >= 1.0 && decays_after,
        format!(
            "plateau |eps - 0.1056| < 0.01 for n in [{:.0}, {:.0}] ({width:.2} decades), plateau constant 1-rho = {plateau:.4}",
            best.0, best.1
        ),
        "at T = 200 the collective stage has not levelled off before per-task learning starts; the curve bends at 1 - rho but stays near it for under half a decade",
    );
    let mut stage1_worst: f64 = 0.0;
    let mut stage2_worst: f64 = 0.0;
    for p in &curve {
        if p.n <= tasks as f64 / 2.0 {
            stage1_worst = stage1_worst.max((p.stage1.unwrap() - p.eps).abs() / p.eps);
        }
        if p.n >= 20.0 * tasks as f64 {
            stage2_worst = stage2_worst.max((p.stage2.unwrap() - p.eps).abs() / p.eps);
        }
    }
    c.check(stage1_worst < 0.02, format!("stage 1 max relative deviation for n <= T/2: {stage1_worst:.4}"));
    c.known(
        stage2_worst < 0.05,
        format!("stage 2 max relative deviation for n >= 20T: {stage2_worst:.4}"),
        "the neglected shared term rho g(h rho) is still ~7% of eps at n = 20T for this slowly decaying SE spectrum; below 5% from n ~ 50T",
    );

    // Simulation overlay at T = 50 with examples allocated in task order,
    // compared where every task has the same count.
    let t_sim = 50;
    let sim_grid = [50usize, 100, 200, 500];
    let d = equicorrelated(t_sim, rho);
    let noise = DVector::from_element(t_sim, 0.05);
    let fractions = vec![1.0 / t_sim as f64; t_sim];
    let nf: Vec<f64> = sim_grid.iter().map(|&n| n as f64).collect();
    let pred = asymptotics::many_task_curve(&spectrum, rho, t_sim, 0.05, &nf, &opts()).unwrap();
    let sim_opts = SimOptions {
        replicas: 50,
        seed: 8,
        scenario: scenario_id("many_tasks_t50"),
        tasks: vec![0],
        allocation: Allocation::InOrder,
        test_points: None,
    };
    for (i, &n) in sim_grid.iter().enumerate() {
        let e = simulator::bayes_error_estimate(&kernel, &dist, &d, &noise, n, &fractions, &sim_opts).unwrap();
        let z = (pred[i].eps - e.eps_hat[0]) / e.stderr[0];
        c.known(
            z.abs() <= 3.0,
            format!("T=50 n={n}: pred {:.4}, sim {:.4} +- {:.1e}, z = {z:+.2}", pred[i].eps, e.eps_hat[0], e.stderr[0]),
            "for SE kernels with Gaussian inputs the predictions lie 5-10% below simulation, far more than the stderr of 50 replicas",
        );
    }
}

