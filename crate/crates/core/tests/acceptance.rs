//! Acceptance criteria 1 to 8, one pass/fail line each.
//!
//! Run with `cargo test -p ordpol --test acceptance`. The process exits non-zero if any
//! criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use ordpol::algo::{
    advantages, fisher_vector_product, natural_direction, score_function_gradient, Baseline,
    StepWeighting, Trajectory,
};
use ordpol::approx::{ScoreFunction, ScoreKind, Shape};
use ordpol::dist::{ordinal_log_prob_grad, ordinal_pmf, Thresholds};
use ordpol::env::{ActionSpace, Environment, StepInfo, Transition};
use ordpol::exp::{
    compare_policies, run_experiment, write_run_outputs, ExperimentConfig, ExperimentResult,
    LearningCurve, RunManifest, RunOptions, CURVES_FILE, SMOOTHED_FILE,
};
use ordpol::policy::{Action, ActionDist, Family, Policy, PolicySpec};
use ordpol::rng::{stream, Stream};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.json"));
    let text = std::fs::read_to_string(&path).expect("bundled config");
    ExperimentConfig::from_json(&text).expect("valid bundled config")
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn random_thresholds<R: Rng>(k: usize, rng: &mut R) -> Thresholds {
    let mut raw = vec![rng.random_range(-3.0..3.0)];
    raw.extend((1..k - 1).map(|_| rng.random_range(-2.0..1.0)));
    Thresholds::from_raw(raw).unwrap()
}

fn criterion_1() -> Outcome {
    let mut rng = stream(101, Stream::Init);
    let mut worst_sum: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..10_000 {
        let k = rng.random_range(3..=10);
        let tau = random_thresholds(k, &mut rng).cutpoints();
        let g = rng.random_range(-5.0..5.0);
        let pmf = ordinal_pmf(&tau, g).unwrap();
        let p = pmf.probs();
        let sum_err = (p.iter().sum::<f64>() - 1.0).abs();
        worst_sum = worst_sum.max(sum_err);
        let cdf = pmf.cdf();
        let monotone = cdf.windows(2).all(|w| w[0] <= w[1]);
        if p.len() != k || sum_err > 1e-12 || !monotone || p.iter().any(|&x| !(x > 0.0)) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("10000 pmfs, {failures} violations, worst |sum - 1| = {worst_sum:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = stream(202, Stream::Init);
    let h = 1e-6;
    let mut worst_ord: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..=10);
        let th = random_thresholds(k, &mut rng);
        let g = rng.random_range(-4.0..4.0);
        let a = rng.random_range(0..k);
        let grad = ordinal_log_prob_grad(&th, g, a).unwrap();
        let lp = |raw: &[f64], g: f64| {
            let tau = Thresholds::from_raw(raw.to_vec()).unwrap().cutpoints();
            ordinal_pmf(&tau, g).unwrap().log_probs()[a]
        };
        let raw = th.raw().to_vec();
        let mut analytic = vec![grad.d_score];
        analytic.extend(&grad.d_raw);
        let mut numeric = vec![(lp(&raw, g + h) - lp(&raw, g - h)) / (2.0 * h)];
        for i in 0..raw.len() {
            let (mut up, mut dn) = (raw.clone(), raw.clone());
            up[i] += h;
            dn[i] -= h;
            numeric.push((lp(&up, g) - lp(&dn, g)) / (2.0 * h));
        }
        worst_ord = worst_ord.max(rel_err(&analytic, &numeric));
    }
    let mut worst_mlp: f64 = 0.0;
    for _ in 0..50 {
        let shape = Shape::new(
            rng.random_range(1..=4),
            rng.random_range(2..=6),
            rng.random_range(1..=3),
        );
        let n = shape.param_count(ScoreKind::Mlp2);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = ScoreFunction::from_weights(ScoreKind::Mlp2, shape, w.clone()).unwrap();
        let s: Vec<f64> = (0..shape.input)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let u: Vec<f64> = (0..shape.output)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let acts = f.forward_cached(&s).unwrap();
        let mut analytic = vec![0.0; n];
        f.backward_into(&s, &acts, &u, &mut analytic).unwrap();
        let proj = |w: &[f64]| -> f64 {
            let f = ScoreFunction::from_weights(ScoreKind::Mlp2, shape, w.to_vec()).unwrap();
            f.forward(&s)
                .unwrap()
                .iter()
                .zip(&u)
                .map(|(o, u)| o * u)
                .sum()
        };
        let numeric: Vec<f64> = (0..n)
            .map(|i| {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[i] += h;
                dn[i] -= h;
                (proj(&up) - proj(&dn)) / (2.0 * h)
            })
            .collect();
        worst_mlp = worst_mlp.max(rel_err(&analytic, &numeric));
    }
    outcome(
        worst_ord <= 1e-5 && worst_mlp <= 1e-5,
        format!("worst relative error: ordinal {worst_ord:.2e} (200 checks), mlp vjp {worst_mlp:.2e} (50 checks)"),
    )
}

/// Two states, three ordered actions, fixed horizon, stochastic transitions.
struct SmallMdp {
    state: usize,
    t: usize,
    rng: ordpol::rng::Rng,
}

const MDP_HORIZON: usize = 4;
const MDP_GAMMA: f64 = 0.9;
const MDP_REWARD: [[f64; 3]; 2] = [[1.0, 0.0, -0.5], [-1.0, 0.5, 2.0]];
/// Probability of moving to state 1 from (state, action).
const MDP_TO_ONE: [[f64; 3]; 2] = [[0.1, 0.5, 0.9], [0.2, 0.6, 0.7]];

fn one_hot(s: usize) -> Vec<f64> {
    if s == 0 {
        vec![1.0, 0.0]
    } else {
        vec![0.0, 1.0]
    }
}

impl Environment for SmallMdp {
    fn obs_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete {
            classes: 3,
            dims: 1,
        }
    }

    fn reset(&mut self) -> ordpol::Result<Vec<f64>> {
        self.state = 0;
        self.t = 0;
        Ok(one_hot(0))
    }

    fn step(&mut self, action: &Action) -> ordpol::Result<Transition> {
        let a = action.as_discrete().unwrap()[0];
        let reward = MDP_REWARD[self.state][a];
        let u: f64 = self.rng.random();
        self.state = usize::from(u < MDP_TO_ONE[self.state][a]);
        self.t += 1;
        Ok(Transition {
            observation: one_hot(self.state),
            reward,
            done: self.t >= MDP_HORIZON,
            info: StepInfo::default(),
        })
    }
}

fn probs(policy: &Policy, obs: &[f64]) -> Vec<f64> {
    match policy.distribution(obs).unwrap() {
        ActionDist::Categorical(p) => p[0].probs().to_vec(),
        ActionDist::Gaussian(_) => unreachable!("discrete policy"),
    }
}

/// Exact expected discounted return by backward induction.
fn exact_value(policy: &Policy) -> f64 {
    let pi = [probs(policy, &one_hot(0)), probs(policy, &one_hot(1))];
    let mut v = [0.0; 2];
    for _ in 0..MDP_HORIZON {
        let mut next = [0.0; 2];
        for s in 0..2 {
            next[s] = (0..3)
                .map(|a| {
                    let p1 = MDP_TO_ONE[s][a];
                    pi[s][a] * (MDP_REWARD[s][a] + MDP_GAMMA * ((1.0 - p1) * v[0] + p1 * v[1]))
                })
                .sum();
        }
        v = next;
    }
    v[0]
}

fn unbiasedness_check(family: Family, seed: u64) -> (bool, f64) {
    let spec = PolicySpec {
        family,
        torso: ScoreKind::Linear,
        hidden: 0,
        obs_dim: 2,
    };
    let mut policy = Policy::new(spec, &mut stream(seed, Stream::Init)).unwrap();
    let mut rng = stream(seed, Stream::Shuffle);
    let theta: Vec<f64> = policy
        .params()
        .iter()
        .map(|p| p + rng.random_range(-0.7..0.7))
        .collect();
    policy.set_params(&theta).unwrap();

    let h = 1e-5;
    let truth: Vec<f64> = (0..theta.len())
        .map(|i| {
            let mut p = policy.clone();
            let mut up = theta.clone();
            up[i] += h;
            p.set_params(&up).unwrap();
            let jp = exact_value(&p);
            let mut dn = theta.clone();
            dn[i] -= h;
            p.set_params(&dn).unwrap();
            (jp - exact_value(&p)) / (2.0 * h)
        })
        .collect();

    let n = 100_000;
    let mut env = SmallMdp {
        state: 0,
        t: 0,
        rng: stream(seed, Stream::EnvReaction),
    };
    let mut act_rng = stream(seed, Stream::Policy);
    let d = theta.len();
    let (mut sum, mut sum_sq) = (vec![0.0; d], vec![0.0; d]);
    for _ in 0..n {
        let traj: Trajectory = ordpol::algo::rollout(&mut env, &policy, &mut act_rng).unwrap();
        let trajs = [traj];
        let adv = advantages(&trajs, MDP_GAMMA, Baseline::None);
        let (g, _) = score_function_gradient(
            &policy,
            &trajs,
            &adv,
            StepWeighting::Discounted,
            MDP_GAMMA,
            1.0,
        )
        .unwrap();
        for i in 0..d {
            sum[i] += g[i];
            sum_sq[i] += g[i] * g[i];
        }
    }
    let mut worst_z: f64 = 0.0;
    for i in 0..d {
        let mean = sum[i] / n as f64;
        let var = (sum_sq[i] / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        let z = if se > 0.0 {
            (mean - truth[i]).abs() / se
        } else if (mean - truth[i]).abs() < 1e-9 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }
    (worst_z <= 4.0, worst_z)
}

fn criterion_3() -> Outcome {
    let (ok_o, z_o) = unbiasedness_check(
        Family::Ordinal {
            classes: 3,
            action_dims: 1,
        },
        31,
    );
    let (ok_s, z_s) = unbiasedness_check(Family::Softmax { classes: 3 }, 32);
    outcome(
        ok_o && ok_s,
        format!(
            "10^5 rollouts each, worst |mean - exact| / se: ordinal {z_o:.2}, softmax {z_s:.2}"
        ),
    )
}

/// `mean_s Σ_a π(a|s) ∇ln π(a|s) ∇ln π(a|s)ᵀ`, assembled from per-class score vectors.
fn dense_fisher(policy: &Policy, states: &[Vec<f64>], classes: usize) -> DMatrix<f64> {
    let n = policy.num_params();
    let mut f = DMatrix::zeros(n, n);
    for s in states {
        let p = probs(policy, s);
        for (a, &pa) in p.iter().enumerate().take(classes) {
            let mut g = vec![0.0; n];
            policy
                .accumulate_log_prob_grad(s, &Action::discrete(a), 1.0, &mut g)
                .unwrap();
            let g = DVector::from_vec(g);
            f += pa * &g * g.transpose();
        }
    }
    f / states.len() as f64
}

fn criterion_4() -> Outcome {
    let mut rng = stream(404, Stream::Init);
    let ordinal = Family::Ordinal {
        classes: 4,
        action_dims: 1,
    };
    let cases = [
        (ordinal, ScoreKind::Linear, 0, 2),
        (Family::Softmax { classes: 4 }, ScoreKind::Linear, 0, 2),
        (ordinal, ScoreKind::Mlp2, 2, 2),
        (Family::Softmax { classes: 3 }, ScoreKind::Mlp2, 2, 1),
    ];
    let (mut worst_fvp, mut worst_cg): (f64, f64) = (0.0, 0.0);
    let mut max_params = 0;
    for (case, &(family, torso, hidden, obs_dim)) in cases.iter().enumerate() {
        let spec = PolicySpec {
            family,
            torso,
            hidden,
            obs_dim,
        };
        let mut policy = Policy::new(spec, &mut stream(case as u64, Stream::Init)).unwrap();
        let n = policy.num_params();
        max_params = max_params.max(n);
        let theta: Vec<f64> = policy
            .params()
            .iter()
            .map(|p| p + rng.random_range(-0.5..0.5))
            .collect();
        policy.set_params(&theta).unwrap();
        let states: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..obs_dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let f = dense_fisher(&policy, &states, family.classes().unwrap());
        for _ in 0..5 {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fvp = fisher_vector_product(&policy, &states, &v, 0.0).unwrap();
            let dense = &f * DVector::from_vec(v.clone());
            worst_fvp = worst_fvp.max(rel_err(&fvp, dense.as_slice()));
        }
        let damping = 0.1;
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let nd = natural_direction(
            &g,
            |v| fisher_vector_product(&policy, &states, v, damping),
            4 * n,
            1e-12,
            0.01,
        )
        .unwrap();
        let a = &f + DMatrix::identity(n, n) * damping;
        let direct = a
            .lu()
            .solve(&DVector::from_vec(g))
            .expect("damped Fisher is invertible");
        worst_cg = worst_cg.max(rel_err(&nd.direction, direct.as_slice()));
    }
    outcome(
        worst_fvp <= 1e-8 && worst_cg <= 1e-6 && max_params <= 20,
        format!("up to {max_params} parameters: fvp vs dense {worst_fvp:.2e}, cg vs direct solve {worst_cg:.2e}"),
    )
}

const OPTIMIZERS: [&str; 3] = ["reinforce", "npg", "trpo"];

struct TintStudy {
    cells: Vec<(String, String, ExperimentResult, LearningCurve)>,
}

fn tint_study() -> TintStudy {
    let mut cells = Vec::new();
    for opt in OPTIMIZERS {
        for family in ["ordinal", "softmax"] {
            let cfg = config(&format!("tint_{opt}_{family}"));
            let result = run_experiment(&cfg, RunOptions::default()).unwrap();
            let curve = result.curve().unwrap();
            cells.push((opt.to_string(), family.to_string(), result, curve));
        }
    }
    TintStudy { cells }
}

fn criterion_5(fig: &TintStudy) -> Outcome {
    let find = |opt: &str, fam: &str| {
        &fig.cells
            .iter()
            .find(|c| c.0 == opt && c.1 == fam)
            .expect("cell")
            .3
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for opt in OPTIMIZERS {
        let (o, s) = (find(opt, "ordinal"), find(opt, "softmax"));
        let cmp = compare_policies(o, s, None).unwrap();
        let wins = cmp.a_better + cmp.ties;
        let a = wins >= 8 && o.seeds.len() == 10;
        let b = o.final_quarter_std() <= s.final_quarter_std();
        pass &= a && b;
        parts.push(format!(
            "{opt}: ordinal {:.2} (std {:.2}) vs softmax {:.2} (std {:.2}), ordinal not worse on {wins}/10",
            o.final_quarter_mean(),
            o.final_quarter_std(),
            s.final_quarter_mean(),
            s.final_quarter_std()
        ));
    }
    let best = fig
        .cells
        .iter()
        .max_by(|x, y| {
            x.3.final_quarter_mean()
                .total_cmp(&y.3.final_quarter_mean())
        })
        .expect("six cells");
    let c = best.0 == "trpo" && best.1 == "ordinal";
    pass &= c;
    parts.push(format!("best cell {}/{}", best.1, best.0));
    outcome(pass, parts.join("; "))
}

fn criterion_6() -> Outcome {
    let g_cfg = config("tracking_ppo_gaussian");
    let o_cfg = config("tracking_ppo_discretized_ordinal");
    let g = run_experiment(&g_cfg, RunOptions::default())
        .unwrap()
        .curve()
        .unwrap();
    let o = run_experiment(&o_cfg, RunOptions::default())
        .unwrap()
        .curve()
        .unwrap();
    let (rg, ro) = (g.final_quarter_mean(), o.final_quarter_mean());
    // 90% of the reference return, measured from the reference towards worse returns.
    let bar = rg - 0.1 * rg.abs();
    outcome(
        ro >= bar && g.seeds.len() == 5 && o.seeds.len() == 5,
        format!("discretized ordinal {ro:.3} vs gaussian {rg:.3} (bar {bar:.3}), 5 seeds"),
    )
}

fn criterion_7(fig: &TintStudy) -> Outcome {
    let trpo_cfg = &fig
        .cells
        .iter()
        .find(|c| c.0 == "trpo")
        .expect("trpo cell")
        .2
        .config;
    let delta = match &trpo_cfg.optimizer {
        ordpol::algo::OptimizerConfig::Trpo(t) => t.max_kl,
        _ => unreachable!("trpo config"),
    };
    let mut max_kl: f64 = 0.0;
    let mut accepted = 0;
    for c in fig.cells.iter().filter(|c| c.0 == "trpo") {
        max_kl = max_kl.max(c.2.max_accepted_kl());
        accepted += c.2.updates().filter(|u| u.stats.accepted).count();
    }
    let (mut ordered, mut total) = (0, 0);
    for c in fig.cells.iter().filter(|c| c.1 == "ordinal") {
        total += c.2.updates().count();
        ordered += c.2.updates().filter(|u| u.stats.thresholds_ordered).count();
    }
    outcome(
        max_kl <= delta + 1e-8 && ordered == total && accepted > 0,
        format!(
            "max accepted KL {max_kl:.3e} over {accepted} accepted TRPO steps (delta {delta}); thresholds ordered after {ordered}/{total} ordinal updates"
        ),
    )
}

fn run_to_dir(cfg: &ExperimentConfig, parallel: usize, dir: &Path) {
    let result = run_experiment(
        cfg,
        RunOptions {
            parallel_seeds: parallel,
        },
    )
    .unwrap();
    let manifest = RunManifest::new("acceptance", cfg, parallel, 0.0).unwrap();
    write_run_outputs(dir, &result, manifest).unwrap();
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut checked = Vec::new();
    let mut pass = true;
    for (name, episodes, every) in [
        ("tint_trpo_ordinal", 60, 20),
        ("tint_reinforce_softmax", 60, 20),
        ("tracking_ppo_discretized_ordinal", 24, 0),
        ("tracking_ppo_gaussian", 24, 0),
    ] {
        let mut cfg = config(name);
        cfg.episodes = episodes;
        cfg.seeds = vec![3, 5, 8];
        cfg.window = 4;
        cfg.trajectory_every = every;
        let (a, b) = (
            tmp.path().join(format!("{name}-a")),
            tmp.path().join(format!("{name}-b")),
        );
        std::fs::create_dir(&a).unwrap();
        std::fs::create_dir(&b).unwrap();
        run_to_dir(&cfg, 1, &a);
        run_to_dir(&cfg, 3, &b);
        let (fa, fb) = (csv_files(&a), csv_files(&b));
        let has_core = [CURVES_FILE, SMOOTHED_FILE]
            .iter()
            .all(|f| fa.iter().any(|(n, _)| n == f));
        pass &= has_core && fa == fb;
        checked.push(format!("{name} ({} files)", fa.len()));
    }
    outcome(
        pass,
        format!(
            "sequential and parallel reruns byte-identical: {}",
            checked.join(", ")
        ),
    )
}

fn report(n: usize, limit: Duration, start: Instant, o: Outcome, failed: &mut usize) {
    let elapsed = start.elapsed();
    let in_time = elapsed <= limit;
    let pass = o.pass && in_time;
    if !pass {
        *failed += 1;
    }
    println!(
        "criterion {n}: {} [{:.1}s, limit {}s] {}{}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs(),
        o.detail,
        if in_time { "" } else { " (over time limit)" }
    );
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let mut failed = 0;
    let t = Instant::now();
    report(1, Duration::from_secs(5), t, criterion_1(), &mut failed);
    let t = Instant::now();
    report(2, Duration::from_secs(30), t, criterion_2(), &mut failed);
    let t = Instant::now();
    report(3, Duration::from_secs(120), t, criterion_3(), &mut failed);
    let t = Instant::now();
    report(4, Duration::from_secs(5), t, criterion_4(), &mut failed);
    let t = Instant::now();
    let fig = tint_study();
    report(
        5,
        Duration::from_secs(15 * 60),
        t,
        criterion_5(&fig),
        &mut failed,
    );
    let t = Instant::now();
    report(
        6,
        Duration::from_secs(10 * 60),
        t,
        criterion_6(),
        &mut failed,
    );
    let t = Instant::now();
    report(7, Duration::from_secs(5), t, criterion_7(&fig), &mut failed);
    let t = Instant::now();
    report(
        8,
        Duration::from_secs(5 * 60),
        t,
        criterion_8(),
        &mut failed,
    );
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
