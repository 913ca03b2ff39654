//! End-to-end acceptance run: trains the desk-scale codec on a synthetic
//! corpus, attacks the benchmark under every schedule the criteria need and
//! prints one PASS/FAIL line per criterion. Exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use gsm_forge::benchmark::Benchmark;
use gsm_forge::commands::{self, load_benchmark};
use gsm_forge::config::ExperimentConfig;
use gsm_forge::ppm::write_raster;
use gsm_forge::run::{evaluate, run_jobs, worker_count, Evaluation, Job};
use gsm_forge::synth::{synth_raster, SynthParams};
use gsm_forge_core::attack::{gsm_objective, run_attack, AttackConfig, AttackResult, Schedule};
use gsm_forge_core::autodiff::{analytic_gradient, gradient_check, gradient_check_coords, Graph, Var};
use gsm_forge_core::codec::{self, CodecModel, Image, Quantizer, KERNEL, PAD, PROB_FLOOR, STRIDE};
use gsm_forge_core::defense::{JpegConfig, Rounding};
use gsm_forge_core::diagnostics::{classify_region, eta0_from_clean, residual_norm, segment_stages, RegionLabel, StageParams};
use gsm_forge_core::metrics::psnr;
use gsm_forge_core::{Result as CoreResult, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPSILON: f64 = 0.08;
const STEPS: usize = 2000;
const ALPHA0: f64 = 0.01;
const GRAD_TOL: f64 = 1e-4;
const LINF_SLACK: f64 = 1e-12;

const CONFIG: &str = "\
codec.hidden_channels = 32
codec.latent_channels = 16
codec.lambda = 3000
codec.lr = 7e-5
codec.epochs = 200
codec.batch_size = 1
codec.seed = 0
codec.latent_init_gain = 10
codec.train_dir = train
codec.crops_per_image = 4
codec.crop = 64
data.source_dir = bench
data.crop = 64
data.pairs = 8
data.seed = 0
attack.epsilon = 0.08
attack.steps = 2000
attack.alpha0 = 0.01
attack.decay_factor = 0.5
attack.seeds = 0,1,2
attack.success_threshold_psnr = 22
attack.eta0_multiple = 3
defense.quality = 90
output.directory = out
";

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Run {
    pair_id: usize,
    epsilon: f64,
    result: AttackResult,
    clean: Evaluation,
    defended: Option<Evaluation>,
}

struct Suite {
    model: CodecModel,
    bench: Benchmark,
    eta0: f64,
    threshold: f64,
    clean_bpp: Vec<f64>,
    runs: BTreeMap<&'static str, Vec<Run>>,
}

fn write_corpus(dir: &Path, count: usize, seed0: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let p = SynthParams { width: 192, height: 128, blur: 1.5 };
    for i in 0..count {
        write_raster(&synth_raster(&p, seed0 + i as u64), &dir.join(format!("img{i:03}.ppm"))).unwrap();
    }
}

fn schedule_cfg(label: &str, seed: u64) -> AttackConfig {
    let periodic = |eps: f64, k: f64, divisor: bool| AttackConfig {
        decay_factor: k,
        decay_is_divisor: divisor,
        ..AttackConfig::periodic(eps, STEPS, ALPHA0, 0.5, seed)
    };
    match label {
        "pgd2" | "soft_jpeg" => periodic(EPSILON, 0.5, false),
        "pgd2_eps0.06" => periodic(0.06, 0.5, false),
        "pgd2_eps0.10" => periodic(0.10, 0.5, false),
        "fixed_a0" => AttackConfig::fixed(EPSILON, STEPS, ALPHA0, seed),
        "fixed_a0/2" => AttackConfig::fixed(EPSILON, STEPS, ALPHA0 / 2.0, seed),
        "fixed_a0/10" => AttackConfig::fixed(EPSILON, STEPS, ALPHA0 / 10.0, seed),
        "k_div3" => periodic(EPSILON, 3.0, true),
        "k_div2.5" => periodic(EPSILON, 2.5, true),
        "k_div1.5" => periodic(EPSILON, 1.5, true),
        other => panic!("unknown schedule {other}"),
    }
}

const LABELS: [&str; 10] = [
    "pgd2",
    "fixed_a0",
    "fixed_a0/2",
    "fixed_a0/10",
    "pgd2_eps0.06",
    "pgd2_eps0.10",
    "soft_jpeg",
    "k_div3",
    "k_div2.5",
    "k_div1.5",
];

fn build_suite(root: &Path) -> Suite {
    write_corpus(&root.join("train"), 32, 1000);
    write_corpus(&root.join("bench"), 10, 0);
    std::fs::write(root.join("acceptance.cfg"), CONFIG).unwrap();
    let cfg = ExperimentConfig::load(&root.join("acceptance.cfg")).unwrap();

    let t0 = Instant::now();
    let data = commands::training_set(&cfg).unwrap();
    let report = codec::train(&commands::initial_model(&cfg).unwrap(), &data, &commands::train_options(&cfg)).unwrap();
    assert!(report.diverged_at.is_none(), "training diverged at {:?}", report.diverged_at);
    let model = report.model;
    let bench = load_benchmark(&cfg).unwrap();
    let held: Vec<f64> = bench.pairs.iter().map(|p| psnr(&model.reconstruct(&p.source).unwrap(), &p.source).unwrap()).collect();
    eprintln!(
        "  setup: trained {} epochs on {} crops in {:.0}s, clean reconstruction {:.2} dB",
        cfg.codec.epochs,
        data.len(),
        t0.elapsed().as_secs_f64(),
        held.iter().sum::<f64>() / held.len() as f64
    );

    let sources: Vec<Image> = bench.pairs.iter().map(|p| p.source.clone()).collect();
    let eta0 = eta0_from_clean(&model, &sources, cfg.attack.eta0_multiple).unwrap();
    let clean_bpp = sources.iter().map(|s| model.bpp(s).unwrap()).collect();
    let soft = JpegConfig { rounding: Rounding::Soft, ..cfg.defense.jpeg };
    let hard = JpegConfig { rounding: Rounding::Hard, ..cfg.defense.jpeg };

    let mut runs = BTreeMap::new();
    for label in LABELS {
        let t = Instant::now();
        let jobs: Vec<Job> = cfg
            .attack
            .seeds
            .iter()
            .flat_map(|&seed| {
                (0..bench.pairs.len()).map(move |pair_id| Job {
                    pair_id,
                    cfg: schedule_cfg(label, seed),
                    through_jpeg: (label == "soft_jpeg").then_some(soft),
                })
            })
            .collect();
        let outcomes = run_jobs(&model, &bench.pairs, jobs, worker_count());
        let mut out = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let result = o.result.unwrap_or_else(|e| panic!("{label} pair {} failed: {e}", o.job.pair_id));
            let pair = &bench.pairs[o.job.pair_id];
            let clean = evaluate(&model, pair, &result.adversarial, None).unwrap();
            let defended = matches!(label, "pgd2" | "soft_jpeg")
                .then(|| evaluate(&model, pair, &result.adversarial, Some(&hard)).unwrap());
            out.push(Run { pair_id: o.job.pair_id, epsilon: o.job.cfg.epsilon, result, clean, defended });
        }
        let mean = out.iter().map(|r| r.clean.report.psnr_db).sum::<f64>() / out.len() as f64;
        eprintln!("  ran {label:<13} {} runs in {:>4.0}s, mean target PSNR {mean:.2} dB", out.len(), t.elapsed().as_secs_f64());
        runs.insert(label, out);
    }
    Suite { model, bench, eta0, threshold: cfg.attack.success_threshold_psnr, clean_bpp, runs }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_psnr(runs: &[Run]) -> f64 {
    mean(runs.iter().map(|r| r.clean.report.psnr_db))
}

// ---- gradient correctness -------------------------------------------------

fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

/// Scalarizes `out` with fixed random weights so every output coordinate matters.
fn project(g: &mut Graph, out: Var, w: &Tensor) -> CoreResult<Var> {
    let m = g.mul_const(out, w)?;
    g.sum(m)
}

fn primitive_cases(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, err: CoreResult<f64>| out.push((name.to_string(), err.unwrap_or(f64::INFINITY)));
    let h = 1e-6;

    // Convolutions: gradient in input, kernel and bias.
    let x = rand_tensor(&mut rng, &[3, 8, 8], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[4, 3, KERNEL, KERNEL], -0.5, 0.5);
    let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
    let wc = rand_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0);
    let (k1, b1, w1) = (k.clone(), b.clone(), wc.clone());
    push("conv2d/input", gradient_check(move |g, v| {
        let (kk, bb) = (g.constant(k1.clone()), g.constant(b1.clone()));
        let y = g.conv2d(v, kk, bb, STRIDE, PAD)?;
        project(g, y, &w1)
    }, &x, h));
    let (x1, b1, w1) = (x.clone(), b.clone(), wc.clone());
    push("conv2d/kernel", gradient_check(move |g, v| {
        let (xx, bb) = (g.constant(x1.clone()), g.constant(b1.clone()));
        let y = g.conv2d(xx, v, bb, STRIDE, PAD)?;
        project(g, y, &w1)
    }, &k, h));
    let (x1, k1, w1) = (x.clone(), k.clone(), wc.clone());
    push("conv2d/bias", gradient_check(move |g, v| {
        let (xx, kk) = (g.constant(x1.clone()), g.constant(k1.clone()));
        let y = g.conv2d(xx, kk, v, STRIDE, PAD)?;
        project(g, y, &w1)
    }, &b, h));

    let z = rand_tensor(&mut rng, &[4, 4, 4], -1.0, 1.0);
    let dk = rand_tensor(&mut rng, &[4, 3, KERNEL, KERNEL], -0.5, 0.5);
    let db = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    let wd = rand_tensor(&mut rng, &[3, 8, 8], -1.0, 1.0);
    let (k1, b1, w1) = (dk.clone(), db.clone(), wd.clone());
    push("deconv2d/input", gradient_check(move |g, v| {
        let (kk, bb) = (g.constant(k1.clone()), g.constant(b1.clone()));
        let y = g.deconv2d(v, kk, bb, STRIDE, PAD)?;
        project(g, y, &w1)
    }, &z, h));
    let (z1, b1, w1) = (z.clone(), db.clone(), wd.clone());
    push("deconv2d/kernel", gradient_check(move |g, v| {
        let (zz, bb) = (g.constant(z1.clone()), g.constant(b1.clone()));
        let y = g.deconv2d(zz, v, bb, STRIDE, PAD)?;
        project(g, y, &w1)
    }, &dk, h));
    let (z1, k1, w1) = (z.clone(), dk.clone(), wd.clone());
    push("deconv2d/bias", gradient_check(move |g, v| {
        let (zz, kk) = (g.constant(z1.clone()), g.constant(k1.clone()));
        let y = g.deconv2d(zz, kk, v, STRIDE, PAD)?;
        project(g, y, &w1)
    }, &db, h));

    // Pointwise ops; inputs kept away from kinks by more than the FD step.
    let away = |rng: &mut ChaCha8Rng, dims: &[usize], kinks: &[f64]| {
        Tensor::from_fn(dims, |_| loop {
            let v: f64 = rng.gen_range(-2.0..2.0);
            if kinks.iter().all(|k| (v - k).abs() > 1e-3) {
                break v;
            }
        })
    };
    let w = rand_tensor(&mut rng, &[3, 8, 8], -1.0, 1.0);
    let p = away(&mut rng, &[3, 8, 8], &[0.0]);
    let w1 = w.clone();
    push("leaky_relu", gradient_check(move |g, v| {
        let y = g.leaky_relu(v, 0.1)?;
        project(g, y, &w1)
    }, &p, h));
    let p = away(&mut rng, &[3, 8, 8], &[-0.5, 0.5]);
    let w1 = w.clone();
    push("clamp", gradient_check(move |g, v| {
        let y = g.clamp(v, -0.5, 0.5)?;
        project(g, y, &w1)
    }, &p, h));
    let p = rand_tensor(&mut rng, &[3, 8, 8], -2.0, 2.0);
    let s = rng.gen_range(0.5..2.0);
    let w1 = w.clone();
    push("soft_round", gradient_check(move |g, v| {
        let y = g.soft_round(v, s)?;
        project(g, y, &w1)
    }, &p, h));
    let c = rand_tensor(&mut rng, &[3, 8, 8], -1.0, 1.0);
    let (c1, w1) = (c.clone(), w.clone());
    push("add_const+mul_const", gradient_check(move |g, v| {
        let y = g.add_const(v, &c1)?;
        let y = g.mul_const(y, &c1)?;
        project(g, y, &w1)
    }, &p, h));
    let (c1, w1) = (c.clone(), w.clone());
    push("add+sub+scale", gradient_check(move |g, v| {
        let other = g.constant(c1.clone());
        let a = g.add(v, other)?;
        let b = g.sub(a, v)?;
        let b = g.add(b, v)?;
        let y = g.scale(b, -1.7)?;
        project(g, y, &w1)
    }, &p, h));
    push("sum_squares", gradient_check(|g, v| g.sum_squares(v), &p, h));
    let mix = [[0.299, 0.587, 0.114], [-0.168736, -0.331264, 0.5], [0.5, -0.418688, -0.081312]];
    let w1 = w.clone();
    push("color_mix", gradient_check(move |g, v| {
        let y = g.color_mix(v, mix)?;
        project(g, y, &w1)
    }, &p, h));
    for inverse in [false, true] {
        let w1 = w.clone();
        push(if inverse { "block_dct/inverse" } else { "block_dct" }, gradient_check(move |g, v| {
            let y = g.block_dct(v, inverse)?;
            project(g, y, &w1)
        }, &p, h));
    }

    // Entropy model: in the latent, the location and the log-scale.
    let y = rand_tensor(&mut rng, &[3, 4, 4], -3.0, 3.0);
    let loc = rand_tensor(&mut rng, &[3], -0.5, 0.5);
    let ls = rand_tensor(&mut rng, &[3], -0.5, 0.8);
    let (l1, s1) = (loc.clone(), ls.clone());
    push("logistic_bits/latent", gradient_check(move |g, v| {
        let (a, b) = (g.constant(l1.clone()), g.constant(s1.clone()));
        g.logistic_bits(v, a, b, PROB_FLOOR)
    }, &y, h));
    let (y1, s1) = (y.clone(), ls.clone());
    push("logistic_bits/loc", gradient_check(move |g, v| {
        let (a, b) = (g.constant(y1.clone()), g.constant(s1.clone()));
        g.logistic_bits(a, v, b, PROB_FLOOR)
    }, &loc, h));
    let (y1, l1) = (y.clone(), loc.clone());
    push("logistic_bits/log_scale", gradient_check(move |g, v| {
        let (a, b) = (g.constant(y1.clone()), g.constant(l1.clone()));
        g.logistic_bits(a, b, v, PROB_FLOOR)
    }, &ls, h));
    out
}

/// The objective with the base point's rounding residual frozen: the function
/// whose exact gradient the straight-through objective reports.
fn frozen_rounding(model: &CodecModel, x_p: &Image, x_q: &Image, at: &Tensor) -> impl Fn(&mut Graph, Var) -> CoreResult<Var> {
    let x0 = at.zip_map(x_p.tensor(), |d, p| d + p).unwrap();
    let y0 = model.encode(&Image::from_clamped(&x0).unwrap()).unwrap();
    let residual = model.quantize(&y0, &mut Quantizer::Hard).unwrap().zip_map(&y0, |r, y| r - y).unwrap();
    let (model, x_p, x_q) = (model.clone(), x_p.tensor().clone(), x_q.tensor().clone());
    move |g: &mut Graph, d: Var| {
        let p = model.bind(g, false);
        let x = g.add_const(d, &x_p)?;
        let y = model.encode_on(g, &p, x)?;
        let y_hat = g.add_const(y, &residual)?;
        let x_hat = model.decode_on(g, &p, y_hat)?;
        let t = g.constant(x_q.clone());
        let diff = g.sub(x_hat, t)?;
        let s = g.sum_squares(diff)?;
        g.scale(s, -0.5)
    }
}

fn ac1(suite: &Suite) -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..3 {
        for (name, err) in primitive_cases(seed) {
            cases += 1;
            worst = worst.max(err);
            if !(err < GRAD_TOL) {
                return verdict(false, format!("{name} (seed {seed}) relative error {err:.2e}"));
            }
        }
    }
    // End to end on the trained codec: the reported gradient equals the tape
    // gradient of the frozen-rounding objective, which in turn matches
    // central differences.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut e2e_worst: f64 = 0.0;
    for i in 0..20 {
        let pair = &suite.bench.pairs[i % suite.bench.pairs.len()];
        let delta = Tensor::from_fn(pair.source.tensor().dims(), |_| rng.gen_range(-0.02..0.02));
        let x_p = Image::from_clamped(&pair.source.tensor().map(|v| v.clamp(0.03, 0.97))).unwrap();
        let eval = gsm_objective(&suite.model, &x_p, &delta, &pair.target).unwrap();
        let f = frozen_rounding(&suite.model, &x_p, &pair.target, &delta);
        let (value, grad) = analytic_gradient(&f, &delta).unwrap();
        let mut err = (value - eval.value).abs() / value.abs().max(1.0);
        for (a, b) in grad.iter().zip(&eval.grad) {
            err = err.max((a - b).abs() / (a.abs() + b.abs()).max(1e-8));
        }
        let coords: Vec<usize> = (0..12).map(|_| rng.gen_range(0..delta.len())).collect();
        let fd = gradient_check_coords(&f, &delta, 1e-5, &coords).unwrap();
        e2e_worst = e2e_worst.max(err).max(fd);
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        e2e_worst < GRAD_TOL && cases >= 50 && secs < 120.0,
        format!("{cases} cases, worst primitive {worst:.1e}, worst end-to-end {e2e_worst:.1e}"),
    )
}

fn ac2(suite: &Suite) -> Verdict {
    let pair = &suite.bench.pairs[0];
    let cfg = AttackConfig::periodic(EPSILON, 500, ALPHA0, 0.5, 0);
    let run = run_attack(&suite.model, pair, &cfg, 0).unwrap();
    let mut expected = ALPHA0;
    for rec in &run.trajectory {
        if rec.t > 0 && rec.t % cfg.period == 0 {
            expected *= 0.5;
        }
        if rec.alpha_t.to_bits() != expected.to_bits() {
            return verdict(false, format!("alpha at t={} is {} not {}", rec.t, rec.alpha_t, expected));
        }
    }
    if run.trajectory.len() != 500 {
        return verdict(false, format!("{} records for T=500", run.trajectory.len()));
    }
    let k1 = AttackConfig { decay_factor: 1.0, ..cfg.clone() };
    let fixed = AttackConfig { schedule: Schedule::Fixed, ..cfg };
    let (a, b) = (run_attack(&suite.model, pair, &k1, 0).unwrap(), run_attack(&suite.model, pair, &fixed, 0).unwrap());
    let same = a.trajectory == b.trajectory
        && a.final_delta.data().iter().zip(b.final_delta.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    verdict(same, if same { "500 step sizes bit-exact; k=1 bit-identical to fixed" } else { "k=1 diverges from fixed-step PGD" })
}

fn ac3(suite: &Suite) -> Verdict {
    let mut violations = 0;
    let mut total = 0;
    let mut worst: f64 = 0.0;
    for runs in suite.runs.values() {
        for r in runs {
            total += 1;
            let steps_max = r.result.trajectory.iter().map(|t| t.delta_linf).fold(r.result.final_delta.norm_linf(), f64::max);
            worst = worst.max(steps_max - r.epsilon);
            let pixels_ok = r.result.adversarial.data().iter().all(|v| (0.0..=1.0).contains(v));
            if steps_max > r.epsilon + LINF_SLACK || !pixels_ok {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("{violations} violations over {total} runs (max excess {worst:.1e})"))
}

fn ac4(suite: &Suite) -> Verdict {
    let pgd2 = mean_psnr(&suite.runs["pgd2"]);
    let mut detail = format!("PGD2 {pgd2:.2} dB");
    let mut pass = true;
    for label in ["fixed_a0", "fixed_a0/2", "fixed_a0/10"] {
        let m = mean_psnr(&suite.runs[label]);
        pass &= pgd2 - m >= 1.0;
        detail.push_str(&format!(", {label} {m:.2} ({:+.2})", pgd2 - m));
    }
    verdict(pass, detail)
}

fn ac5(suite: &Suite) -> Verdict {
    let params = StageParams::default();
    let small = &suite.runs["fixed_a0/10"];
    let lazy = small.iter().filter(|r| segment_stages(&r.result.trajectory, &params).unwrap().final_smoothed > 0.9).count();
    let pgd2 = &suite.runs["pgd2"];
    let fell = pgd2
        .iter()
        .filter(|r| {
            let s = segment_stages(&r.result.trajectory, &params).unwrap();
            s.final_smoothed < 0.6 * s.lcs_acme.1
        })
        .count();
    let mean_final = |runs: &[Run]| mean(runs.iter().map(|r| segment_stages(&r.result.trajectory, &params).unwrap().final_smoothed));
    let pass = lazy as f64 >= 0.8 * small.len() as f64 && fell as f64 >= 0.8 * pgd2.len() as f64;
    verdict(
        pass,
        format!(
            "small-step final LCS > 0.9 in {lazy}/{} (mean {:.2}); PGD2 fell below 0.6x acme in {fell}/{} (mean final {:.2})",
            small.len(),
            mean_final(small),
            pgd2.len(),
            mean_final(pgd2)
        ),
    )
}

fn ac6(suite: &Suite) -> Verdict {
    let (mut successes, mut violations) = (0, 0);
    for (label, runs) in &suite.runs {
        if *label == "soft_jpeg" {
            continue;
        }
        for r in runs {
            if r.clean.report.psnr_db >= suite.threshold {
                successes += 1;
                let eta = residual_norm(&suite.model, &r.result.adversarial).unwrap();
                if classify_region(eta, suite.eta0) != RegionLabel::Amplification {
                    violations += 1;
                }
            }
        }
    }
    verdict(
        violations == 0,
        format!("{successes} runs reached {} dB, {violations} classified identity (eta0 {:.3})", suite.threshold, suite.eta0),
    )
}

fn ac7(suite: &Suite) -> Verdict {
    let ms: Vec<f64> = ["pgd2_eps0.06", "pgd2", "pgd2_eps0.10"].iter().map(|l| mean_psnr(&suite.runs[l])).collect();
    verdict(ms[0] <= ms[1] && ms[1] <= ms[2], format!("eps 0.06/0.08/0.10: {:.2} / {:.2} / {:.2} dB", ms[0], ms[1], ms[2]))
}

fn ac8(suite: &Suite) -> Verdict {
    let mut ratios = Vec::new();
    let mut adv = Vec::new();
    let mut clean = Vec::new();
    for (label, runs) in &suite.runs {
        if *label == "soft_jpeg" {
            continue;
        }
        for r in runs.iter().filter(|r| r.clean.report.psnr_db >= suite.threshold) {
            adv.push(r.clean.report.bpp);
            clean.push(suite.clean_bpp[r.pair_id]);
            ratios.push(r.clean.report.bpp / suite.clean_bpp[r.pair_id]);
        }
    }
    if adv.is_empty() {
        let all = mean(suite.runs["pgd2"].iter().map(|r| r.clean.report.bpp / suite.clean_bpp[r.pair_id]));
        return verdict(false, format!("no successful attacks to measure (PGD2 bpp ratio over all runs {all:.2})"));
    }
    let (a, c) = (mean(adv.into_iter()), mean(clean.into_iter()));
    verdict(a > 1.5 * c, format!("adversarial {a:.3} vs clean {c:.3} bpp ({:.2}x) over {} successes", a / c, ratios.len()))
}

fn ac9(suite: &Suite) -> Verdict {
    let naive = &suite.runs["pgd2"];
    let none = mean_psnr(naive);
    let defended = mean(naive.iter().map(|r| r.defended.as_ref().unwrap().report.psnr_db));
    let adaptive = mean(suite.runs["soft_jpeg"].iter().map(|r| r.defended.as_ref().unwrap().report.psnr_db));
    let drop = none - defended;
    let recovered = adaptive - defended;
    verdict(
        drop >= 5.0 && recovered >= 2.0,
        format!("no defense {none:.2}, JPEG {defended:.2} (drop {drop:.2}), JPEG-aware {adaptive:.2} (recovers {recovered:.2}) dB"),
    )
}

fn ac10(suite: &Suite) -> Verdict {
    // Divisor 2 is the default schedule and divisor 1 is fixed-step PGD at alpha0.
    let check = |a: &AttackConfig, b: &AttackConfig| (0..STEPS).all(|t| a.step_size(t).to_bits() == b.step_size(t).to_bits());
    assert!(check(&schedule_cfg("pgd2", 0), &AttackConfig { decay_factor: 2.0, decay_is_divisor: true, ..schedule_cfg("pgd2", 0) }));
    let grid = [("1/3", "k_div3"), ("1/2.5", "k_div2.5"), ("1/2", "pgd2"), ("1/1.5", "k_div1.5"), ("1", "fixed_a0")];
    let ms: Vec<f64> = grid.iter().map(|(_, l)| mean_psnr(&suite.runs[l])).collect();
    let argmax = ms.iter().enumerate().fold(0, |b, (i, &v)| if v > ms[b] { i } else { b });
    let rising = (0..argmax).all(|i| ms[i] <= ms[i + 1]);
    let falling = (argmax..ms.len() - 1).all(|i| ms[i] >= ms[i + 1]);
    let interior = argmax != 0 && argmax != ms.len() - 1;
    let detail = grid.iter().zip(&ms).map(|((k, _), m)| format!("k={k}: {m:.2}")).collect::<Vec<_>>().join(", ");
    verdict(interior && rising && falling, detail)
}

fn ac11(root: &Path) -> Verdict {
    let base = ExperimentConfig::load(&root.join("acceptance.cfg")).unwrap();
    let weights = root.join("det_weights.gsmf");
    let mut small = base.clone();
    small.codec.hidden_channels = 8;
    small.codec.latent_channels = 4;
    small.codec.epochs = 2;
    small.data.pairs = 3;
    small.attack.steps = 60;
    small.sweep.epsilons = vec![0.06, 0.1];
    small.sweep.steps = vec![20, 40];
    small.output.emit_plots = true;
    let mut mismatched = Vec::new();
    let mut compared = 0;
    let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for rep in 0..2 {
        small.output.directory = root.join(format!("det{rep}"));
        let tr = commands::cmd_train(&small).unwrap();
        let model_path = tr.directory.join("weights.gsmf");
        std::fs::copy(&model_path, &weights).unwrap();
        let model = gsm_forge::load_model(&small, &weights).unwrap();
        let mut files = vec![("train/weights.gsmf".to_string(), std::fs::read(model_path).unwrap())];
        for (name, report) in [
            ("attack", commands::cmd_attack(&small, &model).unwrap()),
            ("sweep", commands::cmd_sweep(&small, &model).unwrap()),
            ("ablate_k", commands::cmd_ablate_k(&small, &model, &[3.0, 2.0, 1.0]).unwrap()),
            ("defense", commands::cmd_defense(&small, &model).unwrap()),
        ] {
            for f in ["results.csv", "summary.csv", "sweep_heatmap.svg", "ablation_curve.svg", "lcs_trajectory.svg"] {
                if let Ok(bytes) = std::fs::read(report.directory.join(f)) {
                    files.push((format!("{name}/{f}"), bytes));
                }
            }
        }
        outputs.push(files);
    }
    for ((na, a), (nb, b)) in outputs[0].iter().zip(&outputs[1]) {
        compared += 1;
        if na != nb || a != b {
            mismatched.push(na.clone());
        }
    }
    let pass = mismatched.is_empty() && outputs[0].len() == outputs[1].len() && compared >= 10;
    verdict(pass, format!("{compared} output files compared across two runs, mismatched: {mismatched:?}"))
}

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let start = Instant::now();
    eprintln!("acceptance: building desk-scale suite");
    let suite = build_suite(root);
    let criteria: Vec<(&str, &str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("AC1", "gradient correctness", Box::new(|| ac1(&suite))),
        ("AC2", "schedule exactness", Box::new(|| ac2(&suite))),
        ("AC3", "l-infinity discipline", Box::new(|| ac3(&suite))),
        ("AC4", "decay schedule beats fixed steps", Box::new(|| ac4(&suite))),
        ("AC5", "lazy convergence of small steps", Box::new(|| ac5(&suite))),
        ("AC6", "successful attacks amplify", Box::new(|| ac6(&suite))),
        ("AC7", "budget monotonicity", Box::new(|| ac7(&suite))),
        ("AC8", "bpp inflation", Box::new(|| ac8(&suite))),
        ("AC9", "JPEG defense and bypass", Box::new(|| ac9(&suite))),
        ("AC10", "decay-factor ablation shape", Box::new(|| ac10(&suite))),
        ("AC11", "determinism", Box::new(|| ac11(root))),
    ];
    let mut failed = Vec::new();
    for (id, name, check) in &criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        eprintln!("{tag} {id:<4} {name}: {} [{:.1}s]", v.detail, t.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(*id);
        }
    }
    eprintln!("acceptance: finished in {:.0}s", start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("acceptance: failed {}", failed.join(", "));
        std::process::exit(1);
    }
}
