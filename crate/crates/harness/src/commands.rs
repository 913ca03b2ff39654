//! The experiment subcommands. Each writes under `output.directory/<command>`
//! and finishes with a manifest listing every file it produced.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gsm_forge_core::attack::{AttackConfig, GsmPair, Schedule};
use gsm_forge_core::codec::{self, CodecModel, Image, TrainOptions, DEC1_W, DEC2_W, ENC1_W, ENC2_B, ENC2_W};
use gsm_forge_core::defense::{JpegConfig, Rounding};
use gsm_forge_core::diagnostics::{classify_region, eta0_from_clean, write_trajectory_csv, RegionLabel};

use crate::benchmark::{load_pairs, make_benchmark, training_crops, Benchmark, PairRecord};
use crate::config::{sha256_hex, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::plot::{emit_plot, PlotKind};
use crate::ppm::save_image;
use crate::run::{evaluate, run_jobs, worker_count, Job, Outcome};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const RESULT_COLUMNS: &str = "pair_id,seed,psnr_db,ms_ssim,bpp,delta_linf,residual_norm,region,status,error";
pub const SUMMARY_COLUMNS: &str = "runs,failed,psnr_mean,psnr_std,ms_ssim_mean,ms_ssim_std,bpp_mean,bpp_std";

/// What a command leaves behind; `failures` counts rows whose status is not `ok`.
#[derive(Clone, Debug)]
pub struct CommandReport {
    pub directory: PathBuf,
    pub failures: usize,
    pub rows: Vec<ResultRow>,
}

/// One evaluated run. `key` holds the leading grid columns (empty for `attack`).
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub key: Vec<String>,
    pub pair_id: usize,
    pub seed: u64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub bpp: f64,
    pub delta_linf: f64,
    pub residual_norm: f64,
    pub region: Option<RegionLabel>,
    pub status: &'static str,
    pub error: String,
}

impl ResultRow {
    fn to_csv(&self) -> String {
        let mut s = String::new();
        for k in &self.key {
            s.push_str(k);
            s.push(',');
        }
        let region = match self.region {
            Some(RegionLabel::Identity) => "identity",
            Some(RegionLabel::Amplification) => "amplification",
            None => "",
        };
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.pair_id,
            self.seed,
            num(self.psnr_db),
            num(self.ms_ssim),
            num(self.bpp),
            num(self.delta_linf),
            num(self.residual_norm),
            region,
            self.status,
            self.error.replace([',', '\n', '\r'], ";")
        );
        s
    }
}

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.6}")
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Manifest {
    dir: PathBuf,
    config_hash: String,
    phases: Vec<(String, f64)>,
    pairs: Vec<PairRecord>,
    files: Vec<PathBuf>,
    notes: Vec<String>,
    rows: Vec<String>,
}

impl Manifest {
    fn new(dir: &Path, cfg: &ExperimentConfig) -> Self {
        Manifest {
            dir: dir.to_path_buf(),
            config_hash: cfg.hash(),
            phases: Vec::new(),
            pairs: Vec::new(),
            files: Vec::new(),
            notes: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    fn write_file(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(HarnessError::io(&path))?;
        self.files.push(PathBuf::from(name));
        Ok(())
    }

    fn record(&mut self, name: &str) {
        self.files.push(PathBuf::from(name));
    }

    fn finish(self) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        let _ = writeln!(s, "tool_version {}", env!("CARGO_PKG_VERSION"));
        for (name, secs) in &self.phases {
            let _ = writeln!(s, "phase {name} {secs:.3}s");
        }
        for r in &self.pairs {
            let _ = writeln!(
                s,
                "pair {} source {} {} {} target {} {} {}",
                r.pair_id,
                r.source.path.display(),
                r.source.top,
                r.source.left,
                r.target.path.display(),
                r.target.top,
                r.target.left
            );
        }
        for note in &self.notes {
            let _ = writeln!(s, "{note}");
        }
        for row in &self.rows {
            let _ = writeln!(s, "row {row}");
        }
        for f in &self.files {
            let path = self.dir.join(f);
            let bytes = std::fs::read(&path).map_err(HarnessError::io(&path))?;
            let _ = writeln!(s, "file {} sha256 {}", f.display(), sha256_hex(&bytes));
        }
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, s).map_err(HarnessError::io(&path))
    }
}

fn command_dir(cfg: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.output.directory.join(name);
    std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    Ok(dir)
}

/// Freshly initialized codec with the configured init gains applied.
pub fn initial_model(cfg: &ExperimentConfig) -> Result<CodecModel> {
    let c = &cfg.codec;
    let mut m = CodecModel::new(c.hidden_channels, c.latent_channels, c.lambda, c.seed)?;
    let mut scale = |name: &str, f: f64| {
        if f != 1.0 {
            if let Some(t) = m.parameter_mut(name) {
                t.data_mut().iter_mut().for_each(|v| *v *= f);
            }
        }
    };
    scale(ENC1_W, c.outer_init_gain);
    scale(DEC2_W, c.outer_init_gain);
    scale(ENC2_W, c.latent_init_gain);
    scale(ENC2_B, c.latent_init_gain);
    scale(DEC1_W, 1.0 / c.latent_init_gain);
    Ok(m)
}

pub fn training_set(cfg: &ExperimentConfig) -> Result<Vec<Image>> {
    let dir = cfg
        .codec
        .train_dir
        .as_ref()
        .or(cfg.data.source_dir.as_ref())
        .ok_or_else(|| HarnessError::config("training needs codec.train_dir or data.source_dir"))?;
    training_crops(dir, cfg.codec.crop, cfg.codec.crops_per_image, cfg.codec.seed)
}

pub fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    let c = &cfg.codec;
    TrainOptions {
        epochs: c.epochs,
        lr: c.lr,
        seed: c.seed,
        batch_size: c.batch_size,
        plateau_patience: (c.plateau_patience > 0).then_some(c.plateau_patience),
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<CommandReport> {
    let dir = command_dir(cfg, "train")?;
    let mut man = Manifest::new(&dir, cfg);
    let data = man.phase("load", || training_set(cfg))?;
    let init = initial_model(cfg)?;
    let report = man.phase("train", || codec::train(&init, &data, &train_options(cfg)))?;
    let weights = dir.join("weights.gsmf");
    codec::save_weights(&report.model, &weights)?;
    man.record("weights.gsmf");
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in report.history.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, num(*l));
    }
    man.write_file("train_loss.csv", csv.as_bytes())?;
    if let Some((epoch, step)) = report.diverged_at {
        man.notes.push(format!("diverged epoch {epoch} step {step}"));
    }
    man.finish()?;
    Ok(CommandReport { directory: dir, failures: usize::from(report.diverged_at.is_some()), rows: Vec::new() })
}

pub fn load_benchmark(cfg: &ExperimentConfig) -> Result<Benchmark> {
    if !cfg.attack.pairs.is_empty() {
        return load_pairs(&cfg.attack.pairs);
    }
    let dir = cfg
        .data
        .source_dir
        .as_ref()
        .ok_or_else(|| HarnessError::config("set attack.pairs or data.source_dir"))?;
    make_benchmark(dir, cfg.data.crop, cfg.data.pairs, cfg.data.seed)
}

/// Evaluated rows for `outcomes`, in order. `defense` selects hard-JPEG evaluation.
pub fn evaluate_outcomes(
    model: &CodecModel,
    pairs: &[GsmPair],
    outcomes: &[Outcome],
    key: &dyn Fn(&Outcome) -> Vec<String>,
    defense: Option<&JpegConfig>,
    eta0: f64,
) -> Vec<(ResultRow, Option<Image>)> {
    outcomes
        .iter()
        .map(|o| {
            let mut row = ResultRow {
                key: key(o),
                pair_id: o.job.pair_id,
                seed: o.job.cfg.seed,
                psnr_db: f64::NAN,
                ms_ssim: f64::NAN,
                bpp: f64::NAN,
                delta_linf: f64::NAN,
                residual_norm: f64::NAN,
                region: None,
                status: o.status(),
                error: String::new(),
            };
            let res = match &o.result {
                Err(e) => {
                    row.error = e.clone();
                    return (row, None);
                }
                Ok(r) => r,
            };
            if let Some(e) = &res.error {
                row.error = e.clone();
            }
            match evaluate(model, &pairs[o.job.pair_id], &res.adversarial, defense) {
                Ok(ev) => {
                    row.psnr_db = ev.report.psnr_db;
                    row.ms_ssim = ev.report.ms_ssim;
                    row.bpp = ev.report.bpp;
                    row.delta_linf = ev.report.delta_linf;
                    row.residual_norm = ev.residual_norm;
                    row.region = eta0.is_finite().then(|| classify_region(ev.residual_norm, eta0));
                    (row, Some(ev.reconstruction))
                }
                Err(e) => {
                    row.status = "failed";
                    row.error = e.to_string();
                    (row, None)
                }
            }
        })
        .collect()
}

fn results_csv(key_columns: &[&str], rows: &[ResultRow]) -> String {
    let mut s = String::new();
    for k in key_columns {
        s.push_str(k);
        s.push(',');
    }
    s.push_str(RESULT_COLUMNS);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Per grid key: failures, then mean/stddev over seeds of the per-seed
/// benchmark means.
pub fn summary_csv(key_columns: &[&str], rows: &[ResultRow]) -> String {
    let mut keys: Vec<&Vec<String>> = Vec::new();
    for r in rows {
        if !keys.contains(&&r.key) {
            keys.push(&r.key);
        }
    }
    let mut s = String::new();
    for k in key_columns {
        s.push_str(k);
        s.push(',');
    }
    s.push_str(SUMMARY_COLUMNS);
    s.push('\n');
    for key in keys {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| &r.key == key).collect();
        let ok: Vec<&&ResultRow> = group.iter().filter(|r| r.psnr_db.is_finite()).collect();
        let mut seeds: Vec<u64> = ok.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let per_seed = |f: fn(&ResultRow) -> f64| -> Vec<f64> {
            seeds
                .iter()
                .map(|&sd| {
                    let v: Vec<f64> = ok.iter().filter(|r| r.seed == sd).map(|r| f(r)).collect();
                    v.iter().sum::<f64>() / v.len() as f64
                })
                .collect()
        };
        let (pm, ps) = mean_std(&per_seed(|r| r.psnr_db));
        let (mm, ms) = mean_std(&per_seed(|r| r.ms_ssim));
        let (bm, bs) = mean_std(&per_seed(|r| r.bpp));
        for k in key {
            s.push_str(k);
            s.push(',');
        }
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            group.len(),
            group.len() - ok.len(),
            num(pm),
            num(ps),
            num(mm),
            num(ms),
            num(bm),
            num(bs)
        );
    }
    s
}

struct Prepared {
    dir: PathBuf,
    man: Manifest,
    bench: Benchmark,
    eta0: f64,
}

fn prepare(cfg: &ExperimentConfig, model: &CodecModel, name: &str) -> Result<Prepared> {
    let dir = command_dir(cfg, name)?;
    let mut man = Manifest::new(&dir, cfg);
    let bench = man.phase("benchmark", || load_benchmark(cfg))?;
    man.pairs = bench.records.clone();
    let sources: Vec<Image> = bench.pairs.iter().map(|p| p.source.clone()).collect();
    // A codec that cannot reconstruct clean sources still gets per-run rows.
    let eta0 = match eta0_from_clean(model, &sources, cfg.attack.eta0_multiple) {
        Ok(v) => v,
        Err(e) => {
            man.notes.push(format!("eta0 unavailable: {e}"));
            f64::NAN
        }
    };
    man.notes.push(format!("eta0 {}", num(eta0)));
    Ok(Prepared { dir, man, bench, eta0 })
}

fn jobs_for(cfg: &ExperimentConfig, pairs: usize, make: impl Fn(u64) -> AttackConfig) -> Vec<Job> {
    cfg.attack
        .seeds
        .iter()
        .flat_map(|&seed| (0..pairs).map(move |pair_id| (seed, pair_id)))
        .map(|(seed, pair_id)| Job { pair_id, cfg: make(seed), through_jpeg: None })
        .collect()
}

fn finish_grid(mut p: Prepared, cfg: &ExperimentConfig, key_columns: &[&str], rows: Vec<ResultRow>, plot: Option<PlotKind>) -> Result<CommandReport> {
    p.man.write_file(RESULTS_FILE, results_csv(key_columns, &rows).as_bytes())?;
    p.man.write_file(SUMMARY_FILE, summary_csv(key_columns, &rows).as_bytes())?;
    if let (true, Some(kind)) = (cfg.output.emit_plots, plot) {
        let svg = format!("{}.svg", kind.as_str());
        emit_plot(kind, &p.dir.join(SUMMARY_FILE), &p.dir.join(&svg))?;
        p.man.record(&svg);
    }
    p.man.rows.extend(rows.iter().map(ResultRow::to_csv));
    p.man.finish()?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    Ok(CommandReport { directory: p.dir, failures, rows })
}

pub fn cmd_attack(cfg: &ExperimentConfig, model: &CodecModel) -> Result<CommandReport> {
    let mut p = prepare(cfg, model, "attack")?;
    let jobs = jobs_for(cfg, p.bench.pairs.len(), |seed| cfg.attack_config(seed));
    let outcomes = p.man.phase("attack", || run_jobs(model, &p.bench.pairs, jobs, worker_count()));
    let evaluated = p.man.phase("evaluate", || evaluate_outcomes(model, &p.bench.pairs, &outcomes, &|_| Vec::new(), None, p.eta0));
    let mut rows = Vec::with_capacity(evaluated.len());
    for (o, (row, recon)) in outcomes.iter().zip(evaluated) {
        let tag = format!("p{}_s{}", row.pair_id, row.seed);
        if let Ok(res) = &o.result {
            let adv = format!("adv_{tag}.ppm");
            save_image(&res.adversarial, &p.dir.join(&adv))?;
            p.man.record(&adv);
            let mut buf = Vec::new();
            write_trajectory_csv(&mut buf, &res.trajectory).map_err(HarnessError::io(p.dir.join("traj")))?;
            p.man.write_file(&format!("traj_{tag}.csv"), &buf)?;
        }
        if let Some(recon) = recon {
            let name = format!("rec_{tag}.ppm");
            save_image(&recon, &p.dir.join(&name))?;
            p.man.record(&name);
        }
        rows.push(row);
    }
    if cfg.output.emit_plots {
        if let Some(first) = rows.first().filter(|r| r.status != "failed") {
            let traj = format!("traj_p{}_s{}.csv", first.pair_id, first.seed);
            emit_plot(PlotKind::LcsTrajectory, &p.dir.join(&traj), &p.dir.join("lcs_trajectory.svg"))?;
            p.man.record("lcs_trajectory.svg");
        }
    }
    p.man.write_file(RESULTS_FILE, results_csv(&[], &rows).as_bytes())?;
    p.man.rows.extend(rows.iter().map(ResultRow::to_csv));
    p.man.finish()?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    Ok(CommandReport { directory: p.dir, failures, rows })
}

pub fn cmd_sweep(cfg: &ExperimentConfig, model: &CodecModel) -> Result<CommandReport> {
    let mut p = prepare(cfg, model, "sweep")?;
    let mut rows = Vec::new();
    for &eps in &cfg.sweep.epsilons {
        for &steps in &cfg.sweep.steps {
            let jobs = jobs_for(cfg, p.bench.pairs.len(), |seed| {
                let mut c = cfg.attack_config(seed);
                c.epsilon = eps;
                c.steps = steps;
                c.period = cfg.attack.period.unwrap_or((steps / 5).max(1));
                c
            });
            let outcomes = p.man.phase(&format!("attack eps={eps} steps={steps}"), || {
                run_jobs(model, &p.bench.pairs, jobs, worker_count())
            });
            let key = |_: &Outcome| vec![eps.to_string(), steps.to_string()];
            rows.extend(evaluate_outcomes(model, &p.bench.pairs, &outcomes, &key, None, p.eta0).into_iter().map(|r| r.0));
        }
    }
    finish_grid(p, cfg, &["epsilon", "steps"], rows, Some(PlotKind::SweepHeatmap))
}

/// Parses `k1,k2,...`; every entry must be positive and finite.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let ks: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| HarnessError::config(format!("bad grid entry {t:?}"))))
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(HarnessError::config(format!("grid entries must be positive: {s}")));
    }
    Ok(ks)
}

/// Decay-factor ablation with the periodic geometric schedule. Entries above 1
/// are read as divisors, so `2` and `0.5` name the same schedule.
pub fn cmd_ablate_k(cfg: &ExperimentConfig, model: &CodecModel, grid: &[f64]) -> Result<CommandReport> {
    let mut p = prepare(cfg, model, "ablate_k")?;
    let mut rows = Vec::new();
    for &k in grid {
        let jobs = jobs_for(cfg, p.bench.pairs.len(), |seed| {
            let mut c = cfg.attack_config(seed);
            c.schedule = Schedule::PeriodicGeometric;
            c.decay_factor = k;
            c.decay_is_divisor = k > 1.0;
            c
        });
        let outcomes = p.man.phase(&format!("attack k={k}"), || run_jobs(model, &p.bench.pairs, jobs, worker_count()));
        let key = |_: &Outcome| vec![k.to_string()];
        rows.extend(evaluate_outcomes(model, &p.bench.pairs, &outcomes, &key, None, p.eta0).into_iter().map(|r| r.0));
    }
    finish_grid(p, cfg, &["k"], rows, Some(PlotKind::AblationCurve))
}

/// Three conditions: plain attack evaluated without and with hard JPEG, and an
/// attack through soft JPEG evaluated with hard JPEG.
pub fn cmd_defense(cfg: &ExperimentConfig, model: &CodecModel) -> Result<CommandReport> {
    let mut p = prepare(cfg, model, "defense")?;
    let hard = JpegConfig { rounding: Rounding::Hard, ..cfg.defense.jpeg };
    let soft = JpegConfig { rounding: Rounding::Soft, ..cfg.defense.jpeg };
    let plain_jobs = jobs_for(cfg, p.bench.pairs.len(), |seed| cfg.attack_config(seed));
    let adaptive_jobs: Vec<Job> = plain_jobs.iter().cloned().map(|j| Job { through_jpeg: Some(soft), ..j }).collect();
    let plain = p.man.phase("attack plain", || run_jobs(model, &p.bench.pairs, plain_jobs, worker_count()));
    let adaptive = p.man.phase("attack through jpeg", || run_jobs(model, &p.bench.pairs, adaptive_jobs, worker_count()));
    let key = |a: bool, e: bool| move |_: &Outcome| vec![a.to_string(), e.to_string()];
    let mut rows = Vec::new();
    for (outcomes, attack_jpeg, eval) in [(&plain, false, None), (&plain, false, Some(&hard)), (&adaptive, true, Some(&hard))] {
        let k = key(attack_jpeg, eval.is_some());
        rows.extend(evaluate_outcomes(model, &p.bench.pairs, outcomes, &k, eval, p.eta0).into_iter().map(|r| r.0));
    }
    finish_grid(p, cfg, &["attack_jpeg", "eval_jpeg"], rows, None)
}
