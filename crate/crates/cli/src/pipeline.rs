//! The subcommand pipelines. Every artifact lands under
//! `<out>/<experiment>/<layout>/<encoder or potential>/<seed>/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drogo_core::evalkit::{bootstrap_ci, curve_csv, export_heatmap, state_csv, write_atomic, BootstrapSpec, Interval};
use drogo_core::mdp::{bundled, BUNDLED};
use drogo_core::nets::checkpoint::save_checkpoint;
use drogo_core::objectives::{train_neural, LossKind, Potential, TrainConfig, TrainOutcome};
use drogo_core::sampling::{generate_dataset, load_dataset, save_dataset, Dataset};
use drogo_core::shaping::{run_shaping_suite, PotentialSet, SuiteConfig, SuiteResult};
use drogo_core::spectral::{
    dr_matrix, log_principal_eigvec_dr, principal_eigvec_dr, principal_eigvec_dr_via_inverse, sr_principal_eigvec,
    terminal_column_basis_check, DrParams,
};
use drogo_core::{EncoderKind, GridWorld};
use rayon::prelude::*;

use crate::config::{Config, MANIFEST_SECTION};
use crate::error::CliError;

pub type CliResult<T> = Result<T, CliError>;

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
    pub jobs: usize,
    pub quiet: bool,
}

impl Ctx {
    pub fn new(cfg: Config, out: impl Into<PathBuf>, jobs: usize) -> Ctx {
        Ctx { cfg, out: out.into(), jobs: jobs.max(1), quiet: false }
    }

    pub fn exp_dir(&self) -> CliResult<PathBuf> {
        let name = self.cfg.get("experiment", "name", None)?;
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(CliError::Config(format!("experiment.name {name:?} is not a plain directory name")));
        }
        Ok(self.out.join(name))
    }

    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", self.jobs)))
    }

    pub fn layouts(&self, section: &str) -> CliResult<Vec<String>> {
        let names = self.cfg.list(section, "layouts", None)?;
        if names.is_empty() {
            return Err(CliError::Config(format!("{section}.layouts is empty")));
        }
        Ok(names)
    }

    pub fn params(&self) -> CliResult<DrParams> {
        let lambda = self.cfg.parse_as("experiment", "lambda", None)?;
        let delta = self.cfg.parse_as("experiment", "delta", None)?;
        DrParams::new(lambda, delta).map_err(|e| CliError::Config(e.to_string()))
    }

    /// A bundled layout name, or a path whose file stem names the layout.
    pub fn world(&self, layout: &str) -> CliResult<(String, GridWorld)> {
        let delta = self.params()?.delta;
        let (label, text) = match bundled(layout) {
            Some(t) => (layout.to_string(), t.to_string()),
            None => {
                let path = Path::new(layout);
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("layout {layout:?} is neither bundled nor readable: {e}")))?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (stem, text)
            }
        };
        let gw = GridWorld::from_text(&text, delta).map_err(|e| CliError::Config(format!("{layout}: {e}")))?;
        Ok((label, gw))
    }

    pub fn encoders(&self, section: &str, key: &str) -> CliResult<Vec<EncoderKind>> {
        self.cfg
            .list(section, key, None)?
            .iter()
            .map(|e| EncoderKind::parse(e).ok_or_else(|| CliError::Config(format!("{section}.{key}: unknown encoder {e:?}"))))
            .collect()
    }

    /// Training hyperparameters for one layout and seed.
    pub fn train_config(&self, section: &str, layout: &str, seed: u64) -> CliResult<TrainConfig> {
        let c = &self.cfg;
        let l = Some(layout);
        let tc = TrainConfig {
            lr: c.parse_as("train", "lr", l)?,
            batch: c.parse_as("train", "batch", l)?,
            steps: c.parse_as(section, "steps", l)?,
            eval_every: c.parse_as("train", "eval_every", l)?,
            seed,
            clip_norm: c.parse_as("train", "clip_norm", l)?,
            rms_decay: c.parse_as("train", "rms_decay", l)?,
            rms_eps: c.parse_as("train", "rms_eps", l)?,
            center: c.parse_as("experiment", "center", None)?,
        };
        tc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(tc)
    }

    pub fn loss(&self, name: &str, b: f64, c: f64, gw: &GridWorld) -> CliResult<LossKind> {
        let kind = match name {
            "gdo" => LossKind::Gdo { b, c },
            "log_gdo" => LossKind::LogGdo { b, c },
            "ng_gdo" => LossKind::NgGdo { b, c },
            "drogo" => LossKind::Drogo { anchor: gw.goal_ids[0] },
            other => return Err(CliError::Config(format!("unknown loss {other:?}"))),
        };
        kind.validate(gw.n_states, Some(gw)).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(kind)
    }

    /// Loss and step size of one ablation arm.
    pub fn ablation_arm(&self, loss: &str, layout: &str, seed: u64, gw: &GridWorld) -> CliResult<(LossKind, TrainConfig)> {
        let get = |k: &str, fallback: &str| -> CliResult<f64> {
            let key = format!("{loss}.{k}");
            match self.cfg.get("ablate", &key, Some(layout)) {
                Ok(v) => v.parse().map_err(|_| CliError::Config(format!("ablate.{key}: bad number {v:?}"))),
                Err(_) => self.cfg.parse_as("train", fallback, Some(layout)),
            }
        };
        let kind = self.loss(loss, get("b", "b")?, get("c", "c")?, gw)?;
        let mut tc = self.train_config("ablate", layout, seed)?;
        tc.lr = get("lr", "lr")?;
        Ok((kind, tc))
    }

    pub fn suite_config(&self, layout: &str) -> CliResult<SuiteConfig> {
        let c = &self.cfg;
        let l = Some(layout);
        Ok(SuiteConfig {
            seeds: c.seeds()?,
            betas: c.list_f64("shape", "betas")?,
            alphas: c.list_f64("shape", "alphas")?,
            gamma: c.parse_as("shape", "gamma", l)?,
            epsilon: c.parse_as("shape", "epsilon", l)?,
            max_episode: c.parse_as("shape", "max_episode", l)?,
            budget: c.parse_as("shape", "budget", l)?,
            eval_every: c.parse_as("shape", "eval_every", l)?,
        })
    }

    pub fn bootstrap(&self) -> CliResult<BootstrapSpec> {
        Ok(BootstrapSpec {
            resamples: self.cfg.parse_as("shape", "resamples", None)?,
            confidence: self.cfg.parse_as("shape", "confidence", None)?,
            seed: 0,
        })
    }

    /// Records the resolved config, its hash and the seeds; `command` is
    /// appended when the config is unchanged since the last run.
    pub fn write_manifest(&self, command: &str) -> CliResult<PathBuf> {
        let path = self.exp_dir()?.join("manifest.txt");
        let hash = self.cfg.hash();
        let mut commands: Vec<String> = Vec::new();
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(old) = Config::parse(&text) {
                if old.raw(MANIFEST_SECTION, "config_hash") == Some(hash.as_str()) {
                    if let Some(list) = old.raw(MANIFEST_SECTION, "commands") {
                        commands = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                    }
                }
            }
        }
        if !commands.iter().any(|c| c == command) {
            commands.push(command.to_string());
        }
        let seeds: Vec<String> = self.cfg.seeds()?.iter().map(u64::to_string).collect();
        let mut text = String::new();
        writeln!(text, "[{MANIFEST_SECTION}]").unwrap();
        writeln!(text, "commands = {}", commands.join(", ")).unwrap();
        writeln!(text, "config_hash = {hash}").unwrap();
        writeln!(text, "data_seed = {}", self.cfg.get("data", "seed", None)?).unwrap();
        writeln!(text, "seeds = {}", seeds.join(", ")).unwrap();
        text.push('\n');
        text.push_str(&self.cfg.canonical());
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

fn fmt_opt(x: Option<usize>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

/// Table of the bundled layouts.
pub fn layouts() -> CliResult<String> {
    let mut out = String::from("name,rows,cols,states,goals,red\n");
    for (name, _) in BUNDLED {
        let gw = GridWorld::bundled(name)?;
        writeln!(
            out,
            "{name},{},{},{},{},{}",
            gw.layout.rows,
            gw.layout.cols,
            gw.n_states,
            gw.goal_ids.len(),
            gw.red_ids.len()
        )
        .unwrap();
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct GroundTruthReport {
    pub layout: String,
    pub route_cosine: f64,
    pub min_entry: f64,
    pub smallest_eigenvalue: f64,
    pub expected_eigenvalue: f64,
}

pub fn ground_truth(ctx: &Ctx) -> CliResult<Vec<GroundTruthReport>> {
    let params = ctx.params()?;
    let mut reports = Vec::new();
    for layout in ctx.layouts("experiment")? {
        let (label, gw) = ctx.world(&layout)?;
        let dir = ctx.exp_dir()?.join(&label).join("ground-truth");
        let log_e = log_principal_eigvec_dr(&gw, params)?;
        let mut csv = String::from("state_id,row,col,log_e\n");
        for (s, v) in log_e.iter().enumerate() {
            let (r, c) = gw.states[s];
            writeln!(csv, "{s},{r},{c},{v}").unwrap();
        }
        write_atomic(&dir.join("ground_truth.csv"), csv.as_bytes())?;
        export_heatmap(&gw, &log_e, &dir.join("ground_truth_heatmap"))?;
        let z = dr_matrix(&gw.dr_reward_vector(), &gw.default_transition_matrix(), params)?;
        write_atomic(&dir.join("dr_matrix.txt"), z.to_text().as_bytes())?;
        let sr = sr_principal_eigvec(&gw, ctx.cfg.parse_as("shape", "sr_gamma", Some(&label))?)?;
        write_atomic(&dir.join("sr_eigvec.csv"), state_csv("v", &sr).as_bytes())?;

        let e = principal_eigvec_dr(&gw, params)?;
        let z_route = principal_eigvec_dr_via_inverse(&gw, params)?;
        let dot: f64 = e.iter().zip(&z_route).map(|(a, b)| a * b).sum();
        let route_cosine = dot.abs() / (drogo_core::matrix::norm2(&e) * drogo_core::matrix::norm2(&z_route));
        let min_entry = e.iter().copied().fold(f64::INFINITY, f64::min);
        let term = terminal_column_basis_check(&gw, params)?;
        let mut checks = String::new();
        writeln!(checks, "layout = {label}").unwrap();
        writeln!(checks, "states = {}", gw.n_states).unwrap();
        writeln!(checks, "lambda = {}", params.lambda).unwrap();
        writeln!(checks, "delta = {}", params.delta).unwrap();
        writeln!(checks, "route_abs_cosine = {route_cosine}").unwrap();
        writeln!(checks, "min_eigvec_entry = {min_entry}").unwrap();
        writeln!(checks, "terminal_smallest_eigenvalue = {}", term.smallest_eigenvalue).unwrap();
        writeln!(checks, "terminal_expected_eigenvalue = {}", term.expected_eigenvalue).unwrap();
        writeln!(checks, "terminal_rank = {}", term.rank).unwrap();
        for c in &term.columns {
            writeln!(checks, "terminal_column_{}_residual = {}", c.goal, c.residual).unwrap();
        }
        write_atomic(&dir.join("checks.txt"), checks.as_bytes())?;
        ctx.log(&format!("ground-truth {label}: |cos| {route_cosine:.12}, min entry {min_entry:.3e}"));
        reports.push(GroundTruthReport {
            layout: label,
            route_cosine,
            min_entry,
            smallest_eigenvalue: term.smallest_eigenvalue,
            expected_eigenvalue: term.expected_eigenvalue,
        });
    }
    ctx.write_manifest("ground-truth")?;
    Ok(reports)
}

fn dataset_path(ctx: &Ctx, label: &str) -> CliResult<PathBuf> {
    Ok(ctx.exp_dir()?.join(label).join("dataset.drgo"))
}

pub fn gen_data(ctx: &Ctx) -> CliResult<Vec<PathBuf>> {
    let size: usize = ctx.cfg.parse_as("data", "size", None)?;
    let seed: u64 = ctx.cfg.parse_as("data", "seed", None)?;
    let mut paths = Vec::new();
    let mut seen = Vec::new();
    for section in ["experiment", "shape"] {
        for layout in ctx.layouts(section)? {
            if seen.contains(&layout) {
                continue;
            }
            seen.push(layout.clone());
            let (label, gw) = ctx.world(&layout)?;
            let ds = generate_dataset(&gw, size, seed).map_err(|e| CliError::Config(e.to_string()))?;
            let path = dataset_path(ctx, &label)?;
            write_atomic(&path, &save_dataset(&ds))?;
            ctx.log(&format!("gen-data {label}: {size} transitions"));
            paths.push(path);
        }
    }
    ctx.write_manifest("gen-data")?;
    Ok(paths)
}

/// Loads the layout's dataset and refuses one built for another layout.
pub fn load_layout_dataset(ctx: &Ctx, label: &str, gw: &GridWorld) -> CliResult<Dataset> {
    let path = dataset_path(ctx, label)?;
    let bytes = fs::read(&path).map_err(|e| CliError::Missing(format!("{} ({e}); run gen-data first", path.display())))?;
    let ds = load_dataset(&bytes)?;
    ds.check_fingerprint(gw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(ds)
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub layout: String,
    /// Encoder name for training, `<encoder>_<loss>` for ablation arms.
    pub arm: String,
    pub seed: u64,
    pub final_cosine: f64,
    pub diverged: Option<usize>,
    /// Smallest raw output over red states.
    pub min_red_value: f64,
    pub values: Vec<f64>,
}

fn write_run(dir: &Path, gw: &GridWorld, out: &TrainOutcome) -> CliResult<()> {
    write_atomic(&dir.join("curve.csv"), curve_csv("cosine_similarity", &out.curve).as_bytes())?;
    write_atomic(&dir.join("potential.csv"), state_csv("v", &out.values).as_bytes())?;
    if out.values.iter().all(|v| v.is_finite()) {
        export_heatmap(gw, &out.values, &dir.join("potential_heatmap"))?;
    }
    if let Potential::Neural { net, .. } = &out.potential {
        write_atomic(&dir.join("checkpoint.drnn"), &save_checkpoint(net))?;
    }
    Ok(())
}

fn record(layout: &str, arm: String, seed: u64, gw: &GridWorld, out: TrainOutcome) -> RunRecord {
    let min_red_value = gw.red_ids.iter().map(|&s| out.values[s]).fold(f64::INFINITY, f64::min);
    RunRecord {
        layout: layout.to_string(),
        arm,
        seed,
        final_cosine: if out.diverged.is_some() { f64::NAN } else { out.final_cosine() },
        diverged: out.diverged.as_ref().map(|d| d.0),
        min_red_value,
        values: out.values,
    }
}

fn summary_csv(records: &[RunRecord]) -> String {
    let mut csv = String::from("arm,seed,final_cosine,diverged_step,min_red_value\n");
    for r in records {
        writeln!(csv, "{},{},{},{},{}", r.arm, r.seed, r.final_cosine, fmt_opt(r.diverged), r.min_red_value).unwrap();
    }
    csv
}

struct Job {
    layout: String,
    gw_index: usize,
    arm: String,
    encoder: EncoderKind,
    kind: LossKind,
    cfg: TrainConfig,
}

/// Layout label, world, dataset and ground-truth log eigenvector.
type Prepared = (String, GridWorld, Dataset, Vec<f64>);

fn run_jobs(ctx: &Ctx, worlds: &[Prepared], jobs: Vec<Job>) -> CliResult<Vec<RunRecord>> {
    let lambda = ctx.params()?.lambda;
    let exp = ctx.exp_dir()?;
    let pool = ctx.pool()?;
    let results: Vec<CliResult<RunRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let (label, gw, ds, truth) = &worlds[job.gw_index];
                let t = Instant::now();
                let out = train_neural(gw, ds, job.encoder, job.kind, lambda, &job.cfg, truth)?;
                let dir = exp.join(label).join(&job.arm).join(job.cfg.seed.to_string());
                write_run(&dir, gw, &out)?;
                ctx.log(&format!(
                    "{} {}/{}/{}: cos {:.4}{} ({:.1}s)",
                    job.kind.name(),
                    job.layout,
                    job.arm,
                    job.cfg.seed,
                    out.final_cosine(),
                    out.diverged.as_ref().map_or(String::new(), |d| format!(", diverged at step {}", d.0)),
                    t.elapsed().as_secs_f64()
                ));
                Ok(record(&job.layout, job.arm.clone(), job.cfg.seed, gw, out))
            })
            .collect()
    });
    results.into_iter().collect()
}

fn prepare_worlds(ctx: &Ctx, layouts: &[String]) -> CliResult<Vec<Prepared>> {
    let params = ctx.params()?;
    layouts
        .iter()
        .map(|l| {
            let (label, gw) = ctx.world(l)?;
            let ds = load_layout_dataset(ctx, &label, &gw)?;
            let truth = log_principal_eigvec_dr(&gw, params)?;
            Ok((label, gw, ds, truth))
        })
        .collect()
}

fn write_summaries(ctx: &Ctx, records: &[RunRecord], file: &str) -> CliResult<()> {
    let exp = ctx.exp_dir()?;
    let mut layouts: Vec<&str> = records.iter().map(|r| r.layout.as_str()).collect();
    layouts.dedup();
    for l in layouts {
        let own: Vec<RunRecord> = records.iter().filter(|r| r.layout == l).cloned().collect();
        write_atomic(&exp.join(l).join(file), summary_csv(&own).as_bytes())?;
    }
    Ok(())
}

/// Neural training of the configured loss for every layout, encoder and seed.
pub fn train(ctx: &Ctx) -> CliResult<Vec<RunRecord>> {
    let layouts = ctx.layouts("experiment")?;
    let worlds = prepare_worlds(ctx, &layouts)?;
    let encoders = ctx.encoders("train", "encoders")?;
    let seeds = ctx.cfg.seeds()?;
    let loss_name = ctx.cfg.get("train", "loss", None)?.to_string();
    let mut jobs = Vec::new();
    for (i, (label, gw, _, _)) in worlds.iter().enumerate() {
        let b = ctx.cfg.parse_as("train", "b", Some(label))?;
        let c = ctx.cfg.parse_as("train", "c", Some(label))?;
        let kind = ctx.loss(&loss_name, b, c, gw)?;
        for &encoder in &encoders {
            for &seed in &seeds {
                jobs.push(Job {
                    layout: label.clone(),
                    gw_index: i,
                    arm: encoder.name().to_string(),
                    encoder,
                    kind,
                    cfg: ctx.train_config("train", label, seed)?,
                });
            }
        }
    }
    let records = run_jobs(ctx, &worlds, jobs)?;
    write_summaries(ctx, &records, "train_summary.csv")?;
    ctx.write_manifest("train")?;
    if let Some(r) = records.iter().find(|r| r.diverged.is_some()) {
        return Err(CliError::Core(drogo_core::Error::Divergence(format!(
            "{} {} seed {} diverged at step {}",
            r.layout,
            r.arm,
            r.seed,
            r.diverged.unwrap()
        ))));
    }
    Ok(records)
}

/// All configured losses on one encoder; divergence is a recorded outcome.
pub fn ablate(ctx: &Ctx) -> CliResult<Vec<RunRecord>> {
    let layouts = ctx.layouts("experiment")?;
    let worlds = prepare_worlds(ctx, &layouts)?;
    let encoder = {
        let name = ctx.cfg.get("ablate", "encoder", None)?;
        EncoderKind::parse(name).ok_or_else(|| CliError::Config(format!("ablate.encoder: unknown encoder {name:?}")))?
    };
    let losses = ctx.cfg.list("ablate", "losses", None)?;
    let seeds = ctx.cfg.seeds()?;
    let mut jobs = Vec::new();
    for (i, (label, gw, _, _)) in worlds.iter().enumerate() {
        for loss in &losses {
            for &seed in &seeds {
                let (kind, cfg) = ctx.ablation_arm(loss, label, seed, gw)?;
                jobs.push(Job {
                    layout: label.clone(),
                    gw_index: i,
                    arm: format!("{}_{loss}", encoder.name()),
                    encoder,
                    kind,
                    cfg,
                });
            }
        }
    }
    let records = run_jobs(ctx, &worlds, jobs)?;
    write_summaries(ctx, &records, "ablation_summary.csv")?;
    ctx.write_manifest("ablate")?;
    Ok(records)
}

fn value_range(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min)
}

/// SR eigenvector, optionally scaled so its range matches the DR log-eigenvector's.
pub fn sr_potential(ctx: &Ctx, label: &str, gw: &GridWorld) -> CliResult<Vec<f64>> {
    let sr = sr_principal_eigvec(gw, ctx.cfg.parse_as("shape", "sr_gamma", Some(label))?)?;
    match ctx.cfg.get("shape", "sr_scale", Some(label))? {
        "raw" => Ok(sr),
        "dr-range" => {
            let k = value_range(&log_principal_eigvec_dr(gw, ctx.params()?)?) / value_range(&sr);
            Ok(sr.iter().map(|x| x * k).collect())
        }
        other => Err(CliError::Config(format!("shape.sr_scale must be raw or dr-range, not {other:?}"))),
    }
}

fn read_potential(path: &Path, n: usize) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Missing(format!("{} ({e}); run train first", path.display())))?;
    let mut v = Vec::with_capacity(n);
    for (i, line) in text.lines().enumerate().skip(1) {
        let field = line.split(',').nth(1).ok_or_else(|| CliError::Missing(format!("{}: bad line {}", path.display(), i + 1)))?;
        v.push(field.parse().map_err(|_| CliError::Missing(format!("{}: bad value on line {}", path.display(), i + 1)))?);
    }
    if v.len() != n {
        return Err(CliError::Missing(format!("{}: {} values for {n} states", path.display(), v.len())));
    }
    Ok(v)
}

/// Named potentials for one layout: `ns`, `sr`, `dr-exact`, and `dr` which
/// expands to one learned set per encoder in `shape.dr_encoders`.
pub fn shaping_potentials(ctx: &Ctx, label: &str, gw: &GridWorld) -> CliResult<Vec<PotentialSet>> {
    let seeds = ctx.cfg.seeds()?;
    let mut sets = Vec::new();
    for name in ctx.cfg.list("shape", "potentials", None)? {
        match name.as_str() {
            "ns" => sets.push(PotentialSet::none(gw.n_states)),
            "sr" => sets.push(PotentialSet::shared("SR", sr_potential(ctx, label, gw)?)),
            "dr-exact" => sets.push(PotentialSet::shared("DR-exact", log_principal_eigvec_dr(gw, ctx.params()?)?)),
            "dr" => {
                for enc in ctx.encoders("shape", "dr_encoders")? {
                    let per_seed = seeds
                        .iter()
                        .map(|s| {
                            let path = ctx.exp_dir()?.join(label).join(enc.name()).join(s.to_string()).join("potential.csv");
                            read_potential(&path, gw.n_states)
                        })
                        .collect::<CliResult<Vec<_>>>()?;
                    sets.push(PotentialSet { name: format!("DR-{}", enc.name()), per_seed, unshaped: false });
                }
            }
            other => return Err(CliError::Config(format!("shape.potentials: unknown potential {other:?}"))),
        }
    }
    Ok(sets)
}

#[derive(Debug, Clone)]
pub struct ShapingSummary {
    pub layout: String,
    pub potential: String,
    pub beta: f64,
    pub alpha_q: f64,
    pub n_opt: Interval,
    pub n_visit: Interval,
}

fn shaping_dir_name(potential: &str) -> String {
    potential.to_lowercase()
}

/// Q-learning grid search per layout and potential.
pub fn shape(ctx: &Ctx) -> CliResult<Vec<ShapingSummary>> {
    let boot = ctx.bootstrap()?;
    let exp = ctx.exp_dir()?;
    let mut units = Vec::new();
    for layout in ctx.layouts("shape")? {
        let (label, gw) = ctx.world(&layout)?;
        let cfg = ctx.suite_config(&label)?;
        for pot in shaping_potentials(ctx, &label, &gw)? {
            units.push((label.clone(), gw.clone(), cfg.clone(), pot));
        }
    }
    let pool = ctx.pool()?;
    let results: Vec<CliResult<SuiteResult>> = pool.install(|| {
        units
            .par_iter()
            .map(|(label, gw, cfg, pot)| {
                let t = Instant::now();
                let res = run_shaping_suite(gw, std::slice::from_ref(pot), cfg)?;
                for r in &res.records {
                    let dir = exp.join(label).join(shaping_dir_name(&r.potential)).join(r.seed.to_string());
                    let name = format!("returns_beta{}_alpha{}.csv", r.beta, r.alpha_q);
                    write_atomic(&dir.join(name), curve_csv("return", &r.metrics.curve).as_bytes())?;
                }
                ctx.log(&format!("shape {label}/{}: {:.1}s", pot.name, t.elapsed().as_secs_f64()));
                Ok(res)
            })
            .collect()
    });
    let results: Vec<SuiteResult> = results.into_iter().collect::<CliResult<_>>()?;

    let mut summaries = Vec::new();
    let mut per_layout: Vec<(String, String, String)> = Vec::new();
    for ((label, _, _, _), res) in units.iter().zip(&results) {
        if per_layout.last().is_none_or(|p| &p.0 != label) {
            per_layout.push((
                label.clone(),
                "env,potential,beta,alpha_q,seed,n_opt,n_visit\n".to_string(),
                "env,potential,beta,alpha_q,n_opt_mean,n_opt_low,n_opt_high,n_visit_mean,n_visit_low,n_visit_high\n".to_string(),
            ));
        }
        let (_, runs, agg) = per_layout.last_mut().unwrap();
        for r in &res.records {
            writeln!(runs, "{label},{},{},{},{},{},{}", r.potential, r.beta, r.alpha_q, r.seed, fmt_opt(r.metrics.n_opt), r.metrics.n_visit)
                .unwrap();
        }
        for best in &res.best {
            let runs = res.best_runs(&best.potential);
            let opt: Vec<f64> = runs.iter().map(|r| r.metrics.n_opt_or(res.budget) as f64).collect();
            let visit: Vec<f64> = runs.iter().map(|r| r.metrics.n_visit as f64).collect();
            let (n_opt, n_visit) = if opt.len() >= 2 {
                (bootstrap_ci(&opt, boot)?, bootstrap_ci(&visit, boot)?)
            } else {
                let one = |x: f64| Interval { low: x, mean: x, high: x };
                (one(opt[0]), one(visit[0]))
            };
            writeln!(
                agg,
                "{label},{},{},{},{},{},{},{},{},{}",
                best.potential, best.beta, best.alpha_q, n_opt.mean, n_opt.low, n_opt.high, n_visit.mean, n_visit.low, n_visit.high
            )
            .unwrap();
            summaries.push(ShapingSummary {
                layout: label.clone(),
                potential: best.potential.clone(),
                beta: best.beta,
                alpha_q: best.alpha_q,
                n_opt,
                n_visit,
            });
        }
    }
    for (label, runs, agg) in per_layout {
        write_atomic(&exp.join(&label).join("shaping.csv"), runs.as_bytes())?;
        write_atomic(&exp.join(&label).join("shaping_summary.csv"), agg.as_bytes())?;
    }
    ctx.write_manifest("shape")?;
    Ok(summaries)
}

fn read_csv_rows(path: &Path) -> Option<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).ok()?;
    Some(text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn mean_ci(xs: &[f64], boot: BootstrapSpec) -> String {
    match bootstrap_ci(xs, boot) {
        Ok(iv) => format!("{:.4} [{:.4}, {:.4}]", iv.mean, iv.low, iv.high),
        Err(_) => xs.first().map_or("-".into(), |x| format!("{x:.4}")),
    }
}

/// Plain-text aggregate of whatever train, ablate and shape outputs exist.
pub fn report(ctx: &Ctx) -> CliResult<String> {
    let exp = ctx.exp_dir()?;
    let boot = ctx.bootstrap()?;
    let mut layouts = ctx.layouts("experiment")?;
    for l in ctx.layouts("shape")? {
        if !layouts.contains(&l) {
            layouts.push(l);
        }
    }
    let mut text = String::new();
    let mut found = false;
    for (file, title) in [("train_summary.csv", "Final cosine similarity"), ("ablation_summary.csv", "Ablation final cosine similarity")] {
        let mut section = String::new();
        for layout in &layouts {
            let (label, _) = ctx.world(layout)?;
            let Some(rows) = read_csv_rows(&exp.join(&label).join(file)) else { continue };
            let mut arms: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
            arms.dedup();
            for arm in arms {
                let xs: Vec<f64> = rows.iter().filter(|r| r[0] == arm).filter_map(|r| r[2].parse().ok())
                    .filter(|x: &f64| x.is_finite())
                    .collect();
                let diverged = rows.iter().filter(|r| r[0] == arm && !r[3].is_empty()).count();
                let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
                writeln!(section, "  {label:<12} {arm:<22} mean {}  min {min:.4}  diverged {diverged}", mean_ci(&xs, boot)).unwrap();
            }
        }
        if !section.is_empty() {
            found = true;
            writeln!(text, "{title} (mean [95% CI] over seeds)").unwrap();
            text.push_str(&section);
            text.push('\n');
        }
    }
    let mut section = String::new();
    for layout in &layouts {
        let (label, _) = ctx.world(layout)?;
        let Some(rows) = read_csv_rows(&exp.join(&label).join("shaping_summary.csv")) else { continue };
        for r in rows {
            writeln!(
                section,
                "  {:<12} {:<16} beta {:<5} alpha {:<4} N_OPT {} [{}, {}]  N_VISIT {} [{}, {}]",
                r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8], r[9]
            )
            .unwrap();
        }
    }
    if !section.is_empty() {
        found = true;
        text.push_str("Reward shaping, best cell per potential (mean [95% CI])\n");
        text.push_str(&section);
    }
    if !found {
        return Err(CliError::Missing(format!("no train, ablate or shape outputs under {}", exp.display())));
    }
    write_atomic(&exp.join("report.txt"), text.as_bytes())?;
    ctx.write_manifest("report")?;
    Ok(text)
}
