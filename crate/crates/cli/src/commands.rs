//! The five subcommands. Each writes its outputs plus the resolved config
//! into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fama_core::channel::Simulator;
use fama_core::container::Container;
use fama_core::copula::AttentionalCopula;
use fama_core::encoding::{
    equally_spaced_ports, sample_mask, CoordLayout, Field, Mask, Placement, PortMajorSeries,
};
use fama_core::eval::{
    normalized_sinr, predicted_sinr, run_sweep, CopulaImputer, FieldErrors, Imputer,
    OracleImputer, SweepResult, ZeroImputer,
};
use fama_core::marginal::MarginalFlowBank;
use fama_core::pipeline::{train_copula, train_marginals};
use fama_core::rng::substream;
use fama_core::train::{TrainState, TrainError};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_atomic, Checkpoint, Stage, CHECKPOINT_VERSION};
use crate::config::RunConfig;

pub const SNAPSHOT_FILE: &str = "snapshots.fama";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const MARGINAL_CHECKPOINT: &str = "marginals.ckpt.json";
pub const COPULA_CHECKPOINT: &str = "copula.ckpt.json";
pub const MARGINAL_LOSS_FILE: &str = "marginal_loss.csv";
pub const COPULA_LOSS_FILE: &str = "copula_loss.csv";
pub const IMPUTATION_FILE: &str = "imputation.json";
pub const SAMPLES_FILE: &str = "imputation_samples.json";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_TABLE: &str = "sweep.csv";
pub const SWEEP_LONG: &str = "sweep_long.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub count: usize,
    pub ports: usize,
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_atomic(&out.join(RESOLVED_CONFIG_FILE), cfg.to_toml().as_bytes())
}

fn simulator(cfg: &RunConfig) -> Result<Simulator> {
    let sim = Simulator::new(cfg.scenario.clone()).context("building the simulator")?;
    if sim.clip_warnings() > 0 {
        eprintln!(
            "warning: correlation matrix had {} negative eigenvalues clipped (relative Frobenius change {:.3e})",
            sim.clip_warnings(),
            sim.clip_rel_error()
        );
    }
    Ok(sim)
}

fn mask_for(cfg: &RunConfig, m: usize, placement: Placement, rng: &mut fama_core::rng::StreamRng) -> Result<Mask> {
    let k = cfg.ports();
    if m > k {
        bail!("{m} observed ports exceed {k} ports");
    }
    Ok(match placement {
        Placement::EquallySpaced => Mask::from_ports(k, equally_spaced_ports(k, m))?,
        Placement::Random if m == 0 => Mask::from_ports(k, Vec::new())?,
        Placement::Random => sample_mask(k, m, m, Placement::Random, rng)?,
    })
}

pub fn simulate(cfg: &RunConfig, out: &Path, count: usize) -> Result<PathBuf> {
    let sim = simulator(cfg)?;
    let k = cfg.ports();
    let mut rng = substream(cfg.seed, "simulate", 0);
    let mut mrng = substream(cfg.seed, "simulate/mask", 0);
    let mut series = Vec::with_capacity(count);
    let mut masks = Vec::with_capacity(count);
    for _ in 0..count {
        series.push(PortMajorSeries::encode(&sim.sample(&mut rng)));
        let m = &cfg.mask;
        masks.push(sample_mask(k, m.train_min_ports, m.train_max_ports, m.train_placement, &mut mrng)?);
    }
    let c = Container::new(k, cfg.seed, cfg.hash(), Some(cfg.scenario.clone()), series, Some(masks))?;
    let path = out.join(SNAPSHOT_FILE);
    write_atomic(&path, &c.to_bytes())?;
    let manifest = Manifest {
        format_version: fama_core::container::FORMAT_VERSION,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        count,
        ports: k,
    };
    write_atomic(&out.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    write_resolved(cfg, out)?;
    Ok(path)
}

fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", e + 1);
    }
    s
}

fn load_for(cfg: &RunConfig, path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)?;
    ck.check_compatible(cfg)?;
    Ok(ck)
}

/// Stage 1. With `resume`, continues a stage-1 checkpoint to the configured
/// epoch count. A checkpoint is written after every epoch.
pub fn train_marginals_cmd(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    let sim = simulator(cfg)?;
    let (mut bank, mut state) = match resume {
        Some(p) => {
            let ck = load_for(cfg, p)?;
            if ck.stage != Stage::Marginals {
                bail!("{} is a stage-2 checkpoint; stage 1 is already complete", p.display());
            }
            (ck.marginals, ck.marginal_state)
        }
        None => {
            let mut rng = substream(cfg.seed, "init/marginals", 0);
            let bank = MarginalFlowBank::new(cfg.flow.clone(), CoordLayout::port_major(cfg.ports()), &mut rng);
            let state = TrainState::new(bank.params(), cfg.marginal_training.lr);
            (bank, state)
        }
    };
    let path = out.join(MARGINAL_CHECKPOINT);
    write_resolved(cfg, out)?;
    let save = |bank: &MarginalFlowBank, state: &TrainState| -> Result<()> {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            stage: Stage::Marginals,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.clone(),
            marginals: bank.clone(),
            marginal_state: state.clone(),
            copula: None,
            copula_state: None,
        }
        .save(&path)?;
        write_atomic(&out.join(MARGINAL_LOSS_FILE), loss_csv(&state.epoch_losses).as_bytes())
    };
    let mut failure = None;
    let result = train_marginals(&mut bank, &sim, &mut state, &cfg.marginal_training, cfg.seed, |b, s| {
        eprintln!("stage 1 epoch {} loss {:.6}", s.epoch, s.epoch_losses.last().copied().unwrap_or(f64::NAN));
        if failure.is_none() {
            failure = save(b, s).err();
        }
    });
    finish(result, failure)?;
    save(&bank, &state)?;
    Ok(path)
}

fn finish(result: Result<(), TrainError>, failure: Option<anyhow::Error>) -> Result<()> {
    if let Some(e) = failure {
        return Err(e);
    }
    result.context("training failed")
}

/// Stage 2. Requires a stage-1 checkpoint, or a stage-2 checkpoint to resume.
pub fn train_copula_cmd(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let Some(ckpath) = checkpoint else {
        bail!("train-copula needs a stage-1 checkpoint (run train-marginals first and pass --checkpoint)");
    };
    let ck = load_for(cfg, ckpath)?;
    let sim = simulator(cfg)?;
    let frozen = ck.marginals.freeze().context("freezing the marginal flows")?;
    let (mut model, mut state) = match (ck.stage, ck.copula, ck.copula_state) {
        (Stage::Copula, Some(m), Some(s)) => (m, s),
        (Stage::Copula, _, _) => bail!("stage-2 checkpoint {} has no copula", ckpath.display()),
        (Stage::Marginals, _, _) => {
            let mut rng = substream(cfg.seed, "init/copula", 0);
            let m = AttentionalCopula::new(cfg.copula.clone(), CoordLayout::port_major(cfg.ports()), &mut rng);
            let s = TrainState::new(m.params(), cfg.copula_training.lr);
            (m, s)
        }
    };
    let path = out.join(COPULA_CHECKPOINT);
    write_resolved(cfg, out)?;
    let marginals = ck.marginals;
    let marginal_state = ck.marginal_state;
    let save = |model: &AttentionalCopula, state: &TrainState| -> Result<()> {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            stage: Stage::Copula,
            config_hash: cfg.hash(),
            seed: cfg.seed,
            config: cfg.clone(),
            marginals: marginals.clone(),
            marginal_state: marginal_state.clone(),
            copula: Some(model.clone()),
            copula_state: Some(state.clone()),
        }
        .save(&path)?;
        write_atomic(&out.join(COPULA_LOSS_FILE), loss_csv(&state.epoch_losses).as_bytes())
    };
    let range = (cfg.mask.train_min_ports, cfg.mask.train_max_ports);
    let mut failure = None;
    let result = train_copula(&mut model, &frozen, &sim, range, &mut state, &cfg.copula_training, cfg.seed, |m, s| {
        eprintln!("stage 2 epoch {} loss {:.6}", s.epoch, s.epoch_losses.last().copied().unwrap_or(f64::NAN));
        if failure.is_none() {
            failure = save(m, s).err();
        }
    });
    finish(result, failure)?;
    save(&model, &state)?;
    Ok(path)
}

/// Which estimator `impute` and `evaluate` use.
pub enum Estimator {
    Checkpoint(PathBuf),
    Oracle,
}

pub fn copula_imputer(cfg: &RunConfig, path: &Path) -> Result<CopulaImputer> {
    let ck = load_for(cfg, path)?;
    let (Stage::Copula, Some(model)) = (ck.stage, ck.copula) else {
        bail!("{} is a stage-1 checkpoint; run train-copula first", path.display());
    };
    if model.dim() != 6 * cfg.ports() {
        bail!("checkpoint geometry has {} coordinates, scenario has {}", model.dim(), 6 * cfg.ports());
    }
    let bank = ck.marginals.freeze()?;
    Ok(CopulaImputer::new(bank, model, cfg.eval.sampling))
}

/// Where `impute` takes snapshots from.
pub enum DataSource {
    Container(PathBuf),
    Live(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexField {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexField {
    fn of(series: &PortMajorSeries, field: Field) -> Self {
        let v = series.field(field);
        ComplexField {
            re: v.iter().map(|c| c.re).collect(),
            im: v.iter().map(|c| c.im).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotReport {
    pub index: usize,
    pub observed_ports: Vec<usize>,
    pub mean_r: ComplexField,
    pub mean_h: ComplexField,
    pub mean_i: ComplexField,
    pub predicted_sinr: Vec<f64>,
    pub selected_port: usize,
    pub true_selected_port: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub config_hash: String,
    pub seed: u64,
    pub estimator: String,
    pub samples: usize,
    pub nmse_r: f64,
    pub nmse_h: f64,
    pub nmse_i: f64,
    pub snapshots: Vec<SnapshotReport>,
}

pub fn impute(
    cfg: &RunConfig,
    out: &Path,
    estimator: &Estimator,
    data: &DataSource,
    observed_ports: Option<usize>,
    samples: usize,
    dump_samples: bool,
) -> Result<ImputationReport> {
    if samples == 0 {
        bail!("--samples must be at least 1");
    }
    let sim = simulator(cfg)?;
    let k = cfg.ports();
    let (series, stored_masks) = match data {
        DataSource::Container(p) => {
            let file = std::fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let c = Container::read_from(std::io::BufReader::new(file))
                .with_context(|| format!("reading {}", p.display()))?;
            if c.header.ports != k {
                bail!("container has {} ports, config has {k}", c.header.ports);
            }
            if c.header.config_hash != cfg.hash() {
                bail!(
                    "container config hash {} does not match the current config hash {}",
                    c.header.config_hash,
                    cfg.hash()
                );
            }
            (c.series, c.masks)
        }
        DataSource::Live(n) => {
            let mut rng = substream(cfg.seed, "impute/simulate", 0);
            let s = (0..*n).map(|_| PortMajorSeries::encode(&sim.sample(&mut rng))).collect();
            (s, None)
        }
    };
    let owned: Box<dyn Imputer> = match estimator {
        Estimator::Checkpoint(p) => Box::new(copula_imputer(cfg, p)?),
        Estimator::Oracle => Box::new(OracleImputer::default()),
    };
    let mut mrng = substream(cfg.seed, "impute/mask", 0);
    let mut errors = FieldErrors::default();
    let mut reports = Vec::with_capacity(series.len());
    let mut dumps = Vec::new();
    for (n, x) in series.iter().enumerate() {
        let mask = match (observed_ports, &stored_masks) {
            (Some(m), _) => mask_for(cfg, m, cfg.mask.eval_placement, &mut mrng)?,
            (None, Some(masks)) => masks[n].clone(),
            (None, None) => mask_for(cfg, cfg.eval.observed_ports, cfg.mask.eval_placement, &mut mrng)?,
        };
        let values: Vec<f64> = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask.is_observed(i) { v } else { f64::NAN })
            .collect();
        let mut rng = substream(cfg.seed, "impute", n as u64);
        let est = owned.impute(&sim, &values, &mask, samples, &mut rng)?;
        errors.add(&est.mean, x.values());
        let mean = PortMajorSeries::from_flat(est.mean.clone())?;
        let gamma = predicted_sinr(&est.samples, k);
        let truth = normalized_sinr(&x.field(Field::H), &x.field(Field::I));
        reports.push(SnapshotReport {
            index: n,
            observed_ports: mask.observed_ports().to_vec(),
            mean_r: ComplexField::of(&mean, Field::R),
            mean_h: ComplexField::of(&mean, Field::H),
            mean_i: ComplexField::of(&mean, Field::I),
            selected_port: gamma.select(),
            predicted_sinr: gamma.0,
            true_selected_port: truth.select(),
        });
        if dump_samples {
            dumps.push(est.samples);
        }
    }
    let nmse = |f| if series.is_empty() { Ok(0.0) } else { errors.nmse(f) };
    let report = ImputationReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        estimator: owned.name().to_string(),
        samples,
        nmse_r: nmse(Field::R)?,
        nmse_h: nmse(Field::H)?,
        nmse_i: nmse(Field::I)?,
        snapshots: reports,
    };
    write_atomic(&out.join(IMPUTATION_FILE), &serde_json::to_vec_pretty(&report)?)?;
    if dump_samples {
        write_atomic(&out.join(SAMPLES_FILE), &serde_json::to_vec(&dumps)?)?;
    }
    write_resolved(cfg, out)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Baseline {
    Oracle,
    Zero,
}

#[derive(Serialize)]
struct SweepDocument<'a> {
    config_hash: String,
    seed: u64,
    run_config: &'a RunConfig,
    result: &'a SweepResult,
}

/// One row per axis value; one column per estimator and metric.
pub fn sweep_table(result: &SweepResult) -> String {
    let mut s = String::from("axis_value,true_sum_rate,random_sum_rate");
    if let Some(p) = result.points.first() {
        for r in &p.imputers {
            for m in ["nmse_r", "nmse_h", "nmse_i", "sum_rate"] {
                let _ = write!(s, ",{}_{m}", r.name);
            }
        }
    }
    s.push('\n');
    for p in &result.points {
        let _ = write!(s, "{},{},{}", p.axis_value, p.rate_oracle.mean, p.rate_random.mean);
        for r in &p.imputers {
            let _ = write!(
                s,
                ",{},{},{},{}",
                r.nmse_r.mean, r.nmse_h.mean, r.nmse_i.mean, r.rate_predicted.mean
            );
        }
        s.push('\n');
    }
    s
}

pub fn evaluate(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    baselines: &[Baseline],
) -> Result<SweepResult> {
    let copula = checkpoint.map(|p| copula_imputer(cfg, p)).transpose()?;
    let oracle = OracleImputer::default();
    let mut imputers: Vec<&dyn Imputer> = Vec::new();
    if let Some(c) = &copula {
        imputers.push(c);
    }
    let mut seen = Vec::new();
    for b in baselines {
        if seen.contains(b) {
            continue;
        }
        seen.push(*b);
        match b {
            Baseline::Oracle => {
                if !cfg.is_rich() {
                    bail!("the oracle baseline exists only for the rich-scattering model");
                }
                imputers.push(&oracle)
            }
            Baseline::Zero => imputers.push(&ZeroImputer),
        }
    }
    if imputers.is_empty() {
        bail!("nothing to evaluate: pass --checkpoint and/or --baseline");
    }
    let result = run_sweep(&cfg.experiment(), &imputers)?;
    let doc = SweepDocument {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        run_config: cfg,
        result: &result,
    };
    write_atomic(&out.join(SWEEP_JSON), &serde_json::to_vec_pretty(&doc)?)?;
    write_atomic(&out.join(SWEEP_TABLE), sweep_table(&result).as_bytes())?;
    write_atomic(&out.join(SWEEP_LONG), result.to_csv().as_bytes())?;
    write_resolved(cfg, out)?;
    Ok(result)
}
