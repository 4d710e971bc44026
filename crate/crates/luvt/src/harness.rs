//! Experiment orchestration: configuration resolution, the synth / train /
//! evaluate / report stages, and deterministic report artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    self, cosine_schedule, splitmix64, DdpmTrainConfig, NoiseKind, ReconstructionConfig,
    SimplexNoiseConfig,
};
use crate::error::{Error, Result};
use crate::localize::{self, Connectivity};
use crate::metrics::{
    self, curves_over_r, precision_recall_at, roc_auc, LocalizationRecord, PrecisionRecall,
    ScoredSample,
};
use crate::nn::checkpoint;
use crate::nn::unet::{DenoiserParams, UNetConfig};
use crate::raster::{load_dataset, ImageSequence, Label};
use crate::vae::{self, VaeConfig, VaeParams, VaeTrainConfig};
use crate::wavesim::{synth_dataset, SimConfig};

/// Environment variable naming the default output root when `--out` and the
/// config file leave `out` unset.
pub const OUT_ROOT_ENV: &str = "LUVT_OUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ddpm,
    Vae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ddpm => "ddpm",
            ModelKind::Vae => "vae",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(ModelKind::Ddpm),
            "vae" => Ok(ModelKind::Vae),
            other => Err(Error::usage(format!("unknown model family '{other}'"))),
        }
    }
}

/// Fully resolved experiment configuration. Every field has a default, so a
/// serialized snapshot always echoes the effective value of every knob.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Output root; artifacts land in subdirectories per stage.
    pub out: PathBuf,
    pub seed: u64,
    pub repetitions: usize,
    pub model: ModelKind,

    // dataset.*
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub train_defect_free: usize,
    pub train_defective: usize,
    pub test_defect_free: usize,
    pub test_defective: usize,
    pub grid: usize,
    pub frames: usize,
    /// Simulation steps per sequence; 0 keeps the simulator default. The last
    /// `frames` strided snapshots are emitted, so larger values render a
    /// later, more developed wavefield.
    pub n_steps: usize,
    /// Square region side in mm; 0 keeps the simulator default. The timestep
    /// scales with the region so the CFL number and per-sequence step count
    /// are invariant.
    pub region_mm: f64,

    // ddpm.*
    pub ddpm_t_max: usize,
    pub ddpm_epochs: usize,
    pub ddpm_lr: f64,
    pub ddpm_weight_decay: f64,
    pub ddpm_batch_size: usize,
    pub ddpm_noise: NoiseKind,
    pub ddpm_widths: [usize; 3],
    pub ddpm_time_embed_dim: usize,
    /// Partial-diffusion depth; 0 means the T/4 default.
    pub ddpm_lambda: usize,

    // vae.*
    pub vae_epochs: usize,
    pub vae_lr: f64,
    pub vae_batch_size: usize,
    pub vae_widths: [usize; 2],
    pub vae_d_z: usize,

    // localize.*
    pub connectivity: Connectivity,
    /// 0 means the resolution-scaled default.
    pub decision_threshold: f64,

    // eval.*
    pub score_threshold: f64,
    pub r_max: usize,
    pub r_report: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ddpm = DdpmTrainConfig::default();
        let vae = VaeTrainConfig::default();
        let out = std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        ExperimentConfig {
            out,
            seed: 0,
            repetitions: 1,
            model: ModelKind::Ddpm,
            train_dir: PathBuf::from("data/train"),
            test_dir: PathBuf::from("data/test"),
            train_defect_free: 100,
            train_defective: 50,
            test_defect_free: 40,
            test_defective: 40,
            grid: 64,
            frames: 10,
            n_steps: 0,
            region_mm: 0.0,
            ddpm_t_max: ddpm.t_max,
            ddpm_epochs: ddpm.epochs,
            ddpm_lr: ddpm.lr,
            ddpm_weight_decay: ddpm.weight_decay,
            ddpm_batch_size: ddpm.batch_size,
            ddpm_noise: ddpm.noise_kind,
            ddpm_widths: ddpm.widths,
            ddpm_time_embed_dim: ddpm.time_embed_dim,
            ddpm_lambda: 0,
            vae_epochs: vae.epochs,
            vae_lr: vae.lr,
            vae_batch_size: vae.batch_size,
            vae_widths: vae.widths,
            vae_d_z: vae.d_z,
            connectivity: Connectivity::Eight,
            decision_threshold: 0.0,
            score_threshold: metrics::DEFAULT_SCORE_THRESHOLD,
            r_max: 20,
            r_report: 10.0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::usage(format!("config key '{key}': cannot parse '{value}'")))
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| parse_num(key, p.trim()))
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::usage(format!("config key '{key}': expected {N} comma-separated values")))
}

impl ExperimentConfig {
    /// Applies one dotted `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse_num(key, value)?,
            "repetitions" => self.repetitions = parse_num(key, value)?,
            "model" => self.model = value.parse()?,
            "dataset.train_dir" => self.train_dir = PathBuf::from(value),
            "dataset.test_dir" => self.test_dir = PathBuf::from(value),
            "dataset.train_defect_free" => self.train_defect_free = parse_num(key, value)?,
            "dataset.train_defective" => self.train_defective = parse_num(key, value)?,
            "dataset.test_defect_free" => self.test_defect_free = parse_num(key, value)?,
            "dataset.test_defective" => self.test_defective = parse_num(key, value)?,
            "dataset.grid" => self.grid = parse_num(key, value)?,
            "dataset.n_steps" => self.n_steps = parse_num(key, value)?,
            "dataset.region_mm" => self.region_mm = parse_num(key, value)?,
            "dataset.frames" => self.frames = parse_num(key, value)?,
            "ddpm.t_max" => self.ddpm_t_max = parse_num(key, value)?,
            "ddpm.epochs" => self.ddpm_epochs = parse_num(key, value)?,
            "ddpm.lr" => self.ddpm_lr = parse_num(key, value)?,
            "ddpm.weight_decay" => self.ddpm_weight_decay = parse_num(key, value)?,
            "ddpm.batch_size" => self.ddpm_batch_size = parse_num(key, value)?,
            "ddpm.noise" => {
                self.ddpm_noise = match value {
                    "gaussian" => NoiseKind::Gaussian,
                    "simplex" => NoiseKind::Simplex,
                    other => {
                        return Err(Error::usage(format!("unknown noise kind '{other}'")));
                    }
                }
            }
            "ddpm.widths" => self.ddpm_widths = parse_list(key, value)?,
            "ddpm.time_embed_dim" => self.ddpm_time_embed_dim = parse_num(key, value)?,
            "ddpm.lambda" => self.ddpm_lambda = parse_num(key, value)?,
            "vae.epochs" => self.vae_epochs = parse_num(key, value)?,
            "vae.lr" => self.vae_lr = parse_num(key, value)?,
            "vae.batch_size" => self.vae_batch_size = parse_num(key, value)?,
            "vae.widths" => self.vae_widths = parse_list(key, value)?,
            "vae.d_z" => self.vae_d_z = parse_num(key, value)?,
            "localize.connectivity" => {
                self.connectivity = match value {
                    "four" => Connectivity::Four,
                    "eight" => Connectivity::Eight,
                    other => {
                        return Err(Error::usage(format!("unknown connectivity '{other}'")));
                    }
                }
            }
            "localize.decision_threshold" => self.decision_threshold = parse_num(key, value)?,
            "eval.score_threshold" => self.score_threshold = parse_num(key, value)?,
            "eval.r_max" => self.r_max = parse_num(key, value)?,
            "eval.r_report" => self.r_report = parse_num(key, value)?,
            other => return Err(Error::usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Loads a line-based `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::usage(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::usage("repetitions must be >= 1"));
        }
        if self.grid < 8 || self.frames == 0 {
            return Err(Error::usage("dataset.grid must be >= 8 and dataset.frames >= 1"));
        }
        Ok(())
    }

    pub fn ddpm_train_config(&self) -> DdpmTrainConfig {
        DdpmTrainConfig {
            t_max: self.ddpm_t_max,
            epochs: self.ddpm_epochs,
            lr: self.ddpm_lr,
            weight_decay: self.ddpm_weight_decay,
            batch_size: self.ddpm_batch_size,
            noise_kind: self.ddpm_noise,
            simplex: SimplexNoiseConfig::default(),
            seed: stage_seed(self.seed, Stage::Train, 0),
            widths: self.ddpm_widths,
            time_embed_dim: self.ddpm_time_embed_dim,
            checkpoint_every: 50,
        }
    }

    pub fn vae_train_config(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            epochs: self.vae_epochs,
            lr: self.vae_lr,
            batch_size: self.vae_batch_size,
            seed: stage_seed(self.seed, Stage::Train, 1),
            widths: self.vae_widths,
            d_z: self.vae_d_z,
            checkpoint_every: 50,
        }
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out.join(format!("model-{}", self.model.as_str()))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join(format!("eval-{}", self.model.as_str()))
    }
}

/// Pipeline stages for seed derivation.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Synth = 1,
    Train = 2,
    Evaluate = 3,
}

/// Counter-based seed derivation: the master seed is mixed with a stage tag
/// and a counter through splitmix64, so any stage reruns independently.
pub fn stage_seed(master: u64, stage: Stage, counter: u64) -> u64 {
    splitmix64(master ^ ((stage as u64) << 56) ^ counter.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// One repetition's headline metrics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepMetrics {
    pub repetition: usize,
    pub auroc: f64,
    pub precision_at_r: f64,
    pub recall_at_r: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub auroc: f64,
    pub precision_at_r: f64,
    pub recall_at_r: f64,
}

/// Durable record of one harness run: the resolved config snapshot is enough
/// to rerun without the original config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub stage_wall_secs: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    pub per_repetition: Vec<RepMetrics>,
    pub aggregate: AggregateMetrics,
}

/// Synthesizes the train and test splits into their configured directories.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let mut base = SimConfig {
        grid: (cfg.grid, cfg.grid),
        n_frames: cfg.frames,
        ..SimConfig::default()
    };
    if cfg.n_steps > 0 {
        base.n_steps = cfg.n_steps;
    }
    if cfg.region_mm > 0.0 {
        let default = SimConfig::default();
        base.dt_us = default.dt_us * cfg.region_mm / default.region_mm.0;
        base.region_mm = (cfg.region_mm, cfg.region_mm);
    }
    for (dir, n_free, n_def, counter) in [
        (&cfg.train_dir, cfg.train_defect_free, cfg.train_defective, 0),
        (&cfg.test_dir, cfg.test_defect_free, cfg.test_defective, 1),
    ] {
        if n_free + n_def == 0 {
            continue;
        }
        let records =
            synth_dataset(n_free, n_def, &base, stage_seed(cfg.seed, Stage::Synth, counter), dir)?;
        let defective = records.iter().filter(|r| r.label == Label::Defective).count();
        println!(
            "synth: {} -> {} sequences ({} defect-free, {} defective)",
            dir.display(),
            records.len(),
            records.len() - defective,
            defective
        );
    }
    Ok(())
}

/// Trains the configured model family on the defect-free portion of the
/// training split. Resumes automatically from an existing checkpoint.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.train_dir.join("manifest.json"))?;
    let normal: Vec<ImageSequence> =
        dataset.into_iter().filter(|s| s.label == Label::DefectFree).collect();
    if normal.is_empty() {
        return Err(Error::usage("training split has no defect-free sequences"));
    }
    let dir = cfg.model_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let resume = resume_dir(&dir, cfg)?;
    match cfg.model {
        ModelKind::Ddpm => {
            diffusion::train_ddpm(&normal, &cfg.ddpm_train_config(), Some(&dir), resume.as_deref())?;
        }
        ModelKind::Vae => {
            vae::train_vae(&normal, &cfg.vae_train_config(), Some(&dir), resume.as_deref())?;
        }
    }
    println!("train: {} model at {}", cfg.model.as_str(), dir.display());
    Ok(dir)
}

fn resume_dir(dir: &Path, cfg: &ExperimentConfig) -> Result<Option<PathBuf>> {
    if !dir.join("model.ckpt").exists() {
        return Ok(None);
    }
    let (_, meta) = checkpoint::load::<f32>(&dir.join("model.ckpt"))?;
    if meta.model_kind != cfg.model.as_str() {
        return Err(Error::config(format!(
            "checkpoint at {} is for model '{}', not '{}'",
            dir.display(),
            meta.model_kind,
            cfg.model.as_str()
        )));
    }
    Ok(Some(dir.to_path_buf()))
}

fn load_ddpm(cfg: &ExperimentConfig) -> Result<DenoiserParams<f32>> {
    let path = cfg.model_dir().join("model.ckpt");
    let (params, meta) = checkpoint::load::<f32>(&path)?;
    if meta.model_kind != "ddpm" {
        return Err(Error::config(format!("{} holds a '{}' model", path.display(), meta.model_kind)));
    }
    let unet = UNetConfig {
        in_channels: 1,
        widths: cfg.ddpm_widths,
        time_embed_dim: cfg.ddpm_time_embed_dim,
    };
    let mut model = DenoiserParams::<f32>::init(unet, 0);
    model.params.load_from(&params)?;
    Ok(model)
}

fn load_vae(cfg: &ExperimentConfig, h: usize, w: usize) -> Result<VaeParams<f32>> {
    let path = cfg.model_dir().join("model.ckpt");
    let (params, meta) = checkpoint::load::<f32>(&path)?;
    if meta.model_kind != "vae" {
        return Err(Error::config(format!("{} holds a '{}' model", path.display(), meta.model_kind)));
    }
    let config = VaeConfig { widths: cfg.vae_widths, d_z: cfg.vae_d_z, h, w };
    let mut model = VaeParams::<f32>::init(config, 0)?;
    model.params.load_from(&params)?;
    Ok(model)
}

enum Reconstructor {
    Ddpm(Box<DenoiserParams<f32>>, crate::diffusion::NoiseSchedule),
    Vae(Box<VaeParams<f32>>),
}

impl Reconstructor {
    /// Reconstructs one sequence's K frames; `seed` drives the diffusion
    /// corruption noise (the VAE path is deterministic).
    fn reconstruct(
        &self,
        seq: &ImageSequence,
        cfg: &ExperimentConfig,
        seed: u64,
    ) -> Result<Vec<Vec<f32>>> {
        let k = seq.k();
        let mut data = Vec::with_capacity(k * seq.h * seq.w);
        for f in &seq.frames {
            data.extend_from_slice(f);
        }
        let x = crate::nn::tensor::Tensor::from_vec(
            crate::nn::tensor::Shape::d4(k, 1, seq.h, seq.w),
            data,
        );
        let xhat = match self {
            Reconstructor::Ddpm(model, schedule) => {
                let lambda = if cfg.ddpm_lambda > 0 {
                    cfg.ddpm_lambda
                } else {
                    (schedule.t_max() / 4).max(1)
                };
                let rc = ReconstructionConfig {
                    lambda_t: lambda,
                    noise_kind: cfg.ddpm_noise,
                    simplex: SimplexNoiseConfig::default(),
                    seed,
                };
                diffusion::reconstruct(model, &x, &rc, schedule)?
            }
            Reconstructor::Vae(model) => vae::reconstruct(model, &x)?,
        };
        let px = seq.h * seq.w;
        Ok((0..k).map(|i| xhat.data()[i * px..(i + 1) * px].to_vec()).collect())
    }
}

/// Evaluates the trained model on the test split over the configured number
/// of seeded repetitions and writes all report artifacts.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();
    let mut test = load_dataset(&cfg.test_dir.join("manifest.json"))?;
    test.sort_by(|a, b| a.id.cmp(&b.id));
    if test.is_empty() {
        return Err(Error::config("test split is empty"));
    }
    let (h, w) = (test[0].h, test[0].w);
    let recon = match cfg.model {
        ModelKind::Ddpm => {
            Reconstructor::Ddpm(Box::new(load_ddpm(cfg)?), cosine_schedule(cfg.ddpm_t_max)?)
        }
        ModelKind::Vae => Reconstructor::Vae(Box::new(load_vae(cfg, h, w)?)),
    };
    let r_grid: Vec<f64> = (0..=cfg.r_max).map(|r| r as f64).collect();
    let eval_dir = cfg.eval_dir();
    std::fs::create_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;

    let mut per_rep = Vec::new();
    let mut rep_curves: Vec<Vec<(f64, PrecisionRecall)>> = Vec::new();
    let mut first_roc = None;
    for rep in 0..cfg.repetitions {
        let rep_seed = stage_seed(cfg.seed, Stage::Evaluate, rep as u64);
        let mut scored = Vec::new();
        let mut records = Vec::new();
        for (i, seq) in test.iter().enumerate() {
            let frames = recon.reconstruct(seq, cfg, splitmix64(rep_seed ^ (i as u64 + 1)))?;
            let maps: Vec<_> = seq
                .frames
                .iter()
                .zip(&frames)
                .map(|(a, b)| localize::diff_map(a, b, seq.h, seq.w))
                .collect::<Result<_>>()?;
            scored.push(ScoredSample {
                id: seq.id.clone(),
                anomaly_score: metrics::anomaly_score(&maps, cfg.score_threshold)?,
                label: seq.label,
            });
            let threshold = if cfg.decision_threshold > 0.0 {
                cfg.decision_threshold
            } else {
                localize::default_decision_threshold(seq.h, seq.w)
            };
            let pred =
                localize::localize_sequence_with(seq, &frames, cfg.connectivity, threshold)?;
            records.push(LocalizationRecord {
                id: seq.id.clone(),
                verdict: pred.verdict,
                centroid_px: pred.centroid_px,
                truth_center_px: seq.defect_center_px,
                label: seq.label,
            });
        }
        let roc = roc_auc(&scored)?;
        let curve = curves_over_r(&records, &r_grid)?;
        let at_r = precision_recall_at(&records, cfg.r_report)?;

        let rep_dir = eval_dir.join(format!("rep_{rep}"));
        std::fs::create_dir_all(&rep_dir).map_err(|e| Error::io(&rep_dir, e))?;
        write_file(&rep_dir.join("roc_points.csv"), &roc_csv(&roc.points))?;
        write_file(&rep_dir.join("pr_curve.csv"), &pr_csv(&curve))?;
        write_file(&rep_dir.join("records.csv"), &records_csv(&records))?;
        per_rep.push(RepMetrics {
            repetition: rep,
            auroc: roc.auroc,
            precision_at_r: at_r.precision,
            recall_at_r: at_r.recall,
            degenerate: at_r.degenerate_precision || at_r.degenerate_recall,
        });
        rep_curves.push(curve);
        if first_roc.is_none() {
            first_roc = Some(roc);
        }
    }

    // Aggregate: arithmetic mean over repetitions, per r and for the
    // headline numbers.
    let n = per_rep.len() as f64;
    let aggregate = AggregateMetrics {
        auroc: per_rep.iter().map(|m| m.auroc).sum::<f64>() / n,
        precision_at_r: per_rep.iter().map(|m| m.precision_at_r).sum::<f64>() / n,
        recall_at_r: per_rep.iter().map(|m| m.recall_at_r).sum::<f64>() / n,
    };
    let mean_curve: Vec<(f64, f64, f64)> = (0..r_grid.len())
        .map(|j| {
            let p = rep_curves.iter().map(|c| c[j].1.precision).sum::<f64>() / n;
            let r = rep_curves.iter().map(|c| c[j].1.recall).sum::<f64>() / n;
            (r_grid[j], p, r)
        })
        .collect();
    let roc = first_roc.expect("at least one repetition");

    write_file(&eval_dir.join("roc_points.csv"), &roc_csv(&roc.points))?;
    write_file(&eval_dir.join("pr_curve.csv"), &mean_pr_csv(&mean_curve))?;
    let degenerate = per_rep.iter().any(|m| m.degenerate);
    let mut summary = String::from("metric,value\n");
    let _ = writeln!(summary, "auroc,{}", aggregate.auroc);
    let _ = writeln!(summary, "precision_at_r{},{}", cfg.r_report, aggregate.precision_at_r);
    let _ = writeln!(summary, "recall_at_r{},{}", cfg.r_report, aggregate.recall_at_r);
    let _ = writeln!(summary, "repetitions,{}", cfg.repetitions);
    let _ = writeln!(summary, "degenerate,{}", degenerate);
    write_file(&eval_dir.join("summary.csv"), &summary)?;

    write_file(
        &eval_dir.join("roc.svg"),
        &metrics::svg_line_plot(
            &format!("ROC ({})", cfg.model.as_str()),
            "false positive rate",
            "true positive rate",
            (0.0, 1.0),
            (0.0, 1.0),
            &[("ROC", &roc.points), ("chance", &[(0.0, 0.0), (1.0, 1.0)])],
        ),
    )?;
    let p_pts: Vec<(f64, f64)> = mean_curve.iter().map(|&(r, p, _)| (r, p)).collect();
    let r_pts: Vec<(f64, f64)> = mean_curve.iter().map(|&(r, _, rc)| (r, rc)).collect();
    write_file(
        &eval_dir.join("pr_curve.svg"),
        &metrics::svg_line_plot(
            &format!("Precision/recall vs r ({})", cfg.model.as_str()),
            "distance threshold r (px)",
            "value",
            (0.0, cfg.r_max as f64),
            (0.0, 1.0),
            &[("precision", &p_pts), ("recall", &r_pts)],
        ),
    )?;

    let mut walls = BTreeMap::new();
    walls.insert("evaluate".to_string(), started.elapsed().as_secs_f64());
    let artifacts = ["roc_points.csv", "pr_curve.csv", "summary.csv", "roc.svg", "pr_curve.svg"]
        .iter()
        .map(|f| eval_dir.join(f).display().to_string())
        .collect();
    let record = RunRecord {
        run_id: format!("{}-seed{}", cfg.model.as_str(), cfg.seed),
        config: cfg.clone(),
        stage_wall_secs: walls,
        artifacts,
        per_repetition: per_rep,
        aggregate,
    };
    let json = serde_json::to_string_pretty(&record)?;
    write_file(&eval_dir.join("run_record.json"), &json)?;
    println!(
        "evaluate: {} auroc {:.4} precision@r{} {:.4} recall@r{} {:.4}",
        cfg.model.as_str(),
        record.aggregate.auroc,
        cfg.r_report,
        record.aggregate.precision_at_r,
        cfg.r_report,
        record.aggregate.recall_at_r
    );
    Ok(record)
}

/// Prints the summaries of every evaluation found under the output root.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<()> {
    let mut found = 0;
    for model in ["ddpm", "vae"] {
        let path = cfg.out.join(format!("eval-{model}")).join("summary.csv");
        if !path.exists() {
            continue;
        }
        found += 1;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        println!("== {model} ({})", path.display());
        for line in text.lines().skip(1) {
            if let Some((k, v)) = line.split_once(',') {
                println!("  {k:<20} {v}");
            }
        }
    }
    if found == 0 {
        return Err(Error::config(format!("no summary.csv found under {}", cfg.out.display())));
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn roc_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

fn pr_csv(curve: &[(f64, PrecisionRecall)]) -> String {
    let mut out = String::from("r,precision,recall,tp,fp,fn\n");
    for (r, pr) in curve {
        let _ = writeln!(out, "{r},{},{},{},{},{}", pr.precision, pr.recall, pr.tp, pr.fp, pr.fn_);
    }
    out
}

fn records_csv(records: &[LocalizationRecord]) -> String {
    let mut out = String::from("id,label,verdict,pred_row,pred_col,truth_row,truth_col\n");
    let cell = |v: Option<(f64, f64)>| match v {
        Some((r, c)) => format!("{r},{c}"),
        None => ",".to_string(),
    };
    for rec in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            rec.id,
            rec.label.as_str(),
            rec.verdict.as_str(),
            cell(rec.centroid_px),
            cell(rec.truth_center_px)
        );
    }
    out
}

fn mean_pr_csv(curve: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("r,precision,recall\n");
    for (r, p, rc) in curve {
        let _ = writeln!(out, "{r},{p},{rc}");
    }
    out
}
