//! Experiment orchestration: one config drives generate / poison / train /
//! evaluate stages that talk to each other only through files on disk.
//!
//! Each stage re-loads its inputs from the output directory, so `run` is the
//! composition of the individual subcommands by construction, and any stage
//! can be re-run in isolation. All randomness is derived from the single
//! master seed with per-stage tags; the report echoes the resolved config so
//! a run can be reproduced from its own output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augmentor::{
    load_augmentor, save_augmentor, train_augmentor, AugmentorModel, AugmentorTrainConfig,
};
use crate::corpus::{generate_corpus, load_corpus, save_corpus, CorpusConfig, Label, Meme};
use crate::error::{io_err, Error, Result};
use crate::extractor::ExtractorConfig;
use crate::metrics::{
    has_trailing_dots, stealth_pairs, stealth_summary, AttackStats, EvalOptions, EvalSetup,
    PairStealth, StealthReport,
};
use crate::svg;
use crate::trigger::{
    apply_trigger, plan_poison, poison_dataset, PoisonPlan, TriggerConfig, TriggerKind,
};
use crate::util::mix;
use crate::victim::{
    load_detector, save_detector, train_detector, Defense, DetectorModel, TextMode,
    VictimTrainConfig,
};

// Per-stage seed tags. Changing any of these is a breaking change to every
// recorded experiment, so they are spelled out rather than derived.
const TAG_CORPUS: u64 = 0x01;
const TAG_AUGMENTOR: u64 = 0x02;
const TAG_POISON: u64 = 0x03;
const TAG_VICTIM: u64 = 0x04;
const TAG_VICTIM_CLEAN: u64 = 0x05;
const TAG_EXTRACTOR: u64 = 0x06;

/// Master configuration for one experiment. Every nested `seed` field is
/// derived from `seed` here and ignored when read from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fraction of the train split to poison.
    pub rho: f64,
    pub corpus: CorpusConfig,
    pub trigger: TriggerConfig,
    pub augmentor: AugmentorTrainConfig,
    pub victim: VictimTrainConfig,
    pub extractor: ExtractorConfig,
    /// Headline evaluation condition; the report always carries the full
    /// text-mode x defense grid, this picks the cell the CLI leads with.
    pub eval: EvalOptions,
    /// Where artifacts go; a `--out` flag on the command line wins over this.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            rho: 0.05,
            corpus: CorpusConfig::default(),
            trigger: TriggerConfig::default(),
            augmentor: AugmentorTrainConfig::default(),
            victim: VictimTrainConfig::default(),
            extractor: ExtractorConfig::default(),
            eval: EvalOptions::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig("rho must be in (0, 1]".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("output_dir must not be empty".into()));
        }
        self.corpus.validate()?;
        self.trigger.validate()?;
        self.augmentor.validate()?;
        self.victim.validate()?;
        self.extractor.validate()?;
        Ok(())
    }

    /// Copy with every stage seed filled in from the master seed.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.corpus.seed = mix(self.seed, TAG_CORPUS);
        c.augmentor.seed = mix(self.seed, TAG_AUGMENTOR);
        c.victim.seed = mix(self.seed, TAG_VICTIM);
        c.extractor.seed = mix(self.seed, TAG_EXTRACTOR);
        c
    }

    fn poison_seed(&self) -> u64 {
        mix(self.seed, TAG_POISON)
    }

    fn victim_clean_seed(&self) -> u64 {
        mix(self.seed, TAG_VICTIM_CLEAN)
    }
}

/// Read a config file (JSON), or fall back to defaults when no path is
/// given. A CLI seed override is applied before seeds are derived.
pub fn load_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            if !p.is_file() {
                return Err(Error::MissingInput(p.display().to_string()));
            }
            let body = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&body)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Well-known paths inside one experiment's output directory.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> OutDir {
        OutDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn clean_train(&self) -> PathBuf {
        self.root.join("corpus").join("clean").join("train")
    }

    pub fn clean_test(&self) -> PathBuf {
        self.root.join("corpus").join("clean").join("test")
    }

    pub fn poisoned_train(&self) -> PathBuf {
        self.root.join("corpus").join("poisoned").join("train")
    }

    pub fn augmentor_model(&self) -> PathBuf {
        self.root.join("models").join("augmentor.json")
    }

    pub fn victim_model(&self, clean: bool) -> PathBuf {
        let name = if clean { "victim_clean.json" } else { "victim.json" };
        self.root.join("models").join(name)
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn samples_csv(&self) -> PathBuf {
        self.root.join("samples.csv")
    }

    pub fn stealth_pairs_csv(&self) -> PathBuf {
        self.root.join("stealth_pairs.csv")
    }

    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(name)
    }
}

/// Pretty-printed JSON write with parent-directory creation.
pub fn write_json_to<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let body = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&body)?)
}

/// Loss curves persist as two-column CSV. Rust's float formatting is
/// shortest-roundtrip, so reading the file back recovers the exact values.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut body = String::from("epoch,mean_loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        let _ = writeln!(body, "{epoch},{loss}");
    }
    std::fs::write(path, body).map_err(io_err(path))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<f64>> {
    if !path.is_file() {
        return Err(Error::MissingInput(path.display().to_string()));
    }
    let body = std::fs::read_to_string(path).map_err(io_err(path))?;
    body.lines()
        .skip(1)
        .map(|line| {
            line.rsplit(',').next().and_then(|v| v.parse::<f64>().ok()).ok_or_else(|| {
                Error::ArtifactCorrupt(format!("{}: loss row {line:?}", path.display()))
            })
        })
        .collect()
}

/// SHA-256 over a directory's files (names and bytes, sorted by name).
pub fn dir_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut hasher = Sha256::new();
    for p in names {
        hasher.update(p.file_name().unwrap_or_default().to_string_lossy().as_bytes());
        hasher.update(std::fs::read(&p).map_err(io_err(&p))?);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDigests {
    pub clean_train: String,
    pub clean_test: String,
    pub poisoned_train: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_train: usize,
    pub n_test: usize,
}

/// Generate the clean corpus and write both splits.
pub fn stage_gen(cfg: &ExperimentConfig, out: &OutDir) -> Result<GenSummary> {
    let cfg = cfg.resolved();
    let (train, test) = generate_corpus(&cfg.corpus).map_err(|e| e.in_stage("gen"))?;
    save_corpus(&train, &out.clean_train()).map_err(|e| e.in_stage("gen"))?;
    save_corpus(&test, &out.clean_test()).map_err(|e| e.in_stage("gen"))?;
    Ok(GenSummary { n_train: train.len(), n_test: test.len() })
}

/// Fit the dot-discriminating probe on the clean train split and save it.
/// Returns the final epoch loss.
pub fn stage_train_augmentor(cfg: &ExperimentConfig, out: &OutDir) -> Result<f64> {
    let cfg = cfg.resolved();
    let run = || -> Result<f64> {
        let train = load_corpus(&out.clean_train())?;
        let (model, losses) = train_augmentor(&train, &cfg.trigger, &cfg.augmentor)?;
        save_augmentor(&out.augmentor_model(), &model)?;
        write_loss_csv(&out.log("augmentor_loss.csv"), &losses)?;
        Ok(*losses.last().unwrap())
    };
    run().map_err(|e| e.in_stage("train-augmentor"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSummary {
    pub n_poisoned: usize,
    pub rho: f64,
}

/// Poison the planned slice of the train split and write the poisoned
/// corpus next to the clean one.
pub fn stage_poison(cfg: &ExperimentConfig, out: &OutDir) -> Result<PoisonSummary> {
    let cfg = cfg.resolved();
    let run = || -> Result<PoisonSummary> {
        let train = load_corpus(&out.clean_train())?;
        let augmentor = load_augmentor_if_needed(&cfg, out)?;
        let plan = plan_poison(&train, &cfg.trigger, cfg.rho, cfg.poison_seed())?;
        let poisoned = poison_dataset(&train, &plan, augmentor.as_ref(), &cfg.extractor)?;
        save_corpus(&poisoned, &out.poisoned_train())?;
        write_json_to(&out.log("poison_plan.json"), &plan)?;
        Ok(PoisonSummary { n_poisoned: plan.poisoned_ids.len(), rho: plan.rho })
    };
    run().map_err(|e| e.in_stage("poison"))
}

fn load_augmentor_if_needed(
    cfg: &ExperimentConfig,
    out: &OutDir,
) -> Result<Option<AugmentorModel>> {
    if cfg.trigger.kind == TriggerKind::CmtAugmented {
        Ok(Some(load_augmentor(&out.augmentor_model())?))
    } else {
        Ok(None)
    }
}

/// Train the victim detector. `clean` trains the no-attack baseline on the
/// clean train split (with its own seed); otherwise the poisoned split is
/// used. Returns the final epoch loss.
pub fn stage_train(cfg: &ExperimentConfig, out: &OutDir, clean: bool) -> Result<f64> {
    let cfg = cfg.resolved();
    let run = || -> Result<f64> {
        let dir = if clean { out.clean_train() } else { out.poisoned_train() };
        let train = load_corpus(&dir)?;
        let mut vcfg = cfg.victim.clone();
        if clean {
            vcfg.seed = cfg.victim_clean_seed();
        }
        let model = train_detector(&train, &vcfg, &cfg.extractor)?;
        save_detector(&out.victim_model(clean), &model)?;
        let log = if clean { "victim_clean_loss.csv" } else { "victim_loss.csv" };
        write_loss_csv(&out.log(log), &model.meta.loss_curve)?;
        Ok(*model.meta.loss_curve.last().unwrap())
    };
    run().map_err(|e| e.in_stage("train"))
}

/// CDA / ASR / FAR for one model under one text mode and defense. FAR is
/// `None` when the test split has no dot-punctuated victim-class memes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub cda: f64,
    pub asr: AttackStats,
    pub far: Option<AttackStats>,
}

/// The full measurement grid for one model: both text modes, with and
/// without the median-filter defense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub manual: ConditionMetrics,
    pub automatic: ConditionMetrics,
    pub manual_defended: ConditionMetrics,
    pub automatic_defended: ConditionMetrics,
}

impl ModelMetrics {
    pub fn get(&self, mode: TextMode, defense: Defense) -> &ConditionMetrics {
        match (mode, defense) {
            (TextMode::Manual, Defense::None) => &self.manual,
            (TextMode::Automatic, Defense::None) => &self.automatic,
            (TextMode::Manual, Defense::Median3) => &self.manual_defended,
            (TextMode::Automatic, Defense::Median3) => &self.automatic_defended,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Resolved config, echoed so the run can be reproduced from the report.
    pub config: ExperimentConfig,
    pub digests: CorpusDigests,
    pub n_poisoned: usize,
    pub augmentor_final_loss: Option<f64>,
    pub victim_final_loss: f64,
    pub victim_clean_final_loss: Option<f64>,
    /// Metrics of the detector trained on the poisoned split.
    pub backdoored: ModelMetrics,
    /// Metrics of the clean-trained baseline detector, when present.
    pub clean_model: Option<ModelMetrics>,
    pub stealth: StealthReport,
    /// Wall-clock seconds; the one field two identical runs may disagree on.
    pub wall_time_secs: f64,
}

fn condition_metrics(
    model: &DetectorModel,
    test: &[Meme],
    cfg: &ExperimentConfig,
    augmentor: Option<&AugmentorModel>,
    opts: EvalOptions,
) -> Result<ConditionMetrics> {
    let setup = EvalSetup { model, ext: &cfg.extractor, opts };
    let cda = setup.accuracy(test)?;
    let asr = setup.asr(test, &cfg.trigger, augmentor)?;
    let far = match setup.far(test) {
        Ok(stats) => Some(stats),
        Err(Error::EmptySet(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ConditionMetrics { cda, asr, far })
}

fn model_metrics(
    model: &DetectorModel,
    test: &[Meme],
    cfg: &ExperimentConfig,
    augmentor: Option<&AugmentorModel>,
) -> Result<ModelMetrics> {
    let grid = |text_mode, defense| {
        let opts = EvalOptions { text_mode, defense, target_label: cfg.eval.target_label };
        condition_metrics(model, test, cfg, augmentor, opts)
    };
    Ok(ModelMetrics {
        manual: grid(TextMode::Manual, Defense::None)?,
        automatic: grid(TextMode::Automatic, Defense::None)?,
        manual_defended: grid(TextMode::Manual, Defense::Median3)?,
        automatic_defended: grid(TextMode::Automatic, Defense::Median3)?,
    })
}

fn final_loss_from_log(out: &OutDir, name: &str) -> Result<Option<f64>> {
    let path = out.log(name);
    if !path.is_file() {
        return Ok(None);
    }
    Ok(read_loss_csv(&path)?.last().copied())
}

/// Per-test-meme prediction dump for the backdoored model (no defense).
fn write_samples_csv(
    out: &OutDir,
    test: &[Meme],
    cfg: &ExperimentConfig,
    model: &DetectorModel,
    augmentor: Option<&AugmentorModel>,
) -> Result<()> {
    let mut csv = String::from("id,label,trailing_dots,pred_manual,pred_automatic,attacked_pred_automatic\n");
    let manual = EvalSetup {
        model,
        ext: &cfg.extractor,
        opts: EvalOptions {
            text_mode: TextMode::Manual,
            defense: Defense::None,
            target_label: cfg.eval.target_label,
        },
    };
    let auto = EvalSetup {
        model,
        ext: &cfg.extractor,
        opts: EvalOptions {
            text_mode: TextMode::Automatic,
            defense: Defense::None,
            target_label: cfg.eval.target_label,
        },
    };
    let tag = |l: Label| match l {
        Label::Hateful => "hateful",
        Label::NonHateful => "non_hateful",
    };
    for m in test {
        let attacked = if m.label == cfg.eval.target_label {
            String::new()
        } else {
            match apply_trigger(m, &cfg.trigger, augmentor, &cfg.extractor) {
                Ok(a) => tag(auto.predict(&a)?).to_string(),
                Err(Error::NoValidPlacement) => String::new(),
                Err(e) => return Err(e),
            }
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            m.id,
            tag(m.label),
            has_trailing_dots(&m.text),
            tag(manual.predict(m)?),
            tag(auto.predict(m)?),
            attacked,
        );
    }
    std::fs::write(out.samples_csv(), csv).map_err(io_err(&out.samples_csv()))
}

/// One stealth row per poisoned pair; infinite PSNR prints as `inf`.
fn write_stealth_csv(out: &OutDir, pairs: &[PairStealth]) -> Result<()> {
    let mut csv = String::from("id,psnr_db,ssim,text_edit,changed_pixels\n");
    for p in pairs {
        let psnr = if p.psnr_db.is_finite() { p.psnr_db.to_string() } else { "inf".into() };
        let _ = writeln!(csv, "{},{psnr},{},{},{}", p.id, p.ssim, p.text_edit, p.changed_pixels);
    }
    std::fs::write(out.stealth_pairs_csv(), csv).map_err(io_err(&out.stealth_pairs_csv()))
}

fn write_plots(out: &OutDir, report: &ExperimentReport) -> Result<()> {
    let mut series = Vec::new();
    let mut push_curve = |name: &str, label: &str| -> Result<()> {
        let path = out.log(name);
        if path.is_file() {
            let losses = read_loss_csv(&path)?;
            series.push(svg::Series {
                label: label.to_string(),
                points: losses.iter().enumerate().map(|(i, l)| (i as f64, *l)).collect(),
            });
        }
        Ok(())
    };
    push_curve("victim_loss.csv", "victim (poisoned)")?;
    push_curve("victim_clean_loss.csv", "victim (clean)")?;
    push_curve("augmentor_loss.csv", "augmentor probe")?;
    if !series.is_empty() {
        svg::line_chart(&out.plot("loss.svg"), "training loss", "epoch", "mean loss", &series)?;
    }
    let b = &report.backdoored;
    let far_or = |c: &ConditionMetrics| c.far.map_or(0.0, |f| f.rate);
    let bars = vec![
        ("cda manual".to_string(), b.manual.cda),
        ("asr manual".to_string(), b.manual.asr.rate),
        ("far manual".to_string(), far_or(&b.manual)),
        ("cda auto".to_string(), b.automatic.cda),
        ("asr auto".to_string(), b.automatic.asr.rate),
        ("far auto".to_string(), far_or(&b.automatic)),
    ];
    svg::bar_chart(&out.plot("metrics.svg"), "backdoored model", "rate", &bars)
}

/// Evaluate everything on disk: both models over the metric grid, stealth of
/// the poisoned corpus, digests, plots and the report itself. `model_override`
/// swaps in a different backdoored-model file.
pub fn stage_eval(
    cfg: &ExperimentConfig,
    out: &OutDir,
    model_override: Option<&Path>,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    let cfg = cfg.resolved();
    let run = |cfg: &ExperimentConfig| -> Result<ExperimentReport> {
        let clean_train = load_corpus(&out.clean_train())?;
        let test = load_corpus(&out.clean_test())?;
        let poisoned_train = load_corpus(&out.poisoned_train())?;
        let augmentor = load_augmentor_if_needed(cfg, out)?;
        let model_path = model_override.map_or_else(|| out.victim_model(false), Path::to_path_buf);
        let model = load_detector(&model_path)?;
        let backdoored = model_metrics(&model, &test, cfg, augmentor.as_ref())?;
        let clean_model = if out.victim_model(true).is_file() {
            let m = load_detector(&out.victim_model(true))?;
            Some(model_metrics(&m, &test, cfg, augmentor.as_ref())?)
        } else {
            None
        };
        let pairs = stealth_pairs(&clean_train, &poisoned_train)?;
        let stealth = stealth_summary(&pairs)?;
        let plan: PoisonPlan = read_json(&out.log("poison_plan.json"))?;
        let digests = CorpusDigests {
            clean_train: dir_digest(&out.clean_train())?,
            clean_test: dir_digest(&out.clean_test())?,
            poisoned_train: dir_digest(&out.poisoned_train())?,
        };
        let report = ExperimentReport {
            config: cfg.clone(),
            digests,
            n_poisoned: plan.poisoned_ids.len(),
            augmentor_final_loss: final_loss_from_log(out, "augmentor_loss.csv")?,
            victim_final_loss: final_loss_from_log(out, "victim_loss.csv")?
                .ok_or_else(|| Error::MissingInput(out.log("victim_loss.csv").display().to_string()))?,
            victim_clean_final_loss: final_loss_from_log(out, "victim_clean_loss.csv")?,
            backdoored,
            clean_model,
            stealth,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        write_samples_csv(out, &test, cfg, &model, augmentor.as_ref())?;
        write_stealth_csv(out, &pairs)?;
        write_plots(out, &report)?;
        write_json_to(&out.report(), &report)?;
        Ok(report)
    };
    run(&cfg).map_err(|e| e.in_stage("eval"))
}

/// The whole pipeline in order. The stages only communicate through the
/// output directory, so this is exactly `gen; train-augmentor; poison;
/// train; train --clean; eval`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &OutDir) -> Result<ExperimentReport> {
    let started = Instant::now();
    stage_gen(cfg, out)?;
    if cfg.trigger.kind == TriggerKind::CmtAugmented {
        stage_train_augmentor(cfg, out)?;
    }
    stage_poison(cfg, out)?;
    stage_train(cfg, out, false)?;
    stage_train(cfg, out, true)?;
    let mut report = stage_eval(cfg, out, None)?;
    report.wall_time_secs = started.elapsed().as_secs_f64();
    write_json_to(&out.report(), &report)?;
    Ok(report)
}

/// Sweepable knobs: four scalars plus the categorical trigger kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Poison fraction.
    Rho,
    /// Feature blend weight of the augmented dots.
    Lambda,
    /// Dot size as a fraction of text height.
    Epsilon,
    /// Extractor character-noise rate.
    Gamma,
    /// Extractor trigger-recovery probability.
    PTrig,
    /// Trigger family (categorical; values are kind names).
    TriggerKind,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Rho => "rho",
            SweepAxis::Lambda => "lambda",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::Gamma => "gamma",
            SweepAxis::PTrig => "p_trig",
            SweepAxis::TriggerKind => "trigger_kind",
        }
    }

    pub fn parse(s: &str) -> Result<SweepAxis> {
        match s {
            "rho" => Ok(SweepAxis::Rho),
            "lambda" => Ok(SweepAxis::Lambda),
            "epsilon" => Ok(SweepAxis::Epsilon),
            "gamma" => Ok(SweepAxis::Gamma),
            "p_trig" => Ok(SweepAxis::PTrig),
            "trigger_kind" | "trigger.kind" | "kind" => Ok(SweepAxis::TriggerKind),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {other:?} (expected rho, lambda, epsilon, gamma, p_trig \
                 or trigger_kind)"
            ))),
        }
    }

    /// Whether values on this axis are numbers (drawn as a line chart) or
    /// names (drawn as a bar chart).
    pub fn is_numeric(self) -> bool {
        !matches!(self, SweepAxis::TriggerKind)
    }

    /// Set this axis to `value` (parsed per axis) on a config.
    pub fn apply(self, cfg: &mut ExperimentConfig, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| {
                Error::InvalidConfig(format!("sweep value {v:?} is not a number"))
            })
        };
        match self {
            SweepAxis::Rho => cfg.rho = num(value)?,
            SweepAxis::Lambda => cfg.trigger.lambda = num(value)?,
            SweepAxis::Epsilon => cfg.trigger.epsilon = num(value)?,
            SweepAxis::Gamma => cfg.extractor.gamma = num(value)?,
            SweepAxis::PTrig => cfg.extractor.p_trig = num(value)?,
            SweepAxis::TriggerKind => {
                // Kind names are exactly the serialized enum names, so parse
                // through serde rather than keeping a second name table.
                cfg.trigger.kind = serde_json::from_value(serde_json::Value::String(
                    value.to_string(),
                ))
                .map_err(|_| {
                    Error::InvalidConfig(format!("unknown trigger kind {value:?}"))
                })?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Axis value as given on the command line (a number or a kind name).
    pub value: String,
    pub out_dir: String,
    pub cda_manual: f64,
    pub asr_manual: f64,
    pub far_manual: Option<f64>,
    pub cda_automatic: f64,
    pub asr_automatic: f64,
    pub far_automatic: Option<f64>,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

/// Run the full pipeline once per axis value, each into its own
/// subdirectory, and aggregate the headline numbers. Nothing but the axis
/// varies between points - same master seed, so same corpus - and an empty
/// value list yields an empty summary.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    out: &OutDir,
    axis: SweepAxis,
    values: &[String],
) -> Result<SweepSummary> {
    // Validate every point before running any: a typo in the last value
    // should not cost the whole sweep.
    for v in values {
        let mut point_cfg = cfg.clone();
        axis.apply(&mut point_cfg, v)?;
        point_cfg.validate()?;
    }
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut point_cfg = cfg.clone();
        axis.apply(&mut point_cfg, v)?;
        let sub = OutDir::new(out.root().join(format!("{}-{v}", axis.name())));
        let report = run_experiment(&point_cfg, &sub)?;
        let b = &report.backdoored;
        points.push(SweepPoint {
            value: v.clone(),
            out_dir: sub.root().display().to_string(),
            cda_manual: b.manual.cda,
            asr_manual: b.manual.asr.rate,
            far_manual: b.manual.far.map(|f| f.rate),
            cda_automatic: b.automatic.cda,
            asr_automatic: b.automatic.asr.rate,
            far_automatic: b.automatic.far.map(|f| f.rate),
            mean_psnr_db: report.stealth.mean_psnr_db,
            mean_ssim: report.stealth.mean_ssim,
        });
    }
    let summary = SweepSummary { axis, points };
    write_json_to(&out.root().join("sweep.json"), &summary)?;
    let mut csv = String::from(
        "value,cda_manual,asr_manual,far_manual,cda_automatic,asr_automatic,far_automatic,\
         mean_psnr_db,mean_ssim\n",
    );
    for p in &summary.points {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{}",
            p.value,
            p.cda_manual,
            p.asr_manual,
            opt(p.far_manual),
            p.cda_automatic,
            p.asr_automatic,
            opt(p.far_automatic),
            opt(p.mean_psnr_db),
            p.mean_ssim
        );
    }
    let csv_path = out.root().join("sweep.csv");
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    if !summary.points.is_empty() {
        write_sweep_plot(out, axis, &summary)?;
    }
    Ok(summary)
}

/// ASR/CDA/FAR against the axis: a line chart when the axis is numeric, a
/// bar chart per (value, metric) when it is categorical.
fn write_sweep_plot(out: &OutDir, axis: SweepAxis, summary: &SweepSummary) -> Result<()> {
    let path = out.root().join("sweep.svg");
    let title = format!("sweep over {}", axis.name());
    if axis.is_numeric() {
        let xs: Vec<f64> = summary
            .points
            .iter()
            .map(|p| p.value.parse::<f64>().expect("validated numeric axis value"))
            .collect();
        let line = |label: &str, f: &dyn Fn(&SweepPoint) -> Option<f64>| svg::Series {
            label: label.to_string(),
            points: summary
                .points
                .iter()
                .zip(&xs)
                .filter_map(|(p, x)| f(p).map(|y| (*x, y)))
                .collect(),
        };
        let series = vec![
            line("asr (manual)", &|p| Some(p.asr_manual)),
            line("asr (automatic)", &|p| Some(p.asr_automatic)),
            line("cda (automatic)", &|p| Some(p.cda_automatic)),
            line("far (automatic)", &|p| p.far_automatic),
        ];
        svg::line_chart(&path, &title, axis.name(), "rate", &series)
    } else {
        let mut bars = Vec::new();
        for p in &summary.points {
            bars.push((format!("{} asr:m", p.value), p.asr_manual));
            bars.push((format!("{} asr:a", p.value), p.asr_automatic));
            bars.push((format!("{} cda:a", p.value), p.cda_automatic));
            if let Some(far) = p.far_automatic {
                bars.push((format!("{} far:a", p.value), far));
            }
        }
        svg::bar_chart(&path, &title, "rate", &bars)
    }
}

/// Compare two reports for determinism: equal except `wall_time_secs`.
pub fn reports_equal_modulo_time(a: &serde_json::Value, b: &serde_json::Value) -> bool {
    let strip = |v: &serde_json::Value| {
        let mut v = v.clone();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("wall_time_secs");
        }
        v
    };
    strip(a) == strip(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration small enough to run a full pipeline in seconds.
    pub(crate) fn tiny_config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.rho = 0.1;
        cfg.corpus.n_train = 90;
        cfg.corpus.n_test = 30;
        cfg.augmentor.epochs = 15;
        cfg.augmentor.sample_frac = 0.3;
        cfg.victim.epochs = 8;
        cfg
    }

    #[test]
    fn seeds_derive_from_master_and_differ_per_stage() {
        let cfg = ExperimentConfig { seed: 99, ..ExperimentConfig::default() };
        let r = cfg.resolved();
        let seeds = [r.corpus.seed, r.augmentor.seed, r.victim.seed, r.extractor.seed,
                     cfg.poison_seed(), cfg.victim_clean_seed()];
        for (i, a) in seeds.iter().enumerate() {
            for b in &seeds[i + 1..] {
                assert_ne!(a, b, "stage seeds must be distinct");
            }
        }
        let other = ExperimentConfig { seed: 100, ..ExperimentConfig::default() }.resolved();
        assert_ne!(r.corpus.seed, other.corpus.seed);
    }

    #[test]
    fn config_file_seeds_are_ignored_in_favor_of_derived_ones() {
        // A config file that tries to pin a nested seed directly.
        let body = r#"{"seed": 7, "corpus": {"n_train": 12, "n_test": 4, "seed": 123456}}"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, body).unwrap();
        let cfg = load_config(Some(&path), None).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.corpus.n_train, 12);
        assert_eq!(cfg.corpus.seed, 0, "nested seed not read from file");
        assert_eq!(cfg.resolved().corpus.seed, mix(7, TAG_CORPUS));
    }

    #[test]
    fn config_loading_reports_missing_and_invalid_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_config(Some(&dir.path().join("absent.json")), None),
            Err(Error::MissingInput(_))
        ));
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{not json").unwrap();
        assert!(matches!(
            load_config(Some(&bad), None),
            Err(Error::InvalidConfig(_))
        ));
        let invalid = dir.path().join("invalid.json");
        std::fs::write(&invalid, r#"{"rho": 2.0}"#).unwrap();
        assert!(matches!(
            load_config(Some(&invalid), None),
            Err(Error::InvalidConfig(_))
        ));
        let seed = load_config(None, Some(42)).unwrap();
        assert_eq!(seed.seed, 42);
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), "two").unwrap();
        std::fs::write(dir.path().join("a.txt"), "one").unwrap();
        let d1 = dir_digest(dir.path()).unwrap();
        let d2 = dir_digest(dir.path()).unwrap();
        assert_eq!(d1, d2);
        std::fs::write(dir.path().join("a.txt"), "changed").unwrap();
        assert_ne!(dir_digest(dir.path()).unwrap(), d1);
    }

    #[test]
    fn sweep_axis_parsing() {
        assert_eq!(SweepAxis::parse("rho").unwrap(), SweepAxis::Rho);
        assert_eq!(SweepAxis::parse("p_trig").unwrap(), SweepAxis::PTrig);
        assert_eq!(SweepAxis::parse("trigger.kind").unwrap(), SweepAxis::TriggerKind);
        assert_eq!(SweepAxis::parse("trigger_kind").unwrap(), SweepAxis::TriggerKind);
        assert!(SweepAxis::parse("size").is_err());
        let mut cfg = ExperimentConfig::default();
        SweepAxis::Lambda.apply(&mut cfg, "0.4").unwrap();
        assert_eq!(cfg.trigger.lambda, 0.4);
        SweepAxis::TriggerKind.apply(&mut cfg, "patch").unwrap();
        assert_eq!(cfg.trigger.kind, TriggerKind::Patch);
        assert!(SweepAxis::Rho.apply(&mut cfg, "lots").is_err());
        assert!(SweepAxis::TriggerKind.apply(&mut cfg, "banana").is_err());
    }

    #[test]
    fn empty_sweep_yields_an_empty_summary() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path());
        let summary = run_sweep(&tiny_config(3), &out, SweepAxis::Rho, &[]).unwrap();
        assert!(summary.points.is_empty());
        assert!(dir.path().join("sweep.json").is_file());
        assert!(dir.path().join("sweep.csv").is_file());
        assert!(!dir.path().join("sweep.svg").exists(), "nothing to plot");
    }

    #[test]
    fn loss_csv_roundtrips_exact_floats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let losses = vec![0.693_147_180_559_945_3, 1.0 / 3.0, 2e-17];
        write_loss_csv(&path, &losses).unwrap();
        assert_eq!(read_loss_csv(&path).unwrap(), losses);
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("epoch,mean_loss\n0,"));
        assert!(matches!(
            read_loss_csv(&dir.path().join("absent.csv")),
            Err(Error::MissingInput(_))
        ));
    }

    #[test]
    fn report_comparison_ignores_wall_time_only() {
        let a = serde_json::json!({"x": 1, "wall_time_secs": 1.5});
        let b = serde_json::json!({"x": 1, "wall_time_secs": 9.0});
        let c = serde_json::json!({"x": 2, "wall_time_secs": 1.5});
        assert!(reports_equal_modulo_time(&a, &b));
        assert!(!reports_equal_modulo_time(&a, &c));
    }

    #[test]
    fn stages_fail_cleanly_without_their_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path());
        let cfg = tiny_config(1);
        let err = stage_poison(&cfg, &out).unwrap_err();
        assert_eq!(err.exit_code(), 1, "missing corpus is a missing-input error");
        let err = stage_train(&cfg, &out, false).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = stage_eval(&cfg, &out, None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn pipeline_roundtrip_produces_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::new(dir.path());
        let cfg = tiny_config(5);
        let report = run_experiment(&cfg, &out).unwrap();
        for path in [
            out.clean_train().join("manifest.jsonl"),
            out.clean_test().join("manifest.jsonl"),
            out.poisoned_train().join("manifest.jsonl"),
            out.augmentor_model(),
            out.victim_model(false),
            out.victim_model(true),
            out.report(),
            out.samples_csv(),
            out.stealth_pairs_csv(),
            out.log("augmentor_loss.csv"),
            out.log("victim_loss.csv"),
            out.log("victim_clean_loss.csv"),
            out.plot("loss.svg"),
            out.plot("metrics.svg"),
        ] {
            assert!(path.is_file(), "missing artifact {}", path.display());
        }
        assert_eq!(report.n_poisoned, 9, "ceil(0.1 * 90)");
        assert!(report.victim_final_loss.is_finite());
        assert!(report.clean_model.is_some());
        assert!(report.stealth.n_pairs == 9);
        // The samples dump has one row per test meme plus a header.
        let csv = std::fs::read_to_string(out.samples_csv()).unwrap();
        assert_eq!(csv.lines().count(), 1 + 30);
    }
}
