//! Command implementations. Every command resolves its configuration with
//! flag > config-file > default precedence, writes its artifacts under the
//! out directory, and records a run manifest with config and artifact
//! hashes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Result};

use vlcfusion::conditions::{
    self, dedup_conditions, extract_conditions, generate_responses, sample_captioning_subset,
    score_consistency, select_top_k, Caption, GenerateOptions, PromptTemplates, ResponseMode,
    RetryPolicy,
};
use vlcfusion::io::{hash_file, sha256_hex, write_atomic, write_json_atomic};
use vlcfusion::synth::{
    build_splits, evaluate_detector, generate_and_store, train, ConditionsSource, DecodeConfig,
    DegradationCombo, DetectorArch, DetectorConfig, DetectorParams, SceneSpec, SceneStore,
    SplitPlan, Splits, TrainConfig,
};

use crate::backend::BackendSpec;
use crate::config::{parse_list, FileConfig};
use crate::plot;

/// Flags shared by every command.
#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// Flat key=value config file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root for all artifacts this command writes.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

pub struct Ctx {
    pub file: FileConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Resolved settings recorded into the run manifest.
    pub recorded: BTreeMap<String, String>,
}

impl Ctx {
    pub fn new(common: &CommonArgs) -> Result<Self> {
        let file = FileConfig::load(common.config.as_deref())?;
        let out_dir = file.resolve(common.out_dir.clone(), "out_dir", PathBuf::from("out"))?;
        let seed = file.resolve(common.seed, "seed", 0u64)?;
        let mut recorded = BTreeMap::new();
        recorded.insert("out_dir".into(), out_dir.display().to_string());
        recorded.insert("seed".into(), seed.to_string());
        Ok(Ctx { file, out_dir, seed, recorded })
    }

    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.recorded.insert(key.to_string(), value.to_string());
    }

    /// Write `run-manifest-<command>.json` binding config to artifact hashes.
    pub fn write_run_manifest(&self, command: &str, artifacts: &[PathBuf]) -> Result<()> {
        let config_hash = sha256_hex(serde_json::to_string(&self.recorded)?.as_bytes());
        let mut hashes = BTreeMap::new();
        for path in artifacts {
            let rel = path.strip_prefix(&self.out_dir).unwrap_or(path);
            hashes.insert(rel.display().to_string(), hash_file(path)?);
        }
        let manifest = serde_json::json!({
            "command": command,
            "config": self.recorded,
            "config_hash": config_hash,
            "artifacts": hashes,
        });
        write_json_atomic(
            &self.out_dir.join(format!("run-manifest-{command}.json")),
            &manifest,
        )?;
        Ok(())
    }

    fn data_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        match self.file.resolve_opt(flag, "data_dir")? {
            Some(dir) => Ok(dir),
            None => Ok(self.out_dir.join("data")),
        }
    }
}

// ---------------------------------------------------------------------------
// synth-data / split

#[derive(Debug, clap::Args)]
pub struct SynthDataArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    #[arg(long)]
    pub p_dark: Option<f64>,
    #[arg(long)]
    pub p_rain: Option<f64>,
    #[arg(long)]
    pub p_blur: Option<f64>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

pub fn synth_data(ctx: &mut Ctx, args: &SynthDataArgs) -> Result<()> {
    let defaults = SceneSpec::default();
    let spec = SceneSpec {
        n_scenes: ctx.file.resolve(args.scenes, "scenes", defaults.n_scenes)?,
        grid: ctx.file.resolve(args.grid, "grid", defaults.grid)?,
        n_classes: ctx.file.resolve(args.classes, "classes", defaults.n_classes)?,
        max_objects: ctx.file.resolve(args.max_objects, "max_objects", defaults.max_objects)?,
        n_nuisance: ctx.file.resolve(None, "n_nuisance", defaults.n_nuisance)?,
        p_dark: ctx.file.resolve(args.p_dark, "p_dark", defaults.p_dark)?,
        p_rain: ctx.file.resolve(args.p_rain, "p_rain", defaults.p_rain)?,
        p_blur: ctx.file.resolve(args.p_blur, "p_blur", defaults.p_blur)?,
        p_nuisance: ctx.file.resolve(None, "p_nuisance", defaults.p_nuisance)?,
    };
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    ctx.record("scenes", spec.n_scenes);
    ctx.record("grid", spec.grid);
    ctx.record("classes", spec.n_classes);
    ctx.record("data_dir", data_dir.display());

    let (manifest, hash) = generate_and_store(&data_dir, &spec, ctx.seed)?;
    println!("dataset: {} scenes under {}", manifest.scenes.len(), data_dir.display());
    println!("dataset hash: {hash}");
    ctx.write_run_manifest("synth-data", &[data_dir.join("manifest.json")])?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Comma-separated train,val,test fractions of the seen pool.
    #[arg(long)]
    pub ratios: Option<String>,
    /// Held-out degradation combos, e.g. "dark+rain,dark+blur,rain+blur".
    #[arg(long)]
    pub unseen: Option<String>,
}

pub fn split(ctx: &mut Ctx, args: &SplitArgs) -> Result<()> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let manifest = vlcfusion::synth::load_manifest(&data_dir)?;
    let ratios_raw = ctx
        .file
        .resolve(args.ratios.clone(), "ratios", "0.8,0.1,0.1".to_string())?;
    let ratios: Vec<f64> = parse_list(&ratios_raw, "ratios")?;
    if ratios.len() != 3 {
        bail!("ratios must have three entries, got {ratios_raw:?}");
    }
    let unseen_raw = ctx.file.resolve(
        args.unseen.clone(),
        "unseen",
        "dark+rain,dark+blur,rain+blur".to_string(),
    )?;
    let unseen_combos = unseen_raw
        .split(',')
        .map(DegradationCombo::parse)
        .collect::<vlcfusion::Result<Vec<_>>>()?;
    let plan = SplitPlan {
        unseen_combos,
        ratios: (ratios[0], ratios[1], ratios[2]),
        seed: ctx.seed,
    };
    ctx.record("ratios", &ratios_raw);
    ctx.record("unseen", &unseen_raw);
    ctx.record("data_dir", data_dir.display());

    let splits = build_splits(&manifest, &plan)?;
    let (train_n, val_n, seen_n, unseen_n) = splits.counts();
    println!("splits: train {train_n}, val {val_n}, test_seen {seen_n}, test_unseen {unseen_n}");
    let path = ctx.out_dir.join("splits.json");
    vlcfusion::synth::save_splits(&path, &splits)?;
    ctx.write_run_manifest("split", &[path])?;
    Ok(())
}

// ---------------------------------------------------------------------------
// mine-conditions / respond / rank

#[derive(Debug, clap::Args)]
pub struct MineArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Captioning subset size.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
}

fn load_templates(ctx: &Ctx, flag: Option<PathBuf>) -> Result<PromptTemplates> {
    match ctx.file.resolve_opt(flag, "prompts_dir")? {
        Some(dir) => Ok(PromptTemplates::from_dir(&dir)?),
        None => Ok(PromptTemplates::default()),
    }
}

fn resolve_backend(
    ctx: &Ctx,
    flag: Option<String>,
    manifest: Option<&vlcfusion::synth::DatasetManifest>,
) -> Result<(String, std::sync::Arc<dyn vlcfusion::vlm::VlmBackend>)> {
    let raw = ctx.file.resolve(flag, "backend", "mock".to_string())?;
    let spec = BackendSpec::parse(&raw)?;
    Ok((raw, spec.build(ctx.seed, manifest)?))
}

pub fn mine_conditions(ctx: &mut Ctx, args: &MineArgs) -> Result<()> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let manifest = vlcfusion::synth::load_manifest(&data_dir)?;
    let records = manifest.image_records();
    let m_default = 50.min(records.len());
    let m = ctx.file.resolve(args.m, "m", m_default)?;
    let (backend_raw, backend) = resolve_backend(ctx, args.backend.clone(), Some(&manifest))?;
    let templates = load_templates(ctx, args.prompts_dir.clone())?;
    ctx.record("backend", &backend_raw);
    ctx.record("m", m);
    ctx.record("data_dir", data_dir.display());

    let subset = sample_captioning_subset(&records, m, ctx.seed)?;
    let outcome = conditions::caption_images(&subset, backend.as_ref(), &templates, RetryPolicy::default());
    if !outcome.failures.is_empty() {
        println!(
            "captioning failures: {} of {} images (run continues)",
            outcome.failures.len(),
            subset.len()
        );
    }
    let captions_path = ctx.out_dir.join("captions.json");
    write_json_atomic(&captions_path, &outcome)?;

    let by_id: BTreeMap<&str, &Caption> =
        outcome.captions.iter().map(|c| (c.image_id.as_str(), c)).collect();
    let pairs: Vec<(conditions::ImageRecord, Caption)> = subset
        .iter()
        .filter_map(|r| by_id.get(r.id.as_str()).map(|c| (r.clone(), (*c).clone())))
        .collect();
    let raw = extract_conditions(&pairs, backend.as_ref(), &templates, RetryPolicy::default())?;
    let raw_path = ctx.out_dir.join("conditions_raw.json");
    conditions::save_conditions(&raw_path, &raw)?;

    let deduped = dedup_conditions(&raw);
    println!("conditions: {} extracted, {} after dedup", raw.len(), deduped.len());
    let conditions_path = ctx.out_dir.join("conditions.json");
    conditions::save_conditions(&conditions_path, &deduped)?;

    ctx.write_run_manifest("mine-conditions", &[captions_path, raw_path, conditions_path])?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct RespondArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Ask one question per prompt instead of the batched form.
    #[arg(long)]
    pub per_condition: bool,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

pub fn respond(ctx: &mut Ctx, args: &RespondArgs) -> Result<()> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let manifest = vlcfusion::synth::load_manifest(&data_dir)?;
    let conditions_path = args
        .conditions
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("conditions.json"));
    let set = conditions::load_conditions(&conditions_path)?;
    let (backend_raw, backend) = resolve_backend(ctx, args.backend.clone(), Some(&manifest))?;
    let templates = load_templates(ctx, None)?;
    let concurrency = ctx.file.resolve(args.concurrency, "concurrency", 1usize)?;
    ctx.record("backend", &backend_raw);
    ctx.record("conditions", conditions_path.display());
    ctx.record("data_dir", data_dir.display());
    ctx.record("mode", if args.per_condition { "per_condition" } else { "batched" });

    let responses_path = ctx.out_dir.join("responses.json");
    let matrix = generate_responses(
        &manifest.image_records(),
        &set,
        backend.as_ref(),
        &templates,
        if args.per_condition { ResponseMode::PerCondition } else { ResponseMode::Batched },
        RetryPolicy::default(),
        &GenerateOptions { checkpoint: Some(responses_path.clone()), concurrency },
    )?;
    conditions::save_responses(&responses_path, &matrix)?;
    println!(
        "responses: {} rows x {} conditions, {} unknown cells",
        matrix.rows.len(),
        set.len(),
        matrix.unknown_cells()
    );
    println!(
        "fraction of images with at least one active condition: {:.3}",
        matrix.fraction_any_true()
    );
    ctx.write_run_manifest("respond", &[responses_path])?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct RankArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<String>,
    /// Repeated response runs used for the consistency score.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Probe subset size (default min(200, N)).
    #[arg(long)]
    pub probe: Option<usize>,
    /// Persist the top-k most consistent conditions.
    #[arg(long)]
    pub k: Option<usize>,
}

pub fn rank(ctx: &mut Ctx, args: &RankArgs) -> Result<()> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let manifest = vlcfusion::synth::load_manifest(&data_dir)?;
    let conditions_path = args
        .conditions
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("conditions.json"));
    let set = conditions::load_conditions(&conditions_path)?;
    let (backend_raw, backend) = resolve_backend(ctx, args.backend.clone(), Some(&manifest))?;
    let templates = load_templates(ctx, None)?;
    let runs = ctx.file.resolve(args.runs, "runs", 5usize)?;
    let records = manifest.image_records();
    let probe_n = ctx.file.resolve(args.probe, "probe", 200.min(records.len()))?;
    let probe = sample_captioning_subset(&records, probe_n.min(records.len()), ctx.seed)?;
    ctx.record("backend", &backend_raw);
    ctx.record("runs", runs);
    ctx.record("probe", probe.len());
    ctx.record("data_dir", data_dir.display());

    let report = score_consistency(&probe, &set, backend.as_ref(), &templates, runs, RetryPolicy::default())?;
    let consistency_path = ctx.out_dir.join("consistency.json");
    conditions::save_consistency(&consistency_path, &report)?;
    for score in &report.scores {
        println!("condition {:>3}: consistency {:.4}", score.index, score.consistency);
    }

    let mut artifacts = vec![consistency_path];
    let k = ctx.file.resolve_opt(args.k, "k")?;
    if let Some(k) = k {
        let selected = select_top_k(&report, &set, k)?;
        let selected_path = ctx.out_dir.join("conditions_selected.json");
        conditions::save_conditions(&selected_path, &selected)?;
        println!("selected top-{k} conditions into {}", selected_path.display());
        ctx.record("k", k);
        artifacts.push(selected_path);
    }
    ctx.write_run_manifest("rank", &artifacts)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval / compare

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// vlc, concat_conv, concat_conv_selfattn, cbam_only, learnable_align,
    /// single_a or single_b.
    #[arg(long)]
    pub variant: Option<String>,
    /// oracle, responses or none.
    #[arg(long)]
    pub conditions_source: Option<String>,
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

struct TrainSetup {
    store: SceneStore,
    splits: Splits,
    arch: DetectorArch,
    source: ConditionsSource,
    train_config: TrainConfig,
    variant_tag: String,
}

fn resolve_train_setup(ctx: &mut Ctx, args: &TrainArgs) -> Result<TrainSetup> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let store = SceneStore::load(&data_dir)?;
    let splits_path = args
        .splits
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("splits.json"));
    let splits = vlcfusion::synth::load_splits(&splits_path)?;

    let variant_tag = ctx.file.resolve(args.variant.clone(), "variant", "vlc".to_string())?;
    let arch: DetectorArch = variant_tag.parse()?;

    let source_raw = ctx.file.resolve(
        args.conditions_source.clone(),
        "conditions_source",
        if arch.needs_conditions() { "oracle".to_string() } else { "none".to_string() },
    )?;
    let source = match source_raw.as_str() {
        "none" => ConditionsSource::None,
        "oracle" => ConditionsSource::OracleLatents,
        "responses" => {
            let conditions_path = args
                .conditions
                .clone()
                .unwrap_or_else(|| ctx.out_dir.join("conditions.json"));
            let responses_path = args
                .responses
                .clone()
                .unwrap_or_else(|| ctx.out_dir.join("responses.json"));
            let set = conditions::load_conditions(&conditions_path)?;
            let matrix = conditions::load_responses(&responses_path, Some(&set))?;
            ConditionsSource::Matrix { conditions: set, matrix }
        }
        other => bail!("unknown conditions source {other:?} (expected oracle, responses, none)"),
    };
    if arch.needs_conditions() && matches!(source, ConditionsSource::None) {
        bail!("variant {variant_tag} needs --conditions-source oracle or responses");
    }

    let defaults = TrainConfig::default();
    let train_config = TrainConfig {
        epochs: ctx.file.resolve(args.epochs, "epochs", defaults.epochs)?,
        batch_size: ctx.file.resolve(args.batch_size, "batch_size", defaults.batch_size)?,
        lr: ctx.file.resolve(args.lr, "lr", defaults.lr)?,
        momentum: ctx.file.resolve(None, "momentum", defaults.momentum)?,
        pos_weight: ctx.file.resolve(None, "pos_weight", defaults.pos_weight)?,
        seed: ctx.seed,
        decode: DecodeConfig {
            score_threshold: ctx
                .file
                .resolve(None, "score_threshold", defaults.decode.score_threshold)?,
            nms_iou: ctx.file.resolve(None, "nms_iou", defaults.decode.nms_iou)?,
            ..DecodeConfig::default()
        },
        ..defaults
    };
    ctx.record("variant", &variant_tag);
    ctx.record("conditions_source", &source_raw);
    ctx.record("epochs", train_config.epochs);
    ctx.record("batch_size", train_config.batch_size);
    ctx.record("lr", train_config.lr);
    ctx.record("data_dir", data_dir.display());
    Ok(TrainSetup { store, splits, arch, source, train_config, variant_tag })
}

fn detector_config(setup: &TrainSetup) -> DetectorConfig {
    let k = setup.source.k(&setup.store);
    DetectorConfig::new(setup.arch, setup.store.manifest.spec.n_classes, k)
}

pub fn train_cmd(ctx: &mut Ctx, args: &TrainArgs) -> Result<()> {
    let setup = resolve_train_setup(ctx, args)?;
    let det = detector_config(&setup);
    let outcome = train(&setup.store, &setup.splits, det, &setup.source, &setup.train_config)?;
    println!(
        "trained {} for {} epochs; best val mAP {:.4} at epoch {}",
        setup.variant_tag,
        setup.train_config.epochs,
        outcome.best_val_map,
        outcome.best_epoch
    );
    let checkpoint = ctx.out_dir.join(format!("checkpoint_{}.vlcf", setup.variant_tag));
    outcome.params.save(&checkpoint, Some(ctx.seed))?;
    let log_path = ctx.out_dir.join(format!("training_log_{}.csv", setup.variant_tag));
    write_atomic(&log_path, outcome.log_csv().as_bytes())?;
    ctx.write_run_manifest("train", &[checkpoint, log_path])?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// val, test_seen or test_unseen; default evaluates both test splits.
    #[arg(long)]
    pub split: Option<String>,
}

pub fn eval_cmd(ctx: &mut Ctx, args: &EvalArgs) -> Result<()> {
    let setup = resolve_train_setup(ctx, &args.train)?;
    let checkpoint = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join(format!("checkpoint_{}.vlcf", setup.variant_tag)));
    if !checkpoint.exists() {
        bail!("checkpoint {} does not exist; train first", checkpoint.display());
    }
    let params = DetectorParams::load(&checkpoint)?;
    let split_names: Vec<String> = match &args.split {
        Some(s) => vec![s.clone()],
        None => vec!["test_seen".into(), "test_unseen".into()],
    };
    let mut artifacts = Vec::new();
    for name in &split_names {
        let ids = match name.as_str() {
            "val" => &setup.splits.val,
            "test_seen" => &setup.splits.test_seen,
            "test_unseen" => &setup.splits.test_unseen,
            other => bail!("unknown split {other:?}"),
        };
        let report = evaluate_detector(
            &setup.store,
            ids,
            &params,
            &setup.source,
            &setup.train_config.decode,
        )?;
        println!(
            "{name}: mAP@[.5:.95] {:.4}, mAP@.5 {:.4}, mAR@100 {:.4}",
            report.map_50_95, report.map_50, report.mar_100
        );
        let json_path = ctx.out_dir.join(format!("report_{}_{name}.json", setup.variant_tag));
        write_json_atomic(&json_path, &report)?;
        let csv_path = ctx.out_dir.join(format!("report_{}_{name}.csv", setup.variant_tag));
        write_atomic(&csv_path, report.to_csv().as_bytes())?;
        artifacts.push(json_path);
        artifacts.push(csv_path);
    }
    ctx.write_run_manifest("eval", &artifacts)?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// Train all five fusion variants on one seed and tabulate both test splits.
pub fn compare(ctx: &mut Ctx, args: &CompareArgs) -> Result<()> {
    let variants = ["concat_conv", "concat_conv_selfattn", "cbam_only", "learnable_align", "vlc"];
    let mut csv = String::from("variant,seed,map_50_95_seen,map_50_seen,map_50_95_unseen,map_50_unseen\n");
    for variant in variants {
        let train_args = TrainArgs {
            data_dir: args.data_dir.clone(),
            splits: args.splits.clone(),
            variant: Some(variant.to_string()),
            conditions_source: None,
            responses: None,
            conditions: None,
            epochs: args.epochs,
            batch_size: None,
            lr: None,
        };
        let setup = resolve_train_setup(ctx, &train_args)?;
        let det = detector_config(&setup);
        let outcome = train(&setup.store, &setup.splits, det, &setup.source, &setup.train_config)?;
        let seen = evaluate_detector(
            &setup.store,
            &setup.splits.test_seen,
            &outcome.params,
            &setup.source,
            &setup.train_config.decode,
        )?;
        let unseen = evaluate_detector(
            &setup.store,
            &setup.splits.test_unseen,
            &outcome.params,
            &setup.source,
            &setup.train_config.decode,
        )?;
        println!(
            "{variant}: seen mAP@.5 {:.4}, unseen mAP@.5 {:.4}",
            seen.map_50, unseen.map_50
        );
        csv.push_str(&format!(
            "{variant},{},{:.6},{:.6},{:.6},{:.6}\n",
            ctx.seed, seen.map_50_95, seen.map_50, unseen.map_50_95, unseen.map_50
        ));
    }
    let path = ctx.out_dir.join("comparison.csv");
    write_atomic(&path, csv.as_bytes())?;
    ctx.write_run_manifest("compare", &[path])?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ablations

#[derive(Debug, clap::Args)]
pub struct AblateKArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Condition counts to sweep, e.g. "2,4,6,8,10".
    #[arg(long)]
    pub ks: Option<String>,
    /// Training seeds, e.g. "0,1,2".
    #[arg(long)]
    pub seeds: Option<String>,
    /// Uninformative tail questions appended to the six informative ones.
    #[arg(long)]
    pub noisy: Option<usize>,
    /// Flip probability of the noisy tail.
    #[arg(long)]
    pub noisy_flip: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
}

pub fn ablate_k(ctx: &mut Ctx, args: &AblateKArgs) -> Result<()> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let store = SceneStore::load(&data_dir)?;
    let splits_path = args
        .splits
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("splits.json"));
    let splits = vlcfusion::synth::load_splits(&splits_path)?;

    let ks_raw = ctx.file.resolve(args.ks.clone(), "ks", "2,4,6,8,10".to_string())?;
    let ks: Vec<usize> = parse_list(&ks_raw, "ks")?;
    let seeds_raw = ctx.file.resolve(args.seeds.clone(), "seeds", "0,1,2".to_string())?;
    let seeds: Vec<u64> = parse_list(&seeds_raw, "seeds")?;
    let noisy = ctx.file.resolve(args.noisy, "noisy", 4usize)?;
    let noisy_flip = ctx.file.resolve(args.noisy_flip, "noisy_flip", 0.4)?;
    let epochs = ctx.file.resolve(args.epochs, "epochs", TrainConfig::default().epochs)?;
    let runs = ctx.file.resolve(args.runs, "runs", 5usize)?;

    let cond_spec = vlcfusion::synth::SyntheticConditionSpec::with_noisy_tail(noisy, noisy_flip);
    let all_conditions = cond_spec.condition_set();
    if ks.iter().any(|&k| k > all_conditions.len()) {
        bail!(
            "sweep includes k above the available {} conditions",
            all_conditions.len()
        );
    }
    ctx.record("ks", &ks_raw);
    ctx.record("seeds", &seeds_raw);
    ctx.record("noisy", noisy);
    ctx.record("noisy_flip", noisy_flip);
    ctx.record("epochs", epochs);
    ctx.record("data_dir", data_dir.display());

    let templates = PromptTemplates::default();
    let records = store.manifest.image_records();
    let mut csv = String::from("k,seed,map_50_unseen,map_50_95_unseen\n");
    let mut means: Vec<(usize, f64)> = Vec::new();
    for &k in &ks {
        let mut acc = 0.0;
        for &seed in &seeds {
            let oracle =
                vlcfusion::synth::SyntheticOracleVlm::new(&store.manifest, &cond_spec, seed);
            let probe_n = 200.min(records.len());
            let probe = sample_captioning_subset(&records, probe_n, seed)?;
            let report =
                score_consistency(&probe, &all_conditions, &oracle, &templates, runs, RetryPolicy::default())?;
            let selected = select_top_k(&report, &all_conditions, k)?;
            let matrix = generate_responses(
                &records,
                &selected,
                &oracle,
                &templates,
                ResponseMode::Batched,
                RetryPolicy::default(),
                &GenerateOptions::default(),
            )?;
            let source = ConditionsSource::Matrix { conditions: selected, matrix };
            let det = DetectorConfig::new(
                DetectorArch::Fused(vlcfusion::fusion::FusionVariant::Vlc),
                store.manifest.spec.n_classes,
                k,
            );
            let tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
            let outcome = train(&store, &splits, det, &source, &tc)?;
            let unseen = evaluate_detector(
                &store,
                &splits.test_unseen,
                &outcome.params,
                &source,
                &tc.decode,
            )?;
            println!("k {k} seed {seed}: unseen mAP@.5 {:.4}", unseen.map_50);
            csv.push_str(&format!("{k},{seed},{:.6},{:.6}\n", unseen.map_50, unseen.map_50_95));
            acc += unseen.map_50;
        }
        means.push((k, acc / seeds.len() as f64));
    }
    for (k, mean) in &means {
        println!("k {k}: mean unseen mAP@.5 {mean:.4}");
    }

    let csv_path = ctx.out_dir.join("ablate_k.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    let series = vec![(
        "mean unseen mAP@.5".to_string(),
        means.iter().map(|(k, m)| (*k as f64, *m)).collect::<Vec<_>>(),
    )];
    let svg = plot::line_chart("Detection quality vs condition count", "conditions (k)", "mAP@.5", &series);
    let svg_path = ctx.out_dir.join("ablate_k.svg");
    write_atomic(&svg_path, svg.as_bytes())?;
    ctx.write_run_manifest("ablate-k", &[csv_path, svg_path])?;
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct AblateBackendArgs {
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// Flip probabilities simulating backend quality, e.g. "0.0,0.3".
    #[arg(long)]
    pub flips: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

pub fn ablate_backend(ctx: &mut Ctx, args: &AblateBackendArgs) -> Result<()> {
    let data_dir = ctx.data_dir(args.data_dir.clone())?;
    let store = SceneStore::load(&data_dir)?;
    let splits_path = args
        .splits
        .clone()
        .unwrap_or_else(|| ctx.out_dir.join("splits.json"));
    let splits = vlcfusion::synth::load_splits(&splits_path)?;

    let flips_raw = ctx.file.resolve(args.flips.clone(), "flips", "0.0,0.3".to_string())?;
    let flips: Vec<f64> = parse_list(&flips_raw, "flips")?;
    let seeds_raw = ctx.file.resolve(args.seeds.clone(), "seeds", "0,1,2,3,4".to_string())?;
    let seeds: Vec<u64> = parse_list(&seeds_raw, "seeds")?;
    let epochs = ctx.file.resolve(args.epochs, "epochs", TrainConfig::default().epochs)?;
    ctx.record("flips", &flips_raw);
    ctx.record("seeds", &seeds_raw);
    ctx.record("epochs", epochs);
    ctx.record("data_dir", data_dir.display());

    let templates = PromptTemplates::default();
    let records = store.manifest.image_records();
    let mut csv = String::from("flip,seed,map_50_seen,map_50_unseen\n");
    let mut seen_means = Vec::new();
    let mut unseen_means = Vec::new();
    for &flip in &flips {
        let cond_spec = vlcfusion::synth::SyntheticConditionSpec::informative(flip);
        let conditions = cond_spec.condition_set();
        let (mut seen_acc, mut unseen_acc) = (0.0, 0.0);
        for &seed in &seeds {
            let oracle = vlcfusion::synth::SyntheticOracleVlm::new(&store.manifest, &cond_spec, seed);
            let matrix = generate_responses(
                &records,
                &conditions,
                &oracle,
                &templates,
                ResponseMode::Batched,
                RetryPolicy::default(),
                &GenerateOptions::default(),
            )?;
            let source = ConditionsSource::Matrix { conditions: conditions.clone(), matrix };
            let det = DetectorConfig::new(
                DetectorArch::Fused(vlcfusion::fusion::FusionVariant::Vlc),
                store.manifest.spec.n_classes,
                conditions.len(),
            );
            let tc = TrainConfig { epochs, seed, ..TrainConfig::default() };
            let outcome = train(&store, &splits, det, &source, &tc)?;
            let seen = evaluate_detector(&store, &splits.test_seen, &outcome.params, &source, &tc.decode)?;
            let unseen = evaluate_detector(&store, &splits.test_unseen, &outcome.params, &source, &tc.decode)?;
            println!(
                "flip {flip} seed {seed}: seen mAP@.5 {:.4}, unseen mAP@.5 {:.4}",
                seen.map_50, unseen.map_50
            );
            csv.push_str(&format!("{flip},{seed},{:.6},{:.6}\n", seen.map_50, unseen.map_50));
            seen_acc += seen.map_50;
            unseen_acc += unseen.map_50;
        }
        seen_means.push(seen_acc / seeds.len() as f64);
        unseen_means.push(unseen_acc / seeds.len() as f64);
    }

    let csv_path = ctx.out_dir.join("ablate_backend.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    let groups: Vec<String> = flips.iter().map(|f| format!("flip {f}")).collect();
    let svg = plot::grouped_bar_chart(
        "Detection quality vs condition noise",
        "mAP@.5",
        &groups,
        &[("seen".into(), seen_means), ("unseen".into(), unseen_means)],
    );
    let svg_path = ctx.out_dir.join("ablate_backend.svg");
    write_atomic(&svg_path, svg.as_bytes())?;
    ctx.write_run_manifest("ablate-backend", &[csv_path, svg_path])?;
    Ok(())
}
