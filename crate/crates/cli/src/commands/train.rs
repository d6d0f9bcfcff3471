use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use avnet_core::data::{
    generate_synthetic_with, split_folds, AugmentedDataset, Dataset, DatasetManifest,
    FundusSample,
};
use avnet_core::model::AvNet;
use avnet_core::train::{
    self, evaluate, Checkpoint, EvalOptions, IterRecord, TrainConfig, TrainObserver,
};

use super::{ensure_dir, load_manifest_samples, timestamp};
use crate::config::RunConfig;
use crate::{CliError, TrainArgs};

struct RunObserver {
    csv: BufWriter<File>,
    run_dir: PathBuf,
    echo_every: usize,
}

impl TrainObserver for RunObserver {
    fn on_iteration(&mut self, rec: &IterRecord) -> avnet_core::Result<()> {
        train::write_csv_record(&mut self.csv, rec)?;
        if self.echo_every > 0 && rec.iteration.is_multiple_of(self.echo_every) {
            eprintln!(
                "iter {:6}  epoch {:4}  lr {:.4e}  loss {:.6}",
                rec.iteration, rec.epoch, rec.lr, rec.loss
            );
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, iteration: usize, ckpt: &Checkpoint) -> avnet_core::Result<()> {
        train::save(ckpt, &self.run_dir.join(format!("checkpoint_{iteration:06}.avnet")))
    }
}

enum TrainData {
    Synthetic(Vec<FundusSample>),
    Augmented(AugmentedDataset),
}

impl TrainData {
    fn as_dataset(&self) -> &dyn Dataset {
        match self {
            TrainData::Synthetic(v) => v,
            TrainData::Augmented(a) => a,
        }
    }
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    // -- configuration (usage errors) --
    let mut cfg = RunConfig::load(&args.config).map_err(CliError::usage)?;
    if let Some(iters) = args.iters {
        cfg.iterations = iters;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(count) = args.synthetic {
        let mut sy = cfg.synthetic.unwrap_or_default();
        sy.count = count;
        if let Some(size) = args.synthetic_size {
            sy.size = size;
        }
        cfg.synthetic = Some(sy);
    }
    cfg.validate().map_err(CliError::usage)?;
    let schedule = cfg.schedule.resolve(cfg.iterations).map_err(CliError::usage)?;

    // -- data (usage errors) --
    let (data, val_samples, split_seed, fold, val_label) = prepare_data(&cfg, &args)?;

    // -- run directory --
    let run_name = args
        .run_name
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.short_hash(), timestamp()));
    let run_dir = cfg.out_dir.join(run_name);
    ensure_dir(&run_dir)?;
    let config_json = cfg.to_json();
    std::fs::write(run_dir.join("config.json"), &config_json)
        .map_err(|e| CliError::Runtime(format!("cannot write config snapshot: {e}")))?;

    // -- training (runtime errors) --
    let mut model = AvNet::<f32>::build(&cfg.model, cfg.seed).map_err(CliError::usage)?;
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        iterations: cfg.iterations,
        schedule,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
        checkpoint_every: cfg.checkpoint_every,
        split_seed,
        run_config_json: Some(config_json.clone()),
    };
    let csv_file = File::create(run_dir.join("train_log.csv"))
        .map_err(|e| CliError::Runtime(format!("cannot create training log: {e}")))?;
    let mut observer = RunObserver {
        csv: BufWriter::new(csv_file),
        run_dir: run_dir.clone(),
        echo_every: (cfg.iterations / 20).max(1),
    };
    train::write_csv_header(&mut observer.csv).map_err(CliError::runtime)?;
    let result = train::train(&mut model, data.as_dataset(), &train_cfg, &mut observer)
        .map_err(CliError::runtime)?;
    observer.csv.flush().map_err(CliError::runtime)?;
    train::save(&result.checkpoint, &run_dir.join("checkpoint_final.avnet"))
        .map_err(CliError::runtime)?;

    // -- final metrics --
    let eval_opts = EvalOptions {
        padding: cfg.eval_padding,
        report_recall: false,
    };
    match evaluate(&model, &val_samples, &eval_opts) {
        Ok((_, report)) => {
            let artifact = serde_json::json!({
                "split": val_label,
                "fold": fold,
                "report": report,
                "config": serde_json::from_str::<serde_json::Value>(&config_json).unwrap(),
            });
            std::fs::write(
                run_dir.join("metrics_val.json"),
                serde_json::to_string_pretty(&artifact).unwrap(),
            )
            .map_err(|e| CliError::Runtime(format!("cannot write metrics: {e}")))?;
            eprintln!(
                "final {} metrics: accuracy {:.4} tpr_at {:.4} tpr_ve {:.4}",
                val_label, report.accuracy, report.tpr_at, report.tpr_ve
            );
        }
        Err(e) => eprintln!("final metrics skipped: {e}"),
    }

    if let Some(last) = result.records.last() {
        println!("trained {} iterations, final loss {}", result.records.len(), last.loss);
    } else {
        println!("trained 0 iterations (checkpoint equals initialization)");
    }
    println!("artifacts in {}", run_dir.display());
    Ok(())
}

type PreparedData = (TrainData, Vec<FundusSample>, u64, Option<usize>, String);

fn prepare_data(cfg: &RunConfig, args: &TrainArgs) -> Result<PreparedData, CliError> {
    if let Some(sy) = &cfg.synthetic {
        let sources: Vec<FundusSample> = (0..sy.count)
            .map(|i| generate_synthetic_with(sy.size, cfg.seed.wrapping_add(i as u64), &cfg.class_weights))
            .collect();
        // Synthetic smoke runs train and report on the same samples.
        return Ok((
            TrainData::Synthetic(sources.clone()),
            sources,
            cfg.seed,
            None,
            "train".into(),
        ));
    }
    let manifest_path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| CliError::Usage("config needs either a manifest or synthetic data".into()))?;
    let manifest = DatasetManifest::load(manifest_path).map_err(CliError::usage)?;
    let ids = manifest.trainable_ids();
    let fold_index = args.fold.unwrap_or(0);
    let folds = split_folds(&ids, cfg.folds.min(ids.len().max(2)), manifest.seed)
        .map_err(CliError::usage)?;
    let (train_ids, val_ids) = folds
        .get(fold_index)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "fold {fold_index} out of range for {} folds",
                folds.len()
            ))
        })?
        .clone();
    let train_sources =
        load_manifest_samples(manifest_path, &train_ids, &cfg.class_weights, cfg.color_match)?;
    let val_samples =
        load_manifest_samples(manifest_path, &val_ids, &cfg.class_weights, cfg.color_match)?;
    let mut augment = cfg.augment.clone();
    augment.seed = manifest.seed;
    Ok((
        TrainData::Augmented(AugmentedDataset::new(train_sources, augment)),
        val_samples,
        manifest.seed,
        Some(fold_index),
        "val".into(),
    ))
}
