//! Command implementations: thin orchestration over the core library.

use std::fs;
use std::path::{Path, PathBuf};

use tempofuse_core::config::RunConfig;
use tempofuse_core::error::{Error, Result};
use tempofuse_core::explain;
use tempofuse_core::gradcheck;
use tempofuse_core::metrics::{render_report, write_report_csv, MetricsAccumulator};
use tempofuse_core::model::{argmax_labels, infer_forward, ModelParams};
use tempofuse_core::params::ParamSet;
use tempofuse_core::pipeline::{
    baseline_filter, io, kfold, preprocess_record, resample, synth_generate, zscore, Dataset,
};
use tempofuse_core::postprocess::{extract_events, merge_short, Event};
use tempofuse_core::tensor::{Shape, Tape, Tensor};
use tempofuse_core::train;

fn dataset_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&cfg.out_dir).join("dataset.tfds"))
}

fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| Path::new(&cfg.out_dir).join("checkpoints").join("best.tfcp"))
}

fn load_model(path: &Path) -> Result<ModelParams> {
    Ok(ModelParams::from_set(ParamSet::load(path)?))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let records = synth_generate(&cfg.synth_config())?;
    fs::create_dir_all(&cfg.data_dir)?;
    for rec in &records {
        let base = Path::new(&cfg.data_dir).join(&rec.record_id);
        io::write_signal_csv(rec, base.with_extension("signal.csv"))?;
        let events = extract_events(rec.labels.as_ref().expect("synth emits labels"));
        io::write_events_csv(&events, base.with_extension("events.csv"))?;
    }
    println!("wrote {} records to {}", records.len(), cfg.data_dir);
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let mut signal_files: Vec<PathBuf> = fs::read_dir(&cfg.data_dir)
        .map_err(|e| Error::Data(format!("cannot read data_dir {}: {e}", cfg.data_dir)))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".signal.csv"))
        .collect();
    signal_files.sort();
    if signal_files.is_empty() {
        return Err(Error::Data(format!("no *.signal.csv files in {}", cfg.data_dir)));
    }

    let num_classes = cfg.model_num_classes;
    let mut examples = Vec::new();
    for sig_path in &signal_files {
        let mut rec = io::read_signal_csv(sig_path)?;
        let ann_path =
            PathBuf::from(sig_path.to_string_lossy().replace(".signal.csv", ".events.csv"));
        let events = io::read_events_csv(&ann_path, true)?;
        let labels = io::labels_from_annotations(&events, rec.samples.len())?;
        if let Some(bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::Data(format!(
                "{}: class id {bad} out of range for model.num_classes = {num_classes}",
                ann_path.display()
            )));
        }
        rec.labels = Some(labels);
        let highpass = cfg.pipeline_filter.then_some(cfg.pipeline_highpass_hz);
        examples.extend(preprocess_record(
            &rec,
            cfg.pipeline_target_fs,
            highpass,
            cfg.pipeline_window_len,
            cfg.pipeline_window_stride,
        )?);
    }

    let ds = Dataset { window_len: cfg.pipeline_window_len, num_classes, examples };
    let out = dataset_path(cfg, out);
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    io::save_dataset(&ds, &out)?;
    println!(
        "wrote {} windows of {} samples ({} classes) to {}",
        ds.examples.len(),
        ds.window_len,
        ds.num_classes,
        out.display()
    );
    Ok(())
}

fn fold_split(cfg: &RunConfig, ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let plan = kfold(ds.examples.len(), cfg.train_folds, cfg.seed)?;
    if cfg.train_fold >= cfg.train_folds {
        return Err(Error::Config(format!(
            "train.fold {} out of range for {} folds",
            cfg.train_fold, cfg.train_folds
        )));
    }
    Ok((plan.train_indices(cfg.train_fold), plan.fold_indices(cfg.train_fold)))
}

pub fn train(cfg: &RunConfig, dataset: Option<&Path>) -> Result<()> {
    let ds = io::load_dataset(dataset_path(cfg, dataset))?;
    let (train_idx, val_idx) = fold_split(cfg, &ds)?;
    let model_cfg = cfg.model_config();
    let tcfg = cfg.train_config();

    let ckpt_dir = Path::new(&cfg.out_dir).join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;

    println!(
        "training on {} windows ({} validation), {} epochs, batch {}",
        train_idx.len(),
        val_idx.len(),
        tcfg.epochs,
        tcfg.batch_size
    );
    let outcome = train::train(&ds, &train_idx, &val_idx, &model_cfg, &tcfg, |log, params| {
        println!(
            "epoch {:>3}  loss {:.6}  val_duration_f1 {:.6}  lr {:.3e}",
            log.epoch, log.train_loss, log.val_duration_f1, log.lr
        );
        let path = ckpt_dir.join(format!("epoch-{:03}.tfcp", log.epoch));
        if let Err(e) = params.set().save(&path) {
            eprintln!("warning: failed to write {}: {e}", path.display());
        }
    })?;

    outcome.params.set().save(ckpt_dir.join("final.tfcp"))?;
    outcome.best_params.set().save(ckpt_dir.join("best.tfcp"))?;
    if let Some(best) = outcome.best_epoch {
        println!("best checkpoint: epoch {best}");
    }

    let report = train::evaluate(
        &ds,
        &val_idx,
        &outcome.best_params,
        &model_cfg,
        tcfg.min_len,
        tcfg.iou_thresh,
    )?;
    let report_path = Path::new(&cfg.out_dir).join("val_report.csv");
    let mut bytes = Vec::new();
    write_report_csv(&report, &mut bytes)?;
    fs::write(&report_path, bytes)?;
    print!("{}", render_report(&report));
    println!("wrote {}", report_path.display());
    Ok(())
}

pub fn eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
    split: &str,
    oracle_labels: bool,
) -> Result<()> {
    let ds = io::load_dataset(dataset_path(cfg, dataset))?;
    let (train_idx, val_idx) = fold_split(cfg, &ds)?;
    let indices = match split {
        "train" => train_idx,
        "val" => val_idx,
        "all" => (0..ds.examples.len()).collect(),
        other => {
            return Err(Error::Config(format!("unknown split {other:?} (train|val|all)")));
        }
    };

    let report = if oracle_labels {
        // ground truth fed back as the prediction stream
        let mut acc = MetricsAccumulator::new(cfg.metrics_iou_thresh);
        for &i in &indices {
            let truth = extract_events(&ds.examples[i].labels);
            acc.add_window(&truth, &truth);
        }
        acc.finish()
    } else {
        let params = load_model(&checkpoint_path(cfg, checkpoint))?;
        train::evaluate(
            &ds,
            &indices,
            &params,
            &cfg.model_config(),
            cfg.post_min_len,
            cfg.metrics_iou_thresh,
        )?
    };

    fs::create_dir_all(&cfg.out_dir)?;
    let report_path = Path::new(&cfg.out_dir).join("eval_report.csv");
    let mut bytes = Vec::new();
    write_report_csv(&report, &mut bytes)?;
    fs::write(&report_path, bytes)?;
    print!("{}", render_report(&report));
    println!("wrote {}", report_path.display());
    Ok(())
}

pub fn infer(cfg: &RunConfig, checkpoint: Option<&Path>, signal: &Path, stride: Option<usize>) -> Result<()> {
    let params = load_model(&checkpoint_path(cfg, checkpoint))?;
    let model_cfg = cfg.model_config();
    let len = cfg.pipeline_window_len;
    if len != model_cfg.input_len {
        return Err(Error::Config(format!(
            "pipeline.window_len {} != model.input_len {}",
            len, model_cfg.input_len
        )));
    }
    let stride = stride.unwrap_or(len);
    if stride == 0 {
        return Err(Error::Config("stride must be ≥ 1".into()));
    }

    let rec = io::read_signal_csv(signal)?;
    let rec = resample(&rec, cfg.pipeline_target_fs)?;
    let rec = if cfg.pipeline_filter {
        let (filtered, short) = baseline_filter(&rec, cfg.pipeline_highpass_hz)?;
        if short {
            eprintln!("warning: record shorter than the 3 s filter warm-up; filtered anyway");
        }
        filtered
    } else {
        rec
    };
    if rec.samples.len() < len {
        return Err(Error::Data(format!(
            "record {} has {} samples, one window needs {len}",
            rec.record_id,
            rec.samples.len()
        )));
    }

    // sliding-window deployment: each window is labeled and postprocessed
    // independently; events carry absolute sample offsets
    let mut events: Vec<Event> = Vec::new();
    let mut start = 0;
    let mut windows = 0;
    while start + len <= rec.samples.len() {
        let x = Tensor::new(Shape::d2(len, 1), zscore(&rec.samples[start..start + len]))?;
        let mut tape = Tape::new();
        let acts = infer_forward(&mut tape, &x, &params, &model_cfg)?;
        let labels: Vec<u16> = argmax_labels(&acts.probs).iter().map(|&c| c as u16).collect();
        for e in merge_short(&extract_events(&labels), cfg.post_min_len)? {
            events.push(Event::new(e.onset + start, e.offset + start, e.class_id));
        }
        start += stride;
        windows += 1;
    }

    fs::create_dir_all(&cfg.out_dir)?;
    let out = Path::new(&cfg.out_dir).join(format!("{}.events.csv", rec.record_id));
    io::write_events_csv(&events, &out)?;
    println!("labeled {windows} windows (stride {stride}); wrote {} events to {}", events.len(), out.display());
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let model_cfg = tempofuse_core::model::ModelConfig::reduced();
    let report = gradcheck::run(&model_cfg, cfg.seed)?;
    for e in &report.entries {
        println!(
            "{:<22} coord {:>6}  analytic {:+.6e}  fd {:+.6e}  rel_err {:.3e}",
            e.path, e.coord, e.analytic, e.fd, e.rel_err
        );
    }
    println!("max relative error: {:.6e}", report.max_rel_err);
    if !report.passed(1e-4) {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {:.6e} ≥ 1e-4",
            report.max_rel_err
        )));
    }
    Ok(())
}

pub fn gradcam(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
    window: usize,
    class: Option<u16>,
    span: Option<&str>,
) -> Result<()> {
    let ds = io::load_dataset(dataset_path(cfg, dataset))?;
    if window >= ds.examples.len() {
        return Err(Error::Config(format!(
            "window {window} out of range ({} windows)",
            ds.examples.len()
        )));
    }
    let params = load_model(&checkpoint_path(cfg, checkpoint))?;
    let model_cfg = cfg.model_config();
    let ex = &ds.examples[window];

    let target_class = class.unwrap_or_else(|| {
        let mut counts = vec![0usize; ds.num_classes];
        for &l in &ex.labels {
            counts[l as usize] += 1;
        }
        counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &n)| n)
            .map(|(c, _)| c as u16)
            .unwrap_or(0)
    });
    let target_span = match span {
        Some(s) => {
            let (a, b) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("span must be start:end, got {s:?}")))?;
            let a = a.parse::<usize>().map_err(|_| Error::Config(format!("bad span start {a:?}")))?;
            let b = b.parse::<usize>().map_err(|_| Error::Config(format!("bad span end {b:?}")))?;
            (a, b)
        }
        None => extract_events(&ex.labels)
            .iter()
            .filter(|e| e.class_id == target_class)
            .max_by_key(|e| e.len())
            .map(|e| (e.onset, e.offset))
            .ok_or_else(|| {
                Error::Config(format!("window {window} has no events of class {target_class}"))
            })?,
    };

    let x = Tensor::new(Shape::d2(ds.window_len, 1), ex.x.clone())?;
    let map = explain::gradcam(&x, &params, &model_cfg, target_class, target_span)?;

    fs::create_dir_all(&cfg.out_dir)?;
    let out = Path::new(&cfg.out_dir).join(format!("heatmap-w{window}.csv"));
    let mut bytes = Vec::new();
    explain::write_heatmap_csv(&map, &mut bytes)?;
    fs::write(&out, bytes)?;
    println!(
        "wrote {} (class {}, span [{}, {}))",
        out.display(),
        target_class,
        target_span.0,
        target_span.1
    );
    Ok(())
}
