//! The five subcommands. Every command prints one effective-config line
//! with all resolved values, so a run is reproducible from its output.

use std::fs;
use std::path::{Path, PathBuf};

use opfusion_core::{
    average_fusion, dempster_shafer_fuse, distance_stratified_recall, evaluate_scores,
    gradcheck_model, load_checkpoint, pr_curve, read_dataset, samples_from_windows,
    save_checkpoint, score_samples, simulate_dataset, train, write_dataset, DistanceBandReport,
    FieldConfig, InitMode, Metrics, Model, ModelSpec, PRCurve, TrainConfig, TrainOutcome,
    TrainSample, Variant, FD_TOLERANCE,
};

use crate::config::{resolve, FileCfg};
use crate::{
    parse_init, parse_variant, CliError, CompareArgs, EvalArgs, GenDataArgs, GradcheckArgs,
    TrainArgs,
};

const DISTANCE_BANDS: [(f64, f64); 3] = [(0.0, 5.0), (5.0, 10.0), (10.0, 15.0)];
const DS_UNCERTAINTY_VISUAL: f64 = 0.35;
const DS_UNCERTAINTY_SEISMIC: f64 = 0.15;

fn init_str(mode: InitMode) -> &'static str {
    match mode {
        InitMode::Random => "random",
        InitMode::FromCheckpoints => "from-checkpoints",
    }
}

fn file_cfg(path: &Option<String>, allowed: &[&str]) -> Result<FileCfg, CliError> {
    match path {
        Some(p) => FileCfg::load(p, allowed),
        None => Ok(FileCfg::empty()),
    }
}

/// Variant parsed out of a config file line rather than a flag.
fn file_variant(file: &FileCfg, key: &str) -> Result<Option<Variant>, CliError> {
    match file.get::<String>(key)? {
        None => Ok(None),
        Some(s) => parse_variant(&s).map(Some).map_err(CliError::usage),
    }
}

fn file_init(file: &FileCfg, key: &str) -> Result<Option<InitMode>, CliError> {
    match file.get::<String>(key)? {
        None => Ok(None),
        Some(s) => parse_init(&s).map(Some).map_err(CliError::usage),
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let file = file_cfg(&args.config, &["train", "test", "seed"])?;
    let n_train = resolve(args.train, file.get("train")?, 2000);
    let n_test = resolve(args.test, file.get("test")?, 500);
    let seed = resolve(args.seed, file.get("seed")?, 7);
    println!(
        "effective-config: command=gen-data out={} train={n_train} test={n_test} seed={seed}",
        args.out
    );
    let cfg = FieldConfig { seed, ..FieldConfig::default() };
    let data = simulate_dataset(&cfg, n_train, n_test)?;
    write_dataset(Path::new(&args.out), &cfg, &data)?;
    let pos = |ws: &[opfusion_core::SampleWindow]| ws.iter().filter(|w| w.label == 1).count();
    println!(
        "wrote {} train ({} positive) and {} test ({} positive) windows to {}",
        data.train.len(),
        pos(&data.train),
        data.test.len(),
        pos(&data.test),
        args.out
    );
    Ok(())
}

struct LoadedData {
    samples_train: Vec<TrainSample>,
    samples_test: Vec<TrainSample>,
    field: FieldConfig,
}

fn load_samples(dir: &str) -> Result<LoadedData, CliError> {
    let (field, data) = read_dataset(Path::new(dir))?;
    let h = field.crop_px;
    Ok(LoadedData {
        samples_train: samples_from_windows(&data.train, h, h),
        samples_test: samples_from_windows(&data.test, h, h),
        field,
    })
}

fn check_dims(model: &Model, field: &FieldConfig) -> Result<(), CliError> {
    let spec = &model.spec;
    if spec.visual_h != field.crop_px
        || spec.visual_w != field.crop_px
        || spec.seismic_len != field.trace_len()
    {
        return Err(CliError::verification(format!(
            "checkpoint expects {}x{} visual and {}-sample seismic, dataset provides {}x{} and {}",
            spec.visual_h,
            spec.visual_w,
            spec.seismic_len,
            field.crop_px,
            field.crop_px,
            field.trace_len()
        )));
    }
    Ok(())
}

fn write_history(path: &Path, outcome: &TrainOutcome) -> Result<(), CliError> {
    let mut csv = String::from("epoch,train_loss,val_f1\n");
    for e in &outcome.history {
        csv.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_f1));
    }
    fs::write(path, csv).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn train_cmd(args: TrainArgs) -> Result<(), CliError> {
    let allowed = [
        "model", "epochs", "lr", "l1", "batch", "seed", "init", "visual-init", "seismic-init",
    ];
    let file = file_cfg(&args.config, &allowed)?;
    let d = TrainConfig::default();
    let variant = resolve(args.model, file_variant(&file, "model")?, Variant::OpBilinear);
    let epochs = resolve(args.epochs, file.get("epochs")?, d.epochs);
    let lr = resolve(args.lr, file.get("lr")?, d.lr);
    let l1 = resolve(args.l1, file.get("l1")?, d.lambda);
    let batch = resolve(args.batch, file.get("batch")?, d.batch_size);
    let seed = resolve(args.seed, file.get("seed")?, d.seed);
    let init = resolve(args.init, file_init(&file, "init")?, InitMode::Random);
    let visual_init = args.visual_init.or(file.get("visual-init")?);
    let seismic_init = args.seismic_init.or(file.get("seismic-init")?);
    println!(
        "effective-config: command=train data={} out={} model={} epochs={epochs} lr={lr} l1={l1} \
         batch={batch} seed={seed} init={} visual-init={} seismic-init={}",
        args.data,
        args.out,
        variant.as_str(),
        init_str(init),
        visual_init.as_deref().unwrap_or("none"),
        seismic_init.as_deref().unwrap_or("none"),
    );

    let donors = match init {
        InitMode::Random => None,
        InitMode::FromCheckpoints => match (&visual_init, &seismic_init) {
            (Some(v), Some(s)) => Some((v.clone(), s.clone())),
            _ => {
                return Err(CliError::usage(
                    "--init from-checkpoints requires --visual-init and --seismic-init",
                ))
            }
        },
    };

    let data = load_samples(&args.data)?;
    let mut spec = ModelSpec::standard(variant);
    spec.visual_h = data.field.crop_px;
    spec.visual_w = data.field.crop_px;
    spec.seismic_len = data.field.trace_len();
    spec.seed = seed;
    spec.lambda = l1;
    let mut model = Model::build(spec)?;
    if let Some((vp, sp)) = &donors {
        for (path, want) in [(vp, Variant::VisualOnly), (sp, Variant::SeismicOnly)] {
            let (donor, _) = load_checkpoint(Path::new(path))?;
            if donor.spec.variant != want {
                return Err(CliError::usage(format!(
                    "{path} holds a {} checkpoint, expected {}",
                    donor.spec.variant.as_str(),
                    want.as_str()
                )));
            }
            let adopted = model.adopt_params(&donor);
            eprintln!("adopted {adopted} tensors from {path}");
        }
    }
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        lambda: l1,
        seed,
        init,
        ..d
    };
    let outcome = train(&mut model, &data.samples_train, &cfg)?;

    fs::create_dir_all(&args.out).map_err(|e| CliError::io(format!("{}: {e}", args.out)))?;
    let ckpt = PathBuf::from(&args.out).join(format!("{}.ckpt", variant.as_str()));
    let history = PathBuf::from(&args.out).join(format!("{}-history.csv", variant.as_str()));
    save_checkpoint(&model, outcome.best_epoch, &ckpt)?;
    write_history(&history, &outcome)?;
    println!(
        "trained {}: best epoch {} val-F1 {:.4}; wrote {} and {}",
        variant.as_str(),
        outcome.best_epoch,
        outcome.best_val_f1,
        ckpt.display(),
        history.display()
    );
    Ok(())
}

struct Evaluated {
    metrics: Metrics,
    curve: PRCurve,
    bands: DistanceBandReport,
}

fn evaluate_split(
    scores: &[f64],
    samples: &[TrainSample],
    threshold: f64,
) -> Result<Evaluated, CliError> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label as u8).collect();
    let predictions: Vec<u8> = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    let distances: Vec<f64> = samples.iter().map(|s| s.distance as f64).collect();
    Ok(Evaluated {
        metrics: evaluate_scores(scores, &labels, threshold)?,
        curve: pr_curve(scores, &labels)?,
        bands: distance_stratified_recall(&predictions, &labels, &distances, &DISTANCE_BANDS)?,
    })
}

pub fn eval_cmd(args: EvalArgs) -> Result<(), CliError> {
    let file = file_cfg(&args.config, &["threshold"])?;
    let threshold = resolve(args.threshold, file.get("threshold")?, 0.5);
    println!(
        "effective-config: command=eval data={} ckpt={} out={} threshold={threshold}",
        args.data, args.ckpt, args.out
    );
    let data = load_samples(&args.data)?;
    let (model, _) = load_checkpoint(Path::new(&args.ckpt))?;
    check_dims(&model, &data.field)?;
    let name = model.spec.variant.as_str().to_string();
    let scores = score_samples(&model, &data.samples_test)?;
    let ev = evaluate_split(&scores, &data.samples_test, threshold)?;
    println!(
        "{name}: recall {:.4} precision {:.4} f1 {:.4} (tp {} fp {} fn {} tn {})",
        ev.metrics.recall,
        ev.metrics.precision,
        ev.metrics.f1,
        ev.metrics.tp,
        ev.metrics.fp,
        ev.metrics.fn_,
        ev.metrics.tn
    );
    let files = opfusion_core::export_report(
        &[(name.clone(), ev.metrics)],
        &[(name.clone(), ev.curve)],
        &[(name, ev.bands)],
        Path::new(&args.out),
    )?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

pub fn compare_cmd(args: CompareArgs) -> Result<(), CliError> {
    let allowed = [
        "epochs",
        "lr",
        "l1",
        "batch",
        "seed",
        "threshold",
        "ds-uncertainty-visual",
        "ds-uncertainty-seismic",
    ];
    let file = file_cfg(&args.config, &allowed)?;
    let d = TrainConfig::default();
    let epochs = resolve(args.epochs, file.get("epochs")?, d.epochs);
    let lr = resolve(args.lr, file.get("lr")?, d.lr);
    let l1 = resolve(args.l1, file.get("l1")?, d.lambda);
    let batch = resolve(args.batch, file.get("batch")?, d.batch_size);
    let seed = resolve(args.seed, file.get("seed")?, d.seed);
    let threshold = resolve(args.threshold, file.get("threshold")?, 0.5);
    let u_visual = resolve(
        args.ds_uncertainty_visual,
        file.get("ds-uncertainty-visual")?,
        DS_UNCERTAINTY_VISUAL,
    );
    let u_seismic = resolve(
        args.ds_uncertainty_seismic,
        file.get("ds-uncertainty-seismic")?,
        DS_UNCERTAINTY_SEISMIC,
    );
    println!(
        "effective-config: command=compare data={} out={} epochs={epochs} lr={lr} l1={l1} \
         batch={batch} seed={seed} threshold={threshold} ds-uncertainty-visual={u_visual} \
         ds-uncertainty-seismic={u_seismic}",
        args.data, args.out
    );

    let data = load_samples(&args.data)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        lambda: l1,
        seed,
        init: InitMode::Random,
        ..d
    };
    let mut rows: Vec<(String, Evaluated)> = Vec::new();
    let mut conf_visual: Vec<f64> = Vec::new();
    let mut conf_seismic: Vec<f64> = Vec::new();
    for variant in Variant::ALL {
        let mut spec = ModelSpec::standard(variant);
        spec.visual_h = data.field.crop_px;
        spec.visual_w = data.field.crop_px;
        spec.seismic_len = data.field.trace_len();
        spec.seed = seed;
        spec.lambda = l1;
        let mut model = Model::build(spec)?;
        let outcome = train(&mut model, &data.samples_train, &cfg)?;
        eprintln!(
            "trained {}: best epoch {} val-F1 {:.4}",
            variant.as_str(),
            outcome.best_epoch,
            outcome.best_val_f1
        );
        let scores = score_samples(&model, &data.samples_test)?;
        if variant == Variant::VisualOnly {
            conf_visual = scores.clone();
        }
        if variant == Variant::SeismicOnly {
            conf_seismic = scores.clone();
        }
        rows.push((
            variant.as_str().to_string(),
            evaluate_split(&scores, &data.samples_test, threshold)?,
        ));
    }
    let mut avg = Vec::with_capacity(conf_visual.len());
    let mut ds = Vec::with_capacity(conf_visual.len());
    for (&cv, &cs) in conf_visual.iter().zip(&conf_seismic) {
        avg.push(average_fusion(cv, cs)?);
        ds.push(dempster_shafer_fuse(cv, u_visual, cs, u_seismic)?.score);
    }
    rows.push((
        "average".to_string(),
        evaluate_split(&avg, &data.samples_test, threshold)?,
    ));
    rows.push((
        "dempster-shafer".to_string(),
        evaluate_split(&ds, &data.samples_test, threshold)?,
    ));

    println!("{:<20} {:>7} {:>9} {:>7}", "model", "recall", "precision", "f1");
    for (name, ev) in &rows {
        println!(
            "{:<20} {:>7.4} {:>9.4} {:>7.4}",
            name, ev.metrics.recall, ev.metrics.precision, ev.metrics.f1
        );
    }
    let metrics: Vec<(String, Metrics)> =
        rows.iter().map(|(n, e)| (n.clone(), e.metrics)).collect();
    let curves: Vec<(String, PRCurve)> =
        rows.iter().map(|(n, e)| (n.clone(), e.curve.clone())).collect();
    let bands: Vec<(String, DistanceBandReport)> =
        rows.iter().map(|(n, e)| (n.clone(), e.bands.clone())).collect();
    let files = opfusion_core::export_report(&metrics, &curves, &bands, Path::new(&args.out))?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

pub fn gradcheck_cmd(args: GradcheckArgs) -> Result<(), CliError> {
    let file = file_cfg(&args.config, &["seed", "model"])?;
    let seed = resolve(args.seed, file.get("seed")?, 7);
    let only = args.model.or(file_variant(&file, "model")?);
    println!(
        "effective-config: command=gradcheck seed={seed} model={}",
        only.map_or("all", |v| v.as_str())
    );
    let variants: Vec<Variant> = match only {
        Some(v) => vec![v],
        None => Variant::ALL.to_vec(),
    };
    let mut worst = 0.0f64;
    for variant in variants {
        let spec = ModelSpec::tiny(variant);
        for check in gradcheck_model(&spec, 3, seed)? {
            println!(
                "{:<20} {:<24} max rel err {:.3e} over {} coords",
                variant.as_str(),
                check.name,
                check.max_rel_err,
                check.coords
            );
            worst = worst.max(check.max_rel_err);
        }
    }
    if worst > FD_TOLERANCE {
        return Err(CliError::verification(format!(
            "worst relative error {worst:.3e} exceeds {FD_TOLERANCE:.0e}"
        )));
    }
    println!("gradcheck ok: worst relative error {worst:.3e} within {FD_TOLERANCE:.0e}");
    Ok(())
}
