use serde_json::{json, Map, Value};
use zsl_core::analysis::classifier_variance_profile;
use zsl_core::cv::{class_wise_folds, gzsl_folds, reports_to_csv, staged_grid_search, CvObjective};
use zsl_core::data::validate_split;
use zsl_core::gzsl::{calibrated_harmonic_mean, suc_curve};
use zsl_core::pipeline::{
    exemplar_quality, gzsl_scores, train_method, zsl_metrics, zsl_scores, Method, ModelEnvelope, TrainedModel,
    ZslMetric,
};
use zsl_core::report::{write_atomic, write_json};
use zsl_core::synth::{generate, write_dataset, SynthConfig};
use zsl_core::ZslError;

use crate::config::{Config, CvConfig, DataConfig, EvalConfig, Grid, Loaded, MethodConfig, TrainTest};
use crate::{CliError, RunArgs, SynthArgs};

type Outcome = Result<Value, CliError>;

const SYNC_MODEL: &str = "sync_model.json";
const EXEM_MODEL: &str = "exem_model.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Sync,
    Exem,
}

impl Family {
    fn admits(self, m: Method) -> bool {
        match self {
            Family::Sync => !m.uses_exemplars(),
            Family::Exem => m.uses_exemplars(),
        }
    }

    fn default_method(self) -> Method {
        match self {
            Family::Sync => Method::parse("sync-ovo").unwrap(),
            Family::Exem => Method::parse("exem-1nn").unwrap(),
        }
    }
}

fn model_file(m: Method) -> &'static str {
    if m.uses_exemplars() {
        EXEM_MODEL
    } else {
        SYNC_MODEL
    }
}

struct Run {
    cfg: Config,
    data: Loaded,
    seed: u64,
}

fn setup(args: &RunArgs) -> Result<Run, CliError> {
    let cfg = Config::load(&args.config)?;
    let data = Loaded::read(&cfg.data)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    Ok(Run { cfg, data, seed })
}

/// `--metric` and `--k` are only meaningful for some commands.
fn reject_unused(args: &RunArgs, command: &str, metric: bool, k: bool) -> Result<(), CliError> {
    let bad = match (args.metric.is_some() && !metric, args.k.is_some() && !k) {
        (true, _) => Some("--metric"),
        (_, true) => Some("--k"),
        _ => None,
    };
    match bad {
        Some(flag) => Err(ZslError::Config(format!("{flag} is not used by {command}")).into()),
        None => Ok(()),
    }
}

fn chosen_method(args: &RunArgs, cfg: &Config) -> Result<Method, CliError> {
    let name = args.method.clone().unwrap_or_else(|| cfg.method.full_name());
    Ok(Method::parse(&name)?)
}

fn check_converged(model: &TrainedModel<f64>, strict: bool, what: &str) -> Result<bool, CliError> {
    let ok = model.converged();
    if !ok {
        if strict {
            return Err(CliError::Strict(what.to_string()));
        }
        eprintln!("warning: {what} did not converge");
    }
    Ok(ok)
}

fn fit(run: &Run, method: Method, strict: bool) -> Result<(TrainedModel<f64>, bool), CliError> {
    let model = train_method(method, &run.data.input(), &run.cfg.method.hypers, run.seed)?;
    let converged = check_converged(&model, strict, &method.name())?;
    Ok((model, converged))
}

fn summary(command: &str, method: Option<Method>, fields: Value) -> Value {
    let mut m = Map::new();
    m.insert("command".into(), json!(command));
    if let Some(method) = method {
        m.insert("method".into(), json!(method.name()));
    }
    if let Value::Object(rest) = fields {
        m.extend(rest);
    }
    Value::Object(m)
}

pub fn train(args: &RunArgs, family: Family) -> Outcome {
    let command = match family {
        Family::Sync => "train-sync",
        Family::Exem => "train-exem",
    };
    reject_unused(args, command, false, false)?;
    let run = setup(args)?;
    let method = match &args.method {
        Some(name) => {
            let m = Method::parse(name)?;
            if !family.admits(m) {
                return Err(ZslError::Config(format!("{command} cannot train {name}")).into());
            }
            m
        }
        None => Some(chosen_method(args, &run.cfg)?)
            .filter(|&m| family.admits(m))
            .unwrap_or(family.default_method()),
    };
    let (model, converged) = fit(&run, method, args.strict)?;
    let file = model_file(method);
    let envelope = ModelEnvelope {
        method: method.name(),
        hypers: run.cfg.method.hypers.clone(),
        seed: run.seed,
        split: run.data.train.split.clone(),
        id_map: run.data.train.id_map.clone(),
        model,
    };
    envelope.save(&args.out.join(file))?;
    Ok(summary(command, Some(method), json!({ "model_file": file, "converged": converged })))
}

pub fn predict(args: &RunArgs) -> Outcome {
    reject_unused(args, "predict", false, false)?;
    let run = setup(args)?;
    let method = chosen_method(args, &run.cfg)?;
    let path = args.out.join(model_file(method));
    let envelope = ModelEnvelope::<f64>::load(&path)?;
    let stored = Method::parse(&envelope.method)?;
    let model = match (stored, method) {
        (a, b) if a == b => envelope.model,
        // both nearest-exemplar rules share one trained predictor
        (Method::Exem(_), Method::Exem(metric)) => envelope.model.with_exemplar_metric(metric)?,
        _ => {
            return Err(ZslError::Config(format!(
                "{} holds a {} model, not {}",
                path.display(),
                envelope.method,
                method.name()
            ))
            .into())
        }
    };
    if envelope.split != run.data.test.split {
        return Err(ZslError::Data(format!("{} was trained on a different class split", path.display())).into());
    }
    let test = &run.data.test;
    let table = zsl_scores(&model, test)?;
    let rows: Vec<usize> = (0..test.len()).filter(|&i| !test.is_seen(test.labels[i])).collect();
    let labels = test.original_labels();
    let mut csv = String::from("row,label,predicted\n");
    for (&row, pred) in rows.iter().zip(table.argmax()) {
        csv.push_str(&format!("{row},{},{pred}\n", labels[row]));
    }
    write_atomic(&args.out.join("predictions.csv"), csv.as_bytes())?;
    let acc = zsl_metrics(&table, &[ZslMetric::PerClassAccuracy], &[], None)?[0].value;
    Ok(summary(
        "predict",
        Some(method),
        json!({ "per_class_accuracy": acc, "rows": rows.len(), "predictions": "predictions.csv" }),
    ))
}

pub fn eval_zsl(args: &RunArgs) -> Outcome {
    let run = setup(args)?;
    let method = chosen_method(args, &run.cfg)?;
    let metrics = match &args.metric {
        Some(m) => vec![ZslMetric::parse(m)?],
        None => run.cfg.eval.metrics.iter().map(|m| ZslMetric::parse(m)).collect::<Result<_, _>>()?,
    };
    let ks = args.k.map(|k| vec![k]).unwrap_or_else(|| run.cfg.eval.k_values.clone());
    let (model, converged) = fit(&run, method, args.strict)?;
    let table = zsl_scores(&model, &run.data.test)?;
    let records = zsl_metrics(&table, &metrics, &ks, run.data.test.hierarchy.as_ref())?;
    let report = json!({
        "method": method.name(),
        "hypers": run.cfg.method.hypers,
        "seed": run.seed,
        "converged": converged,
        "candidates": "unseen",
        "metrics": records,
    });
    write_json(&args.out.join("metrics.json"), &report)?;
    let flat: Map<String, Value> = records
        .iter()
        .map(|r| {
            let key = match r.k {
                Some(k) => format!("{}@{k}", r.metric),
                None => r.metric.clone(),
            };
            (key, json!(r.value))
        })
        .collect();
    Ok(summary("eval-zsl", Some(method), json!({ "metrics": flat, "converged": converged })))
}

pub fn eval_gzsl(args: &RunArgs) -> Outcome {
    reject_unused(args, "eval-gzsl", false, false)?;
    let run = setup(args)?;
    let method = chosen_method(args, &run.cfg)?;
    let (model, converged) = fit(&run, method, args.strict)?;
    let split = &run.data.test.split;
    let table = gzsl_scores(&model, &run.data.test)?;
    let curve = suc_curve(&table, split)?;
    write_atomic(&args.out.join("suc_curve.csv"), curve.to_csv().as_bytes())?;
    let uncalibrated = calibrated_harmonic_mean(&table, split, 0.0)?;
    let (_, best_gamma, best_h) = curve.best_harmonic();
    let calibrated = run
        .cfg
        .eval
        .gamma
        .map(|g| calibrated_harmonic_mean(&table, split, g).map(|r| json!({ "gamma": g, "result": r })))
        .transpose()?;
    let grid = run
        .cfg
        .eval
        .gammas
        .iter()
        .map(|&g| calibrated_harmonic_mean(&table, split, g).map(|r| json!({ "gamma": g, "result": r })))
        .collect::<Result<Vec<_>, _>>()?;
    let report = json!({
        "method": method.name(),
        "hypers": run.cfg.method.hypers,
        "seed": run.seed,
        "converged": converged,
        "ausuc": curve.ausuc,
        "critical_gammas": curve.critical_gammas.len(),
        "uncalibrated": uncalibrated,
        // γ picked on this very curve; an upper bound, not a tuned result
        "best_on_curve": { "gamma": best_gamma, "harmonic": best_h },
        "calibrated": calibrated,
        "gamma_grid": grid,
    });
    write_json(&args.out.join("metrics.json"), &report)?;
    let mut fields = json!({
        "ausuc": curve.ausuc,
        "harmonic_uncalibrated": uncalibrated.harmonic,
        "harmonic_best_on_curve": best_h,
        "converged": converged,
    });
    if let (Some(g), Some(c)) = (run.cfg.eval.gamma, &calibrated) {
        fields["gamma"] = json!(g);
        fields["harmonic_calibrated"] = c["result"]["harmonic"].clone();
    }
    Ok(summary("eval-gzsl", Some(method), fields))
}

pub fn suc_curve_cmd(args: &RunArgs) -> Outcome {
    reject_unused(args, "suc-curve", false, false)?;
    let run = setup(args)?;
    let method = chosen_method(args, &run.cfg)?;
    let (model, converged) = fit(&run, method, args.strict)?;
    let table = gzsl_scores(&model, &run.data.test)?;
    let curve = suc_curve(&table, &run.data.test.split)?;
    write_atomic(&args.out.join("suc_curve.csv"), curve.to_csv().as_bytes())?;
    Ok(summary(
        "suc-curve",
        Some(method),
        json!({ "ausuc": curve.ausuc, "points": curve.points.len(), "converged": converged }),
    ))
}

pub fn cv(args: &RunArgs) -> Outcome {
    reject_unused(args, "cv", true, false)?;
    let run = setup(args)?;
    let method = chosen_method(args, &run.cfg)?;
    let objective = match args.metric.as_deref().or(run.cfg.cv.objective.as_deref()) {
        Some(o) => CvObjective::parse(o)?,
        None => CvObjective::Accuracy,
    };
    let stages: Vec<Grid> = std::iter::once(&run.cfg.method.grid)
        .chain(&run.cfg.method.stages)
        .filter(|g| !g.is_empty())
        .cloned()
        .collect();
    if stages.is_empty() {
        return Err(ZslError::Config("cv needs a non-empty method.grid".into()).into());
    }
    let plan = match objective {
        CvObjective::Ausuc => gzsl_folds(&run.data.train, run.cfg.cv.folds, run.seed)?,
        _ => class_wise_folds(&run.data.train.split.seen, run.cfg.cv.folds, run.seed)?,
    };
    let reports = staged_grid_search(
        method,
        &run.data.input(),
        &run.cfg.method.hypers,
        &stages,
        &plan,
        objective,
        run.seed,
    )?;
    write_atomic(&args.out.join("cv_report.csv"), reports_to_csv(&reports).as_bytes())?;
    let last = reports.last().expect("at least one stage");
    let leakage: usize = reports.iter().map(|r| r.leakage_violations).sum();
    let checks: usize = reports.iter().map(|r| r.leakage_checks).sum();
    let warnings: Vec<&String> = reports.iter().flat_map(|r| r.cells.iter().flat_map(|c| &c.warnings)).collect();
    let best = json!({
        "method": method.name(),
        "objective": objective.name(),
        "folds": plan.folds,
        "seed": run.seed,
        "best_hypers": last.best_hypers,
        "score": last.cells[last.best].score,
        "gamma_star": last.gamma_star,
        "leakage_checks": checks,
        "leakage_violations": leakage,
        "warnings": warnings,
    });
    write_json(&args.out.join("cv_best.json"), &best)?;
    if args.strict && !warnings.is_empty() {
        return Err(CliError::Strict(format!("{} grid warnings, first: {}", warnings.len(), warnings[0])));
    }
    Ok(summary(
        "cv",
        Some(method),
        json!({
            "objective": objective.name(),
            "best_hypers": last.best_hypers,
            "score": last.cells[last.best].score,
            "gamma_star": last.gamma_star,
            "leakage_violations": leakage,
        }),
    ))
}

pub fn analyze(args: &RunArgs) -> Outcome {
    reject_unused(args, "analyze", false, false)?;
    let run = setup(args)?;
    let method = chosen_method(args, &run.cfg)?;
    let (model, converged) = fit(&run, method, args.strict)?;
    let quality = if method.uses_exemplars() {
        Some(exemplar_quality(&model, &run.data.test, &run.data.semantics)?)
    } else {
        None
    };
    let variance = model
        .classifiers(&run.data.train.split.seen)
        .map(|w| w.and_then(|w| classifier_variance_profile(w.view(), 0.95)))
        .transpose()?;
    let report = json!({
        "method": method.name(),
        "hypers": run.cfg.method.hypers,
        "seed": run.seed,
        "converged": converged,
        "train_split": validate_split(&run.data.train)?,
        "test_split": validate_split(&run.data.test)?,
        "exemplar_quality": quality,
        "classifier_variance": variance,
    });
    write_json(&args.out.join("analysis.json"), &report)?;
    let mut fields = json!({ "converged": converged, "analysis": "analysis.json" });
    if let Some(q) = quality {
        fields["correlation_predicted"] = json!(q.correlation_predicted);
        fields["correlation_semantic"] = json!(q.correlation_semantic);
    }
    if let Some(v) = &variance {
        fields["variance_components_percent"] = json!(v.percent);
    }
    Ok(summary("analyze", Some(method), fields))
}

pub fn synth_data(args: &SynthArgs) -> Outcome {
    let mut synth = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ZslError::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| ZslError::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    synth.seed = args.seed;
    let data = generate(&synth)?;
    write_dataset(&data, &args.out)?;
    write_json(&args.out.join("synth.json"), &synth)?;
    write_json(&args.out.join("config.json"), &fixture_config(synth.seed))?;
    Ok(summary(
        "synth-data",
        None,
        json!({
            "train_rows": data.train.len(),
            "test_rows": data.test.len(),
            "seen": synth.seen,
            "unseen": synth.unseen,
            "config": "config.json",
        }),
    ))
}

/// Config for the generated files, with paths relative to the config itself.
fn fixture_config(seed: u64) -> Config {
    let pair = |a: &str, b: &str| TrainTest {
        train: a.into(),
        test: b.into(),
    };
    let mut grid = Grid::new();
    grid.insert("svr_lambda".into(), vec![100.0, 10000.0]);
    grid.insert("bandwidth".into(), vec![1.0, 4.0]);
    Config {
        data: DataConfig {
            features: pair("train.zsfm", "test.zsfm"),
            labels: pair("train_labels.txt", "test_labels.txt"),
            attributes: "attributes.csv".into(),
            secondary_attributes: None,
            split: "split.json".into(),
            hierarchy: None,
        },
        method: MethodConfig {
            grid,
            ..MethodConfig::default()
        },
        eval: EvalConfig {
            metrics: vec!["per-class-accuracy".into(), "per-sample-accuracy".into(), "flat-hit".into()],
            k_values: vec![1, 2],
            ..EvalConfig::default()
        },
        cv: CvConfig::default(),
        seed,
    }
}

