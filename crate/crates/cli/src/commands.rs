use std::fs;
use std::io::Write;
use std::path::Path;

use car_core::data::{
    dataset_stats, read_jsonl, tokenize, write_jsonl, ConditionAssignment, ConditionSchema,
    CorruptionSpec, Dataset, DialogueSample, SplitRatios, Synth, SynthConfig,
};
use car_core::diagnostics::full_gradient_suite;
use car_core::model::{load_checkpoint, CarModel, Variant, Vocab};
use car_core::train::{
    evaluate, pca_project, run_ablation, train as fit, AblationConfig, TrainOutputs,
};
use serde_json::json;

use crate::settings::Settings;
use crate::CliError;

const SPLITS: [&str; 3] = ["train", "valid", "test"];
const SYNTH_FILE: &str = "synth_config.json";
const CANDIDATES_FILE: &str = "candidates.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn corruption(settings: &Settings, slots: usize) -> Result<CorruptionSpec, CliError> {
    let g = &settings.gen;
    Ok(match (g.p_wrong, g.p_unknown) {
        (Some(w), Some(u)) => CorruptionSpec::new(w, u)?,
        (None, None) => CorruptionSpec::calibrated(g.defect_rate, slots)?,
        _ => return Err(CliError::usage("set both p_wrong and p_unknown, or neither")),
    })
}

pub fn gen_data(settings: &Settings) -> Result<(), CliError> {
    let config = match &settings.gen.synth_config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            SynthConfig::from_json(&text)?
        }
        None => car_core::data::default_synth_config(),
    };
    let synth = Synth::new(config)?;
    let spec = corruption(settings, synth.schema.len())?;
    let data = synth.generate_dataset(settings.gen.size, SplitRatios::default(), &spec, settings.gen.seed)?;

    let dir = &settings.data_dir;
    create_dir(dir)?;
    for (name, split) in SPLITS.iter().zip([&data.train, &data.valid, &data.test]) {
        write_jsonl(split, dir.join(format!("{name}.jsonl")))?;
    }
    write_file(&dir.join(SYNTH_FILE), synth.config.to_json()? + "\n")?;
    write_file(&dir.join(CANDIDATES_FILE), pretty(&synth.config.candidates))?;
    let all: Vec<DialogueSample> = data.all().cloned().collect();
    let overall = dataset_stats(&all, &data.candidates);
    let stats = json!({
        "corruption": spec,
        "expected_defect_rate": spec.expected_defect_rate(synth.schema.len()),
        "defect_rate": overall.defective_rate,
        "overall": overall,
        "train": dataset_stats(&data.train, &data.candidates),
        "valid": dataset_stats(&data.valid, &data.candidates),
        "test": dataset_stats(&data.test, &data.candidates),
    });
    write_file(&dir.join("stats.json"), pretty(&stats))?;
    println!(
        "wrote {} / {} / {} samples to {} (defect rate {:.4})",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        dir.display(),
        overall.defective_rate
    );
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<(Dataset, ConditionSchema), CliError> {
    let synth_path = dir.join(SYNTH_FILE);
    let text = fs::read_to_string(&synth_path).map_err(|e| CliError::io(&synth_path, e))?;
    let config = SynthConfig::from_json(&text)?;
    let candidates = config.candidates.iter().map(|c| tokenize(&c.text)).collect();
    let read = |name: &str| read_jsonl(dir.join(format!("{name}.jsonl")));
    let data = Dataset {
        train: read("train")?,
        valid: read("valid")?,
        test: read("test")?,
        candidates,
    };
    Ok((data, config.schema))
}

fn split<'a>(data: &'a Dataset, name: &str) -> Result<&'a [DialogueSample], CliError> {
    match name {
        "train" => Ok(&data.train),
        "valid" => Ok(&data.valid),
        "test" => Ok(&data.test),
        other => Err(CliError::usage(format!("unknown split {other:?} (train, valid, test)"))),
    }
}

pub fn train(settings: &Settings, variant: &str, out: &Path) -> Result<(), CliError> {
    let variant: Variant = variant.parse()?;
    let (data, schema) = load_dataset(&settings.data_dir)?;
    let vocab = Vocab::build(&data.train);
    let mut cfg = settings.model.clone();
    cfg.vocab_size = vocab.len();
    cfg.candidate_count = data.candidates.len();
    let mut model = CarModel::new(cfg, variant, schema, vocab, settings.train.seed)?;
    create_dir(out)?;
    write_file(&out.join("settings.toml"), settings.to_toml())?;
    let outputs = TrainOutputs {
        log: Some(out.join("log.jsonl")),
        checkpoint: Some(out.to_path_buf()),
    };
    let report = fit(&mut model, &data.train, &data.valid, &data.candidates, &settings.train, &outputs)?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  train acc {:.4}  valid acc {:.4}  valid bleu1 {:.4}",
            e.epoch, e.train_loss, e.train_accuracy, e.val_accuracy, e.val_bleu1
        );
    }
    if report.epochs.is_empty() {
        println!("no epochs run; saved the initial parameters");
    } else {
        println!("best epoch {} (score {:.4})", report.best_epoch, report.best_score);
    }
    println!("checkpoint written to {}", out.display());
    Ok(())
}

pub fn eval(
    settings: &Settings,
    checkpoint: &Path,
    split_name: &str,
    report: Option<&Path>,
    predictions: Option<&Path>,
) -> Result<(), CliError> {
    let (data, _) = load_dataset(&settings.data_dir)?;
    let samples = split(&data, split_name)?;
    let model = load_checkpoint(checkpoint)?;
    let ev = evaluate(&model, samples, &data.candidates, settings.train.brevity_penalty)?;
    let m = &ev.metrics;
    println!("variant            {}", model.variant.name());
    println!("samples            {}", m.samples);
    println!("accuracy           {:.4}", m.accuracy);
    for (n, b) in m.bleu.iter().enumerate() {
        println!("bleu-{}             {:.4}", n + 1, b);
    }
    println!("defective slots    {}", m.defective_slots);
    println!("revision accuracy  {:.4}", m.revision_accuracy);
    println!("revision damage    {:.4}", m.revision_damage);
    if let Some(p) = report {
        write_file(p, pretty(m))?;
    }
    if let Some(p) = predictions {
        let mut out = Vec::new();
        for r in &ev.records {
            serde_json::to_writer(&mut out, r).expect("serialisable");
            out.push(b'\n');
        }
        write_file(p, out)?;
    }
    Ok(())
}

pub fn ablation(settings: &Settings, report_path: &Path, pca: Option<&Path>) -> Result<(), CliError> {
    let (data, schema) = load_dataset(&settings.data_dir)?;
    let cfg = AblationConfig {
        model: settings.model.clone(),
        train: settings.train.clone(),
        seeds: settings.ablation.seeds.clone(),
    };
    let pca_seed = cfg.seeds.first().copied();
    let mut vectors: Vec<(Variant, u64, Vec<f64>)> = Vec::new();
    let mut failure = None;
    let report = run_ablation(&data, &schema, &cfg, |seed, model, run| {
        println!(
            "seed {seed} {:<3}  best epoch {:>3}  acc {:.4}  defective acc {:.4}  revision {:.4}  damage {:.4}",
            run.variant.name(),
            run.best_epoch,
            run.overall.accuracy,
            run.defective.accuracy,
            run.overall.revision_accuracy,
            run.overall.revision_damage
        );
        if pca.is_some() && Some(seed) == pca_seed {
            for s in &data.test {
                match model.predict(s) {
                    Ok(p) => vectors.push((run.variant, s.id, p.conditions_vector)),
                    Err(e) => failure = Some(e),
                }
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    report.write(report_path)?;
    println!("{:<8}{:>10}{:>14}{:>10}{:>10}{:>10}", "variant", "accuracy", "defective", "bleu1", "revision", "damage");
    for s in &report.summary {
        println!(
            "{:<8}{:>10.4}{:>14.4}{:>10.4}{:>10.4}{:>10.4}",
            s.variant.name(),
            s.accuracy,
            s.defective_accuracy,
            s.bleu1,
            s.revision_accuracy,
            s.revision_damage
        );
    }
    println!("report written to {}", report_path.display());
    if let Some(path) = pca {
        write_pca(path, &data.test, &vectors, settings.ablation.pca_components)?;
        println!("projection written to {}", path.display());
    }
    Ok(())
}

/// Projects the conditions vectors of both variants into one shared basis.
fn write_pca(
    path: &Path,
    test: &[DialogueSample],
    vectors: &[(Variant, u64, Vec<f64>)],
    k: usize,
) -> Result<(), CliError> {
    let flat: Vec<Vec<f64>> = vectors.iter().map(|v| v.2.clone()).collect();
    let pca = pca_project(&flat, k)?;
    let defective = |id: u64| test.iter().find(|s| s.id == id).is_some_and(|s| s.is_defective());
    let mut out = String::from("variant,id,defective");
    for c in 0..k {
        out.push_str(&format!(",pc{}", c + 1));
    }
    out.push('\n');
    for ((variant, id, _), coords) in vectors.iter().zip(&pca.coords) {
        out.push_str(&format!("{},{id},{}", variant.name(), defective(*id)));
        for x in coords {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    write_file(path, out)
}

pub fn grad_check(seed: u64) -> Result<(), CliError> {
    let rows = full_gradient_suite(seed)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<24}{:>9}{:>14}{:>11}  result", "check", "coords", "max rel err", "tolerance");
    for r in &rows {
        let _ = writeln!(
            stdout,
            "{:<24}{:>9}{:>14.3e}{:>11.0e}  {}",
            r.name,
            r.checked,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "pass" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::failure(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn describe(schema: &ConditionSchema, a: &ConditionAssignment, mark: Option<&ConditionAssignment>) -> String {
    schema
        .conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let v = &c.values[a.get(i)];
            match mark {
                Some(m) if m.get(i) != a.get(i) => format!("{}=*{v}", c.name),
                _ => format!("{}={v}", c.name),
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn revise(
    settings: &Settings,
    checkpoint: &Path,
    split_name: &str,
    ids: Option<&[u64]>,
    limit: usize,
) -> Result<(), CliError> {
    let (data, _) = load_dataset(&settings.data_dir)?;
    let samples = split(&data, split_name)?;
    let model = load_checkpoint(checkpoint)?;
    let chosen: Vec<&DialogueSample> = match ids {
        Some(ids) => ids
            .iter()
            .map(|id| {
                samples
                    .iter()
                    .find(|s| s.id == *id)
                    .ok_or_else(|| CliError::usage(format!("no sample {id} in the {split_name} split")))
            })
            .collect::<Result<_, _>>()?,
        None => samples.iter().filter(|s| s.is_defective()).take(limit).collect(),
    };
    let schema = &model.schema;
    let text = |i: usize| data.candidates.get(i).map(|t| t.join(" ")).unwrap_or_default();
    println!("(* marks a value that differs from the true one)");
    for s in chosen {
        let p = model.predict(s)?;
        let truth = s.true_conditions.as_ref();
        println!("sample {}", s.id);
        println!("  question:             {}", s.question.join(" "));
        println!("  defective conditions: {}", describe(schema, &s.observed_conditions, truth));
        println!("  revised conditions:   {}", describe(schema, &p.conditions, truth));
        match truth {
            Some(t) => println!("  true conditions:      {}", describe(schema, t, None)),
            None => println!("  true conditions:      (unknown)"),
        }
        println!("  prediction:           [{}] {}", p.answer, text(p.answer));
        match s.gold_label {
            Some(g) => println!("  gold answer:          [{g}] {}", text(g)),
            None => println!("  gold answer:          (unknown)"),
        }
    }
    Ok(())
}
