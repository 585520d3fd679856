//! Subcommand implementations. Every command that has an output directory
//! writes `config.txt` there with the fully resolved settings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rikd::checkpoint::Checkpoint;
use rikd::corpus::{gen_synthetic, parse_conll, write_conll, Corpus};
use rikd::distill::Teacher;
use rikd::driver::{rikd, CorruptedTeacher, HeldOut, RikdOptions};
use rikd::eval::{entity_f1, summarize_run};
use rikd::runlog::{LogRecord, RunLog};
use rikd::tagger::{train_source as fit_source, Tagger};
use rikd::{PolicyNet, TaggerModel};
use serde_json::json;

use crate::config::RunConfig;

pub const EVAL_SCHEMA: &str = "rikd-eval v1";

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let Some(dir) = cfg.out.clone() else { bail!("--out is required") };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.txt"), cfg.to_document()).context("writing config.txt")?;
    Ok(dir)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("missing {what} path"))
}

fn read_corpus(cfg: &RunConfig, path: &Path, labeled: bool) -> Result<Corpus> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (corpus, _) = parse_conll(&text, &cfg.scheme(), labeled).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(!corpus.is_empty(), "{} contains no sentences", path.display());
    Ok(corpus)
}

fn load_tagger(path: &Path) -> Result<TaggerModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Tagger::from_checkpoint(&ckpt)?)
}

fn check_classes(cfg: &RunConfig, model: &TaggerModel) -> Result<()> {
    let tags = cfg.scheme().num_tags();
    ensure!(
        model.num_classes() == tags,
        "model has {} classes but the scheme {:?} has {tags} tags",
        model.num_classes(),
        cfg.entity_types
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let s = &cfg.synth;
    ensure!(
        cfg.synth_source_dev + cfg.synth_source_test < s.source_sentences,
        "source dev + test must leave training sentences"
    );
    ensure!(cfg.synth_target_test < s.target_sentences, "target test must leave unlabeled sentences");
    ensure!(
        s.scheme().entity_types() == cfg.entity_types.as_slice(),
        "entity_types must be {:?} for {} synthetic types",
        s.scheme().entity_types(),
        s.entity_types
    );
    let (source, target) = gen_synthetic(s, cfg.seed)?;
    let n_train = s.source_sentences - cfg.synth_source_dev - cfg.synth_source_test;
    let n_dev = n_train + cfg.synth_source_dev;
    let n_unl = s.target_sentences - cfg.synth_target_test;
    let files = [
        ("source_train.conll", source.slice(0, n_train)),
        ("source_dev.conll", source.slice(n_train, n_dev)),
        ("source_test.conll", source.slice(n_dev, s.source_sentences)),
        ("target_train.conll", target.slice(0, n_unl).strip_labels()?),
        ("target_test.conll", target.slice(n_unl, s.target_sentences)),
    ];
    let mut counts = serde_json::Map::new();
    for (name, corpus) in &files {
        fs::write(dir.join(name), write_conll(corpus)).with_context(|| format!("writing {name}"))?;
        counts.insert(
            (*name).into(),
            json!({
                "sentences": corpus.len(),
                "tokens": corpus.token_count(),
                "entities": corpus.entity_count(),
                "labeled": corpus.sentences().first().is_some_and(|x| x.labels.is_some()),
            }),
        );
    }
    let generator: serde_json::Map<_, _> = cfg
        .entries()
        .into_iter()
        .filter(|(k, _)| k.starts_with("synth."))
        .map(|(k, v)| (k.to_owned(), v.into()))
        .collect();
    let manifest = json!({ "schema": "rikd-synth v1", "seed": cfg.seed, "generator": generator, "files": counts });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

pub fn train_source(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let train = read_corpus(cfg, required(&cfg.source_train, "source_train")?, true)?;
    let dev = read_corpus(cfg, required(&cfg.source_dev, "source_dev")?, true)?;
    let base = Tagger::<f64>::init_base(&cfg.tagger_config(cfg.scheme().num_tags()), cfg.seed)?;
    let (model, log) = fit_source(&base, &train, &dev, &cfg.source_optimizer())?;
    model.to_checkpoint().save(&dir.join("model.ckpt"))?;

    let mut jsonl = String::new();
    for (i, loss) in log.losses.iter().enumerate() {
        writeln!(jsonl, "{}", json!({ "step": i + 1, "loss": loss }))?;
    }
    let mut csv = String::from("step,dev_f1\n");
    for e in &log.evals {
        writeln!(jsonl, "{}", json!({ "step": e.step, "dev_f1": e.f1 }))?;
        writeln!(csv, "{},{}", e.step, e.f1)?;
    }
    fs::write(dir.join("train_log.jsonl"), jsonl)?;
    fs::write(dir.join("summary.csv"), csv)?;
    match (log.best_step, log.best_f1) {
        (Some(step), Some(f1)) => println!("best dev F1 {f1:.4} at step {step}"),
        _ => println!("no training steps; wrote the initial model"),
    }
    Ok(())
}

/// `distill` (one iteration) and `rikd` (K iterations, optionally resumed).
pub fn distill(cfg: &RunConfig, resume_from: Option<usize>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let rcfg = cfg.rikd_config();
    rcfg.validate()?;
    let unlabeled = read_corpus(cfg, required(&cfg.target_unlabeled, "target_unlabeled")?, false)?;
    let dev = cfg.source_dev.as_deref().map(|p| read_corpus(cfg, p, true)).transpose()?;
    let test = cfg.target_test.as_deref().map(|p| read_corpus(cfg, p, true)).transpose()?;

    let m0 = load_tagger(required(&cfg.teacher, "teacher")?)?;
    check_classes(cfg, &m0)?;
    let base = Tagger::init_base(&m0.config, m0.config.seed)?;
    let fresh_policy = PolicyNet::init(&rcfg.policy, m0.num_classes(), m0.config.d_h)?;

    let (teacher, policy, start, mut log) = match resume_from {
        None | Some(0) => (m0, fresh_policy.clone(), 1, RunLog::default()),
        Some(k) => {
            let teacher = load_tagger(&dir.join(format!("model_k{k}.ckpt")))?;
            let policy = if rcfg.policy_reset_per_iteration {
                fresh_policy.clone()
            } else {
                let ckpt = Checkpoint::load(&dir.join(format!("policy_k{k}.ckpt")))?;
                PolicyNet::from_checkpoint(&ckpt, Some(rcfg.policy.d_s()))?
            };
            let previous = fs::read_to_string(dir.join("run_log.jsonl")).context("reading run_log.jsonl to resume")?;
            let mut log = RunLog::from_jsonl(&previous)?;
            log.records.retain(|r| match r {
                LogRecord::Step(s) => s.k <= k,
                LogRecord::Iteration(s) => s.k <= k,
            });
            (teacher, policy, k + 1, log)
        }
    };
    let noisy;
    let first_teacher: &dyn Teacher<f64> = if cfg.teacher_noise > 0.0 && start == 1 {
        noisy = CorruptedTeacher::new(&teacher, cfg.teacher_noise, cfg.seed);
        &noisy
    } else {
        &teacher
    };
    let held = HeldOut { select: dev.as_ref(), report: test.as_ref() };
    let options = RikdOptions { start_iteration: start, checkpoint_dir: Some(dir.clone()) };
    let out = rikd(first_teacher, &base, &policy, &unlabeled, &rcfg, held, &options)?;
    out.model.to_checkpoint().save(&dir.join("model.ckpt"))?;
    log.extend(out.log);
    fs::write(dir.join("run_log.jsonl"), log.to_jsonl())?;

    let summary = summarize_run(&log);
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from("k,discard_ratio,pooled_discard_ratio,selection_steps,selected_step,eval_f1,reward_mean\n");
    for (it, logged) in summary.iterations.iter().zip(log.iterations()) {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            it.k,
            opt(it.discard_ratio),
            opt(it.pooled_discard_ratio),
            it.selection_steps,
            logged.selected_step,
            opt(it.eval_f1),
            opt(it.reward.as_ref().map(|r| r.mean)),
        )?;
        println!(
            "iteration {}: selected step {}, discard {}, target F1 {}",
            it.k,
            logged.selected_step,
            it.discard_ratio.map_or("-".into(), |d| format!("{d:.3}")),
            it.eval_f1.map_or("-".into(), |f| format!("{f:.4}")),
        );
    }
    fs::write(dir.join("summary.csv"), csv)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, model_path: &Path, test_path: &Path) -> Result<()> {
    let model = load_tagger(model_path)?;
    check_classes(cfg, &model)?;
    let test = read_corpus(cfg, test_path, true)?;
    let result = entity_f1(&test, &model.predict_corpus(&test))?;
    let mut record = serde_json::to_value(&result)?;
    let obj = record.as_object_mut().expect("eval result is an object");
    obj.insert("schema".into(), EVAL_SCHEMA.into());
    obj.insert("model".into(), model_path.display().to_string().into());
    obj.insert("test".into(), test_path.display().to_string().into());
    obj.insert("sentences".into(), test.len().into());
    let line = serde_json::to_string(&record)?;
    if cfg.out.is_some() {
        let dir = out_dir(cfg)?;
        fs::write(dir.join("eval.json"), format!("{line}\n"))?;
    }
    println!("{line}");
    Ok(())
}
