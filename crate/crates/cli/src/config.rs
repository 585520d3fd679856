//! Flat `key = value` run configuration with named presets.
//!
//! Resolution order: preset defaults, then the config file, then `--set`
//! overrides, then dedicated flags. Every key has a default and unknown keys
//! are rejected.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rikd::corpus::{LabelScheme, SynthConfig, TokenTransform};
use rikd::driver::{EmptySelection, RewardMode, RikdConfig, Strategy};
use rikd::rng::derive_seed;
use rikd::selector::PolicyConfig;
use rikd::tagger::{LrSchedule, OptimizerConfig, TaggerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    DeskScale,
    PaperScale,
}

impl FromStr for Preset {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk-scale" => Ok(Preset::DeskScale),
            "paper-scale" => Ok(Preset::PaperScale),
            _ => bail!("unknown preset {s:?} (expected desk-scale or paper-scale)"),
        }
    }
}

impl Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::DeskScale => "desk-scale",
            Preset::PaperScale => "paper-scale",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    Rl,
    Confidence,
    Agreement,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "rl" => Ok(Mode::Rl),
            "confidence" => Ok(Mode::Confidence),
            "agreement" => Ok(Mode::Agreement),
            _ => bail!("unknown mode {s:?} (expected full, rl, confidence or agreement)"),
        }
    }
}

impl Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Rl => "rl",
            Mode::Confidence => "confidence",
            Mode::Agreement => "agreement",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out: Option<PathBuf>,

    pub source_train: Option<PathBuf>,
    pub source_dev: Option<PathBuf>,
    pub target_unlabeled: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    /// Entity types of the BIO scheme, in tag-index order.
    pub entity_types: Vec<String>,

    pub tagger: TaggerConfig,
    pub source: OptimizerConfig,
    pub rikd: RikdConfig,
    pub mode: Mode,
    pub keep_ratio: f64,
    /// Fraction of sentences whose teacher output is replaced by noise.
    pub teacher_noise: f64,
    pub synth: SynthConfig,
    pub synth_source_dev: usize,
    pub synth_source_test: usize,
    pub synth_target_test: usize,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self {
            preset,
            seed: 0,
            out: None,
            source_train: None,
            source_dev: None,
            target_unlabeled: None,
            target_test: None,
            teacher: None,
            entity_types: ["PER", "LOC", "ORG", "MISC"].map(String::from).to_vec(),
            tagger: TaggerConfig::desk_scale(0),
            source: OptimizerConfig { lr: 0.5, epochs: 5, batch_size: 32, eval_every: 100, ..OptimizerConfig::default() },
            rikd: RikdConfig {
                iterations: 3,
                warmup_steps: 200,
                reinforced_steps: 800,
                batch_size: 32,
                student_lr: 20.0,
                eval_every: 100,
                policy: PolicyConfig { d_u: 16, d_z: 60, d_hidden: 64, lr: 0.01, ..PolicyConfig::default() },
                ..RikdConfig::default()
            },
            mode: Mode::Rl,
            keep_ratio: 0.6,
            teacher_noise: 0.0,
            synth: SynthConfig::default(),
            synth_source_dev: 500,
            synth_source_test: 500,
            synth_target_test: 1000,
        };
        if preset == Preset::PaperScale {
            c.tagger.d_h = 768;
            c.tagger.freeze_embeddings = true;
            c.source.batch_size = 64;
            c.source.epochs = 5;
            c.source.eval_every = 100;
            c.rikd.batch_size = 64;
            c.rikd.warmup_steps = 500;
            c.rikd.eval_every = 100;
            c.rikd.policy.lr = 0.01;
            c.rikd.policy.d_u = 50;
            c.rikd.policy.d_z = 252;
            c.rikd.policy.d_hidden = 256;
        }
        c
    }

    /// Reads a config document. A `preset` key in the file selects the
    /// defaults unless `preset_flag` is given.
    pub fn load(path: Option<&Path>, preset_flag: Option<Preset>, overrides: &[String]) -> Result<Self> {
        let mut pairs = Vec::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            pairs = parse_document(&text)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override {o:?} is not key=value"))?;
            pairs.push((0, k.trim().to_owned(), v.trim().to_owned()));
        }
        let file_preset = pairs.iter().rev().find(|(_, k, _)| k == "preset").map(|(_, _, v)| v.parse()).transpose()?;
        let mut cfg = Self::preset(preset_flag.or(file_preset).unwrap_or(Preset::DeskScale));
        for (line, k, v) in pairs {
            if k == "preset" {
                continue;
            }
            cfg.set(&k, &v).with_context(|| if line > 0 { format!("config line {line}") } else { "--set".into() })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: FromStr>(key: &str, value: &str) -> Result<V>
        where
            V::Err: Display,
        {
            value.parse().map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        let v = value;
        match key {
            "seed" => self.seed = p(key, v)?,
            "out" => self.out = path(v),
            "source_train" => self.source_train = path(v),
            "source_dev" => self.source_dev = path(v),
            "target_unlabeled" => self.target_unlabeled = path(v),
            "target_test" => self.target_test = path(v),
            "teacher" => self.teacher = path(v),
            "entity_types" => self.entity_types = v.split(',').map(|t| t.trim().to_owned()).collect(),
            "tagger.d_emb" => self.tagger.d_emb = p(key, v)?,
            "tagger.window" => self.tagger.window = p(key, v)?,
            "tagger.d_h" => self.tagger.d_h = p(key, v)?,
            "tagger.vocab_buckets" => self.tagger.vocab_buckets = p(key, v)?,
            "tagger.freeze_embeddings" => self.tagger.freeze_embeddings = p(key, v)?,
            "source.lr" => self.source.lr = p(key, v)?,
            "source.schedule" => self.source.schedule = schedule(v)?,
            "source.epochs" => self.source.epochs = p(key, v)?,
            "source.batch_size" => self.source.batch_size = p(key, v)?,
            "source.eval_every" => self.source.eval_every = p(key, v)?,
            "rikd.iterations" => self.rikd.iterations = p(key, v)?,
            "rikd.warmup_steps" => self.rikd.warmup_steps = p(key, v)?,
            "rikd.reinforced_steps" => self.rikd.reinforced_steps = p(key, v)?,
            "rikd.batch_size" => self.rikd.batch_size = p(key, v)?,
            "rikd.student_lr" => self.rikd.student_lr = p(key, v)?,
            "rikd.student_schedule" => self.rikd.student_schedule = schedule(v)?,
            "rikd.eval_every" => self.rikd.eval_every = p(key, v)?,
            "rikd.recalibrate_every" => self.rikd.recalibrate_every = p(key, v)?,
            "rikd.reward_mode" => {
                self.rikd.reward_mode = match v {
                    "same_batch" => RewardMode::SameBatch,
                    "paper_literal" => RewardMode::PaperLiteral,
                    _ => bail!("reward_mode must be same_batch or paper_literal"),
                }
            }
            "rikd.empty_selection" => {
                self.rikd.empty_selection = match v {
                    "skip" => EmptySelection::Skip,
                    "keep_all" => EmptySelection::KeepAll,
                    _ => bail!("empty_selection must be skip or keep_all"),
                }
            }
            "rikd.policy_reset_per_iteration" => self.rikd.policy_reset_per_iteration = p(key, v)?,
            "rikd.mode" => self.mode = v.parse()?,
            "rikd.keep_ratio" => self.keep_ratio = p(key, v)?,
            "rikd.teacher_noise" => self.teacher_noise = p(key, v)?,
            "policy.d_u" => self.rikd.policy.d_u = p(key, v)?,
            "policy.d_z" => self.rikd.policy.d_z = p(key, v)?,
            "policy.d_hidden" => self.rikd.policy.d_hidden = p(key, v)?,
            "policy.lr" => self.rikd.policy.lr = p(key, v)?,
            "policy.standardize_scalars" => self.rikd.policy.standardize_scalars = p(key, v)?,
            "policy.freeze_semantic" => self.rikd.policy.freeze_semantic = p(key, v)?,
            "policy.init_keep_prob" => self.rikd.policy.init_keep_prob = p(key, v)?,
            "synth.entity_types" => self.synth.entity_types = p(key, v)?,
            "synth.vocab_size" => self.synth.vocab_size = p(key, v)?,
            "synth.lexicon_size" => self.synth.lexicon_size = p(key, v)?,
            "synth.cues_per_type" => self.synth.cues_per_type = p(key, v)?,
            "synth.ambiguous_pool" => self.synth.ambiguous_pool = p(key, v)?,
            "synth.ambiguous_rate" => self.synth.ambiguous_rate = p(key, v)?,
            "synth.cue_rate" => self.synth.cue_rate = p(key, v)?,
            "synth.entities_per_sentence" => self.synth.entities_per_sentence = list(key, v)?,
            "synth.entity_length" => self.synth.entity_length = list(key, v)?,
            "synth.min_len" => self.synth.min_len = p(key, v)?,
            "synth.max_len" => self.synth.max_len = p(key, v)?,
            "synth.source_sentences" => self.synth.source_sentences = p(key, v)?,
            "synth.target_sentences" => self.synth.target_sentences = p(key, v)?,
            "synth.transform" => self.synth.transform = transform(v)?,
            "synth.transform_fraction" => self.synth.transform_fraction = p(key, v)?,
            "synth.zipf_exponent" => self.synth.zipf_exponent = p(key, v)?,
            "synth.source_dev" => self.synth_source_dev = p(key, v)?,
            "synth.source_test" => self.synth_source_test = p(key, v)?,
            "synth.target_test" => self.synth_target_test = p(key, v)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Every key with its effective value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        fn path(p: &Option<PathBuf>) -> String {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        }
        fn list(v: &[f64]) -> String {
            v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        }
        let r = &self.rikd;
        let pc = &r.policy;
        let s = &self.synth;
        vec![
            ("preset", self.preset.to_string()),
            ("seed", self.seed.to_string()),
            ("out", path(&self.out)),
            ("source_train", path(&self.source_train)),
            ("source_dev", path(&self.source_dev)),
            ("target_unlabeled", path(&self.target_unlabeled)),
            ("target_test", path(&self.target_test)),
            ("teacher", path(&self.teacher)),
            ("entity_types", self.entity_types.join(",")),
            ("tagger.d_emb", self.tagger.d_emb.to_string()),
            ("tagger.window", self.tagger.window.to_string()),
            ("tagger.d_h", self.tagger.d_h.to_string()),
            ("tagger.vocab_buckets", self.tagger.vocab_buckets.to_string()),
            ("tagger.freeze_embeddings", self.tagger.freeze_embeddings.to_string()),
            ("source.lr", self.source.lr.to_string()),
            ("source.schedule", schedule_name(self.source.schedule).into()),
            ("source.epochs", self.source.epochs.to_string()),
            ("source.batch_size", self.source.batch_size.to_string()),
            ("source.eval_every", self.source.eval_every.to_string()),
            ("rikd.iterations", r.iterations.to_string()),
            ("rikd.warmup_steps", r.warmup_steps.to_string()),
            ("rikd.reinforced_steps", r.reinforced_steps.to_string()),
            ("rikd.batch_size", r.batch_size.to_string()),
            ("rikd.student_lr", r.student_lr.to_string()),
            ("rikd.student_schedule", schedule_name(r.student_schedule).into()),
            ("rikd.eval_every", r.eval_every.to_string()),
            ("rikd.recalibrate_every", r.recalibrate_every.to_string()),
            (
                "rikd.reward_mode",
                match r.reward_mode {
                    RewardMode::SameBatch => "same_batch",
                    RewardMode::PaperLiteral => "paper_literal",
                }
                .into(),
            ),
            (
                "rikd.empty_selection",
                match r.empty_selection {
                    EmptySelection::Skip => "skip",
                    EmptySelection::KeepAll => "keep_all",
                }
                .into(),
            ),
            ("rikd.policy_reset_per_iteration", r.policy_reset_per_iteration.to_string()),
            ("rikd.mode", self.mode.to_string()),
            ("rikd.keep_ratio", self.keep_ratio.to_string()),
            ("rikd.teacher_noise", self.teacher_noise.to_string()),
            ("policy.d_u", pc.d_u.to_string()),
            ("policy.d_z", pc.d_z.to_string()),
            ("policy.d_hidden", pc.d_hidden.to_string()),
            ("policy.lr", pc.lr.to_string()),
            ("policy.standardize_scalars", pc.standardize_scalars.to_string()),
            ("policy.freeze_semantic", pc.freeze_semantic.to_string()),
            ("policy.init_keep_prob", pc.init_keep_prob.to_string()),
            ("synth.entity_types", s.entity_types.to_string()),
            ("synth.vocab_size", s.vocab_size.to_string()),
            ("synth.lexicon_size", s.lexicon_size.to_string()),
            ("synth.cues_per_type", s.cues_per_type.to_string()),
            ("synth.ambiguous_pool", s.ambiguous_pool.to_string()),
            ("synth.ambiguous_rate", s.ambiguous_rate.to_string()),
            ("synth.cue_rate", s.cue_rate.to_string()),
            ("synth.entities_per_sentence", list(&s.entities_per_sentence)),
            ("synth.entity_length", list(&s.entity_length)),
            ("synth.min_len", s.min_len.to_string()),
            ("synth.max_len", s.max_len.to_string()),
            ("synth.source_sentences", s.source_sentences.to_string()),
            ("synth.target_sentences", s.target_sentences.to_string()),
            ("synth.transform", transform_name(&s.transform)),
            ("synth.transform_fraction", s.transform_fraction.to_string()),
            ("synth.zipf_exponent", s.zipf_exponent.to_string()),
            ("synth.source_dev", self.synth_source_dev.to_string()),
            ("synth.source_test", self.synth_source_test.to_string()),
            ("synth.target_test", self.synth_target_test.to_string()),
        ]
    }

    pub fn to_document(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn scheme(&self) -> LabelScheme {
        LabelScheme::new(&self.entity_types)
    }

    /// Tagger settings for a scheme with `num_classes` tags.
    pub fn tagger_config(&self, num_classes: usize) -> TaggerConfig {
        TaggerConfig { num_classes, seed: self.seed, ..self.tagger.clone() }
    }

    pub fn source_optimizer(&self) -> OptimizerConfig {
        OptimizerConfig { seed: derive_seed(self.seed, 1), ..self.source.clone() }
    }

    /// Driver settings for the configured mode.
    pub fn rikd_config(&self) -> RikdConfig {
        let strategy = match self.mode {
            Mode::Full => Strategy::Full,
            Mode::Rl => Strategy::Reinforced,
            Mode::Confidence => Strategy::Confidence { keep_ratio: self.keep_ratio },
            Mode::Agreement => Strategy::Agreement { keep_ratio: self.keep_ratio },
        };
        let mut r = self.rikd.clone();
        r.strategy = strategy;
        r.seed = derive_seed(self.seed, 2);
        r.policy.seed = derive_seed(self.seed, 3);
        r
    }
}

fn parse_document(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        out.push((i + 1, k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

fn schedule(v: &str) -> Result<LrSchedule> {
    match v {
        "constant" => Ok(LrSchedule::Constant),
        "linear" => Ok(LrSchedule::Linear),
        _ => bail!("schedule must be constant or linear"),
    }
}

fn schedule_name(s: LrSchedule) -> &'static str {
    match s {
        LrSchedule::Constant => "constant",
        LrSchedule::Linear => "linear",
    }
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| x.trim().parse().map_err(|e| anyhow!("bad value {x:?} in {key}: {e}"))).collect()
}

fn transform(v: &str) -> Result<TokenTransform> {
    match v.split_once(':') {
        Some(("suffix", s)) => Ok(TokenTransform::Suffix(s.to_owned())),
        Some(("rotate", n)) => Ok(TokenTransform::Rotate(n.parse().map_err(|e| anyhow!("bad rotation {n:?}: {e}"))?)),
        _ => bail!("transform must be suffix:<text> or rotate:<n>"),
    }
}

fn transform_name(t: &TokenTransform) -> String {
    match t {
        TokenTransform::Suffix(s) => format!("suffix:{s}"),
        TokenTransform::Rotate(n) => format!("rotate:{n}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_round_trips() {
        let mut c = RunConfig::preset(Preset::PaperScale);
        c.seed = 17;
        c.synth.transform = TokenTransform::Rotate(3);
        c.mode = Mode::Agreement;
        let doc = c.to_document();
        let dir = std::env::temp_dir().join(format!("rikd-cfg-{}", std::process::id()));
        std::fs::write(&dir, &doc).unwrap();
        let back = RunConfig::load(Some(&dir), None, &[]).unwrap();
        std::fs::remove_file(&dir).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = RunConfig::preset(Preset::DeskScale);
        assert!(c.set("rikd.bogus", "1").is_err());
        assert!(c.set("rikd.iterations", "three").is_err());
        assert!(c.set("rikd.reward_mode", "later").is_err());
        assert!(RunConfig::load(None, None, &["noequals".into()]).is_err());
    }

    #[test]
    fn presets_differ_where_documented() {
        let desk = RunConfig::preset(Preset::DeskScale);
        let paper = RunConfig::preset(Preset::PaperScale);
        assert_eq!((desk.tagger.d_emb, desk.tagger.window, desk.tagger.d_h), (16, 1, 64));
        assert_eq!((desk.rikd.warmup_steps, desk.rikd.reinforced_steps, desk.rikd.iterations), (200, 800, 3));
        assert_eq!((paper.rikd.batch_size, paper.source.epochs, paper.rikd.policy.d_u), (64, 5, 50));
        assert_eq!(paper.rikd.policy.lr, 0.01);
    }

    #[test]
    fn overrides_beat_the_file() {
        let c = RunConfig::load(None, Some(Preset::DeskScale), &["rikd.iterations=1".into(), "seed = 4".into()]).unwrap();
        assert_eq!(c.rikd.iterations, 1);
        assert_eq!(c.seed, 4);
    }
}
