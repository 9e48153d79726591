use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use entcap_core::metrics::{aggregate_ratings, coverage_report, ratings::signed_percent, read_ratings};
use entcap_core::model::Model;
use entcap_core::text::dataset::{read_records, write_records, FeatureShape};
use entcap_core::text::{build_vocab, load_dataset, prepare_record, PrepStats, Vocabulary};
use entcap_core::train::trainer::{entity_types, vocab_corpus};
use entcap_core::train::{
    decode_set, load_model, prepare_examples, save_model, train, train_regressors, Conditioning, Sidecar, TrainEvent,
};
use entcap_core::{synth, Execution, RunConfig};
use serde_json::json;

use crate::{CaptionArgs, Cli, Command, ModelPaths, TrainArgs};

struct Ctx {
    cfg: RunConfig,
    exec: Execution,
}

impl Ctx {
    fn shape(&self) -> FeatureShape {
        FeatureShape {
            rows: self.cfg.model.feature_rows,
            dim: self.cfg.model.feature_dim,
        }
    }

    fn path(&self, flag: &Option<PathBuf>, cfg: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        flag.clone()
            .or_else(|| cfg.clone())
            .with_context(|| format!("no {what} path given (flag or [paths] in the config)"))
    }

    fn model_paths(&self, m: &ModelPaths) -> Result<(PathBuf, PathBuf)> {
        Ok((
            self.path(&m.checkpoint, &self.cfg.paths.checkpoint, "checkpoint")?,
            self.path(&m.vocab, &self.cfg.paths.vocab, "vocab")?,
        ))
    }

    /// Writes `<path>.config.json` next to an output artifact.
    fn echo(&self, path: &Path) -> Result<()> {
        let mut s = path.as_os_str().to_owned();
        s.push(".config.json");
        std::fs::write(&s, serde_json::to_string_pretty(&self.cfg.to_json())?)
            .with_context(|| format!("writing {}", PathBuf::from(&s).display()))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let mut ctx = Ctx { cfg, exec };
    match cli.cmd {
        Command::GenerateSynthetic { out_dir } => generate(&ctx, &out_dir),
        Command::Prepare { input, output } => prepare(&ctx, &input, &output),
        Command::Train(a) => cmd_train(&mut ctx, a),
        Command::TrainRegressors { model, train, output } => cmd_regressors(&ctx, &model, &train, output),
        Command::Caption(a) => caption(&mut ctx, a),
        Command::Eval { data, captions, output } => eval(&ctx, &data, &captions, output),
        Command::Ratings { input } => ratings(&input),
    }
}

fn generate(ctx: &Ctx, dir: &Path) -> Result<()> {
    ctx.cfg.validate()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let splits = synth::generate_splits(&ctx.cfg.synth, ctx.cfg.seed)?;
    for (name, recs) in ["train", "dev", "test"].iter().zip(splits.iter()) {
        let path = dir.join(format!("{name}.jsonl"));
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_records(BufWriter::new(f), recs)?;
        eprintln!("wrote {} records to {}", recs.len(), path.display());
    }
    ctx.echo(&dir.join("synthetic"))
}

fn prepare(ctx: &Ctx, input: &Path, output: &Path) -> Result<()> {
    let mut records = read_records(input)?;
    let mut total = PrepStats::default();
    let mut changed = 0;
    for (line, rec) in &mut records {
        let (s, c) = prepare_record(rec).with_context(|| format!("{}:{line}", input.display()))?;
        total += s;
        changed += usize::from(c);
    }
    let f = File::create(output).with_context(|| format!("creating {}", output.display()))?;
    write_records(BufWriter::new(f), records.iter().map(|(_, r)| r))?;
    ctx.echo(output)?;
    println!(
        "records {}  changed {}  retained {}  substituted {}  removed {}",
        records.len(),
        changed,
        total.retained,
        total.substituted,
        total.removed
    );
    Ok(())
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read vocabulary {}", path.display()))?;
    Ok(Vocabulary::from_json(&text)?)
}

fn cmd_train(ctx: &mut Ctx, a: TrainArgs) -> Result<()> {
    if let Some(n) = a.max_steps {
        ctx.cfg.train.max_steps = n;
    }
    if let Some(m) = a.entity_mode {
        ctx.cfg.entity_mode = m;
    }
    ctx.cfg.validate()?;
    let (ckpt, vocab_path) = ctx.model_paths(&a.model)?;
    let train_path = ctx.path(&a.train, &ctx.cfg.paths.train, "training data")?;
    let train_ex = load_dataset(&train_path, ctx.shape(), ctx.exec)?;
    let dev_ex = match a.dev.clone().or_else(|| ctx.cfg.paths.dev.clone()) {
        Some(p) => load_dataset(&p, ctx.shape(), ctx.exec)?,
        None => Vec::new(),
    };
    let mode = ctx.cfg.entity_mode;
    let vocab = build_vocab(
        &vocab_corpus(&train_ex, mode),
        &entity_types(&train_ex),
        ctx.cfg.vocab.max_size,
    )?;
    std::fs::write(&vocab_path, vocab.to_json()).with_context(|| format!("writing {}", vocab_path.display()))?;
    eprintln!("vocabulary: {} pieces -> {}", vocab.len(), vocab_path.display());

    let mut model = Model::<f32>::for_vocab(&ctx.cfg.model, &vocab, ctx.cfg.seed)?;
    let train_set = prepare_examples(&train_ex, &vocab, mode, &model, ctx.exec);
    let dev_set = prepare_examples(&dev_ex, &vocab, mode, &model, ctx.exec);
    let log_every = (ctx.cfg.train.eval_every / 10).max(1);
    let report = train(
        &mut model,
        &train_set,
        &dev_set,
        &vocab,
        mode,
        &ctx.cfg.train,
        ctx.cfg.beam,
        ctx.cfg.seed,
        ctx.exec,
        |ev| match ev {
            TrainEvent::Step { step, loss } if step % log_every == 0 => eprintln!("step {step}  loss {loss:.4}"),
            TrainEvent::Eval { step, cider, best } => {
                eprintln!(
                    "step {step}  dev CIDEr {cider:.4}{}",
                    if *best { "  (best)" } else { "" }
                )
            }
            _ => {}
        },
    )?;
    let sidecar = Sidecar {
        model: ctx.cfg.model.clone(),
        entity_mode: mode,
        vocab_sha256: vocab.sha256(),
        step: report.best_step,
        dev_cider: report.best_cider,
        config: ctx.cfg.to_json(),
    };
    save_model(&model, &sidecar, &ckpt)?;
    println!(
        "steps {}  best step {}  dev CIDEr {:.4}  checkpoint {}",
        report.steps,
        report.best_step,
        report.best_cider,
        ckpt.display()
    );
    Ok(())
}

fn cmd_regressors(ctx: &Ctx, paths: &ModelPaths, train_flag: &Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    ctx.cfg.validate()?;
    let (ckpt, vocab_path) = ctx.model_paths(paths)?;
    let vocab = load_vocab(&vocab_path)?;
    let (mut model, mut sidecar) = load_model(&ckpt, &vocab)?;
    let train_path = ctx.path(train_flag, &ctx.cfg.paths.train, "training data")?;
    let examples = load_dataset(&train_path, ctx.shape(), ctx.exec)?;
    let data = prepare_examples(&examples, &vocab, sidecar.entity_mode, &model, ctx.exec);
    let report = train_regressors(&mut model, &data, &ctx.cfg.train, ctx.exec)?;
    sidecar.config = ctx.cfg.to_json();
    let out = output.unwrap_or(ckpt);
    save_model(&model, &sidecar, &out)?;
    println!(
        "regressor loss {:.6} -> {:.6}  checkpoint {}",
        report.initial_loss,
        report.final_loss,
        out.display()
    );
    Ok(())
}

fn caption(ctx: &mut Ctx, a: CaptionArgs) -> Result<()> {
    if let Some(v) = a.boost_we {
        ctx.cfg.boost.w_we = v;
    }
    if let Some(v) = a.boost_obj {
        ctx.cfg.boost.w_obj = v;
    }
    if let Some(b) = a.beam {
        ctx.cfg.beam.beam_size = b;
    }
    ctx.cfg.validate()?;
    for w in ctx.cfg.boost.warnings() {
        eprintln!("warning: {w}");
    }
    let (ckpt, vocab_path) = ctx.model_paths(&a.model)?;
    let vocab = load_vocab(&vocab_path)?;
    let (model, sidecar) = load_model(&ckpt, &vocab)?;
    let mode = a.entity_mode.unwrap_or(sidecar.entity_mode);
    if mode != sidecar.entity_mode {
        bail!(
            "checkpoint was trained in {:?} mode but {:?} was requested",
            sidecar.entity_mode,
            mode
        );
    }
    ctx.cfg.entity_mode = mode;
    let shape = FeatureShape {
        rows: model.cfg.feature_rows,
        dim: model.cfg.feature_dim,
    };
    let examples = load_dataset(&a.input, shape, ctx.exec)?;
    let has_ref: Vec<bool> = examples.iter().map(|e| e.caption.is_some()).collect();
    let data = prepare_examples(&examples, &vocab, mode, &model, ctx.exec);
    let decoded = decode_set(
        &model,
        &data,
        &vocab,
        mode,
        ctx.cfg.beam,
        Conditioning::Predicted(ctx.cfg.boost),
        ctx.exec,
    )?;
    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut unfinished = 0;
    for (d, r) in decoded.iter().zip(has_ref) {
        unfinished += usize::from(!d.finished);
        let mut line = json!({
            "example_id": d.example_id,
            "caption": d.caption,
            "log_prob": d.log_prob,
            "cov_pred": d.cov_pred,
        });
        if r {
            line["cov_actual"] = serde_json::to_value(d.cov_actual)?;
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    if unfinished > 0 {
        eprintln!("warning: {unfinished} captions hit max_len before EOS");
    }
    if let Some(p) = &a.output {
        ctx.echo(p)?;
    }
    Ok(())
}

fn eval(ctx: &Ctx, data: &Path, captions: &Path, output: Option<PathBuf>) -> Result<()> {
    let examples = load_dataset(data, ctx.shape(), ctx.exec)?;
    let f = File::open(captions).with_context(|| format!("cannot read {}", captions.display()))?;
    let mut caps = BTreeMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", captions.display(), i + 1))?;
        let (Some(id), Some(c)) = (v["example_id"].as_str(), v["caption"].as_str()) else {
            bail!("{}:{}: expected example_id and caption", captions.display(), i + 1);
        };
        caps.insert(id.to_string(), c.to_string());
    }
    let mut report = coverage_report(&examples, &caps, ctx.exec)?;
    report.config = ctx.cfg.to_json();
    print!("{}", report.to_table());
    if let Some(p) = output {
        std::fs::write(&p, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn ratings(input: &Path) -> Result<()> {
    let f = File::open(input).with_context(|| format!("cannot read {}", input.display()))?;
    let records = read_ratings(f)?;
    for (dim, score) in aggregate_ratings(&records)? {
        println!("{:<16} {}", format!("{dim:?}").to_lowercase(), signed_percent(score));
    }
    Ok(())
}
