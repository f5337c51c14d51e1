use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use biflag::data::{
    load_corpus, load_corpus_with, load_embeddings, read_records, resolve, synthesize, to_record,
    write_corpus, write_records, AnnotatedSentence, CorpusStats, EmbeddingTable, Vocabulary,
};
use biflag::eval::{throughput, Report};
use biflag::training::{load_checkpoint, save_checkpoint, EpochMetrics, Model, Trainer};
use biflag::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;

/// Writes to `path` when given, else to stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn report_path(cfg: &RunConfig, name: &str) -> Result<Option<PathBuf>> {
    match &cfg.report_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Some(dir.join(name)))
        }
        None => Ok(None),
    }
}

fn metrics_record(m: &EpochMetrics) -> serde_json::Value {
    json!({
        "epoch": m.epoch,
        "l_outer": m.l_outer,
        "l_inner": m.l_inner,
        "loss": m.loss,
        "dev": m.dev,
    })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    cfg.hp.validate()?;
    let corpus_path = cfg.existing("corpus")?;
    let embeddings_path = cfg.existing("embeddings")?;
    let checkpoint = cfg.required("checkpoint")?;
    let dev_path = match cfg.dev {
        Some(_) => Some(cfg.existing("dev")?),
        None => None,
    };

    let corpus = load_corpus(corpus_path)?;
    let dev = dev_path
        .map(|p| load_corpus_with(p, &corpus.labels))
        .transpose()?;
    let table = load_embeddings(embeddings_path, cfg.hp.word_dim)?;
    log::info!(
        "{} training sentences, {} dev sentences, {} types, {} vectors",
        corpus.sentences.len(),
        dev.as_ref().map_or(0, |d| d.sentences.len()),
        corpus.labels.num_types(),
        table.len()
    );

    let vocab = Vocabulary::build(&corpus.sentences);
    let model = Model::new(corpus.labels.clone(), vocab, Some(&table), cfg.hp.clone())?;
    let mut trainer = Trainer::new(model);

    let metrics_path = match report_path(cfg, "metrics.jsonl")? {
        Some(p) => p,
        None => checkpoint.with_extension("metrics.jsonl"),
    };
    let mut log_file = BufWriter::new(File::create(&metrics_path)?);
    let mut write_error = None;
    let summary = trainer.fit(
        &corpus.sentences,
        dev.as_ref().map(|d| d.sentences.as_slice()),
        |m, _| {
            let res = serde_json::to_writer(&mut log_file, &metrics_record(m))
                .map_err(io::Error::from)
                .and_then(|()| log_file.write_all(b"\n"))
                .and_then(|()| log_file.flush());
            match res {
                Ok(()) => true,
                Err(e) => {
                    write_error = Some(e);
                    false
                }
            }
        },
    )?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    save_checkpoint(&trainer, checkpoint)?;

    let mut out = io::stdout().lock();
    writeln!(out, "epochs run: {}", summary.epochs.len())?;
    if let (Some(epoch), Some(best)) = (summary.best_epoch, summary.best_dev) {
        writeln!(out, "best dev epoch: {epoch} ({best})")?;
    }
    writeln!(out, "checkpoint: {}", checkpoint.display())?;
    writeln!(out, "metrics: {}", metrics_path.display())?;
    Ok(())
}

fn load_for_corpus(cfg: &RunConfig) -> Result<(Model, Vec<AnnotatedSentence>)> {
    let checkpoint = cfg.existing("checkpoint")?;
    let corpus = cfg.existing("corpus")?;
    let model = load_checkpoint(checkpoint)?.model;
    let sentences = load_corpus_with(corpus, &model.labels)?.sentences;
    Ok((model, sentences))
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (model, sentences) = load_for_corpus(cfg)?;
    let gold: Vec<_> = sentences.iter().map(|s| s.entities.clone()).collect();
    let pred = model.predict_all(&sentences);
    let report = Report::compute(&gold, &pred, &model.labels)?;
    write!(io::stdout().lock(), "{report}")?;
    if let Some(p) = report_path(cfg, "report.txt")? {
        fs::write(p, report.to_string())?;
    }
    if let Some(p) = report_path(cfg, "report.jsonl")? {
        report.write_jsonl(BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let checkpoint = cfg.existing("checkpoint")?;
    let corpus = cfg.existing("corpus")?;
    let model = load_checkpoint(checkpoint)?.model;
    // Gold mentions, when present, are validated and then ignored.
    let sentences = resolve(read_records(corpus)?, &model.labels)?;
    let records: Vec<_> = sentences
        .iter()
        .map(|s| to_record(&s.tokens, &model.predict(&s.tokens), &model.labels))
        .collect();
    let mut out = sink(cfg.output.as_deref())?;
    write_records(&mut out, &records)?;
    out.flush()?;
    Ok(())
}

pub fn bench(cfg: &RunConfig) -> Result<()> {
    let (model, sentences) = load_for_corpus(cfg)?;
    let result = throughput(&sentences, AnnotatedSentence::len, cfg.hp.batch_size, cfg.passes, |batch| {
        for s in batch {
            model.predict(&s.tokens);
        }
    })?;
    writeln!(io::stdout().lock(), "{result}")?;
    if let Some(p) = report_path(cfg, "bench.json")? {
        fs::write(p, serde_json::to_string(&result).map_err(io::Error::from)?)?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    if cfg.sentences == 0 {
        return Err(biflag::Error::Config {
            field: "sentences".into(),
            message: "must be at least 1".into(),
        });
    }
    let corpus = synthesize(cfg.sentences, cfg.hp.seed);
    let mut out = sink(cfg.output.as_deref())?;
    write_corpus(&mut out, &corpus)?;
    out.flush()?;
    drop(out);

    let stats = CorpusStats::compute(&corpus);
    eprint!("{stats}");
    if let Some(p) = report_path(cfg, "stats.txt")? {
        fs::write(p, stats.to_string())?;
    }
    if let Some(path) = &cfg.embeddings {
        let vocab = Vocabulary::build(&corpus.sentences);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.hp.seed);
        let table = EmbeddingTable::random(vocab.words().iter().map(String::as_str), cfg.hp.word_dim, &mut rng);
        table.write(BufWriter::new(File::create(path)?))?;
        log::info!("wrote {} vectors of dimension {} to {}", table.len(), table.dim(), path.display());
    }
    Ok(())
}
