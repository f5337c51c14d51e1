//! Run configuration: defaults, then a `key = value` file, then flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use biflag::training::Hyperparams;
use biflag::{Error, Result};

/// Everything a subcommand needs, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub sentences: usize,
    pub passes: usize,
    pub hp: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            dev: None,
            embeddings: None,
            checkpoint: None,
            report_dir: None,
            output: None,
            sentences: 200,
            passes: 3,
            hp: Hyperparams::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::Config {
        field: key.into(),
        message: format!("cannot parse {value:?}: {e}"),
    })
}

impl RunConfig {
    /// Sets one field by name. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let k = key.as_str();
        let hp = &mut self.hp;
        match k {
            "corpus" => self.corpus = Some(value.into()),
            "dev" => self.dev = Some(value.into()),
            "embeddings" => self.embeddings = Some(value.into()),
            "checkpoint" => self.checkpoint = Some(value.into()),
            "report_dir" => self.report_dir = Some(value.into()),
            "output" => self.output = Some(value.into()),
            "sentences" => self.sentences = parse(k, value)?,
            "passes" => self.passes = parse(k, value)?,
            "seed" => hp.seed = parse(k, value)?,
            "lr_flat" => hp.lr_flat = parse(k, value)?,
            "lr_graph" => hp.lr_graph = parse(k, value)?,
            "dropout" => hp.dropout = parse(k, value)?,
            "hidden" => {
                hp.hidden = parse(k, value)?;
                hp.gcn_hidden = hp.hidden;
            }
            "word_dim" => hp.word_dim = parse(k, value)?,
            "char_emb_dim" => hp.char_emb_dim = parse(k, value)?,
            "char_dim" => hp.char_dim = parse(k, value)?,
            "lambda1" => hp.lambda1 = parse(k, value)?,
            "lambda2" => hp.lambda2 = parse(k, value)?,
            "batch_size" => hp.batch_size = parse(k, value)?,
            "epochs" => hp.epochs = parse(k, value)?,
            "patience" => hp.patience = parse(k, value)?,
            "clip_norm" => hp.clip_norm = parse(k, value)?,
            "no_graph" => hp.no_graph = parse(k, value)?,
            "no_feedback" => hp.no_feedback = parse(k, value)?,
            _ => {
                return Err(Error::Config {
                    field: key.clone(),
                    message: "unknown setting".into(),
                })
            }
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected key = value, found {line:?}"),
                });
            };
            self.set(key, value)?;
        }
        Ok(())
    }

    /// The path stored under `field`, which must be set and exist.
    pub fn existing(&self, field: &str) -> Result<&Path> {
        let path = self.path(field).ok_or_else(|| Error::Config {
            field: field.into(),
            message: "required for this command".into(),
        })?;
        if !path.exists() {
            return Err(Error::Config {
                field: field.into(),
                message: format!("{} does not exist", path.display()),
            });
        }
        Ok(path)
    }

    /// The path stored under `field`, which must be set.
    pub fn required(&self, field: &str) -> Result<&Path> {
        self.path(field).ok_or_else(|| Error::Config {
            field: field.into(),
            message: "required for this command".into(),
        })
    }

    fn path(&self, field: &str) -> Option<&Path> {
        match field {
            "corpus" => self.corpus.as_deref(),
            "dev" => self.dev.as_deref(),
            "embeddings" => self.embeddings.as_deref(),
            "checkpoint" => self.checkpoint.as_deref(),
            "report_dir" => self.report_dir.as_deref(),
            "output" => self.output.as_deref(),
            _ => None,
        }
    }
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".into(), |p| p.display().to_string())
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hp = &self.hp;
        let rows: Vec<(&str, String)> = vec![
            ("corpus", show(&self.corpus)),
            ("dev", show(&self.dev)),
            ("embeddings", show(&self.embeddings)),
            ("checkpoint", show(&self.checkpoint)),
            ("report_dir", show(&self.report_dir)),
            ("output", show(&self.output)),
            ("sentences", self.sentences.to_string()),
            ("passes", self.passes.to_string()),
            ("seed", hp.seed.to_string()),
            ("lr_flat", hp.lr_flat.to_string()),
            ("lr_graph", hp.lr_graph.to_string()),
            ("dropout", hp.dropout.to_string()),
            ("hidden", hp.hidden.to_string()),
            ("gcn_hidden", hp.gcn_hidden.to_string()),
            ("word_dim", hp.word_dim.to_string()),
            ("char_emb_dim", hp.char_emb_dim.to_string()),
            ("char_dim", hp.char_dim.to_string()),
            ("lambda1", hp.lambda1.to_string()),
            ("lambda2", hp.lambda2.to_string()),
            ("batch_size", hp.batch_size.to_string()),
            ("epochs", hp.epochs.to_string()),
            ("patience", hp.patience.to_string()),
            ("clip_norm", hp.clip_norm.to_string()),
            ("no_graph", hp.no_graph.to_string()),
            ("no_feedback", hp.no_feedback.to_string()),
        ];
        for (k, v) in rows {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    #[test]
    fn file_then_override() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# settings\nlr-flat = 0.5\nhidden=32  # both widths\n\nepochs = 7").unwrap();
        let mut c = RunConfig::default();
        c.apply_file(f.path()).unwrap();
        c.set("epochs", "9").unwrap();
        assert_eq!(c.hp.lr_flat, 0.5);
        assert_eq!((c.hp.hidden, c.hp.gcn_hidden), (32, 32));
        assert_eq!(c.hp.epochs, 9);
    }

    #[test]
    fn errors_name_the_field() {
        let mut c = RunConfig::default();
        let err = c.set("batch_size", "ten").unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "batch_size"), "{err}");
        let err = c.set("learning_rate", "1").unwrap_err();
        assert!(matches!(&err, Error::Config { field, .. } if field == "learning_rate"), "{err}");
        let err = c.existing("embeddings").unwrap_err();
        assert!(err.to_string().contains("embeddings"), "{err}");
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 1\nseed 2").unwrap();
        let err = RunConfig::default().apply_file(f.path()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn echo_lists_every_setting() {
        let text = RunConfig::default().to_string();
        for key in ["corpus", "seed", "lr_flat", "lambda2", "no_feedback"] {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
        }
    }
}
