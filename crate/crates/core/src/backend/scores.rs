use std::io::{BufRead, Write};
use std::path::Path;

use super::EmbeddingTable;
use crate::data::{Trial, TrialLabel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::cosine;

/// Scored trials as parallel arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet<S> {
    pub enroll: Vec<String>,
    pub test: Vec<String>,
    pub scores: Vec<S>,
    pub targets: Vec<bool>,
}

impl<S: Scalar> ScoreSet<S> {
    /// Anonymous trials, for metric computations.
    pub fn from_scores(scores: Vec<S>, targets: Vec<bool>) -> Self {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("t{i}")).collect();
        Self {
            enroll: ids.clone(),
            test: ids,
            scores,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn push(&mut self, enroll: &str, test: &str, score: S, target: bool) {
        self.enroll.push(enroll.to_owned());
        self.test.push(test.to_owned());
        self.scores.push(score);
        self.targets.push(target);
    }

    pub fn map<F: Fn(S) -> S>(&self, f: F) -> Self {
        Self {
            scores: self.scores.iter().map(|&s| f(s)).collect(),
            ..self.clone()
        }
    }
}

/// Cosine distance score.
pub fn cds_score<S: Scalar>(e1: &[S], e2: &[S]) -> Result<S> {
    cosine(e1, e2)
}

/// Scores every trial with CDS, looking up ids in `table`.
pub fn score_trials<S: Scalar>(table: &EmbeddingTable<S>, trials: &[Trial]) -> Result<ScoreSet<S>> {
    let mut out = ScoreSet::default();
    for t in trials {
        let e = table.get(&t.enroll)?;
        let v = table.get(&t.test)?;
        out.push(&t.enroll, &t.test, cds_score(e, v)?, t.label.is_target());
    }
    Ok(out)
}

/// `enroll_id test_id score` per line.
pub fn write_scores<S: Scalar>(path: &Path, set: &ScoreSet<S>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..set.len() {
        writeln!(w, "{} {} {}", set.enroll[i], set.test[i], set.scores[i])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a score file and attaches labels from `trials`, matched by
/// `(enroll, test)`.
pub fn read_scores(path: &Path, trials: &[Trial]) -> Result<ScoreSet<f64>> {
    let labels: std::collections::HashMap<(&str, &str), TrialLabel> = trials
        .iter()
        .map(|t| ((t.enroll.as_str(), t.test.as_str()), t.label))
        .collect();
    let mut out = ScoreSet::default();
    for line in std::io::BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let [e, t, s] = f.as_slice() else {
            return Err(Error::Format(format!("score line `{line}`")));
        };
        let score: f64 = s.parse().map_err(|_| Error::Format(format!("score `{s}`")))?;
        let label = labels
            .get(&(*e, *t))
            .ok_or_else(|| Error::UnknownId(format!("{e} {t}")))?;
        out.push(e, t, score, label.is_target());
    }
    Ok(out)
}
