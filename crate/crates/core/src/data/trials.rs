use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl TrialLabel {
    pub fn is_target(self) -> bool {
        self == TrialLabel::Target
    }
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        })
    }
}

impl FromStr for TrialLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "nontarget" => Ok(TrialLabel::Nontarget),
            other => Err(Error::Format(format!("bad trial label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: TrialLabel,
}

pub type TrialList = Vec<Trial>;

/// Samples target pairs (two utterances of one speaker) and non-target pairs
/// (two speakers), never pairing an utterance with itself.
pub fn make_trials(ds: &Dataset, n_target: usize, n_nontarget: usize, seed: u64) -> Result<TrialList> {
    let mut by_speaker: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, u) in ds.utterances.iter().enumerate() {
        by_speaker.entry(u.speaker_id).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_speaker.values().collect();
    let multi: Vec<&Vec<usize>> = groups.iter().copied().filter(|g| g.len() >= 2).collect();
    if n_target > 0 && multi.is_empty() {
        return Err(Error::InsufficientData("no speaker has two utterances".into()));
    }
    if n_nontarget > 0 && groups.len() < 2 {
        return Err(Error::InsufficientData("need at least two speakers".into()));
    }
    let mut rng = rng::stream(seed, Stream::Trials, 0);
    let mut trials = Vec::with_capacity(n_target + n_nontarget);
    let id = |i: usize| ds.utterances[i].id.clone();
    for _ in 0..n_target {
        let g = multi[rng.random_range(0..multi.len())];
        let a = rng.random_range(0..g.len());
        let mut b = rng.random_range(0..g.len() - 1);
        if b >= a {
            b += 1;
        }
        trials.push(Trial {
            enroll: id(g[a]),
            test: id(g[b]),
            label: TrialLabel::Target,
        });
    }
    for _ in 0..n_nontarget {
        let a = rng.random_range(0..groups.len());
        let mut b = rng.random_range(0..groups.len() - 1);
        if b >= a {
            b += 1;
        }
        let (ga, gb) = (groups[a], groups[b]);
        trials.push(Trial {
            enroll: id(ga[rng.random_range(0..ga.len())]),
            test: id(gb[rng.random_range(0..gb.len())]),
            label: TrialLabel::Nontarget,
        });
    }
    Ok(trials)
}

/// Writes `enroll_id test_id target|nontarget` lines.
pub fn write_trials(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in trials {
        writeln!(w, "{} {} {}", t.enroll, t.test, t.label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<TrialList> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => continue,
            [e, t, l] => out.push(Trial {
                enroll: e.to_string(),
                test: t.to_string(),
                label: l.parse()?,
            }),
            _ => return Err(Error::Format(format!("trial line {}: `{line}`", n + 1))),
        }
    }
    Ok(out)
}
