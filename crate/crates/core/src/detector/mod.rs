//! Template store, exact and threshold detection, cross-validation and
//! threshold sweeps.

mod corpus;
mod store;

pub use corpus::{load_manifest, load_sample, write_acfgs, CorpusError, ManifestEntry};
pub use store::{
    build_templates, BuildOutcome, MalwareTemplate, Provenance, SourceSample, StoreError,
    TemplateStore, INDEX_FILE,
};

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cfg::{function_acfgs, Acfg};
use crate::disasm::{parse_disasm_with, Arch, DisasmError};
use crate::lift::{lift_program, LiftOptions};
use crate::matcher::{subgraph_match_with, Mapping, MatchOptions, MatchOutcome};

pub const DEFAULT_THRESHOLD: f64 = 0.25;

/// Normalized function ACFGs of one program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleGraphs {
    pub name: String,
    pub acfgs: Vec<Acfg>,
}

impl SampleGraphs {
    /// Disjoint union of all function graphs.
    pub fn whole_program(&self) -> Acfg {
        self.acfgs
            .iter()
            .fold(Acfg::new(self.name.clone()), |acc, g| acc.union(g))
    }
}

/// Parses, lifts and builds normalized ACFGs.
pub fn sample_from_disasm(
    name: &str,
    text: &str,
    arch: Arch,
    opts: LiftOptions,
) -> Result<SampleGraphs, DisasmError> {
    let spans = parse_disasm_with(text, arch)?;
    let program = lift_program(&spans, opts);
    Ok(SampleGraphs {
        name: name.to_string(),
        acfgs: function_acfgs(&program, true),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Malware,
    Benign,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Malware => "malware",
            Verdict::Benign => "benign",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// What exact mode matches against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Any template function graph inside any sample function graph.
    #[default]
    Function,
    /// The template's whole-program graph inside the sample's.
    Program,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "threshold")]
pub enum Mode {
    Exact,
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectOptions {
    pub matching: MatchOptions,
    pub granularity: Granularity,
}

impl DetectOptions {
    pub fn structure_only(mut self) -> Self {
        self.matching.use_patterns = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error("threshold {0} is outside (0, 1]")]
    Threshold(f64),
    #[error("cross-validation needs at least 2 folds, got {0}")]
    Folds(usize),
    #[error("training size must be at least 1")]
    TrainSize,
    #[error("{folds} folds of {train} training samples need {needed} malware samples, corpus has {available}")]
    InsufficientSamples {
        folds: usize,
        train: usize,
        needed: usize,
        available: usize,
    },
}

pub fn check_threshold(t: f64) -> Result<f64, DetectError> {
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(DetectError::Threshold(t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub template_acfg: String,
    pub sample_acfg: String,
    pub mapping: Mapping,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateEvidence {
    pub template: String,
    /// Template graphs with a match.
    pub matched: usize,
    /// Template graphs with no match but at least one inconclusive search.
    pub inconclusive: usize,
    pub total: usize,
    pub fraction: f64,
    pub witnesses: Vec<Witness>,
}

impl TemplateEvidence {
    fn optimistic_fraction(&self) -> f64 {
        (self.matched + self.inconclusive) as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub sample: String,
    pub verdict: Verdict,
    #[serde(flatten)]
    pub mode: Mode,
    pub evidence: Vec<TemplateEvidence>,
    pub diagnostics: Vec<String>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// One line of the machine-readable record stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record<'a> {
    pub name: &'a str,
    pub verdict: Verdict,
    pub best_template: Option<&'a str>,
    pub fraction: f64,
}

impl DetectionReport {
    /// Highest fraction; first template wins ties.
    pub fn best(&self) -> Option<&TemplateEvidence> {
        self.evidence
            .iter()
            .fold(None, |best: Option<&TemplateEvidence>, e| match best {
                Some(b) if b.fraction >= e.fraction => Some(b),
                _ => Some(e),
            })
    }

    pub fn record(&self) -> Record<'_> {
        let best = self.best().filter(|b| b.matched > 0);
        Record {
            name: &self.sample,
            verdict: self.verdict,
            best_template: best.map(|b| b.template.as_str()),
            fraction: best.map_or(0.0, |b| b.fraction),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.record()).expect("record serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}: {}", self.sample, self.verdict);
        if let Some(b) = self.best().filter(|b| b.matched > 0) {
            s.push_str(&format!(
                " (template {}, {}/{} = {:.3})",
                b.template, b.matched, b.total, b.fraction
            ));
        }
        s
    }
}

/// Matches each template graph against the sample graphs, stopping at the
/// first hit. A sample graph may serve several template graphs.
fn score_template(
    name: &str,
    template: &[Acfg],
    sample: &[Acfg],
    opts: MatchOptions,
) -> TemplateEvidence {
    let mut ev = TemplateEvidence {
        template: name.to_string(),
        matched: 0,
        inconclusive: 0,
        total: template.len(),
        fraction: 0.0,
        witnesses: Vec::new(),
    };
    for t in template {
        let mut pending = false;
        let hit = sample
            .iter()
            .find_map(|s| match subgraph_match_with(t, s, opts) {
                MatchOutcome::Found(mapping) => Some(Witness {
                    template_acfg: t.name.clone(),
                    sample_acfg: s.name.clone(),
                    mapping,
                }),
                MatchOutcome::Inconclusive { .. } => {
                    pending = true;
                    None
                }
                MatchOutcome::NotFound => None,
            });
        match hit {
            Some(w) => {
                ev.matched += 1;
                ev.witnesses.push(w);
            }
            None if pending => ev.inconclusive += 1,
            None => {}
        }
    }
    ev.fraction = ev.matched as f64 / ev.total.max(1) as f64;
    ev
}

/// Per-template evidence, skipping templates without graphs.
fn score(
    store: &TemplateStore,
    sample: &SampleGraphs,
    opts: DetectOptions,
    mode: Mode,
) -> DetectionReport {
    let start = Instant::now();
    let mut diagnostics = Vec::new();
    let mut evidence = Vec::new();
    let whole_sample = matches!(
        (mode, opts.granularity),
        (Mode::Exact, Granularity::Program)
    )
    .then(|| vec![sample.whole_program()]);
    for t in store.templates() {
        if t.acfgs.is_empty() {
            diagnostics.push(format!(
                "template {} has no graphs and was not scored",
                t.name
            ));
            continue;
        }
        let ev = match &whole_sample {
            Some(whole) => score_template(&t.name, &[t.whole_program()], whole, opts.matching),
            None => score_template(&t.name, &t.acfgs, &sample.acfgs, opts.matching),
        };
        evidence.push(ev);
    }
    let verdict = match mode {
        Mode::Exact => {
            if evidence.iter().any(|e| e.matched > 0) {
                Verdict::Malware
            } else if evidence.iter().any(|e| e.inconclusive > 0) {
                Verdict::Inconclusive
            } else {
                Verdict::Benign
            }
        }
        Mode::Threshold(t) => verdict_at(&evidence, t),
    };
    DetectionReport {
        sample: sample.name.clone(),
        verdict,
        mode,
        evidence,
        diagnostics,
        elapsed: start.elapsed(),
    }
}

fn verdict_at(evidence: &[TemplateEvidence], threshold: f64) -> Verdict {
    if evidence.iter().any(|e| e.fraction >= threshold) {
        Verdict::Malware
    } else if evidence
        .iter()
        .any(|e| e.optimistic_fraction() >= threshold)
    {
        Verdict::Inconclusive
    } else {
        Verdict::Benign
    }
}

/// Malware when some template graph embeds in the sample.
pub fn detect_exact(
    store: &TemplateStore,
    sample: &SampleGraphs,
    opts: DetectOptions,
) -> DetectionReport {
    score(store, sample, opts, Mode::Exact)
}

/// Malware when, for some template, at least `threshold` of its function
/// graphs match some function graph of the sample.
pub fn detect_threshold(
    store: &TemplateStore,
    sample: &SampleGraphs,
    threshold: f64,
    opts: DetectOptions,
) -> Result<DetectionReport, DetectError> {
    let t = check_threshold(threshold)?;
    Ok(score(store, sample, opts, Mode::Threshold(t)))
}

/// Runs one mode over many samples in parallel; output order follows input.
pub fn scan(
    store: &TemplateStore,
    samples: &[SampleGraphs],
    mode: Mode,
    opts: DetectOptions,
) -> Result<Vec<DetectionReport>, DetectError> {
    if let Mode::Threshold(t) = mode {
        check_threshold(t)?;
    }
    Ok(samples
        .par_iter()
        .map(|s| score(store, s, opts, mode))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub graphs: SampleGraphs,
    pub malware: bool,
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub detected: usize,
    pub malware: usize,
    pub false_positives: usize,
    pub benign: usize,
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

/// Scores the corpus once and applies each threshold to the same evidence.
pub fn sweep_threshold(
    store: &TemplateStore,
    corpus: &[LabeledSample],
    thresholds: &[f64],
    opts: DetectOptions,
) -> Result<Vec<SweepRow>, DetectError> {
    for &t in thresholds {
        check_threshold(t)?;
    }
    let scored: Vec<(bool, Vec<TemplateEvidence>)> = corpus
        .par_iter()
        .map(|s| {
            (
                s.malware,
                score(store, &s.graphs, opts, Mode::Threshold(1.0)).evidence,
            )
        })
        .collect();
    let malware = scored.iter().filter(|(m, _)| *m).count();
    let benign = scored.len() - malware;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let flagged = |want: bool| {
                scored
                    .iter()
                    .filter(|(m, ev)| *m == want && verdict_at(ev, t) == Verdict::Malware)
                    .count()
            };
            let (detected, false_positives) = (flagged(true), flagged(false));
            SweepRow {
                threshold: t,
                detected,
                malware,
                false_positives,
                benign,
                detection_rate: rate(detected, malware),
                false_positive_rate: rate(false_positives, benign),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub train_size: usize,
    pub threshold: f64,
    pub seed: u64,
    pub detect: DetectOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train: Vec<String>,
    pub malware_tested: usize,
    pub detected: usize,
    pub benign_tested: usize,
    pub false_positives: usize,
    pub inconclusive: usize,
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub seed: u64,
    pub folds: usize,
    pub train_size: usize,
    pub threshold: f64,
    pub rounds: Vec<FoldReport>,
    /// Mean over folds where the rate is defined.
    pub detection_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| format!("{:.4}", r))
}

impl CvReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "seed {} folds {} train {} threshold {}\n",
            self.seed, self.folds, self.train_size, self.threshold
        );
        for r in &self.rounds {
            s.push_str(&format!(
                "fold {}: detected {}/{} ({}), false positives {}/{} ({}), inconclusive {}\n",
                r.fold,
                r.detected,
                r.malware_tested,
                fmt_rate(r.detection_rate),
                r.false_positives,
                r.benign_tested,
                fmt_rate(r.false_positive_rate),
                r.inconclusive
            ));
        }
        s.push_str(&format!(
            "mean detection rate {}, mean false positive rate {}\n",
            fmt_rate(self.detection_rate),
            fmt_rate(self.false_positive_rate)
        ));
        s
    }
}

pub fn sweep_to_text(rows: &[SweepRow]) -> String {
    let mut s = String::from("threshold\tdetection\tfalse_positive\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{} ({}/{})\t{} ({}/{})\n",
            r.threshold,
            fmt_rate(r.detection_rate),
            r.detected,
            r.malware,
            fmt_rate(r.false_positive_rate),
            r.false_positives,
            r.benign
        ));
    }
    s
}

/// Shuffles the malware with a seeded generator and cuts `folds` disjoint
/// training sets of `train_size`. Each round trains on one set and tests the
/// remaining malware plus every benign sample.
pub fn cross_validate(
    samples: &[LabeledSample],
    config: CvConfig,
) -> Result<CvReport, DetectError> {
    check_threshold(config.threshold)?;
    if config.folds < 2 {
        return Err(DetectError::Folds(config.folds));
    }
    if config.train_size == 0 {
        return Err(DetectError::TrainSize);
    }
    let mut malware: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].malware).collect();
    let needed = config.folds * config.train_size;
    if needed > malware.len() {
        return Err(DetectError::InsufficientSamples {
            folds: config.folds,
            train: config.train_size,
            needed,
            available: malware.len(),
        });
    }
    malware.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let rounds = malware
        .chunks(config.train_size)
        .take(config.folds)
        .enumerate()
        .map(|(fold, train)| {
            let mut store = TemplateStore::default();
            for &i in train {
                let g = &samples[i].graphs;
                store
                    .insert(MalwareTemplate::new(
                        format!("{i}:{}", g.name),
                        g.acfgs.clone(),
                        Provenance::default(),
                    ))
                    .expect("indices make names unique");
            }
            let test: Vec<usize> = (0..samples.len()).filter(|i| !train.contains(i)).collect();
            let verdicts: Vec<(bool, Verdict)> = test
                .par_iter()
                .map(|&i| {
                    let r = score(
                        &store,
                        &samples[i].graphs,
                        config.detect,
                        Mode::Threshold(config.threshold),
                    );
                    (samples[i].malware, r.verdict)
                })
                .collect();
            let count = |m: bool, v: Option<Verdict>| {
                verdicts
                    .iter()
                    .filter(|(x, y)| *x == m && v.is_none_or(|v| *y == v))
                    .count()
            };
            let (malware_tested, benign_tested) = (count(true, None), count(false, None));
            let detected = count(true, Some(Verdict::Malware));
            let false_positives = count(false, Some(Verdict::Malware));
            FoldReport {
                fold,
                train: train
                    .iter()
                    .map(|&i| samples[i].graphs.name.clone())
                    .collect(),
                malware_tested,
                detected,
                benign_tested,
                false_positives,
                inconclusive: verdicts
                    .iter()
                    .filter(|(_, v)| *v == Verdict::Inconclusive)
                    .count(),
                detection_rate: rate(detected, malware_tested),
                false_positive_rate: rate(false_positives, benign_tested),
            }
        })
        .collect::<Vec<_>>();

    Ok(CvReport {
        seed: config.seed,
        folds: config.folds,
        train_size: config.train_size,
        threshold: config.threshold,
        detection_rate: mean(rounds.iter().map(|r| r.detection_rate)),
        false_positive_rate: mean(rounds.iter().map(|r| r.false_positive_rate)),
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mail::PatternTag::{self, *};

    fn graph(name: &str, seqs: &[&[PatternTag]]) -> Acfg {
        let n = seqs.len();
        Acfg::from_patterns(
            name,
            seqs.iter().map(|s| s.to_vec()).collect(),
            (1..n).map(|i| (i - 1, i)),
        )
    }

    fn four_functions() -> Vec<Acfg> {
        vec![
            graph("f0", &[&[Assign], &[Control]]),
            graph("f1", &[&[LibCall], &[Jump], &[Halt]]),
            graph("f2", &[&[Stack, Stack], &[Call]]),
            graph("f3", &[&[Test], &[ControlConstant], &[Assign]]),
        ]
    }

    fn store_of(templates: Vec<(&str, Vec<Acfg>)>) -> TemplateStore {
        let mut s = TemplateStore::default();
        for (n, g) in templates {
            s.insert(MalwareTemplate::new(n, g, Provenance::default()))
                .unwrap();
        }
        s
    }

    fn sample(name: &str, acfgs: Vec<Acfg>) -> SampleGraphs {
        SampleGraphs {
            name: name.into(),
            acfgs,
        }
    }

    #[test]
    fn one_of_four_flips_at_quarter() {
        let store = store_of(vec![("m", four_functions())]);
        let s = sample(
            "s",
            vec![four_functions()[2].clone(), graph("x", &[&[Unknown]])],
        );
        let at = |t| {
            detect_threshold(&store, &s, t, DetectOptions::default())
                .unwrap()
                .verdict
        };
        assert_eq!(at(0.25), Verdict::Malware);
        assert_eq!(at(0.30), Verdict::Benign);
        assert_eq!(at(0.25f64.next_up()), Verdict::Benign);
        assert!(detect_threshold(&store, &s, 0.0, DetectOptions::default()).is_err());
    }

    #[test]
    fn self_match_is_full_fraction() {
        let store = store_of(vec![("m", four_functions())]);
        let r = detect_exact(
            &store,
            &sample("m", four_functions()),
            DetectOptions::default(),
        );
        assert_eq!(r.verdict, Verdict::Malware);
        assert_eq!(r.best().unwrap().fraction, 1.0);
        let opts = DetectOptions {
            granularity: Granularity::Program,
            ..Default::default()
        };
        assert_eq!(
            detect_exact(&store, &sample("m", four_functions()), opts).verdict,
            Verdict::Malware
        );
    }

    #[test]
    fn unrelated_sample_is_benign() {
        let store = store_of(vec![("m", four_functions())]);
        let r = detect_exact(
            &store,
            &sample("b", vec![graph("x", &[&[Unknown], &[Halt]])]),
            DetectOptions::default(),
        );
        assert_eq!(r.verdict, Verdict::Benign);
        assert_eq!(r.record().best_template, None);
    }

    #[test]
    fn empty_template_is_skipped() {
        let store = store_of(vec![("empty", vec![]), ("m", four_functions())]);
        let r = detect_exact(&store, &sample("b", vec![]), DetectOptions::default());
        assert_eq!(r.evidence.len(), 1);
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.verdict, Verdict::Benign);
    }

    #[test]
    fn exhausted_budget_is_inconclusive() {
        let store = store_of(vec![("m", four_functions())]);
        let mut opts = DetectOptions::default();
        opts.matching.budget = 0;
        let r = detect_exact(&store, &sample("m", four_functions()), opts);
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    fn labeled(name: &str, acfgs: Vec<Acfg>, malware: bool) -> LabeledSample {
        LabeledSample {
            graphs: sample(name, acfgs),
            malware,
        }
    }

    #[test]
    fn cross_validation_on_copies() {
        let corpus = vec![
            labeled("m1", four_functions(), true),
            labeled("m2", four_functions(), true),
            labeled("b1", vec![graph("x", &[&[Unknown]])], false),
            labeled("b2", vec![graph("y", &[&[Lock], &[Halt]])], false),
        ];
        let cfg = CvConfig {
            folds: 2,
            train_size: 1,
            threshold: 0.25,
            seed: 7,
            detect: DetectOptions::default(),
        };
        let r = cross_validate(&corpus, cfg).unwrap();
        assert_eq!(r.detection_rate, Some(1.0));
        assert_eq!(r.false_positive_rate, Some(0.0));
        assert_eq!(cross_validate(&corpus, cfg).unwrap().to_json(), r.to_json());
        assert!(matches!(
            cross_validate(&corpus, CvConfig { folds: 3, ..cfg }),
            Err(DetectError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn all_benign_has_no_detection_rate() {
        let corpus = vec![labeled("b1", vec![graph("x", &[&[Unknown]])], false)];
        let store = store_of(vec![("m", four_functions())]);
        let rows = sweep_threshold(&store, &corpus, &[0.5], DetectOptions::default()).unwrap();
        assert_eq!(rows[0].detection_rate, None);
        assert_eq!(rows[0].false_positive_rate, Some(0.0));
    }

    #[test]
    fn sweep_half_shared() {
        let store = store_of(vec![("m", four_functions())]);
        let full = four_functions();
        let corpus = vec![
            labeled("full", full.clone(), true),
            labeled("half", full[..2].to_vec(), true),
            labeled("b", vec![graph("x", &[&[Unknown]])], false),
        ];
        let rows = sweep_threshold(&store, &corpus, &[0.5, 0.6], DetectOptions::default()).unwrap();
        assert_eq!(rows[0].detection_rate, Some(1.0));
        assert_eq!(rows[1].detection_rate, Some(0.5));
    }
}
