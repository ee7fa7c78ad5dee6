use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::splits::shuffle;
use crate::corpus::{detokenize, read_jsonl, write_jsonl, Sentence};
use crate::error::{Error, Result};

pub const SHORT_MAX: usize = 15;
pub const LONG_MAX: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "meaning-ab")]
    MeaningAb,
    #[serde(rename = "fluency")]
    Fluency,
}

impl TaskKind {
    pub fn default_prompt(self) -> &'static str {
        match self {
            TaskKind::MeaningAb => {
                "Which transferred sentence maintains the same semantic intent of the source sentence while changing the style?"
            }
            TaskKind::Fluency => "How fluent is this sentence, from 1 (unreadable) to 4 (perfect)?",
        }
    }

    /// Verdicts an annotator may submit, in display order.
    pub fn verdicts(self) -> Vec<String> {
        match self {
            TaskKind::MeaningAb => vec!["A".into(), "=".into(), "B".into()],
            TaskKind::Fluency => (1..=4).map(|r: u8| r.to_string()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Short,
    Long,
}

impl Bucket {
    /// Short is at most 15 tokens, long 16 to 30; longer sentences have no bucket.
    pub fn of(len: usize) -> Option<Self> {
        match len {
            0 => None,
            1..=SHORT_MAX => Some(Bucket::Short),
            n if n <= LONG_MAX => Some(Bucket::Long),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bucket::Short => "Short",
            Bucket::Long => "Long",
        }
    }
}

/// Parameters of one batch of annotation tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub experiment: String,
    pub kind: TaskKind,
    /// Names of the systems behind `outputs_a` and `outputs_b`.
    pub systems: [String; 2],
    pub prompt: String,
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(experiment: &str, kind: TaskKind, systems: [&str; 2], seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            kind,
            systems: systems.map(String::from),
            prompt: kind.default_prompt().into(),
            seed,
        }
    }
}

/// A task as stored server-side. `systems` and `shown` are the hidden
/// mapping: candidate `k` was produced by `systems[shown[k]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub experiment: String,
    pub kind: TaskKind,
    pub prompt: String,
    pub source: String,
    pub candidates: Vec<String>,
    pub bucket: Bucket,
    pub systems: [String; 2],
    pub shown: Vec<usize>,
    pub seed: u64,
}

/// What an annotator sees. Carries nothing about which system produced
/// which candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub id: String,
    pub kind: TaskKind,
    pub prompt: String,
    pub source: String,
    pub candidates: Vec<String>,
    pub verdicts: Vec<String>,
}

impl AnnotationTask {
    pub fn payload(&self) -> TaskPayload {
        TaskPayload {
            id: self.id.clone(),
            kind: self.kind,
            prompt: self.prompt.clone(),
            source: self.source.clone(),
            candidates: self.candidates.clone(),
            verdicts: self.kind.verdicts(),
        }
    }

    /// Checks that `verdict` is in this task's domain.
    pub fn check(&self, verdict: &Verdict) -> Result<()> {
        match (self.kind, verdict) {
            (TaskKind::MeaningAb, Verdict::A | Verdict::B | Verdict::NoPreference) => Ok(()),
            (TaskKind::Fluency, Verdict::Rating(1..=4)) => Ok(()),
            (TaskKind::Fluency, Verdict::Rating(r)) => {
                Err(Error::InvalidJudgment(format!("fluency rating {r} outside 1-4")))
            }
            (kind, v) => Err(Error::InvalidJudgment(format!("verdict {v:?} does not fit a {kind:?} task"))),
        }
    }
}

/// `"A"`, `"B"` or `"="` for meaning tasks, an integer rating for fluency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict", into = "RawVerdict")]
pub enum Verdict {
    A,
    B,
    NoPreference,
    Rating(i64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawVerdict {
    Rating(i64),
    Choice(String),
}

impl TryFrom<RawVerdict> for Verdict {
    type Error = String;

    fn try_from(raw: RawVerdict) -> std::result::Result<Self, String> {
        match raw {
            RawVerdict::Rating(r) => Ok(Verdict::Rating(r)),
            RawVerdict::Choice(c) => match c.as_str() {
                "A" => Ok(Verdict::A),
                "B" => Ok(Verdict::B),
                "=" => Ok(Verdict::NoPreference),
                other => Err(format!("unknown verdict `{other}`")),
            },
        }
    }
}

impl From<Verdict> for RawVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::A => RawVerdict::Choice("A".into()),
            Verdict::B => RawVerdict::Choice("B".into()),
            Verdict::NoPreference => RawVerdict::Choice("=".into()),
            Verdict::Rating(r) => RawVerdict::Rating(r),
        }
    }
}

/// The body an annotator submits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JudgmentSubmission {
    pub task_id: String,
    pub annotator: String,
    pub verdict: Verdict,
}

/// One logged judgment; `timestamp` is milliseconds since the Unix epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Judgment {
    pub task_id: String,
    pub annotator: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub timestamp: u64,
}

/// Builds blinded tasks from aligned outputs of two systems. Sources outside
/// both length buckets are skipped. Meaning tasks show both candidates in a
/// seeded random order; fluency tasks show one candidate each, and the whole
/// list is shuffled so task ids carry no system information.
pub fn make_tasks(
    sources: &[Sentence],
    outputs_a: &[Sentence],
    outputs_b: &[Sentence],
    spec: &TaskSpec,
) -> Result<Vec<AnnotationTask>> {
    if sources.len() != outputs_a.len() || sources.len() != outputs_b.len() {
        return Err(Error::InvalidArgument(format!(
            "misaligned task inputs: {} sources, {} and {} outputs",
            sources.len(),
            outputs_a.len(),
            outputs_b.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outputs = [outputs_a, outputs_b];
    let task = |id: String, i: usize, shown: Vec<usize>, bucket: Bucket| AnnotationTask {
        id,
        experiment: spec.experiment.clone(),
        kind: spec.kind,
        prompt: spec.prompt.clone(),
        source: detokenize(&sources[i]),
        candidates: shown.iter().map(|&s| detokenize(&outputs[s][i])).collect(),
        bucket,
        systems: spec.systems.clone(),
        shown,
        seed: spec.seed,
    };
    let eligible: Vec<(usize, Bucket)> = sources
        .iter()
        .enumerate()
        .filter_map(|(i, s)| Bucket::of(s.len()).map(|b| (i, b)))
        .collect();
    Ok(match spec.kind {
        TaskKind::MeaningAb => eligible
            .into_iter()
            .enumerate()
            .map(|(k, (i, bucket))| {
                let shown = if rng.gen_bool(0.5) { vec![1, 0] } else { vec![0, 1] };
                task(format!("{}-m{k:04}", spec.experiment), i, shown, bucket)
            })
            .collect(),
        TaskKind::Fluency => {
            let mut items: Vec<(usize, Bucket, usize)> =
                eligible.into_iter().flat_map(|(i, b)| [(i, b, 0), (i, b, 1)]).collect();
            shuffle(&mut items, &mut rng);
            items
                .into_iter()
                .enumerate()
                .map(|(k, (i, bucket, system))| task(format!("{}-f{k:04}", spec.experiment), i, vec![system], bucket))
                .collect()
        }
    })
}

pub fn write_tasks(path: &Path, tasks: &[AnnotationTask]) -> Result<()> {
    write_jsonl(path, tasks)
}

pub fn read_tasks(path: &Path) -> Result<Vec<AnnotationTask>> {
    read_jsonl(path)
}

pub fn read_judgments(path: &Path) -> Result<Vec<Judgment>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(path)
}

/// Experiments in order of first appearance among tasks of `kind`.
fn experiments(tasks: &[AnnotationTask], kind: TaskKind) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tasks.iter().filter(|t| t.kind == kind) {
        if !out.contains(&t.experiment) {
            out.push(t.experiment.clone());
        }
    }
    out
}

fn systems_of(tasks: &[AnnotationTask], kind: TaskKind) -> Result<[String; 2]> {
    let mut of_kind = tasks.iter().filter(|t| t.kind == kind);
    let first = of_kind
        .next()
        .ok_or_else(|| Error::InvalidArgument(format!("no {kind:?} tasks")))?;
    if let Some(t) = of_kind.find(|t| t.systems != first.systems) {
        return Err(Error::InvalidArgument(format!(
            "task `{}` compares {:?}, others compare {:?}",
            t.id, t.systems, first.systems
        )));
    }
    Ok(first.systems.clone())
}

fn task_index(tasks: &[AnnotationTask]) -> HashMap<&str, &AnnotationTask> {
    tasks.iter().map(|t| (t.id.as_str(), t)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeaningRow {
    pub experiment: String,
    pub bucket: Option<Bucket>,
    pub n: usize,
    /// Judgments preferring the first system, no preference, the second system.
    pub counts: [usize; 3],
    pub percent: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeaningTable {
    pub systems: [String; 2],
    pub rows: Vec<MeaningRow>,
    /// Full-scale percentages `[CAE, no preference, BST]` per experiment.
    pub reference: BTreeMap<String, [f64; 3]>,
}

pub fn reference_meaning() -> BTreeMap<String, [f64; 3]> {
    [
        ("gender", [15.23, 41.36, 43.41]),
        ("political", [14.55, 45.90, 39.55]),
        ("sentiment", [35.91, 40.91, 23.18]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn meaning_row(experiment: &str, bucket: Option<Bucket>, counts: [usize; 3]) -> MeaningRow {
    let n: usize = counts.iter().sum();
    let percent = counts.map(|c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 });
    MeaningRow {
        experiment: experiment.to_string(),
        bucket,
        n,
        counts,
        percent,
    }
}

/// Unblinds meaning judgments and tabulates preference percentages per
/// experiment, optionally followed by short and long rows.
pub fn aggregate_meaning(tasks: &[AnnotationTask], judgments: &[Judgment], by_bucket: bool) -> Result<MeaningTable> {
    let systems = systems_of(tasks, TaskKind::MeaningAb)?;
    let index = task_index(tasks);
    let mut counts: HashMap<(String, Bucket), [usize; 3]> = HashMap::new();
    for j in judgments {
        let task = index.get(j.task_id.as_str()).ok_or_else(|| Error::UnknownTask(j.task_id.clone()))?;
        if task.kind != TaskKind::MeaningAb {
            continue;
        }
        let column = match j.verdict {
            Verdict::A => 2 * task.shown[0],
            Verdict::B => 2 * task.shown[1],
            Verdict::NoPreference => 1,
            Verdict::Rating(_) => {
                return Err(Error::InvalidJudgment(format!("rating on meaning task `{}`", task.id)));
            }
        };
        counts.entry((task.experiment.clone(), task.bucket)).or_insert([0; 3])[column] += 1;
    }
    let mut rows = Vec::new();
    for exp in experiments(tasks, TaskKind::MeaningAb) {
        let get = |b: Bucket| counts.get(&(exp.clone(), b)).copied().unwrap_or([0; 3]);
        let (short, long) = (get(Bucket::Short), get(Bucket::Long));
        rows.push(meaning_row(&exp, None, [0, 1, 2].map(|k| short[k] + long[k])));
        if by_bucket {
            rows.push(meaning_row(&exp, Some(Bucket::Short), short));
            rows.push(meaning_row(&exp, Some(Bucket::Long), long));
        }
    }
    Ok(MeaningTable {
        systems,
        rows,
        reference: reference_meaning(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluencyRow {
    pub label: String,
    pub n: [usize; 2],
    /// Mean rating per system; absent when the system has no ratings here.
    pub mean: [Option<f64>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluencyTable {
    pub systems: [String; 2],
    pub rows: Vec<FluencyRow>,
    /// Full-scale mean ratings `[CAE, BST]` per row label.
    pub reference: BTreeMap<String, [f64; 2]>,
}

pub fn reference_fluency() -> BTreeMap<String, [f64; 2]> {
    [
        ("Gender", [2.42, 2.81]),
        ("Political slant", [2.79, 2.87]),
        ("Sentiment", [3.09, 3.18]),
        ("Overall", [2.70, 2.91]),
        ("Overall Short", [3.05, 3.11]),
        ("Overall Long", [2.18, 2.62]),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Copy, Default)]
struct Sums {
    total: [i64; 2],
    n: [usize; 2],
}

impl Sums {
    fn add(&mut self, system: usize, rating: i64) {
        self.total[system] += rating;
        self.n[system] += 1;
    }

    fn merged(self, other: Sums) -> Sums {
        Sums {
            total: [self.total[0] + other.total[0], self.total[1] + other.total[1]],
            n: [self.n[0] + other.n[0], self.n[1] + other.n[1]],
        }
    }

    fn row(self, label: &str) -> FluencyRow {
        FluencyRow {
            label: label.to_string(),
            n: self.n,
            mean: [0, 1].map(|s| (self.n[s] > 0).then(|| self.total[s] as f64 / self.n[s] as f64)),
        }
    }
}

/// Mean fluency rating per system: one row per experiment, then overall,
/// overall short and overall long.
pub fn aggregate_fluency(tasks: &[AnnotationTask], judgments: &[Judgment]) -> Result<FluencyTable> {
    let systems = systems_of(tasks, TaskKind::Fluency)?;
    let index = task_index(tasks);
    let mut sums: HashMap<(String, Bucket), Sums> = HashMap::new();
    for j in judgments {
        let task = index.get(j.task_id.as_str()).ok_or_else(|| Error::UnknownTask(j.task_id.clone()))?;
        if task.kind != TaskKind::Fluency {
            continue;
        }
        let Verdict::Rating(r) = j.verdict else {
            return Err(Error::InvalidJudgment(format!("choice on fluency task `{}`", task.id)));
        };
        sums.entry((task.experiment.clone(), task.bucket)).or_default().add(task.shown[0], r);
    }
    let get = |exp: &str, b: Bucket| sums.get(&(exp.to_string(), b)).copied().unwrap_or_default();
    let exps = experiments(tasks, TaskKind::Fluency);
    let mut rows = Vec::new();
    let (mut short, mut long) = (Sums::default(), Sums::default());
    for exp in &exps {
        let (s, l) = (get(exp, Bucket::Short), get(exp, Bucket::Long));
        rows.push(s.merged(l).row(exp));
        short = short.merged(s);
        long = long.merged(l);
    }
    rows.push(short.merged(long).row("Overall"));
    rows.push(short.row("Overall Short"));
    rows.push(long.row("Overall Long"));
    Ok(FluencyTable {
        systems,
        rows,
        reference: reference_fluency(),
    })
}
