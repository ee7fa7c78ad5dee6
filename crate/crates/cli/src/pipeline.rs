//! The stages behind each subcommand. Every stage reads its inputs from the
//! run root, writes its outputs there, and records both in a manifest under
//! `<reports>/manifests/<stage>.json`.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use bst_core::corpus::{
    build_vocab, detokenize, gen_synthetic, make_splits, read_parallel_jsonl, read_styled_jsonl, tokenize,
    write_parallel_jsonl, write_styled_jsonl, ParallelCorpus, Sentence, SplitManifest, Style, StyledCorpus,
};
use bst_core::eval::{
    aggregate_fluency, aggregate_meaning, make_tasks, mean_content_retention, read_judgments, read_tasks,
    render_fluency, render_meaning, render_transfer, stopwords, transfer_accuracy, write_tasks, TaskKind, TaskSpec,
    TransferOutputs, TransferReport,
};
use bst_core::lexicon::{lexicon_from_corpus, read_lexicon, write_lexicon, StyleLexicon};
use bst_core::seq2seq::{backtranslate_batch, evaluate, train_mt, Direction, EncoderOutput, MTModel};
use bst_core::style::{train_classifier, train_style_generators, Classifier, StyleGenerators, TransferPipeline};
use bst_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ClassifierRole, PipelineConfig, Stage};
use crate::manifest::{file_hash, RunManifest};

const SPLITS: [&str; 4] = ["class", "train", "dev", "test"];
const MT_PARTS: [&str; 3] = ["train", "dev", "test"];

/// One line of transfer output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub src: String,
    pub out: String,
    pub target_style: String,
}

/// A transfer input line; `style` is informational.
#[derive(Deserialize)]
struct InputRecord {
    text: String,
}

#[derive(Serialize)]
struct MtSummary {
    direction: String,
    steps: usize,
    best_step: usize,
    best_dev_accuracy: f64,
    test_accuracy: f64,
    test_bleu: f64,
}

#[derive(Serialize)]
struct ClassifierSummary {
    role: String,
    trained_on: String,
    vocab_size: usize,
    steps: usize,
    best_step: usize,
    best_dev_accuracy: f64,
    test_accuracy: f64,
}

#[derive(Serialize)]
struct StyleSummary {
    steps: usize,
    lambda_c: f64,
    final_tau: f64,
    max_identity_gap: f64,
    guide_hash_before: String,
    guide_hash_after: String,
    dev_reconstruction: [f64; 2],
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(context: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        context: context.display().to_string(),
        source,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(io(p)),
        _ => Ok(()),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(io(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), n + 1),
            source,
        })?);
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(io(path))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(json_err(path))?;
        w.write_all(b"\n").map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

fn read_transfer_records(path: &Path) -> Result<Vec<TransferRecord>> {
    read_lines(path)
}

/// A configured run rooted at a directory.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub root: PathBuf,
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(root: impl Into<PathBuf>, config: PipelineConfig) -> Self {
        Self {
            root: root.into(),
            config,
        }
    }

    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join(&self.config.paths.data).join(name)
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(&self.config.paths.checkpoints).join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(&self.config.paths.reports).join(name)
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.data(&format!("splits/{split}.jsonl"))
    }

    pub fn mt_path(&self, part: &str) -> PathBuf {
        self.data(&format!("mt/{part}.jsonl"))
    }

    pub fn mt_checkpoint(&self, direction: Direction) -> PathBuf {
        match direction {
            Direction::EToF => self.checkpoint("mt.ef.ckpt"),
            Direction::FToE => self.checkpoint("mt.fe.ckpt"),
        }
    }

    pub fn classifier_checkpoint(&self, role: ClassifierRole) -> PathBuf {
        self.checkpoint(&format!("classifier.{}.ckpt", role.name()))
    }

    pub fn lexicon_path(&self, role: ClassifierRole) -> PathBuf {
        self.checkpoint(&format!("lexicon.{}.jsonl", role.name()))
    }

    pub fn generators_checkpoint(&self) -> PathBuf {
        self.checkpoint("generators.ckpt")
    }

    pub fn manifest_path(&self, command: &str) -> PathBuf {
        self.report(&format!("manifests/{command}.json"))
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.config.hash(), self.config.seed)
    }

    fn input(&self, m: &mut RunManifest, path: &Path) -> Result<()> {
        m.inputs.insert(self.rel(path), file_hash(path)?);
        Ok(())
    }

    fn output(&self, m: &mut RunManifest, path: &Path) -> Result<()> {
        m.outputs.insert(self.rel(path), file_hash(path)?);
        Ok(())
    }

    fn finish(&self, m: RunManifest) -> Result<RunManifest> {
        m.write(&self.manifest_path(&m.command))?;
        Ok(m)
    }

    fn style_names(&self) -> Result<[String; 2]> {
        read_json(&self.data("splits/styles.json"))
    }

    pub fn read_split(&self, split: &str) -> Result<StyledCorpus> {
        read_styled_jsonl(&self.split_path(split), Some(&self.style_names()?))
    }

    fn style_by_name(&self, name: &str) -> Result<Style> {
        let names = self.style_names()?;
        names
            .iter()
            .position(|n| n == name)
            .and_then(Style::from_index)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown style `{name}`; styles are {names:?}")))
    }

    /// Writes the synthetic parallel and styled corpora.
    pub fn synth_data(&self) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("synth-data");
            let seed = self.config.derived_seed(Stage::Synthetic);
            let (parallel, styled, _) = gen_synthetic(&self.config.synthetic, seed)?;
            let (pp, sp) = (self.data("parallel.jsonl"), self.data("styled.jsonl"));
            write_parallel_jsonl(&pp, &parallel)?;
            write_styled_jsonl(&sp, &styled)?;
            self.output(&mut m, &pp)?;
            self.output(&mut m, &sp)?;
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("synth-data"))
    }

    /// Splits the styled corpus four ways and the parallel corpus three ways.
    pub fn prepare(&self, styled: Option<&Path>, parallel: Option<&Path>) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("prepare");
            let sp = styled.map(Path::to_path_buf).unwrap_or_else(|| self.data("styled.jsonl"));
            let pp = parallel.map(Path::to_path_buf).unwrap_or_else(|| self.data("parallel.jsonl"));
            self.input(&mut m, &sp)?;
            self.input(&mut m, &pp)?;

            let corpus = read_styled_jsonl(&sp, None)?;
            let spec = self.config.split_spec();
            let splits = make_splits(&corpus, &spec)?;
            write_json(&self.data("splits/styles.json"), &corpus.style_names)?;
            let mut outputs = std::collections::BTreeMap::new();
            for (name, part) in SPLITS.iter().zip([&splits.class, &splits.train, &splits.dev, &splits.test]) {
                let path = self.split_path(name);
                write_styled_jsonl(&path, part)?;
                self.output(&mut m, &path)?;
                outputs.insert(self.rel(&path), file_hash(&path)?);
            }
            let manifest = SplitManifest {
                source: self.rel(&sp),
                source_hash: file_hash(&sp)?,
                spec,
                outputs,
            };
            write_json(&self.data("splits/manifest.json"), &manifest)?;

            let par = read_parallel_jsonl(&pp)?;
            let MtSplitSizes { train, dev, test } = self.mt_sizes(par.len())?;
            for (name, range) in MT_PARTS.iter().zip([0..train, train..train + dev, train + dev..train + dev + test]) {
                let path = self.mt_path(name);
                write_parallel_jsonl(&path, &par.slice(range))?;
                self.output(&mut m, &path)?;
            }
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("prepare"))
    }

    fn mt_sizes(&self, n: usize) -> Result<MtSplitSizes> {
        let (dev, test) = (self.config.mt_split.dev, self.config.mt_split.test);
        if n <= dev + test {
            return Err(Error::InvalidArgument(format!(
                "parallel corpus of {n} pairs cannot hold {dev} dev and {test} test pairs plus training data"
            )));
        }
        Ok(MtSplitSizes {
            train: n - dev - test,
            dev,
            test,
        })
    }

    /// Extracts one lexicon per classifier from that classifier's training split.
    pub fn lexicon(&self) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("lexicon");
            for role in [ClassifierRole::Guide, ClassifierRole::Judge] {
                let split = training_split(role);
                self.input(&mut m, &self.split_path(split))?;
                let lex = lexicon_from_corpus(&self.read_split(split)?, self.config.lexicon.k)?;
                let path = self.lexicon_path(role);
                write_lexicon(&path, &lex)?;
                self.output(&mut m, &path)?;
            }
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("lexicon"))
    }

    /// Trains the e→f and f→e translators.
    pub fn train_mt(&self) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("train-mt");
            let parts: Vec<ParallelCorpus> = MT_PARTS
                .iter()
                .map(|p| {
                    self.input(&mut m, &self.mt_path(p))?;
                    read_parallel_jsonl(&self.mt_path(p))
                })
                .collect::<Result<_>>()?;
            let config = self.config.mt_config();
            let mut summaries = Vec::new();
            for direction in [Direction::EToF, Direction::FToE] {
                let [train, dev, test] = match direction {
                    Direction::EToF => [parts[0].clone(), parts[1].clone(), parts[2].clone()],
                    Direction::FToE => [parts[0].reversed(), parts[1].reversed(), parts[2].reversed()],
                };
                let start = Instant::now();
                let (model, report) = train_mt(&train, &dev, direction, &config)?;
                log::info!("{} trained in {:.1?}", direction.as_str(), start.elapsed());
                let (test_accuracy, test_bleu) = evaluate(&model, &test)?;
                let path = self.mt_checkpoint(direction);
                model.save(&path)?;
                self.output(&mut m, &path)?;
                summaries.push(MtSummary {
                    direction: direction.as_str().into(),
                    steps: report.steps,
                    best_step: report.best_step,
                    best_dev_accuracy: report.best_dev_accuracy,
                    test_accuracy,
                    test_bleu,
                });
            }
            let path = self.report("mt.json");
            write_json(&path, &summaries)?;
            self.output(&mut m, &path)?;
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("train-mt"))
    }

    /// Trains the guide classifier on the training split and the judge on the
    /// held-out class split, over one shared vocabulary.
    pub fn train_classifier(&self) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("train-classifier");
            for split in SPLITS {
                self.input(&mut m, &self.split_path(split))?;
            }
            let (class, train, dev, test) = (
                self.read_split("class")?,
                self.read_split("train")?,
                self.read_split("dev")?,
                self.read_split("test")?,
            );
            let vocab = build_vocab(
                train.sentences.iter().chain(&class.sentences).map(Vec::as_slice),
                self.config.style_vocab_size,
            )?;
            let mut summaries = Vec::new();
            for role in [ClassifierRole::Guide, ClassifierRole::Judge] {
                let lex_path = self.lexicon_path(role);
                self.input(&mut m, &lex_path)?;
                let lexicon = read_lexicon(&lex_path)?;
                let data = if role == ClassifierRole::Guide { &train } else { &class };
                let (model, report) =
                    train_classifier(data, &dev, &vocab, &lexicon, &self.config.classifier_config(role))?;
                let path = self.classifier_checkpoint(role);
                model.save(&path)?;
                self.output(&mut m, &path)?;
                summaries.push(ClassifierSummary {
                    role: role.name().into(),
                    trained_on: training_split(role).into(),
                    vocab_size: vocab.len(),
                    steps: report.steps,
                    best_step: report.best_step,
                    best_dev_accuracy: report.best_dev_accuracy,
                    test_accuracy: model.accuracy(&test)?,
                });
            }
            let path = self.report("classifier.json");
            write_json(&path, &summaries)?;
            self.output(&mut m, &path)?;
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("train-classifier"))
    }

    fn load_mt(&self, m: &mut RunManifest) -> Result<(MTModel, MTModel)> {
        let (ef, fe) = (self.mt_checkpoint(Direction::EToF), self.mt_checkpoint(Direction::FToE));
        self.input(m, &ef)?;
        self.input(m, &fe)?;
        Ok((MTModel::load(&ef)?, MTModel::load(&fe)?))
    }

    /// Trains both style generators against the frozen guide classifier.
    pub fn train_style(&self) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("train-style");
            let (mt_ef, mt_fe) = self.load_mt(&mut m)?;
            let guide_path = self.classifier_checkpoint(ClassifierRole::Guide);
            self.input(&mut m, &guide_path)?;
            let guide = Classifier::load(&guide_path)?;
            let guide_hash_before = file_hash(&guide_path)?;
            for split in ["train", "dev"] {
                self.input(&mut m, &self.split_path(split))?;
            }
            let (train, dev) = (self.read_split("train")?, self.read_split("dev")?);

            let start = Instant::now();
            let zs: Vec<EncoderOutput> =
                backtranslate_batch(&train.sentences, &mt_ef, &mt_fe)?.into_iter().map(|b| b.z).collect();
            log::info!("back-translated {} sentences in {:.1?}", zs.len(), start.elapsed());

            let metrics_path = self.report("style_metrics.jsonl");
            ensure_parent(&metrics_path)?;
            let mut metrics = BufWriter::new(std::fs::File::create(&metrics_path).map_err(io(&metrics_path))?);
            let config = self.config.transfer_config();
            let start = Instant::now();
            let (gens, stats) = train_style_generators(&train, &zs, &guide, &config, Some(&mut metrics))?;
            metrics.flush().map_err(io(&metrics_path))?;
            drop(metrics);
            log::info!("generators trained in {:.1?}", start.elapsed());

            let path = self.generators_checkpoint();
            gens.save(&path)?;
            let dev_bt = backtranslate_batch(&dev.sentences, &mt_ef, &mt_fe)?;
            let mut dev_reconstruction = [0.0; 2];
            for style in Style::BOTH {
                let idx: Vec<usize> = (0..dev.len()).filter(|&i| dev.labels[i] == style).collect();
                let zs: Vec<&EncoderOutput> = idx.iter().map(|&i| &dev_bt[i].z).collect();
                let refs: Vec<Sentence> = idx.iter().map(|&i| dev.sentences[i].clone()).collect();
                dev_reconstruction[style.index()] = gens.reconstruction_accuracy(style, &zs, &refs)?;
            }
            let summary = StyleSummary {
                steps: stats.records.len(),
                lambda_c: stats.lambda_c,
                final_tau: stats.records.last().map_or(config.tau0, |r| r.tau),
                max_identity_gap: stats.max_identity_gap(),
                guide_hash_before,
                guide_hash_after: file_hash(&guide_path)?,
                dev_reconstruction,
            };
            let summary_path = self.report("style.json");
            write_json(&summary_path, &summary)?;
            for p in [&path, &metrics_path, &summary_path] {
                self.output(&mut m, p)?;
            }
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("train-style"))
    }

    fn transfer_pipeline(&self, m: &mut RunManifest) -> Result<TransferPipeline> {
        let (mt_ef, mt_fe) = self.load_mt(m)?;
        let path = self.generators_checkpoint();
        self.input(m, &path)?;
        Ok(TransferPipeline {
            mt_ef,
            mt_fe,
            generators: StyleGenerators::load(&path)?,
        })
    }

    fn transfer_records(
        &self,
        pipeline: &TransferPipeline,
        sentences: &[Sentence],
        target: Style,
    ) -> Result<Vec<TransferRecord>> {
        let names = self.style_names()?;
        Ok(pipeline
            .transfer_batch(sentences, target)?
            .into_iter()
            .map(|t| TransferRecord {
                src: detokenize(&t.source),
                out: detokenize(&t.output),
                target_style: names[target.index()].clone(),
            })
            .collect())
    }

    /// Transfers every `{"text"}` line of `input` into `target`.
    pub fn transfer_file(&self, input: &Path, target: &str, out: &Path) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("transfer");
            let target = self.style_by_name(target)?;
            let pipeline = self.transfer_pipeline(&mut m)?;
            self.input(&mut m, input)?;
            let sentences: Vec<Sentence> = read_lines::<InputRecord>(input)?
                .iter()
                .map(|r| tokenize(&r.text))
                .collect::<Result<_>>()?;
            write_lines(out, &self.transfer_records(&pipeline, &sentences, target)?)?;
            self.output(&mut m, out)?;
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("transfer"))
    }

    /// Transfers each test sentence into the other style.
    pub fn transfer_test(&self) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("transfer");
            let pipeline = self.transfer_pipeline(&mut m)?;
            self.input(&mut m, &self.split_path("test"))?;
            let test = self.read_split("test")?;
            let mut records = Vec::new();
            for style in Style::BOTH {
                let src: Vec<Sentence> = test.of_style(style).cloned().collect();
                records.extend(self.transfer_records(&pipeline, &src, style.other())?);
            }
            let out = self.report("transfer.jsonl");
            write_lines(&out, &records)?;
            self.output(&mut m, &out)?;
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("transfer"))
    }

    /// Scores `reports/transfer.jsonl` with the judge classifier and writes
    /// the transfer report as JSON and text.
    pub fn evaluate(&self) -> Result<TransferReport> {
        let run = || -> Result<_> {
            let mut m = self.manifest("evaluate");
            let input = self.report("transfer.jsonl");
            let judge_path = self.classifier_checkpoint(ClassifierRole::Judge);
            let lex_path = self.lexicon_path(ClassifierRole::Judge);
            let gens_path = self.generators_checkpoint();
            for p in [&input, &judge_path, &lex_path, &gens_path, &self.split_path("class"), &self.split_path("train")] {
                self.input(&mut m, p)?;
            }
            let judge = Classifier::load(&judge_path)?;
            let lexicon: StyleLexicon = read_lexicon(&lex_path)?;
            let gens = StyleGenerators::load(&gens_path)?;
            let records = read_transfer_records(&input)?;
            let mut outputs = TransferOutputs {
                style_names: self.style_names()?,
                sentences: Vec::with_capacity(records.len()),
                targets: Vec::with_capacity(records.len()),
            };
            let mut sources = Vec::with_capacity(records.len());
            for r in &records {
                sources.push(tokenize(&r.src)?);
                outputs
                    .sentences
                    .push(if r.out.trim().is_empty() { Vec::new() } else { tokenize(&r.out)? });
                outputs.targets.push(self.style_by_name(&r.target_style)?);
            }
            let mut report = transfer_accuracy(&outputs, gens.vocab(), &judge, &self.config.experiment)?;
            let (class, train) = (self.read_split("class")?, self.read_split("train")?);
            let stop = stopwords(class.sentences.iter().chain(&train.sentences), self.config.eval.stopwords);
            report.content_retention = Some(mean_content_retention(&sources, &outputs.sentences, &lexicon, &stop)?);

            let (json, text) = (self.report("transfer_report.json"), self.report("transfer_report.txt"));
            write_json(&json, &report)?;
            std::fs::write(&text, render_transfer(&report)).map_err(io(&text))?;
            self.output(&mut m, &json)?;
            self.output(&mut m, &text)?;
            self.finish(m)?;
            Ok(report)
        };
        run().map_err(|e| e.in_stage("evaluate"))
    }

    /// Tabulates a judgment log against its tasks into meaning and fluency
    /// reports, for whichever kinds the tasks contain.
    pub fn evaluate_judgments(&self, tasks: &Path, judgments: &Path, by_bucket: bool) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("evaluate");
            self.input(&mut m, tasks)?;
            self.input(&mut m, judgments)?;
            let tasks = read_tasks(tasks)?;
            let judgments = read_judgments(judgments)?;
            if tasks.iter().any(|t| t.kind == TaskKind::MeaningAb) {
                let table = aggregate_meaning(&tasks, &judgments, by_bucket)?;
                let (json, text) = (self.report("meaning.json"), self.report("meaning.txt"));
                write_json(&json, &table)?;
                std::fs::write(&text, render_meaning(&table)).map_err(io(&text))?;
                self.output(&mut m, &json)?;
                self.output(&mut m, &text)?;
            }
            if tasks.iter().any(|t| t.kind == TaskKind::Fluency) {
                let table = aggregate_fluency(&tasks, &judgments)?;
                let (json, text) = (self.report("fluency.json"), self.report("fluency.txt"));
                write_json(&json, &table)?;
                std::fs::write(&text, render_fluency(&table)).map_err(io(&text))?;
                self.output(&mut m, &json)?;
                self.output(&mut m, &text)?;
            }
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("evaluate"))
    }

    /// Builds annotation tasks from two aligned transfer-output files.
    pub fn make_tasks(&self, a: &Path, b: &Path, spec: &TaskSpec, out: &Path) -> Result<RunManifest> {
        let run = || -> Result<_> {
            let mut m = self.manifest("make-tasks");
            self.input(&mut m, a)?;
            self.input(&mut m, b)?;
            let (ra, rb) = (read_transfer_records(a)?, read_transfer_records(b)?);
            if ra.len() != rb.len() || ra.iter().zip(&rb).any(|(x, y)| x.src != y.src) {
                return Err(Error::InvalidArgument(format!(
                    "{} and {} are not aligned on their sources",
                    a.display(),
                    b.display()
                )));
            }
            let toks = |s: &str| if s.trim().is_empty() { Ok(Vec::new()) } else { tokenize(s) };
            let sources: Vec<Sentence> = ra.iter().map(|r| tokenize(&r.src)).collect::<Result<_>>()?;
            let oa: Vec<Sentence> = ra.iter().map(|r| toks(&r.out)).collect::<Result<_>>()?;
            let ob: Vec<Sentence> = rb.iter().map(|r| toks(&r.out)).collect::<Result<_>>()?;
            let tasks = make_tasks(&sources, &oa, &ob, spec)?;
            write_tasks(out, &tasks)?;
            self.output(&mut m, out)?;
            self.finish(m)
        };
        run().map_err(|e| e.in_stage("make-tasks"))
    }

    /// Every stage from synthetic data to the transfer report.
    pub fn run_all(&self) -> Result<TransferReport> {
        self.synth_data()?;
        self.prepare(None, None)?;
        self.lexicon()?;
        self.train_mt()?;
        self.train_classifier()?;
        self.train_style()?;
        self.transfer_test()?;
        self.evaluate()
    }
}

struct MtSplitSizes {
    train: usize,
    dev: usize,
    test: usize,
}

fn training_split(role: ClassifierRole) -> &'static str {
    match role {
        ClassifierRole::Guide => "train",
        ClassifierRole::Judge => "class",
    }
}
