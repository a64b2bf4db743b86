use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use serde::Serialize;
use tcprobe::backend::wire::spawn_server;
use tcprobe::backend::{load_grammar, Backend, BackendDescriptor, BackendKind, OracleBackend};
use tcprobe::classifier::{classify, ClassifiedSentence, ClassifierConfig, Profile, PromptSpec};
use tcprobe::datasets::{
    augment_content_replacement, augment_random_synonym, datasets_from_records,
    ChickenRabbitRanges, DatasetRecord, ProbeDataset, TaskKind, TaskSampler,
};
use tcprobe::metrics::VarianceReport;
use tcprobe::oracle::{
    check_hierarchical_generation, check_label_consistency, common_words, verify_sparse_dependency,
    DependencyMatrix, Oracle, OracleConfig,
};
use tcprobe::probe::probe_all;
use tcprobe::types::{LabeledSequence, TcLabel};
use tcprobe::wordseg::{split_words, BoundaryRule};

use crate::config::{pick, FileConfig};
use crate::run::Run;
use crate::{AugmentMode, Cli, Command, GenKind, GlobalOpts, InputError};

fn input(message: impl Into<String>) -> anyhow::Error {
    InputError(message.into()).into()
}

/// Global options after applying the config file and defaults.
#[derive(Clone, Debug, Serialize)]
struct Resolved {
    seed: u64,
    out: PathBuf,
    backend: Option<String>,
    top_k: usize,
    timeout_secs: u64,
    max_retries: u32,
    boundary_chars: String,
}

struct Ctx {
    resolved: Resolved,
    file: FileConfig,
    rule: BoundaryRule,
}

impl Ctx {
    fn new(global: &GlobalOpts) -> anyhow::Result<Self> {
        let file = match &global.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let default_rule: String = BoundaryRule::default().boundary_prefixes.iter().collect();
        let boundary_chars = file.boundary_chars.clone().unwrap_or(default_rule);
        let rule = BoundaryRule::new(boundary_chars.chars())
            .map_err(|e| input(format!("boundary_chars: {e}")))?;
        let backend = global
            .backend
            .clone()
            .or_else(|| global.endpoint.as_ref().map(|u| format!("remote:{u}")))
            .or_else(|| file.backend.clone());
        let resolved = Resolved {
            seed: pick(global.seed, file.seed, 0),
            out: pick(global.out.clone(), file.out.clone(), PathBuf::from("out")),
            backend,
            top_k: pick(global.top_k, file.top_k, tcprobe::backend::DEFAULT_TOP_K),
            timeout_secs: file.timeout_secs.unwrap_or(30),
            max_retries: file.max_retries.unwrap_or(3),
            boundary_chars,
        };
        Ok(Self {
            resolved,
            file,
            rule,
        })
    }

    fn backend_descriptor(&self, default_grammar: &str) -> anyhow::Result<BackendDescriptor> {
        let spec = self
            .resolved
            .backend
            .clone()
            .unwrap_or_else(|| format!("oracle:{default_grammar}"));
        let mut d = BackendDescriptor::parse(&spec).map_err(|e| input(e.to_string()))?;
        d.top_k = self.resolved.top_k;
        d.timeout = Duration::from_secs(self.resolved.timeout_secs);
        d.max_retries = self.resolved.max_retries;
        Ok(d)
    }

    /// Connects the backend; an oracle backend uses the dataset's own
    /// sampler so that custom word pools stay in its domain.
    fn connect(
        &self,
        default_grammar: &str,
        sampler: Option<&TaskSampler>,
    ) -> anyhow::Result<(BackendDescriptor, Arc<dyn Backend>)> {
        let d = self.backend_descriptor(default_grammar)?;
        let backend: Arc<dyn Backend> = match (&d.kind, sampler) {
            (BackendKind::Oracle(name), Some(s)) if name == &s.grammar().name => Arc::new(
                OracleBackend::new(Oracle::from_grammar(s.grammar().clone()), d.top_k),
            ),
            _ => d.connect().map_err(|e| match e {
                tcprobe::backend::BackendError::Descriptor(_)
                | tcprobe::backend::BackendError::Oracle(_) => input(e.to_string()),
                e => anyhow::Error::new(e),
            })?,
        };
        Ok((d, backend))
    }
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::new(&cli.global)?;
    match cli.command {
        Command::Gen {
            kind,
            n,
            replacements,
            answers_per,
            pool,
        } => cmd_gen(&ctx, kind, n, replacements, answers_per, pool),
        Command::Probe { dataset } => cmd_probe(&ctx, &dataset),
        Command::Classify {
            dataset,
            prompt_spec,
            sentence,
            profile,
            threshold,
        } => cmd_classify(
            &ctx,
            dataset,
            prompt_spec,
            sentence,
            profile.map(Into::into),
            threshold,
        ),
        Command::ServeOracle { grammar, addr } => cmd_serve_oracle(&ctx, &grammar, &addr),
        Command::CheckHierarchy {
            grammar,
            samples,
            dependency,
            cap,
        } => cmd_check_hierarchy(&ctx, &grammar, &samples, dependency, cap),
        Command::Augment {
            dataset,
            mode,
            k,
            synonyms,
            p_replace,
            pool,
        } => cmd_augment(&ctx, &dataset, mode, k, synonyms, p_replace, pool),
    }
}

fn task_kind(kind: GenKind) -> TaskKind {
    match kind {
        GenKind::ConcatLetters => TaskKind::ConcatLastLetter,
        GenKind::ConcatAlt => TaskKind::ConcatAlt,
        GenKind::ChickenRabbit => TaskKind::ChickenRabbit,
    }
}

fn kind_of_grammar(name: &str) -> Option<TaskKind> {
    [
        TaskKind::ConcatLastLetter,
        TaskKind::ConcatAlt,
        TaskKind::ChickenRabbit,
    ]
    .into_iter()
    .find(|k| k.grammar_name() == name)
}

fn read_pool(run: &mut Run, pool: Option<&Path>) -> anyhow::Result<Vec<String>> {
    match pool {
        None => Ok(common_words()),
        Some(p) => Ok(run
            .read_input_text(p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect()),
    }
}

fn sampler_for(
    ctx: &Ctx,
    run: &mut Run,
    kind: TaskKind,
    pool: Option<&Path>,
) -> anyhow::Result<TaskSampler> {
    let sampler = match kind {
        TaskKind::ChickenRabbit => {
            let d = ChickenRabbitRanges::default();
            TaskSampler::chicken_rabbit(ChickenRabbitRanges {
                heads: ctx.file.gen.heads.unwrap_or(d.heads),
                legs: ctx.file.gen.legs.unwrap_or(d.legs),
            })
        }
        _ => TaskSampler::concat(kind, &read_pool(run, pool)?),
    };
    sampler.map_err(|e| input(e.to_string()))
}

fn records_of(datasets: &[ProbeDataset]) -> Vec<DatasetRecord> {
    datasets
        .iter()
        .enumerate()
        .flat_map(|(g, d)| d.to_records(g as u64))
        .collect()
}

#[derive(Serialize)]
struct GenConfig<'a> {
    global: &'a Resolved,
    kind: TaskKind,
    n: usize,
    replacements: usize,
    answers_per: Option<usize>,
    pool: Option<PathBuf>,
    ranges: Option<ChickenRabbitRanges>,
}

fn cmd_gen(
    ctx: &Ctx,
    kind: GenKind,
    n: Option<usize>,
    replacements: Option<usize>,
    answers_per: Option<usize>,
    pool: Option<PathBuf>,
) -> anyhow::Result<()> {
    let g = &ctx.file.gen;
    let kind = task_kind(kind);
    let n = pick(n, g.n, 100);
    let replacements = pick(replacements, g.replacements, 8);
    let answers_per = answers_per.or(g.answers_per);
    let pool = pool.or_else(|| g.pool.clone());
    let mut run = Run::create(&ctx.resolved.out)?;
    let sampler = sampler_for(ctx, &mut run, kind, pool.as_deref())?;
    let seed = ctx.resolved.seed;
    let datasets = sampler
        .probe_datasets(n, replacements, seed)
        .map_err(|e| input(e.to_string()))?;
    run.write_jsonl("dataset.jsonl", &records_of(&datasets))?;
    let mut pairs = 0;
    if let Some(k) = answers_per {
        let corpus = augment_content_replacement(&sampler, &datasets, k, seed)
            .map_err(|e| input(e.to_string()))?;
        pairs = corpus.len();
        run.write_jsonl("qa.jsonl", &corpus)?;
    }
    let ranges = (kind == TaskKind::ChickenRabbit).then(|| {
        let d = ChickenRabbitRanges::default();
        ChickenRabbitRanges {
            heads: g.heads.unwrap_or(d.heads),
            legs: g.legs.unwrap_or(d.legs),
        }
    });
    run.finish(
        "gen",
        &GenConfig {
            global: &ctx.resolved,
            kind,
            n,
            replacements,
            answers_per,
            pool,
            ranges,
        },
    )?;
    println!(
        "wrote {} samples with {replacements} replacements each to {}",
        datasets.len(),
        ctx.resolved.out.join("dataset.jsonl").display()
    );
    if answers_per.is_some() {
        println!(
            "wrote {pairs} question/answer pairs to {}",
            ctx.resolved.out.join("qa.jsonl").display()
        );
    }
    Ok(())
}

fn parse_records(text: &str, path: &Path) -> anyhow::Result<Vec<DatasetRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn load_datasets(ctx: &Ctx, run: &mut Run, path: &Path) -> anyhow::Result<Vec<ProbeDataset>> {
    let text = run.read_input_text(path)?;
    let records = parse_records(&text, path)?;
    let datasets = datasets_from_records(&records, &ctx.rule).map_err(|e| input(e.to_string()))?;
    if datasets.is_empty() {
        bail!(InputError(format!("{} holds no samples", path.display())));
    }
    if datasets
        .iter()
        .any(|d| d.grammar_name != datasets[0].grammar_name)
    {
        bail!(InputError(format!("{} mixes grammars", path.display())));
    }
    Ok(datasets)
}

/// The task sampler matching a dataset, with the dataset's own words added
/// to the pool of the concatenation tasks.
fn sampler_for_datasets(
    ctx: &Ctx,
    run: &mut Run,
    datasets: &[ProbeDataset],
    pool: Option<&Path>,
) -> anyhow::Result<Option<TaskSampler>> {
    let Some(kind) = kind_of_grammar(&datasets[0].grammar_name) else {
        return Ok(None);
    };
    if kind == TaskKind::ChickenRabbit {
        return sampler_for(ctx, run, kind, pool).map(Some);
    }
    let mut words = read_pool(run, pool)?;
    for d in datasets {
        for s in std::iter::once(&d.reference).chain(&d.replacements) {
            for j in 0..s.answer_start() {
                if s.labels[j].is_template() {
                    continue;
                }
                let w = s.words[j].text.trim_start();
                if !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase()) {
                    words.push(w.to_owned());
                }
            }
        }
    }
    words.sort();
    words.dedup();
    Ok(Some(
        TaskSampler::concat(kind, &words).map_err(|e| input(e.to_string()))?,
    ))
}

#[derive(Serialize)]
struct ProbeConfig<'a> {
    global: &'a Resolved,
    dataset: &'a Path,
    backend: &'a BackendDescriptor,
}

#[derive(Serialize)]
struct ProbeSummary {
    samples: usize,
    positions: usize,
    n_replacements: usize,
    auc_roc: f64,
    dmv: f64,
}

fn cmd_probe(ctx: &Ctx, dataset: &Path) -> anyhow::Result<()> {
    let mut run = Run::create(&ctx.resolved.out)?;
    let datasets = load_datasets(ctx, &mut run, dataset)?;
    let sampler = sampler_for_datasets(ctx, &mut run, &datasets, None)?;
    let (descriptor, backend) = ctx.connect(&datasets[0].grammar_name, sampler.as_ref())?;
    let records = probe_all(backend.as_ref(), &datasets, &ctx.rule)?;
    let report = VarianceReport::from_records(records)?;
    let summary = ProbeSummary {
        samples: datasets.len(),
        positions: report.records.len(),
        n_replacements: report.n_replacements,
        auc_roc: report.auc_roc,
        dmv: report.dmv,
    };
    run.write_json("report.json", &report)?;
    run.write_json("summary.json", &summary)?;
    run.write("roc.tsv", report.roc_table().as_bytes())?;
    run.write("variance.tsv", report.variance_bars().as_bytes())?;
    run.finish(
        "probe",
        &ProbeConfig {
            global: &ctx.resolved,
            dataset,
            backend: &descriptor,
        },
    )?;
    println!(
        "auc_roc={:.4} dmv={:.4} positions={} samples={}",
        summary.auc_roc, summary.dmv, summary.positions, summary.samples
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassifyConfigOut<'a> {
    global: &'a Resolved,
    dataset: Option<&'a Path>,
    prompt_spec: Option<&'a Path>,
    backend: &'a BackendDescriptor,
    classifier: &'a ClassifierConfig,
}

#[derive(Serialize)]
struct ClassifiedOut<'a> {
    sample: usize,
    sentence: &'a str,
    result: &'a ClassifiedSentence,
    #[serde(skip_serializing_if = "Option::is_none")]
    agreement: Option<f64>,
}

fn classifier_config(
    ctx: &Ctx,
    profile: Option<Profile>,
    threshold: Option<f64>,
    n_replacements: usize,
) -> anyhow::Result<ClassifierConfig> {
    let c = &ctx.file.classify;
    let mut config = ClassifierConfig::profile(pick(profile, c.profile, Profile::ConcatLetters));
    config.threshold = pick(threshold, c.threshold, config.threshold);
    if let Some(t) = &c.filter_tokens {
        config.filter_tokens = t.clone();
    }
    config.filter_method = c.filter_method.unwrap_or(config.filter_method);
    config.redistribute_min_p = c.redistribute_min_p.unwrap_or(config.redistribute_min_p);
    config.max_content_tokens = c.max_content_tokens.unwrap_or(config.max_content_tokens);
    config.boundary_rule = ctx.rule.clone();
    config.n_replacements = n_replacements;
    config.validate().map_err(|e| input(e.to_string()))?;
    Ok(config)
}

fn cmd_classify(
    ctx: &Ctx,
    dataset: Option<PathBuf>,
    prompt_spec: Option<PathBuf>,
    sentence: Option<String>,
    profile: Option<Profile>,
    threshold: Option<f64>,
) -> anyhow::Result<()> {
    let mut run = Run::create(&ctx.resolved.out)?;
    // (spec, sentence, truth labels)
    let mut jobs: Vec<(PromptSpec, String, Option<Vec<TcLabel>>)> = Vec::new();
    let mut grammar = String::from("concat-last-letter");
    let mut sampler = None;
    match (&dataset, &prompt_spec) {
        (Some(path), _) => {
            let datasets = load_datasets(ctx, &mut run, path)?;
            grammar = datasets[0].grammar_name.clone();
            sampler = sampler_for_datasets(ctx, &mut run, &datasets, None)?;
            for d in &datasets {
                let r = &d.reference;
                let truth = r.labels[r.answer_start()..]
                    .iter()
                    .map(|l| l.binary())
                    .collect();
                let sentence = sentence.clone().unwrap_or_else(|| r.answer_text());
                jobs.push((PromptSpec::from_dataset(d), sentence, Some(truth)));
            }
        }
        (None, Some(path)) => {
            let text = run.read_input_text(path)?;
            let spec: PromptSpec = serde_json::from_str(&text)
                .map_err(|e| input(format!("{}: {e}", path.display())))?;
            let sentence = sentence.ok_or_else(|| input("--sentence is required"))?;
            jobs.push((spec, sentence, None));
        }
        (None, None) => bail!(InputError("give --dataset or --prompt-spec".into())),
    }
    let n = jobs[0].0.n_replacements();
    let config = classifier_config(ctx, profile, threshold, n)?;
    let (descriptor, backend) = ctx.connect(&grammar, sampler.as_ref())?;

    let mut out = Vec::new();
    let mut markup = String::new();
    let (mut agree, mut total) = (0usize, 0usize);
    for (i, (spec, sentence, truth)) in jobs.iter().enumerate() {
        let result = classify(backend.as_ref(), spec, sentence, &config).map_err(|e| match e {
            tcprobe::classifier::ClassifyError::Spec(_)
            | tcprobe::classifier::ClassifyError::Config(_) => input(e.to_string()),
            e => anyhow::Error::new(e),
        })?;
        let agreement = truth.as_ref().map(|t| {
            let hits = result
                .labels()
                .iter()
                .zip(t)
                .filter(|(a, b)| a == b)
                .count();
            agree += hits;
            total += t.len();
            hits as f64 / t.len().max(1) as f64
        });
        markup.push_str(&result.annotate());
        markup.push('\n');
        out.push((i, sentence.clone(), result, agreement));
    }
    let rows: Vec<ClassifiedOut> = out
        .iter()
        .map(|(i, s, r, a)| ClassifiedOut {
            sample: *i,
            sentence: s,
            result: r,
            agreement: *a,
        })
        .collect();
    run.write_jsonl("classified.jsonl", &rows)?;
    run.write("annotated.txt", markup.as_bytes())?;
    run.finish(
        "classify",
        &ClassifyConfigOut {
            global: &ctx.resolved,
            dataset: dataset.as_deref(),
            prompt_spec: prompt_spec.as_deref(),
            backend: &descriptor,
            classifier: &config,
        },
    )?;
    if total > 0 {
        println!(
            "classified {} sentences, label agreement {agree}/{total} ({:.2}%)",
            rows.len(),
            100.0 * agree as f64 / total as f64
        );
    } else {
        for (_, _, r, _) in &out {
            println!("{}", r.annotate());
        }
    }
    Ok(())
}

fn cmd_serve_oracle(ctx: &Ctx, grammar: &str, addr: &str) -> anyhow::Result<()> {
    let g = load_grammar(grammar).map_err(|e| input(e.to_string()))?;
    let oracle = Oracle::new(g, OracleConfig::default()).map_err(|e| input(e.to_string()))?;
    let backend = Arc::new(OracleBackend::new(oracle, ctx.resolved.top_k));
    let server = spawn_server(backend, addr).with_context(|| format!("cannot bind {addr}"))?;
    println!("listening on {}", server.url());
    std::io::stdout().flush()?;
    loop {
        std::thread::park();
    }
}

/// Reads samples given as dataset records or as JSON strings of full text.
fn read_samples(
    run: &mut Run,
    path: &Path,
    oracle: &Oracle,
) -> anyhow::Result<Vec<LabeledSequence>> {
    let text = run.read_input_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let where_ = || format!("{}:{}", path.display(), i + 1);
        let full = if let Ok(r) = serde_json::from_str::<DatasetRecord>(line) {
            format!("{}{}{}", r.prompt, r.question, r.answer)
        } else if let Ok(s) = serde_json::from_str::<String>(line) {
            s
        } else {
            bail!(InputError(format!(
                "{}: not a record or a JSON string",
                where_()
            )));
        };
        let words = split_words(&full, &oracle.grammar().rule);
        let seq = oracle
            .label_words(&words)
            .map_err(|e| input(format!("{}: {e}", where_())))?;
        out.push(seq);
    }
    if out.is_empty() {
        bail!(InputError(format!("{} holds no samples", path.display())));
    }
    Ok(out)
}

#[derive(Serialize)]
struct HierarchyVerdict {
    samples: usize,
    n_levels: u8,
    all_remembered: bool,
    label_consistent: bool,
    combined: Option<String>,
    hierarchical_generation: bool,
    derived_dependency: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    claimed_dependency: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sparse_dependency_verified: Option<bool>,
}

#[derive(Serialize)]
struct HierarchyConfig<'a> {
    global: &'a Resolved,
    grammar: &'a str,
    samples: &'a Path,
    dependency: Option<&'a str>,
    cap: String,
}

fn cmd_check_hierarchy(
    ctx: &Ctx,
    grammar: &str,
    samples: &Path,
    dependency: Option<String>,
    cap: u128,
) -> anyhow::Result<()> {
    let mut run = Run::create(&ctx.resolved.out)?;
    let g = load_grammar(grammar).map_err(|e| input(e.to_string()))?;
    let mut oracle = Oracle::from_grammar(g);
    let seqs = read_samples(&mut run, samples, &oracle)?;
    let mut all_remembered = true;
    for s in &seqs {
        all_remembered &= oracle.remember(s.clone()).is_ok();
    }
    let consistency = check_label_consistency(&seqs, &oracle).map_err(|e| input(e.to_string()))?;
    let generated = check_hierarchical_generation(&seqs, &oracle);
    let claimed = dependency
        .as_deref()
        .map(|d| {
            d.parse::<DependencyMatrix>()
                .map_err(|e| input(e.to_string()))
        })
        .transpose()?;
    let verified = claimed
        .as_ref()
        .map(|m| verify_sparse_dependency(&oracle, m, cap))
        .transpose()
        .map_err(|e| input(e.to_string()))?;
    let verdict = HierarchyVerdict {
        samples: seqs.len(),
        n_levels: oracle.grammar().n_levels,
        all_remembered,
        label_consistent: consistency.consistent,
        combined: consistency.combined.as_ref().map(LabeledSequence::text),
        hierarchical_generation: generated,
        derived_dependency: oracle.grammar().derived_dependency().to_string(),
        claimed_dependency: claimed.as_ref().map(ToString::to_string),
        sparse_dependency_verified: verified,
    };
    run.write_json("hierarchy.json", &verdict)?;
    run.finish(
        "check-hierarchy",
        &HierarchyConfig {
            global: &ctx.resolved,
            grammar,
            samples,
            dependency: dependency.as_deref(),
            cap: cap.to_string(),
        },
    )?;
    println!(
        "label_consistent={} hierarchical_generation={}{}",
        verdict.label_consistent,
        verdict.hierarchical_generation,
        verified.map_or(String::new(), |v| format!(
            " sparse_dependency_verified={v}"
        ))
    );
    Ok(())
}

fn read_synonyms(run: &mut Run, path: &Path) -> anyhow::Result<BTreeMap<String, Vec<String>>> {
    let text = run.read_input_text(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct AugmentConfig<'a> {
    global: &'a Resolved,
    dataset: &'a Path,
    mode: &'static str,
    k: Option<usize>,
    p_replace: Option<f64>,
    synonyms: Option<&'a Path>,
    pool: Option<&'a Path>,
}

fn cmd_augment(
    ctx: &Ctx,
    dataset: &Path,
    mode: AugmentMode,
    k: Option<usize>,
    synonyms: Option<PathBuf>,
    p_replace: Option<f64>,
    pool: Option<PathBuf>,
) -> anyhow::Result<()> {
    let a = &ctx.file.augment;
    let mut run = Run::create(&ctx.resolved.out)?;
    let datasets = load_datasets(ctx, &mut run, dataset)?;
    let seed = ctx.resolved.seed;
    let (corpus, k, p, syn) = match mode {
        AugmentMode::Content => {
            let k = pick(k, a.k, 5);
            let sampler = sampler_for_datasets(ctx, &mut run, &datasets, pool.as_deref())?
                .ok_or_else(|| {
                    input(format!(
                        "content replacement needs a built-in task, not {}",
                        datasets[0].grammar_name
                    ))
                })?;
            let corpus = augment_content_replacement(&sampler, &datasets, k, seed)
                .map_err(|e| input(e.to_string()))?;
            (corpus, Some(k), None, None)
        }
        AugmentMode::Synonym => {
            let path = synonyms
                .or_else(|| a.synonyms.clone())
                .ok_or_else(|| input("synonym mode needs --synonyms"))?;
            let table = read_synonyms(&mut run, &path)?;
            let p = pick(p_replace, a.p_replace, 0.3);
            let references: Vec<DatasetRecord> = records_of(&datasets)
                .into_iter()
                .filter(|r| r.variant == 0)
                .collect();
            let corpus = augment_random_synonym(&references, &table, p, seed, &ctx.rule)
                .map_err(|e| input(e.to_string()))?;
            (corpus, None, Some(p), Some(path))
        }
    };
    run.write_jsonl("corpus.jsonl", &corpus)?;
    run.finish(
        "augment",
        &AugmentConfig {
            global: &ctx.resolved,
            dataset,
            mode: match mode {
                AugmentMode::Content => "content",
                AugmentMode::Synonym => "synonym",
            },
            k,
            p_replace: p,
            synonyms: syn.as_deref(),
            pool: pool.as_deref(),
        },
    )?;
    println!(
        "wrote {} records to {}",
        corpus.len(),
        ctx.resolved.out.join("corpus.jsonl").display()
    );
    Ok(())
}
