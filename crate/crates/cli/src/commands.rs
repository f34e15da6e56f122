use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tempfile::NamedTempFile;

use permurank_core::distill::{
    grad_check, rank_with_student, train, GradInstance, LambdaConfig, LinearStudent, LossKind,
    TrainConfig,
};
use permurank_core::gateway::mock::{FaultRates, MockOracle};
use permurank_core::gateway::openai::OpenAiClient;
use permurank_core::gateway::{Gateway, GatewayConfig, LanguageModel};
use permurank_core::metrics::{behavior_from_trace, evaluate};
use permurank_core::prompting::InstructionKind;
use permurank_core::rerank::{
    hybrid_topk_rerank, rank_by_scores, score_query_gen, score_relevance_gen, sliding_rerank,
    RerankError, RerankOptions, WindowRecord,
};
use permurank_core::retrieval::{search, Bm25Params, Index};
use permurank_core::textio::{
    format_run, format_teacher_dataset, load_jsonl_corpus, load_queries, read_qrels, read_run,
    read_teacher_dataset, read_text, Corpus, TeacherRecord,
};
use permurank_core::{CandidateList, InitialOrder, Passage, Query, Ranking, WindowConfig};

use crate::{
    Bm25Flags, CliError, Command, DistillArgs, EvalArgs, GradLossArg, GradcheckArgs, IndexArgs,
    InitialOrderArg, LossArg, Method, RerankArgs, RetrieveArgs, StabilityArgs,
};

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(data)
}

/// Files written to temporaries next to their targets and only moved into
/// place once every output is ready, so a failure leaves nothing behind.
#[derive(Default)]
struct Staged(Vec<(NamedTempFile, PathBuf)>);

impl Staged {
    fn add(&mut self, path: &Path, contents: &str) -> Result<(), CliError> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = NamedTempFile::new_in(dir).map_err(|e| data(format!("{}: {e}", path.display())))?;
        tmp.write_all(contents.as_bytes())
            .and_then(|_| tmp.flush())
            .map_err(|e| data(format!("{}: {e}", path.display())))?;
        self.0.push((tmp, path.to_path_buf()));
        Ok(())
    }

    fn commit(self) -> Result<(), CliError> {
        for (tmp, path) in self.0 {
            tmp.persist(&path)
                .map_err(|e| data(format!("{}: {}", path.display(), e.error)))?;
        }
        Ok(())
    }
}

/// Writes `contents` to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut staged = Staged::default();
    staged.add(path, contents)?;
    staged.commit()
}

fn bm25(flags: Bm25Flags) -> Result<Bm25Params, CliError> {
    Bm25Params::new(flags.k1, flags.b).map_err(|e| usage(e.to_string()))
}

pub(crate) fn execute(command: Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Index(a) => index(a, out),
        Command::Retrieve(a) => retrieve(a, out),
        Command::Rerank(a) => rerank(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Stability(a) => stability(a, out),
        Command::Distill(a) => distill(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn index(a: IndexArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let corpus = load_jsonl_corpus(&a.corpus).map_err(data)?;
    let idx = Index::from_corpus(&corpus).map_err(data)?;
    write_atomic(&a.out, &idx.to_json())?;
    emit(out, &format!("indexed {} passages\n", idx.doc_count()))
}

fn load_index(path: &Path) -> Result<Index, CliError> {
    let text = read_text(path).map_err(data)?;
    Index::from_json(&text).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn retrieve(a: RetrieveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = bm25(a.bm25)?;
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let idx = load_index(&a.index)?;
    let queries = load_queries(&a.queries).map_err(data)?;
    let mut rankings = Vec::with_capacity(queries.len());
    for q in &queries {
        let list = search(&idx, &params, q, a.k).map_err(data)?;
        if list.is_empty() {
            log::warn!("query `{}` matched no passage", q.id());
            continue;
        }
        let scored = list
            .candidates()
            .iter()
            .map(|c| (c.passage.docid().to_string(), c.initial_score))
            .collect();
        rankings.push(Ranking::from_scores(q.id(), scored).map_err(data)?);
    }
    write_atomic(&a.out, &format_run(&rankings, &a.tag).map_err(data)?)?;
    emit(out, &format!("retrieved {} of {} queries\n", rankings.len(), queries.len()))
}

fn kind_for(method: Method) -> Option<InstructionKind> {
    match method {
        Method::PgChat => Some(InstructionKind::PermutationChat),
        Method::PgText => Some(InstructionKind::PermutationText),
        Method::Qg => Some(InstructionKind::QueryGen),
        Method::RgFew => Some(InstructionKind::RelevanceGenFewShot),
        Method::RgZero => Some(InstructionKind::RelevanceGenZeroShot),
        Method::Student => None,
    }
}

fn method_name(method: Method) -> &'static str {
    kind_for(method).map(InstructionKind::name).unwrap_or("student")
}

/// Everything checkable without touching the filesystem.
fn validate_rerank(a: &RerankArgs) -> Result<(WindowConfig, FaultRates), CliError> {
    let initial = match a.initial_order {
        InitialOrderArg::AsRetrieved => InitialOrder::AsRetrieved,
        InitialOrderArg::Reversed => InitialOrder::Reversed,
        InitialOrderArg::Random => InitialOrder::Random(a.seed),
    };
    let step = a.step.unwrap_or((a.window / 2).max(1));
    let window = WindowConfig::new(a.window, step, a.passes, initial).map_err(|e| usage(e.to_string()))?;
    let faults = FaultRates {
        duplicate_rate: a.duplicate_rate,
        drop_rate: a.drop_rate,
        reject_rate: a.reject_rate,
    };
    faults.validate().map_err(|e| usage(e.to_string()))?;
    let permutation = kind_for(a.method).is_some_and(InstructionKind::is_permutation);
    if a.method == Method::Student && a.student.is_none() {
        return Err(usage("--method student needs --student"));
    }
    if a.method != Method::Student && a.student.is_some() {
        return Err(usage("--student is only valid with --method student"));
    }
    if a.method == Method::Student && a.mock_oracle.is_some() {
        return Err(usage("--mock-oracle has no effect with --method student"));
    }
    if a.trace.is_some() && !permutation {
        return Err(usage("--trace needs a permutation method (pg-chat or pg-text)"));
    }
    if a.mock_oracle.is_none() && faults != FaultRates::none() {
        return Err(usage("fault rates need --mock-oracle"));
    }
    if a.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if a.max_words == 0 {
        return Err(usage("--max-words must be at least 1"));
    }
    if a.top_k_only == Some(0) {
        return Err(usage("--top-k-only must be at least 1"));
    }
    let mut outputs = vec![&a.out];
    outputs.extend(a.trace.iter());
    outputs.extend(a.teacher_out.iter());
    for (i, p) in outputs.iter().enumerate() {
        if outputs[..i].contains(p) {
            return Err(usage(format!("{} is given as two different outputs", p.display())));
        }
    }
    bm25(a.bm25)?;
    Ok((window, faults))
}

fn candidate_lists(
    run: &[Ranking],
    queries: &[Query],
    corpus: &Corpus,
) -> Result<Vec<CandidateList>, CliError> {
    let by_id: HashMap<&str, &Query> = queries.iter().map(|q| (q.id(), q)).collect();
    run.iter()
        .map(|r| {
            let q = by_id
                .get(r.query_id())
                .ok_or_else(|| data(format!("query `{}` of the run is not in the queries file", r.query_id())))?;
            let ranked = r
                .entries()
                .iter()
                .map(|e| {
                    corpus
                        .get(&e.docid)
                        .cloned()
                        .map(|p: Passage| (p, e.score))
                        .ok_or_else(|| data(format!("query `{}`: docid `{}` not in corpus", r.query_id(), e.docid)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            CandidateList::from_ranked((*q).clone(), ranked).map_err(data)
        })
        .collect()
}

fn rerank_error(e: RerankError) -> CliError {
    match e.gateway_error() {
        Some(_) => CliError::Gateway(e.to_string()),
        None => data(e),
    }
}

struct QueryOutcome {
    ranking: Ranking,
    windows: Vec<WindowRecord>,
    teacher: TeacherRecord,
}

enum Scorer {
    Llm(Gateway),
    Student(LinearStudent, Index),
}

struct RerankJob<'a> {
    args: &'a RerankArgs,
    window: WindowConfig,
    scorer: Scorer,
    options: RerankOptions,
    params: Bm25Params,
}

impl RerankJob<'_> {
    fn process(&self, list: &CandidateList) -> Result<QueryOutcome, CliError> {
        let qid = list.query().id();
        let k = self.args.top_k_only.map(|k| k.min(list.len())).unwrap_or(list.len());
        let head = list.head(k);
        let (head_ranking, windows) = match (&self.scorer, kind_for(self.args.method)) {
            (Scorer::Student(student, index), _) => (
                rank_with_student(student, &head, index, &self.params).map_err(data)?,
                Vec::new(),
            ),
            (Scorer::Llm(gw), Some(kind)) if kind.is_permutation() => {
                let o = if self.args.top_k_only.is_some() {
                    hybrid_topk_rerank(list, k, &self.window, kind, gw, &self.options)
                } else {
                    sliding_rerank(list, &self.window, kind, gw, &self.options)
                }
                .map_err(rerank_error)?;
                let head_order = o.order[..k].to_vec();
                (Ranking::from_order(qid, head_order).map_err(data)?, o.windows)
            }
            (Scorer::Llm(gw), Some(InstructionKind::QueryGen)) => {
                let s = score_query_gen(gw, &head, &self.options).map_err(rerank_error)?;
                (rank_by_scores(&head, &s).map_err(rerank_error)?, Vec::new())
            }
            (Scorer::Llm(gw), Some(kind)) => {
                let few = kind == InstructionKind::RelevanceGenFewShot;
                let s = score_relevance_gen(gw, &head, few, &self.options).map_err(rerank_error)?;
                if s.anomalies > 0 {
                    log::warn!("query `{qid}`: {} judgments were neither yes nor no", s.anomalies);
                }
                (rank_by_scores(&head, &s.scores).map_err(rerank_error)?, Vec::new())
            }
            (Scorer::Llm(_), None) => unreachable!("student method always has a student scorer"),
        };

        let head_ids: Vec<String> = head.docids().into_iter().map(String::from).collect();
        let position: HashMap<&str, usize> = head_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i + 1)).collect();
        let permutation = head_ranking.docids().map(|d| position[d]).collect();
        let teacher = TeacherRecord {
            query_id: qid.to_string(),
            query_text: list.query().text().to_string(),
            docids: head_ids,
            permutation,
        };
        let ranking = if k < list.len() {
            let order = head_ranking
                .docids()
                .map(String::from)
                .chain(list.candidates()[k..].iter().map(|c| c.passage.docid().to_string()));
            Ranking::from_order(qid, order).map_err(data)?
        } else {
            head_ranking
        };
        Ok(QueryOutcome { ranking, windows, teacher })
    }
}

fn rerank(a: RerankArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (window, faults) = validate_rerank(&a)?;
    let params = bm25(a.bm25)?;
    let queries = load_queries(&a.queries).map_err(data)?;
    let corpus = load_jsonl_corpus(&a.corpus).map_err(data)?;
    let run = read_run(&a.run).map_err(data)?;
    let lists = candidate_lists(&run, &queries, &corpus)?;

    let scorer = if let Some(path) = &a.student {
        let student = LinearStudent::from_json(&read_text(path).map_err(data)?).map_err(data)?;
        Scorer::Student(student, Index::from_corpus(&corpus).map_err(data)?)
    } else {
        let model: Box<dyn LanguageModel> = match &a.mock_oracle {
            Some(qrels) => {
                let judgments = read_qrels(qrels).map_err(data)?;
                Box::new(
                    MockOracle::from_judgments(judgments)
                        .with_faults(faults, a.seed)
                        .map_err(|e| usage(e.to_string()))?,
                )
            }
            None => {
                let config = GatewayConfig {
                    endpoint_url: a.endpoint.clone(),
                    model_name: a.model.clone(),
                    request_timeout: Duration::from_secs(a.timeout_secs),
                    max_retries: a.max_retries,
                    max_in_flight: a.jobs,
                    ..GatewayConfig::default()
                };
                config.validate().map_err(|e| usage(e.to_string()))?;
                Box::new(OpenAiClient::from_env(config).map_err(|e| CliError::Gateway(e.to_string()))?)
            }
        };
        Scorer::Llm(Gateway::new(model, a.jobs))
    };

    let job = RerankJob {
        args: &a,
        window,
        scorer,
        options: RerankOptions {
            max_words: a.max_words,
            ..RerankOptions::default()
        },
        params,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(data)?;
    // collect keeps input order, so output bytes do not depend on scheduling
    let results: Vec<Result<QueryOutcome, CliError>> =
        pool.install(|| lists.par_iter().map(|l| job.process(l)).collect());
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let tag = a.tag.clone().unwrap_or_else(|| format!("permurank-{}", method_name(a.method)));
    let rankings: Vec<Ranking> = outcomes.iter().map(|o| o.ranking.clone()).collect();
    let mut staged = Staged::default();
    staged.add(&a.out, &format_run(&rankings, &tag).map_err(data)?)?;
    if let Some(path) = &a.trace {
        let mut text = String::new();
        for w in outcomes.iter().flat_map(|o| &o.windows) {
            text.push_str(&serde_json::to_string(w).map_err(data)?);
            text.push('\n');
        }
        staged.add(path, &text)?;
    }
    if let Some(path) = &a.teacher_out {
        let records: Vec<TeacherRecord> = outcomes.iter().map(|o| o.teacher.clone()).collect();
        staged.add(path, &format_teacher_dataset(&records))?;
    }
    staged.commit()?;

    let mut summary = format!("reranked {} queries with {}\n", outcomes.len(), method_name(a.method));
    if let Scorer::Llm(gw) = &job.scorer {
        let usage = gw.ledger().total();
        summary.push_str(&format!("requests {}  tokens {}\n", usage.requests, usage.tokens()));
    }
    emit(out, &summary)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(usage("--k needs cutoffs of at least 1"));
    }
    let run = read_run(&a.run).map_err(data)?;
    let qrels = read_qrels(&a.qrels).map_err(data)?;
    let report = evaluate(&run, &qrels, &a.k).map_err(data)?;
    if a.json {
        emit(out, &(report.to_json() + "\n"))
    } else {
        emit(out, &report.to_table())
    }
}

pub(crate) fn read_trace(path: &Path) -> Result<Vec<WindowRecord>, CliError> {
    let text = read_text(path).map_err(data)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn stability(a: StabilityArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let records = read_trace(&a.trace)?;
    let stats = behavior_from_trace(&records);
    if a.json {
        emit(out, &(serde_json::to_string_pretty(&stats).map_err(data)? + "\n"))
    } else {
        emit(out, &stats.to_table())
    }
}

fn loss_kind(l: LossArg) -> LossKind {
    match l {
        LossArg::Ranknet => LossKind::RankNet,
        LossArg::ListwiseCe => LossKind::ListwiseCE,
        LossArg::Lambda => LossKind::LambdaLoss,
        LossArg::Bce => LossKind::PointwiseBCE,
    }
}

fn distill(a: DistillArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = bm25(a.bm25)?;
    let config = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed: a.seed,
        l2: a.l2,
        lambda: LambdaConfig::default(),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let records = read_teacher_dataset(&a.teacher).map_err(data)?;
    let corpus = load_jsonl_corpus(&a.corpus).map_err(data)?;
    let idx = Index::from_corpus(&corpus).map_err(data)?;
    let (student, log) = train(&records, &idx, &params, loss_kind(a.loss), &config).map_err(data)?;
    write_atomic(&a.out, &student.to_json())?;
    let mut text = format!("initial loss {:.6}\n", log.initial_loss);
    for (i, l) in log.epoch_loss.iter().enumerate() {
        text.push_str(&format!("epoch {:>3}  loss {l:.6}\n", i + 1));
    }
    emit(out, &text)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(a.epsilon > 0.0 && a.epsilon <= 1e-3) {
        return Err(usage("--epsilon must be in (0, 1e-3]"));
    }
    if a.sizes.is_empty() || a.sizes.iter().any(|&m| m < 2) {
        return Err(usage("--sizes must list lengths of at least 2"));
    }
    let kinds: Vec<LossKind> = match a.loss {
        GradLossArg::All => LossKind::ALL.to_vec(),
        GradLossArg::Ranknet => vec![LossKind::RankNet],
        GradLossArg::ListwiseCe => vec![LossKind::ListwiseCE],
        GradLossArg::Lambda => vec![LossKind::LambdaLoss],
        GradLossArg::Bce => vec![LossKind::PointwiseBCE],
    };
    let cfg = LambdaConfig::default();
    let mut text = String::new();
    let mut failed = Vec::new();
    for kind in kinds {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut worst: f64 = 0.0;
        for &m in &a.sizes {
            for _ in 0..a.instances {
                let inst = GradInstance::random(m, &mut rng);
                worst = worst.max(grad_check(kind, &inst, a.epsilon, &cfg).map_err(data)?);
            }
        }
        let ok = worst < a.tolerance;
        if !ok {
            failed.push(kind.name());
        }
        text.push_str(&format!(
            "{:<12} max_rel_err {worst:.3e}  {}\n",
            kind.name(),
            if ok { "ok" } else { "FAIL" }
        ));
    }
    emit(out, &text)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(data(format!("gradient check above {:e}: {}", a.tolerance, failed.join(", "))))
    }
}
