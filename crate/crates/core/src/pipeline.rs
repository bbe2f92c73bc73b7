//! The pipeline stages behind the command-line subcommands.
//!
//! Each stage reads what earlier stages cached under `paths.work_dir` and
//! can be rerun safely: ingest, index and build-kg overwrite their outputs,
//! generate resumes its run, and evaluate rewrites its report.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::corpus::{attach_demographics, ingest_corpus, read_id_list, split_corpus, Corpus};
use crate::error::{Error, Result, Warning};
use crate::eval::{emit_report, evaluate, EvalReport};
use crate::generate::{run_batch, LlmParams, RunStore};
use crate::index::{build_index, Index, QueryMode, SearchHit};
use crate::prompt::{build_prompt, PromptBundle, PromptInputs, Strategy};
use crate::snomed::{load_release, KgGraph};
use crate::tsv::{self, Header};

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found: {}", path.display())))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct IngestSummary {
    pub index: usize,
    pub test: usize,
    pub warnings: Vec<Warning>,
    pub corpus_file: PathBuf,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "index={} test={}", self.index, self.test)
    }
}

pub fn cmd_ingest(cfg: &PipelineConfig, dry_run: bool) -> Result<IngestSummary> {
    let p = &cfg.paths;
    require_file(&p.annotations, "annotations file")?;
    require_file(&p.test_ids, "test id list")?;
    let ingested = ingest_corpus(&p.notes_dir, &p.annotations)?;
    let mut warnings = ingested.warnings;
    let mut cases = ingested.cases;
    if let Some(demo) = &p.demographics {
        let (with, w) = attach_demographics(cases, demo)?;
        cases = with;
        warnings.extend(w);
    }
    let split = split_corpus(&cases, &read_id_list(&p.test_ids)?)?;
    let corpus = Corpus { cases, split };
    let corpus_file = p.corpus_file();
    if !dry_run {
        ensure_parent(&corpus_file)?;
        corpus.save(&corpus_file)?;
    }
    Ok(IngestSummary {
        index: corpus.split.index_pool.len(),
        test: corpus.split.test_pool.len(),
        warnings,
        corpus_file,
    })
}

pub fn load_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let path = cfg.paths.corpus_file();
    require_file(&path, "cached corpus (run ingest first)")?;
    Corpus::load(&path)
}

#[derive(Debug, Clone)]
pub struct IndexSummary {
    pub entries: usize,
    pub dim: usize,
    pub provider_tag: String,
    pub index_file: PathBuf,
}

impl fmt::Display for IndexSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "entries={} dim={} provider={} file={}",
            self.entries,
            self.dim,
            self.provider_tag,
            self.index_file.display()
        )
    }
}

pub fn cmd_index(cfg: &PipelineConfig, dry_run: bool) -> Result<IndexSummary> {
    let corpus = load_corpus(cfg)?;
    let provider = cfg.embedding_provider()?;
    let index_file = cfg.paths.index_file();
    if dry_run {
        return Ok(IndexSummary {
            entries: corpus.split.index_pool.len(),
            dim: 0,
            provider_tag: provider.tag().to_owned(),
            index_file,
        });
    }
    let index = build_index(corpus.index_cases(), provider.as_ref(), &cfg.run.retry())?;
    ensure_parent(&index_file)?;
    index.save(&index_file)?;
    Ok(IndexSummary {
        entries: index.len(),
        dim: index.dim(),
        provider_tag: index.provider_tag().to_owned(),
        index_file,
    })
}

#[derive(Debug, Clone)]
pub struct KgSummary {
    pub concepts: usize,
    pub icd_codes: usize,
    pub axioms: usize,
    pub skipped_axioms: usize,
    pub map_warnings: usize,
    pub kg_file: PathBuf,
}

impl fmt::Display for KgSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "concepts={} icd_codes={} axioms={} skipped_axioms={} map_warnings={}",
            self.concepts, self.icd_codes, self.axioms, self.skipped_axioms, self.map_warnings
        )
    }
}

pub fn cmd_build_kg(cfg: &PipelineConfig, dry_run: bool) -> Result<KgSummary> {
    let p = &cfg.paths;
    let need = |v: &Option<PathBuf>, key: &str| {
        v.clone()
            .ok_or_else(|| Error::Config(format!("paths.{key} is required for build-kg")))
    };
    let map = need(&p.snomed_map, "snomed_map")?;
    let owl = need(&p.snomed_owl, "snomed_owl")?;
    let desc = need(&p.snomed_descriptions, "snomed_descriptions")?;
    for (path, what) in [(&map, "SNOMED map"), (&owl, "OWL refset"), (&desc, "descriptions")] {
        require_file(path, what)?;
    }
    let loaded = load_release(&map, &owl, &desc)?;
    let kg_file = p.kg_file();
    if !dry_run {
        ensure_parent(&kg_file)?;
        loaded.graph.save(&kg_file)?;
    }
    Ok(KgSummary {
        concepts: loaded.graph.concepts.len(),
        icd_codes: loaded.graph.icd_index.len(),
        axioms: loaded.parsed_axioms,
        skipped_axioms: loaded.skipped_axioms.len(),
        map_warnings: loaded.map.warnings.len(),
        kg_file,
    })
}

pub fn load_index(cfg: &PipelineConfig) -> Result<Index> {
    let path = cfg.paths.index_file();
    require_file(&path, "embedding index (run index first)")?;
    Index::load(&path)
}

pub fn load_graph(cfg: &PipelineConfig) -> Result<KgGraph> {
    let path = cfg.paths.kg_file();
    require_file(&path, "knowledge graph (run build-kg first)")?;
    KgGraph::load(&path)
}

#[derive(Debug, Clone)]
pub enum RetrieveTarget {
    /// Free query text.
    Text(String),
    /// Query built from a cached case's codes or text references.
    Case(String),
}

pub fn cmd_retrieve(
    cfg: &PipelineConfig,
    target: &RetrieveTarget,
    k: usize,
    mode: QueryMode,
) -> Result<Vec<SearchHit>> {
    let index = load_index(cfg)?;
    let provider = cfg.embedding_provider()?;
    match target {
        RetrieveTarget::Text(q) => index.search(provider.as_ref(), q, k),
        RetrieveTarget::Case(id) => {
            let corpus = load_corpus(cfg)?;
            let case = corpus
                .get(id)
                .ok_or_else(|| Error::UnknownTestId(id.clone()))?;
            index.query_for_case(provider.as_ref(), case, mode, k)
        }
    }
}

pub fn format_hits(hits: &[SearchHit]) -> String {
    let mut out = String::from("rank\tcase_id\trelatedness\n");
    for (i, h) in hits.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{:.4}\n", i + 1, h.case_id, h.relatedness));
    }
    out
}

/// Reads a `code<TAB>title` table; an optional header row starts with `code`.
pub fn read_icd_titles(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut rows = tsv::rows(path)?;
    let Some(first) = rows.next().transpose()? else {
        return Ok(out);
    };
    let header = Header::new(&first.cells);
    let (code_col, title_col) = match (header.position("code"), header.position("title")) {
        (Some(c), Some(t)) => (c, t),
        _ => {
            if first.cells.len() >= 2 {
                out.insert(first.cells[0].trim().to_owned(), first.cells[1].trim().to_owned());
            }
            (0, 1)
        }
    };
    for row in rows {
        let row = row?;
        if let (Some(c), Some(t)) = (row.cells.get(code_col), row.cells.get(title_col)) {
            out.insert(c.trim().to_owned(), t.trim().to_owned());
        }
    }
    Ok(out)
}

/// One prompt per (test case, strategy), in test-pool then strategy order.
pub fn build_prompts(cfg: &PipelineConfig, corpus: &Corpus) -> Result<Vec<PromptBundle>> {
    let strategies = &cfg.run.strategies;
    let needs_index = strategies.iter().any(|s| {
        s.uses_search()
            || (*s == Strategy::BaselineOneShot && cfg.prompt.baseline_example_id.is_none())
    });
    let index = if needs_index { Some(load_index(cfg)?) } else { None };
    let provider = if needs_index {
        Some(cfg.embedding_provider()?)
    } else {
        None
    };
    let graph = if strategies.iter().any(|s| s.uses_kg()) {
        Some(load_graph(cfg)?)
    } else {
        None
    };
    let titles = match &cfg.paths.icd_titles {
        Some(p) => Some(read_icd_titles(p)?),
        None => None,
    };
    // Only the retrieval pool may supply examples.
    let examples: BTreeMap<String, _> = corpus
        .index_cases()
        .into_iter()
        .map(|c| (c.case_id.clone(), c.clone()))
        .collect();

    let mut bundles = Vec::new();
    for case in corpus.test_cases() {
        let hits = match (&index, &provider) {
            (Some(index), Some(provider)) => {
                Some(index.query_for_case(provider.as_ref(), case, cfg.run.query_mode, cfg.run.top_k)?)
            }
            _ => None,
        };
        let fragment = graph.as_ref().map(|g| g.render_kg_fragment(&case.icd_codes));
        for &strategy in strategies {
            let mut inputs = PromptInputs::new(case, &examples);
            if let Some(h) = &hits {
                inputs = inputs.hits(h);
            }
            if let Some(f) = &fragment {
                inputs = inputs.kg_fragment(f);
            }
            if let Some(t) = &titles {
                inputs = inputs.icd_titles(t);
            }
            bundles.push(build_prompt(strategy, inputs, &cfg.prompt)?);
        }
    }
    Ok(bundles)
}

/// Parameters a run was created with; a resumed run must match them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunManifest {
    llm: LlmParams,
    strategies: Vec<Strategy>,
    n_calls: u32,
    query_mode: QueryMode,
    top_k: usize,
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub run_id: String,
    pub prompts: usize,
    pub planned: usize,
    pub records: usize,
    pub issued: usize,
    pub failed: usize,
    pub run_dir: PathBuf,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run={} prompts={} planned={} records={} issued={} failed={}",
            self.run_id, self.prompts, self.planned, self.records, self.issued, self.failed
        )
    }
}

pub fn cmd_generate(cfg: &PipelineConfig, dry_run: bool) -> Result<GenerateSummary> {
    let corpus = load_corpus(cfg)?;
    let bundles = build_prompts(cfg, &corpus)?;
    let root = cfg.paths.run_root();
    let run_id = cfg.run.run_id.clone();
    let planned = bundles.len() * cfg.run.n_calls as usize;
    if dry_run {
        return Ok(GenerateSummary {
            run_dir: root.join(&run_id),
            run_id,
            prompts: bundles.len(),
            planned,
            records: 0,
            issued: 0,
            failed: 0,
        });
    }
    let client = cfg.chat_client()?;
    let mut store = RunStore::open(&root, &run_id)?;
    let manifest = RunManifest {
        llm: cfg.llm.clone(),
        strategies: cfg.run.strategies.clone(),
        n_calls: cfg.run.n_calls,
        query_mode: cfg.run.query_mode,
        top_k: cfg.run.top_k,
    };
    let manifest_path = store.dir().join("run.json");
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let existing: RunManifest = serde_json::from_str(&text)?;
        if existing != manifest {
            return Err(Error::Config(format!(
                "run {run_id} was started with different parameters; use a new run id"
            )));
        }
    } else {
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&manifest_path, e))?;
    }
    let prompts_path = store.dir().join("prompts.jsonl");
    let mut lines = String::new();
    for b in &bundles {
        lines.push_str(&serde_json::to_string(b)?);
        lines.push('\n');
    }
    fs::write(&prompts_path, lines).map_err(|e| Error::io(&prompts_path, e))?;

    let batch = cfg.run.batch();
    let mut summary = GenerateSummary {
        run_id,
        prompts: bundles.len(),
        planned,
        records: 0,
        issued: 0,
        failed: 0,
        run_dir: store.dir().to_path_buf(),
    };
    for bundle in &bundles {
        let out = run_batch(bundle, &cfg.llm, &batch, client.as_ref(), &mut store)?;
        log::info!(
            "{} {}: {} records, {} new",
            bundle.target_case_id,
            bundle.strategy,
            out.records.len(),
            out.issued
        );
        summary.issued += out.issued;
        summary.records += out.records.len();
        summary.failed += out.records.iter().filter(|r| !r.is_ok()).count();
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvaluateSummary {
    pub samples: usize,
    pub failed_records: usize,
    pub truncated_texts: usize,
    pub report_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for EvaluateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "samples={} failed_records={} truncated={} report={}",
            self.samples,
            self.failed_records,
            self.truncated_texts,
            self.report_dir.display()
        )
    }
}

pub fn run_report(cfg: &PipelineConfig) -> Result<(EvalReport, usize)> {
    let corpus = load_corpus(cfg)?;
    let store = RunStore::open_existing(&cfg.paths.run_root(), &cfg.run.run_id)?;
    let records: Vec<_> = store.records().cloned().collect();
    let ground_truth: BTreeMap<String, String> = corpus
        .cases
        .iter()
        .map(|c| (c.case_id.clone(), c.note_text.clone()))
        .collect();
    let embedder = cfg.token_embedder()?;
    let report = evaluate(&records, &ground_truth, embedder.as_ref(), &cfg.eval)?;
    Ok((report, store.failed_count()))
}

pub fn cmd_evaluate(cfg: &PipelineConfig, dry_run: bool) -> Result<EvaluateSummary> {
    let report_dir = cfg.paths.report_root().join(&cfg.run.run_id);
    if dry_run {
        let store = RunStore::open_existing(&cfg.paths.run_root(), &cfg.run.run_id)?;
        return Ok(EvaluateSummary {
            samples: store.len() - store.failed_count(),
            failed_records: store.failed_count(),
            truncated_texts: 0,
            report_dir,
            files: Vec::new(),
        });
    }
    let (report, failed_records) = run_report(cfg)?;
    let files = emit_report(&report, &report_dir)?;
    Ok(EvaluateSummary {
        samples: report.samples.len(),
        failed_records,
        truncated_texts: report.truncated_texts,
        report_dir,
        files,
    })
}
