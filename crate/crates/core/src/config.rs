//! TOML pipeline configuration.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Credentials are never read from the file; the chat endpoint and key
//! come from `LLM_ENDPOINT` and `LLM_API_KEY`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalOptions, HttpTokenEmbedder, StubTokenEmbedder, TokenEmbeddingProvider};
use crate::generate::{stub_chat_client, BatchConfig, ChatClient, HttpChatClient, LlmParams};
use crate::index::{EmbeddingProvider, HttpEmbedder, QueryMode, StubEmbedder, DEFAULT_TOP_K};
use crate::prompt::{PromptTemplates, Strategy};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub notes_dir: PathBuf,
    pub annotations: PathBuf,
    pub demographics: Option<PathBuf>,
    pub test_ids: PathBuf,
    pub snomed_map: Option<PathBuf>,
    pub snomed_owl: Option<PathBuf>,
    pub snomed_descriptions: Option<PathBuf>,
    /// Optional `code<TAB>title` file used to annotate codes in prompts.
    pub icd_titles: Option<PathBuf>,
    /// Holds the cached corpus, index and graph.
    pub work_dir: PathBuf,
    pub run_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl Paths {
    pub fn corpus_file(&self) -> PathBuf {
        self.work_dir.join("corpus.json")
    }

    pub fn index_file(&self) -> PathBuf {
        self.work_dir.join("index.ngix")
    }

    pub fn kg_file(&self) -> PathBuf {
        self.work_dir.join("kg.json")
    }

    pub fn run_root(&self) -> PathBuf {
        self.run_dir.clone().unwrap_or_else(|| self.work_dir.join("runs"))
    }

    pub fn report_root(&self) -> PathBuf {
        self.report_dir
            .clone()
            .unwrap_or_else(|| self.work_dir.join("reports"))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.notes_dir);
        fix(&mut self.annotations);
        fix(&mut self.test_ids);
        fix(&mut self.work_dir);
        for p in [
            &mut self.demographics,
            &mut self.snomed_map,
            &mut self.snomed_owl,
            &mut self.snomed_descriptions,
            &mut self.icd_titles,
            &mut self.run_dir,
            &mut self.report_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Providers {
    pub embedding: ProviderKind,
    pub embed_url: Option<String>,
    pub embed_model: String,
    pub stub_dim: usize,
    pub stub_seed: u64,

    pub token_embedding: ProviderKind,
    pub token_embed_url: Option<String>,
    pub token_model: String,
    pub token_stub_dim: usize,
    pub token_stub_seed: u64,
    pub token_stub_max_tokens: Option<usize>,

    /// `http` reads the endpoint and key from the environment.
    pub chat: ProviderKind,
    pub chat_stub_seed: u64,
}

impl Default for Providers {
    fn default() -> Self {
        Providers {
            embedding: ProviderKind::Stub,
            embed_url: None,
            embed_model: "text-embedding-ada-002".into(),
            stub_dim: 64,
            stub_seed: 7,
            token_embedding: ProviderKind::Stub,
            token_embed_url: None,
            token_model: "bert-large-cased".into(),
            token_stub_dim: 64,
            token_stub_seed: 11,
            token_stub_max_tokens: Some(512),
            chat: ProviderKind::Stub,
            chat_stub_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub run_id: String,
    pub strategies: Vec<Strategy>,
    pub n_calls: u32,
    pub max_in_flight: usize,
    pub min_request_delay_ms: u64,
    pub retry_base_ms: u64,
    pub retry_factor: f64,
    pub retry_attempts: u32,
    pub query_mode: QueryMode,
    pub top_k: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        RunSettings {
            run_id: "default".into(),
            strategies: Strategy::ALL.to_vec(),
            n_calls: 25,
            max_in_flight: 4,
            min_request_delay_ms: 0,
            retry_base_ms: retry.base_delay.as_millis() as u64,
            retry_factor: retry.factor,
            retry_attempts: retry.max_attempts,
            query_mode: QueryMode::IcdCodes,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl RunSettings {
    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            base_delay: Duration::from_millis(self.retry_base_ms),
            factor: self.retry_factor,
            max_attempts: self.retry_attempts,
        }
    }

    pub fn batch(&self) -> BatchConfig {
        BatchConfig {
            n_calls: self.n_calls,
            max_in_flight: self.max_in_flight,
            min_request_delay: Duration::from_millis(self.min_request_delay_ms),
            retry: self.retry(),
            cancel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub providers: Providers,
    #[serde(default)]
    pub llm: LlmParams,
    #[serde(default)]
    pub run: RunSettings,
    #[serde(default)]
    pub prompt: PromptTemplates,
    #[serde(default)]
    pub eval: EvalOptions,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.paths.resolve(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.n_calls == 0 {
            return Err(Error::Config("run.n_calls must be at least 1".into()));
        }
        if self.run.top_k == 0 {
            return Err(Error::Config("run.top_k must be at least 1".into()));
        }
        if self.run.strategies.is_empty() {
            return Err(Error::Config("run.strategies is empty".into()));
        }
        if self.prompt.instruction.trim().is_empty() {
            return Err(Error::EmptyInstruction);
        }
        self.llm.validate()
    }

    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let p = &self.providers;
        Ok(match p.embedding {
            ProviderKind::Stub => Box::new(StubEmbedder::new(p.stub_dim, p.stub_seed)),
            ProviderKind::Http => Box::new(HttpEmbedder::new(
                need_url(&p.embed_url, "providers.embed_url")?,
                &p.embed_model,
            )?),
        })
    }

    pub fn token_embedder(&self) -> Result<Box<dyn TokenEmbeddingProvider>> {
        let p = &self.providers;
        Ok(match p.token_embedding {
            ProviderKind::Stub => {
                let e = StubTokenEmbedder::new(p.token_stub_dim, p.token_stub_seed);
                Box::new(match p.token_stub_max_tokens {
                    Some(m) => e.with_max_tokens(m),
                    None => e,
                })
            }
            ProviderKind::Http => Box::new(HttpTokenEmbedder::new(
                need_url(&p.token_embed_url, "providers.token_embed_url")?,
                &p.token_model,
            )?),
        })
    }

    pub fn chat_client(&self) -> Result<Box<dyn ChatClient>> {
        Ok(match self.providers.chat {
            ProviderKind::Stub => Box::new(stub_chat_client(self.providers.chat_stub_seed)),
            ProviderKind::Http => Box::new(HttpChatClient::from_env()?),
        })
    }
}

fn need_url<'a>(url: &'a Option<String>, key: &str) -> Result<&'a str> {
    url.as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is required for the http provider")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
notes_dir = "corpus/notes"
annotations = "corpus/annotations.tsv"
test_ids = "corpus/test_ids.txt"
work_dir = "out"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/data/project")).unwrap();
        assert_eq!(cfg.paths.notes_dir, Path::new("/data/project/corpus/notes"));
        assert_eq!(cfg.paths.index_file(), Path::new("/data/project/out/index.ngix"));
        assert_eq!(cfg.paths.run_root(), Path::new("/data/project/out/runs"));
        assert_eq!(cfg.llm, LlmParams::default());
        assert_eq!(cfg.run.strategies, Strategy::ALL);
        assert_eq!(cfg.run.retry(), RetryPolicy::default());
        assert_eq!(cfg.run.query_mode, QueryMode::IcdCodes);
    }

    #[test]
    fn sections_override() {
        let text = format!(
            "{MINIMAL}\n[run]\nn_calls = 3\nstrategies = [\"cot_kg\"]\nquery_mode = \"text_references\"\n\
             [llm]\nseed = 9\n[prompt]\ninstruction = \"Write it.\"\n[eval]\nresamples = 50\n"
        );
        let cfg = PipelineConfig::from_toml(&text, Path::new("/x")).unwrap();
        assert_eq!(cfg.run.n_calls, 3);
        assert_eq!(cfg.run.strategies, [Strategy::CotKg]);
        assert_eq!(cfg.run.query_mode, QueryMode::TextReferences);
        assert_eq!(cfg.llm.seed, 9);
        assert_eq!(cfg.llm.model, "gpt-4");
        assert_eq!(cfg.prompt.instruction, "Write it.");
        assert_eq!(cfg.eval.resamples, 50);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let bad = [
            format!("{MINIMAL}\n[run]\nn_calls = 0\n"),
            format!("{MINIMAL}\n[run]\nstrategies = [\"cot_magic\"]\n"),
            format!("{MINIMAL}\n[llm]\ntop_p = 0.0\n"),
            format!("{MINIMAL}\n[prompt]\ninstruction = \"  \"\n"),
            format!("{MINIMAL}\n[providers]\napi_key = \"sk-123\"\n"),
        ];
        for text in bad {
            assert!(PipelineConfig::from_toml(&text, Path::new("/x")).is_err(), "{text}");
        }
    }

    #[test]
    fn http_provider_needs_url() {
        let text = format!("{MINIMAL}\n[providers]\nembedding = \"http\"\n");
        let cfg = PipelineConfig::from_toml(&text, Path::new("/x")).unwrap();
        assert!(cfg.embedding_provider().is_err());
    }
}
