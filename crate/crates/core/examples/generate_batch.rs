// Runs repeated independent generation calls for one prompt with the
// offline stub client, interrupts the batch part way and resumes it.
// Only the missing calls are issued on the second pass.
//
//     cargo run --example generate_batch

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use notegen::corpus::{ClinicalCase, Gender};
use notegen::generate::{
    run_batch, stub_chat_client, BatchConfig, ChatClient, ChatRequest, ChatResponse, LlmParams,
    RunStore,
};
use notegen::prompt::{build_prompt, PromptInputs, PromptTemplates, Strategy};
use notegen::retry::RetryPolicy;

// Raises the cancel flag after a fixed number of calls, like a Ctrl-C.
struct StopAfter {
    inner: Box<dyn ChatClient>,
    limit: u32,
    cancel: Arc<AtomicBool>,
}

impl ChatClient for StopAfter {
    fn complete(&self, request: &ChatRequest, call_index: u32) -> notegen::Result<ChatResponse> {
        if call_index + 1 >= self.limit {
            self.cancel.store(true, Ordering::SeqCst);
        }
        self.inner.complete(request, call_index)
    }
}

fn main() {
    let mut case = ClinicalCase::new("case-b", "A 54-year-old woman with complete edentulism.");
    case.push_code("K08.109");
    case.age = Some(54);
    case.gender = Gender::Female;
    let examples = BTreeMap::new();
    let bundle = build_prompt(
        Strategy::BaselineOneShot,
        PromptInputs::new(&case, &examples),
        &PromptTemplates::default(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let params = LlmParams::default();
    let cancel = Arc::new(AtomicBool::new(false));
    let mut config = BatchConfig::new(25);
    config.max_in_flight = 1;
    config.retry = RetryPolicy::immediate(3);
    config.cancel = Some(cancel.clone());

    let interrupted = StopAfter {
        inner: Box::new(stub_chat_client(1)),
        limit: 10,
        cancel,
    };
    let mut store = RunStore::open(dir.path(), "demo").unwrap();
    let first = run_batch(&bundle, &params, &config, &interrupted, &mut store).unwrap();
    println!("first pass: issued {} of {}", first.issued, config.n_calls);

    config.cancel = None;
    config.max_in_flight = 4;
    let mut store = RunStore::open(dir.path(), "demo").unwrap();
    let second = run_batch(&bundle, &params, &config, &stub_chat_client(1), &mut store).unwrap();
    println!("resume: issued {}, stored {}", second.issued, second.records.len());
    assert_eq!(first.issued + second.issued, 25);

    let r = &second.records[0];
    println!("call {} [{}]: {}", r.call_index, &r.prompt_hash[..12], r.generated_text);
}
