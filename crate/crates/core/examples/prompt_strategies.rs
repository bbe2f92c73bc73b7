// Assembles the four prompt variants for the edentulism test case: one-shot
// baseline, chain of thought with retrieved examples, with the knowledge
// graph fragment, and with both.
//
//     cargo run --example prompt_strategies

use std::collections::BTreeMap;
use std::path::Path;

use notegen::corpus::{attach_demographics, ingest_corpus, read_id_list, split_corpus, Corpus};
use notegen::index::{build_index, QueryMode, StubEmbedder};
use notegen::prompt::{build_prompt, PromptInputs, PromptTemplates, Strategy};
use notegen::retry::RetryPolicy;
use notegen::snomed::load_release;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let c = root.join("corpus");
    let cases = ingest_corpus(&c.join("notes"), &c.join("annotations.tsv")).unwrap().cases;
    let (cases, _) = attach_demographics(cases, &c.join("demographics.tsv")).unwrap();
    let split = split_corpus(&cases, &read_id_list(&c.join("test_ids.txt")).unwrap()).unwrap();
    let corpus = Corpus { cases, split };

    let embedder = StubEmbedder::new(64, 7);
    let index = build_index(corpus.index_cases(), &embedder, &RetryPolicy::immediate(3)).unwrap();
    let s = root.join("snomed");
    let graph = load_release(
        &s.join("icd10cm_map.tsv"),
        &s.join("owl_refset.tsv"),
        &s.join("descriptions.tsv"),
    )
    .unwrap()
    .graph;

    let case = corpus.get("S1130-05582017000100031-1").unwrap();
    let hits = index.query_for_case(&embedder, case, QueryMode::IcdCodes, 10).unwrap();
    let fragment = graph.render_kg_fragment(&case.icd_codes);
    let examples: BTreeMap<_, _> = corpus
        .index_cases()
        .into_iter()
        .map(|c| (c.case_id.clone(), c.clone()))
        .collect();
    let templates = PromptTemplates::default();

    for strategy in Strategy::ALL {
        let inputs = PromptInputs::new(case, &examples)
            .hits(&hits)
            .kg_fragment(&fragment);
        let bundle = build_prompt(strategy, inputs, &templates).unwrap();
        assert!(!bundle.user_text.contains(case.note_text.trim()));
        println!(
            "== {strategy}: {} examples, kg={}, {} chars, hash {}",
            bundle.example_case_ids.len(),
            !bundle.kg_codes.is_empty(),
            bundle.user_text.len(),
            &bundle.prompt_hash()[..12]
        );
    }

    let full = build_prompt(
        Strategy::CotSsKg,
        PromptInputs::new(case, &examples).hits(&hits).kg_fragment(&fragment),
        &templates,
    )
    .unwrap();
    println!("\n{}", full.user_text);
}
