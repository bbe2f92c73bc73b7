// Embeds the retrieval pool with the offline stub embedder and ranks
// indexed cases by cosine relatedness to a test case's ICD codes and to its
// text references.
//
//     cargo run --example semantic_search

use std::path::Path;

use notegen::corpus::{ingest_corpus, read_id_list, split_corpus, Corpus};
use notegen::index::{build_index, query_text, Index, QueryMode, StubEmbedder};
use notegen::retry::RetryPolicy;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let cases = ingest_corpus(&root.join("notes"), &root.join("annotations.tsv")).unwrap().cases;
    let split = split_corpus(&cases, &read_id_list(&root.join("test_ids.txt")).unwrap()).unwrap();
    let corpus = Corpus { cases, split };

    let embedder = StubEmbedder::new(64, 7);
    let index = build_index(corpus.index_cases(), &embedder, &RetryPolicy::immediate(3)).unwrap();

    // The binary format round-trips.
    let reloaded = Index::from_bytes(&index.to_bytes()).unwrap();
    assert_eq!(reloaded.entries(), index.entries());

    let case = corpus.get("S1130-01082008000100009-1").unwrap();
    for mode in [QueryMode::IcdCodes, QueryMode::TextReferences] {
        println!("query ({}): {}", mode.name(), query_text(case, mode).unwrap());
        for (rank, hit) in index.query_for_case(&embedder, case, mode, 5).unwrap().iter().enumerate() {
            println!("  {}. {}  {:.4}", rank + 1, hit.case_id, hit.relatedness);
        }
    }
}
