// Reads the bundled notes, annotations and demographics, then splits the
// cases into the retrieval pool and the held-out test pool.
//
//     cargo run --example ingest_corpus

use std::path::Path;

use notegen::corpus::{attach_demographics, ingest_corpus, read_id_list, split_corpus, Corpus};

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus");
    let ingested = ingest_corpus(&root.join("notes"), &root.join("annotations.tsv")).unwrap();
    let (cases, warnings) = attach_demographics(ingested.cases, &root.join("demographics.tsv")).unwrap();
    assert!(ingested.warnings.is_empty() && warnings.is_empty());

    let split = split_corpus(&cases, &read_id_list(&root.join("test_ids.txt")).unwrap()).unwrap();
    println!("index={} test={}", split.index_pool.len(), split.test_pool.len());

    let corpus = Corpus { cases, split };
    for case in corpus.test_cases() {
        println!(
            "{}  age={:?} gender={}  codes=[{}]  refs=[{}]  words={}",
            case.case_id,
            case.age,
            case.gender,
            case.icd_codes.join(" "),
            case.text_references.join("; "),
            case.word_count
        );
    }
}
