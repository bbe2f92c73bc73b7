// Builds the SNOMED CT knowledge graph from the bundled mini release and
// renders the prompt fragment for the edentulism code K08.109.
//
//     cargo run --example knowledge_graph

use std::path::Path;

use notegen::snomed::{load_release, owl};

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/snomed");
    let loaded = load_release(
        &dir.join("icd10cm_map.tsv"),
        &dir.join("owl_refset.tsv"),
        &dir.join("descriptions.tsv"),
    )
    .unwrap();
    println!(
        "{} concepts, {} mapped codes, {} axioms, {} skipped",
        loaded.graph.concepts.len(),
        loaded.graph.icd_index.len(),
        loaded.parsed_axioms,
        loaded.skipped_axioms.len()
    );

    let fragment = loaded.graph.render_kg_fragment(&["K08.109".into(), "R52".into(), "Z99.89".into()]);
    println!("{fragment}");

    // Expressions serialize back to functional syntax.
    let axiom = loaded.graph.axioms_for(278650002).next().unwrap();
    let text = axiom.to_functional();
    assert_eq!(owl::parse_axiom(&text).unwrap(), *axiom);
    println!("{text}");
}
