//! SNOMED CT release artifacts turned into a small knowledge graph that can
//! be rendered as prompt text for a list of ICD-10-CM codes.

mod graph;
pub mod owl;
pub mod rf2;

use std::path::Path;

pub use graph::{build_graph, IcdMapping, KgConcept, KgGraph};
pub use owl::{
    parse_owl_refset, AxiomKind, ClassExpr, OwlAxiom, OwlRefset, SkippedAxiom, ROLE_GROUP,
};
pub use rf2::{parse_descriptions, parse_rf2_map, MapRows};

use crate::error::Result;

/// Everything read from a release while building the graph.
#[derive(Debug)]
pub struct LoadedGraph {
    pub graph: KgGraph,
    pub map: MapRows,
    pub parsed_axioms: usize,
    pub skipped_axioms: Vec<SkippedAxiom>,
}

/// Parses the map, OWL refset and description files and builds the graph.
pub fn load_release(map: &Path, owl: &Path, descriptions: &Path) -> Result<LoadedGraph> {
    let map = parse_rf2_map(map)?;
    let refset = parse_owl_refset(owl)?;
    let labels = parse_descriptions(descriptions)?;
    let parsed_axioms = refset.axioms.len();
    let graph = build_graph(&map.rows, refset.axioms, &labels);
    Ok(LoadedGraph {
        graph,
        map,
        parsed_axioms,
        skipped_axioms: refset.skipped,
    })
}
