// Scores generated text against a ground-truth note: summary-vector and
// mean-token cosine distances, a token similarity table, and the bootstrap,
// KDE and box statistics over a set of distances.
//
//     cargo run --example evaluate_notes

use notegen::eval::stats::{kde_peak, linspace, shifted_left};
use notegen::eval::{
    bootstrap_ci, box_stats, kde, sentence_distances, token_similarity_table, StubTokenEmbedder,
};

fn main() {
    let embedder = StubTokenEmbedder::new(64, 11);
    let gt = "A 56-year-old woman complained of toothache and mild pain in the lower molar.";
    let generated = "A 56-year-old woman reported oral discomfort and pain in a lower molar.";

    let (cls, mean) = sentence_distances(gt, generated, &embedder).unwrap();
    println!("cls distance {cls:.4}, mean distance {mean:.4}");

    for row in token_similarity_table(gt, generated, &embedder).unwrap() {
        println!("  {:<10} -> {:<10} {:.3} {}", row.gt_token, row.best_gen_token, row.similarity, row.band);
    }

    let baseline: Vec<f64> = (0..250).map(|i| 0.30 + 0.04 * ((i as f64) * 0.7).sin()).collect();
    let improved: Vec<f64> = baseline.iter().map(|d| d - 0.05).collect();

    let (lo, hi) = bootstrap_ci(&baseline, 0.95, 1000, 123).unwrap();
    println!("baseline mean 95% CI [{lo:.4}, {hi:.4}]");

    let b = box_stats(&baseline).unwrap();
    println!("median {:.4} IQR {:.4} outliers {}", b.median, b.iqr, b.outliers.len());

    let grid = linspace(0.1, 0.5, 401);
    let peak = kde_peak(&grid, &kde(&baseline, &grid, None).unwrap()).unwrap();
    println!("baseline KDE peak at {peak:.3}");
    println!("leftward shift detected: {}", shifted_left(&baseline, &improved, 512).unwrap());
}
