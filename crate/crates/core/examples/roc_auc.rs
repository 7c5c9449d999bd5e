//! Frame-level AUC and the ROC polyline for a handful of scores.

use scvad::evaluator::{frame_auc, roc_area, roc_points};

fn main() -> scvad::Result<()> {
    let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.05];
    let labels = [0, 0, 1, 1, 1, 0];
    let points = roc_points(&scores, &labels)?;
    println!("{:>10} {:>6} {:>6}", "threshold", "fpr", "tpr");
    for p in &points {
        println!("{:>10} {:>6.3} {:>6.3}", p.threshold, p.fpr, p.tpr);
    }
    println!("AUC {:.4}, trapezoid area {:.4}", frame_auc(&scores, &labels)?, roc_area(&points));
    Ok(())
}
