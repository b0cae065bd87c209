//! Confusion matrix, macro and micro scores, and the challenge F1 (mean of
//! the N, A and O class F1) for a fixed prediction list.

use sqnz::metrics::{averaged_metrics, cinc_overall_f1, confusion_matrix, Averaging, EvalReport};
use sqnz::signal_io::Label;

fn main() -> sqnz::Result<()> {
    let parse = |s: &str| -> Vec<Label> { s.chars().map(|c| Label::from_char(c).unwrap()).collect() };
    let truth = parse("NNNNNNNNNNAAAAOOOOO~~");
    let pred = parse("NNNNNNNNOAAAANOOOON~A");
    let cm = confusion_matrix(&pred, &truth)?;
    println!("rows = truth, columns = prediction (N, A, O, ~)");
    for (i, row) in cm.counts.iter().enumerate() {
        println!("  {} {:?}", Label::from_index(i).unwrap().as_char(), row);
    }
    for c in 0..4 {
        let s = cm.class_scores(c);
        println!(
            "  {}: precision {:.3} sensitivity {:.3} specificity {:.3} f1 {:.3}",
            Label::from_index(c).unwrap().as_char(),
            s.precision,
            s.sensitivity,
            s.specificity,
            s.f1
        );
    }
    for avg in [Averaging::Macro, Averaging::Micro] {
        println!("{avg:?}: {:?}", averaged_metrics(&cm, avg));
    }
    println!("challenge F1 {:.4}", cinc_overall_f1(&cm));
    let report = EvalReport::new(cm, 0.9, Some(0.6));
    println!("{}", serde_json::to_string(&report).unwrap());
    Ok(())
}
