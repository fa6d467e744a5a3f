//! Cumulative grade scores and at-risk labels for a small cohort.

use fedrank::data::{label_at_risk, Grade, GradeScoring};
use fedrank::synth::cohort_from_counts;

fn main() -> fedrank::Result<()> {
    // A, B, C, D, F counts.
    let counts = [12, 18, 15, 9, 6];
    let records = cohort_from_counts("s", counts);
    let scoring = GradeScoring::from_records(&records, 0.95)?;

    println!("grade  count  score");
    for g in [Grade::A, Grade::B, Grade::C, Grade::D, Grade::F] {
        println!("{:>5}  {:>5}  {:.4}", g.letter(), scoring.counts()[g.ordinal() - 1], scoring.score(g));
    }

    let labels = label_at_risk(&records, 15)?;
    println!(
        "\nthreshold rank 15 -> boundary grade {}, {} students at risk",
        labels.boundary.letter(),
        labels.at_risk_count()
    );
    Ok(())
}
