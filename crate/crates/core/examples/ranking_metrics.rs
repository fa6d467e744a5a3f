//! Ranking metrics on a hand-made ranking, next to a shuffled baseline.

use fedrank::metrics::{evaluate, pr_curve, random_baseline, RankedStudent, RiskRanking};

fn main() -> fedrank::Result<()> {
    // Twenty students, most at-risk first; five are truly at risk.
    let mut flags = [false; 20];
    for i in [0, 1, 3, 6, 12] {
        flags[i] = true;
    }
    let entries = flags
        .iter()
        .enumerate()
        .map(|(i, &at_risk)| RankedStudent {
            student_id: format!("s{i}"),
            score: i as f64,
            at_risk,
            grade_score: if at_risk { 0.1 } else { 0.5 + 0.02 * i as f64 },
        })
        .collect();
    let ranking = RiskRanking::from_ordered(entries)?;

    let m = evaluate(&ranking)?;
    println!("top-5 {:.3}  top-at-risk {:.3}  nDCG {:.3}  PR-AUC {:.3}", m.precision_at_5, m.precision_at_risk, m.ndcg, m.pr_auc);

    println!("\n n  recall  precision");
    for p in pr_curve(&ranking)? {
        println!("{:>2}  {:.3}   {:.3}", p.n, p.recall, p.precision);
    }

    let r = random_baseline(&ranking, 2000, 1)?;
    println!("\nrandom order over 2000 shuffles: PR-AUC {:.3}, nDCG {:.3}", r.pr_auc, r.ndcg);
    Ok(())
}
