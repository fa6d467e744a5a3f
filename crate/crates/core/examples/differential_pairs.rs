//! Pairwise differences and how pair scores collapse back to one score per student.

use fedrank::data::{ClientDataset, Grade};
use fedrank::pairs::{individual_scores, make_pairs, pair_count, score_all_pairs};

fn main() -> fedrank::Result<()> {
    let students: Vec<String> = ["ann", "ben", "cat", "dan"].map(String::from).to_vec();
    let features = vec![vec![3.0, 1.0], vec![1.0, 0.0], vec![4.0, 2.0], vec![0.5, 0.5]];
    let grades = vec![Grade::B, Grade::D, Grade::A, Grade::F];
    let client = ClientDataset::new("demo", students.clone(), features.clone(), grades, 0.95, 1)?;

    let pairs = make_pairs(&client)?;
    println!("{} students -> {} ordered pairs", client.len(), pair_count(client.len()));
    for p in pairs.iter().take(4) {
        println!("  d = {:?}, e = {:+.4}", p.d, p.e);
    }

    // A stand-in scorer: the sum of the feature differences.
    let scores = score_all_pairs(&students, &features, |ds| Ok(ds.iter().map(|d| d.iter().sum()).collect()))?;
    let q = individual_scores(&scores, &students)?;
    let mut ranked: Vec<_> = q.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
    println!("\nmost at risk first:");
    for (id, s) in ranked {
        println!("  {id:>4}  {s:+.2}");
    }
    Ok(())
}
