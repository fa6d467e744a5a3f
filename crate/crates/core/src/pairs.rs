//! Differential feature pairs within one client and the reduction from
//! pairwise scores back to per-student values.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ClientDataset;
use crate::error::{Error, Result};

/// Ordered pair `(i, j)` of students in one client, with `d = v_i - v_j`
/// and `e = g_i - g_j`. `i` and `j` index into the client's student list.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub i: usize,
    pub j: usize,
    pub d: Vec<f64>,
    pub e: f64,
}

impl PairSample {
    fn build(client: &ClientDataset, i: usize, j: usize) -> Self {
        let (vi, vj) = (&client.features()[i], &client.features()[j]);
        let g = client.scored_grades();
        PairSample {
            i,
            j,
            d: vi.iter().zip(vj).map(|(a, b)| a - b).collect(),
            e: g[i] - g[j],
        }
    }
}

/// Number of ordered pairs of `n` students.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1)
}

/// Maps `k` in `0..n(n-1)` to the `k`-th ordered pair in `(i, j)` order.
fn pair_at(k: usize, n: usize) -> (usize, usize) {
    let i = k / (n - 1);
    let r = k % (n - 1);
    (i, if r < i { r } else { r + 1 })
}

/// All `n(n-1)` ordered pairs of the client, in `(i, j)` lexicographic order.
pub fn make_pairs(client: &ClientDataset) -> Result<Vec<PairSample>> {
    let n = client.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "client `{}` has {n} student(s); pairs need at least 2",
            client.client_id()
        )));
    }
    Ok((0..pair_count(n))
        .map(|k| {
            let (i, j) = pair_at(k, n);
            PairSample::build(client, i, j)
        })
        .collect())
}

/// At most `max_pairs` ordered pairs drawn uniformly without replacement.
/// Falls back to [`make_pairs`] when the full set fits under the cap.
pub fn pair_cap(client: &ClientDataset, max_pairs: usize, seed: u64) -> Result<Vec<PairSample>> {
    let n = client.len();
    if max_pairs < n {
        return Err(Error::invalid(format!(
            "max_pairs {max_pairs} is below the client size {n}"
        )));
    }
    let total = pair_count(n);
    if total <= max_pairs {
        return make_pairs(client);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, total, max_pairs).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|k| {
            let (i, j) = pair_at(k, n);
            PairSample::build(client, i, j)
        })
        .collect())
}

/// Scores `p_ij` for ordered pairs of one client's students.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseScores {
    students: Vec<String>,
    index: BTreeMap<String, usize>,
    values: Vec<Option<f64>>,
}

impl PairwiseScores {
    pub fn new(students: Vec<String>) -> Self {
        let index = students.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        let n = students.len();
        PairwiseScores {
            students,
            index,
            values: vec![None; n * n],
        }
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn insert(&mut self, i: &str, j: &str, score: f64) -> Result<()> {
        let (a, b) = (self.position(i)?, self.position(j)?);
        if a == b {
            return Err(Error::invalid(format!("self-pair ({i}, {i}) has no score")));
        }
        self.set_by_index(a, b, score);
        Ok(())
    }

    pub fn set_by_index(&mut self, i: usize, j: usize, score: f64) {
        let n = self.students.len();
        self.values[i * n + j] = Some(score);
    }

    pub fn get(&self, i: &str, j: &str) -> Option<f64> {
        let n = self.students.len();
        let (a, b) = (*self.index.get(i)?, *self.index.get(j)?);
        self.values[a * n + b]
    }

    fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown student `{id}`")))
    }
}

/// `q_i = sum_{j != i} p_ij` over `students`, summed in list order.
pub fn individual_scores(scores: &PairwiseScores, students: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for i in students {
        let mut q = 0.0;
        for j in students {
            if i == j {
                continue;
            }
            q += scores.get(i, j).ok_or_else(|| Error::MissingPair {
                i: i.clone(),
                j: j.clone(),
            })?;
        }
        out.insert(i.clone(), q);
    }
    Ok(out)
}

/// Scores every ordered pair of `features` with `scorer` (called once on all
/// difference vectors in `(i, j)` order) and fills a complete matrix.
pub fn score_all_pairs<F>(students: &[String], features: &[Vec<f64>], scorer: F) -> Result<PairwiseScores>
where
    F: FnOnce(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let n = students.len();
    if features.len() != n {
        return Err(Error::invalid("one feature row per student required"));
    }
    let diffs: Vec<Vec<f64>> = (0..pair_count(n))
        .map(|k| {
            let (i, j) = pair_at(k, n);
            features[i].iter().zip(&features[j]).map(|(a, b)| a - b).collect()
        })
        .collect();
    let predicted = scorer(&diffs)?;
    if predicted.len() != diffs.len() {
        return Err(Error::invalid("scorer returned the wrong number of values"));
    }
    let mut scores = PairwiseScores::new(students.to_vec());
    for (k, p) in predicted.into_iter().enumerate() {
        let (i, j) = pair_at(k, n);
        scores.set_by_index(i, j, p);
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Grade;

    fn client(n: usize) -> ClientDataset {
        let students = (0..n).map(|i| format!("s{i:02}")).collect();
        let features = (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let grades = (0..n).map(|i| Grade::from_ordinal(i % 5 + 1).unwrap()).collect();
        ClientDataset::new("c", students, features, grades, 0.95, 8).unwrap()
    }

    #[test]
    fn five_students_give_twenty_pairs() {
        assert_eq!(make_pairs(&client(5)).unwrap().len(), 20);
        assert!(make_pairs(&client(1)).is_err());
    }

    #[test]
    fn identical_students_have_zero_differences() {
        let c = ClientDataset::new(
            "c",
            vec!["a".into(), "b".into()],
            vec![vec![1.5, 2.0], vec![1.5, 2.0]],
            vec![Grade::B, Grade::B],
            0.95,
            8,
        )
        .unwrap();
        for p in make_pairs(&c).unwrap() {
            assert_eq!(p.d, [0.0, 0.0]);
            assert_eq!(p.e, 0.0);
        }
    }

    #[test]
    fn pair_enumeration_is_lexicographic() {
        let n = 4;
        let got: Vec<_> = (0..pair_count(n)).map(|k| pair_at(k, n)).collect();
        let mut want = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    want.push((i, j));
                }
            }
        }
        assert_eq!(got, want);
    }

    #[test]
    fn hand_summed_individual_score() {
        let ids: Vec<String> = (1..=5).map(|k| format!("s{k}")).collect();
        let mut m = PairwiseScores::new(ids.clone());
        for i in &ids {
            for j in &ids {
                if i != j {
                    m.insert(i, j, 0.0).unwrap();
                }
            }
        }
        for (j, p) in ids[1..].iter().zip([0.2, 0.1, -0.3, 0.4]) {
            m.insert("s1", j, p).unwrap();
        }
        let q = individual_scores(&m, &ids).unwrap();
        assert!((q["s1"] - 0.4).abs() < 1e-15);
        assert_eq!(q["s2"], 0.0);
    }

    #[test]
    fn missing_pair_is_named() {
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let mut m = PairwiseScores::new(ids.clone());
        m.insert("a", "b", 1.0).unwrap();
        match individual_scores(&m, &ids) {
            Err(Error::MissingPair { i, j }) => assert_eq!((i.as_str(), j.as_str()), ("b", "a")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cap_inactive_when_above_full_count() {
        let c = client(5);
        assert_eq!(pair_cap(&c, 100, 7).unwrap(), make_pairs(&c).unwrap());
    }

    #[test]
    fn capped_pairs_are_distinct_and_reproducible() {
        let c = client(50);
        let a = pair_cap(&c, 500, 42).unwrap();
        let b = pair_cap(&c, 500, 42).unwrap();
        assert_eq!(a.len(), 500);
        assert_eq!(a, b);
        let mut keys: Vec<_> = a.iter().map(|p| (p.i, p.j)).collect();
        keys.dedup();
        assert_eq!(keys.len(), 500);
        assert!(a.iter().all(|p| p.i != p.j));
        assert_ne!(a, pair_cap(&c, 500, 43).unwrap());
        assert!(pair_cap(&c, 10, 42).is_err());
    }

    #[test]
    fn score_all_pairs_fills_matrix() {
        let c = client(4);
        let m = score_all_pairs(c.students(), c.features(), |d| Ok(d.iter().map(|v| v[0]).collect())).unwrap();
        assert_eq!(m.get("s03", "s00"), Some(3.0));
        assert_eq!(m.get("s00", "s03"), Some(-3.0));
        assert_eq!(m.get("s00", "s00"), None);
    }
}
