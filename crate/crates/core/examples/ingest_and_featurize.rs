//! Writes a tiny event log to disk, reads it back and builds feature vectors.

use fedrank::data::{ingest_events, parse_timestamp, write_events, EventRecord, OperationVocab};
use fedrank::features::{featurize, CourseSpan, FeatureSpec};

fn event(student: &str, op: &str, at: &str) -> EventRecord {
    EventRecord {
        student_id: student.into(),
        material_id: "slides-01".into(),
        operation: op.into(),
        event_time: parse_timestamp(at).expect("literal timestamp"),
    }
}

fn main() -> fedrank::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("events.csv");
    let records = vec![
        event("alice", "OPEN", "2024-04-08T09:00:00Z"),
        event("alice", "NEXT", "2024-04-08T09:01:00Z"),
        event("alice", "NEXT", "2024-04-15T09:02:00Z"),
        event("bob", "OPEN", "2024-04-20T10:00:00Z"),
        event("bob", "ZOOM_IN", "2024-04-20T10:05:00Z"),
    ];
    write_events(&path, &records)?;

    let vocab = OperationVocab::default();
    let log = ingest_events(&path, &vocab)?;
    println!("read {} events ({} mapped to OTHER)", log.records.len(), log.other_count);

    let spec = FeatureSpec::new(vocab, 4)?;
    let span = CourseSpan::new(
        parse_timestamp("2024-04-08T00:00:00Z").unwrap(),
        parse_timestamp("2024-04-22T00:00:00Z").unwrap(),
    )?;
    let table = featurize(&log.records, &spec, &span)?;
    println!("dimension {} ({} operations x {} buckets)", spec.dimension(), spec.vocab.len(), spec.n_buckets);
    for (student, v) in &table {
        let nonzero: Vec<String> = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| format!("{i}:{x}"))
            .collect();
        println!("{student:>6}  {}", nonzero.join(" "));
    }
    Ok(())
}
