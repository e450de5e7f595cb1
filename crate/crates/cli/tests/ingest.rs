use std::fmt::Write as _;

use dgp_cli::ingest::{ingest_csv, parse_table, IngestError};

fn three_column(rows: usize) -> String {
    let mut s = String::from("x,s1:young,s2:older\n");
    for i in 0..rows {
        let x = i as f64 * 0.02;
        writeln!(s, "{x},{},{}", x.sin(), x.cos()).unwrap();
    }
    s
}

fn line_of(e: IngestError) -> u64 {
    match e {
        IngestError::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn three_columns_101_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, three_column(101)).unwrap();
    let t = ingest_csv(&path).unwrap();
    assert_eq!(t.x.len(), 101);
    assert_eq!(t.len(), 2);
    assert!(t.y.iter().all(|y| y.len() == 101));
    assert_eq!(t.labels[1].group.as_deref(), Some("older"));
    assert_eq!(t.y[1][0], 1.0);
}

#[test]
fn header_with_group_and_condition() {
    let t = parse_table("x,s1:older:voiced\n0,1\n1,2\n2,3\n").unwrap();
    let l = &t.labels[0];
    assert_eq!(l.id, "s1");
    assert_eq!(l.group.as_deref(), Some("older"));
    assert_eq!(l.condition.as_deref(), Some("voiced"));
}

#[test]
fn duplicated_x_is_an_error_with_line() {
    let e = parse_table("x,a\n0,1\n1,2\n1,3\n2,4\n").unwrap_err();
    assert_eq!(line_of(e), 4);
}

#[test]
fn decreasing_x_is_an_error() {
    let e = parse_table("x,a\n0,1\n2,2\n1,3\n").unwrap_err();
    assert_eq!(line_of(e), 4);
}

#[test]
fn ragged_row_is_an_error_with_line() {
    let e = parse_table("x,a,b\n0,1,2\n1,2\n2,3,4\n").unwrap_err();
    assert_eq!(line_of(e), 3);
}

#[test]
fn non_numeric_cell_is_an_error_with_line() {
    let e = parse_table("x,a\n0,1\n1,2\n2,abc\n").unwrap_err();
    assert_eq!(line_of(e), 4);
}

#[test]
fn duplicate_subject_ids_rejected() {
    assert!(parse_table("x,a,a:g\n0,1,1\n1,2,2\n2,3,3\n").is_err());
}

#[test]
fn missing_file_is_io_error() {
    let e = ingest_csv(std::path::Path::new("/nonexistent/file.csv")).unwrap_err();
    assert!(matches!(e, IngestError::Io { .. }));
}

#[test]
fn too_few_rows_rejected() {
    assert!(parse_table("x,a\n0,1\n1,2\n").is_err());
}
