//! Metrics CSV schema: exact header, exact round trip (NaN included).

mod common;

use pruneclust_cli::error::CliError;
use pruneclust_cli::metrics::{read_metrics, write_metrics, MetricsRow, HEADER};

fn row(run: &str, seed: u64, epoch: usize, acc: f32) -> MetricsRow {
    MetricsRow {
        run_id: run.to_string(),
        seed,
        dataset: "mnist".to_string(),
        model: "minivgg".to_string(),
        method: "clustered".to_string(),
        criterion: "l1".to_string(),
        sparsity: 0.6,
        phase: "finetune".to_string(),
        epoch,
        train_loss: 0.25,
        test_accuracy: acc,
        params: 12_345,
        flops: 678_900,
    }
}

#[test]
fn the_header_is_exactly_the_published_column_list() {
    assert_eq!(
        HEADER,
        "run_id,seed,dataset,model,method,criterion,sparsity,phase,epoch,train_loss,test_accuracy,params,flops"
    );
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("m.csv");
    write_metrics(&[row("r", 1, 0, 0.97)], &path).expect("write");
    let text = std::fs::read_to_string(&path).expect("read");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    assert_eq!(lines.clone().count(), 1, "one row -> two-line csv");
    let data_line = lines.next().expect("row line");
    assert!(data_line.starts_with("r,1,mnist,minivgg,clustered,l1,0.6,finetune,0,0.25,0.97,"), "{data_line}");
}

#[test]
fn rows_round_trip_exactly_including_nan_cells() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("m.csv");
    let mut rows = vec![row("a", 1, 0, 0.91), row("a", 1, 1, 0.93), row("b", 2, 0, 0.92)];
    rows[0].train_loss = f32::NAN;
    rows[2].phase = "ticket".to_string();
    write_metrics(&rows, &path).expect("write");
    let back = read_metrics(&path).expect("read");
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.run_id, b.run_id);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.model, b.model);
        assert_eq!(a.method, b.method);
        assert_eq!(a.criterion, b.criterion);
        assert_eq!(a.sparsity.to_bits(), b.sparsity.to_bits());
        assert_eq!(a.phase, b.phase);
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits(), "NaN and values round-trip bitwise");
        assert_eq!(a.test_accuracy.to_bits(), b.test_accuracy.to_bits());
        assert_eq!(a.params, b.params);
        assert_eq!(a.flops, b.flops);
    }
}

#[test]
fn an_empty_row_list_still_writes_the_header() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("empty.csv");
    write_metrics(&[], &path).expect("write");
    let text = std::fs::read_to_string(&path).expect("read");
    assert_eq!(text.trim_end(), HEADER);
    assert!(read_metrics(&path).expect("read").is_empty());
}

#[test]
fn foreign_headers_are_rejected() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("foreign.csv");
    std::fs::write(&path, "a,b,c\n1,2,3\n").expect("write");
    let err = read_metrics(&path).expect_err("foreign header");
    assert!(matches!(&err, CliError::Data(m) if m.contains("header")), "{err}");
}

#[test]
fn malformed_rows_name_their_line() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("bad_row.csv");
    std::fs::write(&path, format!("{HEADER}\nr,notanumber,mnist,minivgg,clustered,l1,0.6,finetune,0,0.1,0.9,1,1\n"))
        .expect("write");
    let err = read_metrics(&path).expect_err("bad seed cell");
    assert!(err.to_string().contains("row 2"), "{err}");
}
