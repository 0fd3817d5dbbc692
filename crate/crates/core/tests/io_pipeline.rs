use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crtgee::io::analyze::{analyze, AnalyzeOptions};
use crtgee::io::config::GridConfig;
use crtgee::io::results::read_results;
use crtgee::io::simulate::simulate;
use crtgee::io::trial_csv::read_trial_csv;
use crtgee::{Error, EstimatorKind, ModelSpec};

fn walkthrough() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/walkthrough.csv");
    fs::read_to_string(path).unwrap()
}

#[test]
fn shuffled_rows_give_identical_estimates() {
    let text = walkthrough();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    let base = read_trial_csv(text.as_bytes()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for spec in ModelSpec::all_two_arm() {
        let want = analyze(&base, &spec, &EstimatorKind::ALL, &AnalyzeOptions::default()).unwrap();
        lines.shuffle(&mut rng);
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let data = read_trial_csv(shuffled.as_bytes()).unwrap();
        let got = analyze(&data, &spec, &EstimatorKind::ALL, &AnalyzeOptions::default()).unwrap();
        assert_eq!(got.converged, want.converged);
        for (a, b) in got.beta.unwrap().iter().zip(want.beta.as_ref().unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (g, w) in got.estimates.iter().zip(&want.estimates) {
            match (g.variance, w.variance) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{spec} {}", g.estimator),
                (a, b) => assert_eq!(a.is_some(), b.is_some()),
            }
        }
    }
}

#[test]
fn malformed_csv_reports_the_line() {
    let bad = "cluster_id,arm,outcome\na,0,1\na,0,2\n";
    let err = read_trial_csv(bad.as_bytes()).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    let conflicting = "cluster_id,arm,outcome\na,0,1\nb,1,0\na,1,0\n";
    assert!(matches!(read_trial_csv(conflicting.as_bytes()).unwrap_err(), Error::Parse { line: 4, .. }));
    let single_arm = "cluster_id,arm,outcome\na,0,1\nb,0,0\n";
    assert!(read_trial_csv(single_arm.as_bytes()).is_err());
}

const GRID: &str = r#"
seed = 7
replicates = 12
n_clusters = [6, 8]
cluster_sizes = [6]
pi0 = [0.3]
icc = [0.02, 0.1]
models = ["poisson-log", "gaussian-identity"]
"#;

#[test]
fn resume_completes_a_truncated_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GridConfig::from_toml_str(GRID).unwrap();
    let full = dir.path().join("full.csv");
    let summary = simulate(&cfg, &full, 2, false).unwrap();
    assert_eq!(summary.scenarios_run, 4);
    assert_eq!(summary.rows_written, 4 * 2 * 7);
    let full_bytes = fs::read(&full).unwrap();

    // keep the header, one complete scenario and half of the next
    let text = String::from_utf8(full_bytes.clone()).unwrap();
    let partial: Vec<&str> = text.lines().take(1 + 14 + 7).collect();
    let cut = dir.path().join("cut.csv");
    fs::write(&cut, partial.join("\n") + "\n").unwrap();
    let resumed = simulate(&cfg, &cut, 3, true).unwrap();
    assert_eq!(resumed.scenarios_resumed, 1);
    assert_eq!(resumed.scenarios_run, 3);
    assert_eq!(fs::read(&cut).unwrap(), full_bytes);
    assert_eq!(read_results(fs::File::open(&cut).unwrap()).unwrap().len(), 56);
}

#[test]
fn config_errors_name_the_key() {
    let bad = GRID.replace("icc = [0.02, 0.1]", "icc = [1.5]");
    let err = GridConfig::from_toml_str(&bad).unwrap_err().to_string();
    assert!(err.contains("icc"), "{err}");
    let unknown = format!("{GRID}\nreplicate = 3\n");
    let err = GridConfig::from_toml_str(&unknown).unwrap_err().to_string();
    assert!(err.contains("replicate"), "{err}");
}
