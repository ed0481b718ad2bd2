use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wafl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wafl"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a small MNIST-shaped IDX set where class `c` brightens row band `c`.
fn fake_mnist(dir: &Path, train: usize, test: usize) {
    fs::create_dir_all(dir).unwrap();
    let write = |stem: &str, n: usize, salt: usize| {
        let mut images = vec![0, 0, 8, 3];
        for v in [n as u32, 28, 28] {
            images.extend_from_slice(&v.to_be_bytes());
        }
        let mut labels = vec![0, 0, 8, 1];
        labels.extend_from_slice(&(n as u32).to_be_bytes());
        for i in 0..n {
            let label = ((i * 7 + salt) % 10) as u8;
            for p in 0..784 {
                let lit = p / 78 == label as usize;
                images.push(if lit {
                    200 + (p % 50) as u8
                } else {
                    ((p * 31 + i) % 40) as u8
                });
            }
            labels.push(label);
        }
        fs::write(dir.join(format!("{stem}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{stem}-labels-idx1-ubyte")), labels).unwrap();
    };
    write("train", train, 0);
    write("t10k", test, 3);
}

#[test]
fn gen_poison_rmp_writes_full_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let o = wafl(&["gen-poison", "rmp", "--seed", "7", "--out", "rmp.waflm"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("101770 parameters"));
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rmp.waflm.json")).unwrap()).unwrap();
    assert_eq!(side["kind"], "RMP");
    assert_eq!(side["seed"], 7);

    let o = wafl(&["inspect", "rmp.waflm"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("101770 parameters"));
    assert!(text.contains("fc1.weight [128 x 784]"));

    wafl(
        &["gen-poison", "rmp", "--seed", "7", "--out", "again.waflm"],
        dir.path(),
    );
    assert_eq!(
        fs::read(dir.path().join("rmp.waflm")).unwrap(),
        fs::read(dir.path().join("again.waflm")).unwrap()
    );
    let o = wafl(&["inspect", "rmp.waflm", "--against", "again.waflm"], dir.path());
    assert!(stdout(&o).contains("fc1.weight 0.000000"), "{}", stdout(&o));
}

#[test]
fn trained_poisons_record_their_classes() {
    let dir = tempfile::tempdir().unwrap();
    fake_mnist(&dir.path().join("mnist"), 200, 50);
    let o = wafl(
        &[
            "gen-poison",
            "ssc",
            "--pair",
            "4,9",
            "--epochs",
            "1",
            "--data-dir",
            "mnist",
            "--out",
            "ssc.waflm",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ssc.waflm.json")).unwrap()).unwrap();
    assert_eq!(side["kind"], "SSC");
    assert_eq!(side["classes"], serde_json::json!([4, 9]));
    assert_eq!(side["training"]["epochs"], 1);
    assert_eq!(side["training"]["learning_rate"], 0.0001);

    let o = wafl(
        &[
            "gen-poison",
            "cod",
            "--target",
            "0",
            "--override",
            "6",
            "--epochs",
            "1",
            "--data-dir",
            "mnist",
            "--out",
            "cod.waflm",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("cod.waflm.json")).unwrap()).unwrap();
    assert_eq!(side["kind"], "COD");
    assert_eq!(side["classes"], serde_json::json!([0, 6]));
}

#[test]
fn identical_pair_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wafl(&["gen-poison", "ssc", "--pair", "4,4"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("distinct"), "{}", stderr(&o));
    assert!(!dir.path().join("poison.waflm").exists());
}

#[test]
fn unknown_subcommand_and_flags_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(wafl(&["bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(wafl(&["gen-poison", "xyz"], dir.path()).status.code(), Some(1));
    assert_eq!(wafl(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn missing_data_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wafl(&["partition", "--data-dir", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

fn column_sums(table: &str) -> Vec<String> {
    table
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn partition_table_columns_sum_to_label_totals() {
    let dir = tempfile::tempdir().unwrap();
    fake_mnist(&dir.path().join("mnist"), 500, 10);
    let a = wafl(
        &["partition", "--data-dir", "mnist", "--seed", "1", "--out", "p1"],
        dir.path(),
    );
    let b = wafl(
        &["partition", "--data-dir", "mnist", "--seed", "2", "--out", "p2"],
        dir.path(),
    );
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    let ta = fs::read_to_string(dir.path().join("p1/counts.csv")).unwrap();
    let tb = fs::read_to_string(dir.path().join("p2/counts.csv")).unwrap();
    assert_ne!(ta, tb);
    assert_eq!(column_sums(&ta), column_sums(&tb));
    assert_eq!(column_sums(&ta).last().unwrap(), "500");
    assert_eq!(stdout(&a), ta);
    let assignment = fs::read_to_string(dir.path().join("p1/assignment.csv")).unwrap();
    assert_eq!(assignment.lines().next().unwrap(), "sample_index,node_id");
    assert_eq!(assignment.lines().count(), 501);
}

#[test]
fn config_with_inverted_window_names_both_fields() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "[attack]\nkind = \"RMP\"\nstart = 900\nend = 100\n",
    )
    .unwrap();
    let o = wafl(&["run", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("start") && err.contains("end"), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("typo.toml"), "lamda = 0.2\n").unwrap();
    let o = wafl(&["run", "typo.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lamda"), "{}", stderr(&o));
}

#[test]
fn run_writes_metrics_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fake_mnist(&dir.path().join("mnist"), 600, 100);
    for out in ["r1", "r2"] {
        fs::write(
            dir.path().join(format!("{out}.toml")),
            format!(
                "data_dir = \"mnist\"\noutput_dir = \"{out}\"\ntotal_epochs = 3\neval_interval = 1\nconfusion_interval = 3\n"
            ),
        )
        .unwrap();
        let o = wafl(&["run", &format!("{out}.toml")], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let m1 = fs::read_to_string(dir.path().join("r1/metrics.csv")).unwrap();
    let m2 = fs::read_to_string(dir.path().join("r2/metrics.csv")).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.lines().count(), 1 + 4 * 10);
    assert!(dir.path().join("r1/confusion_e3_n9.json").exists());
    assert!(dir.path().join("r1/manifest.json").exists());
    assert!(!dir.path().join("r1/poison.waflm").exists());
}
