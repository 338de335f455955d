use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn sdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.ini")
}

/// `key = value` line of a command's output.
fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{} = ", key)))
        .unwrap_or_else(|| panic!("no {} in:\n{}", key, out))
        .to_string()
}

/// An 8x8 dataset and a finished smoke run, shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    run: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("s8.sdnd");
        let o = sdn(&["generate-data", "--out", data.to_str().unwrap(), "--size", "8"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let run = dir.path().join("run");
        let o = train(&data, &run, &["--decoder", "sdn"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Fixture { _dir: dir, data, run }
    })
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let cfg = smoke_config();
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sdn(&args)
}

fn checkpoint() -> String {
    fixture().run.join("checkpoint.bin").to_string_lossy().into_owned()
}

#[test]
fn every_command_documents_its_flags() {
    let top = stdout(&sdn(&["--help"]));
    for cmd in ["generate-data", "train", "eval", "metrics", "sample", "interpolate", "bench"] {
        assert!(top.contains(cmd), "{} missing from --help", cmd);
    }
    let cases: &[(&[&str], &[&str])] = &[
        (&["generate-data"], &["--out", "--size", "--seed"]),
        (&["train"], &["--config", "--decoder", "--beta", "--seed", "--out", "--set", "--resume", "--dataset"]),
        (&["eval"], &["--checkpoint", "--dataset", "--iwae", "--seed", "--limit"]),
        (&["metrics"], &["--checkpoint", "--dataset", "--metric", "--seed", "--out"]),
        (&["sample"], &["--checkpoint", "--temperature", "--grid", "--out"]),
        (&["interpolate"], &["--checkpoint", "--index-a", "--index-b", "--steps", "--out"]),
        (&["bench", "params"], &["--channels"]),
        (&["bench", "runtime"], &["--scales", "--repeats", "--warmup", "--out"]),
        (&["bench", "jacobian"], &["--layer", "--directions", "--grid", "--out"]),
    ];
    for (cmd, flags) in cases {
        let mut args = cmd.to_vec();
        args.push("--help");
        let o = sdn(&args);
        assert_eq!(code(&o), 0);
        for f in *flags {
            assert!(stdout(&o).contains(f), "{:?} --help lacks {}", cmd, f);
        }
    }
}

#[test]
fn bench_params_prints_reference_counts() {
    let out = stdout(&sdn(&["bench", "params", "--channels", "200"]));
    let values: Vec<&str> = out.lines().skip(1).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(values, ["360200", "1000200", "40200", "481200", "561600", "1042800"]);
}

#[test]
fn generate_data_is_reproducible_and_validates_size() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.sdnd"), dir.path().join("b.sdnd"));
    let oa = sdn(&["generate-data", "--out", a.to_str().unwrap(), "--size", "8", "--seed", "3"]);
    let ob = sdn(&["generate-data", "--out", b.to_str().unwrap(), "--size", "8", "--seed", "3"]);
    assert_eq!(field(&stdout(&oa), "images"), "73728");
    assert_eq!(field(&stdout(&oa), "pixel_sha256"), field(&stdout(&ob), "pixel_sha256"));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(code(&sdn(&["generate-data", "--out", a.to_str().unwrap(), "--size", "0"])), 2);
    let o = sdn(&["generate-data", "--out", dir.path().join("c.sdnd").to_str().unwrap(), "--size", "16"]);
    assert_eq!(field(&stdout(&o), "shape"), "3x16x16 (8 bits)");
}

#[test]
fn training_writes_digested_log_and_checkpoint() {
    let f = fixture();
    let log = fs::read_to_string(f.run.join("train_log.csv")).unwrap();
    let cfg = fs::read_to_string(f.run.join("config.ini")).unwrap();
    let digest = cfg.lines().next().unwrap().strip_prefix("# config_digest=").unwrap();
    assert!(log.starts_with(&format!("# config_digest={}\n", digest)));
    let steps: Vec<&str> = log.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["20", "40", "60"]);
}

#[test]
fn identical_runs_are_byte_identical() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("again");
    assert_eq!(code(&train(&f.data, &again, &["--decoder", "sdn"])), 0);
    for file in ["train_log.csv", "checkpoint.bin", "config.ini"] {
        assert_eq!(fs::read(f.run.join(file)).unwrap(), fs::read(again.join(file)).unwrap(), "{} differs", file);
    }
}

#[test]
fn existing_runs_need_resume_with_the_same_config() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&train(&f.data, &run, &["--decoder", "sdn", "--set", "train.total_steps=40"])), 0);
    assert_eq!(code(&train(&f.data, &run, &["--decoder", "sdn", "--set", "train.total_steps=40"])), 2);
    assert_eq!(code(&train(&f.data, &run, &["--decoder", "cnn", "--set", "train.total_steps=40", "--resume"])), 2);
    let o = train(&f.data, &run, &["--decoder", "sdn", "--set", "train.total_steps=40", "--resume"]);
    assert_eq!(code(&o), 0);
    assert_eq!(field(&stdout(&o), "final_step"), "40");
}

#[test]
fn divergence_exits_with_diagnostics() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("nan");
    let o = train(&f.data, &run, &["--set", "train.lr=1e30"]);
    assert_eq!(code(&o), 3);
    let diag = fs::read_to_string(run.join("diagnostics.txt")).unwrap();
    assert!(diag.contains("batch_indices") && diag.contains("config_digest"));
}

#[test]
fn config_and_io_errors_have_distinct_codes() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ini");
    let text = fs::read_to_string(smoke_config()).unwrap().replace("lr = 0.001\n", "");
    fs::write(&bad, text).unwrap();
    let o = sdn(&["train", "--config", bad.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing key train.lr (expected float)"));
    let o = sdn(&["train", "--config", dir.path().join("absent.ini").to_str().unwrap(), "--out", "x"]);
    assert_eq!(code(&o), 4);
    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(code(&sdn(&["eval", "--checkpoint", junk.to_str().unwrap(), "--dataset", f.data.to_str().unwrap()])), 4);
    assert_eq!(code(&sdn(&["train", "--config", smoke_config().to_str().unwrap(), "--set", "train.nope=1", "--out", "x"])), 2);
}

#[test]
fn single_sample_iwae_equals_elbo() {
    let data = fixture().data.to_string_lossy().into_owned();
    let plain = stdout(&sdn(&["eval", "--checkpoint", &checkpoint(), "--dataset", &data, "--seed", "5"]));
    let k1 = stdout(&sdn(&["eval", "--checkpoint", &checkpoint(), "--dataset", &data, "--seed", "5", "--iwae", "1"]));
    let elbo: f64 = field(&plain, "neg_elbo_bpd").parse().unwrap();
    let iwae: f64 = field(&k1, "neg_iwae1_bpd").parse().unwrap();
    assert!((elbo - iwae).abs() < 1e-12, "{} vs {}", elbo, iwae);
    assert_eq!(field(&plain, "images"), "512");
}

#[test]
fn eval_is_independent_of_thread_count() {
    let data = fixture().data.to_string_lossy().into_owned();
    let run = |threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_sdn"))
            .args(["eval", "--checkpoint", &checkpoint(), "--dataset", &data, "--iwae", "4", "--limit", "64", "--batch", "8"])
            .env("SDN_NUM_THREADS", threads)
            .output()
            .unwrap();
        stdout(&o)
    };
    assert_eq!(run("1"), run("3"));
    let o = Command::new(env!("CARGO_BIN_EXE_sdn"))
        .args(["eval", "--checkpoint", &checkpoint(), "--dataset", &data])
        .env("SDN_NUM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_temperature_samples_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> = ["a.ppm", "b.ppm"].iter().map(|n| dir.path().join(n)).collect();
    for (seed, p) in ["1", "2"].iter().zip(&paths) {
        let o = sdn(&["sample", "--checkpoint", &checkpoint(), "--temperature", "0", "--grid", "2x3", "--seed", seed, "--out", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("convert"));
    }
    let (a, b) = (fs::read(&paths[0]).unwrap(), fs::read(&paths[1]).unwrap());
    // the seed is recorded in the header; the pixels agree
    let body = |v: &[u8]| v[v.len() - 3 * 17 * 26..].to_vec();
    assert_eq!(body(&a), body(&b));
    let header = String::from_utf8_lossy(&a[..200]).into_owned();
    assert!(header.starts_with("P6\n# sdn sample config_digest="));
    assert!(header.contains("\n26 17\n255\n"));
}

#[test]
fn interpolation_strip_has_inputs_at_both_ends() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("strip.ppm");
    let data = fixture().data.to_string_lossy().into_owned();
    let args = ["interpolate", "--checkpoint", &checkpoint(), "--dataset", &data, "--index-a", "3", "--index-b", "9", "--steps", "4"];
    let mut a = args.to_vec();
    a.extend(["--out", out.to_str().unwrap()]);
    assert_eq!(code(&sdn(&a)), 0);
    let bytes = fs::read(&out).unwrap();
    // six 8-pixel cells with one-pixel gaps
    assert!(String::from_utf8_lossy(&bytes[..300]).contains("\n53 8\n255\n"));
    let mut bad = args.to_vec();
    bad[7] = "99999999";
    bad.extend(["--out", out.to_str().unwrap()]);
    assert_eq!(code(&sdn(&bad)), 2);
}

#[test]
fn metrics_append_csv_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    let data = fixture().data.to_string_lossy().into_owned();
    for metric in ["betavae", "factorvae"] {
        let o = sdn(&["metrics", "--checkpoint", &checkpoint(), "--dataset", &data, "--metric", metric, "--seed", "2", "--out", csv.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "metric,name,value,std,seed,config_digest");
    assert!(lines[1].starts_with("betavae,sdn_beta1,") && lines[2].starts_with("factorvae,sdn_beta1,"));
    for row in &lines[1..] {
        let v: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}

#[test]
fn jacobian_bench_writes_pgm_support() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j.pgm");
    let o = sdn(&["bench", "jacobian", "--directions", "bt,rl,lr,tb", "--out", out.to_str().unwrap()]);
    assert_eq!(field(&stdout(&o), "full"), "true");
    let bytes = fs::read(&out).unwrap();
    assert!(bytes.starts_with(b"P5\n# bench jacobian"));
    assert_eq!(bytes.len() - bytes.iter().rposition(|&b| b == b'\n').unwrap() - 1, 36 * 36);
    let o = sdn(&["bench", "jacobian", "--layer", "conv", "--out", out.to_str().unwrap()]);
    assert_eq!(field(&stdout(&o), "support"), "256 of 1296");
}

#[test]
fn runtime_bench_enforces_repeat_floor() {
    let o = sdn(&["bench", "runtime", "--scales", "4", "--channels", "2", "--batch", "1", "--repeats", "10"]);
    assert_eq!(code(&o), 2);
    let o = sdn(&["bench", "runtime", "--scales", "4", "--channels", "2", "--batch", "1", "--repeats", "30"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("# config_digest="));
    assert_eq!(out.lines().count(), 2 + 4);
}
