use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .args(args)
        .env_remove("FLOWLAB_SEED")
        .output()
        .expect("spawn flowlab")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let o = flowlab(&[
        "generate",
        "--duration",
        "120",
        "--flow-rate",
        "30",
        "--seed",
        seed,
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generate_is_deterministic_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.csv", "7");
    let b = generate(dir.path(), "b.csv", "7");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let trace = flowlab::read_trace(&a).unwrap();
    assert!(!trace.is_empty());
    assert!(trace.last().unwrap().ts_us < 120_000_000);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let explicit = generate(dir.path(), "explicit.csv", "42");
    let env_out = dir.path().join("env.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_flowlab"))
        .args([
            "generate",
            "--duration",
            "120",
            "--flow-rate",
            "30",
            "--out",
            p(&env_out),
        ])
        .env("FLOWLAB_SEED", "42")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(explicit).unwrap(), fs::read(env_out).unwrap());
}

#[test]
fn staged_pipeline_composes_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let trace = generate(d, "t.csv", "3");
    let sampled = d.join("s.csv");
    let flows = d.join("f.csv");
    let bins = d.join("bins.csv");
    let moments = d.join("m.csv");
    let cdf = d.join("cdf.csv");

    assert!(flowlab(&[
        "sample",
        "--trace",
        p(&trace),
        "--sample-n",
        "10",
        "--out",
        p(&sampled)
    ])
    .status
    .success());
    let n = flowlab::read_trace(&trace).unwrap().len();
    let k = flowlab::read_trace(&sampled).unwrap().len();
    assert_eq!(k, (n - 1) / 10 + 1);

    assert!(
        flowlab(&["flows", "--trace", p(&trace), "--out", p(&flows)])
            .status
            .success()
    );
    let recs = flowlab::flow_cache::read_flows(&flows).unwrap();
    assert_eq!(recs.iter().map(|r| r.packets).sum::<u64>(), n as u64);
    assert!(fs::read_to_string(&flows)
        .unwrap()
        .starts_with(flowlab::flow_cache::FLOW_HEADER));

    let o = flowlab(&[
        "bins",
        "--trace",
        p(&trace),
        "--sampled",
        p(&sampled),
        "--sample-n",
        "10",
        "--bins",
        "30",
        "--out",
        p(&bins),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&bins).unwrap();
    assert!(text.starts_with("bin_start_us,d,p,dn,pn,e_d,e_p\n"));
    let p_total: usize = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(p_total, n);

    let o = flowlab(&[
        "moments",
        "--trace",
        p(&trace),
        "--sampled",
        p(&sampled),
        "--sample-n",
        "10",
        "--bins",
        "10,30",
        "--out",
        p(&moments),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&moments).unwrap();
    assert!(text.starts_with("quantity,bin_s,series,mean,std,skewness,kurtosis\n"));
    assert_eq!(text.lines().count(), 1 + 12);

    assert!(flowlab(&[
        "cdf",
        "--flows",
        p(&flows),
        "--metric",
        "bytes",
        "--out",
        p(&cdf)
    ])
    .status
    .success());
    let text = fs::read_to_string(&cdf).unwrap();
    assert!(text.starts_with("value,cum_prob\n"));
    assert!(text.trim_end().ends_with(",1"));

    let o = flowlab(&["cdf", "--trace", p(&trace)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("1500,1\n"));
}

#[test]
fn kstest_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let far = dir.path().join("far.csv");
    fs::write(&a, "value\n1\n2\n").unwrap();
    fs::write(&b, "1\n3\n").unwrap();
    fs::write(&far, "10\n11\n12\n").unwrap();

    let o = flowlab(&["kstest", p(&a), p(&a)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("d_statistic=0\n"));

    let o = flowlab(&["kstest", p(&a), p(&b)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("d_statistic=0.5\n"));

    let big_a = dir.path().join("big_a.csv");
    let big_b = dir.path().join("big_b.csv");
    fs::write(
        &big_a,
        (0..100).map(|i| format!("{i}\n")).collect::<String>(),
    )
    .unwrap();
    fs::write(
        &big_b,
        (500..600).map(|i| format!("{i}\n")).collect::<String>(),
    )
    .unwrap();
    let o = flowlab(&["kstest", p(&big_a), p(&big_b)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reject=true"));

    let o = flowlab(&["kstest", p(&a), p(&far), "--alpha", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = flowlab(&["kstest", p(&a), p(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_a_deterministic_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        flowlab(&[
            "run",
            "--duration",
            "600",
            "--flow-rate",
            "40",
            "--seed",
            "5",
            "--sample-n",
            "100",
            "--out",
            p(out),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&a).status.success());
    assert!(run(&b).status.success());
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 13);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
    let ks = fs::read_to_string(a.join("ks_intervals.csv")).unwrap();
    assert!(ks.starts_with("interval_index,metric,d_statistic,critical,reject\n"));
    assert_eq!(ks.lines().count(), 1 + 20 * 2);
    let manifest: manifest::Manifest =
        manifest::parse(&fs::read_to_string(a.join("manifest.json")).unwrap());
    assert!(manifest.has_input_digest);
}

#[test]
fn identity_sampling_run_has_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = flowlab(&[
        "run",
        "--duration",
        "600",
        "--flow-rate",
        "40",
        "--sample-n",
        "1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bins = fs::read_to_string(out.join("binned_30s.csv")).unwrap();
    for line in bins.lines().skip(1) {
        let cols: Vec<_> = line.split(',').collect();
        assert!(cols[5] == "0" || cols[5] == "NA", "{line}");
        assert!(cols[6] == "0" || cols[6] == "NA", "{line}");
    }
    let ks = fs::read_to_string(out.join("ks_intervals.csv")).unwrap();
    assert!(!ks.contains("true"));
}

#[test]
fn run_failure_names_the_stage_and_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "ts_us,src_ip,dst_ip,src_port,dst_port,proto,byte_len,tcp_flags\n5,1.1.1.1,2.2.2.2,1,2,17,40,0x00\n1,1.1.1.1,2.2.2.2,1,2,17,40,0x00\n").unwrap();
    let out = dir.path().join("r");
    let o = flowlab(&["run", "--trace", p(&bad), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("load trace") && err.contains("line 3"),
        "{err}"
    );
    assert!(!out.exists());
}

#[test]
fn run_from_a_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let o = flowlab(&[
        "generate",
        "--duration",
        "600",
        "--flow-rate",
        "20",
        "--out",
        p(&trace),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("r");
    let o = flowlab(&[
        "run",
        "--trace",
        p(&trace),
        "--sample-q",
        "0.05",
        "--seed",
        "9",
        "--capacity",
        "64",
        "--inactive-timeout",
        "5",
        "--active-timeout",
        "60",
        "--bins",
        "30,60",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("binned_60s.csv").exists());
    assert!(!out.join("binned_120s.csv").exists());
}

mod manifest {
    pub struct Manifest {
        pub has_input_digest: bool,
    }

    pub fn parse(text: &str) -> Manifest {
        let digest = text
            .lines()
            .find(|l| l.trim_start().starts_with("\"input_sha256\""))
            .and_then(|l| l.split('"').nth(3))
            .unwrap_or("");
        Manifest {
            has_input_digest: digest.len() == 64 && digest.chars().all(|c| c.is_ascii_hexdigit()),
        }
    }
}
