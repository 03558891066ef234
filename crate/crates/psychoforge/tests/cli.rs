use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_psychoforge"));
    c.env_remove("PSYCHOFORGE_MODULE_ROOTS").env_remove("PSYCHOFORGE_PORT");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn analyze(out: &Path, extra: &[&str]) -> Output {
    let toy = data("toy.csv");
    let meta = data("toy_metadata.csv");
    let mut args = vec![
        "analyze",
        "--data",
        toy.to_str().unwrap(),
        "--metadata",
        meta.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn classical_report_has_difficulty_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze(tmp.path(), &["--sections", "classical"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("report.md")).unwrap();
    assert!(report.contains("| item | difficulty | rit | rir | uli | n |"));
    assert!(report.contains("| i01 |"));
    let names: Vec<String> = read_dir(tmp.path()).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["classical.json", "dataset.json", "report.md"]);
}

#[test]
fn seeded_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = analyze(d.path(), &["--seed", "7", "--sections", "irt,cat"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read_dir(a.path()), read_dir(b.path()));
}

#[test]
fn full_run_matches_golden_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze(tmp.path(), &["--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let golden = data("golden");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(&golden).unwrap();
        for (name, bytes) in read_dir(tmp.path()) {
            fs::write(golden.join(name), bytes).unwrap();
        }
    }
    let got = read_dir(tmp.path());
    let want = read_dir(&golden);
    assert_eq!(
        got.iter().map(|f| &f.0).collect::<Vec<_>>(),
        want.iter().map(|f| &f.0).collect::<Vec<_>>()
    );
    for ((name, g), (_, w)) in got.iter().zip(&want) {
        assert!(g == w, "{name} differs from golden copy (rerun with UPDATE_GOLDEN=1 after an intended change)");
    }
}

#[test]
fn missing_file_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["analyze", "--data", "/no/such/file.csv", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn explicit_section_without_prerequisite_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("x.csv");
    fs::write(&csv, "a,b,c\n1,0,1\n0,1,1\n1,1,0\n0,0,1\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "analyze",
        "--data",
        csv.to_str().unwrap(),
        "--sections",
        "dif",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("group"));
    // Without an explicit list the section is skipped and noted.
    let out = run(&[
        "analyze",
        "--data",
        csv.to_str().unwrap(),
        "--sections",
        "classical",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
}

#[test]
fn fit_failure_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("x.csv");
    // One usable item: the IRT model is not identified.
    fs::write(&csv, "a,b\n1,1\n0,1\n1,1\n0,1\n").unwrap();
    let out = run(&[
        "analyze",
        "--data",
        csv.to_str().unwrap(),
        "--sections",
        "irt",
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_section_name_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = analyze(tmp.path(), &["--sections", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

fn manifest_dir(body: &str) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("PACKAGE.meta"), "package: sm\nsia-module: true\n").unwrap();
    fs::write(tmp.path().join("modules.yml"), body).unwrap();
    tmp
}

const SM_CAT: &str = "cat:\n  title: CAT Example\n  category: Modules\n  binding:\n    ui: sm_cat_ui\n    server: sm_cat_server\n";

#[test]
fn validate_accepts_sm_cat() {
    let d = manifest_dir(SM_CAT);
    let out = run(&["modules", "validate", d.path().join("modules.yml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sm_cat -> Modules"));
}

#[test]
fn validate_names_missing_field() {
    let d = manifest_dir(&SM_CAT.replace("    server: sm_cat_server\n", ""));
    let out = run(&["modules", "validate", d.path().join("modules.yml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("binding.server"), "{err}");
    assert!(err.lines().all(|l| l.starts_with("error") || l.starts_with("warning")));
}

#[test]
fn validate_rejects_bad_syntax() {
    let d = manifest_dir("cat:\n\ttitle: x\n");
    let out = run(&["modules", "validate", d.path().join("modules.yml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn validate_warns_on_unknown_category() {
    let d = manifest_dir(&SM_CAT.replace("category: Modules", "category: Wizardry"));
    let out = run(&["modules", "validate", d.path().join("modules.yml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("routed to Modules"));
}

#[test]
fn modules_list_shows_bundled() {
    let out = run(&["modules", "list"]);
    assert!(out.status.success());
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains("cat_example") && s.contains("dif_c"), "{s}");
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_lists_modules_and_stops_on_sigint() {
    let port = free_port();
    let mut child = bin()
        .args(["serve", "--port", &port.to_string(), "--module-roots", "/no/such/root"])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let body = loop {
        if let Some(b) = http_get(port, "/modules") {
            break b;
        }
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(body.starts_with("HTTP/1.1 200"));
    assert!(body.contains("cat_example"));
    assert!(body.contains("module root does not exist"));
    Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    let mut log = String::new();
    child.stderr.take().unwrap().read_to_string(&mut log).unwrap();
    assert!(log.contains("module cat_example"), "{log}");
}

#[test]
fn serve_on_busy_port_exits_four() {
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port();
    let out = run(&["serve", "--port", &port.to_string()]);
    assert_eq!(out.status.code(), Some(4));
}
