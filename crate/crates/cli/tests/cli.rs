use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fleetoffer"))
}

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().arg("--output-dir").arg(out).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn feasible_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let routing = write(dir.path(), "routing.toml", "flows = [0.25, 0.5, 0.25]\ntimes = [10.0, 20.0, 30.0]\n");
    let yes = write(dir.path(), "yes.csv", "id,weight,offer\na,1.0,20.0\n");
    let no = write(dir.path(), "no.csv", "id,weight,offer\na,0.5,10.0\nb,0.5,30.0\n");

    let out = run(&dir.path().join("y"), &["feasible", "--routing", &routing, "--offers", &yes]);
    assert_eq!(out.status.code(), Some(0));
    let plan = fs::read_to_string(dir.path().join("y/plan.toml")).unwrap();
    assert!(plan.contains("row = [0.25, 0.5, 0.25]"), "{plan}");
    assert!(dir.path().join("y/nu.csv").exists());

    let out = run(&dir.path().join("n"), &["feasible", "--routing", &routing, "--offers", &no]);
    assert_eq!(out.status.code(), Some(2));
    let s = fs::read_to_string(dir.path().join("n/summary.toml")).unwrap();
    assert!(s.contains("feasible = false"));
}

#[test]
fn schedule_from_plan() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write(
        dir.path(),
        "plan.toml",
        r#"flows = [2.0, 1.0, 1.0]
times = [10.0, 20.0, 30.0]
drivers = [
  { id = "1", row = [0.2, 0.3, 0.5] },
  { id = "2", row = [0.0, 0.6, 0.4] },
  { id = "3", row = [0.8, 0.1, 0.1] },
  { id = "4", row = [1.0, 0.0, 0.0] },
]
"#,
    );
    let out = run(dir.path(), &["schedule", "--plan", &plan, "--days", "10"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[4], "4,1,1,1,1,1,1,1,1,1,1");
    let d1: Vec<&str> = lines[1].split(',').skip(1).collect();
    assert_eq!(d1.iter().filter(|r| **r == "3").count(), 5);
    assert!(dir.path().join("decomposition.csv").exists());

    let seeded = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--seed", "3", "--output-dir"])
        .arg(seeded.path())
        .args(["schedule", "--plan", &plan, "--days", "50"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn market_answers() {
    let dir = tempfile::tempdir().unwrap();
    let yes = write(
        dir.path(),
        "yes.toml",
        r#"[routing]
flows = [0.5, 0.5]
times = [2.0, 2.5]

[[population]]
id = "a"
weight = 0.5
gamma = 1.0

[[population]]
id = "b"
weight = 0.5
gamma = 0.8
"#,
    );
    let out = run(&dir.path().join("y"), &["market", &yes]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let offers = fs::read_to_string(dir.path().join("y/offers.csv")).unwrap();
    assert_eq!(offers, "id,weight,offer\na,0.5,2\nb,0.5,2.5\n");

    let no = yes.replace("yes.toml", "no.toml");
    fs::write(&no, fs::read_to_string(&yes).unwrap().replace("gamma = 1.0", "gamma = 1.2")).unwrap();
    let out = run(&dir.path().join("n"), &["market", &no]);
    assert_eq!(out.status.code(), Some(2));

    let mix = write(
        dir.path(),
        "mix.toml",
        r#"[[mix.components]]
probability = 0.5
flows = [0.9, 0.1]
times = [1.9, 1.1]

[[mix.components]]
probability = 0.5
flows = [0.1, 0.9]
times = [1.1, 1.9]

[[population]]
id = "reluctant"
weight = 0.1
gamma = 1.3

[[population]]
id = "enthusiast"
weight = 0.9
gamma = 0.7

[rules]
reluctant = [2, 1]
enthusiast = [1, 2]
"#,
    );
    let out = run(&dir.path().join("m"), &["market", &mix]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let u = fs::read_to_string(dir.path().join("m/utilities.csv")).unwrap();
    assert!(u.contains("reluctant,1.3,0.1,cav,1.43,1.5"), "{u}");
}

#[test]
fn risk_summary() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(dir.path(), "t.csv", "location,weight\n1.1,0.9\n1.9,0.1\n");
    let out = run(dir.path(), &["risk", "--measure", &m, "--late", "2", "--early", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let s = fs::read_to_string(dir.path().join("summary.toml")).unwrap();
    assert!(s.contains("rho = 1.1"), "{s}");
    assert!(s.contains("total = 1.34"), "{s}");
}

#[test]
fn scenarios_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenarios();
    let out = bin()
        .arg("--output-dir")
        .arg(dir.path())
        .args(["--jobs", "3", "scenario"])
        .arg(s.join("symmetric_offer.toml"))
        .arg(s.join("tailored_offer.toml"))
        .arg(s.join("dynamic_stages.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.path().join("symmetric_offer/summary.toml")).unwrap();
    assert!(summary.contains("optimum_bound = 0.888888888889"), "{summary}");
    let stages = fs::read_to_string(dir.path().join("dynamic_stages/summary.toml")).unwrap();
    assert_eq!(stages.matches("verdict = \"DFHE\"").count(), 3);
    let sched = fs::read_to_string(dir.path().join("tailored_offer/schedule.csv")).unwrap();
    assert_eq!(sched.lines().count(), 5);
}

#[test]
fn sampled_histogram_counts_days() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("--output-dir")
        .arg(dir.path())
        .args(["--seed", "11", "scenario"])
        .arg(scenarios().join("mixed_routing.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let hist = fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    let mut per_route = [0usize; 2];
    let mut bins = 0;
    for line in hist.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        per_route[f[0].parse::<usize>().unwrap() - 1] += f[2].parse::<usize>().unwrap();
        bins += 1;
        // Binomial(10^4, 1/2): three standard deviations are 150 days.
        let days: i64 = f[2].parse().unwrap();
        assert!((days - 5000).abs() <= 150, "{line}");
    }
    assert_eq!(bins, 4);
    assert_eq!(per_route, [10_000, 10_000]);
}

#[test]
fn errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "name = \"x\"\n[strategy]\nkind = \"mixed\"\n");
    let out = run(dir.path(), &["scenario", &bad]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(dir.path(), &["risk", "--measure", "/nonexistent.csv", "--late", "1", "--early", "1"]);
    assert_eq!(out.status.code(), Some(1));
}
