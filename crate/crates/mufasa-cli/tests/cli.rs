use std::path::Path;
use std::process::{Command, Output};

fn mufasa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mufasa")).args(args).env_remove("MUFASA_OUT").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn files(dir: &Path, ext: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(ext))
        .collect();
    v.sort();
    v
}

#[test]
fn zero_iteration_run_writes_initial_row_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "problem = \"simple1d\"\ntask = \"gf\"\nmethods = [\"mufasa-beta\"]\n[stop]\nmax_iters = 0\n",
    );
    let out = dir.path().join("out");
    let o = mufasa(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out, ".csv"), ["mufasa-beta_r000.csv", "summary.csv"]);
    let trace = std::fs::read_to_string(out.join("mufasa-beta_r000.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "iter,cum_cost,source,x1,y,metric,fallback");
    assert!(lines[1].starts_with("0,0,,,,"));
}

#[test]
fn paired_replicates_file_count_and_byte_identical_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "exp.toml",
        "problem = \"sasena\"\ntask = \"bo\"\nmethods = [\"sfgp\", \"mufasa-m\"]\nreplicates = 5\nseed = 11\n\
         [stop]\nmax_iters = 2\n[settings]\nrestarts = 2\n",
    );
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = mufasa(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run("a");
    let traces: Vec<String> = files(&a, ".csv").into_iter().filter(|f| f != "summary.csv").collect();
    assert_eq!(traces.len(), 10);
    assert_eq!(files(&a, ".json").len(), 11);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let seeds = manifest["replicate_seeds"].as_array().unwrap();
    assert_eq!(seeds.len(), 5);
    let runs = manifest["runs"].as_array().unwrap();
    for r in runs {
        assert_eq!(r["seed"], seeds[r["replicate"].as_u64().unwrap() as usize]);
    }
    let summary = std::fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);

    let b = run("b");
    for t in &traces {
        assert_eq!(std::fs::read(a.join(t)).unwrap(), std::fs::read(b.join(t)).unwrap(), "{t}");
    }
}

#[test]
fn summary_is_recomputable_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mufasa(&[
        "run",
        "--problem",
        "simple1d",
        "--task",
        "gf",
        "--methods",
        "sfgp",
        "--replicates",
        "3",
        "--max-iters",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut finals = Vec::new();
    let mut costs = 0.0;
    for r in 0..3 {
        let text = std::fs::read_to_string(out.join(format!("sfgp_r{r:03}.csv"))).unwrap();
        let rows = mufasa::planner::read_trace_csv(text.as_bytes()).unwrap();
        finals.push(rows.last().unwrap().metric);
        costs += rows.last().unwrap().cum_cost as f64;
    }
    finals.sort_by(f64::total_cmp);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "sfgp");
    assert_eq!(row[3].parse::<f64>().unwrap(), finals[1]);
    assert_eq!(row[6].parse::<f64>().unwrap(), costs / 3.0);
}

#[test]
fn rrmse_table_of_identical_source_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "twin.toml",
        r#"
name = "twin"
bounds = [[-2.0, 3.0]]

[[sources]]
name = "truth"
function = "simple1d-hf"
cost = 10
init = 2

[[sources]]
name = "copy"
function = "simple1d-hf"
cost = 1
init = 4
"#,
    );
    let o = mufasa(&["rrmse-table", &p, "--test-points", "500"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let row = text.lines().find(|l| l.contains("copy")).unwrap();
    let v: f64 = row.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn rrmse_table_lists_builtin_sources() {
    let o = mufasa(&["rrmse-table", "simple1d", "--test-points", "1000"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("0.6054") && text.contains("0.3218") && text.contains("0.7256"));
}

#[test]
fn latent_dump_rows_and_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = mufasa(&[
        "run",
        "--problem",
        "simple1d",
        "--task",
        "gf",
        "--methods",
        "mufasa-alpha",
        "--max-iters",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = out.join("mufasa-alpha_r000.json");
    let dump = dir.path().join("latent.csv");
    let o = mufasa(&["latent-dump", trace.to_str().unwrap(), "-o", dump.to_str().unwrap()]);
    assert!(o.status.success());

    let record = mufasa::planner::RunRecord::from_json(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    let text = std::fs::read_to_string(&dump).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), record.iterations.len() * 4);
    for row in &rows {
        if row[1] == 1.0 {
            assert_eq!((row[2], row[3], row[4]), (0.0, 0.0, 0.0));
        }
        let z = record.iterations[row[0] as usize].latent[row[1] as usize - 1];
        let d = (z[0] * z[0] + z[1] * z[1]).sqrt();
        assert!((row[4] - d).abs() <= 1e-12);
    }
}

#[test]
fn exit_codes() {
    let o = mufasa(&["latent-dump", "/nonexistent/trace.json"]);
    assert_eq!(o.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "problem = \"simple1d\"\ntask = \"gf\"\nmethods = [\"mufasa-m\"]\n");
    let o = mufasa(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let cfg =
        write(dir.path(), "zero.toml", "problem = \"simple1d\"\ntask = \"gf\"\nmethods = [\"sfgp\"]\nreplicates = 0\n");
    let o = mufasa(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = write(dir.path(), "dim.toml", "problem = \"borehole\"\ntask = \"bo\"\nmethods = [\"mufasa-a\"]\n");
    let o = mufasa(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn list_problems_names_every_builtin() {
    let o = mufasa(&["list-problems"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in mufasa::problems::BUILTIN_PROBLEMS {
        assert!(text.contains(name));
    }
}
