//! End-to-end tests of the `csslab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csslab::datagen::load_cssf;
use csslab::report::{parse_curves_csv, parse_md_csv, ChartLayout};
use csslab::trainer::ExperimentLog;
use tempfile::TempDir;

fn csslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csslab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = csslab(args);
    assert!(
        out.status.success(),
        "csslab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a synthetic-data config for the 5-1 reference benchmark.
fn config(dir: &Path, file: &str, strategy: &str, extra: &str) -> PathBuf {
    let path = dir.join(file);
    let text = format!(
        "[experiment]\nname = \"{strategy}\"\nseed = 1\nsetting = \"5-1\"\nstrategy = \"{strategy}\"\n{extra}\n\n[data.synth]\n"
    );
    fs::write(&path, text).unwrap();
    path
}

fn run(cfg: &Path, out_dir: &Path) -> ExperimentLog {
    ok(&["run", p(cfg), "--out-dir", p(out_dir)]);
    ExperimentLog::load_json(out_dir.join("experiment.json")).unwrap()
}

/// The log as JSON without timings and output location.
fn metrics_json(log: &ExperimentLog) -> serde_json::Value {
    let mut v = serde_json::to_value(log).unwrap();
    v.as_object_mut().unwrap().remove("incremental_seconds");
    v["config"]["experiment"]
        .as_object_mut()
        .unwrap()
        .remove("output_dir");
    for step in v["steps"].as_array_mut().unwrap() {
        if let Some(o) = step["outcome"].as_object_mut() {
            o.remove("wall_seconds");
        }
    }
    v
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.cssf"), dir.path().join("b.cssf"));
    for out in [&a, &b] {
        ok(&["gen", "--classes", "10", "--seed", "7", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a.eval.cssf")).unwrap(),
        fs::read(dir.path().join("b.eval.cssf")).unwrap()
    );
}

#[test]
fn gen_rejects_zero_classes_as_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = csslab(&[
        "gen",
        "--classes",
        "0",
        "--out",
        p(&dir.path().join("x.cssf")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(!dir.path().join("x.cssf").exists());
}

#[test]
fn gen_histogram_equals_reload_recount() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d.cssf");
    let stdout = ok(&[
        "gen",
        "--classes",
        "4",
        "--size",
        "8",
        "--images",
        "3",
        "--seed",
        "2",
        "--out",
        p(&out),
    ]);
    let printed: Vec<Vec<u64>> = stdout
        .lines()
        .map(|l| {
            let cells = l.split("pixels per class ").nth(1).unwrap();
            cells
                .split_whitespace()
                .map(|c| c.split(':').nth(1).unwrap().parse().unwrap())
                .collect()
        })
        .collect();
    assert_eq!(printed.len(), 2);
    for (hist, file) in printed
        .iter()
        .zip([out.clone(), dir.path().join("d.eval.cssf")])
    {
        let d = load_cssf(&file).unwrap();
        let mut recount = vec![0u64; d.num_classes + 1];
        for img in &d.images {
            for &l in img.labels() {
                if let Some(slot) = recount.get_mut(l as usize) {
                    *slot += 1;
                }
            }
        }
        assert_eq!(hist, &recount, "{}", file.display());
    }
}

#[test]
fn joint_with_one_step_gives_single_row_curves() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("joint.toml");
    fs::write(
        &cfg,
        "[experiment]\nseed = 1\nsetting = \"10\"\nstrategy = \"joint\"\n\n[hyper]\nepochs_per_step = 5\n\n[data.synth]\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let stdout = ok(&["run", p(&cfg), "--out-dir", p(&out_dir)]);
    assert!(stdout.contains("final mIoU"), "{stdout}");
    let rows = parse_curves_csv(&fs::read_to_string(out_dir.join("curves.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].step, 1);
}

#[test]
fn fixbc_p_beats_dft_and_reruns_are_identical() {
    let dir = TempDir::new().unwrap();
    let ckpt = format!("checkpoint_dir = \"{}\"", dir.path().join("base").display());
    let dft_cfg = config(dir.path(), "dft.toml", "dft", &ckpt);
    let fixbcp_cfg = config(dir.path(), "fixbcp.toml", "fixbc_p", &ckpt);
    let dft = run(&dft_cfg, &dir.path().join("dft"));
    let fixbcp = run(&fixbcp_cfg, &dir.path().join("fixbcp"));
    let (a, b) = (
        dft.final_metrics.miou_all.unwrap(),
        fixbcp.final_metrics.miou_all.unwrap(),
    );
    assert!(b > a, "fixbc_p {b} vs dft {a}");

    // The second run trains step 1 afresh; the first reused the cache.
    let plain = config(dir.path(), "plain.toml", "fixbc_p", "");
    let again = run(&plain, &dir.path().join("again"));
    let steps = |log: &ExperimentLog| metrics_json(log)["steps"].as_array().unwrap()[1..].to_vec();
    assert_eq!(steps(&again), steps(&fixbcp));
    assert_eq!(again.steps[0].observed, fixbcp.steps[0].observed);
    let again2 = run(&plain, &dir.path().join("again2"));
    assert_eq!(metrics_json(&again), metrics_json(&again2));
}

#[test]
fn bundle_round_trips_and_analysis_commands_reproduce_it() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "dft.toml", "dft", "probing = true\nmd = true");
    let out_dir = dir.path().join("run");
    let log = run(&cfg, &out_dir);
    let t = log.schedule.len();

    let json = fs::read_to_string(out_dir.join("experiment.json")).unwrap();
    let reparsed: ExperimentLog = serde_json::from_str(&json).unwrap();
    assert_eq!(reparsed, log);

    let rows = parse_curves_csv(&fs::read_to_string(out_dir.join("curves.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), t);
    for (row, step) in rows.iter().zip(&log.steps) {
        assert_eq!(row.miou_all, step.observed.miou_all);
        assert_eq!(
            row.probe_miou_all,
            step.probe.as_ref().and_then(|m| m.miou_all)
        );
    }
    let md = parse_md_csv(&fs::read_to_string(out_dir.join("md.csv")).unwrap()).unwrap();
    assert_eq!(md, log.md);
    for svg in ["curves.svg", "md.svg"] {
        roxmltree::Document::parse(&fs::read_to_string(out_dir.join(svg)).unwrap()).unwrap();
    }

    // Recomputing MD from the snapshots gives the same table.
    fs::remove_file(out_dir.join("md.csv")).unwrap();
    ok(&["md", p(&cfg), "--run-dir", p(&out_dir)]);
    let md_again = parse_md_csv(&fs::read_to_string(out_dir.join("md.csv")).unwrap()).unwrap();
    assert_eq!(md_again, log.md);

    ok(&["probe", p(&cfg), "--run-dir", p(&out_dir)]);
    let probe_csv = fs::read_to_string(out_dir.join("probe.csv")).unwrap();
    let lines: Vec<&str> = probe_csv.lines().collect();
    assert_eq!(lines.len(), t + 1);
    for (line, step) in lines[1..].iter().zip(&log.steps) {
        let all: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(Some(all), step.probe.as_ref().and_then(|m| m.miou_all));
    }
}

/// Reads every polyline of an SVG back into data coordinates.
fn polylines(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let doc = roxmltree::Document::parse(svg).unwrap();
    let plot = doc
        .descendants()
        .find(|n| n.has_tag_name("g") && n.attribute("data-x-range").is_some())
        .unwrap();
    let range = |a: &str| -> (f64, f64) {
        let v: Vec<f64> = plot
            .attribute(a)
            .unwrap()
            .split(' ')
            .map(|x| x.parse().unwrap())
            .collect();
        (v[0], v[1])
    };
    let (xr, yr) = (range("data-x-range"), range("data-y-range"));
    let lay = ChartLayout::default();
    doc.descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .map(|n| {
            let pts = n
                .attribute("points")
                .unwrap()
                .split_whitespace()
                .map(|pt| {
                    let (x, y) = pt.split_once(',').unwrap();
                    lay.from_pixel((x.parse().unwrap(), y.parse().unwrap()), xr, yr)
                })
                .collect();
            (n.attribute("data-series").unwrap().to_string(), pts)
        })
        .collect()
}

#[test]
fn compare_overlays_source_curves() {
    let dir = TempDir::new().unwrap();
    let ckpt = format!("checkpoint_dir = \"{}\"", dir.path().join("base").display());
    let dft_dir = dir.path().join("dft");
    let fixbc_dir = dir.path().join("fixbc");
    run(&config(dir.path(), "dft.toml", "dft", &ckpt), &dft_dir);
    run(
        &config(dir.path(), "fixbc.toml", "fixbc", &ckpt),
        &fixbc_dir,
    );

    let prefix = dir.path().join("cmp");
    let dft_json = dft_dir.join("experiment.json");
    let fixbc_json = fixbc_dir.join("experiment.json");
    ok(&["compare", p(&dft_json), p(&fixbc_json), "--out", p(&prefix)]);
    let lines = polylines(&fs::read_to_string(dir.path().join("cmp.svg")).unwrap());
    assert_eq!(lines.len(), 2);
    for ((name, pts), run_dir) in lines.iter().zip([&dft_dir, &fixbc_dir]) {
        let rows =
            parse_curves_csv(&fs::read_to_string(run_dir.join("curves.csv")).unwrap()).unwrap();
        assert_eq!(name, if run_dir == &dft_dir { "dft" } else { "fixbc" });
        assert_eq!(pts.len(), rows.len());
        for ((x, y), row) in pts.iter().zip(&rows) {
            assert!(
                (x - row.step as f64).abs() < 1e-2,
                "{x} vs step {}",
                row.step
            );
            assert!(
                (y - row.miou_all.unwrap()).abs() < 1e-2,
                "{y} vs {:?}",
                row.miou_all
            );
        }
    }
    let table = fs::read_to_string(dir.path().join("cmp.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    // A log compared with itself yields two identical curves.
    let self_prefix = dir.path().join("self");
    ok(&[
        "compare",
        p(&dft_json),
        p(&dft_json),
        "--out",
        p(&self_prefix),
    ]);
    let twins = polylines(&fs::read_to_string(dir.path().join("self.svg")).unwrap());
    assert_eq!(twins.len(), 2);
    assert_eq!(twins[0], twins[1]);
}

#[test]
fn compare_rejects_mismatched_schedules() {
    let dir = TempDir::new().unwrap();
    let base = dir.path().join("a");
    fs::create_dir_all(&base).unwrap();
    let cfg = dir.path().join("j.toml");
    let mut logs = Vec::new();
    for (i, setting) in ["10", "5,5"].iter().enumerate() {
        fs::write(
            &cfg,
            format!("[experiment]\nseed = 1\nsetting = \"{setting}\"\nstrategy = \"joint\"\n\n[hyper]\nepochs_per_step = 1\n\n[data.synth]\n"),
        )
        .unwrap();
        let out_dir = dir.path().join(format!("r{i}"));
        run(&cfg, &out_dir);
        logs.push(out_dir.join("experiment.json"));
    }
    let out = csslab(&[
        "compare",
        p(&logs[0]),
        p(&logs[1]),
        "--out",
        p(&dir.path().join("c")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("report: comparison error"), "{err}");
}

#[test]
fn config_errors_name_the_line() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[experiment]\nseed = 1\nsetting = \"5-1\"\nstrategy = \"sideways\"\n",
    )
    .unwrap();
    let out = csslab(&["run", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trainer: config error"), "{err}");
    assert!(err.contains("line 4"), "{err}");

    fs::write(&cfg, "[experiment]\nseed = 1\nsetting = = \"5-1\"\n").unwrap();
    let err = String::from_utf8_lossy(&csslab(&["run", p(&cfg)]).stderr).into_owned();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_inputs_fail_with_context() {
    let dir = TempDir::new().unwrap();
    let out = csslab(&["run", p(&dir.path().join("nope.toml"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));

    let cfg = config(dir.path(), "dft.toml", "dft", "");
    let out = csslab(&["md", p(&cfg), "--run-dir", p(&dir.path().join("empty"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            csslab::trainer::ExperimentConfig::load(&path)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert_eq!(n, 5);
}
