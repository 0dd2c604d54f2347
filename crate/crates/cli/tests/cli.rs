use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 12] = [
    "--set", "field_width=8",
    "--set", "color_width=8",
    "--set", "field_depth=2",
    "--set", "pos_freqs=2",
    "--set", "dir_freqs=1",
    "--set", "n_samples=8",
];

fn jnerf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jnerf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = jnerf(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend(SMALL);
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn stage_commands_chain_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let scene = d.join("scene");
    let data = scene.join("dataset");
    let pre = d.join("pre.jtns");
    let shaped = d.join("shaped.jtns");

    ok(&["scene-gen", "--out", p(&scene), "--objects", "2", "--size", "16", "--train", "4", "--test", "2", "--seed", "3"]);
    assert!(scene.join("scene.txt").exists() && scene.join("manifest.txt").exists());

    ok(&with_small(&["train", "--dataset", p(&data), "--out", p(&pre), "--steps", "20", "--seed", "3"]));
    ok(&with_small(&[
        "shape", "--checkpoint", p(&pre), "--dataset", p(&data), "--out", p(&shaped), "--epochs", "5",
        "--trace", p(&d.join("trace.csv")), "--set", "shape_batch=8", "--set", "shape_nerf_batch=8",
    ]));
    let trace = std::fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 6);

    let img = d.join("view.ppm");
    let s = ok(&with_small(&["render", "--checkpoint", p(&shaped), "--dataset", p(&data), "--out", p(&img)]));
    assert!(s.contains("psnr="));
    assert!(std::fs::read(&img).unwrap().starts_with(b"P6"));

    let pairs = d.join("pairs.txt");
    std::fs::write(&pairs, "# u1 v1 u2 v2\n8 8 7 8\n8 8 9 9\n").unwrap();
    let s = ok(&with_small(&[
        "mi-probe", "--checkpoint", p(&shaped), "--dataset", p(&data), "--pairs", p(&pairs), "--draws", "1000",
    ]));
    let records: Vec<&str> = s.lines().collect();
    assert_eq!(records.len(), 2);
    for r in records {
        for field in ["cos_abs=", "closed_form=", "empirical_mi="] {
            assert!(r.contains(field), "{r}");
        }
    }
    let map = d.join("map");
    ok(&with_small(&["mi-probe", "--checkpoint", p(&shaped), "--dataset", p(&data), "--map", "8", "8", "--out", p(&map)]));
    assert!(d.join("map.ppm").exists() && d.join("map.jtns").exists());

    let prop = d.join("prop");
    let s = ok(&with_small(&["propagate", "--checkpoint", p(&shaped), "--dataset", p(&data), "--out", p(&prop)]));
    assert!(s.contains("sparse 2d sigma=0.1 "), "{s}");
    let csv = std::fs::read_to_string(prop.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("experiment_id,mode,variant,sigma,density,mIoU,avg_acc,total_acc\n"));
    assert!(prop.join("target_0_labels.ppm").exists());

    let gt = d.join("gt.jtns");
    let ds = jnerf_core::scene::Dataset::load(&data).unwrap();
    ds.test.views[0].semantic.save(&gt).unwrap();
    let s = ok(&["eval", "--pred", p(&gt), "--gt", p(&gt)]);
    assert!(s.starts_with("mIoU=1.000000 avg_acc=1.000000 total_acc=1.000000"), "{s}");
    ok(&["eval", "--pred", p(&prop.join("target_0_labels.jtns")), "--gt", p(&gt), "--seen", "1,2"]);

    let rec = d.join("recolor.ppm");
    ok(&with_small(&[
        "recolor", "--checkpoint", p(&shaped), "--dataset", p(&data), "--pixel", "8", "8", "--delta", "0.5", "-0.2", "0",
        "--out", p(&rec),
    ]));
    assert!(rec.exists());
    let out = jnerf(&with_small(&["propagate", "--checkpoint", p(&shaped), "--dataset", p(&data), "--out", p(&prop), "--mode", "dense", "--set", "mlp_iterations=50"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("dense-mlp"));
}

#[test]
fn experiment_writes_manifest_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg,
        format!(
            "# tiny run\nexperiment_id = tiny\nn_objects = 2\nwidth = 16\nheight = 16\nn_train = 4\nn_test = 2\n\
             field_width = 8\ncolor_width = 8\nfield_depth = 2\npos_freqs = 2\ndir_freqs = 1\nn_samples = 8\n\
             train_steps = 10\nshape_epochs = 3\nshape_batch = 8\nshape_nerf_batch = 8\nsweep_sigma = 0.05,0.5\nout_dir = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let s = ok(&["experiment", "--config", p(&cfg), "--seed", "5"]);
    assert!(s.contains("config_hash="));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("resolved.scene_seed = ") && manifest.contains("seed = 5"));
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "experiment_id,mode,variant,sigma,density,mIoU,avg_acc,total_acc");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("tiny,sparse,2d,0.1,1,"));
    for f in ["scene.txt", "field_pre.jtns", "field_shaped.jtns", "train_loss.csv", "shaping_trace.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let again = ok(&["experiment", "--config", p(&cfg), "--seed", "5"]);
    assert_eq!(s, again);
    assert_eq!(csv, std::fs::read_to_string(out.join("metrics.csv")).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "sigmaa = 0.1\n").unwrap();
    let out = jnerf(&["experiment", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown key `sigmaa`") && err.contains("valid keys") && err.contains("sweep_density"), "{err}");

    let out = jnerf(&["experiment", "--config", p(&cfg), "--set", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&cfg, "checkpoint = /no/such/ck.jtns\n").unwrap();
    assert_eq!(jnerf(&["experiment", "--config", p(&cfg)]).status.code(), Some(2));

    let missing = dir.path().join("missing.jtns");
    let out = jnerf(&["render", "--checkpoint", p(&missing), "--dataset", p(dir.path()), "--out", p(&dir.path().join("x.ppm"))]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(jnerf(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn experiment_stage_error_names_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("e.cfg");
    // beyond the generator's object limit
    std::fs::write(&cfg, format!("n_objects = 17\nout_dir = {}\n", dir.path().join("o").display())).unwrap();
    let out = jnerf(&["experiment", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `scene`"));
}
