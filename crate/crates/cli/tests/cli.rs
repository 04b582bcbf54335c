use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use surgiatm::image::{load_image, save_image};
use surgiatm::metrics::rmse;
use surgiatm::ImageBuffer;

fn surgiatm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_surgiatm"))
        .args(args)
        .env_remove("SURGIATM_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = surgiatm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every file under `dir` with its bytes.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn write_frames(dir: &Path, frames: &[ImageBuffer]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        save_image(f, dir.join(format!("{i:03}.png"))).unwrap();
    }
}

/// Reddish frames whose blue channel is zero everywhere, so the dark channel vanishes.
fn smoke_free_frames(count: usize, w: usize, h: usize) -> Vec<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..count)
        .map(|_| {
            ImageBuffer::from_fn(w, h, 3, |_, _, c| match c {
                0 => rng.gen_range(0.3..0.9),
                1 => rng.gen_range(0.05..0.4),
                _ => 0.0,
            })
        })
        .collect()
}

fn synth(root: &Path, count: usize, size: usize, seed: u64) {
    let (count, size, seed) = (count.to_string(), size.to_string(), seed.to_string());
    ok(&["synth", "--output", s(root), "--count", &count, "--width", &size, "--height", &size, "--seed", &seed]);
}

#[test]
fn synth_writes_layout_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("set");
    synth(&root, 3, 32, 7);
    for sub in ["clean", "smoky", "density"] {
        let names: Vec<_> = snapshot(&root.join(sub)).into_keys().collect();
        assert_eq!(names.len(), 3, "{sub}");
    }
    let density = load_image(root.join("density/0000.png")).unwrap();
    assert_eq!((density.width(), density.height(), density.channels()), (32, 32, 1));
    let manifest = read_json(&root.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["frames"][2]["name"], "0002.png");
}

#[test]
fn desmoke_dcp_leaves_smoke_free_frames_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, out) = (tmp.path().join("in"), tmp.path().join("out"));
    write_frames(&input, &smoke_free_frames(2, 256, 256));
    ok(&["desmoke", "--input", s(&input), "--truth", s(&input), "--output", s(&out)]);
    for i in 0..2 {
        let name = format!("{i:03}.png");
        let a = load_image(input.join(&name)).unwrap();
        let b = load_image(out.join(&name)).unwrap();
        assert_eq!(a, b);
    }
    let metrics = read_json(&out.join("metrics.json"));
    assert_eq!(metrics["aggregate"]["rmse"], 0.0);
    assert_eq!(metrics["frames"][1]["frame"], "001.png");
}

#[test]
fn desmoke_with_unit_rho_maps_is_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, rho, out) = (tmp.path().join("set"), tmp.path().join("rho"), tmp.path().join("out"));
    synth(&data, 2, 48, 1);
    write_frames(&rho, &[ImageBuffer::filled(48, 48, 1, 1.0), ImageBuffer::filled(48, 48, 1, 1.0)]);
    std::fs::rename(rho.join("000.png"), rho.join("0000.png")).unwrap();
    std::fs::rename(rho.join("001.png"), rho.join("0001.png")).unwrap();
    let smoky = data.join("smoky");
    ok(&["desmoke", "--method", "surgiatm", "--rho-dir", s(&rho), "--input", s(&smoky), "--output", s(&out), "--no-resize"]);
    assert_eq!(snapshot(&smoky), snapshot(&out));

    let out_const = tmp.path().join("out_const");
    ok(&["desmoke", "--method", "surgiatm", "--rho-const", "1", "--input", s(&smoky), "--output", s(&out_const), "--no-resize"]);
    assert_eq!(snapshot(&smoky), snapshot(&out_const));
}

#[test]
fn desmoke_with_trained_model_beats_the_smoky_input() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 8, 64, 2);
    let train = tmp.path().join("train");
    ok(&["train-demo", "--data", s(&data), "--output", s(&train), "--z", "3"]);
    let out = tmp.path().join("out");
    let (smoky, clean) = (data.join("smoky"), data.join("clean"));
    let model = train.join("model.json");
    ok(&[
        "desmoke", "--method", "surgiatm", "--model", s(&model), "--z", "3", "--input", s(&smoky), "--truth", s(&clean),
        "--output", s(&out), "--no-resize",
    ]);
    let restored = read_json(&out.join("metrics.json"))["aggregate"]["rmse"].as_f64().unwrap();
    let baseline = ok(&["metrics", "--pred", s(&smoky), "--truth", s(&clean), "--no-resize"]);
    let baseline: Value = serde_json::from_slice(&baseline.stdout).unwrap();
    let smoky_rmse = baseline["aggregate"]["rmse"].as_f64().unwrap();
    assert!(restored < smoky_rmse, "{restored} vs {smoky_rmse}");
}

#[test]
fn desmoke_rejects_direct_models_and_bad_rho() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 1, 32, 0);
    let train = tmp.path().join("train");
    ok(&["train-demo", "--data", s(&data), "--output", s(&train), "--mode", "direct", "--epochs", "2", "--z", "3"]);
    let smoky = data.join("smoky");
    let out = tmp.path().join("out");
    let model = train.join("model.json");
    let direct = surgiatm(&["desmoke", "--method", "surgiatm", "--model", s(&model), "--input", s(&smoky), "--output", s(&out)]);
    assert_eq!(code(&direct), 2);
    let bad = surgiatm(&["desmoke", "--method", "surgiatm", "--rho-const", "1.5", "--input", s(&smoky), "--output", s(&out)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn pairing_errors_list_offenders() {
    let tmp = tempfile::tempdir().unwrap();
    let (input, truth, out) = (tmp.path().join("in"), tmp.path().join("truth"), tmp.path().join("out"));
    let frames = smoke_free_frames(3, 16, 16);
    write_frames(&input, &frames);
    write_frames(&truth, &frames[..2]);
    let res = surgiatm(&["desmoke", "--input", s(&input), "--truth", s(&truth), "--output", s(&out)]);
    assert_eq!(code(&res), 3);
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("002.png"), "{stderr}");
    let res = surgiatm(&["analyze", "--input", s(&input), "--truth", s(&truth), "--output", s(&out)]);
    assert_eq!(code(&res), 3);
}

#[test]
fn exit_codes_by_class() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    write_frames(&input, &smoke_free_frames(1, 16, 16));
    let missing = tmp.path().join("missing");
    assert_eq!(code(&surgiatm(&["metrics", "--pred", s(&missing), "--truth", s(&input)])), 4);
    assert_eq!(code(&surgiatm(&["desmoke", "--input", s(&input), "--output", s(&input)])), 2);
    assert_eq!(code(&surgiatm(&["desmoke", "--input", s(&input), "--output", "x", "--z", "4"])), 2);
    assert_eq!(code(&surgiatm(&["desmoke", "--nonsense"])), 2);
    std::fs::write(input.join("broken.png"), b"not an image").unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&surgiatm(&["desmoke", "--input", s(&input), "--output", s(&out)])), 4);
}

#[test]
fn config_file_values_and_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 2, 32, 4);
    let cfg = tmp.path().join("run.json");
    std::fs::write(&cfg, r#"{"eta": 0.5, "z": 3, "seed": 9}"#).unwrap();
    let a = tmp.path().join("a");
    ok(&["--config", s(&cfg), "train-demo", "--data", s(&data), "--output", s(&a), "--epochs", "3"]);
    let summary = read_json(&a.join("summary.json"));
    assert_eq!((summary["eta"].as_f64(), summary["z"].as_u64(), summary["seed"].as_u64()), (Some(0.5), Some(3), Some(9)));
    let b = tmp.path().join("b");
    ok(&["--config", s(&cfg), "train-demo", "--data", s(&data), "--output", s(&b), "--epochs", "3", "--eta", "0"]);
    assert_eq!(read_json(&b.join("summary.json"))["eta"], 0.0);

    std::fs::write(&cfg, r#"{"etta": 0.5}"#).unwrap();
    let c = tmp.path().join("c");
    let res = surgiatm(&["--config", s(&cfg), "train-demo", "--output", s(&c), "--epochs", "1"]);
    assert_eq!(code(&res), 2);
    let res = surgiatm(&["--config", s(&tmp.path().join("none.json")), "gradcheck", "--cases", "1"]);
    assert_eq!(code(&res), 4);
}

#[test]
fn train_demo_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    ok(&["train-demo", "--frames", "3", "--size", "32", "--epochs", "20", "--z", "3", "--output", s(&out), "--triptychs", "2"]);
    let trace = std::fs::read_to_string(out.join("loss_trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines[0], "epoch,loss");
    assert_eq!(lines.len(), 1 + 21);
    let model = read_json(&out.join("model.json"));
    assert_eq!(model["mode"], "surgiatm");
    assert_eq!(model["weights"].as_array().unwrap().len(), 3);
    let panels = snapshot(&out.join("triptychs"));
    assert_eq!(panels.len(), 2);
    let panel = load_image(out.join("triptychs/0000.png")).unwrap();
    assert_eq!((panel.width(), panel.height()), (96, 32));
    let summary = read_json(&out.join("summary.json"));
    assert!(summary["final_loss"].as_f64() < summary["initial_loss"].as_f64());
}

fn ablate_rows(path: &Path) -> Vec<(String, String, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn ablate_single_cell_matches_train_demo_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("grid.csv");
    let common = ["--frames", "4", "--size", "32", "--epochs", "40", "--seed", "3"];
    let mut args = vec!["ablate", "--etas", "0.1", "--zs", "3", "--output", s(&csv)];
    args.extend(common);
    ok(&args);
    let demo = tmp.path().join("demo");
    let mut args = vec!["train-demo", "--eta", "0.1", "--z", "3", "--output", s(&demo)];
    args.extend(common);
    ok(&args);
    let rows = ablate_rows(&csv);
    assert_eq!(rows.len(), 1);
    let standalone = read_json(&demo.join("summary.json"))["rmse"].as_f64().unwrap();
    assert_eq!(rows[0].2.to_bits(), standalone.to_bits());
}

#[test]
fn ablate_eta_floor_and_duplicates() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("grid.csv");
    ok(&["ablate", "--etas", "0,0.1,0", "--zs", "3", "--frames", "8", "--size", "64", "--output", s(&csv), "--workers", "2"]);
    let rows = ablate_rows(&csv);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].2.to_bits(), rows[2].2.to_bits());
    assert!(rows[0].2 >= rows[1].2, "eta=0 {} vs eta=0.1 {}", rows[0].2, rows[1].2);
    let bad = surgiatm(&["ablate", "--etas", "-1", "--zs", "3", "--output", s(&csv)]);
    assert_eq!(code(&bad), 2);
    let bad = surgiatm(&["ablate", "--etas", "0", "--zs", "2", "--output", s(&csv)]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn gradcheck_passes_by_default_and_reports_vanishing_case() {
    let out = ok(&["gradcheck"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("100 checks over 50 configurations"), "{stdout}");
    assert!(stdout.contains("vanishing case (eta=0, all-black input, L2): max |grad| = 0e0"), "{stdout}");
}

#[test]
fn gradcheck_corrupted_sign_fails_with_coordinates() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("grad.json");
    let out = surgiatm(&["gradcheck", "--corrupt-sign", "--cases", "2", "--sizes", "5x4", "--report", s(&report)]);
    assert_eq!(code(&out), 5);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("pixel (0, 0) channel 0"), "{stdout}");
    let json = read_json(&report);
    assert_eq!(json["cases"][0]["width"], 5);
    assert!(!json["cases"][0]["mismatches"].as_array().unwrap().is_empty());
}

fn noisy_copies(truth: &[ImageBuffer], noise: impl Fn(&mut ChaCha8Rng) -> f64, seed: u64) -> Vec<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truth
        .iter()
        .map(|t| {
            let data = t.data().iter().map(|v| v + noise(&mut rng)).collect();
            ImageBuffer::from_clamped(t.shape(), data).unwrap()
        })
        .collect()
}

#[test]
fn analyze_separates_laplace_and_gauss_methods() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 4, 64, 8);
    let clean: Vec<ImageBuffer> = (0..4)
        .map(|i| load_image(data.join(format!("clean/{i:04}.png"))).unwrap())
        .collect();
    // mid-grey truth keeps the added noise away from the clipping bounds
    let truth: Vec<ImageBuffer> = clean
        .iter()
        .map(|c| ImageBuffer::from_fn(64, 64, 3, |x, y, ch| 0.35 + 0.3 * c.get(x, y, ch)))
        .collect();
    let b = 0.04;
    let laplace = noisy_copies(
        &truth,
        |r| {
            let u: f64 = r.gen_range(-0.5..0.5);
            -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        },
        1,
    );
    let normal = Normal::new(0.0, b * 2f64.sqrt()).unwrap();
    let gauss = noisy_copies(&truth, |r| normal.sample(r), 2);
    let dirs: Vec<PathBuf> = ["truth", "lap", "gauss"].iter().map(|d| tmp.path().join(d)).collect();
    write_frames(&dirs[0], &truth);
    write_frames(&dirs[1], &laplace);
    write_frames(&dirs[2], &gauss);
    let smoky = tmp.path().join("smoky");
    write_frames(&smoky, &truth);
    let out = tmp.path().join("an");
    let lap_arg = format!("lap={}", s(&dirs[1]));
    let gauss_arg = format!("gauss={}", s(&dirs[2]));
    ok(&[
        "analyze", "--input", s(&smoky), "--truth", s(&dirs[0]), "--pred", &lap_arg, "--pred", &gauss_arg,
        "--output", s(&out), "--no-resize", "--hist-bins", "40",
    ]);
    let report = read_json(&out.join("report.json"));
    let fit = |name: &str| {
        let m = report["methods"].as_array().unwrap().iter().find(|m| m["name"] == name).unwrap();
        (m["fit"]["js_laplace"].as_f64().unwrap(), m["fit"]["js_gauss"].as_f64().unwrap())
    };
    let (lap_l, lap_g) = fit("lap");
    let (gauss_l, gauss_g) = fit("gauss");
    assert!(lap_l < lap_g, "laplace method: {lap_l} vs {lap_g}");
    assert!(gauss_g < gauss_l, "gauss method: {gauss_g} vs {gauss_l}");
    for v in [lap_l, lap_g, gauss_l, gauss_g] {
        assert!((0.0..=1.0).contains(&v));
    }
    let header = std::fs::read_to_string(out.join("profile_gauss.csv")).unwrap();
    assert!(header.starts_with("midpoint,count,mu,b,sigma,w_star\n"));
    assert!(out.join("profile_dcp.csv").exists());
}

#[test]
fn analyze_degenerate_and_single_frame_inputs_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 1, 48, 6);
    let (smoky, clean) = (data.join("smoky"), data.join("clean"));
    let out = tmp.path().join("an");
    let exact = format!("exact={}", s(&clean));
    ok(&["analyze", "--input", s(&smoky), "--truth", s(&clean), "--pred", &exact, "--output", s(&out), "--no-resize", "--bootstrap", "10"]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["frames"], 1);
    let exact = report["methods"].as_array().unwrap().iter().find(|m| m["name"] == "exact").unwrap();
    assert!(exact["fit"].is_null());
    assert!(exact["fit_error"].as_str().unwrap().contains("all samples equal"));
    let bins = exact["bins"].as_array().unwrap();
    assert_eq!(bins.len(), 20);
    for bin in bins {
        assert!(bin["laplace"].is_null());
        let reason = bin["absent"].as_str().unwrap();
        let count = bin["count"].as_u64().unwrap();
        if count >= 100 {
            assert!(reason.contains("all samples equal"), "{reason}");
        } else {
            assert!(reason.contains("need 100"), "{reason}");
        }
    }
    assert!(bins.iter().any(|b| b["count"].as_u64().unwrap() >= 100));
    assert!(bins.iter().any(|b| b["count"].as_u64().unwrap() < 100));
    let gate = &report["gates"][0];
    assert!(gate["profile"].as_array().unwrap().iter().all(|e| e["w_star"].is_null()));
    assert!(gate["pearson_w_star_dark"].is_null());
}

#[test]
fn commands_do_not_touch_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 3, 32, 1);
    let before = snapshot(&data);
    let (smoky, clean) = (data.join("smoky"), data.join("clean"));
    let pred = format!("net={}", s(&smoky));
    ok(&["desmoke", "--input", s(&smoky), "--truth", s(&clean), "--output", s(&tmp.path().join("d"))]);
    ok(&["analyze", "--input", s(&smoky), "--truth", s(&clean), "--pred", &pred, "--output", s(&tmp.path().join("a"))]);
    ok(&["metrics", "--pred", s(&smoky), "--truth", s(&clean)]);
    ok(&["train-demo", "--data", s(&data), "--epochs", "2", "--z", "3", "--output", s(&tmp.path().join("t"))]);
    assert_eq!(before, snapshot(&data));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("set");
    synth(&data, 4, 40, 2);
    let (smoky, clean) = (data.join("smoky"), data.join("clean"));
    let mut runs = Vec::new();
    for workers in ["1", "3"] {
        let root = tmp.path().join(format!("w{workers}"));
        let d = root.join("desmoke");
        ok(&["--workers", workers, "desmoke", "--input", s(&smoky), "--truth", s(&clean), "--output", s(&d)]);
        let a = root.join("analyze");
        let pred = format!("dcp2={}", s(&d));
        ok(&["--workers", workers, "analyze", "--input", s(&smoky), "--truth", s(&clean), "--pred", &pred, "--output", s(&a), "--bootstrap", "20"]);
        ok(&["--workers", workers, "synth", "--output", s(&root.join("synth")), "--count", "3", "--width", "24", "--height", "20"]);
        ok(&["--workers", workers, "metrics", "--pred", s(&d), "--truth", s(&clean), "--output", s(&root.join("metrics.json"))]);
        runs.push(snapshot(&root));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn workers_env_var_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let res = Command::new(env!("CARGO_BIN_EXE_surgiatm"))
        .args(["synth", "--output", s(&tmp.path().join("x")), "--count", "1", "--width", "8", "--height", "8"])
        .env("SURGIATM_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&res), 2);
}

#[test]
fn metrics_identity_on_same_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in");
    write_frames(&input, &smoke_free_frames(2, 24, 24));
    let out = ok(&["metrics", "--pred", s(&input), "--truth", s(&input), "--no-resize"]);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["aggregate"]["rmse"], 0.0);
    assert_eq!(report["aggregate"]["psnr"], 99.0);
    assert_eq!(report["aggregate"]["ssim"], 1.0);
    assert_eq!(report["aggregate"]["ciede2000"], 0.0);
    let a = load_image(input.join("000.png")).unwrap();
    assert_eq!(rmse(&a, &a).unwrap(), 0.0);
}
