use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blindsr_core::image::{load_image, save_image};
use blindsr_core::synthetic::scene;

fn blindsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blindsr"))
        .args(args)
        .env_remove("BLINDSR_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = blindsr(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// A 2x LR image and a small setting-2 basis.
    fn lr_and_basis(&self) -> (PathBuf, PathBuf) {
        let (hr, k, lr, basis) = (self.path("hr.png"), self.path("k.txt"), self.path("lr.png"), self.path("b.pcab"));
        save_image(&scene(3, 32, 32, 1), &hr).unwrap();
        ok(&["gen-kernel", "--setting", "2", "--sigma1", "1.2", "--sigma2", "2.0", "--theta", "0.4", "--out", s(&k)]);
        ok(&["degrade", "--in", s(&hr), "--kernel", s(&k), "--scale", "2", "--out", s(&lr)]);
        ok(&["pca-fit", "--setting", "2", "--scale", "2", "--m", "6", "--n", "300", "--out", s(&basis)]);
        (lr, basis)
    }
}

#[test]
fn gen_kernel_happy_path() {
    let f = Fixture::new();
    let k = f.path("k.txt");
    ok(&["gen-kernel", "--setting", "1", "--width", "1.8", "--side", "21", "--out", s(&k)]);
    let text = fs::read_to_string(&k).unwrap();
    assert!(text.starts_with("K 21\n"));
    assert_eq!(text.lines().count(), 22);

    let (a, b) = (f.path("a.txt"), f.path("b.txt"));
    ok(&["--seed", "5", "gen-kernel", "--setting", "2", "--out", s(&a)]);
    ok(&["gen-kernel", "--setting", "2", "--out", s(&b), "--seed", "5"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fs::read_to_string(&a).unwrap().starts_with("K 11\n"));
}

#[test]
fn usage_errors_exit_1() {
    let out = blindsr(&["gen-kernel", "--setting", "1", "--width", "1.8"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));

    for args in [
        vec!["gen-kernel", "--setting", "3", "--out", "x.txt"],
        vec!["gen-kernel", "--setting", "1", "--bogus", "--out", "x.txt"],
        vec!["gen-kernel", "--setting", "2", "--sigma1", "1", "--out", "x.txt"],
        vec!["solve", "--in", "a.png", "--scale", "2", "--solver", "neural", "--out", "o.png"],
        vec!["solve", "--in", "a.png", "--scale", "2", "--out", "o.png"],
        vec!["--threads", "0", "gen-kernel", "--setting", "1", "--out", "x.txt"],
        vec!["compare", "--image", "a.png", "--out", "g.png"],
        vec![],
    ] {
        let out = blindsr(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
    assert_eq!(blindsr(&["--help"]).status.code(), Some(0));
    assert_eq!(blindsr(&["--version"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2_with_the_path() {
    let f = Fixture::new();
    let k = f.path("k.txt");
    ok(&["gen-kernel", "--setting", "1", "--width", "1.0", "--side", "5", "--out", s(&k)]);
    let missing = f.path("does-not-exist.png");
    let out = blindsr(&["degrade", "--in", s(&missing), "--kernel", s(&k), "--scale", "2", "--out", s(&f.path("y.png"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.png"));
    assert!(!f.path("y.png").exists());
}

#[test]
fn classical_solve_writes_trace_and_kernel() {
    let f = Fixture::new();
    let (lr, basis) = f.lr_and_basis();
    let (sr, trace, kout) = (f.path("sr.png"), f.path("trace.csv"), f.path("kest.txt"));
    let stdout = ok(&[
        "solve", "--in", s(&lr), "--scale", "2", "--basis", s(&basis), "--solver", "classical", "--iters", "3",
        "--trace", s(&trace), "--out", s(&sr), "--out-kernel", s(&kout),
    ]);
    assert!(stdout.contains("after 3 iterations"));
    let img = load_image(&sr).unwrap();
    assert_eq!(img.dims(), (3, 32, 32));
    let csv = fs::read_to_string(&trace).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "iter,residual_l1,k0,k1,k2,k3,k4,k5");
    assert_eq!(lines.len(), 4);
    assert!(fs::read_to_string(&kout).unwrap().starts_with("K 11\n"));

    let bic = f.path("bic.png");
    ok(&["solve", "--in", s(&lr), "--scale", "2", "--solver", "bicubic", "--out", s(&bic)]);
    assert_eq!(load_image(&bic).unwrap().dims(), (3, 32, 32));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let f = Fixture::new();
    let (lr, basis) = f.lr_and_basis();
    let cfg = f.path("run.conf");
    fs::write(&cfg, format!("# solver settings\nbasis = {}\niters = 3\ncg-iters = 50\nhr = ignored-here\n", s(&basis))).unwrap();
    let trace = f.path("t.csv");
    let out = f.path("o.png");
    ok(&["--config", s(&cfg), "solve", "--in", s(&lr), "--scale", "2", "--trace", s(&trace), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 4);
    ok(&["solve", "--config", s(&cfg), "--in", s(&lr), "--scale", "2", "--iters", "2", "--trace", s(&trace), "--out", s(&out)]);
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 3);

    fs::write(&cfg, "no-such-flag = 1\n").unwrap();
    let res = blindsr(&["--config", s(&cfg), "solve", "--in", s(&lr), "--scale", "2", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no-such-flag"));
}

#[test]
fn bench_is_deterministic_across_runs_and_threads() {
    let f = Fixture::new();
    let hr = f.path("hr");
    fs::create_dir(&hr).unwrap();
    for i in 0..2 {
        save_image(&scene(3, 24, 24, 10 + i), hr.join(format!("img{i}.png"))).unwrap();
    }
    let kdir = f.path("kernels");
    fs::create_dir(&kdir).unwrap();
    for (i, w) in ["0.8", "1.4"].iter().enumerate() {
        ok(&["gen-kernel", "--setting", "1", "--width", w, "--side", "11", "--out", s(&kdir.join(format!("k{i}.txt")))]);
    }
    let basis = f.path("b.pcab");
    ok(&["pca-fit", "--setting", "2", "--scale", "2", "--m", "6", "--n", "300", "--out", s(&basis)]);
    let run = |name: &str, threads: &str| {
        let out = f.path(name);
        ok(&[
            "--threads", threads, "bench", "--hr", s(&hr), "--scale", "2", "--kernels", s(&kdir), "--basis", s(&basis),
            "--iters", "2", "--sigma", "3", "--deterministic", "--out", s(&out),
        ]);
        fs::read(&out).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "3"));
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("image,kernel,psnr_db,ssim,kernel_l1,ms\nimg0,k0,"));
    assert_eq!(text.lines().count(), 5);
    assert!(f.path("a.json").exists());

    let stdout = ok(&["bench", "--hr", s(&hr), "--scale", "2", "--solver", "bicubic", "--out", s(&f.path("bic.csv"))]);
    assert!(stdout.contains("16 rows"), "{stdout}");
}

#[test]
fn train_then_solve_neural() {
    let f = Fixture::new();
    let data = f.path("data");
    fs::create_dir(&data).unwrap();
    save_image(&scene(3, 24, 24, 3), data.join("a.png")).unwrap();
    let ckpt = f.path("m.danw");
    let stdout = ok(&[
        "train-toy", "--data", s(&data), "--scale", "2", "--setting", "2", "--steps", "2", "--batch", "2", "--crop", "16",
        "--m", "4", "--iters", "2", "--out", s(&ckpt),
    ]);
    assert!(stdout.contains("over 2 steps"));
    let lr = f.path("lr.png");
    save_image(&scene(3, 12, 14, 4), &lr).unwrap();
    let sr = f.path("sr.png");
    let trace = f.path("t.csv");
    ok(&["solve", "--in", s(&lr), "--scale", "2", "--solver", "neural", "--ckpt", s(&ckpt), "--iters", "3", "--trace", s(&trace), "--out", s(&sr)]);
    assert_eq!(load_image(&sr).unwrap().dims(), (3, 24, 28));
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), 4);
    let wrong = blindsr(&["solve", "--in", s(&lr), "--scale", "3", "--solver", "neural", "--ckpt", s(&ckpt), "--out", s(&sr)]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn compare_grid() {
    let f = Fixture::new();
    let (a, b) = (f.path("a.png"), f.path("b.png"));
    save_image(&scene(3, 20, 30, 1), &a).unwrap();
    save_image(&scene(3, 20, 30, 2), &b).unwrap();
    let grid = f.path("grid.png");
    ok(&["compare", "--image", &format!("LR={}", s(&a)), "--image", s(&b), "--gutter", "4", "--out", s(&grid)]);
    assert_eq!(load_image(&grid).unwrap().width(), 64);
    let out = blindsr(&["compare", "--image", s(&a), "--image", s(&b), "--inset", "15,0,10,4", "--out", s(&grid)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("20x30"));
    let out = blindsr(&["compare", "--image", s(&a), "--image", s(&b), "--inset", "1,2,3", "--out", s(&grid)]);
    assert_eq!(out.status.code(), Some(1));
}
