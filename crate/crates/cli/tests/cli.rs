use std::process::{Command, Output};

fn mixvit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixvit")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mixvit(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = mixvit(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

#[test]
fn describe_lists_stages() {
    let s = ok(&["describe", "trt-vit-c"]);
    assert!(
        s.contains("| stage4 | H/16 x W/16 | 768 | bottleneck ×7 + mixc(R=0.5,S=2,K=7) ×2 |"),
        "{s}"
    );
    let s = ok(&["describe", "resnet50"]);
    for n in ["×3", "×4", "×6"] {
        assert!(s.contains(n), "{s}");
    }
    assert!(err(&["describe", "resnet51"]).contains("resnet51"));
}

#[test]
fn count_reports_totals() {
    let s = ok(&["count", "trt-vit-a", "--format", "csv"]);
    assert!(s.lines().any(|l| l.starts_with("trt-vit-a,model,")), "{s}");
    assert!(err(&["count", "resnet50", "--res", "225"]).starts_with("error:"));
}

#[test]
fn spec_output_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.spec");
    std::fs::write(&path, ok(&["spec", "trt-vit-a"])).unwrap();
    let from_file = ok(&["count", path.to_str().unwrap(), "--format", "csv"]);
    let from_preset = ok(&["count", "trt-vit-a", "--format", "csv"]);
    let totals = |s: &str| {
        s.lines()
            .nth(1)
            .unwrap()
            .split(',')
            .skip(2)
            .collect::<Vec<_>>()
            .join(",")
    };
    assert_eq!(totals(&from_file), totals(&from_preset));
}

#[test]
fn metrics_needs_a_source() {
    assert!(err(&["metrics"]).contains("no latency source"));
    let data = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/block_grid_t4.csv");
    let s = ok(&["metrics", "--latency", data, "--blocks", "--format", "jsonl"]);
    assert_eq!(s.lines().count(), 16);
    let first: serde_json::Value = serde_json::from_str(s.lines().next().unwrap()).unwrap();
    assert!(first["teraflops"].is_number(), "{first}");
}

#[test]
fn gradcheck_passes_and_reports_bad_widths() {
    assert!(ok(&["gradcheck", "mixc", "--c", "64", "--hw", "8"]).contains("PASS"));
    let s = ok(&["gradcheck", "all", "--tiny"]);
    assert!(!s.contains("FAIL"), "{s}");
    assert_eq!(s.matches("PASS").count(), 15);
    let e = err(&["gradcheck", "transformer", "--c", "48"]);
    assert!(e.contains("`transformer`") && e.contains("48"), "{e}");
}

#[test]
fn init_then_infer_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.bin");
    let x = dir.path().join("x.bin");
    ok(&["init", "trt-vit-a", "--seed", "3", "--out", w.to_str().unwrap()]);
    let pixels: Vec<u8> = (0..3 * 32 * 32)
        .flat_map(|i| ((i % 7) as f32 * 0.1).to_le_bytes())
        .collect();
    std::fs::write(&x, pixels).unwrap();
    let args = [
        "infer",
        "trt-vit-a",
        "--weights",
        w.to_str().unwrap(),
        "--input",
        x.to_str().unwrap(),
        "--res",
        "32",
        "--format",
        "csv",
    ];
    let a = ok(&args);
    assert_eq!(a, ok(&args));
    assert_eq!(a.lines().count(), 1001);
    let wrong = [
        "infer",
        "trt-vit-b",
        "--weights",
        w.to_str().unwrap(),
        "--input",
        x.to_str().unwrap(),
        "--res",
        "32",
    ];
    assert!(err(&wrong).starts_with("error:"));
}

#[test]
fn compare_marks_accuracy_unavailable() {
    let s = ok(&["compare", "g2"]);
    assert!(s.contains("2-3-6-5") && s.contains("n/a"), "{s}");
    let s = ok(&["compare", "g4"]);
    assert!(
        s.contains("mixb: convolution first; mixc: attention first; equal cost: true"),
        "{s}"
    );
    assert!(err(&["compare", "g5"]).contains("g5"));
}

#[test]
fn bench_tags_local_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lat.csv");
    ok(&[
        "bench",
        "bottleneck",
        "--c",
        "64",
        "--hw",
        "8",
        "--iters",
        "3",
        "--warmup",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("target,kind,c_in,c_out,h,w,batch,latency_ms,source,env\n"));
    assert!(csv.contains(",measured-local,"), "{csv}");
    let s = ok(&["metrics", "--latency", out.to_str().unwrap(), "--blocks"]);
    assert!(s.contains("bottleneck"), "{s}");
}
