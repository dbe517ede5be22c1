mod common;

use std::process::Command;

use common::{base, Fixture};

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_filterforward"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn generate_run_fetch_cost_round_trip() {
    let fx = Fixture::new();
    let cfg = fx.path("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "{}[generate]\nseed = 2\nframe_count = 300\nprevalence = 0.1\nmin_event_len = 5\nmax_event_len = 10\n\
             output = \"s.ffvs\"\nlabels = \"s.csv\"\n[[microclassifier]]\nname = \"truth\"\noracle = true\n\
             [run]\ninput = \"s.ffvs\"\nlabels = \"s.csv\"\noutput_dir = \"out\"\n",
            base(1, 32)
        ),
    )
    .unwrap();
    let c = cfg.to_str().unwrap();

    let (code, stdout, _) = cli(&["generate", "--config", c]);
    assert_eq!(code, 0);
    assert!(stdout.contains("300 frames"), "{stdout}");

    let (code, stdout, stderr) = cli(&["run", "--config", c]);
    assert_eq!(code, 0, "{stderr}");
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["mode"], "filterforward");

    let full = fx.path("full.ffvs");
    let (code, _, stderr) = cli(&[
        "fetch",
        "--config",
        c,
        "--all",
        "--output",
        full.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(
        std::fs::read(&full).unwrap(),
        std::fs::read(fx.path("s.ffvs")).unwrap()
    );

    let ev = fx.path("ev.ffvs");
    let args = [
        "fetch",
        "--config",
        c,
        "--mc",
        "truth",
        "--event",
        "0",
        "--context",
        "2",
        "--output",
        ev.to_str().unwrap(),
    ];
    assert_eq!(cli(&args).0, 0);
    let missing = [
        "fetch",
        "--config",
        c,
        "--mc",
        "nobody",
        "--event",
        "0",
        "--output",
        ev.to_str().unwrap(),
    ];
    assert_eq!(cli(&missing).0, 1);

    let (code, stdout, _) = cli(&[
        "cost", "--config", c, "--model", "lbc", "--height", "1080", "--width", "1920",
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("marginal ratio vs discrete"), "{stdout}");
    let (code, stdout, _) = cli(&["cost", "--config", c, "--model", "base"]);
    assert_eq!(code, 0);
    assert_eq!(
        stdout
            .lines()
            .filter(|l| l.trim_start().starts_with("conv"))
            .count(),
        4
    );
}

#[test]
fn exit_codes() {
    let fx = Fixture::new();
    let bad = fx.path("bad.toml");
    std::fs::write(
        &bad,
        "[base]\nseed = 1\nheight = 8\nwidth = 8\n[run]\nbatch_size = 0\n",
    )
    .unwrap();
    let (code, _, stderr) = cli(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("run.batch_size"), "{stderr}");

    let missing = fx.path("missing.toml");
    assert_eq!(cli(&["run", "--config", missing.to_str().unwrap()]).0, 1);
    assert_eq!(cli(&["frobnicate"]).0, 2);
}
