//! End-to-end checks of the sweep pipeline and the `vblast` binary:
//! CSV round trips, cross-strategy ordering, checked-in recipes, and the
//! documented exit codes.

use std::path::{Path, PathBuf};
use std::process::Command;

use vblast_cli::config::{load_config, parse_config};
use vblast_cli::csv::{emit_rows, parse_rows};
use vblast_cli::sweep::run_sweep;
use vblast_core::Strategy;

fn vblast() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vblast"))
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("vblast_{}_{name}", std::process::id()));
    std::fs::write(&path, text).expect("temp config written");
    path
}

#[test]
fn csv_round_trip_recovers_every_field_exactly() {
    let cfg = parse_config(
        "mux_gain = 1\nsnr_db_start = 10\nsnr_db_stop = 20\nsnr_db_step = 5\nmc_trials = 1500\nseed = 11",
    )
    .unwrap();
    let rows = run_sweep(&cfg);
    assert_eq!(rows.len(), 3 * 4, "three points, all four strategies");
    let text = emit_rows(&rows, cfg.m);
    let (m, parsed) = parse_rows(&text).expect("own CSV must parse");
    assert_eq!(m, cfg.m, "stream count recovered from the header");
    assert_eq!(parsed, rows, "parse(emit(rows)) is field-for-field equal");

    let again = emit_rows(&run_sweep(&cfg), cfg.m);
    assert_eq!(again, text, "same config, same bytes — Monte Carlo included");
}

#[test]
fn joint_allocation_dominates_at_every_grid_point() {
    // Full multiplexing on a 2x2 link: more freedom never hurts, so at
    // every SNR the exact outages must order
    // apra <= ara <= apa <= uniform.
    let cfg = parse_config(
        "mux_gain = 1\nsnr_db_start = 0\nsnr_db_stop = 40\nsnr_db_step = 10\nstrategies = uniform, apa, ara, apra",
    )
    .unwrap();
    let rows = run_sweep(&cfg);
    for chunk in rows.chunks(4) {
        let p = |s: Strategy| {
            chunk
                .iter()
                .find(|r| r.strategy == s)
                .and_then(|r| r.p_out_exact)
                .expect("every strategy solved")
        };
        let (uni, apa, ara, apra) =
            (p(Strategy::Uniform), p(Strategy::Apa), p(Strategy::Ara), p(Strategy::Apra));
        let snr = chunk[0].snr_db;
        assert!(apa <= uni * (1.0 + 1e-9), "apa {apa} > uniform {uni} at {snr} dB");
        assert!(ara <= apa * (1.0 + 1e-9), "ara {ara} > apa {apa} at {snr} dB");
        assert!(apra <= ara * (1.0 + 1e-9), "apra {apra} > ara {ara} at {snr} dB");
    }
}

#[test]
fn the_gap_shifts_the_whole_pipeline_not_just_the_label() {
    // A 3 dB gap at snr + 3 dB must reproduce the no-gap outage at snr:
    // everything downstream sees only the effective SNR.
    let gapped = parse_config(
        "rate_nats = 2\ngap_db = 3\nsnr_db_start = 33\nsnr_db_stop = 33\nsnr_db_step = 1\nstrategies = apa",
    )
    .unwrap();
    let plain = parse_config(
        "rate_nats = 2\nsnr_db_start = 30\nsnr_db_stop = 30\nsnr_db_step = 1\nstrategies = apa",
    )
    .unwrap();
    let (g, p) = (
        run_sweep(&gapped)[0].p_out_exact.unwrap(),
        run_sweep(&plain)[0].p_out_exact.unwrap(),
    );
    assert!(
        (g - p).abs() < 1e-6 * p,
        "gap 3 dB at 33 dB should match gap 0 at 30 dB: {g} vs {p}"
    );
}

#[test]
fn checked_in_recipes_parse_and_cover_the_figures() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).expect("configs/ directory present") {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "cfg") {
            load_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            names.push(path.file_stem().unwrap().to_string_lossy().into_owned());
        }
    }
    names.sort();
    for want in ["fig1_r1", "fig1_r2", "fig1_r3", "fig2", "fig3", "mc_agreement"] {
        assert!(names.iter().any(|n| n == want), "recipe {want} missing from configs/");
    }
    let mc = load_config(&dir.join("mc_agreement.cfg")).unwrap();
    assert!(mc.mc_trials > 0, "the Monte Carlo recipe must actually draw channels");
}

#[test]
fn binary_allocate_succeeds_with_exit_zero() {
    let out = vblast().args(["allocate", "--rate-nats", "2", "--snr-db", "25"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "allocate exits 0");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("system outage"), "human-readable outage line:\n{stdout}");
    assert!(stdout.contains("active streams"), "active-set line:\n{stdout}");
}

#[test]
fn binary_rejects_bad_configs_with_exit_two() {
    let path = temp_file("typo.cfg", "snr_db_setp = 1\nrate_nats = 2\n");
    let out = vblast().args(["sweep", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "config typo exits 2");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 1"), "diagnostic names the line:\n{stderr}");
    assert!(stderr.contains("snr_db_setp"), "diagnostic names the key:\n{stderr}");

    let out = vblast().args(["allocate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "missing rate target exits 2");

    let out = vblast()
        .args(["dual", "--objective", "rate", "--epsilon", "1e-3", "--rate-nats", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "rate objective rejects rate flags");

    let out = vblast().args(["allocate", "--rate-nats", "2", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
    std::fs::remove_file(path).ok();
}

#[test]
fn binary_reports_solver_failures_with_exit_three() {
    // A finite-difference step of 1 is outside the supported window; the
    // sensitivity machinery rejects it as a domain error at solve time.
    let out = vblast()
        .args(["sensitivity", "--rate-nats", "2", "--strategy", "apa", "--step", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "solver-level failure exits 3");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("solver error"), "prefix tells the class:\n{stderr}");
}

#[test]
fn binary_sweeps_are_byte_identical_across_runs() {
    let path = temp_file(
        "det.cfg",
        "mux_gain = 1\nsnr_db_start = 10\nsnr_db_stop = 15\nsnr_db_step = 5\nmc_trials = 2000\nseed = 3\nstrategies = uniform, apra\n",
    );
    let run = || {
        let out = vblast().args(["sweep", "--config"]).arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "sweep exits 0");
        out.stdout
    };
    let (a, b) = (run(), run());
    assert!(!a.is_empty(), "sweep wrote CSV to stdout");
    assert_eq!(a, b, "fixed seed, fixed bytes");
    let (_, rows) = parse_rows(&String::from_utf8(a).unwrap()).expect("stdout CSV parses");
    assert_eq!(rows.len(), 4, "two points, two strategies");
    assert!(rows.iter().all(|r| r.p_out_mc.is_some()), "Monte Carlo columns filled");
    std::fs::remove_file(path).ok();
}

#[test]
fn binary_flags_override_the_config_file() {
    let path = temp_file("base.cfg", "rate_nats = 2\nsnr_db_start = 20\nsnr_db_stop = 20\nsnr_db_step = 1\nstrategies = uniform\n");
    let out = vblast()
        .args(["sweep", "--config"])
        .arg(&path)
        .args(["--snr-db-start", "30", "--snr-db-stop", "30"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let (_, rows) = parse_rows(&text).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].snr_db, 30.0, "flag grid wins over the file grid");
    std::fs::remove_file(path).ok();
}
