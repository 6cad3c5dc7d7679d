use std::path::Path;
use std::process::{Command, Output};

use mel_enhance::audio::{synthetic_scene, write_wav, Audio};
use mel_enhance::cli::{read_grid, target_mask};
use mel_enhance::dsp::{Stft, StftConfig};
use mel_enhance::ledger::{count, FlopsReport};
use mel_enhance::weights::filterbank;
use mel_enhance::{PipelineConfig, Weights};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set",
    "embed_dim=8",
    "--set",
    "hidden=8,8,8,8",
    "--set",
    "out_dims=8,8,8,8",
];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mel-enhance"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_small(args: &[&str]) -> Vec<String> {
    args.iter().chain(SMALL).map(|a| a.to_string()).collect()
}

fn run(args: &[&str]) -> Output {
    let v = with_small(args);
    bin(&v.iter().map(String::as_str).collect::<Vec<_>>())
}

fn scene(dir: &TempDir, seconds: f32) -> (std::path::PathBuf, std::path::PathBuf) {
    let n = (16000.0 * seconds) as usize;
    let (clean, noisy) = synthetic_scene(16000, 6, n, 0.0, 9).unwrap();
    let (c, x) = (dir.path().join("clean.wav"), dir.path().join("noisy.wav"));
    write_wav(&c, &clean).unwrap();
    write_wav(&x, &noisy).unwrap();
    (c, x)
}

#[test]
fn enhance_streaming_and_offline_archives_agree() {
    let dir = TempDir::new().unwrap();
    let (_, noisy) = scene(&dir, 0.5);
    let w = dir.path().join("w.mmnt");
    let out = run(&["init-weights", "--seed", "3", "--out", s(&w)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let a = dir.path().join("a.mmnt");
    let b = dir.path().join("b.mmnt");
    let m = dir.path().join("m.mmnt");
    let wav = dir.path().join("e.wav");
    let out = run(&[
        "enhance",
        "--in",
        s(&noisy),
        "--weights",
        s(&w),
        "--out-logmel",
        s(&a),
        "--out-mask",
        s(&m),
        "--out-wav",
        s(&wav),
        "--streaming",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = run(&[
        "enhance",
        "--in",
        s(&noisy),
        "--weights",
        s(&w),
        "--out-logmel",
        s(&b),
        "--offline",
    ]);
    assert!(out.status.success());

    let (la, lb) = (
        read_grid(&a, "logmel").unwrap(),
        read_grid(&b, "logmel").unwrap(),
    );
    assert_eq!(la.bands(), 80);
    assert_eq!(la.frames(), StftConfig::default().frame_count(8000));
    let diff = la
        .values()
        .iter()
        .zip(lb.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0f32, f32::max);
    assert!(diff <= 1e-5, "{diff}");
    assert_eq!(
        read_grid(&m, "mask").unwrap(),
        read_grid(&a, "mask").unwrap()
    );
    let arc = Weights::load(&a).unwrap();
    let cfg = mel_enhance::cli::load_config(&mel_enhance::cli::ConfigArgs {
        config: None,
        set: SMALL.chunks(2).map(|c| c[1].to_string()).collect(),
    })
    .unwrap();
    assert_eq!(arc.fingerprint(), Some(cfg.fingerprint().as_str()));
    let wave = mel_enhance::audio::read_wav(&wav).unwrap();
    assert_eq!(wave.num_channels(), 1);
    assert_eq!(wave.len(), 8000);
}

#[test]
fn target_matches_library_and_bounds() {
    let dir = TempDir::new().unwrap();
    let (clean, noisy) = scene(&dir, 0.3);
    let out_path = dir.path().join("t.mmnt");
    let out = bin(&[
        "target",
        "--clean",
        s(&clean),
        "--noisy",
        s(&noisy),
        "--out",
        s(&out_path),
        "--ref-ch",
        "2",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let got = read_grid(&out_path, "mask").unwrap();
    let cfg = PipelineConfig::mel();
    let c = mel_enhance::audio::read_wav(&clean).unwrap();
    let x = mel_enhance::audio::read_wav(&noisy).unwrap();
    assert_eq!(got, target_mask(&cfg, &c, &x, 2).unwrap());
    assert!(got.values().iter().all(|m| (0.0..=1.0).contains(m)));
}

#[test]
fn flops_compare_reports_reduction_and_tsv() {
    let dir = TempDir::new().unwrap();
    let tsv = dir.path().join("ledger.tsv");
    let out = bin(&[
        "flops",
        "--config",
        "mel",
        "--compare-config",
        "linear",
        "--out-tsv",
        s(&tsv),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("reduction")).unwrap();
    let pct: f64 = line
        .split(": ")
        .nth(1)
        .unwrap()
        .split('%')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((50.0..=70.0).contains(&pct), "{line}");

    let cfg = PipelineConfig::mel();
    let back = FlopsReport::from_tsv(
        &std::fs::read_to_string(&tsv).unwrap(),
        cfg.stft.frames_per_second(),
    )
    .unwrap();
    assert_eq!(back, count(&cfg).unwrap());
}

#[test]
fn filterbank_csv_reloads() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("fb.csv");
    assert!(bin(&["dump-filterbank", "--out", s(&p)]).status.success());
    let text = std::fs::read_to_string(&p).unwrap();
    let rows: Vec<Vec<f32>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let fb = filterbank(&PipelineConfig::mel()).unwrap();
    assert_eq!(rows.len(), 80);
    for (m, row) in rows.iter().enumerate() {
        assert_eq!(row.as_slice(), fb.row(m));
    }
}

#[test]
fn config_files_match_builtins() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, cfg) in [
        ("mel.conf", PipelineConfig::mel()),
        ("linear.conf", PipelineConfig::linear()),
    ] {
        assert_eq!(
            PipelineConfig::load(root.join(file)).unwrap(),
            cfg,
            "{file}"
        );
    }
}

#[test]
fn manifest_dump_lists_every_tensor() {
    let out = bin(&["dump-manifest", "--config", "linear"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# config "));
    let m = mel_enhance::Manifest::for_config(&PipelineConfig::linear()).unwrap();
    assert_eq!(text.lines().count(), 1 + m.to_text().lines().count());
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let (clean, noisy) = scene(&dir, 0.1);
    let missing = dir.path().join("nope.wav");
    let w = dir.path().join("w.mmnt");
    let o = dir.path().join("o.mmnt");

    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["flops", "--set", "n_mels=0"]).status.code(), Some(2));
    assert_eq!(
        bin(&["flops", "--config", s(&missing)]).status.code(),
        Some(3)
    );

    assert!(bin(&["init-weights", "--out", s(&w)]).status.success());
    let code = |args: &[&str]| bin(args).status.code();
    assert_eq!(
        code(&[
            "enhance",
            "--in",
            s(&missing),
            "--weights",
            s(&w),
            "--out-logmel",
            s(&o)
        ]),
        Some(3)
    );
    assert_eq!(
        code(&[
            "enhance",
            "--in",
            s(&noisy),
            "--weights",
            s(&w),
            "--out-logmel",
            s(&o),
            "--ref-ch",
            "7"
        ]),
        Some(4)
    );
    // weights for a different config
    let small = with_small(&[
        "enhance",
        "--in",
        s(&noisy),
        "--weights",
        s(&w),
        "--out-logmel",
        s(&o),
    ]);
    assert_eq!(
        bin(&small.iter().map(String::as_str).collect::<Vec<_>>())
            .status
            .code(),
        Some(4)
    );
    std::fs::write(&w, b"MMNX").unwrap();
    assert_eq!(
        code(&[
            "enhance",
            "--in",
            s(&noisy),
            "--weights",
            s(&w),
            "--out-logmel",
            s(&o)
        ]),
        Some(4)
    );

    let mono = dir.path().join("mono.wav");
    write_wav(&mono, &Audio::new(16000, vec![vec![0.0; 1600]]).unwrap()).unwrap();
    assert_eq!(
        code(&[
            "target",
            "--clean",
            s(&mono),
            "--noisy",
            s(&noisy),
            "--out",
            s(&o)
        ]),
        Some(4)
    );
    assert_eq!(
        code(&[
            "target",
            "--clean",
            s(&clean),
            "--noisy",
            s(&noisy),
            "--out",
            s(&o)
        ]),
        Some(0)
    );
}

#[test]
fn stft_round_trip_through_wav_file() {
    let dir = TempDir::new().unwrap();
    let (clean, _) = scene(&dir, 0.25);
    let a = mel_enhance::audio::read_wav(&clean).unwrap();
    let stft = Stft::new(StftConfig::default()).unwrap();
    let spec = stft.analyze(&a).unwrap();
    let back = stft.synthesize(&spec.channel(0).unwrap()).unwrap();
    let interior = &back[..back.len() - 256];
    let err = interior
        .iter()
        .zip(a.channel(0))
        .map(|(x, y)| (x - y).abs())
        .fold(0f32, f32::max);
    assert!(err < 1e-4, "{err}");
}
