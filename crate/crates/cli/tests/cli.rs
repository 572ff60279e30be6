use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppgface::dsp::wav::read_wav;
use ppgface::dsp::{read_fmtx, FrameConfig};

const TINY: &str = "\
[corpus]
speakers = 3
heldout_speakers = 1
utterances_per_speaker = 4
face_utterances = 8
min_duration_ms = 1000
max_duration_ms = 1300

[ppg]
context = 1
conv_channels = 8
conv_kernel = 3
dense_layers = 1
dense_units = 8

[ppg_train]
epochs = 1
noisy_copies = 1

[fap]
blstm_layers = 1
blstm_units = 4
dense_layers = 1
dense_units = 6

[fap_train]
epochs = 1
chunk_frames = 40

[eval]
samples = 3
snrs_db = 20, 0
noise_copies = 1
";

fn ppgface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppgface"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = ppgface(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    manifest: PathBuf,
    ppg: PathBuf,
    fap: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("run.cfg");
    fs::write(&config, TINY).unwrap();
    let corpus = root.join("corpus");
    ok(&["corpus", "gen", "--config", s(&config), "--out", s(&corpus)]);
    let manifest = corpus.join("manifest.tsv");
    let ppg = root.join("ppg.nnck");
    ok(&["ppg", "train", "--config", s(&config), "--manifest", s(&manifest), "--out", s(&ppg), "--seed", "3"]);
    let fap = root.join("fap.nnck");
    ok(&[
        "fap", "train", "--config", s(&config), "--manifest", s(&manifest), "--ppg-model", s(&ppg), "--out",
        s(&fap),
    ]);
    Fixture {
        _dir: dir,
        root,
        config,
        manifest,
        ppg,
        fap,
    }
}

fn first_wav(f: &Fixture) -> PathBuf {
    let text = fs::read_to_string(&f.manifest).unwrap();
    let line = text.lines().find(|l| !l.starts_with('#')).unwrap();
    let wav = line.split('\t').find(|c| c.ends_with(".wav")).unwrap();
    f.manifest.parent().unwrap().join(wav)
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn end_to_end_pipeline() {
    let f = fixture();
    let wav = first_wav(&f);
    let frames = FrameConfig::default().num_frames(read_wav(&wav).unwrap().len());

    // Generation with MLPG: 32 statics per analysis frame.
    let mlpg = f.root.join("out/mlpg.fmtx");
    ok(&[
        "generate", "--ppg-model", s(&f.ppg), "--fap-model", s(&f.fap), "--audio", s(&wav), "--emotion", "happy",
        "--smooth", "mlpg", "--out", s(&mlpg),
    ]);
    let (m, _) = read_fmtx(&mlpg).unwrap();
    assert_eq!((m.rows(), m.cols()), (frames, 32));

    // Raw means, then standalone smoothing: byte-identical to the above.
    let raw = f.root.join("out/raw.fmtx");
    ok(&[
        "generate", "--ppg-model", s(&f.ppg), "--fap-model", s(&f.fap), "--audio", s(&wav), "--emotion", "happy",
        "--smooth", "none", "--out", s(&raw),
    ]);
    assert_eq!(read_fmtx(&raw).unwrap().0.cols(), 96);
    let smoothed = f.root.join("out/smoothed.fmtx");
    ok(&["smooth", "--fap-model", s(&f.fap), "--means", s(&raw), "--out", s(&smoothed)]);
    assert_eq!(fs::read(&smoothed).unwrap(), fs::read(&mlpg).unwrap());

    let win = f.root.join("out/window.fmtx");
    ok(&[
        "generate", "--ppg-model", s(&f.ppg), "--fap-model", s(&f.fap), "--audio", s(&wav), "--smooth", "window",
        "--out", s(&win),
    ]);
    assert_eq!(read_fmtx(&win).unwrap().0.rows(), frames);

    // Posteriorgram file.
    let ppg_out = f.root.join("out/x.ppg.fmtx");
    ok(&["ppg", "extract", "--model", s(&f.ppg), "--audio", s(&wav), "--out", s(&ppg_out)]);
    let (p, meta) = read_fmtx(&ppg_out).unwrap();
    assert_eq!(p.rows(), frames);
    assert_eq!(p.cols(), 17);
    assert!(meta.iter().any(|(k, _)| k == "space_checksum"));

    // Features for every utterance.
    for (kind, cols) in [("logmel", 40), ("energy", 1), ("mfcc", 39)] {
        let out = f.root.join(format!("feat_{kind}"));
        ok(&["features", "extract", "--manifest", s(&f.manifest), "--kind", kind, "--out", s(&out)]);
        let files = dir_bytes(&out);
        assert_eq!(files.len(), 16);
        let (m, _) = read_fmtx(&out.join(&files[0].0)).unwrap();
        assert_eq!(m.cols(), cols);
    }

    // Evaluation reports.
    let system = format!("ppg={},{}", s(&f.fap), s(&f.ppg));
    let report = f.root.join("split.csv");
    ok(&[
        "eval", "split", "--config", s(&f.config), "--manifest", s(&f.manifest), "--system", &system, "--split",
        "normal", "--split", "unseen_speaker", "--out", s(&report),
    ]);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.starts_with("system,split,snr_db,mse,pearson_mean,n\n"));
    assert_eq!(text.lines().count(), 3);
    let snr = f.root.join("snr.csv");
    ok(&[
        "eval", "snr", "--config", s(&f.config), "--manifest", s(&f.manifest), "--system", &system, "--out",
        s(&snr), "--threads", "2",
    ]);
    let again = f.root.join("snr1.csv");
    ok(&[
        "eval", "snr", "--config", s(&f.config), "--manifest", s(&f.manifest), "--system", &system, "--out",
        s(&again), "--threads", "1",
    ]);
    assert_eq!(fs::read(&snr).unwrap(), fs::read(&again).unwrap());
    assert_eq!(fs::read_to_string(&snr).unwrap().lines().count(), 3);

    // Seeded training is reproducible to the byte.
    let ppg2 = f.root.join("ppg2.nnck");
    ok(&[
        "ppg", "train", "--config", s(&f.config), "--manifest", s(&f.manifest), "--out", s(&ppg2), "--seed", "3",
        "--threads", "1",
    ]);
    assert_eq!(fs::read(&ppg2).unwrap(), fs::read(&f.ppg).unwrap());

    // Extension: a third language appended, base model named relative to the
    // config file. The face model refuses the extended posteriorgrams.
    let ext_dir = f.root.join("ext");
    fs::create_dir_all(&ext_dir).unwrap();
    let ext_cfg = ext_dir.join("ext.cfg");
    let text = TINY.replace("[ppg]\n", "[ppg]\nbase_model = ../ppg.nnck\n")
        + "[ppg_extend]\nepochs = 1\n";
    let text = text.replace("[corpus]\n", "[corpus]\nlanguages = la:8, lb:8:la, lc:4\n");
    fs::write(&ext_cfg, text).unwrap();
    let corpus_b = f.root.join("corpus_b");
    ok(&["corpus", "gen", "--config", s(&ext_cfg), "--out", s(&corpus_b)]);
    let ext = f.root.join("ppg_ext.nnck");
    ok(&[
        "ppg", "train", "--config", s(&ext_cfg), "--manifest", s(&corpus_b.join("manifest.tsv")), "--out", s(&ext),
    ]);
    let ext_ppg = f.root.join("out/ext.ppg.fmtx");
    ok(&["ppg", "extract", "--model", s(&ext), "--audio", s(&wav), "--out", s(&ext_ppg)]);
    assert_eq!(read_fmtx(&ext_ppg).unwrap().0.cols(), 21);
    let o = ppgface(&[
        "generate", "--ppg-model", s(&ext), "--fap-model", s(&f.fap), "--audio", s(&wav), "--out", s(&mlpg),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mismatch"));

    // A model that reads posteriorgrams cannot run without an extractor.
    let o = ppgface(&["generate", "--fap-model", s(&f.fap), "--audio", s(&wav), "--out", s(&mlpg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corpus_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, TINY).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["corpus", "gen", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]);
    ok(&["corpus", "gen", "--config", s(&cfg), "--out", s(&b), "--threads", "3"]);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    let c = dir.path().join("c");
    ok(&["corpus", "gen", "--config", s(&cfg), "--out", s(&c), "--seed", "77"]);
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
}

#[test]
fn missing_model_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_model.nnck");
    let o = ppgface(&[
        "generate", "--fap-model", s(&missing), "--audio", "x.wav", "--out", s(&dir.path().join("o.fmtx")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(ppgface(&[]).status.code(), Some(1));
    assert_eq!(ppgface(&["frobnicate"]).status.code(), Some(1));
    let o = ppgface(&[
        "generate", "--fap-model", "f", "--audio", "a.wav", "--emotion", "bored", "--out", "o",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("neutral"));
    assert_eq!(ppgface(&["features", "extract", "--manifest", "m", "--kind", "wav", "--out", "d"]).status.code(), Some(1));
    assert_eq!(ppgface(&["config", "show", "--threads", "0"]).status.code(), Some(1));
}

#[test]
fn every_emotion_name_is_accepted() {
    // Parsing succeeds for the four labels; the run then fails on the
    // missing model (exit 2), not on the argument (exit 1).
    for e in ["neutral", "angry", "happy", "sad"] {
        let o = ppgface(&["generate", "--fap-model", "/nonexistent.nnck", "--audio", "a.wav", "--emotion", e, "--out", "o"]);
        assert_eq!(o.status.code(), Some(2), "{e}");
    }
}

#[test]
fn config_show_and_bad_keys() {
    let o = ok(&["config", "show"]);
    let text = String::from_utf8(o.stdout).unwrap();
    for section in ["[corpus]", "[ppg]", "[ppg_train]", "[ppg_extend]", "[fap]", "[fap_train]", "[eval]"] {
        assert!(text.contains(section), "{section}");
    }
    let dir = tempfile::tempdir().unwrap();
    let shown = dir.path().join("shown.cfg");
    fs::write(&shown, &text).unwrap();
    let again = ok(&["config", "show", "--config", s(&shown)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "[fap]\nblstm_unitz = 3\n").unwrap();
    let o = ppgface(&["corpus", "gen", "--config", s(&bad), "--out", s(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("blstm_unitz") && err.contains("line 2"), "{err}");
}
