use std::path::Path;
use std::process::{Command, Output};

use cknn_core::embedstore::{load_embeddings, Format};
use cknn_core::textenc::VocabEmbeddings;
use cknn_core::triplet::{load_checkpoint, TripletConfig, TripletModel};

fn cknn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cknn")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn small_corpus(dir: &Path) -> String {
    let corpus = s(&dir.join("corpus"));
    let out = cknn(&["gen-synth", "--out", &corpus, "--classes", "10", "--items-per-class", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    corpus
}

#[test]
fn help_lists_defaults_for_every_command() {
    for cmd in ["gen-synth", "cknn-eval", "triplet-train", "triplet-eval", "grid", "encode-text", "train-awe"] {
        let out = cknn(&[cmd, "--help"]);
        assert_eq!(code(&out), 0, "{cmd}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--threads"), "{cmd}");
        if cmd != "grid" && cmd != "encode-text" {
            assert!(text.contains("[default:"), "{cmd}");
        }
    }
}

#[test]
fn bad_flags_exit_2_and_runtime_errors_exit_1() {
    let out = cknn(&["gen-synth"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(code(&cknn(&["cknn-eval", "--alpha", "abc"])), 2);
    assert_eq!(code(&cknn(&["no-such-command"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nothing"));
    assert_eq!(code(&cknn(&["cknn-eval", "--corpus", &missing])), 1);
}

#[test]
fn gen_synth_lists_the_corpus_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (s(&dir.path().join("a")), s(&dir.path().join("b")));
    let out = cknn(&["gen-synth", "--seed", "7", "--out", &a]);
    assert_eq!(code(&out), 0);
    let manifest = String::from_utf8_lossy(&out.stdout).into_owned();
    for f in ["train_images", "train_texts", "train_pairs", "test_images", "test_texts", "test_pairs", "truth"] {
        assert!(manifest.contains(f), "{f} missing from {manifest}");
    }
    assert_eq!(code(&cknn(&["gen-synth", "--seed", "7", "--out", &b])), 0);
    for line in manifest.lines() {
        let name = Path::new(line).file_name().unwrap();
        assert_eq!(std::fs::read(line).unwrap(), std::fs::read(Path::new(&b).join(name)).unwrap());
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# evaluation\nrepeats=2\nN=15\nks=1,5\ndedup_images=true\n").unwrap();
    let out = cknn(&["--config", &s(&cfg), "cknn-eval", "--corpus", &corpus, "--repeats", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("pool_size=15 repeats=3"), "{text}");
    assert!(text.contains("dedup_images=true"), "{text}");
    assert!(text.contains("R@5") && !text.contains("R@10"), "{text}");

    std::fs::write(&cfg, "repeats=2\nno_such_key=1\n").unwrap();
    let out = cknn(&["cknn-eval", "--config", &s(&cfg), "--corpus", &corpus]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-key"));
}

#[test]
fn zero_epoch_checkpoint_is_the_seeded_init_and_direction_flips() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let ckpt = s(&dir.path().join("init.tpl"));
    let out = cknn(&[
        "triplet-train", "--corpus", &corpus, "--epochs", "0", "--hidden-dim", "8", "--output-dim", "4",
        "--batch-size", "16", "--seed", "3", "--checkpoint", &ckpt,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = load_checkpoint(&ckpt).unwrap();
    let config = TripletConfig { hidden_dim: 8, output_dim: 4, batch_size: 16, epochs: 0, seed: 3, ..TripletConfig::default() };
    let init = TripletModel::init(128, 96, config).unwrap();
    assert_eq!(loaded.config, init.config);
    // The checkpoint stores f32.
    for (a, b) in loaded.image_tower.arrays().iter().zip(init.image_tower.arrays()) {
        assert!(a.iter().zip(b).all(|(x, y)| *x == (*y as f32) as f64));
    }
    for direction in ["text_to_image", "image_to_text"] {
        let out = cknn(&["triplet-eval", "--corpus", &corpus, "--checkpoint", &ckpt, "--N", "20", "--repeats", "2", "--direction", direction]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains(direction));
    }
}

#[test]
fn checkpoint_dimension_mismatch_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = small_corpus(dir.path());
    let other = s(&dir.path().join("other"));
    assert_eq!(code(&cknn(&["gen-synth", "--out", &other, "--classes", "10", "--items-per-class", "10", "--image-dim", "12"])), 0);
    let ckpt = s(&dir.path().join("m.tpl"));
    let train = cknn(&["triplet-train", "--corpus", &other, "--epochs", "0", "--hidden-dim", "8", "--output-dim", "4", "--batch-size", "16", "--checkpoint", &ckpt]);
    assert_eq!(code(&train), 0);
    let out = cknn(&["triplet-eval", "--corpus", &corpus, "--checkpoint", &ckpt, "--N", "20", "--repeats", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn encode_text_examples() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.txt");
    VocabEmbeddings::new(vec!["salt".into(), "pepper".into()], 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0])
        .unwrap()
        .save_text(&vocab)
        .unwrap();
    let docs = dir.path().join("docs.tsv");
    std::fs::write(&docs, "d1\tSalt\t\n").unwrap();
    let out_file = dir.path().join("one.emb");
    let out = cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "awe", "--vocab", &s(&vocab), "--out", &s(&out_file)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let set = load_embeddings(&out_file, Format::Binary).unwrap();
    assert_eq!(set.ids(), ["d1"]);
    assert_eq!(set.row(0), [1.0, 2.0, 3.0]);

    std::fs::write(&docs, "a\tsalt and pepper\tmore salt\nb\tsalt and pepper\tmore salt\nc\tonly\tunknown words\n").unwrap();
    let out = cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "awe", "--vocab", &s(&vocab), "--out", &s(&out_file)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("document `c`"));

    std::fs::write(&docs, "a\tsalt and pepper\tmore salt\nb\tsalt and pepper\tmore salt\nc\tpepper\tonly\n").unwrap();
    let out = cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "awe", "--vocab", &s(&vocab), "--out", &s(&out_file)]);
    assert_eq!(code(&out), 0);
    let set = load_embeddings(&out_file, Format::Binary).unwrap();
    assert_eq!(set.row(0), set.row(1));

    let out = cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "tfidf", "--out", &s(&out_file)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("not fitted"));

    let model = s(&dir.path().join("tfidf.bin"));
    let fit = cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "tfidf", "--fit-model", &model, "--reduced-dim", "2", "--out", &s(&out_file)]);
    assert_eq!(code(&fit), 0, "{}", String::from_utf8_lossy(&fit.stderr));
    let fitted = load_embeddings(&out_file, Format::Binary).unwrap();
    assert_eq!(fitted.row(0), fitted.row(1));
    let reuse = dir.path().join("again.emb");
    let out = cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "tfidf", "--model", &model, "--out", &s(&reuse)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&out_file).unwrap(), std::fs::read(&reuse).unwrap());

    assert_eq!(code(&cknn(&["encode-text", "--docs", &s(&docs), "--encoder", "awe", "--out", &s(&out_file)])), 2);
}
