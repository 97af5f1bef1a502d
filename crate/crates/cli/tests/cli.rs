use std::path::Path;
use std::process::{Command, Output};

fn nvc(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_nvc")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(out.status.success(), "nvc {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_encode_decode_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    nvc(&["dataset", "--out", s(&data), "--count", "2", "--width", "64", "--height", "64", "--frames", "4", "--seed", "1"]);

    let sched = d.join("sched.csv");
    std::fs::write(&sched, "frames,scope,loss,lr,epochs\n2,inter,meD,0.0001,1\n2,recon,recRD,0.0001,1\n3,all,cascaded_all,0.00001,1\n").unwrap();
    let models = d.join("models");
    for l in ["0", "3"] {
        let ckpt = models.join(format!("lambda{l}.safetensors"));
        let o = nvc(&[
            "train", "--preset", "tiny", "--dataset", s(&data), "--lambda-index", l, "--out", s(&ckpt), "--schedule", s(&sched),
            "--steps-per-epoch", "1", "--clips", "4", "--clip-len", "3", "--flow-pretrain-steps", "1", "--intra-pretrain-steps", "2",
        ]);
        assert!(stdout(&o).contains("L_all"));
    }

    let stream = d.join("seq.nvc1");
    let recon = d.join("recon");
    let flow = d.join("flow");
    nvc(&[
        "encode", "--model", s(&models), "--lambda-index", "3", "--input", s(&data), "--sequence", "toy_000", "--output", s(&stream),
        "--intra-period", "2", "--recon", s(&recon), "--dump-flow", s(&flow),
    ]);
    assert_eq!(std::fs::read_dir(&flow).unwrap().count(), 3);
    let decoded = d.join("decoded");
    nvc(&["decode", "--model", s(&models), "--input", s(&stream), "--output", s(&decoded)]);
    for i in 0..4 {
        let name = format!("frame_{i:04}.png");
        assert_eq!(std::fs::read(recon.join(&name)).unwrap(), std::fs::read(decoded.join(&name)).unwrap(), "{name}");
    }

    let out = d.join("eval");
    nvc(&["eval", "--models", s(&models), "--dataset", s(&data), "--out", s(&out), "--intra-period", "2", "--frames", "4", "--workers", "2"]);
    let rd = out.join("rd.csv");
    let text = std::fs::read_to_string(&rd).unwrap();
    assert!(text.starts_with("sequence,lambda_index,bpp,psnr_rgb,psnr_yuv"));
    assert_eq!(text.lines().count(), 5);

    let ch = d.join("channels");
    let o = nvc(&["analyze-channels", "--model", s(&models.join("lambda0.safetensors")), "--dataset", s(&data), "--out", s(&ch), "--frames", "3"]);
    assert!(stdout(&o).contains("contextual"));
    assert!(ch.join("channels_motion.svg").exists());
}

#[test]
fn config_bdrate_and_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sweep = d.join("sweep");
    let o = nvc(&["config", "sweep", "--base", "tiny", "--axis", "ctx_ed", "--scales", "1,2", "--out", s(&sweep), "--count"]);
    assert_eq!(stdout(&o).lines().count(), 2);
    assert!(sweep.join("sweep.json").exists());
    nvc(&["config", "validate", s(&sweep.join("point_1.json"))]);

    let bad = d.join("bad.json");
    let text = std::fs::read_to_string(sweep.join("point_0.json")).unwrap().replacen("\"channels\": ", "\"channels\": 0, \"x\": ", 1);
    std::fs::write(&bad, text).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nvc")).args(["config", "validate", s(&bad)]).output().unwrap();
    assert!(!o.status.success());

    let anchor = d.join("anchor.csv");
    let test = d.join("test.csv");
    let mut a = String::from("sequence,lambda_index,bpp,psnr_rgb,psnr_yuv\n");
    let mut t = a.clone();
    for (i, (bpp, q)) in [(0.1, 30.0), (0.2, 33.0), (0.4, 36.0), (0.8, 39.0)].iter().enumerate() {
        a.push_str(&format!("s,{i},{bpp},{q},{q}\n"));
        t.push_str(&format!("s,{i},{},{q},{q}\n", bpp / 2.0));
    }
    std::fs::write(&anchor, a).unwrap();
    std::fs::write(&test, t).unwrap();
    let o = nvc(&["bdrate", s(&anchor), s(&test)]);
    assert!(stdout(&o).contains("mean\t-50.0000%"), "{}", stdout(&o));

    let vectors = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/vectors/reference_v1.json");
    let o = nvc(&["vectors", s(&vectors)]);
    assert!(stdout(&o).contains("format version 1"));
}
