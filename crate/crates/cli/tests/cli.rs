use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_xnormaj");

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn idx(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend_from_slice(&d.to_be_bytes());
    }
    v.extend_from_slice(body);
    v
}

/// Four 8x8 glyphs (bars and a cross) with roughly 8% of pixels flipped,
/// written as IDX train and t10k files.
fn toy_digits(dir: &Path) {
    let glyph = |label: u8, y: usize, x: usize| match label {
        0 => (2..6).contains(&x),
        1 => (2..6).contains(&y),
        2 => x == y || x + y == 7 || x + 1 == y || y + 1 == x,
        _ => y < 4,
    };
    let mut state = 0x2545_f491u32;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        state
    };
    for (prefix, n) in [("train", 400u32), ("t10k", 100)] {
        let (mut images, mut labels) = (Vec::new(), Vec::new());
        for i in 0..n {
            let label = (i % 4) as u8;
            for y in 0..8 {
                for x in 0..8 {
                    let on = glyph(label, y, x) != (next() % 100 < 8);
                    images.push(if on { 255 } else { 0 });
                }
            }
            labels.push(label);
        }
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), idx(0x803, &[n, 8, 8], &images)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx(0x801, &[n], &labels)).unwrap();
    }
}

const TOY_NET: &str = "input = [8, 8, 1]\nlayer = [\n  { kind = \"fc\", cin = 64, cout = 32 },\n  { kind = \"fc\", cin = 32, cout = 10 },\n]\n";

struct Toy {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Toy {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::create_dir(root.join("data")).unwrap();
        toy_digits(&root.join("data"));
        fs::write(root.join("net.toml"), TOY_NET).unwrap();
        Toy { _dir: dir, root }
    }

    fn path(&self, rel: &str) -> String {
        self.root.join(rel).to_str().unwrap().to_string()
    }

    fn train(&self, out: &str, config: &str, seed: &str) -> Output {
        run(&[
            "train", "--net", &self.path("net.toml"), "--data", &self.path("data"), "--config", config, "--seed", seed,
            "--out", &self.path(out), "--epochs", "8", "--lr", "0.01", "--batch-size", "20",
        ])
    }
}

#[test]
fn train_and_eval_toy_majority_mlp() {
    let toy = Toy::new();
    let o = toy.train("ck", "MM", "3");
    assert!(o.status.success(), "{}", stderr(&o));
    let history = fs::read_to_string(toy.root.join("ck/history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_acc,val_acc");
    assert_eq!(lines.len(), 1 + 8);

    let eval = || run(&["eval", "--ckpt", &toy.path("ck"), "--data", &toy.path("data")]);
    let first = eval();
    assert!(first.status.success(), "{}", stderr(&first));
    let text = stdout(&first);
    let pct: f64 = text.trim_start_matches("error: ").split('%').next().unwrap().parse().unwrap();
    assert!(pct <= 10.0, "{text}");
    assert_eq!(stdout(&eval()), text);
}

#[test]
fn training_is_byte_deterministic() {
    let toy = Toy::new();
    assert!(toy.train("a", "MB", "9").status.success());
    assert!(toy.train("b", "MB", "9").status.success());
    let mut names: Vec<_> = fs::read_dir(toy.root.join("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 5);
    for name in names {
        assert_eq!(fs::read(toy.root.join("a").join(&name)).unwrap(), fs::read(toy.root.join("b").join(&name)).unwrap());
    }
}

#[test]
fn bad_config_string_exits_2_and_names_character() {
    let toy = Toy::new();
    let o = toy.train("ck", "MQ", "0");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'Q'"), "{}", stderr(&o));
    let o = run(&["estimate", "--net", repo_file("nets/cnv_p.toml").to_str().unwrap(), "--config", "BBBcB+B"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'c'"));
}

#[test]
fn eval_rejects_mismatched_data() {
    let toy = Toy::new();
    assert!(toy.train("ck", "BB", "0").status.success());
    let mnist = repo_file("data/mnist10k");
    let o = run(&["eval", "--ckpt", &toy.path("ck"), "--data", mnist.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("needs 64"), "{}", stderr(&o));
    let o = run(&["eval", "--ckpt", &toy.path("missing"), "--data", &toy.path("data")]);
    assert_eq!(o.status.code(), Some(1));
}

fn total_improvement(csv: &str) -> f64 {
    let total = csv.lines().find(|l| l.starts_with("TOTAL,")).unwrap();
    total.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn estimate_cnv_p() {
    let net = repo_file("nets/cnv_p.toml");
    let net = net.to_str().unwrap();
    let o = run(&["estimate", "--net", net, "--config", "MMMMM+M", "--device", "xilinx"]);
    assert!(o.status.success());
    let imp = total_improvement(&stdout(&o));
    assert!((20.0..=55.0).contains(&imp), "{imp}");
    let o = run(&["estimate", "--net", net, "--config", "BBBBB+B", "--device", "intel"]);
    assert_eq!(total_improvement(&stdout(&o)), 0.0);
    let o = run(&["estimate", "--net", net, "--device", "altera"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pareto_front_from_accuracy_table() {
    let dir = tempfile::tempdir().unwrap();
    let acc = dir.path().join("acc.csv");
    fs::write(&acc, "config,error_percent\nBBBBB+B,10.0\nMMMMM+M,12.0\nBMBBB+B,9.5\nMBBBB+B,13.0\n").unwrap();
    let net = repo_file("nets/cnv_p.toml");
    let o = run(&["pareto", "--net", net.to_str().unwrap(), "--acc", acc.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let configs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(text.lines().next().unwrap(), "config,luts,error_percent,on_front");
    assert!(configs.contains(&"MMMMM+M") && configs.contains(&"BMBBB+B"));
    assert!(!configs.contains(&"BBBBB+B") && !configs.contains(&"MBBBB+B"));
}

#[test]
fn emit_hdl_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.v"), dir.path().join("b.v"));
    for p in [&a, &b] {
        assert!(run(&["emit-hdl", "--unit", "maj:3", "--out", p.to_str().unwrap()]).status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let golden = fs::read_to_string(repo_file("crates/core/tests/golden/xnormaj3.v")).unwrap();
    assert_eq!(fs::read_to_string(&a).unwrap(), golden);
    let tree = run(&["emit-hdl", "--unit", "tree:8:1"]);
    assert!(stdout(&tree).starts_with("module popcount_tree_n8_w1"));
    assert_eq!(run(&["emit-hdl", "--unit", "maj:4"]).status.code(), Some(2));
    assert_eq!(run(&["emit-hdl", "--unit", "adder"]).status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let o = run(&["selfcheck", "--cases", "200"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("9/9 suites passed"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}
