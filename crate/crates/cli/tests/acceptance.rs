//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! `CURVGLYPH_DATA_DIR` points at the data root (default: `<workspace>/data`,
//! holding `mnist/` and `emnist/`). `CURVGLYPH_QUICK=1` skips the two
//! full-dataset reproductions.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use curvglyph::cache::FeatureSet;
use curvglyph::checkpoint::{load_checkpoint, save_checkpoint};
use curvglyph::features::{
    assemble_features, curvature_map, normalized_curvature, parametric_curvature,
    sobel_derivatives, ParametricCurve, DEFAULT_EPS, FEATURE_DIM,
};
use curvglyph::fixtures::{disc_boundary_band, random_glyph, render_disc};
use curvglyph::idx::{
    encode_idx_images, encode_idx_labels, load_dataset, parse_idx_images, parse_idx_labels,
    DatasetKind, GlyphImage, LabeledDataset, GLYPH_PIXELS,
};
use curvglyph::nn::gradcheck::check_gradients;
use curvglyph::nn::{Architecture, HiddenSpec, Mlp};
use curvglyph::pipeline::{self, resolve_dataset_dir};
use curvglyph::rng;
use curvglyph::split::{stratified_split, stratified_subset, SplitPlan};
use curvglyph::train::{train_with_progress, TrainConfig};
use ndarray::Array2;
use rand::Rng;

const SEED: u64 = 42;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("CURVGLYPH_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn quick() -> bool {
    std::env::var("CURVGLYPH_QUICK").is_ok_and(|v| v == "1")
}

fn load(kind: DatasetKind) -> Result<LabeledDataset, String> {
    load_dataset(kind, &resolve_dataset_dir(&data_root(), kind))
        .map_err(|e| format!("{} data unavailable: {e}", kind.name()))
}

fn reproduction(kind: DatasetKind, threshold: f64) -> Outcome {
    if quick() {
        return Skip("CURVGLYPH_QUICK=1".into());
    }
    if let Err(e) = load(kind) {
        return Fail(e);
    }
    let started = Instant::now();
    let (set, plan) = match pipeline::extract(kind, &data_root(), SEED) {
        Ok(v) => v,
        Err(e) => return Fail(e.to_string()),
    };
    let cfg = TrainConfig {
        seed: SEED,
        ..TrainConfig::default()
    };
    let model = Mlp::curvature_mlp(kind.num_classes(), SEED).expect("supported class count");
    let result = train_with_progress(model, set.features.view(), &set.labels, &plan, &cfg, |r| {
        eprintln!(
            "  {} epoch={} train_loss={:.4} val_acc={:.4} lr={:.4e}",
            kind.name(),
            r.epoch,
            r.train_loss,
            r.val_acc,
            r.lr
        )
    });
    let report = match result {
        Ok((_, report)) => report,
        Err(e) => return Fail(e.to_string()),
    };
    let top1 = report.test_accuracy.unwrap_or(0.0);
    check(
        top1 >= threshold,
        format!(
            "test top-1 {top1:.4} (need >= {threshold:.3}); {} epochs, best {}, {:.0}s",
            report.records.len(),
            report.best_epoch,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_1() -> Outcome {
    reproduction(DatasetKind::Mnist, 0.960)
}

fn criterion_2() -> Outcome {
    reproduction(DatasetKind::EmnistLetters, 0.875)
}

fn criterion_3() -> Outcome {
    let full = match load(DatasetKind::Mnist) {
        Ok(ds) => ds,
        Err(e) => return Fail(e),
    };
    let started = Instant::now();
    let keep = stratified_subset(full.labels(), 10, 10_000, SEED).expect("subset");
    let images = keep.iter().map(|&i| full.images()[i].clone()).collect();
    let labels = keep.iter().map(|&i| full.labels()[i]).collect();
    let subset = LabeledDataset::new(images, labels, 10, "mnist-smoke").expect("subset");
    let set = FeatureSet::extract(&subset);
    let split = stratified_split(&set.labels, 10, 0.1, 0.0, SEED).expect("split");
    let plan = SplitPlan {
        fit_indices: split.fit_indices,
        val_indices: split.test_indices,
        test_indices: Vec::new(),
        seed: SEED,
        val_stratified: true,
    };
    let cfg = TrainConfig {
        max_epochs: 10,
        seed: SEED,
        ..TrainConfig::default()
    };
    let model = Mlp::curvature_mlp(10, SEED).expect("10 classes");
    let (_, report) = match train_with_progress(model, set.features.view(), &set.labels, &plan, &cfg, |_| {}) {
        Ok(v) => v,
        Err(e) => return Fail(e.to_string()),
    };
    let secs = started.elapsed().as_secs_f64();
    let best = report.records.iter().map(|r| r.val_acc).fold(0.0, f64::max);
    check(
        best >= 0.85 && secs < 300.0 && report.records.len() <= 10,
        format!(
            "val top-1 {best:.4} (need >= 0.85) on {}/{} fit/val, {} epochs, {secs:.0}s (limit 300s)",
            plan.fit_indices.len(),
            plan.val_indices.len(),
            report.records.len()
        ),
    )
}

fn split_sizes(labels: &[u8], classes: usize) -> (usize, usize, usize) {
    let plan = stratified_split(labels, classes, pipeline::TEST_FRACTION, pipeline::VAL_FRACTION_OF_TRAIN, SEED)
        .expect("split");
    (plan.fit_indices.len(), plan.val_indices.len(), plan.test_indices.len())
}

fn criterion_4() -> Outcome {
    let mnist = match load(DatasetKind::Mnist) {
        Ok(ds) => split_sizes(ds.labels(), 10),
        Err(e) => return Fail(e),
    };
    // EMNIST Letters holds 5,600 glyphs per class; the split only sees labels.
    let (emnist, source) = match load(DatasetKind::EmnistLetters) {
        Ok(ds) => (split_sizes(ds.labels(), 26), "files"),
        Err(_) => {
            let labels: Vec<u8> = (0..26u8).flat_map(|c| std::iter::repeat_n(c, 5600)).collect();
            (split_sizes(&labels, 26), "26x5600 label histogram, files absent")
        }
    };
    check(
        mnist == (50_400, 5_600, 14_000) && emnist == (104_832, 11_648, 29_120),
        format!("mnist {mnist:?}, emnist-letters {emnist:?} ({source})"),
    )
}

fn random_case(seed: u64) -> (Mlp<f64>, Array2<f64>, Vec<usize>) {
    let mut r = rng::seeded(seed);
    let input_dim = r.random_range(2..=7);
    let hidden = (0..r.random_range(1..=3))
        .map(|_| HiddenSpec {
            units: r.random_range(2..=6),
            dropout: 0.5,
        })
        .collect();
    let num_classes = r.random_range(2..=5);
    let batch = r.random_range(2..=6);
    let mut model = Mlp::<f64>::new(
        Architecture {
            input_dim,
            hidden,
            num_classes,
        },
        seed,
    );
    for block in &mut model.blocks {
        block.norm.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
        block.norm.beta.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((batch, input_dim), |_| r.random_range(-1.0..1.0));
    let labels = (0..batch).map(|_| r.random_range(0..num_classes)).collect();
    (model, x, labels)
}

fn criterion_5() -> Outcome {
    let configs = 24;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..configs {
        let (model, x, labels) = random_case(1000 + seed);
        // Dense biases ahead of BatchNorm have an exactly zero gradient, so
        // the relative error needs an absolute floor above roundoff.
        let g = check_gradients(&model, x.view(), &labels, 1e-5, 1e-6).expect("gradient check");
        worst = worst.max(g.max_rel_err);
        checked += g.checked;
    }
    check(
        worst < 1e-4,
        format!("max rel err {worst:.3e} over {configs} configs, {checked} parameters (limit 1e-4)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_6() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for r in [5.0, 8.0, 10.0] {
        let circle = ParametricCurve::from_fn(2001, |t| (r * (TAU * t).cos(), r * (TAU * t).sin())).unwrap();
        let analytic_err = parametric_curvature(&circle)
            .unwrap()
            .iter()
            .map(|k| (k - 1.0 / r).abs())
            .fold(0.0, f64::max);
        let kappa = curvature_map(&sobel_derivatives(&render_disc(r, 14.0, 14.0)), DEFAULT_EPS);
        let band = disc_boundary_band(r, 14.0, 14.0, 1.0);
        let m = median(band.iter().map(|&i| kappa[i].abs()).collect());
        let rel = (m * r - 1.0).abs();
        ok &= analytic_err < 1e-3 && rel <= 0.25;
        notes.push(format!("r={r}: |k|med={m:.4} ({:+.1}%), analytic err {analytic_err:.1e}", 100.0 * (m * r - 1.0)));
    }
    let circle = ParametricCurve::from_fn(4001, |t| (3.0 * (TAU * t).cos(), 3.0 * (TAU * t).sin())).unwrap();
    let ellipse = ParametricCurve::from_fn(4001, |t| (3.0 * (TAU * t).cos(), 1.5 * (TAU * t).sin())).unwrap();
    let two_pi_err = normalized_curvature(&circle)
        .unwrap()
        .iter()
        .map(|k| (k - TAU).abs())
        .fold(0.0, f64::max);
    let mut invariance_err = 0.0f64;
    for curve in [&circle, &ellipse] {
        let k0 = normalized_curvature(curve).unwrap();
        for (scale, angle) in [(3.0, PI / 6.0), (0.25, -1.0)] {
            let k1 = normalized_curvature(&curve.transformed(scale, angle, 5.0, -3.0)).unwrap();
            for (a, b) in k0.iter().zip(&k1) {
                invariance_err = invariance_err.max((a - b).abs());
            }
        }
    }
    ok &= two_pi_err < 1e-3 && invariance_err < 1e-3;
    notes.push(format!("2pi err {two_pi_err:.1e}, similarity err {invariance_err:.1e}"));
    check(ok, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let mut bad = 0;
    for seed in 0..1000 {
        let maps = assemble_features(&random_glyph(seed));
        let valid = maps.flat().len() == FEATURE_DIM
            && maps.kappa_mag().iter().all(|v| (0.0..=1.0).contains(v))
            && maps.theta().iter().all(|v| (0.0..=1.0).contains(v))
            && maps.kappa_sign().iter().all(|&s| s == -1.0 || s == 0.0 || s == 1.0);
        bad += usize::from(!valid);
    }
    let constant = assemble_features(&GlyphImage::constant(0.6));
    let mut expected = vec![0.0f32; 2 * GLYPH_PIXELS];
    expected.extend(std::iter::repeat_n(0.5f32, GLYPH_PIXELS));
    let exact = constant.flat() == expected.as_slice();
    check(
        bad == 0 && exact,
        format!("{bad}/1000 random glyphs violate the contract; constant image exact: {exact}"),
    )
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    if let Err(e) = load(DatasetKind::Mnist) {
        return Fail(e);
    }
    let tmp = tempfile::tempdir().unwrap();
    let root = data_root();
    let run = |tag: &str| -> Result<PathBuf, String> {
        let features = tmp.path().join(format!("{tag}.cgf"));
        let ck = tmp.path().join(format!("{tag}_ck"));
        let steps: [Vec<&str>; 2] = [
            vec!["extract", "--dataset", "mnist", "--data-dir", root.to_str().unwrap(), "--subset", "3000", "--seed", "7", "--out", features.to_str().unwrap()],
            vec!["train", "--features", features.to_str().unwrap(), "--out", ck.to_str().unwrap(), "--seed", "7", "--max-epochs", "3", "--deterministic"],
        ];
        for args in steps {
            let out = Command::new(env!("CARGO_BIN_EXE_curvglyph")).args(&args).output().unwrap();
            if !out.status.success() {
                return Err(String::from_utf8_lossy(&out.stderr).into_owned());
            }
        }
        Ok(features)
    };
    let (a, b) = match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Fail(e),
    };
    let same_features = fs::read(&a).unwrap() == fs::read(&b).unwrap()
        && fs::read(pipeline::split_path(&a)).unwrap() == fs::read(pipeline::split_path(&b)).unwrap();
    let ck_a = dir_bytes(&tmp.path().join("a_ck"));
    let ck_b = dir_bytes(&tmp.path().join("b_ck"));
    let has_report = ck_a.iter().any(|(n, _)| n == "report.jsonl") && ck_a.iter().any(|(n, _)| n == "summary.json");
    check(
        same_features && has_report && ck_a == ck_b,
        format!(
            "features+split identical: {same_features}; {} checkpoint files incl. report identical: {}",
            ck_a.len(),
            ck_a == ck_b
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut notes = Vec::new();
    let mut r = rng::seeded(9);
    let images: Vec<GlyphImage> = (0..50)
        .map(|i| GlyphImage::new((0..GLYPH_PIXELS).map(|_| f32::from(r.random::<u8>()) / 255.0).collect(), i).unwrap())
        .collect();
    let labels: Vec<u8> = (0..50).map(|_| r.random()).collect();
    let enc = encode_idx_images(&images);
    let lab = encode_idx_labels(&labels);
    let mut ok = encode_idx_images(&parse_idx_images(&enc).unwrap()) == enc
        && parse_idx_labels(&lab).unwrap() == labels;
    notes.push(format!("synthetic idx: {ok}"));

    let test_images = resolve_dataset_dir(&data_root(), DatasetKind::Mnist).join("t10k-images-idx3-ubyte");
    if let Ok(raw) = fs::read(&test_images) {
        let same = encode_idx_images(&parse_idx_images(&raw).unwrap()) == raw;
        ok &= same;
        notes.push(format!("mnist t10k re-encode: {same}"));
    }

    let mut model = Mlp::<f32>::curvature_mlp(26, 5).unwrap();
    for block in &mut model.blocks {
        block.norm.running_mean.mapv_inplace(|_| r.random_range(-1.0..1.0));
        block.norm.running_var.mapv_inplace(|_| r.random_range(0.1..2.0));
        block.norm.gamma.mapv_inplace(|_| r.random_range(0.5..1.5));
    }
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&model, None, &tmp.path().join("a")).unwrap();
    let loaded = load_checkpoint(&tmp.path().join("a")).unwrap();
    save_checkpoint(&loaded, None, &tmp.path().join("b")).unwrap();
    let bits = |m: &Mlp<f32>| -> Vec<u32> {
        let mut v: Vec<u32> = m.params().iter().flat_map(|s| s.iter().map(|x| x.to_bits())).collect();
        for b in &m.blocks {
            v.extend(b.norm.running_mean.iter().chain(&b.norm.running_var).map(|x| x.to_bits()));
        }
        v
    };
    let ck_same = bits(&model) == bits(&loaded)
        && dir_bytes(&tmp.path().join("a")) == dir_bytes(&tmp.path().join("b"));
    ok &= ck_same;
    notes.push(format!("checkpoint: {ck_same}"));
    check(ok, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 MNIST reproduction", criterion_1),
        ("2 EMNIST Letters reproduction", criterion_2),
        ("3 smoke gate", criterion_3),
        ("4 split sizes", criterion_4),
        ("5 gradient oracle", criterion_5),
        ("6 curvature oracle", criterion_6),
        ("7 feature contract", criterion_7),
        ("8 determinism", criterion_8),
        ("9 round trips", criterion_9),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Fail(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {name}: {detail}");
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all evaluated criteria passed");
        ExitCode::SUCCESS
    }
}
