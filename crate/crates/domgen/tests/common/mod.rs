#![allow(dead_code)]

use std::path::{Path, PathBuf};

use domgen::formats::dgim::{load_dgim, save_dgim};
use domgen::experiment::{DatasetId, DatasetSource, ExperimentConfig};
use domgen_core::data::LabeledImageSet;
use domgen_core::nn::TrainConfig;

pub fn data_dir() -> PathBuf {
    std::env::var_os("DOMGEN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn mnist_fixture() -> LabeledImageSet {
    load_dgim(&data_dir().join("mnist10k.dgim.gz")).expect("bundled MNIST fixture")
}

/// Writes two disjoint MNIST slices into `dir`: a source file and a stand-in
/// target file. Only the pipeline mechanics are under test here.
pub fn write_pair(dir: &Path, n_source: usize, n_target: usize) -> (PathBuf, PathBuf) {
    use rand::seq::SliceRandom;
    let all = mnist_fixture();
    // The fixture is stored sorted by digit.
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut domgen_core::rng::seeded(99));
    let src = all.subset(&order[..n_source]).unwrap();
    let tgt = all.subset(&order[n_source..n_source + n_target]).unwrap();
    let (sp, tp) = (dir.join("source.dgim"), dir.join("target.dgim"));
    save_dgim(&src, &sp).unwrap();
    save_dgim(&tgt, &tp).unwrap();
    (sp, tp)
}

/// A small, fast config: 1 epoch, few trees, short meta training.
pub fn small_config(dir: &Path, n_source: usize, n_target: usize) -> ExperimentConfig {
    let (sp, tp) = write_pair(dir, n_source, n_target);
    let mut cfg = ExperimentConfig::new(
        DatasetSource { id: DatasetId::Mnist, paths: vec![sp], limit: None },
        DatasetSource { id: DatasetId::Usps, paths: vec![tp], limit: None },
    );
    cfg.train = TrainConfig { epochs: 1, batch_size: 32, ..TrainConfig::default() };
    cfg.meta.epochs = 3;
    cfg.forest.n_trees = 5;
    cfg.linear.epochs = 2;
    cfg.output.dir = dir.join("out");
    cfg
}

use domgen::formats::dgck::Checkpoint;
use domgen_core::classical::{train_random_forest, ForestConfig, LinearKind, LinearModel};
use domgen_core::ensemble::{MetaKind, MetaModel};
use domgen_core::nn::{build_base_cnn, init_params};
use domgen_core::rng::Rng as CoreRng;
use domgen_core::Tensor;
use rand::Rng;

pub fn random_set(rng: &mut CoreRng) -> LabeledImageSet {
    let n = rng.random_range(1..40);
    let c = if rng.random_bool(0.5) { 1 } else { 3 };
    let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
    let k = rng.random_range(1..12);
    let pixels = (0..n * c * h * w).map(|_| rng.random()).collect();
    let labels = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
    let names = (0..k).map(|i| format!("class-{i}-{}", rng.random_range(0..1000))).collect();
    LabeledImageSet::new(c, h, w, pixels, labels, names).unwrap()
}

fn random_tensor(shape: &[usize], rng: &mut CoreRng) -> Tensor {
    let n = shape.iter().product();
    // Full bit patterns, NaN and infinities included, catch any lossy float path.
    Tensor::from_vec(shape, (0..n).map(|_| f32::from_bits(rng.random())).collect()).unwrap()
}

/// One checkpoint of every model kind.
pub fn random_checkpoints(rng: &mut CoreRng) -> Vec<Checkpoint> {
    let side = 4 * rng.random_range(2..6);
    let c = if rng.random_bool(0.5) { 1 } else { 3 };
    let k = rng.random_range(2..11);
    let spec = build_base_cnn([c, side, side], k).unwrap();
    let params = init_params(&spec, rng.random()).unwrap();
    let m = rng.random_range(1..6);
    let kind = if rng.random_bool(0.5) { MetaKind::Linear } else { MetaKind::Mlp { hidden: rng.random_range(1..40) } };
    let meta = MetaModel::init(kind, m, k, rng.random()).unwrap();
    let f = rng.random_range(1..30);
    let linear = LinearModel {
        kind: if rng.random_bool(0.5) { LinearKind::Svm } else { LinearKind::Logistic },
        weights: random_tensor(&[k, f], rng),
        bias: random_tensor(&[k], rng),
    };
    let n = rng.random_range(5..40);
    let x = Tensor::from_vec(&[n, f], (0..n * f).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..k as u8)).collect();
    let forest_cfg = ForestConfig { n_trees: rng.random_range(1..5), seed: rng.random(), ..ForestConfig::default() };
    let forest = train_random_forest(&x, &y, k, &forest_cfg).unwrap();
    vec![
        Checkpoint::from_cnn(&spec, &params).unwrap(),
        Checkpoint::from_meta(&meta),
        Checkpoint::from_linear(&linear),
        Checkpoint::from_forest(&forest),
    ]
}

/// Wrong magic, wrong version, every strict prefix and one trailing byte must all fail.
pub fn corruptions(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut magic = bytes.to_vec();
    magic[0] ^= 0xFF;
    out.push(magic);
    let mut version = bytes.to_vec();
    version[4] = version[4].wrapping_add(1);
    out.push(version);
    let step = (bytes.len() / 200).max(1);
    out.extend((0..bytes.len()).step_by(step).map(|cut| bytes[..cut].to_vec()));
    out.push(bytes[..bytes.len() - 1].to_vec());
    let mut long = bytes.to_vec();
    long.push(0);
    out.push(long);
    out
}

/// Bit-level equality, so NaN payloads count too.
pub fn same_bits(a: &Checkpoint, b: &Checkpoint) -> bool {
    a.descriptor == b.descriptor
        && a.tensors.len() == b.tensors.len()
        && a.tensors.iter().zip(&b.tensors).all(|(x, y)| {
            x.name == y.name
                && x.tensor.shape() == y.tensor.shape()
                && x.tensor.data().iter().zip(y.tensor.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}
