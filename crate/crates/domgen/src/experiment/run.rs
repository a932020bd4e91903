//! The end-to-end protocol: base CNNs, fusion, the wide CNN and the classical
//! baselines, each evaluated on S_train, S_val and the target set T.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::time::Instant;

use domgen_core::augment::{assign_subsets, default_pool, Augmentation};
use domgen_core::classical::{
    linear_predict_proba, rf_predict_proba, train_linear_svm, train_logistic_regression, train_random_forest,
    ForestConfig, LinearConfig,
};
use domgen_core::data::{split, to_float, LabeledImageSet, SplitSpec};
use domgen_core::ensemble::{
    ensemble_average, ensemble_traditional, meta_predict, train_meta_linear, train_meta_mlp, BaseOutputs, MetaConfig,
    MetaModel,
};
use domgen_core::nn::{
    accuracy, build_base_cnn, build_hcnn, count_params, init_params, make_batch, train, CnnSpec, ModelParams, Network,
    TrainConfig, TrainHistory,
};
use domgen_core::rng::{derive_seed, seeded};
use domgen_core::Tensor;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{DatasetSource, ExperimentConfig, Learner};
use super::preprocess::{apply_preprocessing, resolve_preprocessing, DatasetId, Preprocessing};
use super::table::{compare_summary, emit_table, model_row_name, EnsembleSummary, ResultRow, ResultsTable, TableFormat};
use crate::error::{Error, Result};
use crate::formats::cifar::load_cifar10_binary;
use crate::formats::csv::{load_csv, CsvLayout};
use crate::formats::dgck::{save_checkpoint, Checkpoint};
use crate::formats::dgim::load_dgim;
use crate::formats::idx::load_idx;

// seed streams derived from the global seed
const STREAM_SOURCE: u64 = 1;
const STREAM_TARGET: u64 = 2;
const STREAM_SPLIT: u64 = 3;
const STREAM_SUBSETS: u64 = 4;
const STREAM_META_AUG: u64 = 5;
const STREAM_ENM: u64 = 6;
const STREAM_ENM2: u64 = 7;
const STREAM_HCNN: u64 = 8;
const STREAM_CLASSICAL_SAMPLE: u64 = 9;
const STREAM_RF: u64 = 10;
const STREAM_SVM: u64 = 11;
const STREAM_LR: u64 = 12;

const INFER_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Train everything serially on the calling thread.
    pub single_context: bool,
    /// Stage progress on stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelReport {
    pub name: String,
    pub seed: u64,
    pub param_count: usize,
    pub augmentations: Vec<Augmentation>,
    pub history: TrainHistory,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HcnnReport {
    pub width_scale: f32,
    pub param_count: usize,
    pub target_param_count: usize,
    /// `param_count / target_param_count`.
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SplitSizes {
    pub s_train: usize,
    pub s_val: usize,
    pub t: usize,
}

/// JSON sidecar written next to every results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetadata {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub single_context: bool,
    pub base_seeds: Vec<u64>,
    pub preprocessing: Option<Preprocessing>,
    pub class_names: Vec<String>,
    pub sizes: Option<SplitSizes>,
    pub base_param_count: Option<usize>,
    pub models: Vec<ModelReport>,
    pub hcnn: Option<HcnnReport>,
    /// Samples RF, SVM and LR were fitted on (their S_train column uses exactly these).
    pub classical_train_samples: Option<usize>,
    pub summary: Vec<EnsembleSummary>,
    pub completed_rows: Vec<String>,
    pub partial: bool,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub table: ResultsTable,
    pub metadata: RunMetadata,
    pub csv_path: PathBuf,
    pub markdown_path: PathBuf,
    pub metadata_path: PathBuf,
}

/// Stable within one build of the tool; identifies configs in metadata.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let mut h = DefaultHasher::new();
    serde_json::to_string(config).expect("config serialises").hash(&mut h);
    format!("{:016x}", h.finish())
}

/// Loads one side of the pair by file type, then draws its seeded subsample.
pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<LabeledImageSet> {
    let name = |p: &Path| p.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
    let paths = &source.paths;
    let first = name(&paths[0]);
    let set = if paths.len() == 1 && (first.ends_with(".dgim") || first.ends_with(".dgim.gz")) {
        load_dgim(&paths[0])?
    } else if paths.len() == 1 && (first.ends_with(".csv") || first.ends_with(".csv.gz")) {
        load_csv(&paths[0], &CsvLayout::default())?
    } else {
        match source.id {
            DatasetId::Mnist if paths.len() == 2 => load_idx(&paths[0], &paths[1])?,
            DatasetId::Cifar10 => load_cifar10_binary(paths)?,
            id => {
                return Err(Error::Config(format!(
                    "cannot read {id} from {paths:?}; convert it to DGIM first"
                )))
            }
        }
    };
    match source.limit {
        Some(n) if n < set.len() => Ok(set.sample(n, seed)?),
        _ => Ok(set),
    }
}

fn staged<T>(stage: &'static str, verbose: bool, f: impl FnOnce() -> Result<T>) -> Result<T> {
    if verbose {
        eprintln!("[domgen] {stage}");
    }
    f().map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

fn learner_rank(l: Learner) -> usize {
    Learner::ALL.iter().position(|&x| x == l).expect("listed learner")
}

struct Columns<'a> {
    sets: [&'a LabeledImageSet; 3],
}

impl Columns<'_> {
    fn accuracies(&self, probs: &[Tensor; 3]) -> Result<[f32; 3]> {
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = accuracy(&probs[c], self.sets[c].labels())?;
        }
        Ok(out)
    }
}

struct State {
    rows: Vec<((usize, usize), ResultRow)>,
    meta: RunMetadata,
    checkpoint_dir: Option<PathBuf>,
}

impl State {
    fn push(&mut self, key: (usize, usize), name: String, acc: [f32; 3]) {
        self.meta.completed_rows.push(name.clone());
        self.rows.push((
            key,
            ResultRow {
                name,
                s_train: acc[0],
                s_val: acc[1],
                t: acc[2],
            },
        ));
    }

    fn push_learner(&mut self, l: Learner, acc: [f32; 3]) {
        self.push((learner_rank(l), 0), l.row_name().to_string(), acc);
    }

    fn checkpoint(&self, file: &str, ck: impl FnOnce() -> Result<Checkpoint>) -> Result<()> {
        match &self.checkpoint_dir {
            Some(dir) => save_checkpoint(&ck()?, &dir.join(file)),
            None => Ok(()),
        }
    }

    fn table(&self) -> ResultsTable {
        let mut rows = self.rows.clone();
        rows.sort_by_key(|(k, _)| *k);
        ResultsTable {
            rows: rows.into_iter().map(|(_, r)| r).collect(),
        }
    }
}

fn map_models<T: Send>(
    single_context: bool,
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    if single_context {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

fn predict_columns(spec: &CnnSpec, params: &ModelParams, cols: &Columns<'_>) -> Result<[Tensor; 3]> {
    let net = Network::new(spec, params)?;
    Ok([
        net.predict_set(cols.sets[0])?,
        net.predict_set(cols.sets[1])?,
        net.predict_set(cols.sets[2])?,
    ])
}

fn features(set: &LabeledImageSet) -> Result<Tensor> {
    Ok(to_float(set).reshape(&[set.len(), set.image_len()])?)
}

/// Base outputs on one augmented pass over S_train; every base model sees the same images.
fn meta_training_outputs(
    spec: &CnnSpec,
    bases: &[ModelParams],
    s_train: &LabeledImageSet,
    pool: &[Augmentation],
    augment_prob: f64,
    seed: u64,
) -> Result<BaseOutputs> {
    let nets: Vec<Network<'_>> = bases.iter().map(|p| Network::new(spec, p)).collect::<domgen_core::Result<_>>()?;
    let mut rng = seeded(seed);
    let mut per_model: Vec<Vec<f32>> = vec![Vec::new(); nets.len()];
    let order: Vec<usize> = (0..s_train.len()).collect();
    for chunk in order.chunks(INFER_BATCH) {
        let batch = make_batch(s_train, chunk, pool, augment_prob, &mut rng)?;
        for (net, out) in nets.iter().zip(&mut per_model) {
            out.extend_from_slice(net.predict_proba(&batch)?.data());
        }
    }
    let k = spec.num_classes;
    let tables = per_model
        .into_iter()
        .map(|d| Tensor::from_vec(&[s_train.len(), k], d))
        .collect::<domgen_core::Result<Vec<_>>>()?;
    Ok(BaseOutputs::from_tables(tables)?)
}

fn pipeline(config: &ExperimentConfig, opts: &RunOptions, st: &mut State) -> Result<()> {
    let v = opts.verbose;
    let seed = config.seed;
    let (source, target) = staged("load", v, || {
        Ok((
            load_dataset(&config.source, derive_seed(seed, STREAM_SOURCE))?,
            load_dataset(&config.target, derive_seed(seed, STREAM_TARGET))?,
        ))
    })?;
    let (pre, pair) = staged("preprocess", v, || {
        let pre = resolve_preprocessing(config.source.id, config.target.id)?;
        let pair = apply_preprocessing(&pre, config.source.id, source, target)?;
        Ok((pre, pair))
    })?;
    st.meta.preprocessing = Some(pre);
    let (s_train, s_val) = staged("split", v, || {
        Ok(split(
            &pair.source,
            SplitSpec {
                val_fraction: config.val_fraction,
                seed: derive_seed(seed, STREAM_SPLIT),
            },
        )?)
    })?;
    let t_set = &pair.target;
    st.meta.class_names = s_train.class_names().to_vec();
    st.meta.sizes = Some(SplitSizes {
        s_train: s_train.len(),
        s_val: s_val.len(),
        t: t_set.len(),
    });
    let cols = Columns {
        sets: [&s_train, &s_val, t_set],
    };
    let k = s_train.num_classes();
    let shape = s_train.image_shape();
    let n = config.num_models.resolve(k);
    let base_seeds = staged("config", v, || config.base_seeds(n))?;
    st.meta.base_seeds = base_seeds.clone();
    let pool = config.augmentation_pool.clone().unwrap_or_else(|| default_pool(pre.kind));
    let base_spec = staged("architecture", v, || Ok(build_base_cnn(shape, k)?))?;
    let base_count = count_params(&base_spec)?;
    st.meta.base_param_count = Some(base_count);

    let enabled = |l| config.enabled(l);
    let need_bases = [Learner::Base, Learner::EnA, Learner::EnM, Learner::EnM2]
        .into_iter()
        .any(enabled);
    if need_bases {
        let plan = staged("augmentation", v, || {
            Ok(assign_subsets(&pool, n, derive_seed(seed, STREAM_SUBSETS))?)
        })?;
        let trained = staged("base", v, || {
            map_models(opts.single_context, n, |i| {
                let init = init_params(&base_spec, derive_seed(base_seeds[i], 0))?;
                let tc = TrainConfig {
                    seed: base_seeds[i],
                    ..config.train.clone()
                };
                let augs = plan.augmentations_for(i);
                let (params, history) = train(&base_spec, init, &s_train, Some(&s_val), &tc, &augs)?;
                if v {
                    let last = history.epochs[history.selected_epoch].val_accuracy.unwrap_or(0.0);
                    eprintln!("[domgen]   {} S_val {last:.3}", model_row_name(i));
                }
                Ok((params, history, augs))
            })
        })?;
        let mut bases = Vec::with_capacity(n);
        for (i, (params, history, augs)) in trained.into_iter().enumerate() {
            st.checkpoint(&format!("model_{}.dgck", i + 1), || Checkpoint::from_cnn(&base_spec, &params))?;
            st.meta.models.push(ModelReport {
                name: model_row_name(i),
                seed: base_seeds[i],
                param_count: base_count,
                augmentations: augs,
                history,
            });
            bases.push(params);
        }
        let outputs = staged("evaluate_bases", v, || {
            let per_model = map_models(opts.single_context, n, |i| predict_columns(&base_spec, &bases[i], &cols))?;
            let mut columns = Vec::with_capacity(3);
            for c in 0..3 {
                columns.push(BaseOutputs::from_tables(per_model.iter().map(|p| p[c].clone()).collect())?);
            }
            Ok((per_model, columns))
        })?;
        let (per_model, columns) = outputs;
        if enabled(Learner::Base) {
            for (i, probs) in per_model.iter().enumerate() {
                let acc = cols.accuracies(probs)?;
                st.push((0, i), model_row_name(i), acc);
            }
        }
        if enabled(Learner::EnA) {
            let probs = [0, 1, 2].map(|c| ensemble_average(&columns[c]));
            st.push_learner(Learner::EnA, cols.accuracies(&probs)?);
        }
        if enabled(Learner::EnM) || enabled(Learner::EnM2) {
            let meta_train = staged("meta_inputs", v, || {
                meta_training_outputs(
                    &base_spec,
                    &bases,
                    &s_train,
                    &pool,
                    config.train.augment_prob,
                    derive_seed(seed, STREAM_META_AUG),
                )
            })?;
            let fuse = |meta: &MetaModel| -> Result<[f32; 3]> {
                let probs = [
                    meta_predict(meta, &columns[0])?,
                    meta_predict(meta, &columns[1])?,
                    meta_predict(meta, &columns[2])?,
                ];
                cols.accuracies(&probs)
            };
            if enabled(Learner::EnM) {
                let meta = staged("enm", v, || {
                    let mc = MetaConfig {
                        seed: derive_seed(seed, STREAM_ENM),
                        ..config.meta.clone()
                    };
                    Ok(train_meta_linear(&meta_train, s_train.labels(), &mc)?)
                })?;
                st.checkpoint("enm.dgck", || Ok(Checkpoint::from_meta(&meta)))?;
                st.push_learner(Learner::EnM, fuse(&meta)?);
            }
            if enabled(Learner::EnM2) {
                let meta = staged("enm2", v, || {
                    let mc = MetaConfig {
                        seed: derive_seed(seed, STREAM_ENM2),
                        ..config.meta.clone()
                    };
                    Ok(train_meta_mlp(&meta_train, s_train.labels(), config.meta_hidden, &mc)?)
                })?;
                st.checkpoint("enm2.dgck", || Ok(Checkpoint::from_meta(&meta)))?;
                st.push_learner(Learner::EnM2, fuse(&meta)?);
            }
        }
    }

    if enabled(Learner::Hcnn) {
        let (spec, params) = staged("hcnn", v, || {
            let target_count = n * base_count;
            let spec = build_hcnn(shape, k, target_count)?;
            let count = count_params(&spec)?;
            st.meta.hcnn = Some(HcnnReport {
                width_scale: spec.width_scale,
                param_count: count,
                target_param_count: target_count,
                ratio: count as f64 / target_count as f64,
            });
            let hseed = derive_seed(seed, STREAM_HCNN);
            let init = init_params(&spec, derive_seed(hseed, 0))?;
            let tc = TrainConfig {
                seed: hseed,
                ..config.train.clone()
            };
            let (params, history) = train(&spec, init, &s_train, Some(&s_val), &tc, &pool)?;
            st.meta.models.push(ModelReport {
                name: "HCNN".into(),
                seed: hseed,
                param_count: count,
                augmentations: pool.clone(),
                history,
            });
            Ok((spec, params))
        })?;
        st.checkpoint("hcnn.dgck", || Checkpoint::from_cnn(&spec, &params))?;
        let probs = predict_columns(&spec, &params, &cols)?;
        st.push_learner(Learner::Hcnn, cols.accuracies(&probs)?);
    }

    let need_classical = [Learner::EnT, Learner::Rf, Learner::Svm, Learner::Lr]
        .into_iter()
        .any(enabled);
    if need_classical {
        let fit_set = match config.classical_limit {
            Some(m) if m < s_train.len() => s_train.sample(m, derive_seed(seed, STREAM_CLASSICAL_SAMPLE))?,
            _ => s_train.clone(),
        };
        st.meta.classical_train_samples = Some(fit_set.len());
        let classical_cols = Columns {
            sets: [&fit_set, &s_val, t_set],
        };
        let (rf, svm, lr) = staged("classical", v, || {
            let x = features(&fit_set)?;
            let y = fit_set.labels();
            let fc = ForestConfig {
                seed: derive_seed(seed, STREAM_RF),
                ..config.forest
            };
            let svm_c = LinearConfig {
                seed: derive_seed(seed, STREAM_SVM),
                ..config.linear
            };
            let lr_c = LinearConfig {
                seed: derive_seed(seed, STREAM_LR),
                ..config.linear
            };
            let fit_rf = || train_random_forest(&x, y, k, &fc);
            let fit_svm = || train_linear_svm(&x, y, k, &svm_c);
            let fit_lr = || train_logistic_regression(&x, y, k, &lr_c);
            let (rf, (svm, lr)) = if opts.single_context {
                (fit_rf(), (fit_svm(), fit_lr()))
            } else {
                rayon::join(fit_rf, || rayon::join(fit_svm, fit_lr))
            };
            Ok((rf?, svm?, lr?))
        })?;
        st.checkpoint("rf.dgck", || Ok(Checkpoint::from_forest(&rf)))?;
        st.checkpoint("svm.dgck", || Ok(Checkpoint::from_linear(&svm)))?;
        st.checkpoint("lr.dgck", || Ok(Checkpoint::from_linear(&lr)))?;
        let probs = staged("evaluate_classical", v, || {
            let mut out: Vec<[Tensor; 3]> = vec![];
            let xs = classical_cols
                .sets
                .iter()
                .map(|s| features(s))
                .collect::<Result<Vec<_>>>()?;
            out.push([
                rf_predict_proba(&rf, &xs[0])?,
                rf_predict_proba(&rf, &xs[1])?,
                rf_predict_proba(&rf, &xs[2])?,
            ]);
            for m in [&svm, &lr] {
                out.push([
                    linear_predict_proba(m, &xs[0])?,
                    linear_predict_proba(m, &xs[1])?,
                    linear_predict_proba(m, &xs[2])?,
                ]);
            }
            Ok(out)
        })?;
        if enabled(Learner::EnT) {
            let fused = [0, 1, 2].map(|c| ensemble_traditional(&probs[0][c], &probs[1][c], &probs[2][c]));
            let [a, b, c] = fused;
            st.push_learner(Learner::EnT, classical_cols.accuracies(&[a?, b?, c?])?);
        }
        for (l, p) in [Learner::Rf, Learner::Svm, Learner::Lr].into_iter().zip(&probs) {
            if enabled(l) {
                st.push_learner(l, classical_cols.accuracies(p)?);
            }
        }
    }
    Ok(())
}

/// Output file paths for a config: `<dir>/<name>.{csv,md,json}`.
pub fn output_paths(config: &ExperimentConfig) -> (PathBuf, PathBuf, PathBuf) {
    let dir = &config.output.dir;
    let name = &config.output.name;
    (
        dir.join(format!("{name}.csv")),
        dir.join(format!("{name}.md")),
        dir.join(format!("{name}.json")),
    )
}

/// Runs the whole protocol and writes the CSV, markdown and metadata files.
///
/// When a stage fails, the rows finished so far are still written (and listed
/// in the metadata) before the stage-tagged error is returned.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    config.validate()?;
    let started = Instant::now();
    let mut st = State {
        rows: Vec::new(),
        meta: RunMetadata {
            config: config.clone(),
            config_hash: config_hash(config),
            single_context: opts.single_context,
            base_seeds: Vec::new(),
            preprocessing: None,
            class_names: Vec::new(),
            sizes: None,
            base_param_count: None,
            models: Vec::new(),
            hcnn: None,
            classical_train_samples: None,
            summary: Vec::new(),
            completed_rows: Vec::new(),
            partial: false,
            failed_stage: None,
            error: None,
            wall_time_secs: 0.0,
        },
        checkpoint_dir: config.output.checkpoints.then(|| config.output.dir.join("checkpoints")),
    };
    let outcome = pipeline(config, opts, &mut st);
    let table = st.table();
    st.meta.summary = compare_summary(&table);
    st.meta.wall_time_secs = started.elapsed().as_secs_f64();
    if let Err(e) = &outcome {
        st.meta.partial = true;
        st.meta.failed_stage = e.stage().map(str::to_string);
        st.meta.error = Some(e.to_string());
    }
    let (csv_path, markdown_path, metadata_path) = output_paths(config);
    if !table.rows.is_empty() {
        emit_table(&table, TableFormat::Csv, &csv_path)?;
        emit_table(&table, TableFormat::Markdown, &markdown_path)?;
    }
    crate::formats::write_file(&metadata_path, serde_json::to_string_pretty(&st.meta)?.as_bytes())?;
    outcome?;
    Ok(RunOutput {
        table,
        metadata: st.meta,
        csv_path,
        markdown_path,
        metadata_path,
    })
}
