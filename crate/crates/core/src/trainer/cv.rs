use std::collections::BTreeMap;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cohort::{stratified_kfold, Cohort, FoldPlan, TabularTransform};
use crate::diffcore::{Graph, NodeId, Tensor};
use crate::encoder::block_batch;
use crate::error::{Error, Result};
use crate::fusion::{
    encoder_prefix, load_transforms, store_transforms, unimodal_prefix, FusionMode, FusionModel, ModelSpec,
    PreparedCohort, ENCODER_PREFIX, FUSED_PREFIX,
};
use crate::metrics::{mean_sem, MetricsReport};
use crate::odst::OdstHead;
use crate::params::{Binder, ParamStore};

use super::train::{train_stage, EpochRecord, Outcomes, Stage};
use super::TrainConfig;

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub report: MetricsReport,
    pub test_rows: Vec<usize>,
    pub test_scores: Vec<f64>,
    /// Parameters of the configured model, preprocessing statistics included.
    pub model: ParamStore,
    /// Pretrained unimodal models, one per modality (empty for linear CPH).
    pub unimodal: BTreeMap<String, ParamStore>,
    pub transforms: BTreeMap<String, TabularTransform>,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledScore {
    pub id: String,
    pub fold: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
}

impl CvResult {
    fn summarize(&self, f: impl Fn(&MetricsReport) -> f64) -> MetricSummary {
        let v: Vec<f64> = self.folds.iter().map(|r| f(&r.report)).collect();
        let (mean, sem) = mean_sem(&v);
        MetricSummary { mean, sem }
    }

    pub fn harrell_c(&self) -> MetricSummary {
        self.summarize(|r| r.harrell_c)
    }

    pub fn uno_c(&self) -> MetricSummary {
        self.summarize(|r| r.uno_c)
    }

    pub fn td_auc(&self) -> MetricSummary {
        self.summarize(|r| r.td_auc_mean)
    }

    /// Test-fold scores of every patient, in cohort order.
    pub fn pooled(&self, cohort: &Cohort) -> Vec<PooledScore> {
        let mut out: Vec<PooledScore> = self
            .folds
            .iter()
            .flat_map(|f| {
                f.test_rows.iter().zip(&f.test_scores).map(move |(&i, &s)| (i, f.fold, s))
            })
            .map(|(i, fold, score)| PooledScore {
                id: cohort.ids()[i].clone(),
                fold,
                score,
            })
            .collect();
        let pos: BTreeMap<&str, usize> = cohort.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        out.sort_by_key(|p| pos[p.id.as_str()]);
        out
    }
}

/// Stratified k-fold CV of `spec` on `cohort`, with up to `jobs` folds in
/// flight. Results come back ordered by fold.
pub fn run_cv(cohort: &Cohort, spec: &ModelSpec, cfg: &TrainConfig, k: usize, jobs: usize) -> Result<CvResult> {
    spec.validate()?;
    cfg.validate()?;
    let plan = stratified_kfold(cohort, k, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let folds: Vec<Result<FoldResult>> =
        pool.install(|| (0..k).into_par_iter().map(|r| train_fold(cohort, spec, &plan, r, cfg)).collect());
    let folds = folds.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CvResult { plan, folds })
}

struct Rows {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

/// Trains and evaluates rotation `r` of `plan`.
pub fn train_fold(cohort: &Cohort, spec: &ModelSpec, plan: &FoldPlan, r: usize, cfg: &TrainConfig) -> Result<FoldResult> {
    let roles = plan.roles(r);
    let rows = Rows {
        train: plan.members_of(&roles.train),
        val: plan.fold_members(roles.validation),
        test: plan.fold_members(roles.test),
    };
    let with_fold = |e: Error| match e {
        Error::Config(m) => Error::Config(format!("fold {}: {m}", roles.test)),
        Error::Contract(m) => Error::Contract(format!("fold {}: {m}", roles.test)),
        other => other,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, roles.test as u64));
    fit_fold(cohort, spec, &rows, cfg, &mut rng, roles.test).map_err(with_fold)
}

fn fit_fold(
    cohort: &Cohort,
    spec: &ModelSpec,
    rows: &Rows,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    fold: usize,
) -> Result<FoldResult> {
    let prepared = PreparedCohort::fit(cohort, spec, &rows.train)?;
    let data = &prepared.cohort;
    let model = FusionModel::new(spec.clone(), data)?;
    let outcomes = Outcomes {
        times: data.times(),
        events: data.events(),
    };
    let mut log = Vec::new();
    let mut unimodal = BTreeMap::new();

    let mut store = if spec.mode == FusionMode::LinearCph {
        let mut store = ParamStore::new();
        model.init_linear(&mut store, rng)?;
        let stage = LinearStage { model: &model, data };
        log.extend(train_stage(&stage, &mut store, outcomes, &rows.train, &rows.val, cfg, rng)?.log);
        store
    } else {
        for m in model.modalities() {
            let present = |v: &[usize]| -> Vec<usize> {
                let b = data.block(m).expect("configured block");
                v.iter().copied().filter(|&i| b.is_present(i)).collect()
            };
            let (train, val) = (present(&rows.train), present(&rows.val));
            let mut store = ParamStore::new();
            model.init_unimodal(m, &mut store, rng)?;
            let (x, observed) = block_batch(data.require_block(m)?, &train)?;
            let h = model.encoder(m)?.encode_batch(&store, &x, &observed)?;
            model.unimodal_head(m)?.init_thresholds(&mut store, &h, rng)?;
            let stage = UnimodalStage { model: &model, data, modality: m };
            let out = train_stage(&stage, &mut store, outcomes, &train, &val, cfg, rng)?;
            info!("fold {fold} {m}: best val {:.4} at epoch {}", out.best_val, out.best_epoch);
            log.extend(out.log);
            let mut one = BTreeMap::new();
            one.insert(m.clone(), prepared.transforms[m].clone());
            store_transforms(&one, &mut store);
            unimodal.insert(m.clone(), store);
        }
        let mut store = ParamStore::new();
        for (m, s) in &unimodal {
            let keep = matches!(spec.mode, FusionMode::Unimodal | FusionMode::Late);
            for (name, p) in s.iter() {
                if name.starts_with(&encoder_prefix(m)) || (keep && name.starts_with(&unimodal_prefix(m))) {
                    let trainable = p.trainable && spec.mode != FusionMode::Early;
                    store.insert(name, p.value.clone(), trainable);
                }
            }
        }
        match spec.mode {
            FusionMode::Early => {
                let all: Vec<usize> = (0..data.len()).collect();
                let h = model.encode_rows(&store, data, &all)?;
                model.init_fused(&mut store, rng)?;
                let head = model.fused_head()?;
                head.init_thresholds(&mut store, &gather_rows(&h, &rows.train)?, rng)?;
                let stage = CachedHeadStage { name: "early", head, h: &h };
                log.extend(train_stage(&stage, &mut store, outcomes, &rows.train, &rows.val, cfg, rng)?.log);
            }
            FusionMode::Intermediate => {
                // Fit the fresh head on the pretrained representations first
                // so joint updates start from a useful head instead of
                // pushing random-head gradients into the encoders.
                let all: Vec<usize> = (0..data.len()).collect();
                let h = model.encode_rows(&store, data, &all)?;
                model.init_fused(&mut store, rng)?;
                let head = model.fused_head()?;
                head.init_thresholds(&mut store, &gather_rows(&h, &rows.train)?, rng)?;
                let warm = CachedHeadStage { name: "head", head, h: &h };
                log.extend(train_stage(&warm, &mut store, outcomes, &rows.train, &rows.val, cfg, rng)?.log);
                let stage = JointStage {
                    model: &model,
                    data,
                    encoder_factor: cfg.encoder_lr_factor,
                };
                log.extend(train_stage(&stage, &mut store, outcomes, &rows.train, &rows.val, cfg, rng)?.log);
            }
            _ => {}
        }
        store
    };
    store_transforms(&prepared.transforms, &mut store);

    let test_scores = model.score(&store, data, &rows.test)?;
    let (t, e): (Vec<f64>, Vec<bool>) = rows.test.iter().map(|&i| (data.times()[i], data.events()[i])).unzip();
    let report = MetricsReport::compute(Some(fold), &test_scores, &t, &e)?;
    info!("fold {fold}: {} harrell {:.4} uno {:.4}", spec.mode, report.harrell_c, report.uno_c);
    Ok(FoldResult {
        fold,
        report,
        test_rows: rows.test.clone(),
        test_scores,
        model: store,
        unimodal,
        transforms: prepared.transforms,
        log,
    })
}

/// Scores `rows` of a raw cohort with a stored model, reapplying the
/// checkpoint's own preprocessing.
pub fn score_checkpoint(spec: &ModelSpec, store: &ParamStore, cohort: &Cohort, rows: &[usize]) -> Result<Vec<f64>> {
    let transforms = load_transforms(store, &spec.modalities)?;
    let prepared = PreparedCohort::apply(cohort, transforms)?;
    let model = FusionModel::new(spec.clone(), &prepared.cohort)?;
    model.score(store, &prepared.cohort, rows)
}

fn gather_rows(t: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows.len() * t.cols());
    for &i in rows {
        data.extend_from_slice(t.row(i));
    }
    Tensor::new([rows.len(), t.cols()], data)
}

struct UnimodalStage<'a> {
    model: &'a FusionModel,
    data: &'a Cohort,
    modality: &'a str,
}

impl Stage for UnimodalStage<'_> {
    fn name(&self) -> &str {
        self.modality
    }

    fn forward(&self, g: &mut Graph, p: &mut Binder, rows: &[usize]) -> Result<NodeId> {
        let (values, observed) = block_batch(self.data.require_block(self.modality)?, rows)?;
        let v = g.constant(values);
        self.model.unimodal_forward(g, p, self.modality, v, &observed)
    }

    fn score(&self, store: &ParamStore, rows: &[usize]) -> Result<Vec<f64>> {
        self.model.unimodal_scores(store, self.modality, self.data, rows)
    }
}

/// Fused head over precomputed representations of every cohort row.
struct CachedHeadStage<'a> {
    name: &'static str,
    head: &'a OdstHead,
    h: &'a Tensor,
}

impl Stage for CachedHeadStage<'_> {
    fn name(&self) -> &str {
        self.name
    }

    fn forward(&self, g: &mut Graph, p: &mut Binder, rows: &[usize]) -> Result<NodeId> {
        let x = g.constant(gather_rows(self.h, rows)?);
        self.head.forward(g, p, x)
    }

    fn score(&self, store: &ParamStore, rows: &[usize]) -> Result<Vec<f64>> {
        self.head.predict(store, &gather_rows(self.h, rows)?)
    }
}

struct JointStage<'a> {
    model: &'a FusionModel,
    data: &'a Cohort,
    encoder_factor: f64,
}

impl Stage for JointStage<'_> {
    fn name(&self) -> &str {
        "intermediate"
    }

    fn forward(&self, g: &mut Graph, p: &mut Binder, rows: &[usize]) -> Result<NodeId> {
        let inputs = self.model.batch_inputs(g, self.data, rows)?;
        self.model.forward_fused(g, p, &inputs)
    }

    fn score(&self, store: &ParamStore, rows: &[usize]) -> Result<Vec<f64>> {
        self.model.score(store, self.data, rows)
    }

    fn lr_factor(&self, name: &str) -> f64 {
        if name.starts_with(ENCODER_PREFIX) {
            self.encoder_factor
        } else {
            debug_assert!(name.starts_with(FUSED_PREFIX));
            1.0
        }
    }
}

struct LinearStage<'a> {
    model: &'a FusionModel,
    data: &'a Cohort,
}

impl Stage for LinearStage<'_> {
    fn name(&self) -> &str {
        "linear-cph"
    }

    fn forward(&self, g: &mut Graph, p: &mut Binder, rows: &[usize]) -> Result<NodeId> {
        let (values, _) = block_batch(self.data.require_block(&self.model.modalities()[0])?, rows)?;
        let v = g.constant(values);
        self.model.linear_forward(g, p, v)
    }

    fn score(&self, store: &ParamStore, rows: &[usize]) -> Result<Vec<f64>> {
        self.model.score(store, self.data, rows)
    }
}
