//! Generation, training and evaluation steps shared by the CLI and tests.

use probe_core::dataset::{curate, curate_to_target, roll_with, CurationReport, Dataset, Trajectory};
use probe_core::eval::{evaluate_with, movable_iou, oracle_outputs, split_heldout, Baseline, Evaluation};
use probe_core::model::{
    build_examples, forward, train_orm_until, Example, Normalizer, OrmConfig, OrmParams, TrainState,
};
use probe_core::policy::NavPolicy;
use probe_core::proprio::ProprioModel;
use probe_core::rng::{derive_seed, Stream};
use probe_core::worldsim::{spawn_scene, Category};

use crate::config::RunConfig;
use crate::io::Predictor;
use crate::Error;

/// Seed of episode `index` within `category`.
pub fn episode_seed(master: u64, category: Category, index: u64) -> u64 {
    derive_seed(derive_seed(master, 0x100 + category as u64), index)
}

pub fn roll_pool(cfg: &RunConfig, category: Category, first_id: u64) -> Result<Vec<Trajectory>, Error> {
    let proprio = ProprioModel::new(cfg.gait.clone(), cfg.noise);
    let mut pool = Vec::with_capacity(cfg.episodes);
    for i in 0..cfg.episodes {
        let variant = cfg.policies[i % cfg.policies.len()];
        let seed = episode_seed(cfg.seed, category, i as u64);
        let world =
            spawn_scene(category, derive_seed(seed, Stream::Scene as u64)).map_err(|e| Error::Generation(e.into()))?;
        let mut t = roll_with(world, category, NavPolicy::new(variant, seed), seed, &proprio).subsample(cfg.stride);
        t.episode = first_id + i as u64;
        pool.push(t);
    }
    Ok(pool)
}

pub struct Generated {
    pub dataset: Dataset,
    pub reports: Vec<(Category, CurationReport)>,
}

/// Rolls `cfg.episodes` per category, curates each category separately and
/// concatenates the survivors. Episode ids are unique across categories.
pub fn generate(cfg: &RunConfig) -> Result<Generated, Error> {
    cfg.validate()?;
    let mut trajectories = Vec::new();
    let mut reports = Vec::new();
    for (k, &category) in cfg.categories.iter().enumerate() {
        let pool = roll_pool(cfg, category, (k * cfg.episodes) as u64)?;
        let seed = derive_seed(cfg.seed, 0x200 + category as u64);
        let (kept, report) = match (cfg.curation.cap_per_mode, cfg.curation.target) {
            (Some(cap), _) => curate(pool, cap, seed),
            (None, Some(target)) => curate_to_target(pool, target, seed),
            (None, None) => {
                let n = pool.len();
                curate(pool, n, seed)
            }
        };
        trajectories.extend(kept);
        reports.push((category, report));
    }
    Ok(Generated { dataset: Dataset { stride: cfg.stride, trajectories }, reports })
}

pub fn curation_text(reports: &[(Category, CurationReport)]) -> String {
    let mut s = String::new();
    for (category, r) in reports {
        s.push_str(&format!("[{}]\n{}\n", category.name(), r.to_table()));
    }
    s
}

/// `(train, heldout)` copies of the dataset's trajectories.
pub fn split(dataset: &Dataset, seed: u64) -> (Vec<Trajectory>, Vec<Trajectory>) {
    split_heldout(dataset.trajectories.clone(), seed)
}

/// Trains from scratch, or continues `resume`, until `stop` (at most
/// `config.epochs`) epochs are done. `after_epoch` sees the state after
/// every epoch, e.g. to save it.
pub fn train(
    config: &OrmConfig,
    train: &[Trajectory],
    heldout: &[Trajectory],
    resume: Option<TrainState>,
    stop: Option<usize>,
    after_epoch: &mut dyn FnMut(&TrainState) -> Result<(), Error>,
) -> Result<TrainState, Error> {
    let train_ex = build_examples(train, config.max_tokens)?;
    let test_ex = build_examples(heldout, config.max_tokens)?;
    let mut state = match resume {
        Some(mut s) => {
            let mut expected = s.params.config.clone();
            expected.epochs = config.epochs;
            if expected != *config {
                return Err(Error::Config("checkpoint was trained with a different model config".into()));
            }
            s.params.config.epochs = config.epochs;
            s
        }
        None => TrainState::new(OrmParams::init(config, Normalizer::fit(&train_ex))?),
    };
    let stop = stop.unwrap_or(config.epochs).min(config.epochs);
    let mut monitor = |p: &OrmParams| movable_iou(p, heldout, &test_ex);
    while state.epochs_done < stop {
        let next = state.epochs_done + 1;
        state = train_orm_until(state, &train_ex, &mut monitor, next)?;
        after_epoch(&state)?;
    }
    Ok(state)
}

impl Predictor {
    pub fn max_tokens(&self) -> usize {
        match self {
            Predictor::Orm(s) => s.params.config.max_tokens,
            Predictor::Oracle => usize::MAX,
        }
    }

    /// Raw outputs for every token of `example`.
    pub fn outputs(&self, example: &Example) -> Vec<f64> {
        match self {
            Predictor::Orm(s) => forward(&s.params, &example.features, example.len).out,
            Predictor::Oracle => oracle_outputs(example),
        }
    }
}

/// Evaluation of `predictor` on the held-out part of `dataset`; the
/// baseline is fitted on the remaining part.
pub fn evaluate_split(
    predictor: &Predictor,
    dataset: &Dataset,
    split_seed: u64,
) -> Result<(Evaluation, usize, usize), Error> {
    let (train, heldout) = split(dataset, split_seed);
    if heldout.is_empty() {
        return Err(Error::Check(format!(
            "the held-out split of {} trajectories is empty (split seed {split_seed})",
            dataset.trajectories.len()
        )));
    }
    let max = predictor.max_tokens();
    let train_ex = build_examples(&train, max)?;
    let test_ex = build_examples(&heldout, max)?;
    let baseline = Baseline::fit(&train, &train_ex);
    let evaluation = evaluate_with(&mut |ex| predictor.outputs(ex), &heldout, &test_ex, baseline.as_ref());
    Ok((evaluation, train.len(), heldout.len()))
}
