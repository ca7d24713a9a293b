//! Teacher-forced SGD over gold node sequences, with dev-F1 model selection.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::composer::{Arena, Mode, NodeGrads};
use crate::decoder::TagLattice;
use crate::ensemble_eval::evalb_f1;
use crate::error::{Error, Result};
use crate::greedy_parser::parse;
use crate::nncore::{ModelDims, ModelParams, ParamGrads, Precision};
use crate::tagger::{score_sequence, tagger_backward};
use crate::tree::ParseTree;
use crate::treebank::{extract_gold_sequences, GoldSequence, DEFAULT_MERGE_THRESHOLD};
use crate::vocab::TagSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub p_drop: f64,
    pub dims: ModelDims,
    pub merge_threshold: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.15,
            p_drop: 0.25,
            dims: ModelDims::default(),
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            max_epochs: 30,
            patience: 5,
            seed: 1,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.p_drop)));
        }
        if !self.base_lr.is_finite() || self.base_lr < 0.0 {
            return Err(Error::InvalidConfig(format!("learning rate {}", self.base_lr)));
        }
        Ok(())
    }

    /// Fresh parameters for `tagset`, drawn from `rng`.
    pub fn init_params<R: Rng>(&self, tagset: &TagSet, rng: &mut R) -> Result<ModelParams> {
        self.validate()?;
        let mut params = ModelParams::init(
            self.dims,
            tagset.num_words(),
            tagset.num_tag_entries(),
            tagset.num_bioes(),
            rng,
        )?;
        params.p_drop = self.p_drop;
        Ok(params)
    }
}

/// Negative log-likelihood of one gold sequence and its gradient on every
/// parameter. `seed` drives the dropout masks in train mode.
pub fn sequence_loss_grad(
    seq: &GoldSequence,
    params: &ModelParams,
    tagset: &TagSet,
    mode: Mode,
    seed: u64,
) -> Result<(f64, ParamGrads)> {
    let mut arena = Arena::new(mode, params.p_drop, seed);
    let ids = seq
        .inputs
        .iter()
        .map(|t| arena.compose_tree(t, params, tagset))
        .collect::<Result<Vec<_>>>()?;
    let slots: Vec<Vec<f64>> = ids.iter().map(|&id| arena.slot(id)).collect();
    let table = score_sequence(&slots, params)?;
    let gold = seq
        .targets
        .iter()
        .map(|t| tagset.bioes_index(t))
        .collect::<Result<Vec<_>>>()?;
    let lattice = TagLattice::new(table.scores.clone(), tagset.num_labels())?;
    let (nll, grad_scores) = lattice.sequence_nll_grad(&gold)?;

    let mut grads = ParamGrads::zeros(params);
    let slot_grads = tagger_backward(&table, &grad_scores, params, &mut grads)?;
    let mut node_grads = NodeGrads::new(arena.len(), params);
    for (&id, g) in ids.iter().zip(&slot_grads) {
        node_grads.add_slot(id, g);
    }
    arena.backward(params, &mut node_grads, &mut grads)?;
    Ok((nll, grads))
}

/// One SGD step on one gold sequence; returns the loss before the update.
pub fn train_step<R: Rng>(
    seq: &GoldSequence,
    params: &mut ModelParams,
    tagset: &TagSet,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let mode = if params.p_drop > 0.0 { Mode::Train } else { Mode::Eval };
    let (nll, grads) = sequence_loss_grad(seq, params, tagset, mode, rng.gen())?;
    grads.apply_sgd(params, cfg.base_lr)?;
    Ok(nll)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean pre-update loss over the epoch (eval-mode loss for epoch 0).
    pub train_nll: f64,
    /// Dev F1 in percent.
    pub dev_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the best dev F1.
    pub params: ModelParams,
    /// Parameters after the last epoch run.
    pub last: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn write_history(w: &mut impl Write, history: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,train_nll,dev_f1")?;
    for r in history {
        writeln!(w, "{},{:.6},{:.4}", r.epoch, r.train_nll, r.dev_f1)?;
    }
    Ok(())
}

pub fn save_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_history(&mut f, history)?;
    f.flush()?;
    Ok(())
}

/// Parses `trees` from their own words and POS tags and scores against them.
pub fn corpus_f1(trees: &[ParseTree], params: &ModelParams, tagset: &TagSet) -> Result<f64> {
    let pred = trees
        .iter()
        .map(|t| parse(&t.words(), &t.pos_tags(), params, tagset))
        .collect::<Result<Vec<_>>>()?;
    Ok(evalb_f1(trees, &pred)?.f1 * 100.0)
}

pub fn gold_sequences(trees: &[ParseTree]) -> Result<Vec<GoldSequence>> {
    let mut out = Vec::new();
    for t in trees {
        out.extend(extract_gold_sequences(t)?);
    }
    Ok(out)
}

/// Trains on preprocessed `train` trees, selecting on `dev`. `on_epoch` sees
/// every history row together with the params when dev F1 improved.
pub fn train_with<F>(
    train: &[ParseTree],
    dev: &[ParseTree],
    tagset: &TagSet,
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, Option<&ModelParams>) -> Result<()>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = cfg.init_params(tagset, &mut rng)?;
    run_epochs(params, rng, train, dev, tagset, cfg, on_epoch)
}

/// Like [`train_with`] but starting from given parameters, e.g. ones whose
/// word table was filled from pretrained embeddings.
pub fn train_from<F>(
    params: ModelParams,
    train: &[ParseTree],
    dev: &[ParseTree],
    tagset: &TagSet,
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, Option<&ModelParams>) -> Result<()>,
{
    cfg.validate()?;
    if params.dims != cfg.dims || params.num_bioes() != tagset.num_bioes() {
        return Err(Error::ShapeMismatch("initial parameters do not match the configuration".into()));
    }
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_epochs(ModelParams { p_drop: cfg.p_drop, ..params }, rng, train, dev, tagset, cfg, on_epoch)
}

fn run_epochs<F>(
    mut params: ModelParams,
    mut rng: ChaCha8Rng,
    train: &[ParseTree],
    dev: &[ParseTree],
    tagset: &TagSet,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, Option<&ModelParams>) -> Result<()>,
{
    let mut seqs = gold_sequences(train)?;
    if seqs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }

    let mut initial_nll = 0.0;
    for s in &seqs {
        initial_nll += sequence_loss_grad(s, &params, tagset, Mode::Eval, 0)?.0;
    }
    let first = EpochRecord {
        epoch: 0,
        train_nll: initial_nll / seqs.len() as f64,
        dev_f1: corpus_f1(dev, &params, tagset)?,
    };
    log::info!("epoch 0: nll {:.4} dev F1 {:.2}", first.train_nll, first.dev_f1);
    on_epoch(&first, Some(&params))?;
    let mut history = vec![first];
    let mut best = params.clone();
    let mut best_f1 = first.dev_f1;
    let mut best_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        seqs.shuffle(&mut rng);
        let mut total = 0.0;
        for s in &seqs {
            total += train_step(s, &mut params, tagset, cfg, &mut rng)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteValue(format!("parameters after epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_nll: total / seqs.len() as f64,
            dev_f1: corpus_f1(dev, &params, tagset)?,
        };
        log::info!("epoch {epoch}: nll {:.4} dev F1 {:.2}", record.train_nll, record.dev_f1);
        history.push(record);
        if record.dev_f1 > best_f1 {
            best_f1 = record.dev_f1;
            best_epoch = epoch;
            best = params.clone();
            on_epoch(&record, Some(&best))?;
        } else {
            on_epoch(&record, None)?;
            if epoch - best_epoch >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        params: best,
        last: params,
        history,
        best_epoch,
    })
}

pub fn train(train: &[ParseTree], dev: &[ParseTree], tagset: &TagSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train, dev, tagset, cfg, |_, _| Ok(()))
}
