//! The `train` command: joint training with periodic evaluation,
//! checkpoints and a JSON-lines log.

use std::path::{Path, PathBuf};

use thor_core::autodiff::{Optimizer, ParamStore};
use thor_core::data::Templates;
use thor_core::metrics::MetricReport;
use thor_core::rng::SplitMix64;

use crate::checkpoint::{read_manifest, resolve_checkpoint, restore, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{load_splits, Splits};
use crate::error::{CliError, Result};
use crate::eval::{evaluate, write_report, EvalSummary};
use crate::model::{LossTerms, Network, Prepared};
use crate::runlog::{LogRecord, RunLog};

pub const LOG_FILE: &str = "logs/run.jsonl";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub step: usize,
    pub checkpoint: PathBuf,
    pub sha256: String,
    pub losses: Vec<LossTerms>,
    /// Held-out evaluations as `(step, summary)`.
    pub evals: Vec<(usize, EvalSummary)>,
    pub final_report: Option<MetricReport>,
}

/// Sample order: every epoch is a seeded permutation of the training set,
/// so the batch of a step depends only on the step number.
pub struct BatchSchedule {
    n: usize,
    batch: usize,
    seed: u64,
    cached: Option<(usize, Vec<usize>)>,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            n,
            batch,
            seed,
            cached: None,
        }
    }

    fn permutation(&mut self, epoch: usize) -> &[usize] {
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut rng = SplitMix64::derive(self.seed ^ 0x6261_7463_6865_7321, epoch as u64);
            let mut p: Vec<usize> = (0..self.n).collect();
            for i in (1..p.len()).rev() {
                p.swap(i, rng.below(i + 1));
            }
            self.cached = Some((epoch, p));
        }
        &self.cached.as_ref().expect("cached").1
    }

    pub fn indices(&mut self, step: usize) -> Vec<usize> {
        let n = self.n;
        (0..self.batch)
            .map(|k| {
                let pos = step * self.batch + k;
                self.permutation(pos / n)[pos % n]
            })
            .collect()
    }
}

struct Session<'a> {
    cfg: &'a RunConfig,
    net: Network,
    store: ParamStore<f64>,
    opt: Optimizer<f64>,
    log: RunLog,
    out: TrainOutcome,
}

impl Session<'_> {
    fn checkpoint(&mut self, step: usize) -> Result<()> {
        let root = self.cfg.out.join("checkpoints");
        let (dir, hash) = save_checkpoint(&root, step, self.cfg, &self.store, &self.opt)?;
        self.log.append(&LogRecord::Checkpoint {
            step,
            path: dir.display().to_string(),
            sha256: hash.clone(),
        })?;
        self.out.checkpoint = dir;
        self.out.sha256 = hash;
        Ok(())
    }

    fn evaluate(&mut self, step: usize, data: &[Prepared]) -> Result<()> {
        let (report, summary) = evaluate(&self.net, &self.store, data)?;
        let wall_ms = self.log.wall_ms();
        self.log.append(&LogRecord::Eval {
            step,
            summary,
            report: Box::new(report.clone()),
            wall_ms,
        })?;
        write_report(&self.cfg.out.join("metrics").join(format!("step-{step:06}")), &report, &summary)?;
        self.out.evals.push((step, summary));
        self.out.final_report = Some(report);
        Ok(())
    }
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let templates = Templates::from_env()?;
    train(cfg, &templates, resume)
}

pub fn train(cfg: &RunConfig, templates: &Templates, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg, templates)?;
    train_on(cfg, templates, &splits, resume)
}

/// Trains on prepared splits (shared by ablation rows with equal inputs).
pub fn train_on(cfg: &RunConfig, templates: &Templates, splits: &Splits, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let net = Network::new(&mut store, cfg.dataset.hands, &cfg.model, templates)?;
    let mut opt = Optimizer::new(cfg.optimizer.optimizer());
    let mut start = 0;
    let mut resumed_from = None;
    if let Some(path) = resume {
        let dir = resolve_checkpoint(path)?;
        let m = read_manifest(&dir)?;
        if m.config.dataset.hands != cfg.dataset.hands || m.config.model != cfg.model {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained with a different model or layout",
                dir.display()
            )));
        }
        restore(&dir, &m, &mut store, Some(&mut opt))?;
        start = m.step;
        resumed_from = Some(dir.display().to_string());
    }
    if start > cfg.optimizer.steps {
        return Err(CliError::Config(format!(
            "checkpoint is at step {start}, beyond the requested {} steps",
            cfg.optimizer.steps
        )));
    }
    let log = RunLog::open(&cfg.out.join(LOG_FILE), cfg.deterministic)?;
    let mut s = Session {
        cfg,
        net,
        store,
        opt,
        log,
        out: TrainOutcome {
            step: start,
            checkpoint: PathBuf::new(),
            sha256: String::new(),
            losses: Vec::new(),
            evals: Vec::new(),
            final_report: None,
        },
    };
    s.log.append(&LogRecord::Start {
        step: start,
        config: Box::new(cfg.clone()),
        resumed_from: resumed_from.clone(),
    })?;
    let mut schedule = BatchSchedule::new(splits.train.len(), cfg.optimizer.batch, cfg.dataset.seed);
    let steps = cfg.optimizer.steps;
    for step in start..steps {
        let fresh = resumed_from.is_none() || step > start;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step > start {
            s.checkpoint(step)?;
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && fresh {
            s.evaluate(step, &splits.eval)?;
        }
        let batch: Vec<&Prepared> = schedule.indices(step).into_iter().map(|i| &splits.train[i]).collect();
        match s.net.train_step(&mut s.store, &mut s.opt, &batch) {
            Ok(loss) => {
                let wall_ms = s.log.wall_ms();
                s.log.append(&LogRecord::Step { step, loss, wall_ms })?;
                s.out.losses.push(loss);
                s.out.step = step + 1;
            }
            Err(CliError::Numeric(reason)) => {
                // the store still holds the parameters from before this step
                s.checkpoint(step)?;
                s.log.append(&LogRecord::Abort {
                    step,
                    reason: reason.clone(),
                    last_good: Some(s.out.checkpoint.display().to_string()),
                })?;
                return Err(CliError::Numeric(format!("step {step}: {reason}")));
            }
            Err(e) => return Err(e),
        }
    }
    s.checkpoint(steps)?;
    if resumed_from.is_none() || steps > start {
        s.evaluate(steps, &splits.eval)?;
        if let Some(r) = &s.out.final_report {
            let summary = s.out.evals.last().expect("just evaluated").1;
            write_report(&cfg.out.join("metrics"), r, &summary)?;
        }
    }
    let wall_ms = s.log.wall_ms();
    s.log.append(&LogRecord::End { step: steps, wall_ms })?;
    Ok(s.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_an_epoch_permutation() {
        let mut s = BatchSchedule::new(10, 4, 3);
        let first: Vec<usize> = (0..5).flat_map(|step| s.indices(step)).collect();
        let mut epoch0 = first[..10].to_vec();
        epoch0.sort_unstable();
        assert_eq!(epoch0, (0..10).collect::<Vec<_>>());
        let mut again = BatchSchedule::new(10, 4, 3);
        assert_eq!(again.indices(3), first[12..16]);
    }
}
