//! The train/eval loop.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::model::{checkpoint, ArchSpec, CloudGeometry, Head, Network};
use crate::training::adam::{adam_step, AdamState};
use crate::training::augment::{augment, Augment};
use crate::training::metrics::{dataset_geometry, evaluate, Metrics};
use crate::training::schedule::{bn_momentum_at, lr_at};

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,test_metric,seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub augment: Augment,
    /// Record zero in the metrics `seconds` column so reruns are byte-identical.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, seed: 0, base_lr: 0.001, batch_size: 32, augment: Augment::default(), deterministic: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and non-negative, got {}", self.base_lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_metric: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self, deterministic: bool) -> String {
        let secs = if deterministic { 0.0 } else { self.seconds };
        format!(
            "{},{},{:.10},{:.10},{:.10},{:.3}",
            self.epoch, self.lr, self.train_loss, self.train_acc, self.test_metric, secs
        )
    }
}

pub fn metrics_csv(records: &[EpochRecord], deterministic: bool) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in records {
        writeln!(s, "{}", r.csv_row(deterministic)).expect("write to string");
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub records: Vec<EpochRecord>,
    pub final_metrics: Metrics,
}

// Independent random streams per purpose.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

fn stream(seed: u64, purpose: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | epoch as u64);
    rng
}

fn check_dataset(arch: &ArchSpec, ds: &Dataset, tag: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Input(format!("{tag} split is empty")));
    }
    ds.validate()?;
    match arch.head {
        Head::Classify { n_classes } if ds.n_classes() > n_classes => Err(Error::Config(format!(
            "{tag} split has {} classes, network predicts {n_classes}",
            ds.n_classes()
        ))),
        Head::Segment { n_labels } if ds.n_part_labels > n_labels => Err(Error::Config(format!(
            "{tag} split has {} part labels, network predicts {n_labels}",
            ds.n_part_labels
        ))),
        Head::Segment { .. } if ds.items.iter().any(|s| s.cloud.labels.is_none()) => {
            Err(Error::Input(format!("{tag} split lacks per-point labels needed for segmentation")))
        }
        _ => Ok(()),
    }
}

/// Trains from a fresh network. `on_epoch` sees each record as soon as it
/// exists (the CLI appends it to the metrics file).
pub fn train(
    cfg: &TrainConfig,
    arch: &ArchSpec,
    splits: &Splits,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset(arch, &splits.train, "train")?;
    check_dataset(arch, &splits.test, "test")?;
    let mut net = Network::new(arch.clone(), cfg.seed)?;
    let classify = matches!(arch.head, Head::Classify { .. });
    let train_geoms = if cfg.augment.is_identity() { Some(dataset_geometry(&net, &splits.train)?) } else { None };
    let test_geoms = dataset_geometry(&net, &splits.test)?;
    let mut adam = AdamState::new(&net.params);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut last = None;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = lr_at(epoch, cfg.base_lr);
        let momentum = bn_momentum_at(epoch);
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, STREAM_SHUFFLE, epoch));
        let mut dropout_rng = stream(cfg.seed, STREAM_DROPOUT, epoch);
        let mut aug_rng = stream(cfg.seed, STREAM_AUGMENT, epoch);
        let (mut loss_sum, mut correct, mut total, mut batches) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            // Train-mode batch norm needs two examples.
            if classify && chunk.len() < 2 {
                continue;
            }
            let augmented = match &train_geoms {
                Some(_) => None,
                None => {
                    let seeds: Vec<u64> = chunk.iter().map(|_| aug_rng.random()).collect();
                    Some(
                        chunk
                            .par_iter()
                            .zip(seeds)
                            .map(|(&i, s)| {
                                let c = augment(&splits.train.items[i].cloud, s, &cfg.augment);
                                let g = net.geometry(&c)?;
                                Ok((c, g))
                            })
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
            };
            let pair = |j: usize, i: usize| -> (&crate::data::PointCloud, &CloudGeometry) {
                match (&augmented, &train_geoms) {
                    (Some(a), _) => (&a[j].0, &a[j].1),
                    (None, Some(g)) => (&splits.train.items[i].cloud, &g[i]),
                    (None, None) => unreachable!("one geometry source exists"),
                }
            };
            let out = if classify {
                let batch: Vec<_> = chunk
                    .iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let (c, g) = pair(j, i);
                        (c, g, splits.train.items[i].label)
                    })
                    .collect();
                net.classify_train_batch(&batch, momentum, Some(&mut dropout_rng))?
            } else {
                let batch: Vec<_> = chunk.iter().enumerate().map(|(j, &i)| pair(j, i)).collect();
                net.segment_train_batch(&batch)?
            };
            if !out.loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}")));
            }
            adam_step(&mut net.params, &out.grads, &mut adam, lr)?;
            net.step += 1;
            loss_sum += out.loss;
            batches += 1;
            correct += out.correct;
            total += out.total;
        }
        let metrics = evaluate(&net, &splits.test, Some(&test_geoms))?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            train_acc: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
            test_metric: metrics.headline(),
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record)?;
        records.push(record);
        last = Some(metrics);
    }
    Ok(TrainOutcome { network: net, records, final_metrics: last.expect("at least one epoch") })
}

/// Trains and writes `metrics.csv` (appended per epoch), `timing.csv` and
/// `model.ckpt` under `out_dir`.
pub fn train_to_dir(cfg: &TrainConfig, arch: &ArchSpec, splits: &Splits, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_path = out_dir.join("metrics.csv");
    let timing_path = out_dir.join("timing.csv");
    let open = |p: &Path| std::fs::File::create(p).map_err(|e| Error::io(p, e));
    let mut metrics = open(&metrics_path)?;
    let mut timing = open(&timing_path)?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(timing, "epoch,seconds").map_err(|e| Error::io(&timing_path, e))?;
    let outcome = train(cfg, arch, splits, &mut |r| {
        writeln!(metrics, "{}", r.csv_row(cfg.deterministic)).map_err(|e| Error::io(&metrics_path, e))?;
        writeln!(timing, "{},{:.3}", r.epoch, r.seconds).map_err(|e| Error::io(&timing_path, e))?;
        Ok(())
    })?;
    checkpoint::save(&outcome.network, &out_dir.join("model.ckpt"))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_shapes;
    use crate::model::{ArchSpec, Variant};

    fn tiny_splits() -> Splits {
        let mut train = synth_shapes(3, 64, 0.02, 1).unwrap();
        train.split = "train".into();
        let mut test = synth_shapes(1, 64, 0.02, 2).unwrap();
        test.split = "test".into();
        Splits { train, test }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let arch = ArchSpec::desk_classifier(Variant::PointNet4, 4, 3, 0);
        let cfg = TrainConfig { epochs: 1, base_lr: 0.0, batch_size: 4, ..TrainConfig::default() };
        let out = train(&cfg, &arch, &tiny_splits(), &mut |_| Ok(())).unwrap();
        assert_eq!(out.network.params, Network::new(arch, 0).unwrap().params);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn deterministic_csv_repeats() {
        let arch = ArchSpec::desk_classifier(Variant::SpecCp4, 4, 3, 0);
        let cfg = TrainConfig { epochs: 2, batch_size: 4, deterministic: true, seed: 3, ..TrainConfig::default() };
        let a = train(&cfg, &arch, &tiny_splits(), &mut |_| Ok(())).unwrap();
        let b = train(&cfg, &arch, &tiny_splits(), &mut |_| Ok(())).unwrap();
        assert_eq!(metrics_csv(&a.records, true), metrics_csv(&b.records, true));
        assert_eq!(a.network, b.network);
    }

    #[test]
    fn empty_dataset_is_input_error() {
        let mut s = tiny_splits();
        s.train.items.clear();
        let arch = ArchSpec::desk_classifier(Variant::PointNet4, 4, 3, 0);
        let err = train(&TrainConfig::default(), &arch, &s, &mut |_| Ok(())).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
