use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::predict::prepare_for_inference;
use super::TrainConfig;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::imgops::{augment, crop_or_pad, normalize};
use crate::nn::{check_compatible, save_checkpoint, Adam, Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best network on the validation set, or the final one without validation.
    pub network: Network<f32>,
    pub log: Vec<EpochLog>,
    /// Epoch the returned network comes from (0 means untouched).
    pub best_epoch: usize,
}

/// Trains a fresh network on `train_ds`.
pub fn train(train_ds: &Dataset, val_ds: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(train_ds, val_ds, cfg, &mut |_| {})
}

pub fn train_with_progress(
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = Network::<f32>::new(cfg.network)?;
    run(net, train_ds, val_ds, cfg, None, progress)
}

/// Fine-tunes `pretrained` on `train_ds`. With `freeze_conv` only the dense
/// layers move; zero epochs return the pretrained network unchanged.
pub fn transfer(
    pretrained: &Network<f32>,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    transfer_with_progress(pretrained, train_ds, val_ds, cfg, &mut |_| {})
}

pub fn transfer_with_progress(
    pretrained: &Network<f32>,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    check_compatible(pretrained, &cfg.network)?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            network: pretrained.clone(),
            log: Vec::new(),
            best_epoch: 0,
        });
    }
    cfg.validate()?;
    let mask: Vec<bool> = if cfg.freeze_conv {
        pretrained.conv_param_mask().iter().map(|&c| !c).collect()
    } else {
        vec![true; pretrained.params().len()]
    };
    run(pretrained.clone(), train_ds, val_ds, cfg, Some(&mask), progress)
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    // splitmix64 finaliser over the packed triple
    let mut z = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn accuracy(net: &Network<f32>, inputs: &[Tensor<f32>], labels: &[usize]) -> f64 {
    let correct: usize = inputs
        .par_iter()
        .zip(labels)
        .filter(|(x, &y)| net.predict_tensor(x).argmax().index() == y)
        .count();
    correct as f64 / inputs.len() as f64
}

fn run(
    mut net: Network<f32>,
    train_ds: &Dataset,
    val_ds: Option<&Dataset>,
    cfg: &TrainConfig,
    trainable: Option<&[bool]>,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train_ds.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let side = cfg.network.input_size;
    let labels: Vec<usize> = train_ds.samples.iter().map(|s| s.label.index()).collect();
    // crop/pad does not depend on the epoch
    let framed = train_ds
        .samples
        .iter()
        .map(|s| crop_or_pad(&s.slice, side, side, 0.0))
        .collect::<Result<Vec<_>>>()?;

    let val = match val_ds {
        Some(ds) if !ds.is_empty() => {
            let inputs = ds
                .samples
                .iter()
                .map(|s| net.input_tensor(&prepare_for_inference(&net, &s.slice)?))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = ds.samples.iter().map(|s| s.label.index()).collect();
            Some((inputs, labels))
        }
        _ => None,
    };

    let mut adam = Adam::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..framed.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>)> = None;
    let mut last_good = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let inputs = batch
                .par_iter()
                .map(|&i| {
                    let x = augment(&framed[i], sample_seed(cfg.seed, epoch, i), &cfg.augment);
                    net.input_tensor(&normalize(&x))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let grads = net.loss_and_gradients(&inputs, &batch_labels);
            if !grads.loss.is_finite() {
                return Err(Error::Divergence { epoch, last_good });
            }
            match adam.step_network(&mut net, &grads.gradients, cfg.lr, trainable) {
                Err(Error::NonFiniteGradient { .. }) => {
                    return Err(Error::Divergence { epoch, last_good });
                }
                other => other?,
            }
            total_loss += grads.loss as f64 * batch.len() as f64;
        }

        let val_accuracy = val.as_ref().map(|(x, y)| accuracy(&net, x, y));
        let entry = EpochLog {
            epoch,
            loss: total_loss / framed.len() as f64,
            val_accuracy,
        };
        progress(&entry);
        log.push(entry);

        if let Some(path) = &cfg.checkpoint {
            save_checkpoint(&net, path)?;
            last_good = Some(path.clone());
        }
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, net.clone()));
            }
        }
    }

    let (network, best_epoch) = match best {
        Some((_, epoch, net)) => (net, epoch),
        None => (net, cfg.epochs),
    };
    Ok(TrainOutcome { network, log, best_epoch })
}

/// Writes `epoch,loss,val_accuracy` rows; a missing validation score is left empty.
pub fn write_train_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss,val_accuracy\n");
    for e in log {
        let acc = e.val_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.6},{}", e.epoch, e.loss, acc).expect("write to string");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{expand_orientations, generate_phantoms, PhantomSpec, Split};
    use crate::imgops::{AugmentConfig, Modality};
    use crate::nn::NetworkConfig;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            seed: 3,
            network: NetworkConfig {
                input_size: 16,
                conv_channels: [2, 3, 4],
                hidden_units: 8,
                seed: 3,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn tiny_data() -> Dataset {
        let vols = generate_phantoms(&PhantomSpec::new(2, 1, 16, Modality::C0, 5)).unwrap();
        expand_orientations(&Dataset::from_volumes(&vols, Split::Train)).unwrap()
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_data();
        let cfg = tiny_cfg();
        let a = train(&ds, Some(&ds), &cfg).unwrap();
        let b = train(&ds, Some(&ds), &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.network, b.network);
        assert_eq!(a.log.len(), 2);
        assert!(a.log.iter().all(|e| e.loss.is_finite() && e.val_accuracy.is_some()));
    }

    #[test]
    fn zero_epoch_transfer_is_identity() {
        let ds = tiny_data();
        let cfg = tiny_cfg();
        let net = Network::<f32>::new(cfg.network).unwrap();
        let out = transfer(&net, &ds, None, &TrainConfig { epochs: 0, ..cfg }).unwrap();
        assert_eq!(out.network, net);
        assert!(out.log.is_empty());
    }

    #[test]
    fn frozen_transfer_keeps_conv_bits() {
        let ds = tiny_data();
        let cfg = TrainConfig { freeze_conv: true, augment: AugmentConfig::OFF, ..tiny_cfg() };
        let net = Network::<f32>::new(cfg.network).unwrap();
        let out = transfer(&net, &ds, None, &cfg).unwrap();
        let mask = net.conv_param_mask();
        let mut dense_moved = false;
        for ((a, b), conv) in net.params().iter().zip(out.network.params()).zip(mask) {
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if conv {
                assert!(same);
            } else {
                dense_moved |= !same;
            }
        }
        assert!(dense_moved);
    }

    #[test]
    fn transfer_rejects_other_shapes() {
        let ds = tiny_data();
        let cfg = tiny_cfg();
        let other = NetworkConfig { hidden_units: 9, ..cfg.network };
        let net = Network::<f32>::new(other).unwrap();
        let err = transfer(&net, &ds, None, &cfg).unwrap_err();
        assert!(err.to_string().contains("fc1.weight"), "{err}");
    }

    #[test]
    fn divergence_reports_last_checkpoint() {
        let ds = tiny_data();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("last.or8w");
        let cfg = TrainConfig { epochs: 4, lr: 1e30, checkpoint: Some(ckpt), ..tiny_cfg() };
        match train(&ds, None, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            Ok(out) => panic!("expected divergence, got {:?}", out.log),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn log_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = [
            EpochLog { epoch: 1, loss: 2.0, val_accuracy: Some(0.5) },
            EpochLog { epoch: 2, loss: 1.5, val_accuracy: None },
        ];
        write_train_log(&p, &log).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "epoch,loss,val_accuracy\n1,2.000000,0.500000\n2,1.500000,\n");
    }
}
