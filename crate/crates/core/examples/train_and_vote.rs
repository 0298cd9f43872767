//! Trains on synthetic C0 slices and compares direct and voting prediction.
//!
//! `cargo run --release --example train_and_vote -- [patients] [slices] [epochs]`

use orient8::dataio::{expand_orientations, generate_phantoms, split_by_patient, PhantomSpec};
use orient8::nn::NetworkConfig;
use orient8::pipeline::{evaluate_both, train_with_progress, TrainConfig};
use orient8::Modality;

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).map_or(default, |a| a.parse().expect("numeric argument"))
}

fn main() -> orient8::Result<()> {
    let (patients, slices, epochs) = (arg(1, 40), arg(2, 5), arg(3, 5));
    let size = 32;
    let vols = generate_phantoms(&PhantomSpec::new(patients, slices, size, Modality::C0, 11))?;
    let cfg = TrainConfig {
        epochs,
        seed: 11,
        network: NetworkConfig { input_size: size, seed: 11, ..Default::default() },
        ..Default::default()
    };
    let (train, val, test) = split_by_patient(&vols, cfg.split_ratios(), cfg.seed)?;
    let (train, val, test) = (expand_orientations(&train)?, expand_orientations(&val)?, expand_orientations(&test)?);
    println!("{} train / {} val / {} test samples", train.len(), val.len(), test.len());

    let out = train_with_progress(&train, Some(&val), &cfg, &mut |e| {
        println!("epoch {:>2}  loss {:.4}  val {:.4}", e.epoch, e.loss, e.val_accuracy.unwrap_or(f64::NAN));
    })?;
    let (direct, voting) = evaluate_both(&out.network, &test)?;
    println!("best epoch {}: direct {:.4}, voting {:.4}", out.best_epoch, direct.accuracy, voting.accuracy);
    println!("voting confusion (rows = true label):");
    for row in voting.confusion {
        println!("  {}", row.map(|c| format!("{c:>3}")).join(" "));
    }
    Ok(())
}
