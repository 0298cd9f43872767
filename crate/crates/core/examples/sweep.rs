//! Training-fraction sweep over all three modalities.
//!
//! `cargo run --release --example sweep -- [patients] [slices] [epochs] [seed]`

use std::time::Instant;

use orient8::dataio::{generate_phantoms, PhantomSpec};
use orient8::nn::NetworkConfig;
use orient8::pipeline::{sensitivity_sweep, TrainConfig, DEFAULT_FRACTIONS};
use orient8::Modality;

fn arg(i: usize, default: u64) -> u64 {
    std::env::args().nth(i).map_or(default, |a| a.parse().expect("numeric argument"))
}

fn main() -> orient8::Result<()> {
    let (patients, slices, epochs, seed) = (arg(1, 40) as usize, arg(2, 3) as usize, arg(3, 3) as usize, arg(4, 1));
    let size = 32;
    let mut volumes = Vec::new();
    for m in Modality::ALL {
        volumes.extend(generate_phantoms(&PhantomSpec::new(patients, slices, size, m, seed))?);
    }
    let cfg = TrainConfig {
        epochs,
        seed,
        network: NetworkConfig { input_size: size, seed: seed as u32, ..Default::default() },
        ..Default::default()
    };
    let start = Instant::now();
    let table = sensitivity_sweep(&volumes, &DEFAULT_FRACTIONS, &cfg, &mut |f, cell| {
        eprintln!(
            "{f:.1} {:<3} direct {:.4} voting {:.4}  [{:.0}s]",
            cell.modality.as_str(),
            cell.direct.accuracy,
            cell.voting.accuracy,
            start.elapsed().as_secs_f64()
        );
    })?;
    print!("{}", table.to_csv());
    Ok(())
}
