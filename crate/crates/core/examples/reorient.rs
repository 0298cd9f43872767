//! Trains briefly, scrambles the orientation of unseen slices and restores
//! them by voting.
//!
//! `cargo run --release --example reorient -- [out_dir]`

use std::path::PathBuf;

use orient8::d4::{self, OrientationLabel};
use orient8::dataio::{expand_orientations, generate_phantoms, write_image, Dataset, PhantomSpec, Split};
use orient8::imgops::apply_orientation;
use orient8::nn::NetworkConfig;
use orient8::pipeline::{reorient, train, TrainConfig};
use orient8::Modality;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> orient8::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "reoriented".into()));
    let cfg = TrainConfig {
        epochs: 4,
        seed: 31,
        network: NetworkConfig { input_size: 32, seed: 31, ..Default::default() },
        ..Default::default()
    };
    let vols = generate_phantoms(&PhantomSpec::new(20, 4, 32, Modality::C0, 31))?;
    let (seen, unseen) = vols.split_at(15);
    let net = train(&expand_orientations(&Dataset::from_volumes(seen, Split::Train))?, None, &cfg)?.network;

    let tables = d4::tables();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut restored = 0;
    let mut total = 0;
    for v in unseen {
        for (i, canonical) in v.slices().iter().enumerate() {
            let label = OrientationLabel::new(rng.gen_range(0..8)).unwrap();
            let scrambled = apply_orientation(canonical, label);
            let (fixed, predicted) = reorient(&net, &scrambled, tables)?;
            let ok = fixed.pixels() == canonical.pixels();
            restored += ok as usize;
            total += 1;
            let stem = format!("{}_{i}", v.patient_id());
            write_image(&scrambled, out.join(format!("{stem}_in.pgm")))?;
            write_image(&fixed, out.join(format!("{stem}_out.pgm")))?;
            println!("{stem}: applied {label}, predicted {predicted}{}", if ok { "" } else { "  (not restored)" });
        }
    }
    println!("{restored}/{total} slices restored pixel-exactly; images in {}", out.display());
    Ok(())
}
