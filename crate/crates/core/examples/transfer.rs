//! Pretrains on C0, then adapts to LGE and T2 with full fine-tuning and
//! with frozen convolutions.

use orient8::dataio::{expand_orientations, generate_phantoms, split_by_patient, Dataset, PhantomSpec};
use orient8::nn::NetworkConfig;
use orient8::pipeline::{evaluate, train, transfer, Method, TrainConfig};
use orient8::Modality;

fn splits(m: Modality, cfg: &TrainConfig) -> orient8::Result<(Dataset, Dataset, Dataset)> {
    let vols = generate_phantoms(&PhantomSpec::new(30, 4, 32, m, 21))?;
    let (a, b, c) = split_by_patient(&vols, cfg.split_ratios(), cfg.seed)?;
    Ok((expand_orientations(&a)?, expand_orientations(&b)?, expand_orientations(&c)?))
}

fn main() -> orient8::Result<()> {
    let cfg = TrainConfig {
        epochs: 6,
        seed: 21,
        network: NetworkConfig { input_size: 32, seed: 21, ..Default::default() },
        ..Default::default()
    };
    let (tr, va, te) = splits(Modality::C0, &cfg)?;
    let base = train(&tr, Some(&va), &cfg)?.network;
    println!("C0 from scratch: voting {:.4}", evaluate(&base, &te, Method::Voting)?.accuracy);

    let fine = cfg.for_transfer();
    for m in [Modality::Lge, Modality::T2] {
        let (tr, va, te) = splits(m, &fine)?;
        println!("{} with the C0 network as is: {:.4}", m.as_str(), evaluate(&base, &te, Method::Voting)?.accuracy);
        for freeze in [false, true] {
            let c = TrainConfig { freeze_conv: freeze, ..fine.clone() };
            let net = transfer(&base, &tr, Some(&va), &c)?.network;
            let acc = evaluate(&net, &te, Method::Voting)?.accuracy;
            println!("{} after {} epochs at lr {:.0e}{}: {acc:.4}", m.as_str(), c.epochs, c.lr, if freeze { ", conv frozen" } else { "" });
        }
    }
    Ok(())
}
