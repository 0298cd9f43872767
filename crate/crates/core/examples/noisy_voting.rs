//! Voting with a simulated classifier that errs independently per view.

use orient8::d4;
use orient8::pipeline::simulate_noisy_voting;

fn main() -> orient8::Result<()> {
    println!("error  single-view  voting   gain/SE");
    for p in [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7] {
        let s = simulate_noisy_voting(d4::tables(), p, 10_000, 1)?;
        println!("{p:>5.2}  {:>11.4}  {:>6.4}  {:>8.1}", s.direct_accuracy, s.voting_accuracy, s.z_score());
    }
    Ok(())
}
