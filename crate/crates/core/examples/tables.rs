//! Prints the derived composition and inverse-action tables and walks
//! through one label recovery.

use orient8::d4::{self, format_matrix, OrientationLabel};

fn main() {
    let t = d4::tables();
    println!("compose[i][j] = label of (apply j, then i)\n{}\n", format_matrix(&t.compose_matrix()));
    println!("inverse_action[i][k] = j with compose[i][j] = k\n{}\n", format_matrix(&t.inverse_action_matrix()));

    for l in OrientationLabel::all() {
        println!("{l}: {:<34} inverse {}", l.describe(), t.inverse(l));
    }

    // a view built with transform 5 of an image stored under label 2 carries
    // label compose(5, 2); inverting through 5 gives 2 back
    let (j, stored) = (OrientationLabel::new(5).unwrap(), OrientationLabel::new(2).unwrap());
    let seen = t.compose(j, stored);
    println!("\nview {j} of a label-{stored} image has label {seen}; invert_label({j}, {seen}) = {}", t.invert_label(j, seen));

    let diff = t.diff_against_reference();
    println!("mismatches against the reference fixtures: {}", diff.len());
}
