//! Generates one phantom per modality and writes all eight orientations of
//! each as PGM files.
//!
//! `cargo run --example phantoms -- [out_dir]`

use std::path::PathBuf;

use orient8::d4::OrientationLabel;
use orient8::dataio::{detect_marker_orientation, generate_phantoms, write_image, PhantomSpec};
use orient8::imgops::apply_orientation;
use orient8::Modality;

fn main() -> orient8::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantoms".into()));
    for m in Modality::ALL {
        let vols = generate_phantoms(&PhantomSpec::new(1, 3, 96, m, 7))?;
        let slice = &vols[0].slices()[1];
        for l in OrientationLabel::all() {
            let view = apply_orientation(slice, l);
            let path = out.join(format!("{}_{}.pgm", m.as_str(), l));
            write_image(&view, &path)?;
            let found = detect_marker_orientation(&view).map_or("-".into(), |d| d.to_string());
            println!("{} label {l} -> marker detector says {found}", path.display());
        }
    }
    Ok(())
}
