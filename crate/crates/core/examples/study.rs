//! Run the desk-scale studies from a TOML scale file:
//! `cargo run --release -p r3d-core --example study -- scale.toml [extrapolation|mobility] [variant,...]`

use r3d_core::posenc::PeVariant;
use r3d_core::study::{extrapolation_study, mobility_study, StudyScale};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let scale: StudyScale = toml::from_str(&std::fs::read_to_string(&args[1])?)?;
    let which = args.get(2).map_or("extrapolation", String::as_str);
    let variants: Vec<PeVariant> = match args.get(3) {
        Some(list) => list.split(',').map(str::parse).collect::<Result<_, _>>()?,
        None if which == "mobility" => vec![PeVariant::Rope3dFixed, PeVariant::Rope3dAdaptive],
        None => PeVariant::ALL.to_vec(),
    };
    let t = std::time::Instant::now();
    if which == "mobility" {
        for s in mobility_study(&scale, &variants)? {
            println!("{} seed={} low_val={:.3} high_test={:.3}", s.variant, s.seed, s.low_val_db, s.high_test_db);
        }
    } else {
        for s in extrapolation_study(&scale, &variants)? {
            println!("{} seed={} same={:.3} extrap={:.3}", s.variant, s.seed, s.same_scale_db, s.extrapolated_db);
        }
    }
    eprintln!("elapsed {:?}", t.elapsed());
    Ok(())
}
