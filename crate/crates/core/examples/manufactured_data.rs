//! Generate the manufactured elastic and plastic datasets, thin out the
//! stress observations and write CSV files plus PGM heatmaps.
//!
//! `cargo run --example manufactured_data -- [out_dir]`

use std::path::PathBuf;

use nlpinn::constitutive::MaterialParams;
use nlpinn::dataio::{
    generate_elastic_manufactured, generate_plastic_manufactured, sample_index_sets, save_fields,
    save_heatmap, Channel, ElasticKind, PlasticProfile,
};
use nlpinn::mesh::build_grid;

fn main() -> nlpinn::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "manufactured".into()),
    );
    std::fs::create_dir_all(&out)?;
    let truth = MaterialParams::benchmark();
    let cloud = build_grid(41, 41, 1.0, 1.0)?;
    let (nx, ny) = cloud.dims();

    let mut elastic =
        generate_elastic_manufactured(ElasticKind::HarmonicQuadratic { k: 1e-3 }, &truth, &cloud)?;
    sample_index_sets(
        &mut elastic,
        &[
            (Channel::Sxx, 200),
            (Channel::Syy, 200),
            (Channel::Sxy, 200),
        ],
        7,
    )?;
    save_fields(&elastic, &out.join("elastic.csv"))?;

    let (plastic, summary) =
        generate_plastic_manufactured(&PlasticProfile::default(), &truth, &cloud)?;
    save_fields(&plastic, &out.join("plastic.csv"))?;
    println!(
        "plastic points {} of {} ({:.1}%), max ebar_p {:.3e}",
        summary.plastic_points,
        plastic.len(),
        100.0 * summary.fraction,
        summary.ebar_p.iter().cloned().fold(0.0, f64::max)
    );

    save_heatmap(&summary.ebar_p, nx, ny, &out.join("plastic_ebar_p.pgm"))?;
    for c in [Channel::Sxy, Channel::Exy] {
        let col: Vec<f64> = plastic.column(c).iter().map(|v| v.unwrap_or(0.0)).collect();
        save_heatmap(&col, nx, ny, &out.join(format!("plastic_{c}.pgm")))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
