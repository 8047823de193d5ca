//! Build PDDO operators on a grid, check them on a quadratic field and show
//! how the center weight of G00 approaches the local limit as the horizon
//! shrinks.
//!
//! `cargo run --release --example pddo_operators -- [n] [out.txt]`

use std::fs::File;
use std::io::BufWriter;

use nlpinn::mesh::{build_families, build_grid};
use nlpinn::pddo::{
    apply_operator, build_operator_set, orthogonality_residual, write_operator_table, DerivativeTag,
};

fn main() -> nlpinn::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(21, |s| s.parse().expect("grid size"));
    let cloud = build_grid(n, n, 1.0, 1.0)?;
    let t0 = std::time::Instant::now();
    let families = build_families(&cloud, 3, 3.5)?;
    let ops = build_operator_set(&cloud, &families)?;
    println!(
        "{} families, {} slots each, built in {:.1?}",
        ops.len(),
        ops.slot_count(),
        t0.elapsed()
    );

    let f = |x: f64, y: f64| 1.0 + x - 2.0 * y + 3.0 * x * x + x * y - y * y;
    let exact = |tag: DerivativeTag, x: f64, y: f64| match (tag.p1(), tag.p2()) {
        (0, 0) => f(x, y),
        (1, 0) => 1.0 + 6.0 * x + y,
        (0, 1) => -2.0 + x - 2.0 * y,
        (2, 0) => 6.0,
        (0, 2) => -2.0,
        _ => 1.0,
    };
    let values: Vec<f64> = cloud.points().iter().map(|p| f(p[0], p[1])).collect();
    println!("tag  max_abs_error");
    for tag in DerivativeTag::ALL {
        let d = apply_operator(&ops, &values, tag)?;
        let err = cloud
            .points()
            .iter()
            .zip(&d)
            .map(|(p, v)| (v - exact(tag, p[0], p[1])).abs())
            .fold(0.0, f64::max);
        println!("{tag}   {err:.3e}");
    }
    let ortho = families
        .iter()
        .enumerate()
        .map(|(k, fam)| orthogonality_residual(fam, ops.entry(k)))
        .fold(0.0, f64::max);
    println!("orthogonality residual {ortho:.3e}");

    let center = cloud.index(n / 2, n / 2);
    println!("delta/dx  |G00(center) - 1|");
    for delta in [3.5, 2.5, 1.5, 1.0] {
        let fams = build_families(&cloud, 3, delta)?;
        let ops = build_operator_set(&cloud, &fams)?;
        let g = ops.entry(center).weights(DerivativeTag::VALUE)[0];
        println!("{delta:<9} {:.6e}", (g - 1.0).abs());
    }

    if let Some(path) = args.next() {
        write_operator_table(&ops, BufWriter::new(File::create(&path)?))?;
        println!("operator table written to {path}");
    }
    Ok(())
}
