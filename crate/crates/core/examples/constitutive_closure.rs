//! Plane-strain J2 deformation plasticity: sweep a shear strain through
//! yield and print the plastic state and stresses.
//!
//! `cargo run --example constitutive_closure`

use nlpinn::constitutive::Tensor2D;
use nlpinn::constitutive::{
    deformation_plastic_state, lame_from_engineering, stress_response, yield_value, MaterialParams,
};

fn main() -> nlpinn::Result<()> {
    let (lambda, mu) = lame_from_engineering(70e9, 0.3)?;
    println!(
        "E = 70 GPa, nu = 0.3 -> lambda = {:.3} GPa, mu = {:.3} GPa",
        lambda / 1e9,
        mu / 1e9
    );
    let m = MaterialParams::new(lambda, mu, 0.1e9, 0.5e9);
    println!("yield at ebar = {:.4e}", m.sigma_y0 / (3.0 * m.mu));

    println!(
        "{:>10} {:>11} {:>11} {:>11} {:>11} {:>10}",
        "gamma", "ebar", "ebar_p", "sigma_e", "sxy", "F"
    );
    for k in 0..=12 {
        let gamma = k as f64 * 5e-4;
        let strain = Tensor2D::new(-2e-4, 1e-4, 0.0, 0.5 * gamma);
        let st = deformation_plastic_state(&strain, &m);
        let r = stress_response(&strain, &st, &m);
        let f = yield_value(r.sigma_e, st.ebar_p, &m);
        println!(
            "{gamma:>10.2e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>10.2e}",
            st.ebar, st.ebar_p, r.sigma_e, r.sigma.xy, f
        );
    }
    Ok(())
}
