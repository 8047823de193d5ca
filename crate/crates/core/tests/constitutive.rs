mod common;

use common::{random_state, return_map_oracle};
use nlpinn::constitutive::{
    deformation_plastic_state, lame_from_engineering, stress_response, yield_value, MaterialParams,
    Tensor2D,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_states_close_the_plastic_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut plastic = 0;
    for _ in 0..1000 {
        let (strain, m) = random_state(&mut rng);
        let st = deformation_plastic_state(&strain, &m);
        let r = stress_response(&strain, &st, &m);
        assert!(st.ep.trace().abs() <= 1e-12);
        if st.ebar_p > 0.0 {
            plastic += 1;
            let f = yield_value(r.sigma_e, st.ebar_p, &m);
            assert!(f.abs() <= 1e-6 * m.sigma_y0, "F = {f:e}");
            let oracle = return_map_oracle(&strain, &m, 50);
            assert!(
                (st.ebar_p - oracle).abs() <= 1e-10 * oracle,
                "{} vs {oracle}",
                st.ebar_p
            );
        } else {
            assert!(r.sigma_e <= m.sigma_y0 * (1.0 + 1e-12));
            assert_eq!(return_map_oracle(&strain, &m, 50), 0.0);
        }
    }
    assert!(plastic > 300 && plastic < 1000, "{plastic} plastic states");
}

#[test]
fn oracle_is_step_independent_under_proportional_loading() {
    let m = MaterialParams::benchmark();
    let strain = Tensor2D::new(4e-3, -1e-3, 0.0, 3e-3);
    let a = return_map_oracle(&strain, &m, 1);
    let b = return_map_oracle(&strain, &m, 500);
    assert!((a - b).abs() <= 1e-12 * a);
}

#[test]
fn engineering_constants_convert_to_lame() {
    let (l, m) = lame_from_engineering(70e9, 0.3).unwrap();
    assert_eq!(format!("{:.3}", l / 1e9), "40.385");
    assert_eq!(format!("{:.3}", m / 1e9), "26.923");
    let b = MaterialParams::benchmark();
    assert!((b.lambda - l).abs() <= 1e-6 * l && (b.mu - m).abs() <= 1e-6 * m);
}

proptest! {
    #[test]
    fn stress_stays_on_or_inside_the_yield_surface(
        g in prop::array::uniform4(-1e-2f64..1e-2),
        hp in 0.0f64..2e9,
    ) {
        let mut m = MaterialParams::benchmark();
        m.hp = hp;
        let strain = Tensor2D::new(g[0], g[3], 0.0, 0.5 * (g[1] + g[2]));
        let st = deformation_plastic_state(&strain, &m);
        let r = stress_response(&strain, &st, &m);
        prop_assert!(yield_value(r.sigma_e, st.ebar_p, &m) <= 1e-6 * m.sigma_y0);
        prop_assert!(st.ebar_p >= 0.0);
        // pressure is purely volumetric
        prop_assert!((r.p + m.bulk_modulus() * strain.trace()).abs() <= 1e-6 * m.sigma_y0);
    }
}
