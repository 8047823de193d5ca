mod common;

use common::{elastic_case, fd_error, fd_model, plastic_case};
use nlpinn::autodiff::forward;
use nlpinn::pddo::DerivativeTag;
use nlpinn::residuals::{ad_pddo_derivative, nonlocal_value, AdPddoMode, ArchitectureKind};

#[test]
fn elastic_gradients_match_finite_differences() {
    let (ds, cloud, ctx, m) = elastic_case();
    for arch in ArchitectureKind::ALL {
        let mut md = fd_model(arch, AdPddoMode::PerSlot, &ds, &cloud, &ctx);
        let e = fd_error(&mut md, &ctx, &ds, &m);
        assert!(e <= 1e-5, "{arch}: {e:e}");
    }
}

#[test]
fn plastic_gradients_match_finite_differences() {
    let (ds, cloud, ctx, m) = plastic_case();
    for arch in ArchitectureKind::ALL {
        let mut md = fd_model(arch, AdPddoMode::PerSlot, &ds, &cloud, &ctx);
        let e = fd_error(&mut md, &ctx, &ds, &m);
        assert!(e <= 1e-5, "{arch}: {e:e}");
    }
}

#[test]
fn center_only_mode_gradients_match_finite_differences() {
    let (ds, cloud, ctx, m) = elastic_case();
    let mut md = fd_model(
        ArchitectureKind::AdPddo,
        AdPddoMode::CenterOnly,
        &ds,
        &cloud,
        &ctx,
    );
    let e = fd_error(&mut md, &ctx, &ds, &m);
    assert!(e <= 1e-5, "{e:e}");
}

#[test]
fn ad_pddo_derivative_is_the_directional_derivative_of_the_nonlocal_value() {
    let (ds, cloud, ctx, _) = elastic_case();
    for mode in [AdPddoMode::PerSlot, AdPddoMode::CenterOnly] {
        let md = fd_model(ArchitectureKind::AdPddo, mode, &ds, &cloud, &ctx);
        let net = &md.nets[0];
        for point in [0, 7, 12, 24] {
            let st = md.stencil(point);
            for (tag, dir) in [
                (DerivativeTag::DX, &st.dir_x),
                (DerivativeTag::DY, &st.dir_y),
            ] {
                let got = ad_pddo_derivative(net, 0, st, tag, mode).unwrap();
                let h = 1e-5;
                let eval = |s: f64| {
                    let x: Vec<f64> = st.input.iter().zip(dir).map(|(a, d)| a + s * d).collect();
                    let out = forward(net, &x).unwrap().outputs;
                    match mode {
                        AdPddoMode::PerSlot => nonlocal_value(&out, &st.g00).unwrap(),
                        AdPddoMode::CenterOnly => out[0] * st.g00.iter().sum::<f64>(),
                    }
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(
                    (got - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "{mode:?} {point}: {got} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn second_order_tags_are_rejected_by_ad_pddo() {
    let (ds, cloud, ctx, _) = elastic_case();
    let md = fd_model(
        ArchitectureKind::AdPddo,
        AdPddoMode::PerSlot,
        &ds,
        &cloud,
        &ctx,
    );
    for tag in [
        DerivativeTag::DXX,
        DerivativeTag::DYY,
        DerivativeTag::DXY,
        DerivativeTag::VALUE,
    ] {
        assert!(
            ad_pddo_derivative(&md.nets[0], 0, md.stencil(0), tag, AdPddoMode::PerSlot).is_err()
        );
    }
}
