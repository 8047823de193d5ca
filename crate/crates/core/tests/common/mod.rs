#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::Matrix3;
use nlpinn::autodiff::Activation;
use nlpinn::constitutive::{MaterialParam, MaterialParams, Tensor2D};
use nlpinn::dataio::{
    generate_elastic_manufactured, generate_plastic_manufactured, ElasticKind, FieldDataset,
    PlasticProfile,
};
use nlpinn::mesh::{build_families, build_grid, PointCloud};
use nlpinn::pddo::build_operator_set;
use nlpinn::residuals::{
    AdPddoMode, ArchitectureKind, LossContext, LossWeights, Model, ModelSpec, NetLayout, Scales,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full(t: &Tensor2D) -> Matrix3<f64> {
    Matrix3::new(t.xx, t.xy, 0.0, t.xy, t.yy, 0.0, 0.0, 0.0, t.zz)
}

fn dev(m: &Matrix3<f64>) -> Matrix3<f64> {
    m - Matrix3::identity() * (m.trace() / 3.0)
}

/// Radial return with linear isotropic hardening along `strain * t`,
/// t = 1/n .. 1. Returns the equivalent plastic strain.
pub fn return_map_oracle(strain: &Tensor2D, m: &MaterialParams, n: usize) -> f64 {
    let eps = full(strain);
    let mut ep = Matrix3::zeros();
    let mut ebar_p = 0.0;
    for k in 1..=n {
        let e = dev(&(eps * (k as f64 / n as f64)));
        let s_trial = (e - ep) * (2.0 * m.mu);
        let se_trial = (1.5 * s_trial.component_mul(&s_trial).sum()).sqrt();
        let f = se_trial - (m.sigma_y0 + m.hp * ebar_p);
        if f > 0.0 {
            let dg = f / (3.0 * m.mu + m.hp);
            ebar_p += dg;
            ep += s_trial * (1.5 * dg / se_trial);
        }
    }
    ebar_p
}

pub fn random_state(rng: &mut ChaCha8Rng) -> (Tensor2D, MaterialParams) {
    let mu = rng.gen_range(10e9..80e9);
    let lambda = rng.gen_range(5e9..100e9);
    let sy = rng.gen_range(50e6..500e6);
    let hp = rng.gen_range(0.0..5e9);
    let amp = rng.gen_range(1e-4..2e-2);
    let g: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-amp..amp));
    let strain = Tensor2D::new(g[0], g[3], 0.0, 0.5 * (g[1] + g[2]));
    (strain, MaterialParams::new(lambda, mu, sy, hp))
}

/// 2 x 20 tanh model with slightly perturbed parameters. Zero biases would
/// put every output at 0 on the domain center, where the flow guard
/// switches terms on and off.
pub fn fd_model(
    arch: ArchitectureKind,
    mode: AdPddoMode,
    ds: &FieldDataset,
    cloud: &PointCloud,
    ctx: &LossContext,
) -> Model {
    let ops = build_operator_set(cloud, &build_families(cloud, 3, 3.5).unwrap()).unwrap();
    let spec = ModelSpec {
        arch,
        ad_mode: mode,
        layout: NetLayout::PerField,
        hidden: vec![20, 20],
        activation: Activation::Tanh,
        seed: 3,
    };
    let mut md = Model::new(
        spec,
        ds.plastic_mode,
        ctx.equilibrium,
        ctx.scales,
        cloud,
        Some(&ops),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for net in &mut md.nets {
        for v in net.values_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    md
}

/// Max-norm relative error of the analytic gradient against central
/// differences on a spread of parameters of every network, and the
/// relative error on each material constant with a visible gradient.
pub fn fd_error(
    model: &mut Model,
    ctx: &LossContext,
    ds: &FieldDataset,
    m: &MaterialParams,
) -> f64 {
    let batch: Vec<usize> = (0..ds.len()).collect();
    let (_, grads, gm) = model.loss_and_gradient(ctx, ds, &batch, m).unwrap();
    let mut worst_diff = 0.0f64;
    let mut scale = 0.0f64;
    let h = 1e-5;
    for k in 0..model.nets.len() {
        let n = model.nets[k].len();
        for j in (0..n).step_by(n / 40 + 1).chain([n - 1]) {
            let orig = model.nets[k].values()[j];
            model.nets[k].values_mut()[j] = orig + h;
            let up = model.loss(ctx, ds, &batch, m).unwrap().total;
            model.nets[k].values_mut()[j] = orig - h;
            let down = model.loss(ctx, ds, &batch, m).unwrap().total;
            model.nets[k].values_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            worst_diff = worst_diff.max((fd - grads[k][j]).abs());
            scale = scale.max(fd.abs());
        }
    }
    let mut mat_err = 0.0f64;
    for p in MaterialParam::ALL {
        let v = m.get(p);
        let hv = 1e-6 * v;
        let (mut a, mut b) = (*m, *m);
        a.set(p, v + hv);
        b.set(p, v - hv);
        let fd = (model.loss(ctx, ds, &batch, &a).unwrap().total
            - model.loss(ctx, ds, &batch, &b).unwrap().total)
            / (2.0 * hv);
        let g = gm[p.index()];
        if fd.abs() * v > 1e-8 {
            mat_err = mat_err.max((fd - g).abs() / fd.abs());
        }
    }
    (worst_diff / scale).max(mat_err)
}

/// Harmonic elastic field on a 5 x 5 grid with equilibrium terms, and an
/// off-truth material.
pub fn elastic_case() -> (FieldDataset, PointCloud, LossContext, MaterialParams) {
    let cloud = build_grid(5, 5, 1.0, 1.0).unwrap();
    let truth = MaterialParams::benchmark();
    let ds =
        generate_elastic_manufactured(ElasticKind::HarmonicQuadratic { k: 1e-3 }, &truth, &cloud)
            .unwrap();
    let ctx = LossContext::new(
        &ds,
        Scales::from_dataset(&ds, &cloud),
        LossWeights::default(),
        None,
    )
    .unwrap();
    let mut m = truth;
    m.lambda *= 0.7;
    m.mu *= 1.2;
    (ds, cloud, ctx, m)
}

/// Wide plastic front on a 5 x 5 grid with some points on each side of
/// yield.
pub fn plastic_case() -> (FieldDataset, PointCloud, LossContext, MaterialParams) {
    let cloud = build_grid(5, 5, 1.0, 1.0).unwrap();
    let truth = MaterialParams::benchmark();
    let profile = PlasticProfile {
        front_y: 0.5,
        width: 0.3,
        ..PlasticProfile::default()
    };
    let (ds, summary) = generate_plastic_manufactured(&profile, &truth, &cloud).unwrap();
    assert!(summary.plastic_points > 0 && summary.plastic_points < ds.len());
    let ctx = LossContext::new(
        &ds,
        Scales::from_dataset(&ds, &cloud),
        LossWeights::default(),
        Some(true),
    )
    .unwrap();
    let mut m = truth;
    m.sigma_y0 *= 0.8;
    m.hp *= 1.5;
    (ds, cloud, ctx, m)
}
