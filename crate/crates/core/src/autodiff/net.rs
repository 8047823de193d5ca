//! Fully connected networks.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out × in`) followed by the bias. Hidden layers apply the
//! activation; the last layer is affine.
//!
//! Besides outputs, a forward pass can propagate tangents along given input
//! directions. [`accumulate_gradient`] then pulls adjoints of both outputs and
//! tangents back to the parameters, so losses built from input derivatives
//! get exact parameter gradients.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    /// Value, first and second derivative.
    #[inline]
    pub fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            // subgradient 0 at the kink
            Activation::Relu => {
                if a > 0.0 {
                    (a, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            Activation::Linear => (a, 1.0, 0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, seed: u64) -> Result<Self> {
        let spec = Self {
            widths,
            activation,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::invalid(format!(
                "network needs at least one hidden layer, got widths {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::invalid(format!(
                "zero layer width in {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Number of affine maps.
    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    spec: NetworkSpec,
    values: Vec<f64>,
    // start of W for each layer; b follows directly
    offsets: Vec<usize>,
}

fn layer_offsets(widths: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(widths.len() - 1);
    let mut at = 0;
    for w in widths.windows(2) {
        offsets.push(at);
        at += w[1] * w[0] + w[1];
    }
    offsets
}

impl NetworkParams {
    pub fn from_values(spec: NetworkSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_count() {
            return Err(Error::invalid(format!(
                "network {:?} needs {} parameters, got {}",
                spec.widths,
                spec.param_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite network parameter"));
        }
        let offsets = layer_offsets(&spec.widths);
        Ok(Self {
            spec,
            values,
            offsets,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let n = spec.param_count();
        Self::from_values(spec, vec![0.0; n])
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row-major weight matrix of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let (o, i) = (self.spec.widths[l + 1], self.spec.widths[l]);
        &self.values[self.offsets[l]..self.offsets[l] + o * i]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, i) = (self.spec.widths[l + 1], self.spec.widths[l]);
        let start = self.offsets[l];
        &mut self.values[start..start + o * i]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (o, i) = (self.spec.widths[l + 1], self.spec.widths[l]);
        let start = self.offsets[l] + o * i;
        &self.values[start..start + o]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (o, i) = (self.spec.widths[l + 1], self.spec.widths[l]);
        let start = self.offsets[l] + o * i;
        &mut self.values[start..start + o]
    }
}

/// Glorot-uniform weights and zero biases drawn from a ChaCha8 stream.
pub fn init_params(spec: &NetworkSpec) -> Result<NetworkParams> {
    let mut params = NetworkParams::zeros(spec.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for l in 0..spec.layer_count() {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        for w in params.weights_mut(l) {
            *w = dist.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Forward pass state kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct EvalRecord {
    pub outputs: Vec<f64>,
    /// One output tangent per input direction.
    pub tangents: Vec<Vec<f64>>,
    input: Vec<f64>,
    directions: Vec<Vec<f64>>,
    // per hidden layer
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    // [direction][hidden layer]
    pre_dot: Vec<Vec<Vec<f64>>>,
    post_dot: Vec<Vec<Vec<f64>>>,
}

impl EvalRecord {
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }
}

#[inline]
fn affine(w: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut Vec<f64>) {
    let n_in = x.len();
    out.clear();
    for (r, row) in w.chunks_exact(n_in).enumerate() {
        let mut acc = b.map_or(0.0, |b| b[r]);
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

#[inline]
fn affine_t(w: &[f64], n_in: usize, y: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (row, &yr) in w.chunks_exact(n_in).zip(y) {
        if yr == 0.0 {
            continue;
        }
        for (o, wi) in out.iter_mut().zip(row) {
            *o += wi * yr;
        }
    }
}

#[inline]
fn outer_add(g: &mut [f64], n_in: usize, y: &[f64], x: &[f64]) {
    for (row, &yr) in g.chunks_exact_mut(n_in).zip(y) {
        if yr == 0.0 {
            continue;
        }
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += yr * xi;
        }
    }
}

fn check_input(params: &NetworkParams, input: &[f64]) -> Result<()> {
    if input.len() != params.spec.inputs() {
        return Err(Error::invalid(format!(
            "network expects {} inputs, got {}",
            params.spec.inputs(),
            input.len()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite network input"));
    }
    Ok(())
}

pub fn forward(params: &NetworkParams, input: &[f64]) -> Result<EvalRecord> {
    forward_with_tangents(params, input, &[])
}

/// Forward pass propagating the tangent of each input direction.
pub fn forward_with_tangents(
    params: &NetworkParams,
    input: &[f64],
    directions: &[Vec<f64>],
) -> Result<EvalRecord> {
    check_input(params, input)?;
    for d in directions {
        if d.len() != input.len() {
            return Err(Error::invalid(
                "tangent direction length differs from input length",
            ));
        }
    }
    let spec = &params.spec;
    let act = spec.activation;
    let hidden = spec.layer_count() - 1;
    let nd = directions.len();

    let mut pre = Vec::with_capacity(hidden);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(hidden);
    let mut pre_dot = vec![Vec::with_capacity(hidden); nd];
    let mut post_dot: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(hidden); nd];

    for l in 0..hidden {
        let z_in: &[f64] = if l == 0 { input } else { &post[l - 1] };
        let mut a = Vec::with_capacity(spec.widths[l + 1]);
        affine(params.weights(l), Some(params.bias(l)), z_in, &mut a);
        let mut z = Vec::with_capacity(a.len());
        let mut dz = Vec::with_capacity(a.len());
        for &ai in &a {
            let (f, d, _) = act.eval(ai);
            z.push(f);
            dz.push(d);
        }
        for k in 0..nd {
            let zd_in: &[f64] = if l == 0 {
                &directions[k]
            } else {
                &post_dot[k][l - 1]
            };
            let mut ad = Vec::with_capacity(a.len());
            affine(params.weights(l), None, zd_in, &mut ad);
            let zd: Vec<f64> = ad.iter().zip(&dz).map(|(x, d)| x * d).collect();
            pre_dot[k].push(ad);
            post_dot[k].push(zd);
        }
        pre.push(a);
        post.push(z);
    }

    let last = hidden;
    let mut outputs = Vec::with_capacity(spec.outputs());
    affine(
        params.weights(last),
        Some(params.bias(last)),
        &post[hidden - 1],
        &mut outputs,
    );
    let mut tangents = Vec::with_capacity(nd);
    for k in 0..nd {
        let mut t = Vec::with_capacity(spec.outputs());
        affine(params.weights(last), None, &post_dot[k][hidden - 1], &mut t);
        tangents.push(t);
    }

    Ok(EvalRecord {
        outputs,
        tangents,
        input: input.to_vec(),
        directions: directions.to_vec(),
        pre,
        post,
        pre_dot,
        post_dot,
    })
}

/// Full Jacobian `d output_k / d input_i`, shape outputs × inputs.
pub fn input_derivatives(params: &NetworkParams, input: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = input.len();
    let dirs: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut d = vec![0.0; n];
            d[i] = 1.0;
            d
        })
        .collect();
    let rec = forward_with_tangents(params, input, &dirs)?;
    let m = params.spec.outputs();
    Ok((0..m)
        .map(|k| (0..n).map(|i| rec.tangents[i][k]).collect())
        .collect())
}

/// Adds `d L / d params` to `grad`, given `d L / d outputs` and optional
/// `d L / d tangents[k]` for each direction of the record.
pub fn accumulate_gradient(
    params: &NetworkParams,
    record: &EvalRecord,
    output_adjoint: &[f64],
    tangent_adjoints: &[Vec<f64>],
    grad: &mut [f64],
) -> Result<()> {
    let spec = &params.spec;
    if grad.len() != params.len() {
        return Err(Error::invalid(
            "gradient buffer length differs from parameter count",
        ));
    }
    if output_adjoint.len() != spec.outputs() {
        return Err(Error::invalid(
            "output adjoint length differs from network outputs",
        ));
    }
    if tangent_adjoints.len() > record.tangents.len() {
        return Err(Error::invalid(
            "more tangent adjoints than recorded directions",
        ));
    }
    let act = spec.activation;
    let hidden = spec.layer_count() - 1;
    let nd = tangent_adjoints
        .iter()
        .rposition(|t| t.iter().any(|&v| v != 0.0))
        .map_or(0, |p| p + 1);

    // output layer
    let last = hidden;
    let n_in = spec.widths[last];
    {
        let start = params.offsets[last];
        let (gw, gb) = grad[start..start + spec.widths[last + 1] * (n_in + 1)]
            .split_at_mut(spec.widths[last + 1] * n_in);
        outer_add(gw, n_in, output_adjoint, &record.post[hidden - 1]);
        for (g, a) in gb.iter_mut().zip(output_adjoint) {
            *g += a;
        }
        for k in 0..nd {
            outer_add(
                gw,
                n_in,
                &tangent_adjoints[k],
                &record.post_dot[k][hidden - 1],
            );
        }
    }
    let mut zbar = vec![0.0; n_in];
    affine_t(params.weights(last), n_in, output_adjoint, &mut zbar);
    let mut zdbar: Vec<Vec<f64>> = (0..nd)
        .map(|k| {
            let mut v = vec![0.0; n_in];
            affine_t(params.weights(last), n_in, &tangent_adjoints[k], &mut v);
            v
        })
        .collect();

    for l in (0..hidden).rev() {
        let width = spec.widths[l + 1];
        let n_in = spec.widths[l];
        let mut abar = vec![0.0; width];
        let mut adbar = vec![vec![0.0; width]; nd];
        for r in 0..width {
            let (_, d1, d2) = act.eval(record.pre[l][r]);
            let mut ab = d1 * zbar[r];
            for k in 0..nd {
                adbar[k][r] = d1 * zdbar[k][r];
                ab += d2 * record.pre_dot[k][l][r] * zdbar[k][r];
            }
            abar[r] = ab;
        }
        let z_in: &[f64] = if l == 0 {
            &record.input
        } else {
            &record.post[l - 1]
        };
        let start = params.offsets[l];
        let (gw, gb) = grad[start..start + width * (n_in + 1)].split_at_mut(width * n_in);
        outer_add(gw, n_in, &abar, z_in);
        for (g, a) in gb.iter_mut().zip(&abar) {
            *g += a;
        }
        for k in 0..nd {
            let zd_in: &[f64] = if l == 0 {
                &record.directions[k]
            } else {
                &record.post_dot[k][l - 1]
            };
            outer_add(gw, n_in, &adbar[k], zd_in);
        }
        if l > 0 {
            zbar = vec![0.0; n_in];
            affine_t(params.weights(l), n_in, &abar, &mut zbar);
            for k in 0..nd {
                zdbar[k] = vec![0.0; n_in];
                affine_t(params.weights(l), n_in, &adbar[k], &mut zdbar[k]);
            }
        }
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "nlpinn-checkpoint v1";

/// Writes networks as a text header followed by little-endian `f64` values.
/// `extra` lines are stored verbatim in the header.
pub fn write_checkpoint<W: Write>(
    mut out: W,
    nets: &[NetworkParams],
    extra: &[String],
) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "networks {}", nets.len())?;
    for net in nets {
        let s = net.spec();
        let widths: Vec<String> = s.widths.iter().map(|w| w.to_string()).collect();
        writeln!(
            out,
            "net widths={} activation={} seed={} params={}",
            widths.join(","),
            s.activation,
            s.seed,
            net.len()
        )?;
    }
    for line in extra {
        if line.contains('\n') || line == "END" {
            return Err(Error::invalid(
                "checkpoint header line must be a single line",
            ));
        }
        writeln!(out, "{line}")?;
    }
    writeln!(out, "END")?;
    for net in nets {
        for v in net.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn header_err(message: impl Into<String>) -> Error {
    Error::Config(format!("checkpoint: {}", message.into()))
}

/// Reads a checkpoint; returns the networks and the extra header lines.
pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(Vec<NetworkParams>, Vec<String>)> {
    let mut line = String::new();
    let mut next_line = |input: &mut R| -> Result<String> {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(header_err("unexpected end of header"));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(&mut input)? != CHECKPOINT_MAGIC {
        return Err(header_err("missing magic line"));
    }
    let count_line = next_line(&mut input)?;
    let count: usize = count_line
        .strip_prefix("networks ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err(format!("bad network count line `{count_line}`")))?;
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let l = next_line(&mut input)?;
        let rest = l
            .strip_prefix("net ")
            .ok_or_else(|| header_err(format!("bad network line `{l}`")))?;
        let mut widths = None;
        let mut activation = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| header_err(format!("bad field `{field}`")))?;
            match k {
                "widths" => {
                    widths = Some(
                        v.split(',')
                            .map(|w| w.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| header_err(e.to_string()))?,
                    )
                }
                "activation" => activation = Some(v.parse::<Activation>()?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| header_err(e.to_string()))?),
                "params" => {}
                other => return Err(header_err(format!("unknown field `{other}`"))),
            }
        }
        let spec = NetworkSpec::new(
            widths.ok_or_else(|| header_err("missing widths"))?,
            activation.ok_or_else(|| header_err("missing activation"))?,
            seed.ok_or_else(|| header_err("missing seed"))?,
        )?;
        specs.push(spec);
    }
    let mut extra = Vec::new();
    loop {
        let l = next_line(&mut input)?;
        if l == "END" {
            break;
        }
        extra.push(l);
    }
    let mut nets = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for spec in specs {
        let n = spec.param_count();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            input
                .read_exact(&mut buf)
                .map_err(|_| header_err("truncated parameter block"))?;
            values.push(f64::from_le_bytes(buf));
        }
        nets.push(NetworkParams::from_values(spec, values)?);
    }
    Ok((nets, extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small(seed: u64, act: Activation) -> NetworkParams {
        let spec = NetworkSpec::new(vec![3, 5, 4, 2], act, seed).unwrap();
        let mut p = init_params(&spec).unwrap();
        // nonzero biases so every code path is exercised
        for (i, b) in p.bias_mut(0).iter_mut().enumerate() {
            *b = 0.1 * i as f64 - 0.2;
        }
        p.bias_mut(1)[2] = 0.3;
        p
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::new(vec![2, 20, 20, 1], Activation::Tanh, 7).unwrap();
        let a = init_params(&spec).unwrap();
        let b = init_params(&spec).unwrap();
        assert_eq!(a, b);
        let other = init_params(&NetworkSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.values(), other.values());
        for l in 0..3 {
            assert!(a.bias(l).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn glorot_bounds() {
        let spec = NetworkSpec::new(vec![2, 100, 100, 100, 100, 1], Activation::Tanh, 1).unwrap();
        assert_eq!(spec.layer_count(), 5);
        assert_eq!(spec.widths.len(), 6);
        let p = init_params(&spec).unwrap();
        let lim = (6.0f64 / 200.0).sqrt();
        assert!(p.weights(1).iter().all(|w| w.abs() <= lim));
        assert_eq!(p.len(), 2 * 100 + 100 + 3 * (100 * 100 + 100) + 100 + 1);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(NetworkSpec::new(vec![2, 1], Activation::Tanh, 0).is_err());
        assert!(NetworkSpec::new(vec![2, 0, 1], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn zero_params_give_zero_output() {
        let p = NetworkParams::zeros(NetworkSpec::new(vec![2, 4, 1], Activation::Tanh, 0).unwrap())
            .unwrap();
        assert_eq!(forward(&p, &[0.3, -2.0]).unwrap().outputs, vec![0.0]);
    }

    #[test]
    fn linear_net_is_affine() {
        let spec = NetworkSpec::new(vec![2, 2, 1], Activation::Linear, 0).unwrap();
        let mut p = NetworkParams::zeros(spec).unwrap();
        p.weights_mut(0).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        p.weights_mut(1).copy_from_slice(&[2.0, -3.0]);
        p.bias_mut(1)[0] = 0.5;
        let x = [0.7, 0.1];
        assert_eq!(forward(&p, &x).unwrap().outputs[0], 2.0 * 0.7 - 0.3 + 0.5);
        assert_eq!(input_derivatives(&p, &x).unwrap(), vec![vec![2.0, -3.0]]);
    }

    #[test]
    fn tanh_slope_at_origin() {
        let spec = NetworkSpec::new(vec![1, 1, 1], Activation::Tanh, 0).unwrap();
        let mut p = NetworkParams::zeros(spec).unwrap();
        p.weights_mut(0)[0] = 1.7;
        p.weights_mut(1)[0] = 1.0;
        assert_eq!(forward(&p, &[0.0]).unwrap().outputs[0], 0.0);
        assert_eq!(input_derivatives(&p, &[0.0]).unwrap()[0][0], 1.7);
    }

    #[test]
    fn rejects_bad_input() {
        let p = small(1, Activation::Tanh);
        assert!(forward(&p, &[0.0, 1.0]).is_err());
        assert!(forward(&p, &[0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn input_derivatives_match_finite_differences() {
        let p = small(3, Activation::Tanh);
        let x = [0.2, -0.5, 0.9];
        let jac = input_derivatives(&p, &x).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fp = forward(&p, &xp).unwrap().outputs;
            let fm = forward(&p, &xm).unwrap().outputs;
            for k in 0..2 {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                assert_relative_eq!(jac[k][i], fd, max_relative = 1e-6);
            }
        }
    }

    // loss = sum_k a_k out_k + sum_k (b_k . tangent_k)^2 with two directions
    fn mixed_loss(p: &NetworkParams, x: &[f64], dirs: &[Vec<f64>]) -> f64 {
        let rec = forward_with_tangents(p, x, dirs).unwrap();
        let a = [0.7, -1.3];
        let mut l: f64 = rec.outputs.iter().zip(a).map(|(o, a)| o * a).sum();
        for t in &rec.tangents {
            l += (t[0] - 0.5 * t[1]).powi(2);
        }
        l
    }

    #[test]
    fn mixed_gradient_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Linear] {
            let p = small(11, act);
            let x = vec![0.3, 0.1, -0.6];
            let dirs = vec![vec![1.0, 0.0, 0.5], vec![0.0, 2.0, 0.0]];
            let rec = forward_with_tangents(&p, &x, &dirs).unwrap();
            let tadj: Vec<Vec<f64>> = rec
                .tangents
                .iter()
                .map(|t| {
                    let r = t[0] - 0.5 * t[1];
                    vec![2.0 * r, -r]
                })
                .collect();
            let mut grad = vec![0.0; p.len()];
            accumulate_gradient(&p, &rec, &[0.7, -1.3], &tadj, &mut grad).unwrap();
            let h = 1e-6;
            for i in 0..p.len() {
                let mut pp = p.clone();
                pp.values_mut()[i] += h;
                let mut pm = p.clone();
                pm.values_mut()[i] -= h;
                let fd = (mixed_loss(&pp, &x, &dirs) - mixed_loss(&pm, &x, &dirs)) / (2.0 * h);
                let err = (grad[i] - fd).abs();
                assert!(
                    err <= 1e-6 * fd.abs().max(1e-3),
                    "param {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let nets = vec![small(1, Activation::Tanh), small(2, Activation::Relu)];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &nets, &["material mu=2.6e10".to_string()]).unwrap();
        let (back, extra) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, nets);
        assert_eq!(extra, vec!["material mu=2.6e10".to_string()]);
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        assert!(read_checkpoint(&b"garbage\n"[..]).is_err());
    }
}
