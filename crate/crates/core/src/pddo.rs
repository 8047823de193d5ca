//! Discrete peridynamic differential operator.
//!
//! For every family the PD functions `g^{p1p2}` are expanded in the quadratic
//! basis `{1, xi1, xi2, xi1^2, xi2^2, xi1 xi2}` times the influence weight and
//! made orthogonal to the Taylor monomials:
//!
//! ```text
//! 1/(n1! n2!) * sum_j xi1^n1 xi2^n2 g^{p1p2}(xi_j) A_j = delta_{n1 p1} delta_{n2 p2}
//! ```
//!
//! which is the 6x6 system `A a = b` with `b = diag(1, 1, 1, 2, 2, 1)`. The
//! weights applied to field samples are `G^{p1p2}_j = g^{p1p2}(xi_j) A_j`, so
//! that `d^{p1+p2} f / dx^p1 dy^p2 (x) ~= sum_j f_j G^{p1p2}_j`.
//!
//! Sign convention: `xi_j = x_j - x` (member minus center), which makes
//! `f(x + xi_j) = f_j` and the discrete sums exact for quadratics.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::mesh::{PointCloud, PointFamily};

/// Number of quadratic basis terms in 2-D.
pub const BASIS_LEN: usize = 6;

/// `n1! n2!` for each basis term, in basis order.
pub const BASIS_FACTORIALS: [f64; BASIS_LEN] = [1.0, 1.0, 1.0, 2.0, 2.0, 1.0];

/// Relative pivot magnitude below which the (equilibrated) moment matrix is
/// treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

/// Derivative orders `(p1, p2)` in x and y with `p1 + p2 <= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DerivativeTag {
    p1: u8,
    p2: u8,
}

impl DerivativeTag {
    pub const VALUE: Self = Self { p1: 0, p2: 0 };
    pub const DX: Self = Self { p1: 1, p2: 0 };
    pub const DY: Self = Self { p1: 0, p2: 1 };
    pub const DXX: Self = Self { p1: 2, p2: 0 };
    pub const DYY: Self = Self { p1: 0, p2: 2 };
    pub const DXY: Self = Self { p1: 1, p2: 1 };

    /// All six tags in basis order.
    pub const ALL: [Self; BASIS_LEN] = [
        Self::VALUE,
        Self::DX,
        Self::DY,
        Self::DXX,
        Self::DYY,
        Self::DXY,
    ];

    pub fn new(p1: u8, p2: u8) -> Result<Self> {
        let tag = Self { p1, p2 };
        if Self::ALL.contains(&tag) {
            Ok(tag)
        } else {
            Err(Error::invalid(format!("no derivative tag ({p1},{p2})")))
        }
    }

    pub fn p1(self) -> u8 {
        self.p1
    }

    pub fn p2(self) -> u8 {
        self.p2
    }

    pub fn order(self) -> u8 {
        self.p1 + self.p2
    }

    /// Position in the basis ordering.
    pub fn index(self) -> usize {
        match (self.p1, self.p2) {
            (0, 0) => 0,
            (1, 0) => 1,
            (0, 1) => 2,
            (2, 0) => 3,
            (0, 2) => 4,
            (1, 1) => 5,
            _ => unreachable!("tags are validated on construction"),
        }
    }
}

impl fmt::Display for DerivativeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.p1, self.p2)
    }
}

/// Quadratic basis evaluated at `xi`.
pub fn monomials(xi: [f64; 2]) -> [f64; BASIS_LEN] {
    let [a, b] = xi;
    [1.0, a, b, a * a, b * b, a * b]
}

pub type Mat6 = [[f64; BASIS_LEN]; BASIS_LEN];

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    pub point: usize,
    /// Weighted moment matrix `A`.
    pub moments: Mat6,
    /// Right-hand side `b`.
    pub rhs: Mat6,
    /// `coefficients[p][q] = a^{p}_{q}`: row per derivative tag, column per
    /// basis term. `None` until solved.
    pub coefficients: Option<Mat6>,
}

impl MomentSystem {
    /// `max |A a^T - b|` over all entries.
    pub fn residual(&self) -> Option<f64> {
        let a = self.coefficients.as_ref()?;
        let mut worst = 0.0f64;
        for r in 0..BASIS_LEN {
            for p in 0..BASIS_LEN {
                let lhs: f64 = (0..BASIS_LEN).map(|q| self.moments[r][q] * a[p][q]).sum();
                worst = worst.max((lhs - self.rhs[r][p]).abs());
            }
        }
        Some(worst)
    }
}

pub fn assemble_moment_matrix(family: &PointFamily) -> MomentSystem {
    let mut moments = [[0.0; BASIS_LEN]; BASIS_LEN];
    for ((xi, w), area) in family.xi.iter().zip(&family.weights).zip(&family.areas) {
        let m = monomials(*xi);
        let scale = w * area;
        for r in 0..BASIS_LEN {
            for c in 0..BASIS_LEN {
                moments[r][c] += scale * m[r] * m[c];
            }
        }
    }
    let mut rhs = [[0.0; BASIS_LEN]; BASIS_LEN];
    for (k, f) in BASIS_FACTORIALS.iter().enumerate() {
        rhs[k][k] = *f;
    }
    MomentSystem {
        point: family.center,
        moments,
        rhs,
        coefficients: None,
    }
}

/// Solves `A a^T = b` by LU with partial pivoting on the symmetrically
/// equilibrated matrix `D A D`, `D = diag(A_ii^{-1/2})`.
pub fn solve_pd_coefficients(mut ms: MomentSystem) -> Result<MomentSystem> {
    let n = BASIS_LEN;
    let mut scale = [0.0; BASIS_LEN];
    for (i, s) in scale.iter_mut().enumerate() {
        let d = ms.moments[i][i];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularMomentMatrix {
                point: ms.point,
                condition: f64::INFINITY,
            });
        }
        *s = 1.0 / d.sqrt();
    }
    let mut lu = [[0.0; BASIS_LEN]; BASIS_LEN];
    let mut max_abs = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            lu[r][c] = scale[r] * ms.moments[r][c] * scale[c];
            max_abs = max_abs.max(lu[r][c].abs());
        }
    }
    let mut perm = [0usize, 1, 2, 3, 4, 5];
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&a, &b| lu[a][k].abs().total_cmp(&lu[b][k].abs()))
            .unwrap();
        let pv = lu[piv][k].abs();
        pmin = pmin.min(pv);
        pmax = pmax.max(pv);
        if pv < SINGULAR_PIVOT * max_abs {
            return Err(Error::SingularMomentMatrix {
                point: ms.point,
                condition: if pv > 0.0 { pmax / pv } else { f64::INFINITY },
            });
        }
        lu.swap(k, piv);
        perm.swap(k, piv);
        for r in k + 1..n {
            let f = lu[r][k] / lu[k][k];
            lu[r][k] = f;
            for c in k + 1..n {
                lu[r][c] -= f * lu[k][c];
            }
        }
    }
    log::trace!(
        "point {}: equilibrated pivot ratio {:.3e}",
        ms.point,
        pmax / pmin
    );

    let mut coeffs = [[0.0; BASIS_LEN]; BASIS_LEN];
    for p in 0..n {
        // column p of D b
        let mut y = [0.0; BASIS_LEN];
        for r in 0..n {
            y[r] = scale[perm[r]] * ms.rhs[perm[r]][p];
        }
        for r in 0..n {
            for c in 0..r {
                y[r] -= lu[r][c] * y[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                y[r] -= lu[r][c] * y[c];
            }
            y[r] /= lu[r][r];
        }
        for q in 0..n {
            coeffs[p][q] = scale[q] * y[q];
        }
    }
    ms.coefficients = Some(coeffs);
    Ok(ms)
}

/// Per-point discrete operator: G weights for each tag, aligned with the
/// family members.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorEntry {
    pub center: usize,
    pub members: Vec<usize>,
    pub slots: Vec<Option<usize>>,
    /// `weights[tag.index()][member]`, in m^-(p1+p2).
    pub weights: [Vec<f64>; BASIS_LEN],
}

impl OperatorEntry {
    pub fn weights(&self, tag: DerivativeTag) -> &[f64] {
        &self.weights[tag.index()]
    }

    /// Weights laid out over the full stencil, zero in empty slots.
    pub fn slot_weights(&self, tag: DerivativeTag) -> Vec<f64> {
        let w = self.weights(tag);
        self.slots.iter().map(|s| s.map_or(0.0, |m| w[m])).collect()
    }
}

pub fn evaluate_g_weights(family: &PointFamily, ms: &MomentSystem) -> Result<OperatorEntry> {
    let coeffs = ms
        .coefficients
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("point {}: moment system not solved", ms.point)))?;
    Ok(g_weights_from_coefficients(family, coeffs))
}

pub(crate) fn g_weights_from_coefficients(family: &PointFamily, coeffs: &Mat6) -> OperatorEntry {
    let mut weights: [Vec<f64>; BASIS_LEN] = Default::default();
    for w in weights.iter_mut() {
        w.reserve(family.len());
    }
    for ((xi, w), area) in family.xi.iter().zip(&family.weights).zip(&family.areas) {
        let m = monomials(*xi);
        for (p, out) in weights.iter_mut().enumerate() {
            let g: f64 = coeffs[p].iter().zip(&m).map(|(a, mq)| a * mq).sum();
            out.push(w * g * area);
        }
    }
    OperatorEntry {
        center: family.center,
        members: family.members.clone(),
        slots: family.slots.clone(),
        weights,
    }
}

/// Worst violation of the 36 discrete orthogonality conditions.
pub fn orthogonality_residual(family: &PointFamily, entry: &OperatorEntry) -> f64 {
    let mut worst = 0.0f64;
    for (p, gw) in entry.weights.iter().enumerate() {
        let mut moments = [0.0; BASIS_LEN];
        for (xi, g) in family.xi.iter().zip(gw) {
            let m = monomials(*xi);
            for n in 0..BASIS_LEN {
                moments[n] += m[n] * g;
            }
        }
        for n in 0..BASIS_LEN {
            let target = if n == p { 1.0 } else { 0.0 };
            worst = worst.max((moments[n] / BASIS_FACTORIALS[n] - target).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdOperatorSet {
    pub entries: Vec<OperatorEntry>,
}

impl PdOperatorSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, point: usize) -> &OperatorEntry {
        &self.entries[point]
    }

    pub fn slot_count(&self) -> usize {
        self.entries.first().map_or(0, |e| e.slots.len())
    }
}

/// Assembles, solves and evaluates the operator of every family, in point order.
pub fn build_operator_set(cloud: &PointCloud, families: &[PointFamily]) -> Result<PdOperatorSet> {
    if families.len() != cloud.len() {
        return Err(Error::invalid(format!(
            "{} families for {} points",
            families.len(),
            cloud.len()
        )));
    }
    let mut entries = Vec::with_capacity(families.len());
    let mut failures = Vec::new();
    for fam in families {
        let built = solve_pd_coefficients(assemble_moment_matrix(fam))
            .and_then(|ms| evaluate_g_weights(fam, &ms));
        match built {
            Ok(e) => entries.push(e),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::OperatorBuild { failures });
    }
    Ok(PdOperatorSet { entries })
}

/// `out(x) = sum_j f_j G^{tag}_j` at every point.
pub fn apply_operator(ops: &PdOperatorSet, field: &[f64], tag: DerivativeTag) -> Result<Vec<f64>> {
    if field.len() != ops.len() {
        return Err(Error::invalid(format!(
            "field has {} values for {} operator points",
            field.len(),
            ops.len()
        )));
    }
    Ok(ops
        .entries
        .iter()
        .map(|e| {
            e.members
                .iter()
                .zip(e.weights(tag))
                .map(|(&m, g)| field[m] * g)
                .sum()
        })
        .collect())
}

const TABLE_MAGIC: &str = "# pddo-operators v1";

/// Writes the operator set as a whitespace-delimited text table; see
/// `docs/formats.md`.
pub fn write_operator_table<W: Write>(ops: &PdOperatorSet, mut out: W) -> Result<()> {
    writeln!(out, "{TABLE_MAGIC}")?;
    writeln!(out, "# points {} slots {}", ops.len(), ops.slot_count())?;
    writeln!(out, "# <point> slots <n> <member-or--1>...")?;
    writeln!(out, "# <point> <tag> <n> <member>... <G>...")?;
    for e in &ops.entries {
        write!(out, "{} slots {}", e.center, e.slots.len())?;
        for s in &e.slots {
            match s {
                Some(m) => write!(out, " {m}")?,
                None => write!(out, " -1")?,
            }
        }
        writeln!(out)?;
        for tag in DerivativeTag::ALL {
            write!(out, "{} {} {}", e.center, tag, e.members.len())?;
            for m in &e.members {
                write!(out, " {m}")?;
            }
            for g in e.weights(tag) {
                write!(out, " {g:e}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn read_operator_table<R: BufRead>(input: R) -> Result<PdOperatorSet> {
    let path = std::path::PathBuf::from("<operator table>");
    let err = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut entries: Vec<OperatorEntry> = Vec::new();
    let mut saw_magic = false;
    for (k, line) in input.lines().enumerate() {
        let lineno = k + 1;
        let line = line?;
        if line.starts_with('#') {
            saw_magic |= line.trim() == TABLE_MAGIC;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_magic {
            return Err(err(lineno, "missing operator table header".into()));
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| err(lineno, format!("bad integer `{s}`")))
        };
        if tok.len() < 3 {
            return Err(err(lineno, "truncated row".into()));
        }
        let point = num(tok[0])?;
        let n = num(tok[2])?;
        if tok[1] == "slots" {
            if tok.len() != 3 + n {
                return Err(err(lineno, format!("expected {n} slots")));
            }
            let slots = tok[3..]
                .iter()
                .map(|s| match *s {
                    "-1" => Ok(None),
                    s => num(s).map(Some),
                })
                .collect::<Result<Vec<_>>>()?;
            if point != entries.len() {
                return Err(err(lineno, format!("point {point} out of order")));
            }
            entries.push(OperatorEntry {
                center: point,
                members: Vec::new(),
                slots,
                weights: Default::default(),
            });
            continue;
        }
        let tag_code = tok[1].as_bytes();
        if tag_code.len() != 2 {
            return Err(err(lineno, format!("bad tag `{}`", tok[1])));
        }
        let tag = DerivativeTag::new(
            tag_code[0].wrapping_sub(b'0'),
            tag_code[1].wrapping_sub(b'0'),
        )
        .map_err(|e| err(lineno, e.to_string()))?;
        if tok.len() != 3 + 2 * n {
            return Err(err(lineno, format!("expected {n} members and {n} weights")));
        }
        let entry = entries
            .last_mut()
            .filter(|e| e.center == point)
            .ok_or_else(|| {
                err(
                    lineno,
                    format!("weights for point {point} before its slot row"),
                )
            })?;
        let members = tok[3..3 + n]
            .iter()
            .map(|s| num(s))
            .collect::<Result<Vec<_>>>()?;
        let weights = tok[3 + n..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(lineno, format!("bad weight `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if entry.members.is_empty() {
            entry.members = members;
        } else if entry.members != members {
            return Err(err(lineno, "member list differs between tags".into()));
        }
        entry.weights[tag.index()] = weights;
    }
    Ok(PdOperatorSet { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_families, build_grid};

    fn grid_ops(n: usize, h: usize, factor: f64) -> (PointCloud, Vec<PointFamily>, PdOperatorSet) {
        let g = build_grid(n, n, 1.0, 1.0).unwrap();
        let fams = build_families(&g, h, factor).unwrap();
        let ops = build_operator_set(&g, &fams).unwrap();
        (g, fams, ops)
    }

    #[test]
    fn tags_are_the_six_quadratic_orders() {
        assert_eq!(DerivativeTag::ALL.len(), 6);
        for (k, t) in DerivativeTag::ALL.iter().enumerate() {
            assert_eq!(t.index(), k);
        }
        assert!(DerivativeTag::new(2, 1).is_err());
        assert!(DerivativeTag::new(3, 0).is_err());
        assert_eq!(DerivativeTag::DXY.to_string(), "11");
    }

    #[test]
    fn rhs_is_factorial_diagonal() {
        let (_, fams, _) = grid_ops(21, 3, 3.5);
        let ms = assemble_moment_matrix(&fams[0]);
        assert_eq!(ms.rhs[3][3], 2.0);
        assert_eq!(ms.rhs[4][4], 2.0);
        assert_eq!(ms.rhs[5][5], 1.0);
        assert_eq!(ms.rhs[0][1], 0.0);
    }

    #[test]
    fn identity_moments_solve_to_rhs() {
        let mut moments = [[0.0; 6]; 6];
        for (k, row) in moments.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        let mut rhs = [[0.0; 6]; 6];
        for k in 0..6 {
            rhs[k][k] = BASIS_FACTORIALS[k];
        }
        let ms = solve_pd_coefficients(MomentSystem {
            point: 0,
            moments,
            rhs,
            coefficients: None,
        })
        .unwrap();
        assert_eq!(ms.coefficients.unwrap(), rhs);
    }

    #[test]
    fn two_row_grid_is_singular() {
        // only two distinct y values: xi2^2 is a multiple of xi2
        let g = build_grid(9, 2, 1.0, 0.125).unwrap();
        let fams = build_families(&g, 3, 3.5).unwrap();
        let err = solve_pd_coefficients(assemble_moment_matrix(&fams[0])).unwrap_err();
        assert!(
            matches!(err, Error::SingularMomentMatrix { point: 0, .. }),
            "{err}"
        );
        match build_operator_set(&g, &fams).unwrap_err() {
            Error::OperatorBuild { failures } => assert_eq!(failures.len(), g.len()),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unsolved_system_has_no_weights() {
        let (_, fams, _) = grid_ops(9, 3, 3.5);
        let ms = assemble_moment_matrix(&fams[0]);
        assert!(evaluate_g_weights(&fams[0], &ms).is_err());
    }

    #[test]
    fn residual_after_solve() {
        let (_, fams, _) = grid_ops(21, 3, 3.5);
        for fam in &fams {
            let ms = solve_pd_coefficients(assemble_moment_matrix(fam)).unwrap();
            assert!(ms.residual().unwrap() <= 1e-9, "{}", ms.residual().unwrap());
        }
    }

    #[test]
    fn constant_field() {
        let (g, _, ops) = grid_ops(11, 3, 3.5);
        let f = vec![2.5; g.len()];
        for v in apply_operator(&ops, &f, DerivativeTag::VALUE).unwrap() {
            assert!((v - 2.5).abs() < 1e-11);
        }
        for tag in [DerivativeTag::DX, DerivativeTag::DXX] {
            for v in apply_operator(&ops, &f, tag).unwrap() {
                assert!(v.abs() < 1e-8, "{tag}: {v}");
            }
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let (_, _, ops) = grid_ops(9, 3, 3.5);
        assert!(apply_operator(&ops, &[1.0; 3], DerivativeTag::DX).is_err());
    }

    #[test]
    fn negative_controls_for_orthogonality() {
        let (_, fams, _) = grid_ops(21, 3, 3.5);
        let fam = &fams[10 * 21 + 10];
        let ms = solve_pd_coefficients(assemble_moment_matrix(fam)).unwrap();
        let mut perturbed = ms.coefficients.unwrap();
        for row in perturbed.iter_mut() {
            for a in row.iter_mut() {
                *a *= 1.0 + 1e-3;
            }
        }
        let e = g_weights_from_coefficients(fam, &perturbed);
        assert!(orthogonality_residual(fam, &e) >= 1e-4);
        let e = g_weights_from_coefficients(fam, &ms.rhs);
        assert!(orthogonality_residual(fam, &e) > 0.1);
    }

    #[test]
    fn table_round_trip() {
        let (_, _, ops) = grid_ops(7, 2, 3.5);
        let mut buf = Vec::new();
        write_operator_table(&ops, &mut buf).unwrap();
        let back = read_operator_table(buf.as_slice()).unwrap();
        assert_eq!(back, ops);
    }

    #[test]
    fn table_without_header_rejected() {
        let err = read_operator_table("0 slots 1 0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
