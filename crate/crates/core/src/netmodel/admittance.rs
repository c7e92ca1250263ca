use nalgebra::DMatrix;

use super::{Branch, BusRecord};
use crate::error::{Error, Result};

/// Bus admittance matrix `Y = G + jB` with its structural sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// For each bus (0-based), the sorted 0-based columns of its structural
    /// nonzeros, the diagonal included.
    pub neighbors: Vec<Vec<usize>>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// Number of structurally nonzero entries.
    pub fn nnz(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// Standard branch pi-model assembly with off-nominal taps and phase shifters,
/// plus bus shunts.
pub fn build_admittance(n: usize, branches: &[Branch], buses: &[BusRecord]) -> Result<AdmittanceMatrix> {
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut connected = vec![vec![false; n]; n];

    for br in branches {
        let z2 = br.r * br.r + br.x * br.x;
        if !(z2 > 0.0) {
            return Err(Error::Singular(format!(
                "branch {}-{} has zero series impedance",
                br.from, br.to
            )));
        }
        if !(br.tap > 0.0) {
            return Err(Error::Singular(format!(
                "branch {}-{} has non-positive tap",
                br.from, br.to
            )));
        }
        let (f, t) = (br.from - 1, br.to - 1);
        // series admittance ys = 1/(r + jx)
        let (gs, bs) = (br.r / z2, -br.x / z2);
        let (tr, ti) = (br.tap * br.shift.cos(), br.tap * br.shift.sin());
        let tap2 = br.tap * br.tap;

        // Y_ff = (ys + j b/2)/|t|^2, Y_tt = ys + j b/2
        g[(f, f)] += gs / tap2;
        b[(f, f)] += (bs + br.b / 2.0) / tap2;
        g[(t, t)] += gs;
        b[(t, t)] += bs + br.b / 2.0;

        // Y_ft = -ys / conj(t), Y_tf = -ys / t
        let (cf_re, cf_im) = cdiv(-gs, -bs, tr, -ti);
        let (ct_re, ct_im) = cdiv(-gs, -bs, tr, ti);
        g[(f, t)] += cf_re;
        b[(f, t)] += cf_im;
        g[(t, f)] += ct_re;
        b[(t, f)] += ct_im;

        connected[f][t] = true;
        connected[t][f] = true;
    }
    for (k, bus) in buses.iter().enumerate() {
        g[(k, k)] += bus.g_shunt;
        b[(k, k)] += bus.b_shunt;
    }

    let neighbors = (0..n)
        .map(|i| (0..n).filter(|&j| j == i || connected[i][j]).collect())
        .collect();
    Ok(AdmittanceMatrix { g, b, neighbors })
}

fn cdiv(a: f64, b: f64, c: f64, d: f64) -> (f64, f64) {
    let den = c * c + d * d;
    ((a * c + b * d) / den, (b * c - a * d) / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{builtin_case, BusKind};

    fn bus(id: usize) -> BusRecord {
        BusRecord {
            id,
            original_id: id as u64,
            kind: BusKind::PQ,
            p_load: 0.0,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v: 1.0,
            theta: 0.0,
            p_ren: 0.0,
            q_ren: 0.0,
        }
    }

    fn line(from: usize, to: usize, r: f64, x: f64, b: f64) -> Branch {
        Branch {
            from,
            to,
            r,
            x,
            b,
            tap: 1.0,
            shift: 0.0,
        }
    }

    #[test]
    fn single_reactive_line() {
        let y = build_admittance(2, &[line(1, 2, 0.0, 0.1, 0.0)], &[bus(1), bus(2)]).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[-10.0, 10.0, 10.0, -10.0]);
        assert!((&y.b - expect).abs().max() < 1e-12);
        assert_eq!(y.g.abs().max(), 0.0);
    }

    #[test]
    fn zero_impedance_is_rejected() {
        let err = build_admittance(2, &[line(1, 2, 0.0, 0.0, 0.0)], &[bus(1), bus(2)]);
        assert!(matches!(err, Err(Error::Singular(_))));
    }

    #[test]
    fn row_sums_equal_shunt_injections() {
        // Without taps, each row of Y sums to the bus shunt plus half the
        // charging of every incident line.
        let case = builtin_case("case9").unwrap();
        let y = case.admittance();
        for i in 0..case.n_bus() {
            let (mut gr, mut br) = (0.0, 0.0);
            for j in 0..case.n_bus() {
                gr += y.g[(i, j)];
                br += y.b[(i, j)];
            }
            let charging: f64 = case
                .branches()
                .iter()
                .filter(|l| l.from == i + 1 || l.to == i + 1)
                .map(|l| l.b / 2.0)
                .sum();
            assert!((gr - case.buses()[i].g_shunt).abs() < 1e-10, "row {i}");
            assert!((br - case.buses()[i].b_shunt - charging).abs() < 1e-10, "row {i}");
        }
    }

    /// Independent assembly: build each branch's 2x2 primitive admittance with
    /// complex arithmetic and scatter it.
    fn stamp_oracle(n: usize, branches: &[Branch]) -> (DMatrix<f64>, DMatrix<f64>) {
        type C = nalgebra::Complex<f64>;
        let mut y = DMatrix::<C>::zeros(n, n);
        for br in branches {
            let ys = C::new(1.0, 0.0) / C::new(br.r, br.x);
            let half = C::new(0.0, br.b / 2.0);
            let t = C::from_polar(br.tap, br.shift);
            let prim = [[(ys + half) / (t * t.conj()), -ys / t.conj()], [-ys / t, ys + half]];
            let idx = [br.from - 1, br.to - 1];
            for a in 0..2 {
                for c in 0..2 {
                    y[(idx[a], idx[c])] += prim[a][c];
                }
            }
        }
        (y.map(|z| z.re), y.map(|z| z.im))
    }

    #[test]
    fn matches_stamping_oracle() {
        for name in ["case9", "case39"] {
            let case = builtin_case(name).unwrap();
            let (g, b) = stamp_oracle(case.n_bus(), case.branches());
            let y = case.admittance();
            assert!((&y.g - g).abs().max() < 1e-10, "{name}");
            assert!((&y.b - b).abs().max() < 1e-10, "{name}");
        }
    }

    #[test]
    fn structurally_symmetric() {
        let case = builtin_case("case39").unwrap();
        let y = case.admittance();
        for (i, row) in y.neighbors.iter().enumerate() {
            for &j in row {
                assert!(y.neighbors[j].contains(&i));
            }
            for j in 0..case.n_bus() {
                if !row.contains(&j) {
                    assert_eq!(y.g[(i, j)], 0.0);
                    assert_eq!(y.b[(i, j)], 0.0);
                }
            }
        }
    }
}
