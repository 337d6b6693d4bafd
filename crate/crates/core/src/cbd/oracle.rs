//! Coupling feasibility for a two-variable, two-ordering system, decided by
//! an exact Phase-I simplex over the 16 atoms of (A, B, C, D) =
//! (X1 in o1, X2 in o1, X1 in o2, X2 in o2).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{CbdError, CbdSystem};

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

/// Exact (e_a, e_b, j) of a within-ordering distribution. Float rounding
/// can leave an atom slightly negative; such atoms are clamped to zero and
/// the rest renormalized, so the result is a valid distribution.
fn project(e_a: f64, e_b: f64, j: f64) -> [BigRational; 3] {
    let (one, four) = (BigRational::one(), BigRational::from_integer(BigInt::from(4)));
    let (a, b, j) = (rat(e_a), rat(e_b), rat(j));
    let mut atoms = [
        (&one + &a + &b + &j) / &four,
        (&one + &a - &b - &j) / &four,
        (&one - &a + &b - &j) / &four,
        (&one - &a - &b + &j) / &four,
    ];
    if atoms.iter().all(|x| !x.is_negative()) {
        return [a, b, j];
    }
    for x in &mut atoms {
        if x.is_negative() {
            *x = BigRational::zero();
        }
    }
    let total = atoms.iter().fold(BigRational::zero(), |acc, x| acc + x);
    let [pp, pm, mp, mm] = atoms.map(|x| x / &total);
    [
        &pp + &pm - &mp - &mm,
        &pp - &pm + &mp - &mm,
        &pp - &pm - &mp + &mm,
    ]
}

/// Whether some joint distribution of the four variables reproduces both
/// within-ordering joints while making each variable agree across orderings
/// as often as its marginals allow. Infeasible means contextual.
pub fn coupling_oracle(system: &CbdSystem) -> Result<bool, CbdError> {
    system.validate()?;
    let [e1_o1, e2_o1, j_o1] = project(system.e1_o1, system.e2_o1, system.j_o1);
    let [e1_o2, e2_o2, j_o2] = project(system.e1_o2, system.e2_o2, system.j_o2);

    // atom index bits: A = bit 3, B = bit 2, C = bit 1, D = bit 0; set bit = +1
    let sign = |atom: usize, bit: usize| if atom >> bit & 1 == 1 { 1i64 } else { -1 };
    let features: [Box<dyn Fn(usize) -> i64>; 9] = [
        Box::new(|_| 1),
        Box::new(move |a| sign(a, 3)),
        Box::new(move |a| sign(a, 2)),
        Box::new(move |a| sign(a, 3) * sign(a, 2)),
        Box::new(move |a| sign(a, 1)),
        Box::new(move |a| sign(a, 0)),
        Box::new(move |a| sign(a, 1) * sign(a, 0)),
        Box::new(move |a| sign(a, 3) * sign(a, 1)),
        Box::new(move |a| sign(a, 2) * sign(a, 0)),
    ];
    let one = BigRational::one();
    let rhs = [
        one.clone(),
        e1_o1.clone(),
        e2_o1.clone(),
        j_o1,
        e1_o2.clone(),
        e2_o2.clone(),
        j_o2,
        &one - (&e1_o1 - &e1_o2).abs(),
        &one - (&e2_o1 - &e2_o2).abs(),
    ];
    let a: Vec<Vec<BigRational>> = features
        .iter()
        .map(|f| (0..16).map(|atom| BigRational::from_integer(BigInt::from(f(atom)))).collect())
        .collect();
    Ok(feasible(a, rhs.to_vec()))
}

/// Exact test for the existence of x ≥ 0 with A x = b (Phase I with Bland's rule).
pub fn feasible(a: Vec<Vec<BigRational>>, b: Vec<BigRational>) -> bool {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    // tableau rows: [A | I | b] with b made nonnegative
    let mut t: Vec<Vec<BigRational>> = a
        .into_iter()
        .zip(b)
        .enumerate()
        .map(|(i, (mut row, rhs))| {
            let flip = rhs.is_negative();
            if flip {
                for v in &mut row {
                    *v = -v.clone();
                }
            }
            row.extend((0..m).map(|k| {
                if k == i {
                    BigRational::one()
                } else {
                    BigRational::zero()
                }
            }));
            row.push(if flip { -rhs } else { rhs });
            row
        })
        .collect();
    let cols = n + m;
    let mut basis: Vec<usize> = (n..n + m).collect();
    // objective: minimize the sum of artificials; reduced costs over columns
    loop {
        let mut cost = vec![BigRational::zero(); cols + 1];
        for c in n..cols {
            cost[c] = BigRational::one();
        }
        for (r, &bv) in basis.iter().enumerate() {
            if bv >= n {
                for c in 0..=cols {
                    cost[c] -= &t[r][c];
                }
            }
        }
        let Some(enter) = (0..cols).find(|&c| cost[c].is_negative()) else {
            // optimal: objective value is −cost[cols]
            return cost[cols].is_zero();
        };
        let mut leave: Option<(usize, BigRational)> = None;
        for r in 0..m {
            if t[r][enter].is_positive() {
                let ratio = &t[r][cols] / &t[r][enter];
                let better = match &leave {
                    None => true,
                    Some((lr, best)) => ratio < *best || (ratio == *best && basis[r] < basis[*lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((pr, _)) = leave else {
            // unbounded cannot happen for a bounded-below Phase I objective
            return false;
        };
        let pivot = t[pr][enter].clone();
        for v in &mut t[pr] {
            *v /= &pivot;
        }
        let prow = t[pr].clone();
        for (r, row) in t.iter_mut().enumerate() {
            if r != pr && !row[enter].is_zero() {
                let factor = row[enter].clone();
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= &factor * p;
                }
            }
        }
        basis[pr] = enter;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbd::Provenance;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn sys(e: [f64; 4], j1: f64, j2: f64) -> CbdSystem {
        CbdSystem {
            e1_o1: e[0],
            e2_o1: e[1],
            e1_o2: e[2],
            e2_o2: e[3],
            j_o1: j1,
            j_o2: j2,
            provenance: Provenance::Direct,
        }
    }

    #[test]
    fn fixture_systems() {
        assert!(!coupling_oracle(&sys([0.0; 4], 1.0, -1.0)).unwrap());
        assert!(coupling_oracle(&sys([0.2, -0.1, 0.2, -0.1], 0.3, 0.3)).unwrap());
        assert!(coupling_oracle(&sys([1.0, 0.0, -1.0, 0.0], 0.0, 0.0)).unwrap());
    }

    #[test]
    fn small_lp() {
        let r = |v: i64| BigRational::from_integer(BigInt::from(v));
        // x + y = 1, x - y = 3 has no nonnegative solution
        assert!(!feasible(vec![vec![r(1), r(1)], vec![r(1), r(-1)]], vec![r(1), r(3)]));
        assert!(feasible(vec![vec![r(1), r(1)], vec![r(1), r(-1)]], vec![r(2), r(0)]));
    }

    #[test]
    fn projection_repairs_tiny_negative_atoms() {
        let [a, b, j] = project(1.0, 1.0, 1.0 - 2e-10);
        let f = |x: &BigRational| x.to_f64().unwrap();
        assert!((f(&a) - 1.0).abs() < 1e-9 && (f(&b) - 1.0).abs() < 1e-9 && (f(&j) - 1.0).abs() < 1e-9);
        let one = BigRational::one();
        let mm = (&one - &a - &b + &j) / BigRational::from_integer(BigInt::from(4));
        assert!(!mm.is_negative());
    }

    fn ordering() -> impl Strategy<Value = (f64, f64, f64)> {
        prop::array::uniform4(0.0f64..1.0)
            .prop_filter("nonzero", |a| a.iter().sum::<f64>() > 1e-6)
            .prop_map(|a| {
                let t: f64 = a.iter().sum();
                let [pp, pm, mp, mm] = a.map(|x| x / t);
                (pp + pm - mp - mm, pp - pm + mp - mm, pp - pm - mp + mm)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn agrees_with_delta_c(o1 in ordering(), o2 in ordering()) {
            let s = CbdSystem { e1_o1: o1.0, e2_o1: o1.1, j_o1: o1.2, e1_o2: o2.0, e2_o2: o2.1, j_o2: o2.2, provenance: Provenance::Direct };
            let dc = crate::cbd::delta_c(&s).unwrap();
            prop_assume!(dc.abs() > 1e-9);
            prop_assert_eq!(coupling_oracle(&s).unwrap(), dc <= 0.0);
        }
    }
}
