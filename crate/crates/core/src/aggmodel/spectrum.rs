//! Eigenvalues of bin transition matrices.
//!
//! Transition matrices are sparse and mostly reducible: transient bins feed
//! into a few recurrent classes. Permuting to block-triangular form by
//! strongly connected components and solving each diagonal block separately
//! keeps long transient chains (numerically defective Jordan blocks) from
//! scattering their eigenvalues into spurious complex pairs.

use nalgebra::{Complex, DMatrix, Schur};
use serde::{Deserialize, Serialize};

use super::transition::TransitionModel;
use crate::error::{Error, Result};

/// QR sweeps allowed per eigenvalue.
pub const SWEEPS_PER_EIGENVALUE: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumClass {
    Real,
    ComplexPairs,
}

impl std::fmt::Display for SpectrumClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Real => "real spectrum",
            Self::ComplexPairs => "complex pairs present",
        })
    }
}

/// Eigenvalues of the model's one-interval closed loop, sorted by modulus
/// descending. `i_max` is required for post-reset models.
pub fn spectrum(model: &TransitionModel, i_max: Option<usize>) -> Result<Vec<Complex<f64>>> {
    eigenvalues(&model.closed_loop_matrix(i_max)?)
}

/// Eigenvalues of a square matrix, sorted by modulus descending.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("eigenvalues of a {}x{} matrix", m.nrows(), m.ncols())));
    }
    let mut out = Vec::with_capacity(m.nrows());
    for comp in strong_components(m) {
        if comp.len() == 1 {
            out.push(Complex::new(m[(comp[0], comp[0])], 0.0));
            continue;
        }
        let block = DMatrix::from_fn(comp.len(), comp.len(), |r, c| m[(comp[r], comp[c])]);
        let budget = SWEEPS_PER_EIGENVALUE * comp.len();
        let schur = Schur::try_new(block, f64::EPSILON, budget)
            .ok_or(Error::EigenNoConvergence { budget: SWEEPS_PER_EIGENVALUE })?;
        out.extend(schur.complex_eigenvalues().iter().copied());
    }
    out.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.re.total_cmp(&x.re)).then(y.im.total_cmp(&x.im)));
    Ok(out)
}

pub fn max_abs_imag(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
}

pub fn classify_spectrum(eigs: &[Complex<f64>], tol: f64) -> SpectrumClass {
    if max_abs_imag(eigs) > tol {
        SpectrumClass::ComplexPairs
    } else {
        SpectrumClass::Real
    }
}

/// Strongly connected components of the graph with an edge `j → i` for every
/// nonzero `m[(i, j)]` (iterative Tarjan).
fn strong_components(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let succ: Vec<Vec<usize>> = (0..n).map(|j| (0..n).filter(|&i| i != j && m[(i, j)] != 0.0).collect()).collect();

    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut next = 0;

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        // (node, position in its successor list)
        let mut call = vec![(root, 0usize)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = succ[v].get(*pos) {
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("component root is on the stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}
