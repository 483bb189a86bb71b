//! Reverse-mode tape over a chain of matrix layers.
//!
//! Each forward call both computes its result and records the activations
//! its backward rule needs. Parameters live in one flat vector; layers refer
//! to them through [`Block`] descriptors, so the tape's backward pass writes
//! every parameter gradient into a flat vector of the same layout.

use super::{dot, Mat};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Location of a `rows x cols` parameter matrix inside a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    #[inline]
    pub fn of<'a, S>(&self, flat: &'a [S]) -> &'a [S] {
        &flat[self.range()]
    }
}

enum Op<S> {
    Affine {
        input: Mat<S>,
        weight: Vec<S>,
        w: Block,
        b: Block,
    },
    Relu {
        mask: Vec<bool>,
    },
    MeanStdPool {
        centered: Mat<S>,
        std: Vec<S>,
    },
    Standardize {
        normalized: Mat<S>,
        gamma: Vec<S>,
        inv_std: Vec<S>,
        g: Block,
        b: Block,
    },
    L2Normalize {
        output: Vec<S>,
        norm: S,
    },
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct TapeGrads<S> {
    /// Flat gradient with the parameter layout.
    pub params: Vec<S>,
    /// Gradient with respect to the tape's original input.
    pub input: Mat<S>,
}

/// Records a sequence of layer applications for one forward pass.
pub struct GradTape<S> {
    ops: Vec<Op<S>>,
    n_params: usize,
    consumed: bool,
}

impl<S: Scalar> GradTape<S> {
    pub fn new(n_params: usize) -> Self {
        Self {
            ops: Vec::new(),
            n_params,
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// `x * W + 1 b^T` with `W` stored `in x out`.
    pub fn affine(&mut self, x: Mat<S>, params: &[S], w: Block, b: Block) -> Result<Mat<S>> {
        if x.cols() != w.rows || b.len() != w.cols {
            return Err(Error::ShapeMismatch(format!(
                "affine {}x{} input against {}x{} weight",
                x.rows(),
                x.cols(),
                w.rows,
                w.cols
            )));
        }
        let (t, out_dim) = (x.rows(), w.cols);
        let mut out = Mat::zeros(t, out_dim);
        let bias = b.of(params);
        for r in 0..t {
            out.row_mut(r).copy_from_slice(bias);
        }
        S::gemm(
            t,
            w.rows,
            out_dim,
            S::one(),
            x.data(),
            false,
            w.of(params),
            false,
            S::one(),
            out.data_mut(),
        );
        self.ops.push(Op::Affine {
            input: x,
            weight: w.of(params).to_vec(),
            w,
            b,
        });
        Ok(out)
    }

    pub fn relu(&mut self, mut x: Mat<S>) -> Mat<S> {
        let mut mask = Vec::with_capacity(x.data().len());
        for v in x.data_mut() {
            let on = *v > S::zero();
            if !on {
                *v = S::zero();
            }
            mask.push(on);
        }
        self.ops.push(Op::Relu { mask });
        x
    }

    /// Concatenated per-column mean and standard deviation over rows.
    ///
    /// Uses the biased variance with `eps` inside the square root.
    pub fn mean_std_pool(&mut self, x: Mat<S>, eps: S) -> Result<Mat<S>> {
        let (t, h) = (x.rows(), x.cols());
        if t == 0 {
            return Err(Error::ShapeMismatch("pooling over zero frames".into()));
        }
        let inv_t = S::one() / S::from_usize(t).unwrap();
        let mut mean = vec![S::zero(); h];
        for row in x.iter_rows() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m *= inv_t;
        }
        let mut centered = x;
        let mut var = vec![S::zero(); h];
        for r in 0..t {
            let row = centered.row_mut(r);
            for ((v, m), acc) in row.iter_mut().zip(&mean).zip(var.iter_mut()) {
                *v -= *m;
                *acc += *v * *v;
            }
        }
        let std: Vec<S> = var.iter().map(|&v| (v * inv_t + eps).sqrt()).collect();
        let mut pooled = mean;
        pooled.extend_from_slice(&std);
        self.ops.push(Op::MeanStdPool { centered, std });
        Mat::from_vec(1, 2 * h, pooled)
    }

    /// `gamma * (x - mean) / sqrt(var + eps) + beta` with frozen statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn standardize(
        &mut self,
        mut x: Mat<S>,
        params: &[S],
        g: Block,
        b: Block,
        mean: &[S],
        var: &[S],
        eps: S,
    ) -> Result<Mat<S>> {
        let h = x.cols();
        if g.len() != h || b.len() != h || mean.len() != h || var.len() != h {
            return Err(Error::ShapeMismatch("standardize width".into()));
        }
        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
        let gamma = g.of(params);
        let beta = b.of(params);
        let mut normalized = x.clone();
        for r in 0..x.rows() {
            let nrow = normalized.row_mut(r);
            for (j, v) in nrow.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
            let orow = x.row_mut(r);
            for j in 0..h {
                orow[j] = gamma[j] * nrow[j] + beta[j];
            }
        }
        self.ops.push(Op::Standardize {
            normalized,
            gamma: gamma.to_vec(),
            inv_std,
            g,
            b,
        });
        Ok(x)
    }

    /// Normalizes a single-row matrix to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Mat<S>) -> Result<Mat<S>> {
        if x.rows() != 1 {
            return Err(Error::ShapeMismatch("l2_normalize expects one row".into()));
        }
        let norm = dot(x.data(), x.data()).sqrt();
        if !(norm.to_f64_lossy() >= super::ZERO_NORM) {
            return Err(Error::ZeroNorm(norm.to_f64_lossy()));
        }
        let out = x.map(|v| v / norm);
        self.ops.push(Op::L2Normalize {
            output: out.data().to_vec(),
            norm,
        });
        Ok(out)
    }

    /// Replays the tape backward from `upstream`, the gradient of the scalar
    /// objective with respect to the last recorded output.
    ///
    /// A tape can be replayed once; later calls return [`Error::StaleTape`].
    pub fn backward(&mut self, upstream: Mat<S>) -> Result<TapeGrads<S>> {
        if self.consumed {
            return Err(Error::StaleTape);
        }
        self.consumed = true;
        let mut params = vec![S::zero(); self.n_params];
        let mut grad = upstream;
        for op in self.ops.drain(..).rev() {
            grad = match op {
                Op::Affine { input, weight, w, b } => {
                    let t = input.rows();
                    // dW += x^T g
                    S::gemm(
                        w.rows,
                        t,
                        w.cols,
                        S::one(),
                        input.data(),
                        true,
                        grad.data(),
                        false,
                        S::one(),
                        &mut params[w.range()],
                    );
                    let db = &mut params[b.range()];
                    for row in grad.iter_rows() {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    // dx = g W^T
                    let mut dx = Mat::zeros(t, w.rows);
                    S::gemm(
                        t,
                        w.cols,
                        w.rows,
                        S::one(),
                        grad.data(),
                        false,
                        &weight,
                        true,
                        S::zero(),
                        dx.data_mut(),
                    );
                    dx
                }
                Op::Relu { mask } => {
                    for (v, on) in grad.data_mut().iter_mut().zip(mask) {
                        if !on {
                            *v = S::zero();
                        }
                    }
                    grad
                }
                Op::MeanStdPool { centered, std } => {
                    let (t, h) = (centered.rows(), centered.cols());
                    let inv_t = S::one() / S::from_usize(t).unwrap();
                    let (dmean, dstd) = grad.data().split_at(h);
                    let coef: Vec<S> = dstd.iter().zip(&std).map(|(&d, &s)| d * inv_t / s).collect();
                    let base: Vec<S> = dmean.iter().map(|&d| d * inv_t).collect();
                    let mut dx = centered;
                    for r in 0..t {
                        for (j, v) in dx.row_mut(r).iter_mut().enumerate() {
                            *v = base[j] + coef[j] * *v;
                        }
                    }
                    dx
                }
                Op::Standardize {
                    normalized,
                    gamma,
                    inv_std,
                    g,
                    b,
                } => {
                    let h = gamma.len();
                    for (grow, nrow) in grad.iter_rows().zip(normalized.iter_rows()) {
                        for j in 0..h {
                            params[g.offset + j] += grow[j] * nrow[j];
                            params[b.offset + j] += grow[j];
                        }
                    }
                    let scale: Vec<S> = gamma.iter().zip(&inv_std).map(|(&a, &c)| a * c).collect();
                    for r in 0..grad.rows() {
                        for (v, &s) in grad.row_mut(r).iter_mut().zip(&scale) {
                            *v *= s;
                        }
                    }
                    grad
                }
                Op::L2Normalize { output, norm } => {
                    let proj = dot(&output, grad.data());
                    for (v, &y) in grad.data_mut().iter_mut().zip(&output) {
                        *v = (*v - y * proj) / norm;
                    }
                    grad
                }
            };
        }
        Ok(TapeGrads { params, input: grad })
    }
}
