use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Named view of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: &'a [f64],
}

/// Parameter sets exposed as an ordered list of named flat blocks. The order of
/// `blocks` and `blocks_mut` must agree.
pub trait ParamBlocks: Clone {
    fn blocks(&self) -> Vec<BlockRef<'_>>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, b) in out.blocks_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
        out
    }

    fn scalar_count(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// Overwrites every block from `source(name, len)`.
    fn fill_from(&mut self, mut source: impl FnMut(&str, usize) -> Result<Vec<f64>>) -> Result<()> {
        for (name, block) in self.blocks_mut() {
            let values = source(&name, block.len())?;
            if values.len() != block.len() {
                return Err(Error::Shape(alloc::format!(
                    "block `{name}` has {} values, expected {}",
                    values.len(),
                    block.len()
                )));
            }
            block.copy_from_slice(&values);
        }
        Ok(())
    }
}

/// Affine map `x W + b` with `W: [in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    /// Weights uniform on `±sqrt(3 / inputs)` (standard deviation `1/sqrt(inputs)`), zero bias.
    pub fn fan_in_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let a = libm::sqrt(3.0 / inputs as f64);
        let weight = Matrix::from_fn(inputs, outputs, |_, _| rng.random_range(-a..a));
        Self {
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = x.matmul(&self.weight);
        out.add_row_vector(&self.bias);
        out
    }

    pub(crate) fn push_blocks<'a>(&'a self, prefix: &str, out: &mut Vec<BlockRef<'a>>) {
        out.push(BlockRef {
            name: alloc::format!("{prefix}.weight"),
            shape: vec![self.weight.rows(), self.weight.cols()],
            values: self.weight.as_slice(),
        });
        out.push(BlockRef {
            name: alloc::format!("{prefix}.bias"),
            shape: vec![self.bias.len()],
            values: &self.bias,
        });
    }

    pub(crate) fn push_blocks_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut [f64])>,
    ) {
        out.push((
            alloc::format!("{prefix}.weight"),
            self.weight.as_mut_slice(),
        ));
        out.push((alloc::format!("{prefix}.bias"), &mut self.bias));
    }

    /// Accumulates the gradients of `y = x W + b` given `dy`.
    pub(crate) fn accumulate_grad(&mut self, x: &Matrix, dy: &Matrix) {
        x.accumulate_transpose_matmul(dy, &mut self.weight);
        for (b, s) in self.bias.iter_mut().zip(dy.column_sums()) {
            *b += s;
        }
    }
}
