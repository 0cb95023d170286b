//! A small reverse-mode differentiation tape over row-major f64 matrices.
//!
//! Every value is a 2-D array; a batch occupies the rows. Parameters enter
//! the tape by reference, so building a graph never copies weights.

use ndarray::{Array2, ArrayView2, Axis, CowArray, Ix2, Zip};

pub type Var = usize;

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + bias`, bias being a single row broadcast over the batch.
    AddRow(Var, Var),
    Relu(Var),
    /// Elementwise product with a constant mask.
    Mask(Var, Array2<f64>),
    /// Row i is the concatenation of `table` rows `ids[i*width..(i+1)*width]`.
    EmbedConcat { table: Var, ids: Vec<usize>, width: usize },
    /// Row i is the sum of `table` rows `ids[i*width..(i+1)*width]`.
    GatherSum { table: Var, ids: Vec<usize>, width: usize },
    /// Mean negative log-softmax of the target column; a 1×1 value.
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Array2<f64> },
}

pub struct Tape<'a> {
    values: Vec<CowArray<'a, f64, Ix2>>,
    ops: Vec<Op>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { values: Vec::new(), ops: Vec::new() }
    }

    fn push(&mut self, value: CowArray<'a, f64, Ix2>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn param(&mut self, value: &'a Array2<f64>) -> Var {
        self.push(CowArray::from(value.view()), Op::Leaf)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        self.values[v].view()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b));
        self.push(out.into(), Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let out = &self.value(a) + &self.value(bias);
        self.push(out.into(), Op::AddRow(a, bias))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out.into(), Op::Relu(a))
    }

    pub fn mask(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let out = &self.value(a) * &mask;
        self.push(out.into(), Op::Mask(a, mask))
    }

    /// `rows` must be given explicitly since `width` may be 0.
    pub fn embed_concat(&mut self, table: Var, ids: Vec<usize>, width: usize, rows: usize) -> Var {
        let t = self.value(table);
        let d = t.ncols();
        let mut out = Array2::zeros((rows, width * d));
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            for j in 0..width {
                row.slice_mut(ndarray::s![j * d..(j + 1) * d]).assign(&t.row(ids[i * width + j]));
            }
        }
        self.push(out.into(), Op::EmbedConcat { table, ids, width })
    }

    pub fn gather_sum(&mut self, table: Var, ids: Vec<usize>, width: usize, rows: usize) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((rows, t.ncols()));
        for (i, mut row) in out.outer_iter_mut().enumerate() {
            for &id in &ids[i * width..(i + 1) * width] {
                row += &t.row(id);
            }
        }
        self.push(out.into(), Op::GatherSum { table, ids, width })
    }

    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let l = self.value(logits);
        let mut probs = l.to_owned();
        let mut total = 0.0;
        for (mut row, &t) in probs.outer_iter_mut().zip(&targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            total += z.ln() - row[t].ln();
            row /= z;
        }
        let mean = if targets.is_empty() { 0.0 } else { total / targets.len() as f64 };
        self.push(Array2::from_elem((1, 1), mean).into(), Op::SoftmaxXent { logits, targets, probs })
    }

    /// Gradients of the scalar `root` with respect to every leaf (None where
    /// the leaf does not influence `root`).
    pub fn backward(&self, root: Var) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.values.len()).map(|_| None).collect();
        grads[root] = Some(Array2::ones(self.values[root].raw_dim()));
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&self.values[i]).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mask(a, mask) => accumulate(&mut grads, *a, g * mask),
                Op::EmbedConcat { table, ids, width } => {
                    let d = self.values[*table].ncols();
                    let gt = zeros_like(&mut grads, *table, self.values[*table].raw_dim());
                    for (r, grow) in g.outer_iter().enumerate() {
                        for j in 0..*width {
                            let mut dst = gt.row_mut(ids[r * width + j]);
                            dst += &grow.slice(ndarray::s![j * d..(j + 1) * d]);
                        }
                    }
                }
                Op::GatherSum { table, ids, width } => {
                    let gt = zeros_like(&mut grads, *table, self.values[*table].raw_dim());
                    for (r, grow) in g.outer_iter().enumerate() {
                        for &id in &ids[r * width..(r + 1) * width] {
                            let mut dst = gt.row_mut(id);
                            dst += &grow;
                        }
                    }
                }
                Op::SoftmaxXent { logits, targets, probs } => {
                    let scale = g[[0, 0]] / targets.len().max(1) as f64;
                    let mut gl = probs.clone();
                    for (mut row, &t) in gl.outer_iter_mut().zip(targets) {
                        row[t] -= 1.0;
                        row *= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v] {
        Some(g) => *g += &delta,
        slot @ None => *slot = Some(delta),
    }
}

fn zeros_like(grads: &mut [Option<Array2<f64>>], v: Var, dim: Ix2) -> &mut Array2<f64> {
    grads[v].get_or_insert_with(|| Array2::zeros(dim))
}
