//! GEMM front-end over `matrixmultiply::dgemm` with deterministic
//! column-chunk parallelism: output columns are split by a size-only policy
//! and each chunk is one dgemm call, so the result is bitwise identical
//! whether chunks run on rayon or serially.

use super::tensor::Mat;
use crate::parallel;

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Op {
    None,
    Transpose,
}

struct SendPtr(*mut f64);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// c = op_a(a) * op_b(b) + beta * c
///
/// Shapes after the ops must satisfy (m x k) * (k x n) = (m x n).
pub fn matmul_into(a: &Mat, op_a: Op, b: &Mat, op_b: Op, c: &mut Mat, beta: f64) {
    let (m, ka) = match op_a {
        Op::None => (a.rows, a.cols),
        Op::Transpose => (a.cols, a.rows),
    };
    let (kb, n) = match op_b {
        Op::None => (b.rows, b.cols),
        Op::Transpose => (b.cols, b.rows),
    };
    assert_eq!(ka, kb, "inner dims");
    assert_eq!((c.rows, c.cols), (m, n), "output dims");
    let k = ka;
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.data.iter_mut() {
            *v *= beta;
        }
        return;
    }

    let (rsa, csa) = match op_a {
        Op::None => (a.cols as isize, 1),
        Op::Transpose => (1, a.cols as isize),
    };
    let (rsb, csb) = match op_b {
        Op::None => (b.cols as isize, 1),
        Op::Transpose => (1, b.cols as isize),
    };
    let rsc = n as isize;
    let csc = 1isize;

    let a_ptr = a.data.as_ptr();
    let b_ptr = b.data.as_ptr();
    let c_ptr = SendPtr(c.data.as_mut_ptr());

    // Chunk output columns; each chunk's dgemm touches a disjoint strided
    // block of c, and per-element accumulation order inside dgemm is a
    // function of (m, k, chunk width) only.
    parallel::for_each_range(n, 128, |r| {
        let c_ptr = &c_ptr;
        let n0 = r.start;
        let nw = r.len();
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                nw,
                1.0,
                a_ptr,
                rsa,
                csa,
                b_ptr.offset(n0 as isize * csb),
                rsb,
                csb,
                beta,
                c_ptr.0.offset(n0 as isize * csc),
                rsc,
                csc,
            );
        }
    });
}

/// Convenience allocating form: returns op_a(a) * op_b(b).
pub fn matmul(a: &Mat, op_a: Op, b: &Mat, op_b: Op) -> Mat {
    let m = match op_a {
        Op::None => a.rows,
        Op::Transpose => a.cols,
    };
    let n = match op_b {
        Op::None => b.cols,
        Op::Transpose => b.rows,
    };
    let mut c = Mat::zeros(m, n);
    matmul_into(a, op_a, b, op_b, &mut c, 0.0);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Mat, b: &Mat) -> Mat {
        let mut c = Mat::zeros(a.rows, b.cols);
        for i in 0..a.rows {
            for l in 0..a.cols {
                let av = a.at(i, l);
                for j in 0..b.cols {
                    *c.at_mut(i, j) += av * b.at(l, j);
                }
            }
        }
        c
    }

    fn filled(rows: usize, cols: usize, seed: f64) -> Mat {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 * 0.7311 + seed).sin()) * 0.5)
            .collect();
        Mat::from_data(rows, cols, data)
    }

    #[test]
    fn matches_naive_all_ops() {
        let a = filled(7, 5, 0.3);
        let b = filled(5, 9, 1.1);
        let c = matmul(&a, Op::None, &b, Op::None);
        let r = naive(&a, &b);
        for (x, y) in c.data.iter().zip(&r.data) {
            assert!((x - y).abs() < 1e-12);
        }

        let at = filled(5, 7, 0.3);
        let c2 = matmul(&at, Op::Transpose, &b, Op::None);
        assert_eq!((c2.rows, c2.cols), (7, 9));

        let bt = filled(9, 5, 1.1);
        let c3 = matmul(&a, Op::None, &bt, Op::Transpose);
        assert_eq!((c3.rows, c3.cols), (7, 9));
    }

    #[test]
    fn parallel_equals_sequential_bitwise() {
        let a = filled(64, 300, 0.9);
        let b = filled(300, 1200, 2.2);
        let par = matmul(&a, Op::None, &b, Op::None);
        crate::parallel::set_force_sequential(true);
        let seq = matmul(&a, Op::None, &b, Op::None);
        crate::parallel::set_force_sequential(false);
        assert_eq!(par.data, seq.data, "gemm must not depend on threading");
    }
}
