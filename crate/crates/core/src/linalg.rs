//! Deterministic real matrix products used by the factored Floquet step.

use crate::exec::{for_each_chunk_mut, Exec};

/// Output rows computed per task. Fixed so results never depend on the
/// number of worker threads.
const ROW_BLOCK: usize = 48;

/// Borrowed strided view of a real matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major view of `data` as a `rows x cols` matrix.
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.rs + j * self.cs]
    }
}

/// `c = a * b` with `c` row-major and contiguous.
pub fn gemm(exec: Exec, a: MatRef<'_>, b: MatRef<'_>, c: &mut [f64]) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(b.rows, k, "inner dimensions differ");
    assert_eq!(c.len(), m * n, "output has wrong size");
    if m == 0 || n == 0 {
        return;
    }
    for_each_chunk_mut(exec, c, ROW_BLOCK * n, |block, out| {
        let row0 = block * ROW_BLOCK;
        let rows = out.len() / n;
        // SAFETY: `a` covers rows row0..row0+rows with strides (rs, cs); `b`
        // is k x n with its own strides; `out` is a contiguous rows x n block.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a.data.as_ptr().add(row0 * a.rs),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

/// Reference triple loop, used to check [`gemm`].
pub fn gemm_naive(a: MatRef<'_>, b: MatRef<'_>) -> Vec<f64> {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k).map(|p| a.get(i, p) * b.get(p, j)).sum();
        }
    }
    c
}
