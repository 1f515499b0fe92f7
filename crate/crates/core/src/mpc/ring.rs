//! Plain arithmetic modulo 2^64 on flat row-major buffers.

/// `(m x k) * (k x n)` with wrapping arithmetic.
pub fn ring_matmul(a: &[u64], b: &[u64], m: usize, k: usize, n: usize) -> Vec<u64> {
    let mut out = vec![0u64; m * n];
    ring_matmul_acc(a, b, m, k, n, &mut out);
    out
}

const COL_BLOCK: usize = 256;
const DEPTH_BLOCK: usize = 128;

/// `out += a * b`, four rows of `a` per pass over a block of `b`.
pub fn ring_matmul_acc(a: &[u64], b: &[u64], m: usize, k: usize, n: usize, out: &mut [u64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for p0 in (0..k).step_by(DEPTH_BLOCK) {
            let p1 = (p0 + DEPTH_BLOCK).min(k);
            let mut i = 0;
            while i + 4 <= m {
                let (r0, rest) = out[i * n..].split_at_mut(n);
                let (r1, rest) = rest.split_at_mut(n);
                let (r2, r3) = rest.split_at_mut(n);
                let (r0, r1, r2, r3) = (&mut r0[j0..j1], &mut r1[j0..j1], &mut r2[j0..j1], &mut r3[j0..j1]);
                for p in p0..p1 {
                    let s = [a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]];
                    let row = &b[p * n + j0..p * n + j1];
                    for (j, &v) in row.iter().enumerate() {
                        r0[j] = r0[j].wrapping_add(s[0].wrapping_mul(v));
                        r1[j] = r1[j].wrapping_add(s[1].wrapping_mul(v));
                        r2[j] = r2[j].wrapping_add(s[2].wrapping_mul(v));
                        r3[j] = r3[j].wrapping_add(s[3].wrapping_mul(v));
                    }
                }
                i += 4;
            }
            for i in i..m {
                let r = &mut out[i * n + j0..i * n + j1];
                for p in p0..p1 {
                    let s = a[i * k + p];
                    for (o, &v) in r.iter_mut().zip(&b[p * n + j0..p * n + j1]) {
                        *o = o.wrapping_add(s.wrapping_mul(v));
                    }
                }
            }
        }
    }
}

pub fn transpose(a: &[u64], rows: usize, cols: usize) -> Vec<u64> {
    let mut out = vec![0u64; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

pub fn add(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x.wrapping_add(*y)).collect()
}

pub fn sub(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x.wrapping_sub(*y)).collect()
}
