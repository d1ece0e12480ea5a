use rayon::prelude::*;

const CHUNK: usize = 4;

/// `sum_i f(i, grad_i)` over `0..n` with a fixed summation order, so the
/// result does not depend on the thread count. `f` adds its gradient into the
/// slice it is given and returns its scalar term.
pub(crate) fn sum_with_grad<F>(n: usize, dim: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<(f64, Vec<f64>)> = starts
        .par_iter()
        .map(|&s| {
            let mut g = vec![0.0; dim];
            let mut v = 0.0;
            for i in s..(s + CHUNK).min(n) {
                v += f(i, &mut g);
            }
            (v, g)
        })
        .collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; dim];
    for (v, g) in parts {
        total += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (total, grad)
}

/// Order-stable parallel map.
pub(crate) fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
