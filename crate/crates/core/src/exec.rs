//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] runs on the
//! ambient rayon pool; without it every mode runs sequentially. Every helper
//! returns results in index order, so outputs never depend on the worker
//! count.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `f(0), f(1), ..., f(n - 1)` collected in order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Applies `f` to each chunk of `items` and returns the per-chunk results
    /// in chunk order.
    pub fn map_chunks<I, T, F>(self, items: &[I], chunk: usize, f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&[I]) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_chunks(chunk).map(f).collect()
            }
            _ => items.chunks(chunk).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt();
        assert_eq!(Exec::Sequential.map_range(1000, f), Exec::Parallel.map_range(1000, f));
        let data: Vec<u32> = (0..1003).collect();
        let sum = |c: &[u32]| c.iter().sum::<u32>();
        assert_eq!(
            Exec::Sequential.map_chunks(&data, 10, sum),
            Exec::Parallel.map_chunks(&data, 10, sum)
        );
    }
}
