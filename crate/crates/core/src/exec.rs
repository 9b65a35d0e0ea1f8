//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] runs on the rayon
//! global pool; without it every mode runs sequentially. Results always come
//! back in input order, so reductions over them are deterministic.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Like [`Exec::map`] for fallible closures; the first error in input
    /// order wins.
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    /// Runs `f` over `items` with at most `limit` calls in flight.
    pub fn map_bounded<T, R, F>(self, items: &[T], limit: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel if limit > 1 => {
                use rayon::prelude::*;
                match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(_) => items.iter().map(f).collect(),
                }
            }
            _ => items.iter().map(f).collect(),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = Exec::Sequential.map(&xs, |x| x * x);
        let b = Exec::Parallel.map(&xs, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a[999], 999 * 999);
        let c = Exec::Parallel.map_bounded(&xs, 3, |x| x + 1);
        assert_eq!(c[0], 1);
    }

    #[test]
    fn try_map_returns_first_error() {
        let xs = [1, 2, 3, 4];
        let r: Result<Vec<i32>, i32> =
            Exec::Parallel.try_map(&xs, |&x| if x >= 2 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(2));
    }
}
