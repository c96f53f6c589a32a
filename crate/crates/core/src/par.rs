//! Data-parallel map over independent jobs. With the `parallel` feature
//! the work is spread over the rayon pool; without it, or through
//! [`map_sequential`], it runs in order on the calling thread. Results are
//! always returned in index order.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_sequential(n, f)
}

pub fn map_sequential<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let want: Vec<usize> = (0..1000).map(|i| i * i).collect();
        assert_eq!(map_indexed(1000, |i| i * i), want);
        assert_eq!(map_sequential(1000, |i| i * i), want);
    }
}
