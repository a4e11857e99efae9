//! Data-parallel helpers. With the `parallel` feature these dispatch to rayon;
//! without it they run the same closures sequentially, in the same order of
//! reduction, so results are bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many elements, elementwise kernels stay on the calling thread.
pub(crate) const MIN_PAR_LEN: usize = 1 << 14;

/// Calls `f(index, chunk)` for each `chunk`-sized piece of `data`.
pub(crate) fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if data.len() > chunk {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Elementwise map into `out`, splitting large buffers across threads.
pub(crate) fn map_into<T, U, F>(src: &[T], out: &mut [U], f: F)
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    debug_assert_eq!(src.len(), out.len());
    let apply = |(o, s): (&mut [U], &[T])| {
        for (oi, si) in o.iter_mut().zip(s) {
            *oi = f(si);
        }
    };
    #[cfg(feature = "parallel")]
    {
        if src.len() >= MIN_PAR_LEN {
            out.par_chunks_mut(MIN_PAR_LEN)
                .zip(src.par_chunks(MIN_PAR_LEN))
                .for_each(apply);
            return;
        }
    }
    apply((out, src));
}

/// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Runs `f` with kernel parallelism limited to `threads` worker threads.
///
/// Without the `parallel` feature this simply calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
        {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Whether kernels were compiled with rayon support.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
