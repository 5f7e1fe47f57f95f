//! kd-tree kNN distances against the brute-force reference.
//!
//! cargo run --release --example knn_index

use std::time::Instant;

use mudiknn::spatial::{brute_force_knn, Backend, HeadIndex};
use mudiknn::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let heads: Vec<Point> = (0..2000)
        .map(|_| Point::new(rng.random_range(0.0..1024.0), rng.random_range(0.0..768.0)))
        .collect();
    let queries: Vec<Point> = (0..20_000)
        .map(|_| Point::new(rng.random_range(0.0..1024.0), rng.random_range(0.0..768.0)))
        .collect();

    for backend in [Backend::KdTree, Backend::BruteForce] {
        let index = HeadIndex::with_backend(&heads, backend);
        let t = Instant::now();
        let total: f64 = queries
            .iter()
            .map(|&q| index.mean_knn_distance(q, 4))
            .sum::<Result<f64, _>>()?;
        println!("{backend:?}: mean 4-NN distance {:.6} in {:?}", total / queries.len() as f64, t.elapsed());
    }

    let index = HeadIndex::build(&heads);
    let worst = queries[..500]
        .iter()
        .map(|&q| {
            let fast = index.knn_distances(q, 6).unwrap();
            let slow = brute_force_knn(&heads, q, 6);
            fast.iter().zip(&slow).map(|(a, b)| (a - b).abs() / b.max(1e-12)).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    println!("worst relative disagreement over 500 queries: {worst:e}");
    Ok(())
}
