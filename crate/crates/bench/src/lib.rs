//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semscene::fusion::FrameSegment;
use semscene::geometry::{Point, PointCloud};
use semscene::semvote::ClassId;

/// Uniform points in a cube of side `extent_mm` at `origin`.
pub fn random_cloud(n: usize, origin: [f64; 3], extent_mm: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            Point::new(
                origin[0] + rng.random_range(0.0..extent_mm),
                origin[1] + rng.random_range(0.0..extent_mm),
                origin[2] + rng.random_range(0.0..extent_mm),
            )
        })
        .collect()
}

/// `objects` segments with distinct labels, each filling its own block of
/// 100 mm voxel centres with `points` points.
pub fn labelled_blocks(objects: usize, points: usize) -> Vec<FrameSegment> {
    (0..objects)
        .map(|k| {
            let x0 = k as f64 * 1500.0;
            let cloud: PointCloud = (0..points)
                .map(|i| {
                    Point::new(
                        x0 + ((i % 10) as f64 + 0.5) * 100.0,
                        ((i / 10 % 10) as f64 + 0.5) * 100.0,
                        ((i / 100) as f64 + 0.5) * 100.0,
                    )
                })
                .collect();
            FrameSegment::new(cloud, k as ClassId + 1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use semscene::geometry::voxel_downsample;

    #[test]
    fn blocks_keep_their_size_at_correspondence_resolution() {
        for seg in labelled_blocks(3, 500) {
            assert_eq!(voxel_downsample(&seg.points, 100.0).unwrap().len(), 500);
        }
    }

    #[test]
    fn random_cloud_is_seeded() {
        assert_eq!(
            random_cloud(10, [0.0; 3], 1.0, 3),
            random_cloud(10, [0.0; 3], 1.0, 3)
        );
    }
}
