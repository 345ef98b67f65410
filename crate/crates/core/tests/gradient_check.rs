//! Analytic render gradients against central finite differences.

use radval::field::{intersect_unit_cube, render_ray, render_ray_backward, Ray, VoxelGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
/// Components smaller than this are compared on an absolute scale.
const SCALE_FLOOR: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;

fn random_case(rng: &mut impl Rng) -> (VoxelGrid, Ray, [f64; 3]) {
    let raw = (0..64)
        .map(|_| {
            [
                rng.random_range(-3.0..2.5),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ]
        })
        .collect();
    let grid = VoxelGrid::from_raw([4, 4, 4], raw).unwrap();
    let ray = loop {
        let origin = [
            rng.random_range(-0.5..1.5),
            rng.random_range(-0.5..1.5),
            rng.random_range(-0.5..1.5),
        ];
        let target: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
        let d: [f64; 3] = std::array::from_fn(|k| target[k] - origin[k]);
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let direction = d.map(|v| v / n);
        let (t_near, t_far) = intersect_unit_cube(origin, direction);
        if t_far - t_near > 0.05 {
            break Ray {
                origin,
                direction,
                t_near,
                t_far,
            };
        }
    };
    let d_rgb = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    (grid, ray, d_rgb)
}

fn objective(grid: &VoxelGrid, ray: &Ray, n: usize, d: [f64; 3]) -> f64 {
    let rgb = render_ray(grid, ray, n).rgb;
    rgb[0] * d[0] + rgb[1] * d[1] + rgb[2] * d[2]
}

/// Worst relative error over all 4 x 64 raw parameters.
fn max_rel_error(grid: &VoxelGrid, ray: &Ray, n: usize, d: [f64; 3]) -> f64 {
    let analytic = render_ray_backward(grid, ray, n, d);
    let mut g = grid.clone();
    let mut worst: f64 = 0.0;
    for cell in 0..grid.len() {
        let base = grid.raw_cell(cell);
        for q in 0..4 {
            let mut p = base;
            p[q] = base[q] + H;
            g.set_raw(cell, p);
            let fp = objective(&g, ray, n, d);
            p[q] = base[q] - H;
            g.set_raw(cell, p);
            let fm = objective(&g, ray, n, d);
            g.set_raw(cell, base);
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic.get(cell)[q];
            let scale = a.abs().max(numeric.abs()).max(SCALE_FLOOR);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = std::time::Instant::now();
    for case in 0..120 {
        let (grid, ray, d) = random_case(&mut rng);
        let n = [1, 4, 16, 32][case % 4];
        let err = max_rel_error(&grid, &ray, n, d);
        assert!(err < REL_TOL, "case {case}: relative error {err:e}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn gradient_is_zero_for_cells_off_the_ray() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (grid, _, d) = random_case(&mut rng);
    // grazes the x axis edge: only cells with j, k in {0, 1} can be reached
    let ray = Ray {
        origin: [-1.0, 0.1, 0.1],
        direction: [1.0, 0.0, 0.0],
        t_near: 1.0,
        t_far: 2.0,
    };
    let g = render_ray_backward(&grid, &ray, 16, d);
    for cell in 0..grid.len() {
        let (j, k) = ((cell / 4) % 4, cell / 16);
        if j > 1 || k > 1 {
            assert_eq!(g.get(cell), [0.0; 4]);
        }
    }
}
