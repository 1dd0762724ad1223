use std::time::Instant;

use choquard::{build_grid, build_kernel, GridScheme};

fn main() {
    for m in [512, 1024] {
        let grid = build_grid(20.0, m, 3, GridScheme::Uniform).unwrap();
        let t = Instant::now();
        let op = build_kernel(&grid, 2.0).unwrap();
        println!("M={m}: {:.2?} (K[0][0] = {})", t.elapsed(), op.entry(0, 0));
    }
}
