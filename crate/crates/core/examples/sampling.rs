//! Procedural shapes, the two sparsifiers, and FPS + kNN grouping.
//!
//!     cargo run --release --example sampling

use sparse_fca::geometry::{
    downsample_knn_patch, downsample_uniform, fps, knn_group, sample_shape, ShapeFamily, ShapeSpec,
};

fn extent(points: &[[f32; 3]]) -> [f32; 3] {
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]]
}

fn main() -> sparse_fca::Result<()> {
    println!("{:>10} {:>6} {:>26}", "family", "points", "bounding box");
    for family in ShapeFamily::ALL {
        let spec = ShapeSpec::new(family.name(), 0.15, 0.01)?;
        let pc = sample_shape(&spec, 512, 42)?;
        let e = extent(&pc.points);
        println!(
            "{:>10} {:>6} {:>8.2}{:>8.2}{:>8.2}",
            family.name(),
            pc.len(),
            e[0],
            e[1],
            e[2]
        );
    }

    let torus = sample_shape(&ShapeSpec::new("torus", 0.0, 0.0)?, 512, 7)?;
    for n in [128, 64, 16] {
        let u = downsample_uniform(&torus, n, 1)?;
        let k = downsample_knn_patch(&torus, n, 1)?;
        let (eu, ek) = (extent(&u.points), extent(&k.points));
        println!(
            "torus @ {n:>3}: uniform spans {:.2} x {:.2}, knn patch spans {:.2} x {:.2}",
            eu[0], eu[1], ek[0], ek[1]
        );
    }

    let sparse = downsample_uniform(&torus, 16, 3)?;
    let centers = fps(&sparse, 8, sparse.seed)?;
    let groups = knn_group(&sparse, &centers, 32)?;
    println!("fps centres on 16 points: {centers:?}");
    println!(
        "first group has {} members ({} distinct) because 32 > 16 wraps around",
        groups.row(0).len(),
        {
            let mut r = groups.row(0).to_vec();
            r.sort_unstable();
            r.dedup();
            r.len()
        }
    );
    Ok(())
}
