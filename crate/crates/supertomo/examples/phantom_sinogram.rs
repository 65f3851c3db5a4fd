//! Builds the Shepp-Logan phantom, forward-projects it through a sparse
//! parallel-beam system matrix, and simulates a noisy emission acquisition.
//!
//! Run with: cargo run --example phantom_sinogram

use supertomo::io;
use supertomo::phantom::{shepp_logan, simulate_emission};
use supertomo::projection::{build_system_matrix, Geometry};

fn main() -> supertomo::Result<()> {
    let geom = Geometry::parallel(128, 32, 182, 1.0)?;
    let matrix = build_system_matrix(&geom);
    println!(
        "system matrix: {} rays x {} pixels, {} nonzeros",
        matrix.rows(),
        matrix.cols(),
        matrix.nnz()
    );

    let phantom = shepp_logan(128);
    let sinogram = matrix.forward(&phantom)?;
    println!(
        "phantom range [{:.3}, {:.3}], sinogram max {:.3}",
        phantom.min(),
        phantom.max(),
        sinogram.values().iter().cloned().fold(0.0, f64::max)
    );

    let noisy = simulate_emission(&matrix, &phantom, 18.0, 42)?;
    let total: f64 = noisy.counts.values().iter().sum();
    println!(
        "emission counts at ~18 dB: scale {:.1}, {} rays, {:.0} total counts",
        noisy.scale,
        noisy.counts.len(),
        total
    );

    let dir = std::env::temp_dir().join("supertomo_phantom_example");
    std::fs::create_dir_all(&dir)?;
    io::write_image_csv(&dir.join("phantom.csv"), &phantom)?;
    io::write_image_binary(&dir.join("phantom.bin"), &phantom)?;
    io::write_sinogram_csv(&dir.join("sinogram.csv"), &sinogram)?;
    println!("wrote phantom + sinogram under {}", dir.display());
    Ok(())
}
