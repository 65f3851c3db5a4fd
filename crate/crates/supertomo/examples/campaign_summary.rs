//! Drives a complete seeded experiment campaign through the library API:
//! repeated noise draws, reconstruction, metrics, and the CSV artifacts the
//! `supertomo` binary would produce.
//!
//! Run with: cargo run --example campaign_summary

use supertomo::campaign::run_campaign;
use supertomo::config::parse_config_str;

fn main() -> supertomo::Result<()> {
    let out_dir = std::env::temp_dir().join("supertomo_campaign_example");
    let config = parse_config_str(&format!(
        "\
        n_side = 64\n\
        n_angles = 16\n\
        n_rays = 95\n\
        model = emission\n\
        solver = saem\n\
        strings = 3\n\
        superiorizer = prox\n\
        gamma0 = 0.3\n\
        snr_db = 18\n\
        stop_metric = kl\n\
        stop_threshold = 600\n\
        max_iters = 200\n\
        repetitions = 4\n\
        master_seed = 2024\n\
        output_dir = {}\n\
        timing = zero\n",
        out_dir.display()
    ))?;

    let outcome = run_campaign(&config)?;
    println!(
        "campaign done, {} failed repetitions, artifacts in {}",
        outcome.failures.len(),
        outcome.output_dir.display()
    );

    let summary = std::fs::read_to_string(outcome.output_dir.join("summary.csv"))?;
    println!("--- summary.csv\n{summary}");
    Ok(())
}
