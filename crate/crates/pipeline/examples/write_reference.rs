//! Regenerate `docs/CLI.md` from the argument parser.

fn main() -> std::io::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/CLI.md");
    echosyn_pipeline::cli::write_reference(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}
