//! Optional HTTP tile download.

use std::path::Path;

use anyhow::Result;

/// Environment variable holding the tile service key.
pub const API_KEY_ENV: &str = "LFE_TILE_API_KEY";

pub fn tile_url(template: &str, panorama_id: &str, row: u32, col: u32, key: &str) -> String {
    template
        .replace("{panorama_id}", panorama_id)
        .replace("{row}", &row.to_string())
        .replace("{col}", &col.to_string())
        .replace("{key}", key)
}

pub fn has_tile(dir: &Path, row: u32, col: u32) -> bool {
    ["png", "jpg", "jpeg"]
        .iter()
        .any(|ext| dir.join(format!("{row}_{col}.{ext}")).is_file())
}

#[cfg(feature = "live-fetch")]
pub fn require_support() -> Result<()> {
    Ok(())
}

#[cfg(not(feature = "live-fetch"))]
pub fn require_support() -> Result<()> {
    anyhow::bail!("live fetch requested but this build lacks the `live-fetch` feature")
}

/// Downloads every tile of the grid that is not already in `dir`.
#[cfg(feature = "live-fetch")]
pub fn fetch_tiles(
    template: &str,
    panorama_id: &str,
    rows: u32,
    cols: u32,
    dir: &Path,
    concurrency: usize,
) -> Result<usize> {
    use anyhow::Context;
    use rayon::prelude::*;

    let key = std::env::var(API_KEY_ENV).with_context(|| format!("{API_KEY_ENV} is not set"))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let client = reqwest::blocking::Client::new();
    let missing: Vec<(u32, u32)> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| !has_tile(dir, r, c))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(concurrency).build()?;
    pool.install(|| {
        missing.par_iter().try_for_each(|&(r, c)| -> Result<()> {
            let url = tile_url(template, panorama_id, r, c, &key);
            let bytes = client
                .get(&url)
                .send()
                .and_then(|resp| resp.error_for_status())
                .and_then(|resp| resp.bytes())
                .with_context(|| format!("fetching tile ({r}, {c}) of {panorama_id}"))?;
            let ext = if bytes.starts_with(&[0xFF, 0xD8]) { "jpg" } else { "png" };
            let path = dir.join(format!("{r}_{c}.{ext}"));
            std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))
        })
    })?;
    Ok(missing.len())
}

#[cfg(not(feature = "live-fetch"))]
pub fn fetch_tiles(
    _template: &str,
    _panorama_id: &str,
    _rows: u32,
    _cols: u32,
    _dir: &Path,
    _concurrency: usize,
) -> Result<usize> {
    require_support().map(|_| 0)
}
