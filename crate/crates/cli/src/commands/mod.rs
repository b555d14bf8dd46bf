pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod inspect;
pub mod train;

use std::fs;
use std::path::Path;

use anyhow::Context;

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
