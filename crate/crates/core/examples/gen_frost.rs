//! Regenerates the bundled frost textures under `assets/frost/`.

use std::path::Path;

use cotrain::corruptions::{generate_frost_texture, FROST_TEXTURE_COUNT};
use cotrain::image::write_png_preview;

fn main() -> cotrain::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/frost");
    for i in 0..FROST_TEXTURE_COUNT {
        let tex = generate_frost_texture(i);
        write_png_preview(&tex, 0.0, 1.0, &dir.join(format!("frost{}.png", i + 1)))?;
    }
    Ok(())
}
