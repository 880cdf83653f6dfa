use std::env;
use std::path::PathBuf;

use cbindgen::{Config, EnumConfig, Language, RenameRule};

fn main() {
    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");

    let cfg = Config {
        language: Language::C,
        include_guard: Some("NETBRIDGE_H".into()),
        cpp_compat: true,
        usize_is_size_t: true,
        documentation: true,
        enumeration: EnumConfig {
            rename_variants: RenameRule::ScreamingSnakeCase,
            prefix_with_name: true,
            ..Default::default()
        },
        ..Default::default()
    };

    cbindgen::Builder::new()
        .with_config(cfg)
        .with_crate(&crate_dir)
        .generate()
        .expect("cbindgen failed to generate the header")
        .write_to_file(crate_dir.join("include").join("netbridge.h"));
}
