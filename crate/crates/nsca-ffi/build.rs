//! Generates the C header with cbindgen; if generation fails (e.g. cbindgen
//! cannot parse the crate in some environment), the checked-in hand-written
//! header is used instead. Either way OUT_DIR/nsca.h exists after the build.

use std::env;
use std::path::PathBuf;

fn main() {
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    println!("cargo:rerun-if-changed=include/nsca.h");

    let crate_dir = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out_path = PathBuf::from(env::var("OUT_DIR").unwrap()).join("nsca.h");
    let config = cbindgen::Config::from_file(crate_dir.join("cbindgen.toml"))
        .unwrap_or_default();

    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(&out_path);
        }
        Err(err) => {
            println!("cargo:warning=cbindgen failed ({err}); using include/nsca.h");
            std::fs::copy(crate_dir.join("include/nsca.h"), &out_path)
                .expect("fallback header copy");
        }
    }
}
