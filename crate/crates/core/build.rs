use std::process::Command;

fn main() {
    println!("cargo:rerun-if-changed=../../.git/HEAD");
    println!("cargo:rerun-if-env-changed=AOI_BUILD_TAG");
    let tag = std::env::var("AOI_BUILD_TAG").ok().or_else(|| {
        let out = Command::new("git").args(["describe", "--always", "--tags"]).output().ok()?;
        out.status.success().then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
    });
    let version = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    let tag = match tag {
        Some(t) if !t.is_empty() => format!("v{version}-{t}"),
        _ => format!("v{version}"),
    };
    println!("cargo:rustc-env=AOI_BUILD_TAG={tag}");
}
