//! Optional MNIST download with MD5 verification. Nothing else in the tool
//! touches the network.

use std::fs;
use std::io::Read;
use std::path::Path;

use md5::{Digest, Md5};

use crate::error::CliError;

pub const DEFAULT_MIRROR: &str = "https://ossci-datasets.s3.amazonaws.com/mnist/";

pub const FILES: &[(&str, &str)] = &[
    ("train-images-idx3-ubyte.gz", "f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    ("train-labels-idx1-ubyte.gz", "d53e105ee54ea40749a09fcbcd1e9432"),
    ("t10k-images-idx3-ubyte.gz", "9fb629c4189551a2d022fa330f9573f3"),
    ("t10k-labels-idx1-ubyte.gz", "ec29112dd5afa0611ce80d1b7f02629c"),
];

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn download(url: &str) -> Result<Vec<u8>, CliError> {
    let mut resp = ureq::get(url).call().map_err(|e| CliError::Io(format!("{url}: {e}")))?;
    let mut buf = Vec::new();
    resp.body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .reader()
        .read_to_end(&mut buf)
        .map_err(|e| CliError::Io(format!("{url}: {e}")))?;
    Ok(buf)
}

/// Downloads any missing or corrupt file into `dir`. Files already present
/// with the right checksum are left alone.
pub fn run(dir: &Path, mirror: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let base = if mirror.ends_with('/') { mirror.to_string() } else { format!("{mirror}/") };
    for (name, sum) in FILES {
        let path = dir.join(name);
        if let Ok(existing) = fs::read(&path) {
            if md5_hex(&existing) == *sum {
                println!("ok      {name}");
                continue;
            }
        }
        let bytes = download(&format!("{base}{name}"))?;
        let got = md5_hex(&bytes);
        if got != *sum {
            return Err(CliError::Io(format!("{name}: checksum mismatch (expected {sum}, got {got})")));
        }
        fs::write(&path, bytes)?;
        println!("fetched {name}");
    }
    Ok(())
}
