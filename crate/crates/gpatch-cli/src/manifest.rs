//! Artifact sidecar manifests: every stage writes `<artifact>.manifest`
//! recording the tool version, the effective flags, and SHA-256 digests of
//! the artifact and all its inputs. Downstream stages verify those digests
//! and refuse stale artifacts unless forced.

use std::io::Read;
use std::path::{Path, PathBuf};

use gpatch::data::{load_config, save_config};
use gpatch::error::{Error, Result};

pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::Digest;
    let p = path.display().to_string();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut hasher = sha2::Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(&p, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest_path(artifact: &Path) -> PathBuf {
    let mut os = artifact.as_os_str().to_owned();
    os.push(".manifest");
    PathBuf::from(os)
}

/// Write the sidecar for a freshly produced artifact.
pub fn write_manifest(
    artifact: &Path,
    command: &str,
    inputs: &[&Path],
    config: &[(String, String)],
) -> Result<()> {
    let mut entries: Vec<(String, String)> = vec![
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("command".to_string(), command.to_string()),
        ("artifact".to_string(), artifact.display().to_string()),
        ("artifact.sha256".to_string(), sha256_file(artifact)?),
    ];
    for input in inputs {
        entries.push((
            format!("input.{}", input.display()),
            sha256_file(input)?,
        ));
    }
    entries.extend(config.iter().cloned());
    save_config(&manifest_path(artifact), &entries)
}

/// Verify an input artifact against its sidecar, if one exists. Detects both
/// edits to the artifact itself and edits to the files it was derived from.
pub fn verify_artifact(artifact: &Path, force: bool) -> Result<()> {
    let sidecar = manifest_path(artifact);
    if !sidecar.exists() {
        return Ok(()); // externally supplied file, nothing to check
    }
    let entries = load_config(&sidecar)?;
    let mut problems = Vec::new();
    for (key, recorded) in &entries {
        if key == "artifact.sha256" {
            let current = sha256_file(artifact)?;
            if &current != recorded {
                problems.push(format!(
                    "artifact changed since its manifest was written ({} != {})",
                    &current[..12.min(current.len())],
                    &recorded[..12.min(recorded.len())]
                ));
            }
        } else if let Some(input) = key.strip_prefix("input.") {
            let input_path = Path::new(input);
            if !input_path.exists() {
                problems.push(format!("input {input} is missing"));
                continue;
            }
            let current = sha256_file(input_path)?;
            if &current != recorded {
                problems.push(format!("input {input} changed since the artifact was built"));
            }
        }
    }
    if problems.is_empty() {
        return Ok(());
    }
    if force {
        for p in &problems {
            eprintln!("warning: {}: {p} (ignored by --force)", artifact.display());
        }
        return Ok(());
    }
    Err(Error::StaleArtifact {
        path: artifact.display().to_string(),
        msg: problems.join("; "),
    })
}
