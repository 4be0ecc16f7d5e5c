use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::config::AppConfig;

#[derive(Debug, thiserror::Error)]
#[error("{path} is locked by another trailcast process (delete the lock file if that process is gone)")]
pub struct LockError {
    pub path: String,
}

/// Output directory held under an exclusive lock file for the lifetime of
/// the value.
pub struct RunDir {
    root: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("cannot create {}", root.display()))?;
        let lock = root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(LockError {
                    path: lock.display().to_string(),
                }
                .into())
            }
            Err(e) => return Err(e).with_context(|| format!("cannot create {}", lock.display())),
        }
        Ok(RunDir {
            root: root.to_path_buf(),
            lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Creates a subdirectory and returns the path of `name` inside it.
    pub fn nested(&self, dir: &str, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.root.join(dir);
        fs::create_dir_all(&d).with_context(|| format!("cannot create {}", d.display()))?;
        Ok(d.join(name))
    }

    /// Writes the resolved configuration a command ran with.
    pub fn snapshot(&self, command: &str, config: &AppConfig) -> anyhow::Result<PathBuf> {
        let path = self.nested("config", &format!("{command}.toml"))?;
        let text = format!(
            "# trailcast {}\n# run seed {}, zero-shot seed {}, config digest {}\n{}",
            env!("CARGO_PKG_VERSION"),
            config.run.seed,
            config.cohorts.zero_shot_seed,
            config.run.digest(),
            config.to_toml()
        );
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Writes `value` as pretty JSON.
pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("values serialize") + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {} (has `trailcast preprocess` run?)", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not valid", path.display()))
}
