//! Training corpus manifest: images plus one head trajectory per stream.
//! Paths are relative to the manifest's directory.

use std::path::{Path, PathBuf};

use salgail::gail::Demonstrations;
use salgail::io::Provenance;
use salgail::synth::ScriptedExpert;
use salgail::trajectory::read_raw_log;
use salgail::{EquirectImage, Error, Result, SpherePoint};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub image: PathBuf,
    /// One raw log per stream, stream order.
    pub trajectories: Vec<PathBuf>,
    /// Where scripted experts were heading, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SpherePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub provenance: Provenance,
    pub streams: usize,
    pub scenes: Vec<SceneEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experts: Vec<ScriptedExpert>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads every image and trajectory. Images are converted to single
    /// channel when `rgb` is false.
    pub fn load(&self, base: &Path, rgb: bool) -> Result<Demonstrations> {
        let mut demos = Demonstrations::default();
        for s in &self.scenes {
            if s.trajectories.len() != self.streams {
                return Err(Error::malformed(
                    base.join(&s.image),
                    format!("scene {} lists {} trajectories for {} streams", s.id, s.trajectories.len(), self.streams),
                ));
            }
            demos.images.push(EquirectImage::load(&base.join(&s.image), rgb)?);
            let paths = s
                .trajectories
                .iter()
                .map(|t| read_raw_log(&base.join(t)).map(|tr| tr.positions()))
                .collect::<Result<Vec<Vec<SpherePoint>>>>()?;
            demos.paths.push(paths);
        }
        Ok(demos)
    }
}
