use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VoxelGrid;
use crate::rng::StreamRng;

use super::{OptimizerState, TrainConfig, TrainState};

/// JSON sidecar written next to an RVXG checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub epoch: u32,
    pub optimizer: OptimizerState,
    pub rng_seed: [u8; 32],
    /// ChaCha word position, as a decimal string (u128).
    pub rng_word_pos: String,
}

/// Writes `<stem>.rvxg` and `<stem>.json`, creating `dir` if needed.
pub fn save_checkpoint(state: &TrainState, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    state.grid.save(&dir.join(format!("{stem}.rvxg")))?;
    let meta = CheckpointMeta {
        step: state.step,
        epoch: state.epoch,
        optimizer: state.optimizer.clone(),
        rng_seed: state.rng.get_seed(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
    };
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, serde_json::to_string(&meta)?).map_err(|e| Error::io(&path, e))
}

/// Restores a state saved by [`save_checkpoint`]. Grid values come back at
/// f32 precision.
pub fn load_checkpoint(dir: &Path, stem: &str, cfg: &TrainConfig) -> Result<TrainState> {
    let grid = VoxelGrid::load(&dir.join(format!("{stem}.rvxg")))?;
    let path = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    let mut state = TrainState::from_grid(grid, cfg);
    state.step = meta.step;
    state.epoch = meta.epoch;
    state.optimizer = meta.optimizer;
    let mut rng = StreamRng::from_seed(meta.rng_seed);
    rng.set_word_pos(
        meta.rng_word_pos
            .parse()
            .map_err(|_| Error::format("checkpoint", "bad rng word position"))?,
    );
    state.rng = rng;
    Ok(state)
}
