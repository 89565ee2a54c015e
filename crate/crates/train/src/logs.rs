//! CSV training logs.

use std::io::Write;

use crate::error::Result;
use crate::gae::{GaeEpoch, GaeStep};
use crate::segment::{SegEpoch, SegStep};

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// One row per step; validation columns are filled on the last step of each
/// epoch.
pub fn write_segmentor_log<W: Write>(steps: &[SegStep], epochs: &[SegEpoch], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "epoch", "L_seg", "L_gae", "L_tot", "val_DI_LV", "val_DI_RV", "val_DI_MYO"])?;
    for s in steps {
        let end = epochs.iter().find(|e| e.steps == s.step && e.epoch == s.epoch);
        let val = |k: usize| opt(end.map(|e| e.val_dice[k]));
        w.write_record([
            s.step.to_string(),
            s.epoch.to_string(),
            format!("{}", s.l_seg),
            opt(s.l_gae),
            format!("{}", s.l_tot),
            val(0),
            val(1),
            val(2),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_gae_log<W: Write>(steps: &[GaeStep], epochs: &[GaeEpoch], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "epoch", "L_recon", "val_L_recon"])?;
    for s in steps {
        let end = epochs.iter().find(|e| e.steps == s.step && e.epoch == s.epoch);
        w.write_record([s.step.to_string(), s.epoch.to_string(), format!("{}", s.l_recon), opt(end.map(|e| e.val_l_recon))])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
