use geoprior_nn::models::foreground_channels;
use geoprior_nn::{Gae, Graph, Mode, NodeId, Real};

use crate::error::Result;

/// Nodes of the coupled segmentor loss.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub seg: NodeId,
    pub gae: Option<NodeId>,
    pub total: NodeId,
}

/// `L_seg(P, B) + λ·L_gae(Feat_P, Feat_G)` from segmentor logits.
/// `feat_target` is `Enc(G)` for the batch; without it the loss is `L_seg`.
pub fn total_loss<T: Real>(g: &mut Graph<T>, logits: NodeId, target: &[u8], prior: Option<(&mut Gae<T>, NodeId)>, lambda: T) -> Result<LossNodes> {
    let seg = g.softmax_ce(logits, target)?;
    let Some((gae, feat_target)) = prior else {
        return Ok(LossNodes { seg, gae: None, total: seg });
    };
    let p = g.softmax(logits);
    let fg = foreground_channels(g, p)?;
    let feat = gae.encode(g, fg, Mode::Eval)?;
    let l_gae = feature_loss(g, feat, feat_target)?;
    let total = g.add_scaled(seg, l_gae, lambda)?;
    Ok(LossNodes {
        seg,
        gae: Some(l_gae),
        total,
    })
}

/// Mean squared distance between two feature vectors.
pub fn feature_loss<T: Real>(g: &mut Graph<T>, feat_p: NodeId, feat_g: NodeId) -> Result<NodeId> {
    Ok(g.mse(feat_p, feat_g)?)
}
