use super::{RelationKind, RelationSpec};
use crate::math;

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceEval {
    /// Force on `i` exerted by `j`.
    pub force: Vec2,
    /// The separation was below the softening length and was clamped.
    pub softened: bool,
}

/// Force on the particle at `pos_i` from the one at `pos_j`.
///
/// Springs pull with `k (r - r0)` along the separation (pushing apart when
/// compressed); gravity pulls with magnitude `k / r`. Separations below
/// `softening` use `softening` for the magnitude.
pub fn pair_force(spec: &RelationSpec, pos_i: Vec2, pos_j: Vec2, softening: f64) -> ForceEval {
    let dx = pos_j[0] - pos_i[0];
    let dy = pos_j[1] - pos_i[1];
    let r = math::sqrt(dx * dx + dy * dy);
    let softened = r < softening;
    if spec.kind == RelationKind::None || r == 0.0 {
        return ForceEval {
            force: [0.0, 0.0],
            softened,
        };
    }
    let r_eff = r.max(softening);
    let magnitude = match spec.kind {
        RelationKind::Spring => spec.coefficient * (r_eff - spec.rest_length),
        RelationKind::Gravity => spec.coefficient / r_eff,
        RelationKind::None => 0.0,
    };
    ForceEval {
        force: [magnitude * dx / r, magnitude * dy / r],
        softened,
    }
}
