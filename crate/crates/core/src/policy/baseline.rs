//! Visual-servoing baseline: move by the pixel offset between the poke
//! point and the eyelet center of mass, scaled to metres.

use crate::insertion_env::Action;
use crate::percept::Observation;

/// Action toward the eyelet center of mass, and whether one was available.
///
/// Image columns follow the gel u axis and rows run against v.
pub fn vs_baseline(obs: &Observation, mm_per_px: f64) -> (Action, bool) {
    match (obs.poke_com, obs.eyelet) {
        (Some(c), Some(e)) => {
            let m = mm_per_px * 1e-3;
            (Action::new((e.com.col - c.col) * m, -(e.com.row - c.row) * m), true)
        }
        _ => (Action::zero(), false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::{EyeletSummary, PixelPos};

    fn obs(c: Option<(f64, f64)>, com: (f64, f64)) -> Observation {
        Observation {
            poke_com: c.map(|(row, col)| PixelPos { row, col }),
            eyelet_pixels: vec![],
            n: 0,
            image_diag: 500.0,
            width: 400,
            height: 300,
            eyelet: Some(EyeletSummary { com: PixelPos { row: com.0, col: com.1 }, angle: 0.0, half_extents: (1.0, 1.0) }),
            bump_count: 0,
            bump_in_hole: 0,
        }
    }

    #[test]
    fn examples() {
        let (a, ok) = vs_baseline(&obs(Some((150.0, 100.0)), (150.0, 140.0)), 0.05);
        assert!(ok);
        assert!((a.du - 0.002).abs() < 1e-15 && a.dv == 0.0);
        let (a, _) = vs_baseline(&obs(Some((150.0, 140.0)), (150.0, 140.0)), 0.05);
        assert_eq!((a.du, a.dv), (0.0, 0.0));
        let (a, _) = vs_baseline(&obs(Some((150.0, 0.0)), (150.0, 300.0)), 0.05);
        assert_eq!(a.du, 0.01);
        let (a, ok) = vs_baseline(&obs(None, (1.0, 1.0)), 0.05);
        assert!(!ok && a == Action::zero());
    }

    #[test]
    fn translation_equivariant() {
        let (a, _) = vs_baseline(&obs(Some((120.0, 90.0)), (160.0, 130.0)), 0.05);
        let (b, _) = vs_baseline(&obs(Some((100.0, 60.0)), (140.0, 100.0)), 0.05);
        assert_eq!(a, b);
    }
}
