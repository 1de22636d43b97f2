use super::{Costmap, InflationParams, INSCRIBED, LETHAL, MAX_NON_OBSTACLE, NO_INFORMATION};
use crate::grid::{squared_distance_transform, EDT_INF};

/// Cost assigned at distance `d` (metres) from the nearest lethal cell, or
/// `None` beyond the inflation radius.
pub fn inflated_cost(d: f64, params: &InflationParams) -> Option<u8> {
    if d == 0.0 {
        Some(LETHAL)
    } else if d <= params.inscribed_radius {
        Some(INSCRIBED)
    } else if d <= params.inflation_radius {
        let c = (MAX_NON_OBSTACLE as f64 * (-params.cost_scaling * (d - params.inscribed_radius)).exp()).round();
        Some(c as u8)
    } else {
        None
    }
}

/// Inflates around every lethal cell using the exact Euclidean distance
/// transform. Costs only ever rise; unknown cells are overwritten only by
/// inscribed cost.
pub fn inflate(cm: &mut Costmap) {
    let lethal: Vec<bool> = cm.cost.iter().map(|c| *c == LETHAL).collect();
    if !lethal.iter().any(|b| *b) {
        return;
    }
    let sq = squared_distance_transform(cm.info.width, cm.info.height, &lethal);
    let params = cm.inflation;
    let res = cm.info.resolution;
    for (cost, d2) in cm.cost.iter_mut().zip(sq) {
        if d2 >= EDT_INF {
            continue;
        }
        let d = (d2 as f64).sqrt() * res;
        let Some(new) = inflated_cost(d, &params) else {
            continue;
        };
        if *cost == NO_INFORMATION {
            if new >= INSCRIBED {
                *cost = new;
            }
        } else if new > *cost {
            *cost = new;
        }
    }
}

impl Costmap {
    pub fn inflate(&mut self) {
        inflate(self);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costmap::FREE_SPACE;
    use crate::geometry::Pose2D;
    use crate::grid::GridInfo;

    fn params() -> InflationParams {
        InflationParams {
            inflation_radius: 0.55,
            cost_scaling: 10.0,
            inscribed_radius: 0.2,
        }
    }

    #[test]
    fn formula_examples() {
        assert_eq!(inflated_cost(0.2, &params()), Some(INSCRIBED));
        assert_eq!(inflated_cost(0.3, &params()), Some(93));
        assert_eq!((252.0 * (-1.0f64).exp()).round(), 93.0);
        assert_eq!(inflated_cost(0.56, &params()), None);
    }

    #[test]
    fn no_lethal_is_noop() {
        let mut cm = Costmap::new(GridInfo::new(0.05, 10, 10, Pose2D::default()), FREE_SPACE, params());
        cm.set(3, 3, NO_INFORMATION);
        let before = cm.clone();
        cm.inflate();
        assert_eq!(cm, before);
    }

    #[test]
    fn single_lethal_profile() {
        let mut cm = Costmap::new(GridInfo::new(0.05, 41, 41, Pose2D::default()), FREE_SPACE, params());
        cm.set(20, 20, LETHAL);
        cm.inflate();
        assert_eq!(cm.get(20, 20), LETHAL);
        assert_eq!(cm.get(24, 20), INSCRIBED);
        assert_eq!(cm.get(26, 20), 93);
        assert_eq!(cm.get(20, 40), FREE_SPACE);
        // Monotone along a ray away from the obstacle.
        let row: Vec<u8> = (20..41).map(|i| cm.get(i, 20)).collect();
        assert!(row.windows(2).all(|w| w[0] >= w[1]));
    }
}
