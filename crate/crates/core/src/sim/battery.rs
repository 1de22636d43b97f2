use serde::{Deserialize, Serialize};

/// Fraction of nominal draw consumed while stationary.
pub const IDLE_DRAW_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryState {
    pub capacity_ah: f64,
    pub charge_fraction: f64,
    pub nominal_draw_a: f64,
    pub charging: bool,
    /// Time for a full 0 → 1 charge, in hours.
    pub full_charge_hours: f64,
}

impl Default for BatteryState {
    fn default() -> Self {
        Self {
            capacity_ah: 30.0,
            charge_fraction: 1.0,
            nominal_draw_a: 7.5,
            charging: false,
            full_charge_hours: 4.0,
        }
    }
}

impl BatteryState {
    /// Advances the pack by `dt` seconds while moving at `speed_fraction` of
    /// the top speed (clamped to [0, 1]).
    pub fn advance(&mut self, dt: f64, speed_fraction: f64) {
        if self.charging {
            let rate = 1.0 / (self.full_charge_hours * 3600.0);
            self.charge_fraction = (self.charge_fraction + rate * dt).min(1.0);
            return;
        }
        let scale = speed_fraction.clamp(0.0, 1.0).max(IDLE_DRAW_FLOOR);
        let drained = self.nominal_draw_a * dt / 3600.0 / self.capacity_ah * scale;
        self.charge_fraction = (self.charge_fraction - drained).max(0.0);
    }

    /// Hours of nominal-draw operation left; `None` while charging.
    pub fn time_remaining_hours(&self) -> Option<f64> {
        if self.charging || self.nominal_draw_a <= 0.0 {
            return None;
        }
        Some(self.charge_fraction * self.capacity_ah / self.nominal_draw_a)
    }

    pub fn is_depleted(&self) -> bool {
        self.charge_fraction <= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_remaining_examples() {
        let b = BatteryState::default();
        assert!((b.time_remaining_hours().unwrap() - 4.0).abs() < 1e-12);
        let empty = BatteryState {
            charge_fraction: 0.0,
            ..b
        };
        assert_eq!(empty.time_remaining_hours(), Some(0.0));
        let big = BatteryState {
            capacity_ah: 50.0,
            ..b
        };
        assert!((big.time_remaining_hours().unwrap() - 50.0 / 7.5).abs() < 1e-12);
        let charging = BatteryState { charging: true, ..b };
        assert_eq!(charging.time_remaining_hours(), None);
    }

    #[test]
    fn drain_is_monotone_and_floored() {
        let mut b = BatteryState::default();
        let mut last = b.charge_fraction;
        for k in 0..100 {
            b.advance(1.0, (k % 3) as f64 / 2.0);
            assert!(b.charge_fraction < last);
            last = b.charge_fraction;
        }
        let mut idle = BatteryState::default();
        idle.advance(3600.0, 0.0);
        assert!((1.0 - idle.charge_fraction - 7.5 / 30.0 * IDLE_DRAW_FLOOR).abs() < 1e-12);
    }
}
