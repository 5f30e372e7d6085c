//! Comparison policies: tabular Q-learning, a time-of-use rule controller, and no battery.

pub mod qlearn;

pub use qlearn::{
    q_policy, q_update, read_qtable_csv, train_q, train_tabular, write_qtable_csv, FarmMdp,
    FarmQState, QError, QOutcome, QParams, QTable, TabularMdp, TabularStep, QTABLE_HEADER,
};

use serde::{Deserialize, Serialize};

use crate::data::HourlyRecord;
use crate::env::{Action, EnvConfig, EnvState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Tier in which the battery charges from the grid.
    pub charge_tier: usize,
    /// Tier in which the battery discharges against load.
    pub discharge_tier: usize,
    /// Also charge whenever PV exceeds load.
    pub pv_surplus_charge: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            charge_tier: 0,
            discharge_tier: 2,
            pv_surplus_charge: true,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.charge_tier == self.discharge_tier {
            return Err("charge_tier and discharge_tier must differ".into());
        }
        if self.charge_tier > 2 || self.discharge_tier > 2 {
            return Err("tier indices must be 0, 1 or 2".into());
        }
        Ok(())
    }
}

/// Time-of-use controller with PV-surplus charging. Never picks a penalized action.
pub fn rule_policy(
    state: &EnvState,
    record: &HourlyRecord,
    price_tier: usize,
    rules: &RuleConfig,
    config: &EnvConfig,
) -> Action {
    let below_max = state.soc_kwh < config.soc_max_kwh();
    let above_min = state.soc_kwh > config.soc_min_kwh();
    let surplus = rules.pv_surplus_charge && record.pv_kwh > record.load_kwh;
    if below_max && (price_tier == rules.charge_tier || surplus) {
        Action::Charge
    } else if above_min && price_tier == rules.discharge_tier && record.load_kwh > record.pv_kwh {
        Action::Discharge
    } else {
        Action::Idle
    }
}

/// Grid import with no storage: Σ max(0, load − pv).
pub fn no_battery_import(window: &[HourlyRecord]) -> f64 {
    window.iter().map(HourlyRecord::net_load).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(load: f64, pv: f64) -> HourlyRecord {
        HourlyRecord {
            index: 0,
            load_kwh: load,
            pv_kwh: pv,
            price: 0.1,
        }
    }

    fn at(soc: f64, r: &HourlyRecord) -> EnvState {
        EnvState::new(r, soc, &EnvConfig::default()).unwrap()
    }

    #[test]
    fn rule_examples() {
        let cfg = EnvConfig::default();
        let rules = RuleConfig::default();
        let r = rec(8.0, 0.0);
        assert_eq!(
            rule_policy(&at(6.75, &r), &r, 0, &rules, &cfg),
            Action::Charge
        );
        assert_eq!(
            rule_policy(&at(6.75, &r), &r, 2, &rules, &cfg),
            Action::Discharge
        );
        assert_eq!(
            rule_policy(&at(6.75, &r), &r, 1, &rules, &cfg),
            Action::Idle
        );
        assert_eq!(
            rule_policy(&at(cfg.soc_max_kwh(), &r), &r, 0, &rules, &cfg),
            Action::Idle
        );
        assert_eq!(
            rule_policy(&at(cfg.soc_min_kwh(), &r), &r, 2, &rules, &cfg),
            Action::Idle
        );

        let sunny = rec(3.0, 9.0);
        assert_eq!(
            rule_policy(&at(6.75, &sunny), &sunny, 1, &rules, &cfg),
            Action::Charge
        );
        let no_pv_rule = RuleConfig {
            pv_surplus_charge: false,
            ..rules
        };
        assert_eq!(
            rule_policy(&at(6.75, &sunny), &sunny, 1, &no_pv_rule, &cfg),
            Action::Idle
        );
    }

    #[test]
    fn no_battery_examples() {
        assert_eq!(no_battery_import(&vec![rec(5.0, 2.0); 10]), 30.0);
        assert_eq!(no_battery_import(&vec![rec(5.0, 7.0); 10]), 0.0);
        let w: Vec<_> = (0..5).map(|i| rec(i as f64, 0.0)).collect();
        assert_eq!(no_battery_import(&w), 10.0);
    }

    #[test]
    fn rule_config_validation() {
        assert!(RuleConfig::default().validate().is_ok());
        let bad = RuleConfig {
            charge_tier: 1,
            discharge_tier: 1,
            pv_surplus_charge: true,
        };
        assert!(bad.validate().is_err());
    }
}
