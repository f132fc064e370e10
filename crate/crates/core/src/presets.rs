//! Named scenarios for the standard experiments.

use crate::adaptation::AdaptationParams;
use crate::config::{DeploymentKind, MobilityKind, Scenario};
use crate::queryapp::DemandProfile;

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub scenario: Scenario,
}

fn dissemination_study(deployment: DeploymentKind, mobility: MobilityKind) -> Scenario {
    let mut s = Scenario::default();
    s.deployment.kind = deployment;
    s.mobility.kind = mobility;
    s
}

pub fn builtin_presets() -> Vec<Preset> {
    let mut adaptive = dissemination_study(DeploymentKind::Stationary, MobilityKind::Static);
    adaptive.dissemination.cache_time = 100.0;
    adaptive.sim_time = 20_000.0;
    adaptive.queries.demand = DemandProfile::four_phase(2000, 200);
    adaptive.adaptation = Some(AdaptationParams::default());
    vec![
        Preset {
            name: "paper-sec5-uniform-static",
            description: "Uniform static deployment, 2000 nodes, 200 copies, tau 10 s, 10,000 s",
            scenario: dissemination_study(DeploymentKind::Uniform, MobilityKind::Static),
        },
        Preset {
            name: "paper-sec5-stationary-static",
            description: "Static snapshot of stationary random waypoint, 200 copies, tau 10 s",
            scenario: dissemination_study(DeploymentKind::Stationary, MobilityKind::Static),
        },
        Preset {
            name: "paper-sec5-clustered-static",
            description: "Static four-cluster deployment with bridge nodes, 200 copies, tau 10 s",
            scenario: dissemination_study(DeploymentKind::Clustered, MobilityKind::Static),
        },
        Preset {
            name: "paper-sec5-rwp-mobile",
            description: "Random waypoint mobility from its stationary state, 1-5 m/s, 10 s pause",
            scenario: dissemination_study(DeploymentKind::Stationary, MobilityKind::RandomWaypoint),
        },
        Preset {
            name: "paper-sec5-randomtrip-mobile",
            description: "Random trip mobility over four clusters, 30% inter-cluster trips",
            scenario: dissemination_study(DeploymentKind::Clustered, MobilityKind::RandomTrip),
        },
        Preset {
            name: "paper-sec6",
            description: "Replication and drop control under four-phase demand, tau 100 s, 20,000 s",
            scenario: adaptive,
        },
    ]
}

pub fn find_preset(name: &str) -> Option<Preset> {
    builtin_presets().into_iter().find(|p| p.name == name)
}
