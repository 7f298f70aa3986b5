use super::*;

/// Prosumers with no appliances, storage or harvest.
pub(crate) fn bare_scenario(n: usize, slots: usize) -> ScenarioConfig {
    let prosumer = |id| ProsumerSpec {
        id,
        appliances: vec![],
        battery: BatterySpec::none(0.0),
        renewable: vec![0.0; slots],
        utility: UtilityParams {
            beta: vec![0.6; slots],
            zeta: 0.1,
        },
        d_min: vec![0.0; slots],
        d_max: vec![10.0; slots],
    };
    ScenarioConfig {
        schema_version: SCENARIO_SCHEMA_VERSION,
        time: TimeGrid::daytime(slots, 6),
        prosumers: (0..n).map(prosumer).collect(),
        transmission: TransmissionModel::uniform(n, 0.9, 0.8),
        grid: GridPricing {
            gamma: vec![0.15; slots],
        },
        cost: GenerationCost::reference(1.0),
    }
}
