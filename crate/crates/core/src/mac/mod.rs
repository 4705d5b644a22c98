pub mod analytic;
pub mod assignment;
pub mod association;
pub mod power;
pub mod query;

pub use analytic::{
    choir_fraction_probability, collision_probability, collision_probability_approx,
    multiuser_capacity, rate_model, Capacity, RateModel,
};
pub use assignment::{assign_cyclic_shift, assign_with_shifts, AssignmentTable, DeviceId};
pub use association::{association_step, AccessPoint, DeviceMac, RoundEvents, RoundOutcome};
pub use power::{backscatter_power_gain, device_power_adapt, DevicePowerState, PowerAdaptConfig, PowerLevel};
pub use query::{decode_query, encode_query, AssocPayload, QueryMessage};
