#pragma once

#include <cstdint>
#include <vector>

#include "nowcast/datapipe.hpp"

#include "json.hpp"

namespace nowcast {

/// One advected Gaussian precipitation cell. When `has_velocity` is false the
/// cell moves with the local wind field instead of a fixed vector.
struct StormCell {
    double amplitude = 4.0;  // peak rate, mm/hr
    double width = 5.0;      // gaussian sigma, pixels
    double row = 0.0;        // initial center
    double col = 0.0;
    double growth_rate = 0.0;  // per step; amplitude scales by exp(growth_rate * k)
    bool has_velocity = false;
    double vel_rows = 0.0;  // fixed advection override, pixels/step
    double vel_cols = 0.0;
};

/// Synthetic storm scene: Gaussian cells advected by a smooth wind field,
/// TPW as a smoothed leading indicator of precipitation, U/V covariates equal
/// to the wind field plus observation noise.
struct SceneConfig {
    std::size_t rows = 64;
    std::size_t cols = 64;
    std::size_t cell_count = 6;      // used when `cells` is empty
    double amplitude_min = 2.0;      // random-cell draws
    double amplitude_max = 8.0;
    double width_min = 3.0;
    double width_max = 7.0;
    double growth_min = -0.02;
    double growth_max = 0.02;
    bool heavy_tail = false;  // Pareto-like amplitude draws up to ~10x amplitude_max
    double wind_rows = 0.0;   // base advection, pixels/step
    double wind_cols = 1.0;
    double wind_amplitude = 0.0;  // sinusoidal spatial variation of the wind field
    double wind_noise = 0.05;     // N(0, sigma) noise on the U/V covariates
    double tpw_base = 1.0;
    double tpw_scale = 0.5;
    double tpw_noise = 0.3;  // forecast-error noise on the TPW covariate
    std::size_t tpw_lead_steps = 2;  // TPW at t mirrors smoothed P at t + lead
    bool periodic = true;
    std::int64_t start_time = 0;  // minutes since epoch of step 0
    double spacing = 0.1;
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    std::uint64_t seed = 0;
    std::vector<StormCell> cells;  // explicit cells override the random draws

    nlohmann::json to_json() const;
    static SceneConfig from_json(const nlohmann::json& j);
};

struct SceneSequence {
    std::vector<GridField> p;    // every 30-minute step
    std::vector<GridField> tpw;  // hourly (even steps)
    std::vector<GridField> u;
    std::vector<GridField> v;
};

/// Deterministic in (config, config.seed). `steps` must be >= 20 so at least
/// one full input/target block fits.
SceneSequence generate_sequence(const SceneConfig& config, std::size_t steps);

/// The persistence benchmark: the last observed frame repeated at all leads.
TargetBlock persistence_forecast(const GridField& last_frame, std::size_t forecast_steps = 8);

}  // namespace nowcast
