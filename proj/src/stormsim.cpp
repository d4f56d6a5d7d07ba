#include "nowcast/stormsim.hpp"

#include <cmath>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

json SceneConfig::to_json() const {
    json cells_json = json::array();
    for (const StormCell& c : cells) {
        cells_json.push_back(json{{"amplitude", c.amplitude},
                                  {"width", c.width},
                                  {"row", c.row},
                                  {"col", c.col},
                                  {"growth_rate", c.growth_rate},
                                  {"has_velocity", c.has_velocity},
                                  {"vel_rows", c.vel_rows},
                                  {"vel_cols", c.vel_cols}});
    }
    return json{{"rows", rows},
                {"cols", cols},
                {"cell_count", cell_count},
                {"amplitude_min", amplitude_min},
                {"amplitude_max", amplitude_max},
                {"width_min", width_min},
                {"width_max", width_max},
                {"growth_min", growth_min},
                {"growth_max", growth_max},
                {"heavy_tail", heavy_tail},
                {"wind_rows", wind_rows},
                {"wind_cols", wind_cols},
                {"wind_amplitude", wind_amplitude},
                {"wind_noise", wind_noise},
                {"tpw_base", tpw_base},
                {"tpw_scale", tpw_scale},
                {"tpw_noise", tpw_noise},
                {"tpw_lead_steps", tpw_lead_steps},
                {"periodic", periodic},
                {"start_time", start_time},
                {"spacing", spacing},
                {"origin_lat", origin_lat},
                {"origin_lon", origin_lon},
                {"seed", seed},
                {"cells", cells_json}};
}

SceneConfig SceneConfig::from_json(const json& j) {
    SceneConfig c;
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    c.cell_count = j.value("cell_count", c.cell_count);
    c.amplitude_min = j.value("amplitude_min", c.amplitude_min);
    c.amplitude_max = j.value("amplitude_max", c.amplitude_max);
    c.width_min = j.value("width_min", c.width_min);
    c.width_max = j.value("width_max", c.width_max);
    c.growth_min = j.value("growth_min", c.growth_min);
    c.growth_max = j.value("growth_max", c.growth_max);
    c.heavy_tail = j.value("heavy_tail", c.heavy_tail);
    c.wind_rows = j.value("wind_rows", c.wind_rows);
    c.wind_cols = j.value("wind_cols", c.wind_cols);
    c.wind_amplitude = j.value("wind_amplitude", c.wind_amplitude);
    c.wind_noise = j.value("wind_noise", c.wind_noise);
    c.tpw_base = j.value("tpw_base", c.tpw_base);
    c.tpw_scale = j.value("tpw_scale", c.tpw_scale);
    c.tpw_noise = j.value("tpw_noise", c.tpw_noise);
    c.tpw_lead_steps = j.value("tpw_lead_steps", c.tpw_lead_steps);
    c.periodic = j.value("periodic", c.periodic);
    c.start_time = j.value("start_time", c.start_time);
    c.spacing = j.value("spacing", c.spacing);
    c.origin_lat = j.value("origin_lat", c.origin_lat);
    c.origin_lon = j.value("origin_lon", c.origin_lon);
    c.seed = j.value("seed", c.seed);
    if (j.contains("cells")) {
        for (const json& cj : j.at("cells")) {
            StormCell cell;
            cell.amplitude = cj.value("amplitude", cell.amplitude);
            cell.width = cj.value("width", cell.width);
            cell.row = cj.value("row", cell.row);
            cell.col = cj.value("col", cell.col);
            cell.growth_rate = cj.value("growth_rate", cell.growth_rate);
            cell.has_velocity = cj.value("has_velocity", cell.has_velocity);
            cell.vel_rows = cj.value("vel_rows", cell.vel_rows);
            cell.vel_cols = cj.value("vel_cols", cell.vel_cols);
            c.cells.push_back(cell);
        }
    }
    return c;
}

namespace {

struct WindField {
    const SceneConfig* cfg;
    double row_component(double r, double c) const {
        (void)r;
        return cfg->wind_rows +
               cfg->wind_amplitude * std::cos(2.0 * M_PI * c / static_cast<double>(cfg->cols));
    }
    double col_component(double r, double c) const {
        (void)c;
        return cfg->wind_cols +
               cfg->wind_amplitude * std::sin(2.0 * M_PI * r / static_cast<double>(cfg->rows));
    }
};

double wrap(double x, double extent) {
    x = std::fmod(x, extent);
    return x < 0.0 ? x + extent : x;
}

GridField blank_field(const SceneConfig& cfg, const char* name, const char* units,
                      std::int64_t valid_time) {
    GridField f;
    f.name = name;
    f.units = units;
    f.valid_time = valid_time;
    f.origin_lat = cfg.origin_lat;
    f.origin_lon = cfg.origin_lon;
    f.spacing = cfg.spacing;
    f.rows = cfg.rows;
    f.cols = cfg.cols;
    f.values.assign(cfg.rows * cfg.cols, 0.0f);
    return f;
}

/// Splats one Gaussian cell onto the raster; periodic domains sum wrapped
/// images, open domains drop out-of-range contributions.
void splat_cell(std::vector<double>& raster, const SceneConfig& cfg, double amp, double sigma,
                double row, double col) {
    const long radius = std::max(2L, static_cast<long>(std::ceil(4.0 * sigma)));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const long r0 = static_cast<long>(std::floor(row));
    const long c0 = static_cast<long>(std::floor(col));
    const long rows = static_cast<long>(cfg.rows), cols = static_cast<long>(cfg.cols);
    for (long dr = -radius; dr <= radius; ++dr) {
        const long rr = r0 + dr;
        long ri = rr;
        if (cfg.periodic) {
            ri = rr % rows;
            if (ri < 0) ri += rows;
        } else if (rr < 0 || rr >= rows) {
            continue;
        }
        const double dy = static_cast<double>(rr) - row;
        for (long dc = -radius; dc <= radius; ++dc) {
            const long cc = c0 + dc;
            long ci = cc;
            if (cfg.periodic) {
                ci = cc % cols;
                if (ci < 0) ci += cols;
            } else if (cc < 0 || cc >= cols) {
                continue;
            }
            const double dx = static_cast<double>(cc) - col;
            raster[static_cast<std::size_t>(ri) * cfg.cols + static_cast<std::size_t>(ci)] +=
                amp * std::exp(-(dy * dy + dx * dx) * inv2s2);
        }
    }
}

/// 3x3 box smoothing with periodic or clamped edges.
std::vector<double> smooth3(const std::vector<double>& src, const SceneConfig& cfg) {
    const long rows = static_cast<long>(cfg.rows), cols = static_cast<long>(cfg.cols);
    std::vector<double> out(src.size(), 0.0);
    for (long r = 0; r < rows; ++r) {
        for (long c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (long dr = -1; dr <= 1; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    long ri = r + dr, ci = c + dc;
                    if (cfg.periodic) {
                        ri = (ri + rows) % rows;
                        ci = (ci + cols) % cols;
                    } else {
                        ri = std::clamp(ri, 0L, rows - 1);
                        ci = std::clamp(ci, 0L, cols - 1);
                    }
                    acc += src[static_cast<std::size_t>(ri) * cfg.cols +
                               static_cast<std::size_t>(ci)];
                }
            }
            out[static_cast<std::size_t>(r) * cfg.cols + static_cast<std::size_t>(c)] = acc / 9.0;
        }
    }
    return out;
}

}  // namespace

SceneSequence generate_sequence(const SceneConfig& config, std::size_t steps) {
    if (steps < 20) {
        throw std::invalid_argument("generate_sequence: need >= 20 steps (12 inputs + 8 targets)");
    }
    if (config.rows == 0 || config.cols == 0) {
        throw std::invalid_argument("generate_sequence: empty domain");
    }
    Rng rng(config.seed);
    Rng cell_rng = rng.fork(1);
    Rng noise_rng = rng.fork(2);
    Rng tpw_rng = rng.fork(3);

    std::vector<StormCell> cells = config.cells;
    if (cells.empty()) {
        for (std::size_t i = 0; i < config.cell_count; ++i) {
            StormCell c;
            if (config.heavy_tail) {
                // Pareto-like tail: most cells modest, a few near 10x the cap
                const double u = std::max(cell_rng.uniform(), 1e-6);
                c.amplitude = std::min(config.amplitude_min +
                                           (config.amplitude_max - config.amplitude_min) *
                                               (std::pow(u, -0.6) - 1.0) / 3.0,
                                       10.0 * config.amplitude_max);
            } else {
                c.amplitude = config.amplitude_min +
                              (config.amplitude_max - config.amplitude_min) * cell_rng.uniform();
            }
            c.width = config.width_min + (config.width_max - config.width_min) * cell_rng.uniform();
            c.row = cell_rng.uniform() * static_cast<double>(config.rows);
            c.col = cell_rng.uniform() * static_cast<double>(config.cols);
            c.growth_rate =
                config.growth_min + (config.growth_max - config.growth_min) * cell_rng.uniform();
            cells.push_back(c);
        }
    }
    for (const StormCell& c : cells) {
        if (c.amplitude <= 0.0 || c.width <= 0.0) {
            throw std::invalid_argument("generate_sequence: cell amplitudes and widths must be "
                                        "positive");
        }
    }

    const WindField wind{&config};
    const std::size_t horizon = steps + config.tpw_lead_steps;

    // advect cell centers through the full horizon
    std::vector<std::vector<std::pair<double, double>>> tracks(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        double r = cells[i].row, c = cells[i].col;
        tracks[i].reserve(horizon);
        for (std::size_t k = 0; k < horizon; ++k) {
            tracks[i].emplace_back(r, c);
            const double vr = cells[i].has_velocity ? cells[i].vel_rows : wind.row_component(r, c);
            const double vc = cells[i].has_velocity ? cells[i].vel_cols : wind.col_component(r, c);
            r += vr;
            c += vc;
            if (config.periodic) {
                r = wrap(r, static_cast<double>(config.rows));
                c = wrap(c, static_cast<double>(config.cols));
            }
        }
    }

    std::vector<std::vector<double>> p_rasters(horizon);
    for (std::size_t k = 0; k < horizon; ++k) {
        p_rasters[k].assign(config.rows * config.cols, 0.0);
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const double amp =
                cells[i].amplitude * std::exp(cells[i].growth_rate * static_cast<double>(k));
            splat_cell(p_rasters[k], config, amp, cells[i].width, tracks[i][k].first,
                       tracks[i][k].second);
        }
    }

    SceneSequence seq;
    for (std::size_t k = 0; k < steps; ++k) {
        const std::int64_t t = config.start_time + static_cast<std::int64_t>(k) * kStepMinutes;
        GridField p = blank_field(config, "P", "mm/hr", t);
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            p.values[i] = static_cast<float>(p_rasters[k][i]);
        }
        seq.p.push_back(std::move(p));

        if (k % 2 != 0) continue;  // GFS covariates are hourly
        const std::vector<double> lead_smoothed =
            smooth3(p_rasters[k + config.tpw_lead_steps], config);
        GridField tpw = blank_field(config, "TPW", "kg/m^2", t);
        GridField u = blank_field(config, "U", "m/s", t);
        GridField v = blank_field(config, "V", "m/s", t);
        for (std::size_t r = 0; r < config.rows; ++r) {
            for (std::size_t c = 0; c < config.cols; ++c) {
                const std::size_t i = r * config.cols + c;
                tpw.values[i] =
                    static_cast<float>(config.tpw_base + config.tpw_scale * lead_smoothed[i] +
                                       config.tpw_noise * tpw_rng.normal());
                u.values[i] = static_cast<float>(
                    wind.col_component(static_cast<double>(r), static_cast<double>(c)) +
                    config.wind_noise * noise_rng.normal());
                v.values[i] = static_cast<float>(
                    wind.row_component(static_cast<double>(r), static_cast<double>(c)) +
                    config.wind_noise * noise_rng.normal());
            }
        }
        seq.tpw.push_back(std::move(tpw));
        seq.u.push_back(std::move(u));
        seq.v.push_back(std::move(v));
    }
    return seq;
}

TargetBlock persistence_forecast(const GridField& last_frame, std::size_t forecast_steps) {
    last_frame.validate();
    if (forecast_steps == 0) {
        throw std::invalid_argument("persistence_forecast: forecast_steps must be >= 1");
    }
    TargetBlock block;
    block.anchor_time = last_frame.valid_time;
    block.tensor = Tensor::zeros({last_frame.rows, last_frame.cols, forecast_steps});
    double* out = block.tensor.mutable_data().data();
    std::vector<std::uint8_t> mask(last_frame.rows * last_frame.cols * forecast_steps, 0);
    bool any_mask = false;
    for (std::size_t i = 0; i < last_frame.values.size(); ++i) {
        for (std::size_t k = 0; k < forecast_steps; ++k) {
            out[i * forecast_steps + k] = last_frame.values[i];
            if (last_frame.masked(i)) {
                mask[i * forecast_steps + k] = 1;
                any_mask = true;
            }
        }
    }
    if (any_mask) block.mask = std::move(mask);
    return block;
}

}  // namespace nowcast
