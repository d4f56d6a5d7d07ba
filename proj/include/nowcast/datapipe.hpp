#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nowcast/tensor.hpp"

namespace nowcast {

/// 30-minute cadence of the precipitation stream; GFS covariates are hourly.
inline constexpr std::int64_t kStepMinutes = 30;

/// One georeferenced 2-D raster of a physical variable at one valid time.
/// Cell (i, j) is centered at (origin_lat + i*spacing, origin_lon + j*spacing).
/// The mask flags fill pixels (1 = fill); empty means all valid.
struct GridField {
    std::string name;   // "P", "TPW", "U", "V"
    std::string units;  // mm/hr, kg/m^2, m/s
    std::int64_t valid_time = 0;  // minutes since epoch
    double origin_lat = 0.0;
    double origin_lon = 0.0;
    double spacing = 0.1;  // degrees
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> values;       // row-major
    std::vector<std::uint8_t> mask;  // per pixel, 1 = fill

    bool masked(std::size_t i) const { return !mask.empty() && mask[i] != 0; }
    void validate() const;
};

/// GFLD container round trip. Layout: magic "GFLD", version byte, u32 LE JSON
/// header length, JSON header (name, units, valid_time, origin, spacing,
/// extents), rows*cols little-endian f32 payload, packed row-major bitmask.
void write_field(const GridField& field, const std::string& path);
GridField read_field(const std::string& path);

/// Nearest-neighbor regridding onto the target geometry; masks propagate,
/// cells beyond the source domain clamp to the nearest edge cell. Fully
/// disjoint domains are rejected.
GridField regrid_nearest(const GridField& src, double spacing, double origin_lat,
                         double origin_lon, std::size_t rows, std::size_t cols);

/// Predictor tensor (M, N, C=4, T=12): slice n holds P(t - n*dt) in channel 0
/// and the GFS covariates TPW, U, V at valid time t + (12 - 2n)*dt in
/// channels 1..3.
struct InputBlock {
    Tensor tensor;  // (M, N, 4, 12)
    std::int64_t anchor_time = 0;
};

/// The 8-step future precipitation tensor (M, N, T_f=8) for t+dt .. t+8*dt.
struct TargetBlock {
    Tensor tensor;  // (M, N, 8)
    std::int64_t anchor_time = 0;
    std::vector<std::uint8_t> mask;  // aligned with tensor, 1 = fill
};

struct Sample {
    InputBlock input;
    TargetBlock target;
};

struct BlockDataset {
    std::vector<Sample> train;
    std::vector<Sample> validation;
};

/// Sub-window of the field domain; a default-constructed window means the
/// full domain.
struct Window {
    std::size_t row0 = 0;
    std::size_t col0 = 0;
    std::size_t rows = 0;  // 0 = full extent
    std::size_t cols = 0;
};

/// All fields of one scene, indexed by (variable, valid time).
class FieldSeries {
public:
    void add(GridField field);
    const GridField* find(const std::string& name, std::int64_t time) const;
    const GridField& require(const std::string& name, std::int64_t time) const;
    std::vector<std::int64_t> times(const std::string& name) const;
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return fields_.empty(); }

    /// Anchor times with complete input/target coverage for block assembly.
    std::vector<std::int64_t> valid_anchor_times() const;

private:
    std::map<std::pair<std::string, std::int64_t>, GridField> fields_;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
};

/// Loads every .gfld file in a directory into one series.
FieldSeries load_field_directory(const std::string& dir);

/// Assembles the input/target pair at `anchor`; any missing frame rejects the
/// block with the missing variable and timestamp (no imputation).
Sample assemble_block(const FieldSeries& fields, std::int64_t anchor, Window window = {});

struct PatchAnchor {
    std::int64_t anchor_time = 0;
    std::size_t row0 = 0;
    std::size_t col0 = 0;
    bool validation = false;
};

/// Uniformly random patch anchors over valid times and in-domain offsets,
/// deterministic under the seed; the first 70% of draws are the train split.
std::vector<PatchAnchor> sample_patch_anchors(const FieldSeries& fields, std::size_t patch,
                                              std::size_t count, std::uint64_t seed,
                                              double train_fraction = 0.7);

BlockDataset materialize_patches(const FieldSeries& fields, std::size_t patch,
                                 const std::vector<PatchAnchor>& anchors);

/// sample_patch_anchors + materialize_patches in one call.
BlockDataset sample_patches(const FieldSeries& fields, std::size_t patch, std::size_t count,
                            std::uint64_t seed, double train_fraction = 0.7);

/// Per-tile model: maps a patch-sized input block to one tensor per lead,
/// each (patch, patch) or (patch, patch, C).
using TileModel = std::function<std::vector<Tensor>(const InputBlock&)>;

/// 50%-overlap tiled inference over a full-domain block: tiles stride
/// patch/2 across a reflection-padded domain and each tile writes only its
/// central (patch/2)^2 window, so every output pixel is written exactly once.
/// Returns one full-domain tensor per lead. `patch` must be divisible by 4.
std::vector<Tensor> tiled_predict(const TileModel& model, const InputBlock& full_block,
                                  std::size_t patch);

}  // namespace nowcast
