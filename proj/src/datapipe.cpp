#include "nowcast/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace nowcast {

using nlohmann::json;

void GridField::validate() const {
    if (spacing <= 0.0) throw std::invalid_argument("GridField: spacing must be positive");
    if (rows == 0 || cols == 0) throw std::invalid_argument("GridField: extents must be >= 1");
    if (values.size() != rows * cols) {
        throw std::invalid_argument("GridField: payload size " + std::to_string(values.size()) +
                                    " does not match extents " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    }
    if (!mask.empty() && mask.size() != values.size()) {
        throw std::invalid_argument("GridField: mask size does not match extents");
    }
    if (name == "P") {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!masked(i) && values[i] < 0.0f) {
                throw std::invalid_argument("GridField: negative unmasked precipitation at pixel " +
                                            std::to_string(i));
            }
        }
    }
}

namespace {

constexpr char kMagic[4] = {'G', 'F', 'L', 'D'};
constexpr std::uint8_t kFieldVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f32(std::string& out, float f) {
    std::uint32_t v = 0;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
    std::uint32_t v = 0;
    for (int b = 3; b >= 0; --b) v = (v << 8) | static_cast<std::uint8_t>(buf[at + b]);
    return v;
}

float get_f32(const std::string& buf, std::size_t at) {
    const std::uint32_t v = get_u32(buf, at);
    float f = 0.0f;
    std::memcpy(&f, &v, 4);
    return f;
}

[[noreturn]] void corrupt(const std::string& path, std::size_t at, const std::string& what) {
    throw std::runtime_error("read_field: " + path + ": " + what + " at byte " +
                             std::to_string(at));
}

}  // namespace

void write_field(const GridField& field, const std::string& path) {
    field.validate();
    json header{{"name", field.name},
                {"units", field.units},
                {"valid_time", field.valid_time},
                {"origin", {field.origin_lat, field.origin_lon}},
                {"spacing", field.spacing},
                {"extents", {field.rows, field.cols}}};
    const std::string header_str = header.dump();

    std::string blob;
    blob.reserve(9 + header_str.size() + 4 * field.values.size());
    blob.append(kMagic, 4);
    blob.push_back(static_cast<char>(kFieldVersion));
    put_u32(blob, static_cast<std::uint32_t>(header_str.size()));
    blob += header_str;
    for (float v : field.values) put_f32(blob, v);
    const std::size_t n = field.values.size();
    std::string bits((n + 7) / 8, '\0');
    for (std::size_t i = 0; i < n; ++i) {
        if (field.masked(i)) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
    }
    blob += bits;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_field: cannot open " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("write_field: short write to " + path);
}

GridField read_field(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_field: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 9) corrupt(path, buf.size(), "file shorter than the fixed header");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) corrupt(path, 0, "bad magic");
    if (static_cast<std::uint8_t>(buf[4]) != kFieldVersion) {
        corrupt(path, 4, "unsupported format version " + std::to_string(buf[4]));
    }
    const std::size_t header_len = get_u32(buf, 5);
    if (9 + header_len > buf.size()) corrupt(path, 9, "header extends past end of file");

    json header;
    try {
        header = json::parse(buf.substr(9, header_len));
    } catch (const json::exception& e) {
        corrupt(path, 9, std::string("malformed header JSON (") + e.what() + ")");
    }

    GridField f;
    try {
        f.name = header.at("name").get<std::string>();
        f.units = header.at("units").get<std::string>();
        f.valid_time = header.at("valid_time").get<std::int64_t>();
        f.origin_lat = header.at("origin").at(0).get<double>();
        f.origin_lon = header.at("origin").at(1).get<double>();
        f.spacing = header.at("spacing").get<double>();
        f.rows = header.at("extents").at(0).get<std::size_t>();
        f.cols = header.at("extents").at(1).get<std::size_t>();
    } catch (const json::exception& e) {
        corrupt(path, 9, std::string("incomplete header (") + e.what() + ")");
    }

    const std::size_t n = f.rows * f.cols;
    const std::size_t payload_at = 9 + header_len;
    const std::size_t mask_at = payload_at + 4 * n;
    const std::size_t expected = mask_at + (n + 7) / 8;
    if (buf.size() < expected) {
        corrupt(path, buf.size(),
                "extent/payload mismatch: expected " + std::to_string(expected) + " bytes");
    }
    if (buf.size() > expected) {
        corrupt(path, expected, "trailing bytes after the bitmask");
    }
    f.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) f.values[i] = get_f32(buf, payload_at + 4 * i);
    bool any = false;
    std::vector<std::uint8_t> mask(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t bit = (static_cast<std::uint8_t>(buf[mask_at + i / 8]) >> (i % 8)) & 1u;
        mask[i] = bit;
        any = any || bit;
    }
    if (any) f.mask = std::move(mask);
    f.validate();
    return f;
}

GridField regrid_nearest(const GridField& src, double spacing, double origin_lat,
                         double origin_lon, std::size_t rows, std::size_t cols) {
    src.validate();
    if (spacing <= 0.0 || rows == 0 || cols == 0) {
        throw std::invalid_argument("regrid_nearest: invalid target geometry");
    }
    const auto overlap = [](double t_lo, double t_hi, double s_lo, double s_hi) {
        return t_hi >= s_lo && t_lo <= s_hi;
    };
    const double src_lat_hi = src.origin_lat + (static_cast<double>(src.rows) - 0.5) * src.spacing;
    const double src_lon_hi = src.origin_lon + (static_cast<double>(src.cols) - 0.5) * src.spacing;
    const double tgt_lat_hi = origin_lat + static_cast<double>(rows - 1) * spacing;
    const double tgt_lon_hi = origin_lon + static_cast<double>(cols - 1) * spacing;
    if (!overlap(origin_lat, tgt_lat_hi, src.origin_lat - 0.5 * src.spacing, src_lat_hi) ||
        !overlap(origin_lon, tgt_lon_hi, src.origin_lon - 0.5 * src.spacing, src_lon_hi)) {
        throw std::invalid_argument("regrid_nearest: target domain is disjoint from the source");
    }

    GridField out;
    out.name = src.name;
    out.units = src.units;
    out.valid_time = src.valid_time;
    out.origin_lat = origin_lat;
    out.origin_lon = origin_lon;
    out.spacing = spacing;
    out.rows = rows;
    out.cols = cols;
    out.values.resize(rows * cols);
    std::vector<std::uint8_t> mask(rows * cols, 0);
    bool any_mask = false;
    for (std::size_t i = 0; i < rows; ++i) {
        const double lat = origin_lat + static_cast<double>(i) * spacing;
        long si = std::lround((lat - src.origin_lat) / src.spacing);
        si = std::clamp(si, 0L, static_cast<long>(src.rows) - 1);
        for (std::size_t j = 0; j < cols; ++j) {
            const double lon = origin_lon + static_cast<double>(j) * spacing;
            long sj = std::lround((lon - src.origin_lon) / src.spacing);
            sj = std::clamp(sj, 0L, static_cast<long>(src.cols) - 1);
            const std::size_t s =
                static_cast<std::size_t>(si) * src.cols + static_cast<std::size_t>(sj);
            out.values[i * cols + j] = src.values[s];
            if (src.masked(s)) {
                mask[i * cols + j] = 1;
                any_mask = true;
            }
        }
    }
    if (any_mask) out.mask = std::move(mask);
    return out;
}

void FieldSeries::add(GridField field) {
    field.validate();
    if (fields_.empty()) {
        rows_ = field.rows;
        cols_ = field.cols;
    } else if (field.rows != rows_ || field.cols != cols_) {
        throw std::invalid_argument("FieldSeries: field " + field.name + "@" +
                                    std::to_string(field.valid_time) + " has extents " +
                                    std::to_string(field.rows) + "x" + std::to_string(field.cols) +
                                    ", series has " + std::to_string(rows_) + "x" +
                                    std::to_string(cols_));
    }
    const auto key = std::make_pair(field.name, field.valid_time);
    fields_[key] = std::move(field);
}

const GridField* FieldSeries::find(const std::string& name, std::int64_t time) const {
    const auto it = fields_.find({name, time});
    return it == fields_.end() ? nullptr : &it->second;
}

const GridField& FieldSeries::require(const std::string& name, std::int64_t time) const {
    const GridField* f = find(name, time);
    if (f == nullptr) {
        throw std::runtime_error("assemble_block: missing frame " + name + " at t=" +
                                 std::to_string(time) + " min");
    }
    return *f;
}

std::vector<std::int64_t> FieldSeries::times(const std::string& name) const {
    std::vector<std::int64_t> out;
    for (const auto& [key, field] : fields_) {
        (void)field;
        if (key.first == name) out.push_back(key.second);
    }
    return out;
}

std::vector<std::int64_t> FieldSeries::valid_anchor_times() const {
    std::vector<std::int64_t> anchors;
    for (std::int64_t t : times("P")) {
        bool ok = true;
        for (int n = 0; n < 12 && ok; ++n) {
            ok = find("P", t - n * kStepMinutes) != nullptr;
            const std::int64_t gfs_t = t + (12 - 2 * n) * kStepMinutes;
            ok = ok && find("TPW", gfs_t) && find("U", gfs_t) && find("V", gfs_t);
        }
        for (int k = 1; k <= 8 && ok; ++k) ok = find("P", t + k * kStepMinutes) != nullptr;
        if (ok) anchors.push_back(t);
    }
    return anchors;
}

FieldSeries load_field_directory(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw std::runtime_error("load_field_directory: " + dir + " is not a directory");
    }
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".gfld") {
            paths.push_back(entry.path());
        }
    }
    std::sort(paths.begin(), paths.end());
    std::vector<GridField> fields;
    fields.reserve(paths.size());
    for (const auto& p : paths) fields.push_back(read_field(p.string()));

    // covariates on a coarser grid are mapped onto the precipitation grid
    // once here, never per block
    const GridField* reference = nullptr;
    for (const GridField& f : fields) {
        if (f.name == "P") {
            reference = &f;
            break;
        }
    }
    FieldSeries series;
    for (GridField& f : fields) {
        if (reference != nullptr && f.name != "P" &&
            (f.rows != reference->rows || f.cols != reference->cols ||
             f.spacing != reference->spacing || f.origin_lat != reference->origin_lat ||
             f.origin_lon != reference->origin_lon)) {
            series.add(regrid_nearest(f, reference->spacing, reference->origin_lat,
                                      reference->origin_lon, reference->rows, reference->cols));
        } else {
            series.add(std::move(f));
        }
    }
    return series;
}

namespace {

Window resolve_window(const FieldSeries& fields, Window w) {
    if (w.rows == 0) w.rows = fields.rows() - w.row0;
    if (w.cols == 0) w.cols = fields.cols() - w.col0;
    if (w.row0 + w.rows > fields.rows() || w.col0 + w.cols > fields.cols() || w.rows == 0 ||
        w.cols == 0) {
        throw std::invalid_argument("assemble_block: window exceeds the field domain");
    }
    return w;
}

}  // namespace

Sample assemble_block(const FieldSeries& fields, std::int64_t anchor, Window window) {
    if (fields.empty()) throw std::invalid_argument("assemble_block: empty field series");
    const Window w = resolve_window(fields, window);
    const std::size_t m = w.rows, n = w.cols;
    const std::size_t full_cols = fields.cols();

    Sample sample;
    sample.input.anchor_time = anchor;
    sample.target.anchor_time = anchor;
    sample.input.tensor = Tensor::zeros({m, n, 4, 12});
    sample.target.tensor = Tensor::zeros({m, n, 8});

    double* in = sample.input.tensor.mutable_data().data();
    for (std::size_t t = 0; t < 12; ++t) {
        const std::int64_t step = static_cast<std::int64_t>(t);
        const GridField& p = fields.require("P", anchor - step * kStepMinutes);
        const std::int64_t gfs_time = anchor + (12 - 2 * step) * kStepMinutes;
        const GridField& tpw = fields.require("TPW", gfs_time);
        const GridField& u = fields.require("U", gfs_time);
        const GridField& v = fields.require("V", gfs_time);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t s = (w.row0 + i) * full_cols + (w.col0 + j);
                const std::size_t base = ((i * n + j) * 4) * 12 + t;
                in[base] = p.values[s];
                in[base + 12] = tpw.values[s];
                in[base + 2 * 12] = u.values[s];
                in[base + 3 * 12] = v.values[s];
            }
        }
    }

    double* tg = sample.target.tensor.mutable_data().data();
    std::vector<std::uint8_t> mask(m * n * 8, 0);
    bool any_mask = false;
    for (std::size_t k = 0; k < 8; ++k) {
        const GridField& p =
            fields.require("P", anchor + static_cast<std::int64_t>(k + 1) * kStepMinutes);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const std::size_t s = (w.row0 + i) * full_cols + (w.col0 + j);
                tg[(i * n + j) * 8 + k] = p.values[s];
                if (p.masked(s)) {
                    mask[(i * n + j) * 8 + k] = 1;
                    any_mask = true;
                }
            }
        }
    }
    if (any_mask) sample.target.mask = std::move(mask);
    return sample;
}

std::vector<PatchAnchor> sample_patch_anchors(const FieldSeries& fields, std::size_t patch,
                                              std::size_t count, std::uint64_t seed,
                                              double train_fraction) {
    if (patch == 0 || patch > fields.rows() || patch > fields.cols()) {
        throw std::invalid_argument("sample_patch_anchors: patch " + std::to_string(patch) +
                                    " does not fit the " + std::to_string(fields.rows()) + "x" +
                                    std::to_string(fields.cols()) + " domain");
    }
    const std::vector<std::int64_t> anchors = fields.valid_anchor_times();
    if (count > 0 && anchors.empty()) {
        throw std::invalid_argument("sample_patch_anchors: no anchor time has full coverage");
    }
    Rng rng(seed);
    std::vector<PatchAnchor> out;
    out.reserve(count);
    const std::size_t train_count =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(count)));
    for (std::size_t i = 0; i < count; ++i) {
        PatchAnchor a;
        a.anchor_time = anchors[rng.uniform_int(anchors.size())];
        a.row0 = rng.uniform_int(fields.rows() - patch + 1);
        a.col0 = rng.uniform_int(fields.cols() - patch + 1);
        a.validation = i >= train_count;
        out.push_back(a);
    }
    return out;
}

BlockDataset materialize_patches(const FieldSeries& fields, std::size_t patch,
                                 const std::vector<PatchAnchor>& anchors) {
    BlockDataset ds;
    for (const PatchAnchor& a : anchors) {
        Sample s = assemble_block(fields, a.anchor_time, Window{a.row0, a.col0, patch, patch});
        (a.validation ? ds.validation : ds.train).push_back(std::move(s));
    }
    return ds;
}

BlockDataset sample_patches(const FieldSeries& fields, std::size_t patch, std::size_t count,
                            std::uint64_t seed, double train_fraction) {
    return materialize_patches(fields, patch,
                               sample_patch_anchors(fields, patch, count, seed, train_fraction));
}

namespace {

/// Mirror reflection without edge repetition, valid for any integer offset.
std::size_t reflect_index(std::ptrdiff_t i, std::size_t extent) {
    if (extent == 1) return 0;
    const std::ptrdiff_t period = 2 * static_cast<std::ptrdiff_t>(extent) - 2;
    std::ptrdiff_t j = i % period;
    if (j < 0) j += period;
    if (j >= static_cast<std::ptrdiff_t>(extent)) j = period - j;
    return static_cast<std::size_t>(j);
}

}  // namespace

std::vector<Tensor> tiled_predict(const TileModel& model, const InputBlock& full_block,
                                  std::size_t patch) {
    if (patch < 4 || patch % 4 != 0) {
        throw std::invalid_argument("tiled_predict: patch must be a positive multiple of 4");
    }
    if (full_block.tensor.rank() != 4) {
        throw std::invalid_argument("tiled_predict: block tensor must be (M, N, C, T)");
    }
    const std::size_t m = full_block.tensor.extent(0), n = full_block.tensor.extent(1);
    const std::size_t channels = full_block.tensor.extent(2), steps = full_block.tensor.extent(3);
    const std::size_t half = patch / 2, quarter = patch / 4;
    const std::size_t tiles_y = (m + half - 1) / half;
    const std::size_t tiles_x = (n + half - 1) / half;

    std::vector<Tensor> outputs;
    std::size_t lead_count = 0;
    std::size_t out_channels = 0;  // 0 = scalar per pixel

    const double* src = full_block.tensor.data().data();
    for (std::size_t ty = 0; ty < tiles_y; ++ty) {
        for (std::size_t tx = 0; tx < tiles_x; ++tx) {
            InputBlock tile;
            tile.anchor_time = full_block.anchor_time;
            tile.tensor = Tensor::zeros({patch, patch, channels, steps});
            double* dst = tile.tensor.mutable_data().data();
            const std::size_t slab = channels * steps;
            for (std::size_t r = 0; r < patch; ++r) {
                const std::size_t sr = reflect_index(
                    static_cast<std::ptrdiff_t>(ty * half + r) - static_cast<std::ptrdiff_t>(quarter),
                    m);
                for (std::size_t c = 0; c < patch; ++c) {
                    const std::size_t sc =
                        reflect_index(static_cast<std::ptrdiff_t>(tx * half + c) -
                                          static_cast<std::ptrdiff_t>(quarter),
                                      n);
                    std::copy(src + (sr * n + sc) * slab, src + (sr * n + sc + 1) * slab,
                              dst + (r * patch + c) * slab);
                }
            }

            std::vector<Tensor> tile_out = model(tile);
            if (outputs.empty()) {
                lead_count = tile_out.size();
                if (lead_count == 0) {
                    throw std::invalid_argument("tiled_predict: model produced no lead outputs");
                }
                const Tensor& probe = tile_out.front();
                if (probe.rank() == 3) {
                    out_channels = probe.extent(2);
                } else if (probe.rank() != 2) {
                    throw std::invalid_argument("tiled_predict: tile output must be (p, p) or "
                                                "(p, p, C), got " +
                                                shape_str(probe.shape()));
                }
                for (std::size_t k = 0; k < lead_count; ++k) {
                    outputs.push_back(out_channels == 0 ? Tensor::zeros({m, n})
                                                        : Tensor::zeros({m, n, out_channels}));
                }
            }
            if (tile_out.size() != lead_count) {
                throw std::invalid_argument("tiled_predict: inconsistent lead count across tiles");
            }
            for (std::size_t k = 0; k < lead_count; ++k) {
                const Tensor& t = tile_out[k];
                const std::size_t rank_expected = out_channels == 0 ? 2 : 3;
                if (t.rank() != rank_expected || t.extent(0) != patch || t.extent(1) != patch ||
                    (out_channels != 0 && t.extent(2) != out_channels)) {
                    throw std::invalid_argument("tiled_predict: tile output " +
                                                shape_str(t.shape()) + " does not match patch " +
                                                std::to_string(patch));
                }
                const std::size_t ch = out_channels == 0 ? 1 : out_channels;
                double* po = outputs[k].mutable_data().data();
                const double* pt = t.data().data();
                for (std::size_t i = 0; i < half; ++i) {
                    const std::size_t out_r = ty * half + i;
                    if (out_r >= m) break;
                    for (std::size_t j = 0; j < half; ++j) {
                        const std::size_t out_c = tx * half + j;
                        if (out_c >= n) break;
                        for (std::size_t cc = 0; cc < ch; ++cc) {
                            po[(out_r * n + out_c) * ch + cc] =
                                pt[((quarter + i) * patch + (quarter + j)) * ch + cc];
                        }
                    }
                }
            }
        }
    }
    return outputs;
}

}  // namespace nowcast
