#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nowcast/datapipe.hpp"
#include "test_support.hpp"

using namespace nowcast;

namespace {

GridField make_field(const std::string& name, std::int64_t time, std::size_t rows,
                     std::size_t cols, float value) {
    GridField f;
    f.name = name;
    f.units = name == "P" ? "mm/hr" : "misc";
    f.valid_time = time;
    f.rows = rows;
    f.cols = cols;
    f.values.assign(rows * cols, value);
    return f;
}

/// Full coverage around anchor 0: P every 30 min over [-330, +240],
/// GFS hourly over [-300, +360]. Values encode the valid time.
FieldSeries coverage_series(std::size_t rows = 6, std::size_t cols = 6) {
    FieldSeries s;
    for (int n = -11; n <= 8; ++n) {
        s.add(make_field("P", n * kStepMinutes, rows, cols, 1000.0f + static_cast<float>(n)));
    }
    for (int h = -5; h <= 6; ++h) {
        const std::int64_t t = h * 60;
        s.add(make_field("TPW", t, rows, cols, 2000.0f + static_cast<float>(h)));
        s.add(make_field("U", t, rows, cols, 3000.0f + static_cast<float>(h)));
        s.add(make_field("V", t, rows, cols, 4000.0f + static_cast<float>(h)));
    }
    return s;
}

std::filesystem::path temp_dir() {
    auto dir = std::filesystem::temp_directory_path() / "nowcast_datapipe_test";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("datapipe");

TEST_CASE("gfld write/read round trip is bit-exact") {
    Rng rng(1);
    GridField f = make_field("P", 12345, 5, 7, 0.0f);
    for (auto& v : f.values) v = static_cast<float>(rng.uniform() * 30.0);
    f.mask.assign(f.values.size(), 0);
    f.mask[3] = 1;
    f.mask[17] = 1;
    f.origin_lat = -12.35;
    f.origin_lon = 101.7;
    f.spacing = 0.25;

    const auto path = temp_dir() / "roundtrip.gfld";
    write_field(f, path.string());
    GridField g = read_field(path.string());
    CHECK(g.name == f.name);
    CHECK(g.valid_time == f.valid_time);
    CHECK(g.origin_lat == f.origin_lat);
    CHECK(g.origin_lon == f.origin_lon);
    CHECK(g.spacing == f.spacing);
    REQUIRE(g.values.size() == f.values.size());
    for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(g.values[i] == f.values[i]);
    REQUIRE(g.mask.size() == f.mask.size());
    for (std::size_t i = 0; i < f.mask.size(); ++i) CHECK(g.mask[i] == f.mask[i]);

    // write -> read -> write produces identical bytes
    const auto path2 = temp_dir() / "roundtrip2.gfld";
    write_field(g, path2.string());
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("gfld corruption is rejected with the failure position") {
    GridField f = make_field("P", 0, 4, 4, 1.0f);
    const auto path = temp_dir() / "corrupt.gfld";
    write_field(f, path.string());

    std::string blob = slurp(path);
    SUBCASE("bad magic") {
        blob[0] = 'X';
        const auto bad = temp_dir() / "bad_magic.gfld";
        std::ofstream(bad, std::ios::binary).write(blob.data(), blob.size());
        CHECK_THROWS_WITH_AS(read_field(bad.string()), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    SUBCASE("truncated payload") {
        blob.resize(blob.size() - 10);
        const auto bad = temp_dir() / "truncated.gfld";
        std::ofstream(bad, std::ios::binary).write(blob.data(), blob.size());
        CHECK_THROWS_WITH_AS(read_field(bad.string()), doctest::Contains("at byte"),
                             std::runtime_error);
    }
    SUBCASE("malformed header json") {
        blob[10] = '#';
        const auto bad = temp_dir() / "bad_header.gfld";
        std::ofstream(bad, std::ios::binary).write(blob.data(), blob.size());
        CHECK_THROWS_WITH_AS(read_field(bad.string()), doctest::Contains("header"),
                             std::runtime_error);
    }
}

TEST_CASE("regrid_nearest identity on identical grids") {
    Rng rng(2);
    GridField f = make_field("TPW", 0, 6, 5, 0.0f);
    for (auto& v : f.values) v = static_cast<float>(rng.normal());
    GridField g = regrid_nearest(f, f.spacing, f.origin_lat, f.origin_lon, f.rows, f.cols);
    for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(g.values[i] == f.values[i]);
}

TEST_CASE("regrid_nearest keeps constants constant") {
    GridField f = make_field("U", 0, 4, 4, 3.5f);
    GridField g = regrid_nearest(f, 0.07, f.origin_lat + 0.01, f.origin_lon - 0.02, 9, 11);
    for (float v : g.values) CHECK(v == 3.5f);
}

TEST_CASE("regrid_nearest 2x2 -> 4x4 maps each source value onto a 2x2 block") {
    GridField f = make_field("P", 0, 2, 2, 0.0f);
    f.spacing = 0.2;
    f.values = {1.0f, 2.0f, 3.0f, 4.0f};
    // half the spacing, origin shifted a quarter-cell so the mapping is unambiguous
    GridField g = regrid_nearest(f, 0.1, f.origin_lat - 0.05, f.origin_lon - 0.05, 4, 4);
    const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
    for (std::size_t i = 0; i < 16; ++i) CHECK(g.values[i] == expect[i]);
}

TEST_CASE("regrid_nearest rejects disjoint domains and is idempotent onto the same grid") {
    GridField f = make_field("P", 0, 4, 4, 1.0f);
    CHECK_THROWS_AS(regrid_nearest(f, 0.1, 50.0, 50.0, 4, 4), std::invalid_argument);
    GridField g = regrid_nearest(f, f.spacing, f.origin_lat, f.origin_lon, f.rows, f.cols);
    GridField h = regrid_nearest(g, g.spacing, g.origin_lat, g.origin_lon, g.rows, g.cols);
    for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(h.values[i] == g.values[i]);
}

TEST_CASE("assemble_block: GFS valid times follow t + (12 - 2n) dt") {
    FieldSeries s = coverage_series();
    Sample sample = assemble_block(s, 0);
    REQUIRE(sample.input.tensor.shape() == Shape{6, 6, 4, 12});
    // n = 0 -> t+6h, n = 3 -> t+3h, n = 11 -> t-5h
    CHECK(sample.input.tensor.at({0, 0, 1, 0}) == doctest::Approx(2006.0));
    CHECK(sample.input.tensor.at({0, 0, 1, 3}) == doctest::Approx(2003.0));
    CHECK(sample.input.tensor.at({0, 0, 1, 11}) == doctest::Approx(1995.0));
    // precipitation history: slice n holds P(t - n dt)
    CHECK(sample.input.tensor.at({2, 3, 0, 0}) == doctest::Approx(1000.0));
    CHECK(sample.input.tensor.at({2, 3, 0, 11}) == doctest::Approx(989.0));
    // GFS lead decreases by exactly 2 dt per unit n
    for (std::size_t n = 0; n + 1 < 12; ++n) {
        const double lead_n = sample.input.tensor.at({0, 0, 1, n}) - 2000.0;
        const double lead_n1 = sample.input.tensor.at({0, 0, 1, n + 1}) - 2000.0;
        CHECK(lead_n - lead_n1 == doctest::Approx(1.0));  // hourly = 2 * 30 min
    }
    // target holds the next 8 precipitation frames
    REQUIRE(sample.target.tensor.shape() == Shape{6, 6, 8});
    for (std::size_t k = 0; k < 8; ++k) {
        CHECK(sample.target.tensor.at({1, 1, k}) ==
              doctest::Approx(1001.0 + static_cast<double>(k)));
    }
}

TEST_CASE("assemble_block: constant inputs give a constant block per channel") {
    FieldSeries s = coverage_series(4, 4);
    Sample sample = assemble_block(s, 0);
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t t = 0; t < 12; ++t) {
            const double ref = sample.input.tensor.at({0, 0, c, t});
            for (std::size_t i = 0; i < 4; ++i) {
                for (std::size_t j = 0; j < 4; ++j) {
                    CHECK(sample.input.tensor.at({i, j, c, t}) == ref);
                }
            }
        }
    }
}

TEST_CASE("assemble_block: insertion order does not govern placement") {
    FieldSeries sorted = coverage_series();
    FieldSeries shuffled;
    std::vector<GridField> all;
    for (int n = -11; n <= 8; ++n) {
        all.push_back(make_field("P", n * kStepMinutes, 6, 6, 1000.0f + static_cast<float>(n)));
    }
    for (int h = -5; h <= 6; ++h) {
        all.push_back(make_field("TPW", h * 60, 6, 6, 2000.0f + static_cast<float>(h)));
        all.push_back(make_field("U", h * 60, 6, 6, 3000.0f + static_cast<float>(h)));
        all.push_back(make_field("V", h * 60, 6, 6, 4000.0f + static_cast<float>(h)));
    }
    Rng rng(3);
    for (std::size_t i = all.size(); i > 1; --i) {
        std::swap(all[i - 1], all[rng.uniform_int(i)]);
    }
    for (auto& f : all) shuffled.add(std::move(f));
    Sample a = assemble_block(sorted, 0);
    Sample b = assemble_block(shuffled, 0);
    for (std::size_t i = 0; i < a.input.tensor.numel(); ++i) {
        CHECK(a.input.tensor.data()[i] == b.input.tensor.data()[i]);
    }
}

TEST_CASE("assemble_block rejects a missing frame and names the timestamp") {
    FieldSeries s;
    for (int n = -11; n <= 8; ++n) {
        if (n == 4) continue;  // drop P at +120 min
        s.add(make_field("P", n * kStepMinutes, 4, 4, 1.0f));
    }
    for (int h = -5; h <= 6; ++h) {
        s.add(make_field("TPW", h * 60, 4, 4, 1.0f));
        s.add(make_field("U", h * 60, 4, 4, 1.0f));
        s.add(make_field("V", h * 60, 4, 4, 1.0f));
    }
    CHECK_THROWS_WITH_AS(assemble_block(s, 0), doctest::Contains("t=120"), std::runtime_error);
    CHECK(s.valid_anchor_times().empty());
}

TEST_CASE("sample_patches: count 0 gives an empty dataset; seeds are reproducible") {
    FieldSeries s = coverage_series(8, 8);
    BlockDataset empty = sample_patches(s, 4, 0, 9);
    CHECK(empty.train.empty());
    CHECK(empty.validation.empty());

    auto a = sample_patch_anchors(s, 4, 20, 1234);
    auto b = sample_patch_anchors(s, 4, 20, 1234);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].anchor_time == b[i].anchor_time);
        CHECK(a[i].row0 == b[i].row0);
        CHECK(a[i].col0 == b[i].col0);
        CHECK(a[i].validation == b[i].validation);
    }
}

TEST_CASE("sample_patches: every sampled patch lies fully inside the domain") {
    FieldSeries s = coverage_series(13, 9);
    const std::size_t patch = 4;
    auto anchors = sample_patch_anchors(s, patch, 10000, 77);
    for (const PatchAnchor& a : anchors) {
        CHECK(a.row0 + patch <= 13);
        CHECK(a.col0 + patch <= 9);
    }
}

TEST_CASE("sample_patches: 70/30 split by sample and patch-too-large rejection") {
    FieldSeries s = coverage_series(8, 8);
    auto anchors = sample_patch_anchors(s, 4, 10, 5);
    std::size_t train = 0;
    for (const auto& a : anchors) train += a.validation ? 0 : 1;
    CHECK(train == 7);
    CHECK_THROWS_AS(sample_patch_anchors(s, 9, 1, 5), std::invalid_argument);
}

TEST_CASE("tiled_predict with an identity model reconstructs the anchor field bit-exactly") {
    FieldSeries s = coverage_series(12, 20);
    // overwrite the anchor-time precipitation with a distinctive pattern
    GridField p0 = make_field("P", 0, 12, 20, 0.0f);
    Rng rng(11);
    for (auto& v : p0.values) v = static_cast<float>(rng.uniform() * 20.0);
    s.add(p0);
    Sample full = assemble_block(s, 0);

    TileModel identity = [](const InputBlock& tile) {
        const std::size_t p = tile.tensor.extent(0);
        std::vector<Tensor> leads;
        for (std::size_t k = 0; k < 8; ++k) {
            Tensor out = Tensor::zeros({p, p});
            for (std::size_t r = 0; r < p; ++r) {
                for (std::size_t c = 0; c < p; ++c) {
                    out.mutable_data()[r * p + c] = tile.tensor.at({r, c, 0, 0});
                }
            }
            leads.push_back(out);
        }
        return leads;
    };
    std::vector<Tensor> result = tiled_predict(identity, full.input, 8);
    REQUIRE(result.size() == 8);
    for (const Tensor& lead : result) {
        REQUIRE(lead.shape() == Shape{12, 20});
        for (std::size_t r = 0; r < 12; ++r) {
            for (std::size_t c = 0; c < 20; ++c) {
                CHECK(lead.at({r, c}) == static_cast<double>(p0.values[r * 20 + c]));
            }
        }
    }
}

TEST_CASE("tiled reconstruction coverage count is exactly 1 everywhere") {
    // independent recount from the tiling definition: tiles stride patch/2
    // over the padded domain, each contributing its central window
    const std::size_t m = 14, n = 10, patch = 8, half = 4;
    std::vector<int> coverage(m * n, 0);
    const std::size_t tiles_y = (m + half - 1) / half, tiles_x = (n + half - 1) / half;
    for (std::size_t ty = 0; ty < tiles_y; ++ty) {
        for (std::size_t tx = 0; tx < tiles_x; ++tx) {
            for (std::size_t i = 0; i < half; ++i) {
                for (std::size_t j = 0; j < half; ++j) {
                    const std::size_t r = ty * half + i, c = tx * half + j;
                    if (r < m && c < n) ++coverage[r * n + c];
                }
            }
        }
    }
    for (int c : coverage) CHECK(c == 1);

    // the implementation writes every pixel: an unwritten one would keep a
    // value no tile can produce
    FieldSeries s = coverage_series(m, n);
    Sample full = assemble_block(s, 0);
    TileModel constant = [](const InputBlock& tile) {
        const std::size_t p = tile.tensor.extent(0);
        return std::vector<Tensor>{Tensor::full({p, p}, 42.0)};
    };
    std::vector<Tensor> out = tiled_predict(constant, full.input, patch);
    for (double v : out[0].data()) CHECK(v == 42.0);
}

TEST_CASE("a domain of exactly one tile places the interior correctly") {
    FieldSeries s = coverage_series(4, 4);
    GridField p0 = make_field("P", 0, 4, 4, 0.0f);
    for (std::size_t i = 0; i < 16; ++i) p0.values[i] = static_cast<float>(i);
    s.add(p0);
    Sample full = assemble_block(s, 0);
    TileModel identity = [](const InputBlock& tile) {
        const std::size_t p = tile.tensor.extent(0);
        Tensor out = Tensor::zeros({p, p});
        for (std::size_t r = 0; r < p; ++r) {
            for (std::size_t c = 0; c < p; ++c) {
                out.mutable_data()[r * p + c] = tile.tensor.at({r, c, 0, 0});
            }
        }
        return std::vector<Tensor>{out};
    };
    std::vector<Tensor> result = tiled_predict(identity, full.input, 8);
    REQUIRE(result[0].shape() == Shape{4, 4});
    for (std::size_t i = 0; i < 16; ++i) CHECK(result[0].data()[i] == static_cast<double>(i));
}

TEST_CASE("ingestion regrids coarse covariates onto the precipitation grid once") {
    const auto dir = temp_dir() / "mixed_grid";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    GridField p = make_field("P", 0, 8, 8, 1.0f);
    p.spacing = 0.1;
    write_field(p, (dir / "p.gfld").string());
    GridField tpw = make_field("TPW", 0, 4, 4, 7.5f);  // 2x coarser
    tpw.spacing = 0.2;
    tpw.origin_lat = -0.05;
    tpw.origin_lon = -0.05;
    write_field(tpw, (dir / "tpw.gfld").string());

    FieldSeries loaded = load_field_directory(dir.string());
    const GridField& regridded = loaded.require("TPW", 0);
    CHECK(regridded.rows == 8);
    CHECK(regridded.cols == 8);
    CHECK(regridded.spacing == 0.1);
    for (float v : regridded.values) CHECK(v == 7.5f);
}

TEST_CASE("load_field_directory round-trips a directory of containers") {
    const auto dir = temp_dir() / "series";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    FieldSeries src = coverage_series(4, 4);
    std::size_t idx = 0;
    for (const char* name : {"P", "TPW", "U", "V"}) {
        for (std::int64_t t : src.times(name)) {
            write_field(
                src.require(name, t),
                (dir / (std::string(name) + "_" + std::to_string(idx++) + ".gfld")).string());
        }
    }
    FieldSeries loaded = load_field_directory(dir.string());
    CHECK(loaded.rows() == 4);
    CHECK(loaded.times("P").size() == src.times("P").size());
    CHECK(loaded.valid_anchor_times() == src.valid_anchor_times());
}

TEST_SUITE_END();
