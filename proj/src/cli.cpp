#include "nowcast/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "nowcast/datapipe.hpp"
#include "nowcast/net.hpp"
#include "nowcast/stormsim.hpp"
#include "nowcast/verify.hpp"

namespace nowcast {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    json j;
    in >> j;
    return j;
}

/// Resolves relative output paths against NOWCAST_OUT_ROOT when set; run
/// parameters themselves always come from flags or the run config.
std::string resolve_out(const std::string& path) {
    const char* root = std::getenv("NOWCAST_OUT_ROOT");
    if (root == nullptr || *root == '\0' || path.empty() || fs::path(path).is_absolute()) {
        return path;
    }
    return (fs::path(root) / path).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

void write_manifest(const std::string& path, const json& manifest) {
    write_text(path, manifest.dump(2) + "\n");
}

/// Fills flag values that were not given on the command line from the run
/// config (flag-wins precedence).
class ConfigFallback {
public:
    ConfigFallback(CLI::App* cmd, const std::string& config_path) : cmd_(cmd) {
        if (!config_path.empty()) cfg_ = load_json_file(config_path);
    }

    template <typename T>
    void fill(const std::string& flag, const std::string& key, T& value) const {
        if (cfg_.is_null() || cmd_->count(flag) > 0) return;
        if (cfg_.contains(key)) value = cfg_.at(key).get<T>();
    }

private:
    CLI::App* cmd_;
    json cfg_;
};

std::string field_filename(const GridField& f) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%010" PRId64 ".gfld", f.name.c_str(), f.valid_time);
    return buf;
}

std::vector<double> parse_rate_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    if (out.empty()) throw std::runtime_error("empty rate list '" + csv + "'");
    return out;
}

std::vector<std::size_t> parse_scale_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(static_cast<std::size_t>(std::stoull(item)));
    }
    if (out.empty()) throw std::runtime_error("empty scale list '" + csv + "'");
    return out;
}

Tensor field_to_tensor(const GridField& f) {
    Tensor t = Tensor::zeros({f.rows, f.cols});
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        t.mutable_data()[i] = f.values[i];
    }
    return t;
}

GridField tensor_to_field(const Tensor& t, const GridField& like, const std::string& name,
                          const std::string& units, std::int64_t valid_time) {
    GridField f;
    f.name = name;
    f.units = units;
    f.valid_time = valid_time;
    f.origin_lat = like.origin_lat;
    f.origin_lon = like.origin_lon;
    f.spacing = like.spacing;
    f.rows = t.extent(0);
    f.cols = t.extent(1);
    f.values.resize(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
        f.values[i] = static_cast<float>(t.data()[i]);
    }
    return f;
}

json anchors_to_json(const std::vector<PatchAnchor>& anchors) {
    json arr = json::array();
    for (const PatchAnchor& a : anchors) {
        arr.push_back(json{{"anchor_time", a.anchor_time},
                           {"row0", a.row0},
                           {"col0", a.col0},
                           {"validation", a.validation}});
    }
    return arr;
}

std::vector<PatchAnchor> anchors_from_json(const json& arr) {
    std::vector<PatchAnchor> anchors;
    for (const json& a : arr) {
        PatchAnchor pa;
        pa.anchor_time = a.at("anchor_time").get<std::int64_t>();
        pa.row0 = a.at("row0").get<std::size_t>();
        pa.col0 = a.at("col0").get<std::size_t>();
        pa.validation = a.at("validation").get<bool>();
        anchors.push_back(pa);
    }
    return anchors;
}

// ---- synth ----

int cmd_synth(const std::string& out_dir, const std::string& scene_path, std::uint64_t seed,
              std::size_t steps) {
    SceneConfig cfg;
    if (!scene_path.empty()) cfg = SceneConfig::from_json(load_json_file(scene_path));
    cfg.seed = seed;
    fs::create_directories(out_dir);
    SceneSequence seq = generate_sequence(cfg, steps);
    std::size_t files = 0;
    for (const auto* group : {&seq.p, &seq.tpw, &seq.u, &seq.v}) {
        for (const GridField& f : *group) {
            write_field(f, (fs::path(out_dir) / field_filename(f)).string());
            ++files;
        }
    }
    json manifest{{"command", "synth"},
                  {"out", out_dir},
                  {"seed", seed},
                  {"steps", steps},
                  {"scene", cfg.to_json()}};
    write_manifest((fs::path(out_dir) / "run_manifest.json").string(), manifest);
    std::cerr << "synth: wrote " << files << " fields to " << out_dir << "\n";
    return 0;
}

// ---- build ----

int cmd_build(const std::string& fields_dir, const std::string& out_path, std::size_t patch,
              std::size_t count, std::uint64_t seed) {
    FieldSeries fields = load_field_directory(fields_dir);
    std::vector<PatchAnchor> anchors = sample_patch_anchors(fields, patch, count, seed);
    json manifest{{"command", "build"}, {"fields", fields_dir}, {"out", out_path},
                  {"patch", patch},    {"count", count},       {"seed", seed},
                  {"schema_version", 1}, {"blocks", anchors_to_json(anchors)}};
    write_manifest(out_path, manifest);
    write_manifest(out_path + ".manifest.json",
                   json{{"command", "build"},
                        {"fields", fields_dir},
                        {"out", out_path},
                        {"patch", patch},
                        {"count", count},
                        {"seed", seed}});
    std::cerr << "build: " << anchors.size() << " block anchors -> " << out_path << "\n";
    return 0;
}

// ---- train ----

int cmd_train(const std::string& manifest_path, const std::string& fields_dir,
              const std::string& out_path, const std::string& loss_name, std::uint64_t seed,
              std::size_t epochs, std::size_t batch, double lr, std::size_t blocks,
              std::size_t base, double dropout) {
    const json block_manifest = load_json_file(manifest_path);
    const std::size_t patch = block_manifest.at("patch").get<std::size_t>();
    FieldSeries fields = load_field_directory(fields_dir);
    BlockDataset data =
        materialize_patches(fields, patch, anchors_from_json(block_manifest.at("blocks")));

    const LossKind loss = loss_name == "focal" ? LossKind::Focal : LossKind::Mse;
    NetworkConfig cfg;
    cfg.n_blocks = blocks;
    cfg.base_channels = base;
    cfg.dropout_rate = dropout;
    cfg.head = loss == LossKind::Focal ? HeadKind::Classification : HeadKind::Regression;
    NetworkParams params = build_network(cfg, seed);

    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = batch;
    tc.learning_rate = lr;
    std::cerr << "train: " << data.train.size() << " train / " << data.validation.size()
              << " validation blocks, " << params.parameter_count() << " parameters\n";
    TrainResult result = train_network(params, data, tc, loss, seed);
    save_checkpoint(result.best, out_path);

    std::ostringstream history;
    history.precision(17);
    history << "kind,index,loss,lr\n";
    for (std::size_t i = 0; i < result.history.step_loss.size(); ++i) {
        history << "step," << i << "," << result.history.step_loss[i] << ",\n";
    }
    for (std::size_t e = 0; e < result.history.epoch_val_loss.size(); ++e) {
        history << "epoch," << e + 1 << "," << result.history.epoch_val_loss[e] << ","
                << result.history.epoch_lr[e] << "\n";
    }
    write_text(out_path + ".history.csv", history.str());
    write_manifest(out_path + ".manifest.json",
                   json{{"command", "train"},
                        {"manifest", manifest_path},
                        {"fields", fields_dir},
                        {"out", out_path},
                        {"loss", loss_name},
                        {"seed", seed},
                        {"epochs", epochs},
                        {"batch", batch},
                        {"lr", lr},
                        {"blocks", blocks},
                        {"base", base},
                        {"dropout", dropout}});
    std::cerr << "train: best epoch " << result.history.best_epoch << " -> " << out_path << "\n";
    return 0;
}

// ---- predict ----

int cmd_predict(const std::string& ckpt_path, const std::string& fields_dir, std::int64_t anchor,
                const std::string& out_dir, std::size_t patch, const std::string& exceed_csv) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    NetworkParams params = ckpt.restore_params();
    FieldSeries fields = load_field_directory(fields_dir);
    Sample full = assemble_block(fields, anchor);
    const GridField& anchor_frame = fields.require("P", anchor);
    fs::create_directories(out_dir);

    const std::size_t leads = params.config.forecast_steps;
    const bool classification = params.config.head == HeadKind::Classification;
    const ClassScheme& scheme = ckpt.scheme;

    TileModel model = [&](const InputBlock& tile) {
        Forecast f = forward(params, tile, Mode::Eval);
        std::vector<Tensor> out;
        const std::size_t p = tile.tensor.extent(0);
        for (std::size_t k = 0; k < leads; ++k) {
            if (classification) {
                Tensor probs = Tensor::zeros({p, p, scheme.num_classes()});
                for (std::size_t r = 0; r < p; ++r) {
                    for (std::size_t c = 0; c < p; ++c) {
                        for (std::size_t cl = 0; cl < scheme.num_classes(); ++cl) {
                            probs.mutable_data()[(r * p + c) * scheme.num_classes() + cl] =
                                f.class_probs.at({r, c, k, cl});
                        }
                    }
                }
                out.push_back(probs);
            } else {
                Tensor rates = Tensor::zeros({p, p});
                for (std::size_t r = 0; r < p; ++r) {
                    for (std::size_t c = 0; c < p; ++c) {
                        rates.mutable_data()[r * p + c] = f.regression.at({r, c, k});
                    }
                }
                out.push_back(rates);
            }
        }
        return out;
    };

    std::vector<Tensor> stitched = tiled_predict(model, full.input, patch);
    std::vector<double> exceed_rates;
    if (classification && !exceed_csv.empty()) exceed_rates = parse_rate_list(exceed_csv);

    for (std::size_t k = 0; k < stitched.size(); ++k) {
        const std::int64_t t = anchor + static_cast<std::int64_t>(k + 1) * kStepMinutes;
        Tensor rates;
        if (classification) {
            // maximum a-posteriori class, mapped to its representative rate
            const Tensor& probs = stitched[k];
            const std::size_t rows = probs.extent(0), cols = probs.extent(1),
                              classes = probs.extent(2);
            rates = Tensor::zeros({rows, cols});
            for (std::size_t i = 0; i < rows * cols; ++i) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < classes; ++c) {
                    if (probs.data()[i * classes + c] > probs.data()[i * classes + best]) best = c;
                }
                rates.mutable_data()[i] = scheme.representative_rate(best + 1);
            }
            for (double r : exceed_rates) {
                Tensor exc = exceedance_probability(probs, scheme, r);
                char name[64];
                std::snprintf(name, sizeof(name), "exceed_%g_lead%zu.gfld", r, k + 1);
                write_field(tensor_to_field(exc, anchor_frame, "EXC", "probability", t),
                            (fs::path(out_dir) / name).string());
            }
        } else {
            rates = stitched[k];
        }
        char name[32];
        std::snprintf(name, sizeof(name), "forecast_lead%zu.gfld", k + 1);
        write_field(tensor_to_field(rates, anchor_frame, "P", "mm/hr", t),
                    (fs::path(out_dir) / name).string());
    }
    write_manifest((fs::path(out_dir) / "run_manifest.json").string(),
                   json{{"command", "predict"},
                        {"checkpoint", ckpt_path},
                        {"fields", fields_dir},
                        {"anchor", anchor},
                        {"out", out_dir},
                        {"patch", patch},
                        {"exceed", exceed_csv}});
    std::cerr << "predict: " << stitched.size() << " lead fields -> " << out_dir << "\n";
    return 0;
}

// ---- evaluate ----

int cmd_evaluate(const std::string& forecast_dir, const std::string& fields_dir,
                 std::int64_t anchor, const std::string& out_path, const std::string& csv_path,
                 const std::string& thresholds_csv, const std::string& scales_csv) {
    FieldSeries truth = load_field_directory(fields_dir);
    const std::vector<double> thresholds = parse_rate_list(thresholds_csv);
    const std::vector<std::size_t> scales = parse_scale_list(scales_csv);
    const ClassScheme scheme = default_scheme();
    const std::size_t leads = 8;

    ScoreAccumulator model_acc(thresholds, scales, scheme, leads);
    ScoreAccumulator persist_acc(thresholds, scales, scheme, leads);
    const GridField& anchor_frame = truth.require("P", anchor);
    const Tensor persist = field_to_tensor(anchor_frame);

    for (std::size_t k = 1; k <= leads; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "forecast_lead%zu.gfld", k);
        const GridField fc = read_field((fs::path(forecast_dir) / name).string());
        const GridField& ob =
            truth.require("P", anchor + static_cast<std::int64_t>(k) * kStepMinutes);
        model_acc.add(k - 1, field_to_tensor(fc), field_to_tensor(ob), ob.mask);
        persist_acc.add(k - 1, persist, field_to_tensor(ob), ob.mask);
    }

    json report{{"schema_version", 1},
                {"anchor_time", anchor},
                {"model", model_acc.to_json()},
                {"persistence", persist_acc.to_json()}};
    write_text(out_path, report.dump(2) + "\n");
    if (!csv_path.empty()) {
        std::ostringstream csv;
        csv << "source,lead,metric,threshold,scale,value\n";
        const auto append = [&csv](const std::string& src, const std::string& body) {
            std::istringstream lines(body);
            std::string line;
            std::getline(lines, line);  // drop the inner header
            while (std::getline(lines, line)) csv << src << "," << line << "\n";
        };
        append("model", model_acc.to_csv());
        append("persistence", persist_acc.to_csv());
        write_text(csv_path, csv.str());
    }
    write_manifest(out_path + ".manifest.json",
                   json{{"command", "evaluate"},
                        {"forecast", forecast_dir},
                        {"fields", fields_dir},
                        {"anchor", anchor},
                        {"out", out_path},
                        {"csv", csv_path},
                        {"thresholds", thresholds_csv},
                        {"scales", scales_csv}});
    std::cerr << "evaluate: report -> " << out_path << "\n";
    return 0;
}

// ---- mrmr ----

int cmd_mrmr(const std::string& manifest_path, const std::string& fields_dir,
             const std::string& out_path, std::size_t bins, std::size_t samples, std::size_t lead,
             bool noise_control, const std::string& rule_name, std::uint64_t seed) {
    if (lead < 1 || lead > 8) throw std::runtime_error("mrmr: lead must be in 1..8");
    const json block_manifest = load_json_file(manifest_path);
    const std::size_t patch = block_manifest.at("patch").get<std::size_t>();
    FieldSeries fields = load_field_directory(fields_dir);
    BlockDataset data =
        materialize_patches(fields, patch, anchors_from_json(block_manifest.at("blocks")));
    std::vector<const Sample*> all;
    for (const Sample& s : data.train) all.push_back(&s);
    for (const Sample& s : data.validation) all.push_back(&s);
    if (all.empty()) throw std::runtime_error("mrmr: manifest holds no blocks");

    const char* channel_names[4] = {"P", "TPW", "U", "V"};
    std::vector<std::string> names;
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t n = 0; n < 12; ++n) {
            char label[48];
            if (c == 0) {
                std::snprintf(label, sizeof(label), "P[t-%.1fh]",
                              static_cast<double>(n) * 0.5);
            } else {
                std::snprintf(label, sizeof(label), "%s[t%+.1fh]", channel_names[c],
                              static_cast<double>(12 - 2 * static_cast<int>(n)) * 0.5);
            }
            names.emplace_back(label);
        }
    }
    if (noise_control) names.emplace_back("noise");

    Rng rng(seed);
    std::vector<std::vector<double>> features(names.size(), std::vector<double>(samples));
    std::vector<double> response(samples);
    for (std::size_t i = 0; i < samples; ++i) {
        const Sample& s = *all[rng.uniform_int(all.size())];
        const std::size_t rows = s.input.tensor.extent(0), cols = s.input.tensor.extent(1);
        const std::size_t r = rng.uniform_int(rows), c = rng.uniform_int(cols);
        for (std::size_t ch = 0; ch < 4; ++ch) {
            for (std::size_t n = 0; n < 12; ++n) {
                features[ch * 12 + n][i] = s.input.tensor.at({r, c, ch, n});
            }
        }
        if (noise_control) features[48][i] = rng.normal();
        response[i] = s.target.tensor.at({r, c, lead - 1});
    }

    const MrmrRule rule = rule_name == "quotient" ? MrmrRule::Quotient : MrmrRule::Difference;
    MrmrResult result = mrmr_scores(features, names, response, bins, rule);
    json out = result.to_json();
    out["lead"] = lead;
    out["samples"] = samples;
    out["rule"] = rule_name;
    write_text(out_path, out.dump(2) + "\n");
    write_manifest(out_path + ".manifest.json",
                   json{{"command", "mrmr"},
                        {"manifest", manifest_path},
                        {"fields", fields_dir},
                        {"out", out_path},
                        {"bins", bins},
                        {"samples", samples},
                        {"lead", lead},
                        {"noise_control", noise_control},
                        {"rule", rule_name},
                        {"seed", seed}});
    std::cerr << "mrmr: top feature " << result.feature_names[result.selection_order.front()]
              << " -> " << out_path << "\n";
    return 0;
}

// ---- autocorr ----

int cmd_autocorr(const std::string& fields_dir, const std::string& out_path,
                 std::size_t max_lag_hours, std::size_t samples, std::uint64_t seed) {
    FieldSeries fields = load_field_directory(fields_dir);
    AutocorrResult res =
        autocorr_fit(fields, static_cast<std::int64_t>(max_lag_hours) * 60, samples, seed);
    std::ostringstream csv;
    csv.precision(17);
    csv << "lag_minutes,median_corr,corr_lo,corr_hi,pair_count\n";
    for (std::size_t i = 0; i < res.lag_minutes.size(); ++i) {
        csv << res.lag_minutes[i] << "," << res.median_corr[i] << "," << res.corr_lo[i] << ","
            << res.corr_hi[i] << "," << res.pair_counts[i] << "\n";
    }
    write_text(out_path, csv.str());
    write_text(out_path + ".fit.json",
               json{{"alpha_per_hour", res.alpha}, {"tau_hours", res.tau}}.dump(2) + "\n");
    write_manifest(out_path + ".manifest.json",
                   json{{"command", "autocorr"},
                        {"fields", fields_dir},
                        {"out", out_path},
                        {"max_lag_hours", max_lag_hours},
                        {"samples", samples},
                        {"seed", seed}});
    std::cout << "alpha " << res.alpha << " tau " << res.tau << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"precipitation nowcasting engine"};
    app.require_subcommand(1);

    std::string config_path;

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic storm scene");
    std::string synth_out = "fields";
    std::string synth_scene;
    std::uint64_t synth_seed = 0;
    std::size_t synth_steps = 40;
    synth->add_option("--out", synth_out, "output directory for GFLD fields");
    synth->add_option("--scene", synth_scene, "scene config JSON");
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "scene seed");
    synth->add_option("--steps", synth_steps, "number of 30-minute steps");
    synth->add_option("--config", config_path, "run config JSON (flags win)");

    // build
    auto* build = app.add_subcommand("build", "sample patch anchors into a block manifest");
    std::string build_fields = "fields";
    std::string build_out = "manifest.json";
    std::size_t build_patch = 64;
    std::size_t build_count = 100;
    std::uint64_t build_seed = 0;
    build->add_option("--fields", build_fields, "GFLD directory");
    build->add_option("--out", build_out, "manifest path");
    build->add_option("--patch", build_patch, "patch size");
    build->add_option("--count", build_count, "number of blocks");
    build->add_option("--seed", build_seed, "sampling seed");
    build->add_option("--config", config_path, "run config JSON (flags win)");

    // train
    auto* train = app.add_subcommand("train", "train a nowcasting network");
    std::string train_manifest = "manifest.json";
    std::string train_fields = "fields";
    std::string train_out = "model.gnss";
    std::string train_loss = "mse";
    std::uint64_t train_seed = 0;
    std::size_t train_epochs = 10, train_batch = 8, train_blocks = 3, train_base = 16;
    double train_lr = 1e-3, train_dropout = 0.15;
    train->add_option("--manifest", train_manifest, "block manifest");
    train->add_option("--fields", train_fields, "GFLD directory");
    train->add_option("--out", train_out, "checkpoint path");
    train->add_option("--loss", train_loss, "mse | focal")
        ->check(CLI::IsMember({"mse", "focal"}));
    auto* train_seed_opt = train->add_option("--seed", train_seed, "training seed");
    train->add_option("--epochs", train_epochs, "training epochs");
    train->add_option("--batch", train_batch, "mini-batch size");
    train->add_option("--lr", train_lr, "initial learning rate");
    train->add_option("--blocks", train_blocks, "encoder depth");
    train->add_option("--base", train_base, "base channels");
    train->add_option("--dropout", train_dropout, "dropout rate");
    train->add_option("--config", config_path, "run config JSON (flags win)");

    // predict
    auto* predict = app.add_subcommand("predict", "tiled full-domain forecast");
    std::string pred_ckpt = "model.gnss";
    std::string pred_fields = "fields";
    std::string pred_out = "forecast";
    std::string pred_exceed;
    std::int64_t pred_anchor = 0;
    std::size_t pred_patch = 64;
    predict->add_option("--checkpoint", pred_ckpt, "checkpoint path");
    predict->add_option("--fields", pred_fields, "GFLD directory");
    predict->add_option("--anchor", pred_anchor, "anchor time (minutes)");
    predict->add_option("--out", pred_out, "output directory");
    predict->add_option("--patch", pred_patch, "tile size");
    predict->add_option("--exceed", pred_exceed,
                        "comma list of boundary rates for exceedance maps");
    predict->add_option("--config", config_path, "run config JSON (flags win)");

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "score forecasts against truth");
    std::string eval_forecast = "forecast";
    std::string eval_fields = "fields";
    std::string eval_out = "report.json";
    std::string eval_csv;
    std::string eval_thresholds = "1,4,8";
    std::string eval_scales = "1,2,4";
    std::int64_t eval_anchor = 0;
    evaluate->add_option("--forecast", eval_forecast, "forecast directory");
    evaluate->add_option("--fields", eval_fields, "truth GFLD directory");
    evaluate->add_option("--anchor", eval_anchor, "anchor time (minutes)");
    evaluate->add_option("--out", eval_out, "JSON report path");
    evaluate->add_option("--csv", eval_csv, "flat CSV path");
    evaluate->add_option("--thresholds", eval_thresholds, "comma list of rates");
    evaluate->add_option("--scales", eval_scales, "comma list of window scales");
    evaluate->add_option("--config", config_path, "run config JSON (flags win)");

    // mrmr
    auto* mrmr = app.add_subcommand("mrmr", "feature relevance/redundancy scoring");
    std::string mrmr_manifest = "manifest.json";
    std::string mrmr_fields = "fields";
    std::string mrmr_out = "mrmr.json";
    std::string mrmr_rule = "difference";
    std::size_t mrmr_bins = 16, mrmr_samples = 20000, mrmr_lead = 1;
    bool mrmr_noise = false;
    std::uint64_t mrmr_seed = 0;
    mrmr->add_option("--manifest", mrmr_manifest, "block manifest");
    mrmr->add_option("--fields", mrmr_fields, "GFLD directory");
    mrmr->add_option("--out", mrmr_out, "result JSON path");
    mrmr->add_option("--bins", mrmr_bins, "histogram bins");
    mrmr->add_option("--samples", mrmr_samples, "pixel samples");
    mrmr->add_option("--lead", mrmr_lead, "response lead step (1..8)");
    mrmr->add_flag("--noise-control", mrmr_noise, "append a noise-only control feature");
    mrmr->add_option("--rule", mrmr_rule, "difference | quotient")
        ->check(CLI::IsMember({"difference", "quotient"}));
    mrmr->add_option("--seed", mrmr_seed, "sampling seed");
    mrmr->add_option("--config", config_path, "run config JSON (flags win)");

    // autocorr
    auto* autocorr = app.add_subcommand("autocorr", "lag autocorrelation analysis");
    std::string ac_fields = "fields";
    std::string ac_out = "autocorr.csv";
    std::size_t ac_max_lag = 24, ac_samples = 100;
    std::uint64_t ac_seed = 0;
    autocorr->add_option("--fields", ac_fields, "GFLD directory");
    autocorr->add_option("--out", ac_out, "per-lag CSV path");
    autocorr->add_option("--max-lag-hours", ac_max_lag, "maximum lag in hours");
    autocorr->add_option("--samples", ac_samples, "snapshot pairs per lag");
    autocorr->add_option("--seed", ac_seed, "pair-sampling seed");
    autocorr->add_option("--config", config_path, "run config JSON (flags win)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (synth->parsed()) {
            ConfigFallback cfg(synth, config_path);
            cfg.fill("--out", "out", synth_out);
            cfg.fill("--steps", "steps", synth_steps);
            cfg.fill("--seed", "seed", synth_seed);
            synth_out = resolve_out(synth_out);
            if (synth->count("--scene") == 0 && !config_path.empty()) {
                const json j = load_json_file(config_path);
                if (j.contains("scene")) {
                    fs::create_directories(synth_out);
                    const std::string tmp_scene =
                        (fs::path(synth_out) / ".scene_from_config.json").string();
                    write_text(tmp_scene, j.at("scene").dump());
                    synth_scene = tmp_scene;
                }
            }
            if (synth_seed_opt->count() == 0 && config_path.empty()) {
                throw std::runtime_error("synth: --seed is mandatory");
            }
            return cmd_synth(synth_out, synth_scene, synth_seed, synth_steps);
        }
        if (build->parsed()) {
            ConfigFallback cfg(build, config_path);
            cfg.fill("--fields", "fields", build_fields);
            cfg.fill("--out", "out", build_out);
            cfg.fill("--patch", "patch", build_patch);
            cfg.fill("--count", "count", build_count);
            cfg.fill("--seed", "seed", build_seed);
            return cmd_build(build_fields, resolve_out(build_out), build_patch, build_count, build_seed);
        }
        if (train->parsed()) {
            ConfigFallback cfg(train, config_path);
            cfg.fill("--manifest", "manifest", train_manifest);
            cfg.fill("--fields", "fields", train_fields);
            cfg.fill("--out", "out", train_out);
            cfg.fill("--loss", "loss", train_loss);
            cfg.fill("--seed", "seed", train_seed);
            cfg.fill("--epochs", "epochs", train_epochs);
            cfg.fill("--batch", "batch", train_batch);
            cfg.fill("--lr", "lr", train_lr);
            cfg.fill("--blocks", "blocks", train_blocks);
            cfg.fill("--base", "base", train_base);
            cfg.fill("--dropout", "dropout", train_dropout);
            if (train_seed_opt->count() == 0 && config_path.empty()) {
                throw std::runtime_error("train: --seed is mandatory");
            }
            return cmd_train(train_manifest, train_fields, resolve_out(train_out), train_loss, train_seed,
                             train_epochs, train_batch, train_lr, train_blocks, train_base,
                             train_dropout);
        }
        if (predict->parsed()) {
            ConfigFallback cfg(predict, config_path);
            cfg.fill("--checkpoint", "checkpoint", pred_ckpt);
            cfg.fill("--fields", "fields", pred_fields);
            cfg.fill("--anchor", "anchor", pred_anchor);
            cfg.fill("--out", "out", pred_out);
            cfg.fill("--patch", "patch", pred_patch);
            cfg.fill("--exceed", "exceed", pred_exceed);
            return cmd_predict(pred_ckpt, pred_fields, pred_anchor, resolve_out(pred_out), pred_patch,
                               pred_exceed);
        }
        if (evaluate->parsed()) {
            ConfigFallback cfg(evaluate, config_path);
            cfg.fill("--forecast", "forecast", eval_forecast);
            cfg.fill("--fields", "fields", eval_fields);
            cfg.fill("--anchor", "anchor", eval_anchor);
            cfg.fill("--out", "out", eval_out);
            cfg.fill("--csv", "csv", eval_csv);
            cfg.fill("--thresholds", "thresholds", eval_thresholds);
            cfg.fill("--scales", "scales", eval_scales);
            return cmd_evaluate(eval_forecast, eval_fields, eval_anchor, resolve_out(eval_out),
                                resolve_out(eval_csv),
                                eval_thresholds, eval_scales);
        }
        if (mrmr->parsed()) {
            ConfigFallback cfg(mrmr, config_path);
            cfg.fill("--manifest", "manifest", mrmr_manifest);
            cfg.fill("--fields", "fields", mrmr_fields);
            cfg.fill("--out", "out", mrmr_out);
            cfg.fill("--bins", "bins", mrmr_bins);
            cfg.fill("--samples", "samples", mrmr_samples);
            cfg.fill("--lead", "lead", mrmr_lead);
            cfg.fill("--rule", "rule", mrmr_rule);
            cfg.fill("--seed", "seed", mrmr_seed);
            if (mrmr->count("--noise-control") == 0 && !config_path.empty()) {
                const json j = load_json_file(config_path);
                if (j.contains("noise_control")) mrmr_noise = j.at("noise_control").get<bool>();
            }
            return cmd_mrmr(mrmr_manifest, mrmr_fields, resolve_out(mrmr_out), mrmr_bins, mrmr_samples,
                            mrmr_lead, mrmr_noise, mrmr_rule, mrmr_seed);
        }
        if (autocorr->parsed()) {
            ConfigFallback cfg(autocorr, config_path);
            cfg.fill("--fields", "fields", ac_fields);
            cfg.fill("--out", "out", ac_out);
            cfg.fill("--max-lag-hours", "max_lag_hours", ac_max_lag);
            cfg.fill("--samples", "samples", ac_samples);
            cfg.fill("--seed", "seed", ac_seed);
            return cmd_autocorr(ac_fields, resolve_out(ac_out), ac_max_lag, ac_samples, ac_seed);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace nowcast
