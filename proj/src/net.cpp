#include "nowcast/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace nowcast {

using nlohmann::json;

void NetworkConfig::validate() const {
    if (n_blocks == 0) throw std::invalid_argument("NetworkConfig: n_blocks must be >= 1");
    if (base_channels == 0) throw std::invalid_argument("NetworkConfig: base_channels must be >= 1");
    if (input_channels == 0 || input_steps == 0 || forecast_steps == 0) {
        throw std::invalid_argument("NetworkConfig: channels and step counts must be >= 1");
    }
    if (num_classes < 2) throw std::invalid_argument("NetworkConfig: num_classes must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("NetworkConfig: dropout_rate must be in [0, 1)");
    }
}

json NetworkConfig::to_json() const {
    return json{{"n_blocks", n_blocks},
                {"base_channels", base_channels},
                {"input_channels", input_channels},
                {"input_steps", input_steps},
                {"forecast_steps", forecast_steps},
                {"num_classes", num_classes},
                {"dropout_rate", dropout_rate},
                {"head", head == HeadKind::Regression ? "regression" : "classification"}};
}

NetworkConfig NetworkConfig::from_json(const json& j) {
    NetworkConfig c;
    c.n_blocks = j.at("n_blocks").get<std::size_t>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.input_steps = j.at("input_steps").get<std::size_t>();
    c.forecast_steps = j.at("forecast_steps").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    const std::string head = j.at("head").get<std::string>();
    if (head == "regression") {
        c.head = HeadKind::Regression;
    } else if (head == "classification") {
        c.head = HeadKind::Classification;
    } else {
        throw std::invalid_argument("NetworkConfig: unknown head kind '" + head + "'");
    }
    c.validate();
    return c;
}

namespace {

Tensor conv_xavier(Shape shape, Rng& rng) {
    std::size_t taps = 1;
    for (std::size_t i = 0; i + 2 < shape.size(); ++i) taps *= shape[i];
    const std::size_t ci = shape[shape.size() - 2], co = shape[shape.size() - 1];
    return xavier_init(std::move(shape), taps * ci, taps * co, rng);
}

}  // namespace

NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    NetworkParams p;
    p.config = config;
    const std::size_t n = config.n_blocks;

    for (std::size_t k = 1; k <= n; ++k) {
        const std::size_t cin = k == 1 ? config.input_channels : config.channels_at(k - 1);
        const std::size_t ch = config.channels_at(k);
        EncoderBlockParams block;
        block.cell = ConvLstmCell::build(cin, ch, rng);
        block.bn_gamma = Tensor::full({ch}, 1.0);
        block.bn_beta = Tensor::zeros({ch});
        block.bn_stats = BatchNormStats(ch);
        p.encoder.push_back(std::move(block));
    }
    for (std::size_t k = 1; k <= n; ++k) {
        const std::size_t ch = config.channels_at(k);
        p.forecasters.push_back(
            RecursiveForecaster{ConvLstmCell::build(ch, ch, rng), config.forecast_steps});
    }
    for (std::size_t s = 0; s < n; ++s) {
        const bool final_stage = s + 1 == n;
        const std::size_t cur = final_stage ? config.channels_at(1) : config.channels_at(n - s);
        const std::size_t tgt = final_stage ? config.base_channels : config.channels_at(n - 1 - s);
        DecoderStageParams stage;
        stage.up_kernel = conv_xavier({1, 2, 2, cur, tgt}, rng);
        stage.up_bias = Tensor::zeros({tgt});
        const std::size_t conv_in = final_stage ? tgt : 2 * tgt;  // skip concat doubles channels
        stage.conv_kernel = conv_xavier({3, 3, 3, conv_in, tgt}, rng);
        stage.conv_bias = Tensor::zeros({tgt});
        stage.bn_gamma = Tensor::full({tgt}, 1.0);
        stage.bn_beta = Tensor::zeros({tgt});
        stage.bn_stats = BatchNormStats(tgt);
        p.decoder.push_back(std::move(stage));
    }
    const std::size_t head_out =
        config.head == HeadKind::Regression ? 1 : config.num_classes;
    p.head_kernel = conv_xavier({1, 1, 1, config.base_channels, head_out}, rng);
    p.head_bias = Tensor::zeros({head_out});
    if (config.head == HeadKind::Regression) {
        p.head_bn_gamma = Tensor::full({1}, 1.0);
        p.head_bn_beta = Tensor::zeros({1});
        p.head_bn_stats = BatchNormStats(1);
    }
    return p;
}

std::vector<std::pair<std::string, Tensor>> NetworkParams::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t k = 0; k < encoder.size(); ++k) {
        const std::string prefix = "enc" + std::to_string(k + 1);
        for (auto& kv : encoder[k].cell.named_parameters(prefix + ".cell")) out.push_back(kv);
        out.emplace_back(prefix + ".bn.gamma", encoder[k].bn_gamma);
        out.emplace_back(prefix + ".bn.beta", encoder[k].bn_beta);
    }
    for (std::size_t k = 0; k < forecasters.size(); ++k) {
        const std::string prefix = "fc" + std::to_string(k + 1);
        for (auto& kv : forecasters[k].cell.named_parameters(prefix + ".cell")) out.push_back(kv);
    }
    for (std::size_t s = 0; s < decoder.size(); ++s) {
        const std::string prefix = "dec" + std::to_string(s + 1);
        out.emplace_back(prefix + ".up.kernel", decoder[s].up_kernel);
        out.emplace_back(prefix + ".up.bias", decoder[s].up_bias);
        out.emplace_back(prefix + ".conv.kernel", decoder[s].conv_kernel);
        out.emplace_back(prefix + ".conv.bias", decoder[s].conv_bias);
        out.emplace_back(prefix + ".bn.gamma", decoder[s].bn_gamma);
        out.emplace_back(prefix + ".bn.beta", decoder[s].bn_beta);
    }
    out.emplace_back("head.kernel", head_kernel);
    out.emplace_back("head.bias", head_bias);
    if (config.head == HeadKind::Regression) {
        out.emplace_back("head.bn.gamma", head_bn_gamma);
        out.emplace_back("head.bn.beta", head_bn_beta);
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> NetworkParams::named_buffers() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t k = 0; k < encoder.size(); ++k) {
        const std::string prefix = "enc" + std::to_string(k + 1) + ".bn";
        out.emplace_back(prefix + ".running_mean", encoder[k].bn_stats.mean);
        out.emplace_back(prefix + ".running_var", encoder[k].bn_stats.var);
    }
    for (std::size_t s = 0; s < decoder.size(); ++s) {
        const std::string prefix = "dec" + std::to_string(s + 1) + ".bn";
        out.emplace_back(prefix + ".running_mean", decoder[s].bn_stats.mean);
        out.emplace_back(prefix + ".running_var", decoder[s].bn_stats.var);
    }
    if (config.head == HeadKind::Regression) {
        out.emplace_back("head.bn.running_mean", head_bn_stats.mean);
        out.emplace_back("head.bn.running_var", head_bn_stats.var);
    }
    return out;
}

std::vector<Tensor> NetworkParams::parameter_list() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) {
        (void)name;
        out.push_back(t);
    }
    return out;
}

std::size_t NetworkParams::parameter_count() const {
    std::size_t total = 0;
    for (const Tensor& t : parameter_list()) total += t.numel();
    return total;
}

void NetworkParams::set_requires_grad(bool on) {
    for (Tensor& t : parameter_list()) t.set_requires_grad(on);
}

void NetworkParams::zero_grad() {
    for (Tensor& t : parameter_list()) t.zero_grad();
}

namespace {

/// Pulls time slice `t` (newest = 0) out of an (M, N, C, T) block.
Tensor block_step(const Tensor& block, std::size_t t) {
    const std::size_t m = block.extent(0), n = block.extent(1), c = block.extent(2),
                      steps = block.extent(3);
    Tensor out = Tensor::zeros({m, n, c});
    const double* src = block.data().data();
    double* dst = out.mutable_data().data();
    for (std::size_t i = 0; i < m * n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) dst[i * c + ch] = src[(i * c + ch) * steps + t];
    }
    return out;
}

}  // namespace

Forecast forward(NetworkParams& params, const InputBlock& block, Mode mode, Rng* dropout_rng) {
    const NetworkConfig& cfg = params.config;
    const Tensor& x = block.tensor;
    if (x.rank() != 4 || x.extent(2) != cfg.input_channels || x.extent(3) != cfg.input_steps) {
        throw std::invalid_argument("forward: block shape " + shape_str(x.shape()) +
                                    " does not match config (M,N," +
                                    std::to_string(cfg.input_channels) + "," +
                                    std::to_string(cfg.input_steps) + ")");
    }
    const std::size_t m = x.extent(0), n = x.extent(1);
    const std::size_t div = std::size_t{1} << cfg.n_blocks;
    if (m % div != 0 || n % div != 0) {
        throw std::invalid_argument("forward: spatial extent " + std::to_string(m) + "x" +
                                    std::to_string(n) + " not divisible by 2^n_blocks = " +
                                    std::to_string(div));
    }
    if (mode == Mode::Train && dropout_rng == nullptr) {
        throw std::invalid_argument("forward: train mode requires a dropout rng");
    }

    // encoder input sequence, oldest step first
    std::vector<Tensor> seq;
    seq.reserve(cfg.input_steps);
    for (std::size_t t = cfg.input_steps; t-- > 0;) seq.push_back(block_step(x, t));

    std::vector<Tensor> level_final;  // per level: final latent after pool/bn/dropout
    level_final.reserve(cfg.n_blocks);
    for (EncoderBlockParams& enc : params.encoder) {
        EncodedSequence encoded = encode_sequence(seq, enc.cell);
        std::vector<Tensor> next;
        next.reserve(encoded.latents.size());
        for (Tensor& z : encoded.latents) {
            Tensor pooled = maxpool2d(z);
            Tensor normed = batchnorm(pooled, enc.bn_gamma, enc.bn_beta, mode, enc.bn_stats);
            next.push_back(mode == Mode::Train
                               ? dropout(normed, cfg.dropout_rate, mode, *dropout_rng)
                               : normed);
        }
        seq = std::move(next);
        level_final.push_back(seq.back());
    }

    // one recursive forecaster per level; bottleneck is the deepest
    std::vector<Tensor> level_stacks(cfg.n_blocks);
    for (std::size_t k = 0; k < cfg.n_blocks; ++k) {
        RecursiveRollout roll = recursive_forecast(level_final[k], params.forecasters[k]);
        level_stacks[k] = stack_first(roll.outputs);  // (T_f, m_k, n_k, ch_k)
    }

    Tensor cur = level_stacks[cfg.n_blocks - 1];
    for (std::size_t s = 0; s < cfg.n_blocks; ++s) {
        DecoderStageParams& stage = params.decoder[s];
        cur = conv_transpose_forward(cur, stage.up_kernel, {1, 2, 2});
        cur = add_channel_bias(cur, stage.up_bias);
        if (s + 1 < cfg.n_blocks) {
            cur = concat_channels(cur, level_stacks[cfg.n_blocks - 2 - s]);
        }
        cur = conv_forward(cur, stage.conv_kernel, {1, 1, 1}, Padding::Same, 3);
        cur = add_channel_bias(cur, stage.conv_bias);
        cur = batchnorm(cur, stage.bn_gamma, stage.bn_beta, mode, stage.bn_stats);
        if (mode == Mode::Train) cur = dropout(cur, cfg.dropout_rate, mode, *dropout_rng);
    }

    Tensor z = conv_forward(cur, params.head_kernel, {1, 1, 1}, Padding::Same, 3);
    z = add_channel_bias(z, params.head_bias);
    Forecast out;
    if (cfg.head == HeadKind::Regression) {
        z = batchnorm(z, params.head_bn_gamma, params.head_bn_beta, mode, params.head_bn_stats);
        z = relu(z);
        z = reshape(z, {cfg.forecast_steps, m, n});
        out.regression = permute(z, {1, 2, 0});  // (M, N, T_f)
    } else {
        z = softmax(z, 3);
        out.class_probs = permute(z, {1, 2, 0, 3});  // (M, N, T_f, C)
    }
    return out;
}

Tensor exceedance_probability(const Tensor& class_probs, const ClassScheme& scheme,
                              double threshold_rate) {
    if (class_probs.rank() < 1 || class_probs.shape().back() != scheme.num_classes()) {
        throw std::invalid_argument("exceedance_probability: trailing axis must hold " +
                                    std::to_string(scheme.num_classes()) + " class probabilities");
    }
    std::size_t boundary = scheme.boundaries.size();
    for (std::size_t j = 0; j < scheme.boundaries.size(); ++j) {
        if (std::fabs(scheme.boundaries[j] - threshold_rate) <=
            1e-9 * std::max(1.0, std::fabs(threshold_rate))) {
            boundary = j;
            break;
        }
    }
    if (boundary == scheme.boundaries.size()) {
        throw std::invalid_argument("exceedance_probability: threshold " +
                                    std::to_string(threshold_rate) +
                                    " is not on a class boundary");
    }
    const std::size_t c = scheme.num_classes();
    Shape out_shape(class_probs.shape().begin(), class_probs.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};
    Tensor out = Tensor::zeros(out_shape);
    const double* p = class_probs.data().data();
    double* po = out.mutable_data().data();
    const std::size_t rows = class_probs.numel() / c;
    for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t k = boundary + 1; k < c; ++k) acc += p[r * c + k];
        po[r] = acc;
    }
    return out;
}

Checkpoint make_checkpoint(const NetworkParams& params, const ClassScheme& scheme,
                           const AdamState& adam, std::size_t epoch,
                           std::vector<double> val_history) {
    Checkpoint ckpt;
    ckpt.config = params.config;
    ckpt.scheme = scheme;
    ckpt.epoch = epoch;
    ckpt.val_history = std::move(val_history);
    ckpt.learning_rate = adam.learning_rate;
    ckpt.adam_step_count = adam.step;
    const auto named = params.named_parameters();
    for (const auto& [name, t] : named) ckpt.tensors.emplace_back(name, t.clone());
    for (const auto& [name, t] : params.named_buffers()) ckpt.tensors.emplace_back(name, t.clone());
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        ckpt.tensors.emplace_back("adam.m." + named[i].first, adam.m[i].clone());
        ckpt.tensors.emplace_back("adam.v." + named[i].first, adam.v[i].clone());
    }
    return ckpt;
}

NetworkParams Checkpoint::restore_params() const {
    NetworkParams params = build_network(config, 0);
    auto assign = [this](std::vector<std::pair<std::string, Tensor>> targets) {
        for (auto& [name, t] : targets) {
            const auto it = std::find_if(tensors.begin(), tensors.end(),
                                         [&](const auto& kv) { return kv.first == name; });
            if (it == tensors.end()) {
                throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
            }
            if (it->second.shape() != t.shape()) {
                throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                         shape_str(it->second.shape()) + ", expected " +
                                         shape_str(t.shape()));
            }
            std::copy(it->second.data().begin(), it->second.data().end(),
                      t.mutable_data().begin());
        }
    };
    assign(params.named_parameters());
    assign(params.named_buffers());
    return params;
}

AdamState Checkpoint::restore_adam(const NetworkParams& params) const {
    AdamState adam = AdamState::init(params.parameter_list(), learning_rate);
    adam.step = adam_step_count;
    const auto named = params.named_parameters();
    for (std::size_t i = 0; i < named.size(); ++i) {
        for (const char* kind : {"m", "v"}) {
            const std::string key = std::string("adam.") + kind + "." + named[i].first;
            const auto it = std::find_if(tensors.begin(), tensors.end(),
                                         [&](const auto& kv) { return kv.first == key; });
            if (it == tensors.end()) {
                throw std::runtime_error("checkpoint: missing tensor '" + key + "'");
            }
            Tensor& dst = kind[0] == 'm' ? adam.m[i] : adam.v[i];
            std::copy(it->second.data().begin(), it->second.data().end(),
                      dst.mutable_data().begin());
        }
    }
    return adam;
}

namespace {

constexpr char kCkptMagic[4] = {'G', 'N', 'S', 'S'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f64(std::string& out, double d) {
    std::uint64_t v = 0;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

class Reader {
public:
    Reader(std::string buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

    std::size_t pos() const { return pos_; }
    bool eof() const { return pos_ == buf_.size(); }

    void raw(void* dst, std::size_t bytes, const char* what) {
        if (pos_ + bytes > buf_.size()) {
            throw std::runtime_error("load_checkpoint: " + path_ + ": truncated file while reading " +
                                     what + " at byte " + std::to_string(pos_));
        }
        std::memcpy(dst, buf_.data() + pos_, bytes);
        pos_ += bytes;
    }
    std::uint32_t u32(const char* what) {
        std::uint8_t b[4];
        raw(b, 4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    std::uint64_t u64(const char* what) {
        std::uint8_t b[8];
        raw(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }
    double f64(const char* what) {
        const std::uint64_t v = u64(what);
        double d = 0.0;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string str(std::size_t len, const char* what) {
        std::string s(len, '\0');
        raw(s.data(), len, what);
        return s;
    }

private:
    std::string buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header{{"config", ckpt.config.to_json()},
                {"scheme", ckpt.scheme.to_json()},
                {"epoch", ckpt.epoch},
                {"val_history", ckpt.val_history},
                {"adam", {{"learning_rate", ckpt.learning_rate}, {"step", ckpt.adam_step_count}}}};
    const std::string header_str = header.dump();

    std::string blob;
    blob.append(kCkptMagic, 4);
    put_u32(blob, kCkptVersion);
    put_u32(blob, static_cast<std::uint32_t>(header_str.size()));
    blob += header_str;
    for (const auto& [name, t] : ckpt.tensors) {
        put_u32(blob, static_cast<std::uint32_t>(name.size()));
        blob += name;
        put_u32(blob, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) put_u64(blob, e);
        for (double v : t.data()) put_f64(blob, v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    Reader r(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()),
             path);

    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kCkptMagic, 4) != 0) {
        throw std::runtime_error("load_checkpoint: " + path + ": bad magic at byte 0");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kCkptVersion) {
        throw std::runtime_error("load_checkpoint: " + path + ": unsupported format version " +
                                 std::to_string(version));
    }
    const std::uint32_t header_len = r.u32("header length");
    json header;
    try {
        header = json::parse(r.str(header_len, "header"));
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: " + path + ": malformed header JSON (" +
                                 e.what() + ")");
    }

    Checkpoint ckpt;
    try {
        ckpt.config = NetworkConfig::from_json(header.at("config"));
        ckpt.scheme = ClassScheme::from_json(header.at("scheme"));
        ckpt.epoch = header.at("epoch").get<std::size_t>();
        ckpt.val_history = header.at("val_history").get<std::vector<double>>();
        ckpt.learning_rate = header.at("adam").at("learning_rate").get<double>();
        ckpt.adam_step_count = header.at("adam").at("step").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: " + path + ": incomplete header (" + e.what() +
                                 ")");
    }

    while (!r.eof()) {
        const std::uint32_t name_len = r.u32("tensor name length");
        const std::string name = r.str(name_len, "tensor name");
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank > 8) {
            throw std::runtime_error("load_checkpoint: " + path + ": implausible rank " +
                                     std::to_string(rank) + " for tensor '" + name + "'");
        }
        Shape shape(rank);
        std::size_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape[i] = r.u64("tensor extent");
            numel *= shape[i];
        }
        std::vector<double> data(numel);
        for (std::size_t i = 0; i < numel; ++i) data[i] = r.f64("tensor data");
        ckpt.tensors.emplace_back(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return ckpt;
}

namespace {

Tensor sample_loss(NetworkParams& params, const Sample& sample, LossKind kind,
                   const ClassScheme& scheme, Mode mode, Rng* dropout_rng) {
    Forecast f = forward(params, sample.input, mode, dropout_rng);
    if (kind == LossKind::Mse) {
        return mse_loss(f.regression, sample.target.tensor, sample.target.mask).loss;
    }
    ClassField classes = bin_classes(sample.target.tensor, scheme, sample.target.mask);
    Tensor y = one_hot(classes, scheme.num_classes());
    return focal_loss(y, f.class_probs, scheme.weights, 2.0).loss;
}

}  // namespace

TrainResult train_network(NetworkParams& params, const BlockDataset& data, const TrainConfig& tc,
                          LossKind loss_kind, std::uint64_t seed) {
    if (loss_kind == LossKind::Focal && params.config.head != HeadKind::Classification) {
        throw std::invalid_argument("train_network: focal loss requires the classification head");
    }
    if (loss_kind == LossKind::Mse && params.config.head != HeadKind::Regression) {
        throw std::invalid_argument("train_network: mse loss requires the regression head");
    }
    if (tc.batch_size == 0) throw std::invalid_argument("train_network: batch_size must be >= 1");

    params.set_requires_grad(true);
    Rng root(seed);
    Rng shuffle_rng = root.fork(1);
    Rng dropout_rng = root.fork(2);

    ClassScheme scheme = default_scheme();
    if (loss_kind == LossKind::Focal) {
        std::vector<double> counts(scheme.num_classes(), 0.0);
        double total = 0.0;
        for (const Sample& s : data.train) {
            ClassField f = bin_classes(s.target.tensor, scheme, s.target.mask);
            for (std::uint8_t c : f.classes) {
                if (c == 0) continue;
                counts[c - 1] += 1.0;
                total += 1.0;
            }
        }
        if (total > 0.0) {
            for (double& c : counts) c /= total;
        }
        scheme.weights = class_weights(counts);
    }

    std::vector<Tensor> plist = params.parameter_list();
    AdamState adam = AdamState::init(plist, tc.learning_rate);

    TrainResult result;
    result.best = make_checkpoint(params, scheme, adam, 0, {});
    double best_metric = std::numeric_limits<double>::infinity();
    std::size_t bad_epochs = 0;

    const auto eval_split = [&](const std::vector<Sample>& split) {
        double total = 0.0;
        for (const Sample& s : split) {
            total += sample_loss(params, s, loss_kind, scheme, Mode::Eval, nullptr).value();
        }
        return split.empty() ? std::numeric_limits<double>::quiet_NaN()
                             : total / static_cast<double>(split.size());
    };

    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::vector<std::size_t> order(data.train.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle_rng.uniform_int(i)]);
        }

        double epoch_train_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
            const std::size_t end = std::min(order.size(), start + tc.batch_size);
            params.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                GradTape tape;
                Tensor loss = sample_loss(params, data.train[order[i]], loss_kind, scheme,
                                          Mode::Train, &dropout_rng);
                if (!std::isfinite(loss.value())) {
                    throw std::runtime_error("train_network: non-finite loss at epoch " +
                                             std::to_string(epoch) + ", batch " +
                                             std::to_string(start / tc.batch_size) + ", sample " +
                                             std::to_string(order[i]));
                }
                batch_loss += loss.value();
                tape.backward(loss);
            }
            const double count = static_cast<double>(end - start);
            adam_step_from_grads(plist, adam, 1.0 / count);
            result.history.step_loss.push_back(batch_loss / count);
            epoch_train_loss += batch_loss / count;
            ++epoch_batches;
        }

        // plateau metric: the training loss kind evaluated on the validation
        // split; falls back to the epoch train loss when the split is empty
        double metric = eval_split(data.validation);
        if (std::isnan(metric) && epoch_batches > 0) {
            metric = epoch_train_loss / static_cast<double>(epoch_batches);
        }
        result.history.epoch_val_loss.push_back(metric);
        result.history.epoch_lr.push_back(adam.learning_rate);

        if (metric < best_metric) {
            best_metric = metric;
            bad_epochs = 0;
            result.history.best_epoch = epoch;
            result.best = make_checkpoint(params, scheme, adam, epoch,
                                          result.history.epoch_val_loss);
        } else if (++bad_epochs >= tc.plateau_patience) {
            adam.learning_rate *= tc.lr_decay;
            bad_epochs = 0;
        }
    }
    result.best.val_history = result.history.epoch_val_loss;
    return result;
}

}  // namespace nowcast
