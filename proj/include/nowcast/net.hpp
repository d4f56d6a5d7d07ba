#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nowcast/convlstm.hpp"
#include "nowcast/datapipe.hpp"
#include "nowcast/losses.hpp"
#include "nowcast/nn.hpp"
#include "nowcast/optim.hpp"

#include "json.hpp"

namespace nowcast {

enum class HeadKind { Regression, Classification };
enum class LossKind { Mse, Focal };

/// Everything that fixes the network topology. The parameter census is a
/// pure function of this struct.
struct NetworkConfig {
    std::size_t n_blocks = 3;        // encoder depth (desk default; 5 matches the full setup)
    std::size_t base_channels = 16;  // channel ladder base, doubling per level
    std::size_t input_channels = 4;  // P, TPW, U, V
    std::size_t input_steps = 12;
    std::size_t forecast_steps = 8;
    std::size_t num_classes = 10;
    double dropout_rate = 0.15;
    HeadKind head = HeadKind::Regression;

    std::size_t channels_at(std::size_t level) const {  // level is 1-based
        return base_channels << (level - 1);
    }
    void validate() const;

    nlohmann::json to_json() const;
    static NetworkConfig from_json(const nlohmann::json& j);
};

struct EncoderBlockParams {
    ConvLstmCell cell;
    Tensor bn_gamma, bn_beta;
    BatchNormStats bn_stats;
};

struct DecoderStageParams {
    Tensor up_kernel;  // (1, 2, 2, Cin, Cout), stride (1, 2, 2)
    Tensor up_bias;
    Tensor conv_kernel;  // (3, 3, 3, Cin', Cout), "same"
    Tensor conv_bias;
    Tensor bn_gamma, bn_beta;
    BatchNormStats bn_stats;
};

/// All learnable tensors plus batchnorm running statistics.
struct NetworkParams {
    NetworkConfig config;
    std::vector<EncoderBlockParams> encoder;       // n_blocks
    std::vector<RecursiveForecaster> forecasters;  // skip levels 1..n-1, bottleneck last
    std::vector<DecoderStageParams> decoder;       // n_blocks stages, deep to shallow
    Tensor head_kernel;  // (1, 1, 1, base, 1 | classes)
    Tensor head_bias;
    Tensor head_bn_gamma, head_bn_beta;  // regression head normalization
    BatchNormStats head_bn_stats;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_buffers() const;
    std::vector<Tensor> parameter_list() const;
    std::size_t parameter_count() const;
    void set_requires_grad(bool on);
    void zero_grad();
};

/// Xavier-initialized network; deterministic in (config, seed).
NetworkParams build_network(const NetworkConfig& config, std::uint64_t seed);

struct Forecast {
    Tensor regression;   // (M, N, T_f), defined for the regression head
    Tensor class_probs;  // (M, N, T_f, C), defined for the classification head
};

/// Full encoder / recursive-forecaster / decoder / head pass over one input
/// block. Train mode applies dropout (rng required) and updates batchnorm
/// running statistics; eval mode is deterministic and side-effect free.
Forecast forward(NetworkParams& params, const InputBlock& block, Mode mode,
                 Rng* dropout_rng = nullptr);

/// Per pixel/lead probability that the rate reaches `threshold_rate`, summed
/// from the class probabilities. The threshold must sit on a scheme boundary.
Tensor exceedance_probability(const Tensor& class_probs, const ClassScheme& scheme,
                              double threshold_rate);

struct Checkpoint {
    NetworkConfig config;
    ClassScheme scheme;
    std::size_t epoch = 0;
    std::vector<double> val_history;
    double learning_rate = 1e-3;
    std::uint64_t adam_step_count = 0;
    std::vector<std::pair<std::string, Tensor>> tensors;  // params, buffers, adam moments

    NetworkParams restore_params() const;
    AdamState restore_adam(const NetworkParams& params) const;
};

Checkpoint make_checkpoint(const NetworkParams& params, const ClassScheme& scheme,
                           const AdamState& adam, std::size_t epoch,
                           std::vector<double> val_history);

/// "GNSS" container: magic, u32 version, length-prefixed JSON config header,
/// then named tensors as (u32 name length, name, u32 rank, u64 extents,
/// little-endian f64 data) until end of file. Round trips are bit-exact.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double learning_rate = 1e-3;
    std::size_t plateau_patience = 10;  // epochs without val improvement
    double lr_decay = 0.1;
};

struct TrainHistory {
    std::vector<double> step_loss;      // mean train loss per optimizer step
    std::vector<double> epoch_val_loss;
    std::vector<double> epoch_lr;
    std::size_t best_epoch = 0;  // 1-based; 0 = never evaluated
};

struct TrainResult {
    Checkpoint best;  // lowest validation loss (initial params when epochs == 0)
    TrainHistory history;
};

/// Mini-batch Adam training with the plateau learning-rate schedule.
/// Deterministic in (params, data order, seed). Focal training derives
/// inverse-frequency class weights from the train-split targets.
TrainResult train_network(NetworkParams& params, const BlockDataset& data,
                          const TrainConfig& tc, LossKind loss_kind, std::uint64_t seed);

}  // namespace nowcast
