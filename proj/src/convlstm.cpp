#include "nowcast/convlstm.hpp"

#include <stdexcept>

#include "nowcast/optim.hpp"

namespace nowcast {

namespace {

Tensor gate_kernel(std::size_t cin, std::size_t ch, Rng& rng) {
    return xavier_init({3, 3, cin, ch}, 9 * cin, 9 * ch, rng);
}

}  // namespace

ConvLstmCell ConvLstmCell::build(std::size_t input_channels, std::size_t hidden_channels,
                                 Rng& rng) {
    if (input_channels == 0 || hidden_channels == 0) {
        throw std::invalid_argument("ConvLstmCell: channel counts must be positive");
    }
    ConvLstmCell cell;
    cell.input_channels = input_channels;
    cell.hidden_channels = hidden_channels;
    cell.w_xi = gate_kernel(input_channels, hidden_channels, rng);
    cell.w_hi = gate_kernel(hidden_channels, hidden_channels, rng);
    cell.w_xf = gate_kernel(input_channels, hidden_channels, rng);
    cell.w_hf = gate_kernel(hidden_channels, hidden_channels, rng);
    cell.w_xc = gate_kernel(input_channels, hidden_channels, rng);
    cell.w_hc = gate_kernel(hidden_channels, hidden_channels, rng);
    cell.w_xo = gate_kernel(input_channels, hidden_channels, rng);
    cell.w_ho = gate_kernel(hidden_channels, hidden_channels, rng);
    cell.b_i = Tensor::zeros({hidden_channels});
    cell.b_f = Tensor::zeros({hidden_channels});
    cell.b_c = Tensor::zeros({hidden_channels});
    cell.b_o = Tensor::zeros({hidden_channels});
    return cell;
}

std::vector<std::pair<std::string, Tensor>> ConvLstmCell::named_parameters(
    const std::string& prefix) const {
    return {{prefix + ".w_xi", w_xi}, {prefix + ".w_hi", w_hi}, {prefix + ".w_xf", w_xf},
            {prefix + ".w_hf", w_hf}, {prefix + ".w_xc", w_xc}, {prefix + ".w_hc", w_hc},
            {prefix + ".w_xo", w_xo}, {prefix + ".w_ho", w_ho}, {prefix + ".b_i", b_i},
            {prefix + ".b_f", b_f},   {prefix + ".b_c", b_c},   {prefix + ".b_o", b_o}};
}

namespace {

Tensor gate_preact(const Tensor& x, const Tensor& h, const Tensor& wx, const Tensor& wh,
                   const Tensor& b) {
    Tensor zx = conv_forward(x, wx, {1, 1}, Padding::Same, 2);
    Tensor zh = conv_forward(h, wh, {1, 1}, Padding::Same, 2);
    return add_channel_bias(add(zx, zh), b);
}

}  // namespace

CellState cell_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const ConvLstmCell& cell) {
    if (x.rank() != 3 || h_prev.rank() != 3) {
        throw std::invalid_argument("cell_step: inputs must be (H, W, C)");
    }
    if (x.extent(0) != h_prev.extent(0) || x.extent(1) != h_prev.extent(1)) {
        throw std::invalid_argument("cell_step: input " + shape_str(x.shape()) +
                                    " not spatially aligned with state " +
                                    shape_str(h_prev.shape()));
    }
    if (x.extent(2) != cell.input_channels || h_prev.extent(2) != cell.hidden_channels) {
        throw std::invalid_argument("cell_step: channel mismatch, input " + shape_str(x.shape()) +
                                    ", state " + shape_str(h_prev.shape()) + ", cell expects " +
                                    std::to_string(cell.input_channels) + "/" +
                                    std::to_string(cell.hidden_channels));
    }
    if (h_prev.shape() != c_prev.shape()) {
        throw std::invalid_argument("cell_step: hidden and cell states must share shape");
    }
    Tensor i = sigmoid(gate_preact(x, h_prev, cell.w_xi, cell.w_hi, cell.b_i));
    Tensor f = sigmoid(gate_preact(x, h_prev, cell.w_xf, cell.w_hf, cell.b_f));
    Tensor g = tanh_op(gate_preact(x, h_prev, cell.w_xc, cell.w_hc, cell.b_c));
    Tensor o = sigmoid(gate_preact(x, h_prev, cell.w_xo, cell.w_ho, cell.b_o));
    Tensor c = add(mul(f, c_prev), mul(i, g));
    Tensor h = mul(o, tanh_op(c));
    return {h, c};
}

EncodedSequence encode_sequence(const std::vector<Tensor>& inputs, const ConvLstmCell& cell) {
    if (inputs.empty()) {
        throw std::invalid_argument("encode_sequence: empty input sequence");
    }
    const Shape state_shape{inputs.front().extent(0), inputs.front().extent(1),
                            cell.hidden_channels};
    CellState state{Tensor::zeros(state_shape), Tensor::zeros(state_shape)};
    EncodedSequence out;
    out.latents.reserve(inputs.size());
    for (const Tensor& x : inputs) {
        state = cell_step(x, state.h, state.c, cell);
        out.latents.push_back(state.h);
    }
    out.final_h = state.h;
    out.final_c = state.c;
    return out;
}

RecursiveRollout recursive_forecast(const Tensor& context, const RecursiveForecaster& forecaster) {
    const ConvLstmCell& cell = forecaster.cell;
    if (context.rank() != 3 || context.extent(2) != cell.input_channels ||
        cell.input_channels != cell.hidden_channels) {
        throw std::invalid_argument("recursive_forecast: context " + shape_str(context.shape()) +
                                    " must match the cell feature shape (channels " +
                                    std::to_string(cell.hidden_channels) + ")");
    }
    const Shape state_shape{context.extent(0), context.extent(1), cell.hidden_channels};
    CellState state{Tensor::zeros(state_shape), Tensor::zeros(state_shape)};
    RecursiveRollout roll;
    roll.inputs.reserve(forecaster.horizon);
    roll.outputs.reserve(forecaster.horizon);
    Tensor input = context;
    for (std::size_t step = 0; step < forecaster.horizon; ++step) {
        roll.inputs.push_back(input);
        state = cell_step(input, state.h, state.c, cell);
        roll.outputs.push_back(state.h);
        input = add(state.h, context);  // joint context for the next step
    }
    return roll;
}

}  // namespace nowcast
