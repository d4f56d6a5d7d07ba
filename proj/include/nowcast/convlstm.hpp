#pragma once

#include "nowcast/nn.hpp"
#include "nowcast/tensor.hpp"

namespace nowcast {

/// Peephole-free ConvLSTM cell with 3x3 gate kernels and "same" padding, so
/// the spatial extent is preserved through recurrence. All gate kernels are
/// exposed as named members for checkpointing.
struct ConvLstmCell {
    std::size_t input_channels = 0;
    std::size_t hidden_channels = 0;
    Tensor w_xi, w_hi, w_xf, w_hf, w_xc, w_hc, w_xo, w_ho;  // (3,3,Cin|Ch,Ch)
    Tensor b_i, b_f, b_c, b_o;                              // (Ch)

    static ConvLstmCell build(std::size_t input_channels, std::size_t hidden_channels, Rng& rng);

    /// Kernels first, then biases, in gate order i, f, c, o.
    std::vector<std::pair<std::string, Tensor>> named_parameters(const std::string& prefix) const;
};

struct CellState {
    Tensor h;
    Tensor c;
};

/// One recurrent step:
///   i = sigma(Wxi*x + Whi*h + bi), f = sigma(...), o = sigma(...),
///   g = tanh(Wxc*x + Whc*h + bc), c = f.c_prev + i.g, h = o.tanh(c).
CellState cell_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                    const ConvLstmCell& cell);

struct EncodedSequence {
    std::vector<Tensor> latents;  // per-step hidden states Z^t
    Tensor final_h;
    Tensor final_c;
};

/// Unrolls the cell over the input sequence from zero initial states.
EncodedSequence encode_sequence(const std::vector<Tensor>& inputs, const ConvLstmCell& cell);

/// Recursive generative forecaster: unrolls `horizon` future latent states
/// from a single context tensor, re-feeding output features + context as the
/// next input ("joint context").
struct RecursiveForecaster {
    ConvLstmCell cell;
    std::size_t horizon = 8;
};

struct RecursiveRollout {
    std::vector<Tensor> outputs;  // emitted Y^1..Y^horizon (the output features)
    std::vector<Tensor> inputs;   // recorded step inputs; inputs[0] is the context
};

RecursiveRollout recursive_forecast(const Tensor& context, const RecursiveForecaster& forecaster);

}  // namespace nowcast
