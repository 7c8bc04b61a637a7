#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "latte/autodiff.hpp"
#include "latte/tensor.hpp"

namespace latte {

struct ModelConfig {
  std::size_t n_features = 1;  // P
  std::size_t latent_dim = 32;
  std::size_t ae_hidden = 64;  // encoder/decoder hidden width
  std::size_t hidden = 64;     // ConvLSTM hidden channels per branch
  std::vector<std::size_t> kernels{1, 3, 5};
  std::size_t head_hidden = 64;
  double tau = 1e-4;           // sparse-layer threshold
  std::size_t window = 7;      // T', frames t-6 .. t
  std::size_t k_s = 1;
  std::size_t k_t = 1;

  void validate() const;
  std::size_t embedding_dim() const { return hidden * kernels.size(); }
};

// Diagonal of W_sp. Feature p is switched off while |w_p| < tau.
struct SparseLayer {
  Tensor weights;  // [P]
  double tau = 1e-4;
};

// Per-cell MLP pair: encoder P -> hidden (tanh) -> latent (tanh), decoder
// latent -> hidden (tanh) -> P (linear).
struct Autoencoder {
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;
};

// One ConvLSTM layer. The four gates share a single convolution whose output
// channels are ordered [input, forget, output, candidate].
struct ConvLstmBranch {
  std::size_t kernel = 1;
  Tensor weights;  // [k, k, latent + hidden, 4 * hidden]
  Tensor bias;     // [4 * hidden]
};

struct ConvLstmStack {
  std::size_t hidden = 64;
  std::vector<ConvLstmBranch> branches;

  std::size_t parameter_count() const;
};

// Per-cell MLP: embedding -> head_hidden (tanh) -> 1.
struct PredictionHead {
  Tensor w1, b1, w2, b2;
};

// Fixed affine maps applied outside the learnable blocks: features are
// standardized on the way in, predictions mapped back to label units.
struct Normalizer {
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  double label_mean = 0.0;
  double label_scale = 1.0;
};

struct Model {
  ModelConfig config;
  SparseLayer sparse;
  Autoencoder autoencoder;
  ConvLstmStack convlstm;
  PredictionHead head;
  Normalizer normalizer;

  // Weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  static Model initialize(const ModelConfig& config, std::uint64_t seed);

  // Stable, ordered list of every learnable tensor.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
};

// ---- tape bindings --------------------------------------------------------

struct AutoencoderVars {
  Var enc_w1, enc_b1, enc_w2, enc_b2;
  Var dec_w1, dec_b1, dec_w2, dec_b2;
};

struct BranchVars {
  std::size_t kernel = 1;
  std::size_t hidden = 1;
  Var weights, bias;
};

struct HeadVars {
  Var w1, b1, w2, b2;
};

struct ModelVars {
  Var sparse;
  double tau = 1e-4;
  AutoencoderVars autoencoder;
  std::vector<BranchVars> branches;
  HeadVars head;
  // Same order as Model::parameters().
  std::vector<std::pair<std::string, Var>> all;
};

// Records every parameter as a leaf (trainable) or constant.
ModelVars bind(Tape& tape, const Model& model, bool trainable = true);

// x: [..., P]. Output channel p is w_p * x_p when |w_p| >= tau, else 0.
Var sparse_forward(Var x, Var weights, double tau);
Tensor sparse_forward(const Tensor& x, const SparseLayer& layer);
std::vector<bool> selected_features(const SparseLayer& layer);

Var encode(Var x_sp, const AutoencoderVars& ae);
Var decode(Var embedding, const AutoencoderVars& ae);

struct ConvLstmState {
  Var h;
  Var c;
};

// Zero state for inputs of spatial shape [N, H, W].
ConvLstmState zero_state(Tape& tape, std::size_t n, std::size_t height,
                         std::size_t width, std::size_t hidden);

// One ConvLSTM step (no peepholes). e_t: [N, H, W, latent] or [H, W, latent];
// state tensors match with `hidden` channels.
ConvLstmState convlstm_step(const ConvLstmState& state, Var e_t,
                            const BranchVars& branch);

// E: [T', ..., H, W, latent] (optionally with batch axes after time). Every
// branch unrolls over the window from a zero state; the hidden sequences are
// concatenated on channels: [T', ..., H, W, hidden * branches].
Var st_embed(Var embeddings, const std::vector<BranchVars>& branches);

// R_t: [..., C] -> [...] via the per-cell head.
Var predict(Var embedding, const HeadVars& head);

}  // namespace latte
