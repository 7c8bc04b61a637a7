#include "latte/network.hpp"

#include <cmath>

#include "latte/error.hpp"
#include "latte/rng.hpp"

namespace latte {

void ModelConfig::validate() const {
  if (n_features == 0 || latent_dim == 0 || ae_hidden == 0 || hidden == 0 ||
      head_hidden == 0 || window == 0 || k_s == 0 || k_t == 0) {
    throw ConfigError("model sizes must all be positive");
  }
  if (kernels.empty()) throw ConfigError("at least one ConvLSTM kernel is needed");
  for (std::size_t k : kernels) {
    if (k == 0 || k % 2 == 0) throw ConfigError("ConvLSTM kernels must be odd");
  }
  if (!(tau > 0.0)) throw ConfigError("sparse threshold tau must be positive");
}

std::size_t ConvLstmStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : branches) n += b.weights.size() + b.bias.size();
  return n;
}

namespace {

Tensor uniform_weights(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Model Model::initialize(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  Model m;
  m.config = cfg;
  const std::size_t p = cfg.n_features, a = cfg.ae_hidden, l = cfg.latent_dim;
  m.sparse = SparseLayer{uniform_weights({p}, 1, rng), cfg.tau};

  Autoencoder& ae = m.autoencoder;
  ae.enc_w1 = uniform_weights({p, a}, p, rng);
  ae.enc_b1 = Tensor({a}, 0.0);
  ae.enc_w2 = uniform_weights({a, l}, a, rng);
  ae.enc_b2 = Tensor({l}, 0.0);
  ae.dec_w1 = uniform_weights({l, a}, l, rng);
  ae.dec_b1 = Tensor({a}, 0.0);
  ae.dec_w2 = uniform_weights({a, p}, a, rng);
  ae.dec_b2 = Tensor({p}, 0.0);

  m.convlstm.hidden = cfg.hidden;
  for (std::size_t k : cfg.kernels) {
    const std::size_t cin = l + cfg.hidden;
    m.convlstm.branches.push_back(
        {k, uniform_weights({k, k, cin, 4 * cfg.hidden}, k * k * cin, rng),
         Tensor({4 * cfg.hidden}, 0.0)});
  }

  const std::size_t c = cfg.embedding_dim();
  m.head.w1 = uniform_weights({c, cfg.head_hidden}, c, rng);
  m.head.b1 = Tensor({cfg.head_hidden}, 0.0);
  m.head.w2 = uniform_weights({cfg.head_hidden, 1}, cfg.head_hidden, rng);
  m.head.b2 = Tensor({1}, 0.0);

  m.normalizer.feature_mean.assign(p, 0.0);
  m.normalizer.feature_scale.assign(p, 1.0);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> Model::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("sparse.w", &sparse.weights);
  Autoencoder& ae = autoencoder;
  out.emplace_back("encoder.w1", &ae.enc_w1);
  out.emplace_back("encoder.b1", &ae.enc_b1);
  out.emplace_back("encoder.w2", &ae.enc_w2);
  out.emplace_back("encoder.b2", &ae.enc_b2);
  out.emplace_back("decoder.w1", &ae.dec_w1);
  out.emplace_back("decoder.b1", &ae.dec_b1);
  out.emplace_back("decoder.w2", &ae.dec_w2);
  out.emplace_back("decoder.b2", &ae.dec_b2);
  for (auto& b : convlstm.branches) {
    const std::string prefix = "convlstm.k" + std::to_string(b.kernel);
    out.emplace_back(prefix + ".weights", &b.weights);
    out.emplace_back(prefix + ".bias", &b.bias);
  }
  out.emplace_back("head.w1", &head.w1);
  out.emplace_back("head.b1", &head.b1);
  out.emplace_back("head.w2", &head.w2);
  out.emplace_back("head.b2", &head.b2);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::parameters() const {
  auto mutable_list = const_cast<Model*>(this)->parameters();
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : mutable_list) out.emplace_back(name, t);
  return out;
}

ModelVars bind(Tape& tape, const Model& model, bool trainable) {
  ModelVars v;
  for (const auto& [name, t] : model.parameters()) {
    v.all.emplace_back(name, tape.leaf(*t, trainable));
  }
  std::size_t i = 0;
  auto next = [&]() { return v.all[i++].second; };
  v.sparse = next();
  v.tau = model.sparse.tau;
  AutoencoderVars& ae = v.autoencoder;
  ae.enc_w1 = next();
  ae.enc_b1 = next();
  ae.enc_w2 = next();
  ae.enc_b2 = next();
  ae.dec_w1 = next();
  ae.dec_b1 = next();
  ae.dec_w2 = next();
  ae.dec_b2 = next();
  for (const auto& b : model.convlstm.branches) {
    BranchVars bv;
    bv.kernel = b.kernel;
    bv.hidden = model.convlstm.hidden;
    bv.weights = next();
    bv.bias = next();
    v.branches.push_back(bv);
  }
  v.head.w1 = next();
  v.head.b1 = next();
  v.head.w2 = next();
  v.head.b2 = next();
  return v;
}

Var sparse_forward(Var x, Var weights, double tau) {
  const Shape& xs = x.shape();
  const std::size_t p = weights.value().size();
  if (xs.empty() || xs.back() != p || weights.shape().size() != 1) {
    throw ShapeError("sparse layer expects [..., " + std::to_string(p) +
                     "] input, got " + shape_string(xs));
  }
  Tensor mask({p}, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    mask[i] = std::abs(weights.value()[i]) >= tau ? 1.0 : 0.0;
  }
  Var effective = mul(weights, x.tape().constant(std::move(mask)));
  return mul(x, effective);
}

Tensor sparse_forward(const Tensor& x, const SparseLayer& layer) {
  Tape tape;
  return sparse_forward(tape.constant(x), tape.constant(layer.weights),
                        layer.tau)
      .value();
}

std::vector<bool> selected_features(const SparseLayer& layer) {
  std::vector<bool> out(layer.weights.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::abs(layer.weights[i]) >= layer.tau;
  }
  return out;
}

Var encode(Var x_sp, const AutoencoderVars& ae) {
  if (x_sp.shape().empty() || x_sp.shape().back() != ae.enc_w1.shape()[0]) {
    throw ShapeError("encoder input has " + shape_string(x_sp.shape()) +
                     ", expected last dim " +
                     std::to_string(ae.enc_w1.shape()[0]));
  }
  Var hidden = tanh(add(matmul(x_sp, ae.enc_w1), ae.enc_b1));
  return tanh(add(matmul(hidden, ae.enc_w2), ae.enc_b2));
}

Var decode(Var embedding, const AutoencoderVars& ae) {
  if (embedding.shape().empty() ||
      embedding.shape().back() != ae.dec_w1.shape()[0]) {
    throw ShapeError("decoder input has " + shape_string(embedding.shape()) +
                     ", expected last dim " +
                     std::to_string(ae.dec_w1.shape()[0]));
  }
  Var hidden = tanh(add(matmul(embedding, ae.dec_w1), ae.dec_b1));
  return add(matmul(hidden, ae.dec_w2), ae.dec_b2);
}

ConvLstmState zero_state(Tape& tape, std::size_t n, std::size_t height,
                         std::size_t width, std::size_t hidden) {
  const Shape s{n, height, width, hidden};
  return {tape.constant(Tensor(s, 0.0)), tape.constant(Tensor(s, 0.0))};
}

ConvLstmState convlstm_step(const ConvLstmState& state, Var e_t,
                            const BranchVars& branch) {
  const bool unbatched = e_t.shape().size() == 3;
  auto as4 = [](Var v) {
    if (v.shape().size() == 4) return v;
    if (v.shape().size() != 3) {
      throw ShapeError("ConvLSTM tensors must be [H, W, C] or [N, H, W, C]");
    }
    Shape s = v.shape();
    s.insert(s.begin(), 1);
    return reshape(v, s);
  };
  Var e = as4(e_t);
  Var h = as4(state.h);
  Var c = as4(state.c);
  const std::size_t hd = branch.hidden;
  if (h.shape() != c.shape() || h.shape()[3] != hd ||
      h.shape()[0] != e.shape()[0] || h.shape()[1] != e.shape()[1] ||
      h.shape()[2] != e.shape()[2]) {
    throw ShapeError("ConvLSTM state " + shape_string(h.shape()) +
                     " does not match input " + shape_string(e.shape()));
  }
  const Var parts[] = {e, h};
  Var z = add(conv2d_same(concat(parts, 3), branch.weights), branch.bias);
  Var i = sigmoid(slice(z, 3, 0, hd));
  Var f = sigmoid(slice(z, 3, hd, 2 * hd));
  Var o = sigmoid(slice(z, 3, 2 * hd, 3 * hd));
  Var g = tanh(slice(z, 3, 3 * hd, 4 * hd));
  Var c_next = add(mul(f, c), mul(i, g));
  Var h_next = mul(o, tanh(c_next));
  if (unbatched) {
    const Shape s3(c_next.shape().begin() + 1, c_next.shape().end());
    return {reshape(h_next, s3), reshape(c_next, s3)};
  }
  return {h_next, c_next};
}

Var st_embed(Var embeddings, const std::vector<BranchVars>& branches) {
  const Shape& es = embeddings.shape();
  if (es.size() < 4) {
    throw ShapeError("st_embed expects [T', ..., H, W, latent], got " +
                     shape_string(es));
  }
  if (branches.empty()) throw ShapeError("st_embed needs at least one branch");
  const std::size_t steps = es[0];
  const std::size_t rank = es.size();
  const std::size_t height = es[rank - 3], width = es[rank - 2];
  const std::size_t latent = es[rank - 1];
  std::size_t batch = 1;
  for (std::size_t a = 1; a + 3 < rank; ++a) batch *= es[a];
  Tape& tape = embeddings.tape();

  std::vector<Var> frames;
  for (std::size_t t = 0; t < steps; ++t) {
    frames.push_back(reshape(slice(embeddings, 0, t, t + 1),
                             {batch, height, width, latent}));
  }
  std::vector<Var> per_branch;
  for (const BranchVars& b : branches) {
    ConvLstmState state = zero_state(tape, batch, height, width, b.hidden);
    std::vector<Var> hs;
    for (std::size_t t = 0; t < steps; ++t) {
      state = convlstm_step(state, frames[t], b);
      hs.push_back(state.h);
    }
    per_branch.push_back(stack(hs, 0));
  }
  Var r = concat(per_branch, 4);
  Shape out = es;
  out.back() = r.shape().back();
  return reshape(r, out);
}

Var predict(Var embedding, const HeadVars& head) {
  const Shape& s = embedding.shape();
  if (s.empty() || s.back() != head.w1.shape()[0]) {
    throw ShapeError("prediction head expects last dim " +
                     std::to_string(head.w1.shape()[0]) + ", got " +
                     shape_string(s));
  }
  Var hidden = tanh(add(matmul(embedding, head.w1), head.b1));
  Var out = add(matmul(hidden, head.w2), head.b2);
  return reshape(out, Shape(s.begin(), s.end() - 1));
}

}  // namespace latte
