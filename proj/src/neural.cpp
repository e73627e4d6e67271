#include "dlorl/neural.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dlorl/rng.hpp"

namespace dlorl {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw CheckpointError("unknown activation: " + name);
}

std::vector<int> MlpSpec::layer_dims() const {
  std::vector<int> dims;
  dims.reserve(hidden.size() + 2);
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);
  return dims;
}

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0)
    throw std::invalid_argument("MlpSpec: dims must be positive");
  for (int h : hidden)
    if (h <= 0) throw std::invalid_argument("MlpSpec: hidden widths must be positive");
  if (hidden_activation != Activation::Relu)
    throw std::invalid_argument("MlpSpec: hidden activation must be relu");
  if (output_activation == Activation::Relu)
    throw std::invalid_argument("MlpSpec: output activation must be tanh or identity");
}

bool MlpWeights::all_finite() const {
  for (const auto& m : w)
    if (!m.allFinite()) return false;
  for (const auto& v : b)
    if (!v.allFinite()) return false;
  return true;
}

long MlpWeights::parameter_count() const {
  long n = 0;
  for (const auto& m : w) n += m.size();
  for (const auto& v : b) n += v.size();
  return n;
}

MlpGradients MlpGradients::zeros_like(const MlpWeights& weights) {
  MlpGradients g;
  g.w.reserve(weights.w.size());
  g.b.reserve(weights.b.size());
  for (const auto& m : weights.w) g.w.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  for (const auto& v : weights.b) g.b.push_back(Eigen::VectorXd::Zero(v.size()));
  return g;
}

void MlpGradients::set_zero() {
  for (auto& m : w) m.setZero();
  for (auto& v : b) v.setZero();
}

bool MlpGradients::same_shape(const MlpGradients& other) const {
  if (w.size() != other.w.size() || b.size() != other.b.size()) return false;
  for (size_t l = 0; l < w.size(); ++l)
    if (w[l].rows() != other.w[l].rows() || w[l].cols() != other.w[l].cols()) return false;
  for (size_t l = 0; l < b.size(); ++l)
    if (b[l].size() != other.b[l].size()) return false;
  return true;
}

void MlpGradients::accumulate(const MlpGradients& other) {
  if (!same_shape(other)) throw std::invalid_argument("MlpGradients: shape mismatch");
  for (size_t l = 0; l < w.size(); ++l) w[l] += other.w[l];
  for (size_t l = 0; l < b.size(); ++l) b[l] += other.b[l];
}

void MlpGradients::scale(double s) {
  for (auto& m : w) m *= s;
  for (auto& v : b) v *= s;
}

bool MlpGradients::all_finite() const {
  for (const auto& m : w)
    if (!m.allFinite()) return false;
  for (const auto& v : b)
    if (!v.allFinite()) return false;
  return true;
}

AdamState AdamState::for_weights(const MlpWeights& weights, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (const auto& m : weights.w) {
    s.m_w.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    s.v_w.push_back(Eigen::MatrixXd::Zero(m.rows(), m.cols()));
  }
  for (const auto& v : weights.b) {
    s.m_b.push_back(Eigen::VectorXd::Zero(v.size()));
    s.v_b.push_back(Eigen::VectorXd::Zero(v.size()));
  }
  return s;
}

MlpWeights init_weights(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const auto dims = spec.layer_dims();
  const int layers = spec.layer_count();
  MlpWeights weights;
  weights.spec = spec;
  for (int l = 0; l < layers; ++l) {
    const int fan_in = dims[l];
    const int fan_out = dims[l + 1];
    const double bound = (l == layers - 1) ? 3e-3 : 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c) w(r, c) = rng.uniform(-bound, bound);
    Eigen::VectorXd b(fan_out);
    for (int r = 0; r < fan_out; ++r) b(r) = rng.uniform(-bound, bound);
    weights.w.push_back(std::move(w));
    weights.b.push_back(std::move(b));
  }
  return weights;
}

namespace {

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z) {
  switch (act) {
    case Activation::Relu: return z.cwiseMax(0.0);
    case Activation::Tanh: return z.array().tanh().matrix();
    case Activation::Identity: return z;
  }
  return z;
}

}  // namespace

Eigen::MatrixXd forward_batch(const MlpWeights& weights, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache) {
  if (inputs.rows() != weights.spec.input_dim)
    throw std::invalid_argument("forward: input dim mismatch");
  const int layers = weights.spec.layer_count();
  if (cache) {
    cache->input = inputs;
    cache->pre.clear();
    cache->post.clear();
    cache->pre.reserve(layers);
    cache->post.reserve(layers);
  }
  Eigen::MatrixXd a = inputs;
  for (int l = 0; l < layers; ++l) {
    Eigen::MatrixXd z = (weights.w[l] * a).colwise() + weights.b[l];
    const Activation act =
        (l == layers - 1) ? weights.spec.output_activation : weights.spec.hidden_activation;
    a = apply_activation(act, z);
    if (cache) {
      cache->pre.push_back(std::move(z));
      cache->post.push_back(a);
    }
  }
  return a;
}

Eigen::VectorXd forward(const MlpWeights& weights, const Eigen::VectorXd& input,
                        ForwardCache* cache) {
  return forward_batch(weights, input, cache).col(0);
}

Eigen::MatrixXd backward_batch(const MlpWeights& weights, const ForwardCache& cache,
                               const Eigen::MatrixXd& output_grad, MlpGradients& grads) {
  const int layers = weights.spec.layer_count();
  if (static_cast<int>(cache.pre.size()) != layers || cache.input.cols() != output_grad.cols())
    throw std::invalid_argument("backward: stale or mismatched cache");
  if (output_grad.rows() != weights.spec.output_dim)
    throw std::invalid_argument("backward: output grad dim mismatch");

  grads.w.assign(layers, Eigen::MatrixXd());
  grads.b.assign(layers, Eigen::VectorXd());

  // delta = dLoss/d(pre-activation of layer l)
  Eigen::MatrixXd delta;
  switch (weights.spec.output_activation) {
    case Activation::Tanh:
      delta = output_grad.cwiseProduct(
          (1.0 - cache.post[layers - 1].array().square()).matrix());
      break;
    case Activation::Identity:
      delta = output_grad;
      break;
    case Activation::Relu:
      delta = output_grad.cwiseProduct(
          (cache.pre[layers - 1].array() > 0.0).cast<double>().matrix());
      break;
  }
  for (int l = layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& below = (l == 0) ? cache.input : cache.post[l - 1];
    grads.w[l] = delta * below.transpose();
    grads.b[l] = delta.rowwise().sum();
    Eigen::MatrixXd upstream = weights.w[l].transpose() * delta;
    if (l == 0) return upstream;
    delta = upstream.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return {};
}

Eigen::VectorXd backward(const MlpWeights& weights, const ForwardCache& cache,
                         const Eigen::VectorXd& output_grad, MlpGradients& grads) {
  return backward_batch(weights, cache, output_grad, grads).col(0);
}

void adam_step(MlpWeights& weights, const MlpGradients& grads, AdamState& state) {
  if (grads.w.size() != weights.w.size())
    throw std::invalid_argument("adam_step: layer count mismatch");
  if (!grads.all_finite()) throw OptimizerError("adam_step: non-finite gradient");
  state.step += 1;
  const double b1t = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto update = [&](auto& w, const auto& g, auto& m, auto& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    w.array() -= state.learning_rate * (m.array() / b1t) /
                 ((v.array() / b2t).sqrt() + state.epsilon);
  };
  for (size_t l = 0; l < weights.w.size(); ++l) {
    if (grads.w[l].rows() != weights.w[l].rows() || grads.w[l].cols() != weights.w[l].cols())
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    update(weights.w[l], grads.w[l], state.m_w[l], state.v_w[l]);
    update(weights.b[l], grads.b[l], state.m_b[l], state.v_b[l]);
  }
}

void polyak_update(MlpWeights& target, const MlpWeights& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak: tau out of (0,1]");
  if (target.spec != online.spec) throw std::invalid_argument("polyak: spec mismatch");
  for (size_t l = 0; l < target.w.size(); ++l) {
    target.w[l] = tau * online.w[l] + (1.0 - tau) * target.w[l];
    target.b[l] = tau * online.b[l] + (1.0 - tau) * target.b[l];
  }
}

namespace {

void write_doubles(std::ostream& out, const double* data, size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::istream& in, double* data, size_t count) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw CheckpointError("mlp checkpoint: truncated payload");
}

}  // namespace

void save_weights(const MlpWeights& weights, std::ostream& out) {
  out << "mlp v1\n";
  out << weights.spec.input_dim;
  for (int h : weights.spec.hidden) out << ' ' << h;
  out << ' ' << weights.spec.output_dim << ' ' << activation_name(weights.spec.hidden_activation)
      << ' ' << activation_name(weights.spec.output_activation) << '\n';
  for (size_t l = 0; l < weights.w.size(); ++l) {
    // stored row-major for a stable on-disk layout
    const Eigen::MatrixXd& m = weights.w[l];
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double x = m(r, c);
        write_doubles(out, &x, 1);
      }
    write_doubles(out, weights.b[l].data(), static_cast<size_t>(weights.b[l].size()));
  }
}

MlpWeights load_weights(std::istream& in) {
  std::string header;
  std::getline(in, header);
  if (header != "mlp v1") throw CheckpointError("mlp checkpoint: bad header '" + header + "'");
  std::string spec_line;
  std::getline(in, spec_line);
  std::istringstream ss(spec_line);
  std::vector<int> dims;
  std::string hidden_act, out_act;
  std::string tok;
  while (ss >> tok) {
    size_t pos = 0;
    int v = 0;
    bool is_int = true;
    try {
      v = std::stoi(tok, &pos);
      is_int = (pos == tok.size());
    } catch (...) {
      is_int = false;
    }
    if (is_int) {
      dims.push_back(v);
    } else {
      hidden_act = tok;
      ss >> out_act;
      break;
    }
  }
  if (dims.size() < 2 || hidden_act.empty() || out_act.empty())
    throw CheckpointError("mlp checkpoint: malformed spec line");
  MlpSpec spec;
  spec.input_dim = dims.front();
  spec.output_dim = dims.back();
  spec.hidden.assign(dims.begin() + 1, dims.end() - 1);
  spec.hidden_activation = activation_from_name(hidden_act);
  spec.output_activation = activation_from_name(out_act);
  spec.validate();

  MlpWeights weights;
  weights.spec = spec;
  const auto layer_dims = spec.layer_dims();
  for (int l = 0; l < spec.layer_count(); ++l) {
    Eigen::MatrixXd m(layer_dims[l + 1], layer_dims[l]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) read_doubles(in, &m(r, c), 1);
    Eigen::VectorXd b(layer_dims[l + 1]);
    read_doubles(in, b.data(), static_cast<size_t>(b.size()));
    weights.w.push_back(std::move(m));
    weights.b.push_back(std::move(b));
  }
  return weights;
}

void save_weights_file(const MlpWeights& weights, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open for write: " + path);
  save_weights(weights, out);
}

MlpWeights load_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open for read: " + path);
  return load_weights(in);
}

}  // namespace dlorl
